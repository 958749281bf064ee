#include <doctest.h>

#include <cmath>
#include <set>

#include "bioanon/dataset.hpp"
#include "bioanon/error.hpp"
#include "bioanon/image_anon.hpp"
#include "test_support.hpp"

using namespace bioanon;

namespace {

FaceImage face(Seed seed = 1) {
  return std::get<FaceImage>(synthesize_faces(2, 8, seed).samples[0][0]);
}

FaceImage gradient(int w, int h) {
  FaceImage img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = static_cast<std::uint8_t>((x * 7 + y * 3 + c * 50) % 256);
  return img;
}

double channel_variance(const FaceImage& img, int c) {
  double s = 0, s2 = 0;
  const double n = static_cast<double>(img.width) * img.height;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      s += img.at(x, y, c);
      s2 += static_cast<double>(img.at(x, y, c)) * img.at(x, y, c);
    }
  return s2 / n - (s / n) * (s / n);
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an Error");
  return ErrorKind::IoError;
}

}  // namespace

TEST_SUITE("image_anon") {

TEST_CASE("eye mask blacks out rows 20..159 for a 140-row strip") {
  auto img = face();
  auto out = eye_mask(img, 140);
  bool ok = true;
  for (int y = 0; y < 224; ++y)
    for (int x = 0; x < 224; ++x)
      for (int c = 0; c < 3; ++c) {
        std::uint8_t want = (y >= 20 && y <= 159) ? 0 : img.at(x, y, c);
        ok = ok && out.at(x, y, c) == want;
      }
  CHECK(ok);
  CHECK(eye_mask(out, 140) == out);
  CHECK(eye_mask(img, 0) == img);
  CHECK(kind_of([&] { eye_mask(img, 224); }) == ErrorKind::StripTooTall);
}

TEST_CASE("blur leaves a constant image unchanged") {
  auto img = testing::constant_image(40, 30, 10, 128, 250);
  CHECK(gaussian_blur(img, 101) == img);
  CHECK(gaussian_blur(img, 3) == img);
}

TEST_CASE("blur reduces variance") {
  auto img = face();
  auto out = gaussian_blur(img, 101);
  for (int c = 0; c < 3; ++c) CHECK(channel_variance(out, c) < channel_variance(img, c));
}

TEST_CASE("blur 3x3 matches a hand convolution with mirrored borders") {
  FaceImage img(3, 3);
  const int v[3][3] = {{10, 200, 30}, {90, 0, 255}, {60, 120, 180}};
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = static_cast<std::uint8_t>(v[y][x]);

  // sigma = 1/3: weights proportional to exp(-4.5), 1, exp(-4.5).
  const double e = std::exp(-4.5);
  const double w[3] = {e / (1 + 2 * e), 1 / (1 + 2 * e), e / (1 + 2 * e)};
  // Mirrored index for a 3-wide axis: -1 -> 1, 3 -> 1.
  auto mirror = [](int i) { return i < 0 ? -i : (i > 2 ? 4 - i : i); };
  auto out = gaussian_blur(img, 3);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x) {
      double acc = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          acc += w[dy + 1] * w[dx + 1] * v[mirror(y + dy)][mirror(x + dx)];
      const int want = static_cast<int>(std::floor(acc + 0.5));
      for (int c = 0; c < 3; ++c) CHECK(out.at(x, y, c) == want);
    }
}

TEST_CASE("blur rejects even kernels") {
  CHECK(kind_of([] { gaussian_blur(FaceImage(8, 8), 4); }) == ErrorKind::EvenKernel);
}

TEST_CASE("krtio") {
  auto img = face();
  CHECK(krtio(img, 0.0, 18, 3, 9) == img);
  auto a = krtio(img, 0.4, 18, 3, 9);
  CHECK(krtio(img, 0.4, 18, 3, 9) == a);
  CHECK(!(krtio(img, 0.4, 18, 3, 10) == a));
  int worst = 0;
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    worst = std::max(worst, std::abs(int(a.pixels[i]) - int(img.pixels[i])));
  CHECK(worst <= static_cast<int>(std::ceil(0.4 * 255)));
}

TEST_CASE("dp pix noise scale") {
  CHECK(dp_pix_noise_scale(2.0, 12, 16) == doctest::Approx(255.0 * 16 / (144 * 2)));
  CHECK(dp_pix_noise_scale(2.0, 12, 16) == doctest::Approx(14.1667).epsilon(1e-4));
  CHECK(dp_pix_noise_scale(INFINITY, 12, 16) == 0.0);
}

TEST_CASE("dp pix with infinite epsilon is block-mean pixelation") {
  auto img = gradient(30, 20);
  const int b = 12;
  auto out = dp_pix(img, INFINITY, b, 16, 3);
  bool ok = true;
  for (int y0 = 0; y0 < 20; y0 += b)
    for (int x0 = 0; x0 < 30; x0 += b)
      for (int c = 0; c < 3; ++c) {
        int y1 = std::min(20, y0 + b), x1 = std::min(30, x0 + b);
        double s = 0;
        for (int y = y0; y < y1; ++y)
          for (int x = x0; x < x1; ++x) s += img.at(x, y, c);
        auto want = static_cast<std::uint8_t>(std::floor(s / ((y1 - y0) * (x1 - x0)) + 0.5));
        for (int y = y0; y < y1; ++y)
          for (int x = x0; x < x1; ++x) ok = ok && out.at(x, y, c) == want;
      }
  CHECK(ok);
}

TEST_CASE("dp pix with one block collapses the image") {
  auto img = face();
  auto out = dp_pix(img, 2.0, 224, 16, 4);
  for (int c = 0; c < 3; ++c) {
    std::set<int> values;
    for (int y = 0; y < 224; ++y)
      for (int x = 0; x < 224; ++x) values.insert(out.at(x, y, c));
    CHECK(values.size() == 1);
  }
}

TEST_CASE("dp snow fraction concentrates around d") {
  auto img = testing::constant_image(224, 224, 3, 200, 250);
  int inside = 0;
  const int trials = 200;
  for (int s = 0; s < trials; ++s) {
    auto out = dp_snow(img, 0.01, static_cast<Seed>(s));
    int replaced = 0;
    bool exact = true;
    for (int y = 0; y < 224; ++y)
      for (int x = 0; x < 224; ++x)
        if (out.at(x, y, 0) != 3) {
          ++replaced;
          exact = exact && out.at(x, y, 0) == 127 && out.at(x, y, 1) == 127 && out.at(x, y, 2) == 127;
        }
    CHECK(exact);
    double frac = replaced / (224.0 * 224.0);
    inside += frac >= 0.005 && frac <= 0.015;
  }
  CHECK(inside == trials);
  CHECK(dp_snow(img, 0.0, 1) == img);
}

TEST_CASE("dp samp keeps an image whose values are all selected") {
  FaceImage img(16, 16);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>((i % 4) * 60);
  CHECK(dp_samp(img, 5.0, 4, 4, 1) == img);
}

TEST_CASE("dp samp palette has at most m values per channel") {
  auto img = face();
  auto out = dp_samp(img, 5.0, 24, 12, 2);
  for (int c = 0; c < 3; ++c) {
    std::set<int> values;
    for (int y = 0; y < 224; ++y)
      for (int x = 0; x < 224; ++x) values.insert(out.at(x, y, c));
    CHECK(values.size() <= 12);
  }
}

TEST_CASE("dp samp k=2 m=1 on a two-value image") {
  // 3/4 of the pixels are 40, 1/4 are 220. Each channel ends constant at one
  // of them, 40 with probability w40 / (w40 + w220), w = exp(eps * count / 2n).
  FaceImage img(16, 16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = x < 12 ? 40 : 220;
  const double eps = 5.0;
  const double w40 = std::exp(eps * 0.75 / 2), w220 = std::exp(eps * 0.25 / 2);
  const double p40 = w40 / (w40 + w220);

  int low = 0, draws = 0;
  for (Seed s = 0; s < 400; ++s) {
    auto out = dp_samp(img, eps, 2, 1, s);
    for (int c = 0; c < 3; ++c) {
      std::set<int> values;
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) values.insert(out.at(x, y, c));
      REQUIRE(values.size() == 1);
      int v = *values.begin();
      CHECK((v == 40 || v == 220));
      low += v == 40;
      ++draws;
    }
  }
  CHECK(static_cast<double>(low) / draws == doctest::Approx(p40).epsilon(0.05 / p40));
}

TEST_CASE("cluster intensities") {
  std::vector<std::uint8_t> v = {1, 1, 2, 200, 201, 202};
  auto cl = cluster_intensities(v, 2);
  REQUIRE(cl.centroids.size() == 2);
  CHECK(cl.centroids[0] == doctest::Approx(4.0 / 3));
  CHECK(cl.centroids[1] == doctest::Approx(201.0));
  CHECK(cl.counts[0] == 3);
  CHECK(cl.counts[1] == 3);
}

TEST_CASE("k-same-pixel") {
  const int w = 4, h = 4;
  std::vector<IdentityId> ids = {"a", "b", "c"};
  std::vector<std::vector<double>> reps;
  for (double level : {10.0, 100.0, 240.0}) reps.emplace_back(w * h * 3, level);
  KSameBackground bg(ids, reps, w, h);

  auto self = testing::constant_image(w, h, 100, 100, 100);
  CHECK(k_same_pixel(self, 1, bg) == self);

  auto a = k_same_pixel(testing::constant_image(w, h, 0, 0, 0), 3, bg);
  auto b = k_same_pixel(testing::constant_image(w, h, 255, 9, 77), 3, bg);
  CHECK(a == b);
  CHECK(a.pixels[0] == static_cast<std::uint8_t>(std::floor(350.0 / 3 + 0.5)));

  auto two = k_same_pixel(testing::constant_image(w, h, 30, 30, 30), 2, bg);
  CHECK(two.pixels[0] == 55);
  CHECK(kind_of([&] { k_same_pixel(self, 4, bg); }) == ErrorKind::BackgroundTooSmall);
}

TEST_CASE("k-same-pixel from a face dataset") {
  Dataset bg = synthesize_faces(12, 8, 3);
  auto background = KSameBackground::from_dataset(bg);
  CHECK(background.size() == 12);
  auto img = face(9);
  auto out = k_same_pixel(img, 10, background);
  CHECK(out.same_shape(img));
}

}  // TEST_SUITE
