#include "bioanon/image_anon.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "bioanon/error.hpp"

namespace bioanon {

FaceImage eye_mask(const FaceImage& img, int strip_height_px, double eye_line_fraction) {
  if (strip_height_px < 0 || strip_height_px >= img.height)
    fail(ErrorKind::StripTooTall, "strip of " + std::to_string(strip_height_px) +
                                      " rows does not fit an image of height " +
                                      std::to_string(img.height));
  FaceImage out = img;
  const int center = static_cast<int>(std::lround(eye_line_fraction * img.height));
  const int top = std::max(0, center - strip_height_px / 2);
  const int bottom = std::min(img.height, center - strip_height_px / 2 + strip_height_px);
  for (int y = top; y < bottom; ++y)
    std::fill_n(out.pixels.begin() + static_cast<std::ptrdiff_t>(out.index(0, y, 0)),
                img.width * Image::kChannels, std::uint8_t{0});
  return out;
}

namespace {

// Mirror index into [0, n) without repeating the edge sample.
int reflect101(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace

FaceImage gaussian_blur(const FaceImage& img, int kernel_size) {
  if (kernel_size < 3 || kernel_size % 2 == 0)
    fail(ErrorKind::EvenKernel, "kernel size must be odd and >= 3, got " +
                                    std::to_string(kernel_size));
  const int radius = kernel_size / 2;
  const double sigma = (kernel_size - 1) / 6.0;
  std::vector<double> weights(kernel_size);
  for (int i = -radius; i <= radius; ++i)
    weights[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  for (double& w : weights) w /= total;

  const int w = img.width, h = img.height;
  std::vector<double> horizontal(img.pixels.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < Image::kChannels; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += weights[i + radius] * img.at(reflect101(x + i, w), y, c);
        horizontal[img.index(x, y, c)] = acc;
      }

  FaceImage out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < Image::kChannels; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += weights[i + radius] * horizontal[img.index(x, reflect101(y + i, h), c)];
        out.at(x, y, c) = clamp_to_byte(acc);
      }
  return out;
}

FaceImage krtio(const FaceImage& img, double alpha, int block_size, int k, Seed key) {
  if (!(alpha >= 0.0 && alpha < 1.0)) fail(ErrorKind::InvalidArgument, "alpha must be in [0, 1)");
  if (block_size < 1 || k < 1) fail(ErrorKind::InvalidArgument, "block size and k must be >= 1");
  const int bx = (img.width + block_size - 1) / block_size;
  const int by = (img.height + block_size - 1) / block_size;
  const std::size_t n_blocks = static_cast<std::size_t>(bx) * by;

  std::vector<double> overlay(img.pixels.size(), 0.0);
  for (int j = 0; j < k; ++j) {
    Rng colors_rng(derive_seed(key, "krtio-colors", {static_cast<std::uint64_t>(j)}));
    std::vector<std::array<double, 3>> colors(n_blocks);
    for (auto& col : colors)
      for (double& v : col) v = static_cast<double>(colors_rng.below(256));
    Rng perm_rng(derive_seed(key, "krtio-permutation", {static_cast<std::uint64_t>(j)}));
    std::vector<std::size_t> perm = perm_rng.permutation(n_blocks);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        const auto& col = colors[perm[static_cast<std::size_t>(y / block_size) * bx + x / block_size]];
        for (int c = 0; c < Image::kChannels; ++c) overlay[img.index(x, y, c)] += col[c] / k;
      }
  }
  FaceImage out(img.width, img.height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    out.pixels[i] = clamp_to_byte((1.0 - alpha) * img.pixels[i] + alpha * overlay[i]);
  return out;
}

double dp_pix_noise_scale(double epsilon, int b, int m) {
  if (!(epsilon > 0.0)) fail(ErrorKind::InvalidArgument, "epsilon must be > 0");
  if (std::isinf(epsilon)) return 0.0;
  return 255.0 * m / (static_cast<double>(b) * b * epsilon);
}

FaceImage dp_pix(const FaceImage& img, double epsilon, int b, int m, Seed seed) {
  if (b < 1 || m < 1) fail(ErrorKind::InvalidArgument, "b and m must be >= 1");
  if (b > std::min(img.width, img.height))
    fail(ErrorKind::InvalidArgument, "block size exceeds the image");
  const double scale = dp_pix_noise_scale(epsilon, b, m);
  Rng rng(seed);
  FaceImage out(img.width, img.height);
  for (int y0 = 0; y0 < img.height; y0 += b)
    for (int x0 = 0; x0 < img.width; x0 += b) {
      const int y1 = std::min(img.height, y0 + b), x1 = std::min(img.width, x0 + b);
      const double count = static_cast<double>((y1 - y0) * (x1 - x0));
      for (int c = 0; c < Image::kChannels; ++c) {
        double sum = 0.0;
        for (int y = y0; y < y1; ++y)
          for (int x = x0; x < x1; ++x) sum += img.at(x, y, c);
        const std::uint8_t value = clamp_to_byte(sum / count + rng.laplace(scale));
        for (int y = y0; y < y1; ++y)
          for (int x = x0; x < x1; ++x) out.at(x, y, c) = value;
      }
    }
  return out;
}

FaceImage dp_snow(const FaceImage& img, double d, Seed seed) {
  if (!(d >= 0.0 && d < 1.0)) fail(ErrorKind::InvalidArgument, "d must be in (0, 1)");
  Rng rng(seed);
  FaceImage out = img;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      if (rng.bernoulli(d))
        for (int c = 0; c < Image::kChannels; ++c) out.at(x, y, c) = 127;
  return out;
}

IntensityClusters cluster_intensities(const std::vector<std::uint8_t>& values, int k,
                                      int iterations) {
  std::array<std::size_t, 256> histogram{};
  for (auto v : values) ++histogram[v];
  std::vector<int> distinct;
  for (int v = 0; v < 256; ++v)
    if (histogram[v] > 0) distinct.push_back(v);

  IntensityClusters out;
  if (distinct.empty()) return out;
  if (static_cast<int>(distinct.size()) <= k) {
    // Each intensity is its own cluster; this is already the k-means optimum.
    for (int v : distinct) {
      out.centroids.push_back(v);
      out.counts.push_back(histogram[v]);
    }
    return out;
  }

  const double lo = distinct.front(), hi = distinct.back();
  out.centroids.resize(k);
  for (int j = 0; j < k; ++j) out.centroids[j] = k == 1 ? (lo + hi) / 2 : lo + (hi - lo) * j / (k - 1);

  std::array<int, 256> assignment{};
  auto assign = [&] {
    for (int v : distinct) {
      int best = 0;
      for (int j = 1; j < k; ++j)
        if (std::abs(v - out.centroids[j]) < std::abs(v - out.centroids[best])) best = j;
      assignment[v] = best;
    }
  };
  for (int it = 0; it < iterations; ++it) {
    assign();
    std::vector<double> sum(k, 0.0), cnt(k, 0.0);
    for (int v : distinct) {
      sum[assignment[v]] += static_cast<double>(v) * histogram[v];
      cnt[assignment[v]] += static_cast<double>(histogram[v]);
    }
    for (int j = 0; j < k; ++j)
      if (cnt[j] > 0) out.centroids[j] = sum[j] / cnt[j];
  }
  assign();
  out.counts.assign(k, 0);
  for (int v : distinct) out.counts[assignment[v]] += histogram[v];

  // Drop clusters that ended up empty.
  IntensityClusters kept;
  for (int j = 0; j < k; ++j)
    if (out.counts[j] > 0) {
      kept.centroids.push_back(out.centroids[j]);
      kept.counts.push_back(out.counts[j]);
    }
  return kept;
}

FaceImage dp_samp(const FaceImage& img, double epsilon, int k, int m, Seed seed) {
  if (!(epsilon > 0.0)) fail(ErrorKind::InvalidArgument, "epsilon must be > 0");
  if (k < 1 || m < 1 || m > k) fail(ErrorKind::InvalidArgument, "need 1 <= m <= k");
  const std::size_t n_pixels = static_cast<std::size_t>(img.width) * img.height;
  Rng rng(seed);
  FaceImage out(img.width, img.height);
  for (int c = 0; c < Image::kChannels; ++c) {
    std::vector<std::uint8_t> channel(n_pixels);
    for (std::size_t i = 0; i < n_pixels; ++i) channel[i] = img.pixels[i * 3 + c];
    IntensityClusters clusters = cluster_intensities(channel, k);

    std::vector<std::size_t> candidates(clusters.centroids.size());
    std::iota(candidates.begin(), candidates.end(), std::size_t{0});
    std::vector<double> selected;
    const std::size_t draws = std::min<std::size_t>(m, candidates.size());
    for (std::size_t d = 0; d < draws; ++d) {
      std::vector<double> weights(candidates.size());
      double total = 0.0;
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        weights[i] = std::exp(epsilon * static_cast<double>(clusters.counts[candidates[i]]) /
                              (2.0 * static_cast<double>(n_pixels)));
        total += weights[i];
      }
      double u = rng.uniform() * total;
      std::size_t pick = candidates.size() - 1;
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (u < weights[i]) {
          pick = i;
          break;
        }
        u -= weights[i];
      }
      selected.push_back(clusters.centroids[candidates[pick]]);
      candidates.erase(candidates.begin() + static_cast<std::ptrdiff_t>(pick));
    }

    std::array<std::uint8_t, 256> lut{};
    for (int v = 0; v < 256; ++v) {
      double best = selected.front();
      for (double s : selected)
        if (std::abs(v - s) < std::abs(v - best)) best = s;
      lut[v] = clamp_to_byte(best);
    }
    for (std::size_t i = 0; i < n_pixels; ++i) out.pixels[i * 3 + c] = lut[channel[i]];
  }
  return out;
}

KSameBackground::KSameBackground(std::vector<IdentityId> ids,
                                 std::vector<std::vector<double>> representatives, int width,
                                 int height)
    : ids_(std::move(ids)), reps_(std::move(representatives)), width_(width), height_(height) {
  if (ids_.size() != reps_.size())
    fail(ErrorKind::InvalidArgument, "one representative per identity expected");
  const auto expected = static_cast<std::size_t>(width) * height * Image::kChannels;
  for (const auto& r : reps_)
    if (r.size() != expected) fail(ErrorKind::DimensionMismatch, "representative size");
}

KSameBackground KSameBackground::from_dataset(const Dataset& background) {
  if (background.modality() != Modality::Face)
    fail(ErrorKind::InvalidArgument, "k-Same-Pixel needs a face background dataset");
  std::vector<IdentityId> ids;
  std::vector<std::vector<double>> reps;
  int width = 0, height = 0;
  for (std::size_t i = 0; i < background.samples.size(); ++i) {
    const auto& list = background.samples[i];
    std::vector<double> mean;
    for (const auto& s : list) {
      const auto& img = std::get<FaceImage>(s);
      if (mean.empty()) {
        width = img.width;
        height = img.height;
        mean.assign(img.pixels.size(), 0.0);
      } else if (img.width != width || img.height != height) {
        fail(ErrorKind::DimensionMismatch, "background images differ in size");
      }
      for (std::size_t p = 0; p < img.pixels.size(); ++p) mean[p] += img.pixels[p];
    }
    for (double& v : mean) v /= static_cast<double>(list.size());
    ids.push_back(background.manifest.identities[i].id);
    reps.push_back(std::move(mean));
  }
  return KSameBackground(std::move(ids), std::move(reps), width, height);
}

FaceImage k_same_pixel(const FaceImage& img, int k, const KSameBackground& background) {
  if (k < 1) fail(ErrorKind::InvalidArgument, "k must be >= 1");
  if (background.size() < static_cast<std::size_t>(k))
    fail(ErrorKind::BackgroundTooSmall, "background has " + std::to_string(background.size()) +
                                            " identities, k = " + std::to_string(k));
  if (img.width != background.width() || img.height != background.height())
    fail(ErrorKind::DimensionMismatch, "image and background sizes differ");

  std::vector<std::pair<double, std::size_t>> dist;
  dist.reserve(background.size());
  for (std::size_t i = 0; i < background.size(); ++i) {
    const auto& rep = background.representative(i);
    double d = 0.0;
    for (std::size_t p = 0; p < rep.size(); ++p) {
      const double diff = img.pixels[p] - rep[p];
      d += diff * diff;
    }
    dist.emplace_back(d, i);
  }
  std::sort(dist.begin(), dist.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return background.ids()[a.second] < background.ids()[b.second];
  });

  std::vector<double> mean(img.pixels.size(), 0.0);
  for (int j = 0; j < k; ++j) {
    const auto& rep = background.representative(dist[j].second);
    for (std::size_t p = 0; p < mean.size(); ++p) mean[p] += rep[p];
  }
  FaceImage out(img.width, img.height);
  for (std::size_t p = 0; p < mean.size(); ++p) out.pixels[p] = clamp_to_byte(mean[p] / k);
  return out;
}

}  // namespace bioanon
