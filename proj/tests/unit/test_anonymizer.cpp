#include <doctest.h>

#include "bioanon/anonymizer.hpp"
#include "bioanon/error.hpp"
#include "test_support.hpp"

using namespace bioanon;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an Error");
  return ErrorKind::IoError;
}

std::vector<AnonymizerSpec> face_specs() {
  return {anon::None{},   anon::EyeMask{},  anon::GaussianBlur{}, anon::Krtio{},
          anon::DpPix{},  anon::DpSnow{},   anon::DpSamp{},       anon::KSamePixel{}};
}

}  // namespace

TEST_SUITE("anonymizer") {

TEST_CASE("names and parameters") {
  CHECK(anonymizer_name(anon::Noise{3}) == "Noise(3)");
  CHECK(anonymizer_name(anon::Noise{100}) == "Noise(100)");
  CHECK(anonymizer_name(anon::Keep{BodyRegion::Legs}) == "Keep(legs)");
  CHECK(anonymizer_name(anon::MotionExtraction{}) == "MotionExtraction");
  CHECK(anonymizer_name(anon::DpPix{}) == "DPPix");
  CHECK(anonymizer_params(anon::DpPix{}) == "b=12;epsilon=2;m=16");
  CHECK(anonymizer_params(anon::MotionExtraction{}) == "");
}

TEST_CASE("json round trip") {
  std::vector<AnonymizerSpec> all = face_specs();
  all.push_back(anon::Noise{10});
  all.push_back(anon::Keep{BodyRegion::Head});
  all.push_back(anon::MotionExtraction{});
  all.push_back(anon::External{"fawkes", "tool {input} {output}"});
  for (const auto& spec : all) {
    auto back = anonymizer_from_json(anonymizer_to_json(spec));
    CHECK(anonymizer_key(back) == anonymizer_key(spec));
    CHECK(back.index() == spec.index());
  }
  CHECK(std::holds_alternative<anon::MotionExtraction>(anonymizer_from_json("motion_extraction")));
  auto noise = anonymizer_from_json(nlohmann::json{{"kind", "noise"}});
  CHECK(std::get<anon::Noise>(noise).scale == 3.0);
}

TEST_CASE("invalid specs") {
  CHECK(kind_of([] { anonymizer_from_json(nlohmann::json{{"kind", "noise"}, {"scale", -1}}); }) ==
        ErrorKind::InvalidArgument);
  CHECK(kind_of([] { anonymizer_from_json(nlohmann::json{{"kind", "gaussian_blur"}, {"kernel_size", 8}}); }) ==
        ErrorKind::EvenKernel);
  CHECK(kind_of([] { anonymizer_from_json(nlohmann::json{{"kind", "dp_samp"}, {"k", 3}, {"m", 4}}); }) ==
        ErrorKind::InvalidArgument);
  CHECK(kind_of([] { anonymizer_from_json("swirl"); }) == ErrorKind::ParseError);
  CHECK(kind_of([] { anonymizer_from_json(nlohmann::json{{"kind", "keep"}, {"region", "arms"}}); }) ==
        ErrorKind::UnknownRegion);
}

TEST_CASE("modality support") {
  CHECK(anonymizer_supports(anon::Noise{}, Modality::Gait));
  CHECK(!anonymizer_supports(anon::Noise{}, Modality::Face));
  CHECK(anonymizer_supports(anon::DpSnow{}, Modality::Face));
  CHECK(!anonymizer_supports(anon::DpSnow{}, Modality::Gait));
  CHECK(anonymizer_supports(anon::None{}, Modality::Gait));
  Dataset ds = synthesize_gait(2, 2, 0);
  CHECK(kind_of([&] { anonymize_dataset(ds, anon::EyeMask{}, 0); }) == ErrorKind::InvalidArgument);
}

TEST_CASE("every face technique keeps the input shape") {
  Dataset bg = synthesize_faces(12, 8, 2);
  AnonymizerContext ctx{std::make_shared<const KSameBackground>(KSameBackground::from_dataset(bg))};
  Dataset ds = synthesize_faces(2, 8, 3);
  const Sample& s = ds.samples[0][0];
  for (const auto& spec : face_specs()) {
    auto out = std::get<FaceImage>(apply_anonymizer(spec, s, 5, ctx));
    CHECK(out.width == 224);
    CHECK(out.height == 224);
    CHECK(out.pixels.size() == 224u * 224u * 3u);
  }
  CHECK(kind_of([&] { apply_anonymizer(anon::KSamePixel{}, s, 5); }) == ErrorKind::BackgroundTooSmall);
}

TEST_CASE("every gait technique keeps the input shape") {
  Dataset ds = synthesize_gait(2, 2, 4);
  for (AnonymizerSpec spec : {AnonymizerSpec{anon::Noise{3}}, AnonymizerSpec{anon::Keep{}},
                              AnonymizerSpec{anon::MotionExtraction{}}}) {
    auto out = std::get<GaitSequence>(apply_anonymizer(spec, ds.samples[0][0], 1));
    CHECK(out.frames.rows() == 100);
    CHECK(out.frames.cols() == 156);
    CHECK(out.frames.allFinite());
  }
}

TEST_CASE("anonymize dataset is deterministic and per-sample seeded") {
  Dataset ds = synthesize_gait(3, 4, 4);
  auto a = anonymize_dataset(ds, anon::Noise{3}, 9);
  auto b = anonymize_dataset(ds, anon::Noise{3}, 9);
  CHECK(a.manifest == ds.manifest);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(std::get<GaitSequence>(a.samples[i][j]) == std::get<GaitSequence>(b.samples[i][j]));
      auto single = apply_anonymizer(anon::Noise{3}, ds.samples[i][j],
                                     sample_seed(9, anon::Noise{3}, ds.manifest.identities[i].id, j));
      CHECK(std::get<GaitSequence>(single) == std::get<GaitSequence>(a.samples[i][j]));
    }
  CHECK(sample_seed(9, anon::Noise{3}, "a", 0) != sample_seed(9, anon::Noise{10}, "a", 0));
  CHECK(sample_seed(9, anon::Noise{3}, "a", 0) != sample_seed(9, anon::Noise{3}, "a", 1));
}

TEST_CASE("external tool") {
  auto img = testing::constant_image(16, 12, 5, 6, 7);
  auto copy = apply_anonymizer(anon::External{"copy", "cp {input} {output}"}, img, 1);
  CHECK(std::get<FaceImage>(copy) == img);
  CHECK(kind_of([&] { apply_anonymizer(anon::External{"broken", "false"}, img, 1); }) ==
        ErrorKind::ExternalToolFailed);
}

}  // TEST_SUITE
