#include "bioanon/anonymizer.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>

#include "bioanon/error.hpp"

namespace bioanon {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <class... Ts>
struct Overload : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overload(Ts...) -> Overload<Ts...>;

std::string kind_of(const AnonymizerSpec& spec) {
  return std::visit(Overload{
                        [](const anon::None&) { return "none"; },
                        [](const anon::Noise&) { return "noise"; },
                        [](const anon::Keep&) { return "keep"; },
                        [](const anon::MotionExtraction&) { return "motion_extraction"; },
                        [](const anon::EyeMask&) { return "eye_mask"; },
                        [](const anon::GaussianBlur&) { return "gaussian_blur"; },
                        [](const anon::Krtio&) { return "krtio"; },
                        [](const anon::DpPix&) { return "dp_pix"; },
                        [](const anon::DpSnow&) { return "dp_snow"; },
                        [](const anon::DpSamp&) { return "dp_samp"; },
                        [](const anon::KSamePixel&) { return "k_same_pixel"; },
                        [](const anon::External&) { return "external"; },
                    },
                    spec);
}

}  // namespace

nlohmann::json anonymizer_to_json(const AnonymizerSpec& spec) {
  nlohmann::json doc = {{"kind", kind_of(spec)}};
  std::visit(Overload{
                 [](const anon::None&) {},
                 [&](const anon::Noise& a) { doc["scale"] = a.scale; },
                 [&](const anon::Keep& a) { doc["region"] = to_string(a.region); },
                 [](const anon::MotionExtraction&) {},
                 [&](const anon::EyeMask& a) { doc["strip_height_px"] = a.strip_height_px; },
                 [&](const anon::GaussianBlur& a) { doc["kernel_size"] = a.kernel_size; },
                 [&](const anon::Krtio& a) {
                   doc["alpha"] = a.alpha;
                   doc["block_size"] = a.block_size;
                   doc["k"] = a.k;
                   doc["key"] = a.key;
                 },
                 [&](const anon::DpPix& a) {
                   doc["epsilon"] = a.epsilon;
                   doc["b"] = a.b;
                   doc["m"] = a.m;
                 },
                 [&](const anon::DpSnow& a) { doc["d"] = a.d; },
                 [&](const anon::DpSamp& a) {
                   doc["epsilon"] = a.epsilon;
                   doc["k"] = a.k;
                   doc["m"] = a.m;
                 },
                 [&](const anon::KSamePixel& a) { doc["k"] = a.k; },
                 [&](const anon::External& a) {
                   doc["name"] = a.name;
                   doc["command"] = a.command;
                 },
             },
             spec);
  return doc;
}

AnonymizerSpec anonymizer_from_json(const nlohmann::json& doc) {
  if (doc.is_string()) return anonymizer_from_json(nlohmann::json{{"kind", doc}});
  if (!doc.is_object() || !doc.contains("kind"))
    fail(ErrorKind::ParseError, "anonymizer spec needs a \"kind\": " + doc.dump());
  AnonymizerSpec spec;
  try {
    const std::string kind = doc.at("kind").get<std::string>();
    auto get = [&](const char* key, auto fallback) {
      return doc.contains(key) ? doc.at(key).get<decltype(fallback)>() : fallback;
    };
    if (kind == "none" || kind == "clear") {
      spec = anon::None{};
    } else if (kind == "noise") {
      spec = anon::Noise{get("scale", anon::Noise{}.scale)};
    } else if (kind == "keep") {
      spec = anon::Keep{parse_region(get("region", std::string("legs")))};
    } else if (kind == "motion_extraction") {
      spec = anon::MotionExtraction{};
    } else if (kind == "eye_mask") {
      spec = anon::EyeMask{get("strip_height_px", anon::EyeMask{}.strip_height_px)};
    } else if (kind == "gaussian_blur") {
      spec = anon::GaussianBlur{get("kernel_size", anon::GaussianBlur{}.kernel_size)};
    } else if (kind == "krtio") {
      anon::Krtio d;
      spec = anon::Krtio{get("alpha", d.alpha), get("block_size", d.block_size), get("k", d.k),
                         get("key", d.key)};
    } else if (kind == "dp_pix") {
      anon::DpPix d;
      spec = anon::DpPix{get("epsilon", d.epsilon), get("b", d.b), get("m", d.m)};
    } else if (kind == "dp_snow") {
      spec = anon::DpSnow{get("d", anon::DpSnow{}.d)};
    } else if (kind == "dp_samp") {
      anon::DpSamp d;
      spec = anon::DpSamp{get("epsilon", d.epsilon), get("k", d.k), get("m", d.m)};
    } else if (kind == "k_same_pixel") {
      spec = anon::KSamePixel{get("k", anon::KSamePixel{}.k)};
    } else if (kind == "external") {
      spec = anon::External{get("name", std::string("external")), get("command", std::string())};
    } else {
      fail(ErrorKind::ParseError, "unknown anonymizer kind '" + kind + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::ParseError, "bad anonymizer spec " + doc.dump() + ": " + e.what());
  }
  validate_anonymizer(spec);
  return spec;
}

void validate_anonymizer(const AnonymizerSpec& spec) {
  auto require = [&](bool ok, const std::string& what) {
    if (!ok) fail(ErrorKind::InvalidArgument, anonymizer_name(spec) + ": " + what);
  };
  std::visit(Overload{
                 [](const anon::None&) {},
                 [&](const anon::Noise& a) { require(a.scale >= 0.0, "scale must be >= 0"); },
                 [](const anon::Keep&) {},
                 [](const anon::MotionExtraction&) {},
                 [&](const anon::EyeMask& a) {
                   require(a.strip_height_px >= 0, "strip height must be >= 0");
                 },
                 [&](const anon::GaussianBlur& a) {
                   if (a.kernel_size < 3 || a.kernel_size % 2 == 0)
                     fail(ErrorKind::EvenKernel, "kernel size must be odd and >= 3");
                 },
                 [&](const anon::Krtio& a) {
                   require(a.alpha >= 0.0 && a.alpha < 1.0, "alpha must be in [0, 1)");
                   require(a.block_size >= 1 && a.k >= 1, "block size and k must be >= 1");
                 },
                 [&](const anon::DpPix& a) {
                   require(a.epsilon > 0.0, "epsilon must be > 0");
                   require(a.b >= 1 && a.m >= 1, "b and m must be >= 1");
                 },
                 [&](const anon::DpSnow& a) { require(a.d > 0.0 && a.d < 1.0, "d must be in (0, 1)"); },
                 [&](const anon::DpSamp& a) {
                   require(a.epsilon > 0.0, "epsilon must be > 0");
                   require(a.m >= 1 && a.m <= a.k, "need 1 <= m <= k");
                 },
                 [&](const anon::KSamePixel& a) { require(a.k >= 1, "k must be >= 1"); },
                 [&](const anon::External& a) { require(!a.command.empty(), "command is empty"); },
             },
             spec);
}

std::string anonymizer_name(const AnonymizerSpec& spec) {
  return std::visit(Overload{
                        [](const anon::None&) -> std::string { return "None"; },
                        [](const anon::Noise& a) { return "Noise(" + num(a.scale) + ")"; },
                        [](const anon::Keep& a) { return "Keep(" + to_string(a.region) + ")"; },
                        [](const anon::MotionExtraction&) -> std::string { return "MotionExtraction"; },
                        [](const anon::EyeMask&) -> std::string { return "EyeMask"; },
                        [](const anon::GaussianBlur&) -> std::string { return "Blur"; },
                        [](const anon::Krtio&) -> std::string { return "k-RTIO"; },
                        [](const anon::DpPix&) -> std::string { return "DPPix"; },
                        [](const anon::DpSnow&) -> std::string { return "DPSnow"; },
                        [](const anon::DpSamp&) -> std::string { return "DPSamp"; },
                        [](const anon::KSamePixel&) -> std::string { return "k-Same-Pixel"; },
                        [](const anon::External& a) { return a.name; },
                    },
                    spec);
}

std::string anonymizer_params(const AnonymizerSpec& spec) {
  std::string out;
  const nlohmann::json doc = anonymizer_to_json(spec);
  for (const auto& [key, value] : doc.items()) {
    if (key == "kind") continue;
    if (!out.empty()) out += ';';
    out += key + '=';
    if (value.is_string()) {
      out += value.get<std::string>();
    } else if (value.is_number_float()) {
      out += num(value.get<double>());
    } else {
      out += value.dump();
    }
  }
  // Commas would break the CSV column.
  for (char& c : out)
    if (c == ',') c = ' ';
  return out;
}

std::string anonymizer_key(const AnonymizerSpec& spec) { return anonymizer_to_json(spec).dump(); }

bool anonymizer_supports(const AnonymizerSpec& spec, Modality modality) {
  if (std::holds_alternative<anon::None>(spec)) return true;
  const bool gait = std::holds_alternative<anon::Noise>(spec) ||
                    std::holds_alternative<anon::Keep>(spec) ||
                    std::holds_alternative<anon::MotionExtraction>(spec);
  return gait == (modality == Modality::Gait);
}

bool anonymizer_is_identity(const AnonymizerSpec& spec) {
  return std::holds_alternative<anon::None>(spec);
}

namespace {

FaceImage run_external(const anon::External& ext, const FaceImage& img, Seed seed) {
  const fs::path dir = fs::temp_directory_path() /
                       ("bioanon-ext-" + std::to_string(mix64(seed ^ hash_tag(ext.command))));
  fs::create_directories(dir);
  const fs::path in = dir / "input.png", out = dir / "output.png";
  write_png(in, img);
  fs::remove(out);
  std::string cmd = ext.command;
  auto substitute = [&](const std::string& token, const std::string& value) {
    for (std::size_t pos; (pos = cmd.find(token)) != std::string::npos;)
      cmd.replace(pos, token.size(), "'" + value + "'");
  };
  substitute("{input}", in.string());
  substitute("{output}", out.string());
  const int status = std::system(cmd.c_str());
  if (status != 0 || !fs::exists(out)) {
    fs::remove_all(dir);
    fail(ErrorKind::ExternalToolFailed,
         ext.name + ": command exited with status " + std::to_string(status));
  }
  FaceImage result = read_png(out);
  fs::remove_all(dir);
  if (!result.same_shape(img))
    fail(ErrorKind::ExternalToolFailed, ext.name + ": output image has a different size");
  return result;
}

}  // namespace

Sample apply_anonymizer(const AnonymizerSpec& spec, const Sample& sample, Seed seed,
                        const AnonymizerContext& context) {
  if (std::holds_alternative<anon::None>(spec)) return sample;
  if (const auto* seq = std::get_if<GaitSequence>(&sample)) {
    return std::visit(
        Overload{
            [&](const anon::Noise& a) { return anonymize_noise(*seq, a.scale, seed); },
            [&](const anon::Keep& a) { return anonymize_keep(*seq, a.region); },
            [&](const anon::MotionExtraction&) { return anonymize_motion_extraction(*seq); },
            [&](const auto&) -> GaitSequence {
              fail(ErrorKind::InvalidArgument,
                   anonymizer_name(spec) + " does not apply to gait sequences");
            },
        },
        spec);
  }
  const auto& img = std::get<FaceImage>(sample);
  return std::visit(
      Overload{
          [&](const anon::EyeMask& a) { return eye_mask(img, a.strip_height_px); },
          [&](const anon::GaussianBlur& a) { return gaussian_blur(img, a.kernel_size); },
          [&](const anon::Krtio& a) { return krtio(img, a.alpha, a.block_size, a.k, a.key); },
          [&](const anon::DpPix& a) { return dp_pix(img, a.epsilon, a.b, a.m, seed); },
          [&](const anon::DpSnow& a) { return dp_snow(img, a.d, seed); },
          [&](const anon::DpSamp& a) { return dp_samp(img, a.epsilon, a.k, a.m, seed); },
          [&](const anon::KSamePixel& a) {
            if (!context.k_same_background)
              fail(ErrorKind::BackgroundTooSmall, "k-Same-Pixel needs a background dataset");
            return k_same_pixel(img, a.k, *context.k_same_background);
          },
          [&](const anon::External& a) { return run_external(a, img, seed); },
          [&](const auto&) -> FaceImage {
            fail(ErrorKind::InvalidArgument, anonymizer_name(spec) + " does not apply to images");
          },
      },
      spec);
}

Seed sample_seed(Seed master, const AnonymizerSpec& spec, const IdentityId& identity,
                 std::size_t index) {
  return derive_seed(derive_seed(master, "anonymize", anonymizer_key(spec)), "sample", identity,
                     {static_cast<std::uint64_t>(index)});
}

Dataset anonymize_dataset(const Dataset& dataset, const AnonymizerSpec& spec, Seed master,
                          const AnonymizerContext& context) {
  if (!anonymizer_supports(spec, dataset.modality()))
    fail(ErrorKind::InvalidArgument, anonymizer_name(spec) + " does not support " +
                                         to_string(dataset.modality()) + " data");
  Dataset out;
  out.manifest = dataset.manifest;
  out.samples.resize(dataset.samples.size());
  const Seed base = derive_seed(master, "anonymize", anonymizer_key(spec));
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const auto& id = dataset.manifest.identities[i].id;
    out.samples[i].reserve(dataset.samples[i].size());
    for (std::size_t j = 0; j < dataset.samples[i].size(); ++j)
      out.samples[i].push_back(apply_anonymizer(
          spec, dataset.samples[i][j],
          derive_seed(base, "sample", id, {static_cast<std::uint64_t>(j)}), context));
  }
  return out;
}

}  // namespace bioanon
