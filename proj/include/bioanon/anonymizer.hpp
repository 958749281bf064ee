#pragma once

#include <memory>
#include <string>
#include <variant>

#include <nlohmann/json.hpp>

#include "bioanon/dataset.hpp"
#include "bioanon/gait_anon.hpp"
#include "bioanon/image_anon.hpp"

namespace bioanon {

namespace anon {

struct None {};

struct Noise {
  double scale = 3.0;
};
struct Keep {
  BodyRegion region = BodyRegion::Legs;
};
struct MotionExtraction {};

struct EyeMask {
  int strip_height_px = 140;
};
struct GaussianBlur {
  int kernel_size = 101;
};
struct Krtio {
  double alpha = 0.4;
  int block_size = 18;
  int k = 3;
  Seed key = 0;
};
struct DpPix {
  double epsilon = 2.0;
  int b = 12;
  int m = 16;
};
struct DpSnow {
  double d = 0.01;
};
struct DpSamp {
  double epsilon = 5.0;
  int k = 24;
  int m = 12;
};
struct KSamePixel {
  int k = 10;
};

/// Image-in/image-out subprocess. `command` may contain {input} and {output},
/// which are replaced by PNG file paths.
struct External {
  std::string name;
  std::string command;
};

}  // namespace anon

using AnonymizerSpec =
    std::variant<anon::None, anon::Noise, anon::Keep, anon::MotionExtraction, anon::EyeMask,
                 anon::GaussianBlur, anon::Krtio, anon::DpPix, anon::DpSnow, anon::DpSamp,
                 anon::KSamePixel, anon::External>;

/// Display name, e.g. "Noise(3)", "Keep(legs)", "DPPix".
std::string anonymizer_name(const AnonymizerSpec& spec);
/// Parameters as "key=value" pairs joined by ';' (empty when there are none).
std::string anonymizer_params(const AnonymizerSpec& spec);
/// Stable identity of an AnonymizerSpec, used for seeds and cache keys.
std::string anonymizer_key(const AnonymizerSpec& spec);

/// The modality the technique applies to; None and External are accepted for
/// faces, None also for gait.
bool anonymizer_supports(const AnonymizerSpec& spec, Modality modality);
bool anonymizer_is_identity(const AnonymizerSpec& spec);

/// JSON form: {"kind": "noise", "scale": 3}. Missing parameters take defaults;
/// invariants are checked.
AnonymizerSpec anonymizer_from_json(const nlohmann::json& doc);
nlohmann::json anonymizer_to_json(const AnonymizerSpec& spec);
void validate_anonymizer(const AnonymizerSpec& spec);

struct AnonymizerContext {
  std::shared_ptr<const KSameBackground> k_same_background;  // required by KSamePixel
};

/// Applies the technique to one sample. `seed` drives the randomized methods.
Sample apply_anonymizer(const AnonymizerSpec& spec, const Sample& sample, Seed seed,
                        const AnonymizerContext& context = {});

/// Seed for anonymizing one sample: depends on the master seed, the anonymizer spec and
/// the sample's position, never on which experiment asks for it.
Seed sample_seed(Seed master, const AnonymizerSpec& spec, const IdentityId& identity,
                 std::size_t index);

/// Anonymized copy of every sample of the dataset (manifest unchanged).
Dataset anonymize_dataset(const Dataset& dataset, const AnonymizerSpec& spec, Seed master,
                          const AnonymizerContext& context = {});

}  // namespace bioanon
