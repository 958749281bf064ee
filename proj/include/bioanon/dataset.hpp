#pragma once

#include <Eigen/Core>
#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "bioanon/image.hpp"
#include "bioanon/rng.hpp"

namespace bioanon {

enum class Modality { Face, Gait };

std::string to_string(Modality modality);
Modality parse_modality(const std::string& text);

using IdentityId = std::string;

struct IdentityRecord {
  IdentityId id;
  std::map<std::string, double> metadata;
  std::vector<std::string> samples;  // paths relative to the manifest

  friend bool operator==(const IdentityRecord&, const IdentityRecord&) = default;
};

struct DatasetManifest {
  static constexpr int kSchemaVersion = 1;

  int schema_version = kSchemaVersion;
  Modality modality = Modality::Gait;
  std::vector<IdentityRecord> identities;

  const IdentityRecord& identity(const IdentityId& id) const;
  std::vector<IdentityId> identity_ids() const;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

constexpr int kGaitFrames = 100;
constexpr int kGaitPoints = 52;
constexpr int kGaitColumns = kGaitPoints * 3;

using PoseMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Frames x (point0.x, point0.y, point0.z, ..., point51.z), millimeters.
struct GaitSequence {
  PoseMatrix frames = PoseMatrix::Zero(kGaitFrames, kGaitColumns);

  double& at(int frame, int point, int axis) { return frames(frame, point * 3 + axis); }
  double at(int frame, int point, int axis) const { return frames(frame, point * 3 + axis); }

  friend bool operator==(const GaitSequence& a, const GaitSequence& b) {
    return a.frames.rows() == b.frames.rows() && a.frames.cols() == b.frames.cols() &&
           a.frames == b.frames;
  }
};

/// Throws InvariantViolation unless the sequence is 100 x 156 and finite.
void validate_gait(const GaitSequence& seq, const std::string& where = "sequence");

GaitSequence read_gait_csv(const std::filesystem::path& path);
void write_gait_csv(const std::filesystem::path& path, const GaitSequence& seq);

using Sample = std::variant<GaitSequence, FaceImage>;

/// A manifest together with every sample it references, loaded in memory.
/// samples[i][j] is sample j of manifest.identities[i].
struct Dataset {
  DatasetManifest manifest;
  std::vector<std::vector<Sample>> samples;

  Modality modality() const { return manifest.modality; }
  std::size_t identity_index(const IdentityId& id) const;
  const std::vector<Sample>& samples_of(const IdentityId& id) const {
    return samples[identity_index(id)];
  }
  std::size_t total_samples() const;
};

nlohmann::json manifest_to_json(const DatasetManifest& manifest);
/// Structural parse and validation; does not touch sample files.
DatasetManifest manifest_from_json(const nlohmann::json& doc);
/// Checks every manifest invariant that does not require reading samples.
void validate_manifest(const DatasetManifest& manifest);

/// Parses and fully validates a manifest, including parsing every sample file.
DatasetManifest load_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

/// Loads a manifest and all of its samples.
Dataset load_dataset(const std::filesystem::path& manifest_path);
/// Writes samples under `dir` at their manifest paths, then dir/manifest.json.
void write_dataset(const std::filesystem::path& dir, const Dataset& dataset);

/// Stable content hash of a dataset (manifest + sample values).
std::uint64_t dataset_hash(const Dataset& dataset);

// ---------------------------------------------------------------------------
// Synthetic generators

/// Shape of the synthetic walkers. The defaults are frozen: the acceptance
/// suite depends on them.
struct GaitGeneratorParams {
  double identity_offset_mm = 20.0;       // per-point body-shape offset
  double limb_amplitude_min_mm = 50.0;
  double limb_amplitude_max_mm = 300.0;
  double torso_amplitude_max_mm = 30.0;
  double frequency_min = 0.8;             // cycles per 100-frame sequence
  double frequency_max = 1.2;
  double observation_noise_mm = 0.5;
  // Fraction of each identity's own draw blended into a shared population
  // walker; 0 makes all walkers identical.
  double identity_spread = 0.006;
  double harmonic_amplitude_max_mm = 2.0;  // second harmonic of the limb swing
  double harmonic_spread = 0.3;
  // Walk-to-walk variation of one identity.
  double phase_jitter_rad = 0.0;
  double amplitude_jitter = 0.0;          // relative
  double translation_jitter_mm = 0.0;
  double marker_jitter_mm = 2.0;          // per-walk marker placement error
};

struct FaceGeneratorParams {
  int max_shift_px = 6;
  double brightness_jitter = 0.10;
  double pixel_noise = 4.0;
};

/// In-memory synthetic gait dataset; sample paths follow the on-disk layout.
Dataset synthesize_gait(int n_identities, int n_sequences, Seed seed,
                        const GaitGeneratorParams& params = {});
Dataset synthesize_faces(int n_identities, int n_images, Seed seed,
                         const FaceGeneratorParams& params = {});

DatasetManifest generate_synthetic_gait(int n_identities, int n_sequences, Seed seed,
                                        const std::filesystem::path& out_dir,
                                        const GaitGeneratorParams& params = {});
DatasetManifest generate_synthetic_faces(int n_identities, int n_images, Seed seed,
                                         const std::filesystem::path& out_dir,
                                         const FaceGeneratorParams& params = {});

/// The fixed 52-point standing template, millimeters.
const std::array<Eigen::Vector3d, kGaitPoints>& gait_template();

// ---------------------------------------------------------------------------
// Splitting

struct SampleRef {
  IdentityId identity;
  std::size_t index = 0;

  friend auto operator<=>(const SampleRef&, const SampleRef&) = default;
};

struct SplitResult {
  std::vector<SampleRef> train;
  std::vector<SampleRef> test;

  friend bool operator==(const SplitResult&, const SplitResult&) = default;
};

/// Number of training samples out of n: round-half-up of fraction * n, kept
/// within [1, n - 1].
std::size_t train_count(std::size_t n, double train_fraction);

SplitResult split(const DatasetManifest& manifest, const std::vector<IdentityId>& identity_ids,
                  double train_fraction, Seed seed);

}  // namespace bioanon
