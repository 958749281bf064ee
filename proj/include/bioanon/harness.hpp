#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bioanon/anonymizer.hpp"
#include "bioanon/classify.hpp"
#include "bioanon/dataset.hpp"
#include "bioanon/error.hpp"
#include "bioanon/features.hpp"
#include "bioanon/selection.hpp"

namespace bioanon {

// ---------------------------------------------------------------------------
// Grid axes

enum class ProtocolKind { Clear, Naive, Parrot, PercentParrot };

struct ProtocolSpec {
  ProtocolKind kind = ProtocolKind::Parrot;
  double anon_fraction = 0.0;  // PercentParrot only
  // Fit the face feature space on anonymized background data (the fraction
  // above for PercentParrot). Ignored for gait and for Clear/Naive.
  bool pretrain_on_anonymized = true;

  /// "clear", "naive", "parrot", "parrot_25", ...
  std::string name() const;
};

ProtocolSpec protocol_from_json(const nlohmann::json& doc);
nlohmann::json protocol_to_json(const ProtocolSpec& spec);
void validate_protocol(const ProtocolSpec& spec);

enum class FeatureKind { Flatten, Simple, FacePca };

std::string to_string(FeatureKind kind);
FeatureKind parse_feature_kind(const std::string& text);

struct RecognizerSpec {
  ClassifierKind classifier = ClassifierKind::Svm;
  FeatureKind features = FeatureKind::Flatten;
  int knn_k = 1;
  int n_trees = 100;
  int pca_components = 0;  // FacePca only; 0 = min(150, n_fit - 1)

  /// "svm+flatten", "knn+simple", "svm+pca", ...
  std::string name() const;
};

/// Accepts "svm+flatten" or {"classifier": "knn", "features": "flatten", "k": 1}.
RecognizerSpec recognizer_from_json(const nlohmann::json& doc);
nlohmann::json recognizer_to_json(const RecognizerSpec& spec);

/// 57 -> 28 -> 14 -> 7 -> 3: halve (rounding down) until three would be passed,
/// and always end at three.
std::vector<std::size_t> halving_grid(std::size_t n_identities);

struct RunConfig {
  std::filesystem::path dataset;                    // manifest.json
  std::optional<std::filesystem::path> background;  // manifest.json of disjoint identities
  std::vector<AnonymizerSpec> anonymizers;
  std::vector<RecognizerSpec> recognizers;
  std::vector<ProtocolSpec> protocols;
  std::vector<SelectionStrategy> selections{SelectionStrategy::Random};
  std::vector<std::size_t> n_identities;  // empty = the whole dataset
  std::size_t repeats = 1;
  Seed seed = 0;
  double train_fraction = 0.75;
  bool selection_on_clear = false;  // compute selection features on clear data
  bool cache_anonymized = true;     // write anonymized copies under output/anon
  std::filesystem::path output;     // empty = write nothing
  unsigned jobs = 0;                // 0 = available parallelism
};

/// Relative dataset paths resolve against `base_dir`. Unknown keys are errors.
RunConfig config_from_json(const nlohmann::json& doc,
                           const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);
/// Every field, defaults included.
nlohmann::json config_to_json(const RunConfig& config);
void validate_config(const RunConfig& config);
/// Hash of the resolved configuration (output location and job count excluded).
std::string run_id(const RunConfig& config);

// ---------------------------------------------------------------------------
// Results

struct EvaluationResult {
  std::string run_id;
  Modality modality = Modality::Gait;
  std::string anonymizer;
  std::string anonymizer_params;
  std::string recognizer;
  std::string protocol;
  std::optional<double> anon_fraction;
  std::string selection;
  std::size_t n_identities = 0;
  std::size_t repeat = 0;
  Seed seed = 0;
  double accuracy = 0.0;
  double chance_level = 0.0;
  std::size_t n_test_samples = 0;
};

struct SummaryRow {
  std::string run_id;
  Modality modality = Modality::Gait;
  std::string anonymizer;
  std::string anonymizer_params;
  std::string recognizer;
  std::string protocol;
  std::optional<double> anon_fraction;
  std::string selection;
  std::size_t n_identities = 0;
  double chance_level = 0.0;
  std::size_t n_repeats = 0;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;  // population standard deviation
};

struct CellError {
  std::string anonymizer;
  std::string recognizer;
  std::string protocol;
  std::string selection;
  std::size_t n_identities = 0;
  std::size_t repeat = 0;
  ErrorKind kind = ErrorKind::InvalidArgument;
  std::string message;
};

double accuracy(const std::vector<PredictionRecord>& preds);
std::map<IdentityId, double> per_identity_accuracy(const std::vector<PredictionRecord>& preds);

/// Mean and population std over repeats, grouped by every other coordinate.
/// Groups come out in order of first appearance.
std::vector<SummaryRow> aggregate(const std::vector<EvaluationResult>& results);

extern const char* const kResultsHeader;
extern const char* const kSummaryHeader;
std::string results_csv_row(const EvaluationResult& r);
std::string summary_csv_row(const SummaryRow& r);
void write_results_csv(const std::filesystem::path& path,
                       const std::vector<EvaluationResult>& results);
std::vector<EvaluationResult> read_results_csv(const std::filesystem::path& path);
void write_summary_csv(const std::filesystem::path& path, const std::vector<SummaryRow>& rows);

// ---------------------------------------------------------------------------
// Pipeline pieces

/// Which samples go where, and whether each is used anonymized.
struct AssembledSet {
  std::vector<SampleRef> refs;
  std::vector<bool> anonymized;
};

struct AssembledData {
  AssembledSet train;
  AssembledSet test;
};

/// Clear: both sets clear. Naive: clear train, anonymized test. Parrot: both
/// anonymized. PercentParrot(f): per identity, round-half-up(f * n_train) train
/// samples (seeded choice) anonymized, the rest clear; test anonymized.
AssembledData assemble_training_data(const SplitResult& split, const ProtocolSpec& protocol,
                                     Seed seed);

/// Per identity, the indices (into `count` items) that are anonymized under
/// fraction f: round-half-up(f * count) of them, chosen by `seed`.
std::vector<bool> choose_anonymized(std::size_t count, double fraction, Seed seed);

/// One point of the grid.
struct Cell {
  std::size_t anonymizer = 0;  // indices into the config lists
  std::size_t recognizer = 0;
  std::size_t protocol = 0;
  std::size_t selection = 0;
  std::size_t n_identities = 0;  // value, not index
  std::size_t repeat = 0;
};

struct GridOutcome {
  std::vector<EvaluationResult> results;  // canonical grid order
  std::vector<CellError> errors;
  std::size_t n_cells = 0;

  bool all_failed() const { return n_cells > 0 && results.empty(); }
};

/// Holds the loaded datasets and everything derived from them that cells share:
/// anonymized copies, per-sample features, background feature spaces and
/// classification rankings. Shared state is computed once and then read-only,
/// so cells may run concurrently.
class Experiment {
 public:
  explicit Experiment(RunConfig config);  // loads datasets from the config paths
  Experiment(RunConfig config, Dataset dataset, std::optional<Dataset> background = {});
  ~Experiment();
  Experiment(const Experiment&) = delete;
  Experiment& operator=(const Experiment&) = delete;

  const RunConfig& config() const;
  const Dataset& dataset() const;
  const std::string& id() const;

  /// Full Cartesian grid in canonical order: anonymizer, recognizer, protocol,
  /// selection, N (descending as configured), repeat.
  std::vector<Cell> cells() const;

  /// Seed of a cell. It depends on (master seed, selection, N, repeat) only, so
  /// all anonymizers, recognizers and protocols at that point share the split.
  Seed cell_seed(const Cell& cell) const;

  std::vector<IdentityId> select(const Cell& cell);
  EvaluationResult run_cell(const Cell& cell);
  /// run_cell returning the raw predictions as well.
  EvaluationResult run_cell(const Cell& cell, std::vector<PredictionRecord>& predictions);

  /// Top-n identities by per-identity accuracy of one parrot evaluation on the
  /// full identity set.
  std::vector<IdentityId> select_classification(std::size_t anonymizer, std::size_t recognizer,
                                                std::size_t n);

  /// Runs every cell on a bounded worker pool. With an output directory set,
  /// rows are appended to results.csv in canonical order as they finish.
  GridOutcome run_grid(std::function<void(std::size_t, std::size_t)> progress = {});

  /// The anonymized copy of the evaluation dataset (cached).
  std::shared_ptr<const Dataset> anonymized(std::size_t anonymizer);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Writes results.csv, summary.csv, errors.csv (when any) and
/// resolved_config.json into config.output.
GridOutcome run_experiment(const RunConfig& config,
                           std::function<void(std::size_t, std::size_t)> progress = {});

}  // namespace bioanon
