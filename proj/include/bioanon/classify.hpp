#pragma once

#include <map>
#include <string>
#include <variant>
#include <vector>

#include "bioanon/dataset.hpp"
#include "bioanon/features.hpp"

namespace bioanon {

enum class ClassifierKind { Svm, Knn, RandomForest };

std::string to_string(ClassifierKind kind);
ClassifierKind parse_classifier(const std::string& text);

struct SvmParams {
  double lambda = 1e-4;
  int epochs = 20;
  Seed seed = 0;
};

struct KnnParams {
  int k = 1;
};

struct ForestParams {
  int n_trees = 100;
  int min_leaf = 1;
  Seed seed = 0;
};

/// One-vs-rest linear SVMs in the standardized feature space.
struct SvmModel {
  FeatureMatrix weights;  // classes x dim
  Eigen::VectorXd bias;   // classes
};

struct KnnModel {
  FeatureMatrix exemplars;  // standardized
  std::vector<int> labels;  // index into the label set
  int k = 1;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  int label = -1;  // leaf prediction
};

struct DecisionTree {
  std::vector<TreeNode> nodes;
  int predict(std::span<const double> x) const;
};

struct ForestModel {
  std::vector<DecisionTree> trees;
  double oob_accuracy = 0.0;  // NaN when no sample was ever out of bag
};

/// A fitted closed-set classifier. Predictions are always drawn from labels().
class TrainedClassifier {
 public:
  using State = std::variant<SvmModel, KnnModel, ForestModel>;

  TrainedClassifier(std::vector<IdentityId> labels, Standardizer standardizer, State state);

  ClassifierKind kind() const;
  const std::vector<IdentityId>& labels() const { return labels_; }
  const Standardizer& standardizer() const { return standardizer_; }
  const State& state() const { return state_; }
  Eigen::Index dim() const { return standardizer_.dim(); }

 private:
  std::vector<IdentityId> labels_;  // sorted, unique
  Standardizer standardizer_;
  State state_;
};

struct PredictionRecord {
  SampleRef sample;
  IdentityId true_label;
  std::map<IdentityId, double> scores;
  IdentityId predicted;
};

/// `features` holds one training sample per row; `labels` is aligned with it.
TrainedClassifier fit_svm(const FeatureMatrix& features, const std::vector<IdentityId>& labels,
                          const SvmParams& params = {});
TrainedClassifier fit_knn(const FeatureMatrix& features, const std::vector<IdentityId>& labels,
                          const KnnParams& params = {});
TrainedClassifier fit_forest(const FeatureMatrix& features, const std::vector<IdentityId>& labels,
                             const ForestParams& params = {});

/// Scores and predicts every row of `test`. When `refs` is non-empty it must be
/// aligned with the rows and fills each record's sample and true label.
std::vector<PredictionRecord> predict(const TrainedClassifier& model, const FeatureMatrix& test,
                                      const std::vector<SampleRef>& refs = {});

}  // namespace bioanon
