#include "bioanon/classify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "bioanon/error.hpp"

namespace bioanon {

std::string to_string(ClassifierKind kind) {
  switch (kind) {
    case ClassifierKind::Svm: return "svm";
    case ClassifierKind::Knn: return "knn";
    case ClassifierKind::RandomForest: return "forest";
  }
  return "?";
}

ClassifierKind parse_classifier(const std::string& text) {
  if (text == "svm") return ClassifierKind::Svm;
  if (text == "knn") return ClassifierKind::Knn;
  if (text == "forest" || text == "rf") return ClassifierKind::RandomForest;
  fail(ErrorKind::ParseError, "unknown classifier '" + text + "'");
}

TrainedClassifier::TrainedClassifier(std::vector<IdentityId> labels, Standardizer standardizer,
                                     State state)
    : labels_(std::move(labels)), standardizer_(std::move(standardizer)), state_(std::move(state)) {}

ClassifierKind TrainedClassifier::kind() const {
  switch (state_.index()) {
    case 0: return ClassifierKind::Svm;
    case 1: return ClassifierKind::Knn;
    default: return ClassifierKind::RandomForest;
  }
}

namespace {

struct EncodedLabels {
  std::vector<IdentityId> names;  // sorted
  std::vector<int> codes;         // per training row
};

EncodedLabels encode(const FeatureMatrix& features, const std::vector<IdentityId>& labels) {
  if (features.rows() == 0) fail(ErrorKind::TooFewSamples, "empty training set");
  if (static_cast<std::size_t>(features.rows()) != labels.size())
    fail(ErrorKind::DimensionMismatch, "features and labels differ in length");
  if (!features.allFinite()) fail(ErrorKind::InvalidArgument, "non-finite training features");
  std::set<IdentityId> unique(labels.begin(), labels.end());
  EncodedLabels out{{unique.begin(), unique.end()}, {}};
  out.codes.reserve(labels.size());
  for (const auto& l : labels)
    out.codes.push_back(static_cast<int>(
        std::lower_bound(out.names.begin(), out.names.end(), l) - out.names.begin()));
  return out;
}

// Index of the maximum; ties go to the lowest index (labels are sorted, so
// this is the lexicographically smallest label).
int argmax(const Eigen::VectorXd& v) {
  int best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = static_cast<int>(i);
  return best;
}

}  // namespace

// ---------------------------------------------------------------------------
// SVM
//
// Pegasos on the hinge loss with step 1/(lambda t). Starting from w = 0 the
// iterate after step t is w = (1/(lambda t)) sum_j c_j y_j x_j, where c_j counts
// the margin violations of sample j so far. Tracking c and the vector
// g = sum_j c_j y_j K(x_j, .) makes every step O(n) instead of O(dim) while
// following the primal iterates exactly. A constant feature of 1 acts as the
// (regularized) bias.

TrainedClassifier fit_svm(const FeatureMatrix& features, const std::vector<IdentityId>& labels,
                          const SvmParams& params) {
  EncodedLabels enc = encode(features, labels);
  if (enc.names.size() < 2) fail(ErrorKind::SingleClass, "SVM needs at least 2 labels");
  if (!(params.lambda > 0.0) || params.epochs < 1)
    fail(ErrorKind::InvalidArgument, "SVM needs lambda > 0 and epochs >= 1");

  Standardizer standardizer = Standardizer::fit(features);
  const FeatureMatrix x = standardizer.apply(features);
  const Eigen::Index n = x.rows();

  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(n, n);
  gram.selfadjointView<Eigen::Lower>().rankUpdate(x);
  gram = gram.selfadjointView<Eigen::Lower>();
  gram.array() += 1.0;

  std::vector<std::vector<std::size_t>> orders;
  for (int e = 0; e < params.epochs; ++e) {
    Rng rng(derive_seed(params.seed, "svm-epoch", {static_cast<std::uint64_t>(e)}));
    orders.push_back(rng.permutation(static_cast<std::size_t>(n)));
  }

  const auto n_classes = static_cast<Eigen::Index>(enc.names.size());
  const double total_steps = static_cast<double>(params.epochs) * static_cast<double>(n);
  Eigen::MatrixXd coef = Eigen::MatrixXd::Zero(n_classes, n);  // c_j * y_j / (lambda T)
  for (Eigen::Index c = 0; c < n_classes; ++c) {
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) y[i] = enc.codes[i] == c ? 1.0 : -1.0;
    Eigen::VectorXd g = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(n);
    long long t = 0;
    for (const auto& order : orders) {
      for (std::size_t idx : order) {
        const auto i = static_cast<Eigen::Index>(idx);
        ++t;
        const double margin = t == 1 ? 0.0 : y[i] * g[i] / (params.lambda * double(t - 1));
        if (margin < 1.0) {
          counts[i] += 1.0;
          g.noalias() += y[i] * gram.col(i);
        }
      }
    }
    coef.row(c) = (counts.array() * y.array()).matrix().transpose() / (params.lambda * total_steps);
  }

  SvmModel model;
  model.weights = coef * x;
  model.bias = coef.rowwise().sum();
  return TrainedClassifier(enc.names, std::move(standardizer), std::move(model));
}

// ---------------------------------------------------------------------------
// kNN

TrainedClassifier fit_knn(const FeatureMatrix& features, const std::vector<IdentityId>& labels,
                          const KnnParams& params) {
  EncodedLabels enc = encode(features, labels);
  if (params.k < 1) fail(ErrorKind::InvalidArgument, "k must be >= 1");
  if (params.k > features.rows())
    fail(ErrorKind::KTooLarge, "k = " + std::to_string(params.k) + " exceeds " +
                                   std::to_string(features.rows()) + " training samples");
  Standardizer standardizer = Standardizer::fit(features);
  KnnModel model{standardizer.apply(features), enc.codes, params.k};
  return TrainedClassifier(enc.names, std::move(standardizer), std::move(model));
}

// ---------------------------------------------------------------------------
// Random forest

int DecisionTree::predict(std::span<const double> x) const {
  int node = 0;
  while (nodes[node].feature >= 0)
    node = x[nodes[node].feature] <= nodes[node].threshold ? nodes[node].left : nodes[node].right;
  return nodes[node].label;
}

namespace {

class TreeBuilder {
 public:
  // `columns` is feature-major: columns.row(f) holds feature f of every sample.
  TreeBuilder(const FeatureMatrix& columns, const std::vector<int>& codes, int n_classes,
              int min_leaf, Rng& rng)
      : columns_(columns), codes_(codes), n_classes_(n_classes), min_leaf_(min_leaf), rng_(rng) {
    const auto dim = static_cast<int>(columns.rows());
    features_.resize(dim);
    std::iota(features_.begin(), features_.end(), 0);
    mtry_ = std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(dim)))));
  }

  DecisionTree build(std::vector<int> samples) {
    DecisionTree tree;
    grow(tree, std::move(samples));
    return tree;
  }

 private:
  struct Split {
    int feature = -1;
    double threshold = 0.0;
    double impurity = std::numeric_limits<double>::infinity();
  };

  int majority(const std::vector<int>& samples) const {
    std::vector<int> counts(n_classes_, 0);
    for (int s : samples) ++counts[codes_[s]];
    return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  }

  bool pure(const std::vector<int>& samples) const {
    for (int s : samples)
      if (codes_[s] != codes_[samples.front()]) return false;
    return true;
  }

  // Weighted Gini of the best threshold on one feature: sum over children of
  // n_child - sum_c count_c^2 / n_child.
  void evaluate(int feature, const std::vector<int>& samples, Split& best) {
    order_.clear();
    for (int s : samples) order_.emplace_back(columns_(feature, s), codes_[s]);
    std::sort(order_.begin(), order_.end());
    if (order_.front().first == order_.back().first) return;

    left_.assign(n_classes_, 0);
    right_.assign(n_classes_, 0);
    for (const auto& [v, c] : order_) ++right_[c];
    double left_sq = 0.0, right_sq = 0.0;
    for (int c = 0; c < n_classes_; ++c) right_sq += double(right_[c]) * right_[c];

    const auto n = static_cast<double>(order_.size());
    for (std::size_t i = 0; i + 1 < order_.size(); ++i) {
      const int c = order_[i].second;
      left_sq += 2.0 * left_[c] + 1.0;
      right_sq -= 2.0 * right_[c] - 1.0;
      ++left_[c];
      --right_[c];
      if (order_[i].first == order_[i + 1].first) continue;
      const double nl = static_cast<double>(i + 1), nr = n - nl;
      if (nl < min_leaf_ || nr < min_leaf_) continue;
      const double impurity = (nl - left_sq / nl) + (nr - right_sq / nr);
      if (impurity < best.impurity) {
        best.impurity = impurity;
        best.feature = feature;
        best.threshold = 0.5 * (order_[i].first + order_[i + 1].first);
      }
    }
  }

  int grow(DecisionTree& tree, std::vector<int> samples) {
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    if (pure(samples) || static_cast<int>(samples.size()) < 2 * min_leaf_) {
      tree.nodes[id].label = majority(samples);
      return id;
    }
    // Draw candidate features without replacement; keep drawing past mtry
    // until some feature actually separates the node.
    Split best;
    const int dim = static_cast<int>(features_.size());
    for (int drawn = 0; drawn < dim; ++drawn) {
      const int j = drawn + static_cast<int>(rng_.below(static_cast<std::uint64_t>(dim - drawn)));
      std::swap(features_[drawn], features_[j]);
      evaluate(features_[drawn], samples, best);
      if (drawn + 1 >= mtry_ && best.feature >= 0) break;
    }
    if (best.feature < 0) {
      tree.nodes[id].label = majority(samples);
      return id;
    }
    std::vector<int> left, right;
    for (int s : samples)
      (columns_(best.feature, s) <= best.threshold ? left : right).push_back(s);
    samples.clear();
    samples.shrink_to_fit();
    tree.nodes[id].feature = best.feature;
    tree.nodes[id].threshold = best.threshold;
    const int l = grow(tree, std::move(left));
    const int r = grow(tree, std::move(right));
    tree.nodes[id].left = l;
    tree.nodes[id].right = r;
    return id;
  }

  const FeatureMatrix& columns_;
  const std::vector<int>& codes_;
  int n_classes_;
  int min_leaf_;
  Rng& rng_;
  int mtry_ = 1;
  std::vector<int> features_;
  std::vector<std::pair<double, int>> order_;
  std::vector<int> left_, right_;
};

}  // namespace

TrainedClassifier fit_forest(const FeatureMatrix& features, const std::vector<IdentityId>& labels,
                             const ForestParams& params) {
  EncodedLabels enc = encode(features, labels);
  if (enc.names.size() < 2) fail(ErrorKind::SingleClass, "random forest needs at least 2 labels");
  if (params.n_trees < 1 || params.min_leaf < 1)
    fail(ErrorKind::InvalidArgument, "n_trees and min_leaf must be >= 1");

  const FeatureMatrix columns = features.transpose();
  const int n = static_cast<int>(features.rows());
  const int n_classes = static_cast<int>(enc.names.size());
  ForestModel model;
  Eigen::MatrixXi oob_votes = Eigen::MatrixXi::Zero(n, n_classes);
  for (int t = 0; t < params.n_trees; ++t) {
    Rng rng(derive_seed(params.seed, "tree", {static_cast<std::uint64_t>(t)}));
    std::vector<int> bag(n);
    std::vector<bool> in_bag(n, false);
    for (int& s : bag) {
      s = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
      in_bag[s] = true;
    }
    TreeBuilder builder(columns, enc.codes, n_classes, params.min_leaf, rng);
    model.trees.push_back(builder.build(std::move(bag)));
    for (int s = 0; s < n; ++s) {
      if (in_bag[s]) continue;
      const double* row = features.row(s).data();
      ++oob_votes(s, model.trees.back().predict({row, static_cast<std::size_t>(features.cols())}));
    }
  }
  int oob_n = 0, oob_correct = 0;
  for (int s = 0; s < n; ++s) {
    if (oob_votes.row(s).sum() == 0) continue;
    ++oob_n;
    Eigen::VectorXd votes = oob_votes.row(s).cast<double>().transpose();
    if (argmax(votes) == enc.codes[s]) ++oob_correct;
  }
  model.oob_accuracy = oob_n > 0 ? static_cast<double>(oob_correct) / oob_n
                                 : std::numeric_limits<double>::quiet_NaN();
  // Trees split on raw values; the standardizer is kept only for its dimension.
  return TrainedClassifier(enc.names, Standardizer::identity(features.cols()), std::move(model));
}

// ---------------------------------------------------------------------------
// Prediction

namespace {

struct Outcome {
  Eigen::VectorXd scores;
  int predicted = 0;
};

Outcome predict_svm(const SvmModel& m, const FeatureVector& z) {
  Outcome o;
  o.scores = m.weights * z + m.bias;
  o.predicted = argmax(o.scores);
  return o;
}

Outcome predict_knn(const KnnModel& m, const FeatureVector& z, std::size_t n_labels) {
  const Eigen::Index n = m.exemplars.rows();
  Eigen::VectorXd dist = (m.exemplars.rowwise() - z.transpose()).rowwise().norm();
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  const auto k = static_cast<std::size_t>(m.k);
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](Eigen::Index a, Eigen::Index b) {
                      return dist[a] != dist[b] ? dist[a] < dist[b] : a < b;
                    });

  std::vector<int> votes(n_labels, 0);
  std::vector<double> dist_sum(n_labels, 0.0);
  Outcome o;
  o.scores = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_labels));
  bool exact = dist[idx[0]] == 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    const int label = m.labels[static_cast<std::size_t>(idx[j])];
    ++votes[label];
    dist_sum[label] += dist[idx[j]];
    // Inverse-distance weights; exact matches take all the weight.
    const double w = exact ? (dist[idx[j]] == 0.0 ? 1.0 : 0.0) : 1.0 / dist[idx[j]];
    o.scores[label] += w;
  }
  o.scores /= o.scores.sum();

  int best = -1;
  for (int l = 0; l < static_cast<int>(n_labels); ++l) {
    if (votes[l] == 0) continue;
    if (best < 0 || votes[l] > votes[best]) {
      best = l;
    } else if (votes[l] == votes[best]) {
      const double mean_l = dist_sum[l] / votes[l], mean_b = dist_sum[best] / votes[best];
      if (mean_l < mean_b) best = l;  // equal means keep the smaller label
    }
  }
  o.predicted = best;
  return o;
}

Outcome predict_forest(const ForestModel& m, const FeatureVector& x, std::size_t n_labels) {
  Outcome o;
  o.scores = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_labels));
  std::span<const double> row(x.data(), static_cast<std::size_t>(x.size()));
  for (const auto& tree : m.trees) o.scores[tree.predict(row)] += 1.0;
  o.scores /= static_cast<double>(m.trees.size());
  o.predicted = argmax(o.scores);
  return o;
}

}  // namespace

std::vector<PredictionRecord> predict(const TrainedClassifier& model, const FeatureMatrix& test,
                                      const std::vector<SampleRef>& refs) {
  if (test.rows() > 0 && test.cols() != model.dim())
    fail(ErrorKind::DimensionMismatch, "test features have dimension " +
                                           std::to_string(test.cols()) + ", model expects " +
                                           std::to_string(model.dim()));
  if (!refs.empty() && refs.size() != static_cast<std::size_t>(test.rows()))
    fail(ErrorKind::DimensionMismatch, "sample references and test rows differ in length");
  const std::size_t n_labels = model.labels().size();

  std::vector<PredictionRecord> out;
  out.reserve(static_cast<std::size_t>(test.rows()));
  for (Eigen::Index r = 0; r < test.rows(); ++r) {
    const FeatureVector x = test.row(r).transpose();
    Outcome o = std::visit(
        [&](const auto& m) -> Outcome {
          using T = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<T, SvmModel>)
            return predict_svm(m, model.standardizer().apply(x));
          else if constexpr (std::is_same_v<T, KnnModel>)
            return predict_knn(m, model.standardizer().apply(x), n_labels);
          else
            return predict_forest(m, x, n_labels);
        },
        model.state());
    PredictionRecord rec;
    if (!refs.empty()) {
      rec.sample = refs[static_cast<std::size_t>(r)];
      rec.true_label = rec.sample.identity;
    }
    for (std::size_t l = 0; l < n_labels; ++l)
      rec.scores[model.labels()[l]] = o.scores[static_cast<Eigen::Index>(l)];
    rec.predicted = model.labels()[static_cast<std::size_t>(o.predicted)];
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace bioanon
