#include "bioanon/selection.hpp"

#include <algorithm>
#include <fstream>
#include <limits>

#include "bioanon/error.hpp"

namespace bioanon {

std::string to_string(SelectionStrategy strategy) {
  switch (strategy) {
    case SelectionStrategy::Random: return "random";
    case SelectionStrategy::Classification: return "classification";
    case SelectionStrategy::Metadata: return "metadata";
    case SelectionStrategy::Distinctive: return "distinctive";
    case SelectionStrategy::Center: return "center";
  }
  return "?";
}

SelectionStrategy parse_selection(const std::string& text) {
  for (auto s : {SelectionStrategy::Random, SelectionStrategy::Classification,
                 SelectionStrategy::Metadata, SelectionStrategy::Distinctive,
                 SelectionStrategy::Center})
    if (text == to_string(s)) return s;
  fail(ErrorKind::ParseError, "unknown selection strategy '" + text + "'");
}

namespace {

void check_n(std::size_t n, std::size_t available) {
  if (n > available)
    fail(ErrorKind::NTooLarge, "cannot select " + std::to_string(n) + " of " +
                                   std::to_string(available) + " identities");
}

void check_features(const IdentityFeatures& features) {
  if (features.size() < 2) fail(ErrorKind::SingleIdentity, "need at least 2 identities");
  Eigen::Index dim = -1;
  for (const auto& [id, vectors] : features) {
    if (vectors.empty()) fail(ErrorKind::TooFewSamples, "identity '" + id + "' has no features");
    for (const auto& v : vectors) {
      if (dim < 0) dim = v.size();
      if (v.size() != dim)
        fail(ErrorKind::DimensionMismatch, "identity '" + id + "' has a feature of dimension " +
                                               std::to_string(v.size()));
      if (!v.allFinite()) fail(ErrorKind::InvalidArgument, "non-finite feature for '" + id + "'");
    }
  }
}

FeatureVector mean_of(const std::vector<FeatureVector>& vectors) {
  FeatureVector m = FeatureVector::Zero(vectors.front().size());
  for (const auto& v : vectors) m += v;
  return m / static_cast<double>(vectors.size());
}

}  // namespace

std::vector<IdentityId> select_random(const std::vector<IdentityId>& ids, std::size_t n,
                                      std::size_t repeat_index, Seed seed) {
  check_n(n, ids.size());
  std::vector<IdentityId> sorted = ids;
  std::sort(sorted.begin(), sorted.end());
  Rng rng(derive_seed(seed, "select-random", {static_cast<std::uint64_t>(repeat_index)}));
  rng.shuffle(sorted);
  sorted.resize(n);
  return sorted;
}

std::vector<IdentityId> greedy_spread(
    const std::vector<std::pair<IdentityId, Eigen::VectorXd>>& points, std::size_t n) {
  check_n(n, points.size());
  if (n == 0) return {};
  if (n == 1) return {points.front().first};

  std::size_t best_a = 0, best_b = 1;
  double best = -1.0;
  for (std::size_t a = 0; a < points.size(); ++a)
    for (std::size_t b = a + 1; b < points.size(); ++b) {
      const double d = (points[a].second - points[b].second).norm();
      if (d > best) {
        best = d;
        best_a = a;
        best_b = b;
      }
    }

  std::vector<bool> taken(points.size(), false);
  taken[best_a] = taken[best_b] = true;
  std::vector<IdentityId> out{points[best_a].first, points[best_b].first};
  Eigen::VectorXd sum = points[best_a].second + points[best_b].second;
  while (out.size() < n) {
    const Eigen::VectorXd centre = sum / static_cast<double>(out.size());
    std::size_t pick = points.size();
    double far = -1.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (taken[i]) continue;
      const double d = (points[i].second - centre).norm();
      if (d > far) {
        far = d;
        pick = i;
      }
    }
    taken[pick] = true;
    out.push_back(points[pick].first);
    sum += points[pick].second;
  }
  return out;
}

std::vector<IdentityId> select_metadata(const DatasetManifest& manifest, std::size_t n) {
  if (n < 2) fail(ErrorKind::InvalidArgument, "metadata selection needs n >= 2");
  check_n(n, manifest.identities.size());
  if (manifest.identities.empty() || manifest.identities.front().metadata.empty())
    fail(ErrorKind::MissingMetadata, "dataset has no metadata attributes");

  std::vector<std::string> keys;
  for (const auto& [key, value] : manifest.identities.front().metadata) keys.push_back(key);
  std::vector<const IdentityRecord*> records;
  for (const auto& rec : manifest.identities) {
    for (const auto& key : keys)
      if (!rec.metadata.count(key))
        fail(ErrorKind::MissingMetadata, "identity '" + rec.id + "' lacks '" + key + "'");
    if (rec.metadata.size() != keys.size())
      fail(ErrorKind::MissingMetadata, "identity '" + rec.id + "' has extra metadata attributes");
    records.push_back(&rec);
  }
  std::sort(records.begin(), records.end(),
            [](const IdentityRecord* a, const IdentityRecord* b) { return a->id < b->id; });

  const auto k = static_cast<Eigen::Index>(keys.size());
  Eigen::VectorXd lo = Eigen::VectorXd::Constant(k, std::numeric_limits<double>::infinity());
  Eigen::VectorXd hi = -lo;
  for (const auto* rec : records)
    for (Eigen::Index j = 0; j < k; ++j) {
      lo[j] = std::min(lo[j], rec->metadata.at(keys[j]));
      hi[j] = std::max(hi[j], rec->metadata.at(keys[j]));
    }
  std::vector<std::pair<IdentityId, Eigen::VectorXd>> points;
  for (const auto* rec : records) {
    Eigen::VectorXd v(k);
    for (Eigen::Index j = 0; j < k; ++j) {
      const double range = hi[j] - lo[j];
      v[j] = range > 0.0 ? (rec->metadata.at(keys[j]) - lo[j]) / range : 0.0;
    }
    points.emplace_back(rec->id, std::move(v));
  }
  return greedy_spread(points, n);
}

IdentityScores compute_identity_scores(const IdentityFeatures& features) {
  check_features(features);
  IdentityScores scores;
  for (const auto& [id, vectors] : features) {
    IdentityScore s;
    s.mean_feature = mean_of(vectors);
    for (const auto& v : vectors) s.genuine = std::max(s.genuine, (v - s.mean_feature).norm());
    scores.emplace(id, std::move(s));
  }
  for (auto& [id, s] : scores) {
    double nearest = std::numeric_limits<double>::infinity();
    for (const auto& [other, vectors] : features) {
      if (other == id) continue;
      for (const auto& v : vectors) nearest = std::min(nearest, (v - s.mean_feature).norm());
    }
    s.imposter = nearest;
  }
  return scores;
}

std::vector<IdentityId> select_distinctive(const IdentityFeatures& features, std::size_t n) {
  check_n(n, features.size());
  const IdentityScores scores = compute_identity_scores(features);
  std::vector<std::pair<double, IdentityId>> ranked;
  for (const auto& [id, s] : scores) ranked.emplace_back((s.imposter - s.genuine) / 2.0, id);
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<IdentityId> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(ranked[i].second);
  return out;
}

std::vector<IdentityId> select_center(const IdentityFeatures& features, std::size_t n) {
  if (n < 2) fail(ErrorKind::InvalidArgument, "center selection needs n >= 2");
  check_features(features);
  std::vector<std::pair<IdentityId, Eigen::VectorXd>> means;
  for (const auto& [id, vectors] : features) means.emplace_back(id, mean_of(vectors));
  return greedy_spread(means, n);
}

std::vector<IdentityId> select_top_accuracy(const std::vector<IdentityId>& ids,
                                            const std::map<IdentityId, double>& accuracy,
                                            std::size_t n) {
  check_n(n, ids.size());
  std::vector<std::pair<double, IdentityId>> ranked;
  for (const auto& id : ids) {
    auto it = accuracy.find(id);
    ranked.emplace_back(it == accuracy.end() ? 0.0 : it->second, id);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<IdentityId> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(ranked[i].second);
  return out;
}

nlohmann::json selection_to_json(const std::vector<IdentityId>& ids) {
  return nlohmann::json(ids);
}

void write_selection(const std::filesystem::path& path, const std::vector<IdentityId>& ids) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) fail(ErrorKind::IoError, "cannot write " + path.string());
  out << selection_to_json(ids).dump(2) << '\n';
}

std::vector<IdentityId> read_selection(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::MissingFile, path.string() + " not found");
  try {
    return nlohmann::json::parse(in).get<std::vector<IdentityId>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::ParseError, path.string() + ": " + e.what());
  }
}

}  // namespace bioanon
