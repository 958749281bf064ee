#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bioanon/dataset.hpp"
#include "bioanon/features.hpp"

namespace bioanon {

enum class SelectionStrategy { Random, Classification, Metadata, Distinctive, Center };

std::string to_string(SelectionStrategy strategy);
SelectionStrategy parse_selection(const std::string& text);

/// Feature vectors grouped by identity.
using IdentityFeatures = std::map<IdentityId, std::vector<FeatureVector>>;

struct IdentityScore {
  double genuine = 0.0;   // largest distance of an own vector to the own mean
  double imposter = 0.0;  // smallest distance of the own mean to another identity's vector
  FeatureVector mean_feature;
};

using IdentityScores = std::map<IdentityId, IdentityScore>;

/// The first n of a seeded permutation of the sorted ids. Subsets for smaller n
/// are prefixes of those for larger n under the same (seed, repeat_index).
std::vector<IdentityId> select_random(const std::vector<IdentityId>& ids, std::size_t n,
                                      std::size_t repeat_index, Seed seed);

/// Greedy spread over min-max normalized metadata: start from the most distant
/// pair, then keep adding the identity farthest from the selected average.
std::vector<IdentityId> select_metadata(const DatasetManifest& manifest, std::size_t n);

IdentityScores compute_identity_scores(const IdentityFeatures& features);

/// Top n by (imposter - genuine) / 2.
std::vector<IdentityId> select_distinctive(const IdentityFeatures& features, std::size_t n);

/// Greedy spread over identity mean vectors, like select_metadata.
std::vector<IdentityId> select_center(const IdentityFeatures& features, std::size_t n);

/// Top n identities by accuracy. Identities missing from `accuracy` count as 0.
std::vector<IdentityId> select_top_accuracy(const std::vector<IdentityId>& ids,
                                            const std::map<IdentityId, double>& accuracy,
                                            std::size_t n);

/// Greedy farthest-from-average selection shared by Metadata and Center.
/// `points` must be sorted by id; ties go to the earlier entry.
std::vector<IdentityId> greedy_spread(
    const std::vector<std::pair<IdentityId, Eigen::VectorXd>>& points, std::size_t n);

nlohmann::json selection_to_json(const std::vector<IdentityId>& ids);
void write_selection(const std::filesystem::path& path, const std::vector<IdentityId>& ids);
std::vector<IdentityId> read_selection(const std::filesystem::path& path);

}  // namespace bioanon
