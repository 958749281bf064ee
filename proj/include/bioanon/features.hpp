#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <span>

#include <nlohmann/json.hpp>

#include "bioanon/dataset.hpp"
#include "bioanon/image.hpp"

namespace bioanon {

using FeatureVector = Eigen::VectorXd;
/// One sample per row.
using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr int kFlattenDim = kGaitFrames * kGaitColumns;  // 15600
constexpr int kSimpleAxes = 4;
constexpr int kSimpleDim = (kSimpleAxes + 1) * kGaitColumns;  // 780

/// Row-major flattening of all poses.
FeatureVector gait_flatten(const GaitSequence& seq);

struct GaitSimpleFeatures {
  FeatureVector values;  // 4 unit principal axes of the poses, then the mean pose
  int rank = 0;          // axes actually found; missing ones are zero
  bool degenerate() const { return rank < kSimpleAxes; }
};

/// PCA over the 100 poses of one walk: the four leading principal axes (unit
/// length, largest-magnitude loading positive) concatenated with the mean pose.
GaitSimpleFeatures gait_simple(const GaitSequence& seq);

/// Per-dimension z-scoring. Dimensions with zero spread get scale 1.
struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;

  static Standardizer fit(const FeatureMatrix& rows);
  static Standardizer identity(Eigen::Index dim);
  FeatureMatrix apply(const FeatureMatrix& rows) const;
  FeatureVector apply(const FeatureVector& v) const;
  Eigen::Index dim() const { return mean.size(); }
};

struct PcaBasis {
  FeatureMatrix axes;                  // p x dim, orthonormal rows
  Eigen::VectorXd explained_variance;  // non-increasing
};

/// PCA of already-centered rows via the singular value decomposition of the
/// data matrix (computed from the smaller of the two Gram matrices). Each axis
/// is signed so its largest-magnitude loading is positive.
PcaBasis fit_pca(const FeatureMatrix& centered, int p);

/// Flips `axis` so its largest-magnitude entry is positive.
void canonicalize_sign(Eigen::Ref<Eigen::RowVectorXd> axis);

struct FeatureSpaceModel {
  Standardizer standardizer;
  PcaBasis pca;

  bool fitted() const { return pca.axes.rows() > 0; }
  int p() const { return static_cast<int>(pca.axes.rows()); }
  Eigen::Index input_dim() const { return standardizer.dim(); }

  /// Standardize then project.
  FeatureVector project(const FeatureVector& input) const;
  FeatureMatrix project(const FeatureMatrix& inputs) const;
  /// Maps projection coordinates back to the (unstandardized) input space.
  FeatureVector reconstruct(const FeatureVector& coords) const;
};

/// Fits standardizer (optional) and PCA on raw feature rows.
FeatureSpaceModel fit_feature_space(const FeatureMatrix& rows, int p, bool standardize = true);

constexpr int kFaceWorkingSize = 64;
constexpr int kFaceFeatureDim = kFaceWorkingSize * kFaceWorkingSize;

/// Luma (0.299 R + 0.587 G + 0.114 B), area-averaged down to 64 x 64, flattened.
FeatureVector face_preprocess(const FaceImage& img);

FeatureSpaceModel fit_feature_space(std::span<const FaceImage> images, int p);
FeatureVector project_face(const FaceImage& img, const FeatureSpaceModel& model);

/// Default number of components for a fit on n samples: min(150, n - 1).
int default_components(std::size_t n);

nlohmann::json feature_space_to_json(const FeatureSpaceModel& model);
FeatureSpaceModel feature_space_from_json(const nlohmann::json& doc);
void save_feature_space(const std::filesystem::path& path, const FeatureSpaceModel& model,
                        const std::string& cache_key);
/// Returns false if the file is absent or was written for a different key.
bool load_feature_space(const std::filesystem::path& path, const std::string& cache_key,
                        FeatureSpaceModel& model);

}  // namespace bioanon
