#include "bioanon/features.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <fstream>

#include "bioanon/error.hpp"

namespace bioanon {

FeatureVector gait_flatten(const GaitSequence& seq) {
  validate_gait(seq);
  // PoseMatrix is row-major, so its storage is already frame after frame.
  return Eigen::Map<const FeatureVector>(seq.frames.data(), seq.frames.size());
}

void canonicalize_sign(Eigen::Ref<Eigen::RowVectorXd> axis) {
  if (axis.size() == 0) return;
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < axis.size(); ++i)
    if (std::abs(axis[i]) > std::abs(axis[best])) best = i;
  if (axis[best] < 0) axis = -axis;
}

GaitSimpleFeatures gait_simple(const GaitSequence& seq) {
  validate_gait(seq);
  const Eigen::MatrixXd poses = seq.frames;
  const Eigen::RowVectorXd mean = poses.colwise().mean();
  const Eigen::MatrixXd centered = poses.rowwise() - mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered / double(poses.rows() - 1);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::VectorXd& values = eig.eigenvalues();  // ascending
  const double top = values[values.size() - 1];
  const double tol = 1e-9 + 1e-12 * std::abs(top);

  GaitSimpleFeatures out;
  out.values = FeatureVector::Zero(kSimpleDim);
  for (int a = 0; a < kSimpleAxes; ++a) {
    const Eigen::Index col = values.size() - 1 - a;
    if (values[col] <= tol) break;
    Eigen::RowVectorXd axis = eig.eigenvectors().col(col).transpose();
    canonicalize_sign(axis);
    out.values.segment(a * kGaitColumns, kGaitColumns) = axis.transpose();
    ++out.rank;
  }
  out.values.tail(kGaitColumns) = mean.transpose();
  return out;
}

// ---------------------------------------------------------------------------

Standardizer Standardizer::fit(const FeatureMatrix& rows) {
  if (rows.rows() == 0) fail(ErrorKind::TooFewSamples, "cannot standardize zero rows");
  Standardizer s;
  s.mean = rows.colwise().mean().transpose();
  s.scale.resize(rows.cols());
  for (Eigen::Index j = 0; j < rows.cols(); ++j) {
    const double var = (rows.col(j).array() - s.mean[j]).square().mean();
    const double sd = std::sqrt(var);
    s.scale[j] = sd > 1e-12 ? sd : 1.0;
  }
  return s;
}

Standardizer Standardizer::identity(Eigen::Index dim) {
  return {Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Ones(dim)};
}

FeatureMatrix Standardizer::apply(const FeatureMatrix& rows) const {
  if (rows.cols() != dim()) fail(ErrorKind::DimensionMismatch, "standardizer input dimension");
  return ((rows.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array())
      .matrix();
}

FeatureVector Standardizer::apply(const FeatureVector& v) const {
  if (v.size() != dim()) fail(ErrorKind::DimensionMismatch, "standardizer input dimension");
  return ((v - mean).array() / scale.array()).matrix();
}

namespace {

// Modified Gram-Schmidt over the rows, completing any vanishing row from the
// standard basis so the result is always orthonormal.
void orthonormalize_rows(FeatureMatrix& axes) {
  Eigen::Index next_basis = 0;
  for (Eigen::Index i = 0; i < axes.rows(); ++i) {
    for (int attempt = 0;; ++attempt) {
      for (Eigen::Index j = 0; j < i; ++j) axes.row(i) -= axes.row(i).dot(axes.row(j)) * axes.row(j);
      const double norm = axes.row(i).norm();
      if (norm > 1e-8) {
        axes.row(i) /= norm;
        break;
      }
      if (next_basis >= axes.cols()) fail(ErrorKind::InvalidArgument, "cannot complete basis");
      axes.row(i).setZero();
      axes(i, next_basis++) = 1.0;
    }
  }
}

}  // namespace

PcaBasis fit_pca(const FeatureMatrix& centered, int p) {
  const Eigen::Index n = centered.rows(), d = centered.cols();
  if (n < 2) fail(ErrorKind::TooFewSamples, "PCA needs at least 2 samples");
  if (p < 1 || p > std::min<Eigen::Index>(n - 1, d))
    fail(ErrorKind::InvalidArgument, "number of components must be in [1, min(n - 1, dim)], got " +
                                         std::to_string(p));

  PcaBasis basis;
  basis.axes.resize(p, d);
  basis.explained_variance.resize(p);
  if (n < d) {
    // X = U S V^T: eigenvectors of X X^T give U and S^2, then V = X^T U / S.
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(n, n);
    gram.selfadjointView<Eigen::Lower>().rankUpdate(centered);
    gram = gram.selfadjointView<Eigen::Lower>();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
    const double top = std::max(eig.eigenvalues()[n - 1], 0.0);
    for (int a = 0; a < p; ++a) {
      const double lambda = std::max(eig.eigenvalues()[n - 1 - a], 0.0);
      basis.explained_variance[a] = lambda / double(n - 1);
      if (lambda > 1e-20 * std::max(top, 1e-300)) {
        basis.axes.row(a) = (centered.transpose() * eig.eigenvectors().col(n - 1 - a)).transpose() /
                            std::sqrt(lambda);
      } else {
        basis.axes.row(a).setZero();
      }
    }
  } else {
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
    cov.selfadjointView<Eigen::Lower>().rankUpdate(centered.transpose());
    cov = cov.selfadjointView<Eigen::Lower>();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    for (int a = 0; a < p; ++a) {
      basis.explained_variance[a] = std::max(eig.eigenvalues()[d - 1 - a], 0.0) / double(n - 1);
      basis.axes.row(a) = eig.eigenvectors().col(d - 1 - a).transpose();
    }
  }
  orthonormalize_rows(basis.axes);
  for (int a = 0; a < p; ++a) {
    Eigen::RowVectorXd axis = basis.axes.row(a);
    canonicalize_sign(axis);
    basis.axes.row(a) = axis;
  }
  return basis;
}

FeatureVector FeatureSpaceModel::project(const FeatureVector& input) const {
  if (!fitted()) fail(ErrorKind::ModelNotFitted, "feature space has not been fitted");
  return pca.axes * standardizer.apply(input);
}

FeatureMatrix FeatureSpaceModel::project(const FeatureMatrix& inputs) const {
  if (!fitted()) fail(ErrorKind::ModelNotFitted, "feature space has not been fitted");
  return standardizer.apply(inputs) * pca.axes.transpose();
}

FeatureVector FeatureSpaceModel::reconstruct(const FeatureVector& coords) const {
  if (!fitted()) fail(ErrorKind::ModelNotFitted, "feature space has not been fitted");
  FeatureVector z = pca.axes.transpose() * coords;
  return (z.array() * standardizer.scale.array()).matrix() + standardizer.mean;
}

FeatureSpaceModel fit_feature_space(const FeatureMatrix& rows, int p, bool standardize) {
  if (rows.rows() < 2) fail(ErrorKind::TooFewSamples, "feature space needs at least 2 samples");
  FeatureSpaceModel model;
  if (standardize) {
    model.standardizer = Standardizer::fit(rows);
  } else {
    model.standardizer = Standardizer::identity(rows.cols());
    model.standardizer.mean = rows.colwise().mean().transpose();
  }
  model.pca = fit_pca(model.standardizer.apply(rows), p);
  return model;
}

// ---------------------------------------------------------------------------
// Faces

namespace {

// Row i holds the fraction of each source pixel that falls into output pixel i.
Eigen::MatrixXd area_weights(int src, int dst) {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(dst, src);
  const double ratio = static_cast<double>(src) / dst;
  for (int i = 0; i < dst; ++i) {
    const double lo = i * ratio, hi = (i + 1) * ratio;
    for (int s = static_cast<int>(std::floor(lo)); s < src && s < hi; ++s) {
      const double overlap = std::min<double>(hi, s + 1) - std::max<double>(lo, s);
      if (overlap > 0) w(i, s) = overlap / ratio;
    }
  }
  return w;
}

}  // namespace

FeatureVector face_preprocess(const FaceImage& img) {
  if (img.width < 1 || img.height < 1) fail(ErrorKind::InvalidArgument, "empty image");
  Eigen::MatrixXd luma(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      luma(y, x) = 0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) + 0.114 * img.at(x, y, 2);
  const Eigen::MatrixXd small = area_weights(img.height, kFaceWorkingSize) * luma *
                                area_weights(img.width, kFaceWorkingSize).transpose();
  FeatureVector out(kFaceFeatureDim);
  for (int y = 0; y < kFaceWorkingSize; ++y)
    for (int x = 0; x < kFaceWorkingSize; ++x) out[y * kFaceWorkingSize + x] = small(y, x);
  return out;
}

FeatureSpaceModel fit_feature_space(std::span<const FaceImage> images, int p) {
  if (images.size() < 2) fail(ErrorKind::TooFewSamples, "feature space needs at least 2 images");
  FeatureMatrix rows(static_cast<Eigen::Index>(images.size()), kFaceFeatureDim);
  for (std::size_t i = 0; i < images.size(); ++i)
    rows.row(static_cast<Eigen::Index>(i)) = face_preprocess(images[i]).transpose();
  return fit_feature_space(rows, p, true);
}

FeatureVector project_face(const FaceImage& img, const FeatureSpaceModel& model) {
  if (!model.fitted()) fail(ErrorKind::ModelNotFitted, "feature space has not been fitted");
  return model.project(face_preprocess(img));
}

int default_components(std::size_t n) {
  return static_cast<int>(std::min<std::size_t>(150, n > 0 ? n - 1 : 0));
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

std::vector<double> to_vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd from_vec(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

nlohmann::json feature_space_to_json(const FeatureSpaceModel& model) {
  std::vector<std::vector<double>> axes;
  for (Eigen::Index a = 0; a < model.pca.axes.rows(); ++a) {
    Eigen::VectorXd row = model.pca.axes.row(a).transpose();
    axes.push_back(to_vec(row));
  }
  return {{"mean", to_vec(model.standardizer.mean)},
          {"scale", to_vec(model.standardizer.scale)},
          {"axes", axes},
          {"explained_variance", to_vec(model.pca.explained_variance)}};
}

FeatureSpaceModel feature_space_from_json(const nlohmann::json& doc) {
  FeatureSpaceModel model;
  try {
    model.standardizer.mean = from_vec(doc.at("mean").get<std::vector<double>>());
    model.standardizer.scale = from_vec(doc.at("scale").get<std::vector<double>>());
    auto axes = doc.at("axes").get<std::vector<std::vector<double>>>();
    model.pca.explained_variance = from_vec(doc.at("explained_variance").get<std::vector<double>>());
    model.pca.axes.resize(static_cast<Eigen::Index>(axes.size()), model.standardizer.dim());
    for (std::size_t a = 0; a < axes.size(); ++a) {
      if (static_cast<Eigen::Index>(axes[a].size()) != model.standardizer.dim())
        fail(ErrorKind::ParseError, "feature space axis has the wrong dimension");
      model.pca.axes.row(static_cast<Eigen::Index>(a)) = from_vec(axes[a]).transpose();
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::ParseError, std::string("feature space: ") + e.what());
  }
  return model;
}

void save_feature_space(const std::filesystem::path& path, const FeatureSpaceModel& model,
                        const std::string& cache_key) {
  std::filesystem::create_directories(path.parent_path());
  nlohmann::json doc = feature_space_to_json(model);
  doc["cache_key"] = cache_key;
  std::ofstream out(path);
  if (!out) fail(ErrorKind::IoError, "cannot write " + path.string());
  out << doc.dump();
}

bool load_feature_space(const std::filesystem::path& path, const std::string& cache_key,
                        FeatureSpaceModel& model) {
  std::ifstream in(path);
  if (!in) return false;
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error&) {
    return false;
  }
  if (doc.value("cache_key", std::string()) != cache_key) return false;
  model = feature_space_from_json(doc);
  return true;
}

}  // namespace bioanon
