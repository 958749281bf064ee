#include <doctest.h>

#include <Eigen/Eigenvalues>

#include "bioanon/dataset.hpp"
#include "bioanon/features.hpp"
#include "test_support.hpp"

using namespace bioanon;

namespace {

GaitSequence walk(Seed seed = 2) {
  return std::get<GaitSequence>(synthesize_gait(2, 2, seed).samples[0][0]);
}

FeatureMatrix random_rows(int n, int d, Seed seed) {
  Rng rng(seed);
  FeatureMatrix m(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = rng.normal() * (1.0 + j % 5);
  return m;
}

double reconstruction_error(const FeatureSpaceModel& model, const FeatureMatrix& rows) {
  double err = 0;
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    FeatureVector x = rows.row(i).transpose();
    err += (model.reconstruct(model.project(x)) - x).squaredNorm();
  }
  return err;
}

}  // namespace

TEST_SUITE("features") {

TEST_CASE("flatten layout") {
  auto seq = walk();
  auto f = gait_flatten(seq);
  CHECK(f.size() == 15600);
  for (int j = 0; j < 156; ++j) CHECK(f[j] == seq.frames(0, j));
  CHECK(f[156 * 37 + 5] == seq.frames(37, 5));
  CHECK(gait_flatten(GaitSequence{}).isZero(0.0));
}

TEST_CASE("simple features shape") {
  auto f = gait_simple(walk());
  CHECK(f.values.size() == 780);
  CHECK(f.rank == 4);
  for (int a = 0; a < 4; ++a)
    CHECK(f.values.segment(a * 156, 156).norm() == doctest::Approx(1.0));
}

TEST_CASE("simple features of a constant sequence") {
  GaitSequence seq;
  for (int j = 0; j < 156; ++j) seq.frames.col(j).setConstant(j * 0.5 - 3);
  auto f = gait_simple(seq);
  CHECK(f.rank == 0);
  CHECK(f.degenerate());
  CHECK(f.values.head(4 * 156).isZero(0.0));
  for (int j = 0; j < 156; ++j) CHECK(f.values[4 * 156 + j] == doctest::Approx(j * 0.5 - 3));
}

TEST_CASE("simple features of a mirrored sequence negate the mean") {
  auto seq = walk();
  GaitSequence mirror;
  mirror.frames = -seq.frames;
  auto a = gait_simple(seq), b = gait_simple(mirror);
  CHECK((a.values.tail(156) + b.values.tail(156)).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("two-point PCA lies along the difference") {
  FeatureMatrix rows(2, 3);
  rows << 1, 2, 3, 3, 2, -1;
  auto model = fit_feature_space(rows, 1, false);
  REQUIRE(model.p() == 1);
  Eigen::RowVectorXd dir = rows.row(1) - rows.row(0);
  dir.normalize();
  CHECK(std::abs(model.pca.axes.row(0).dot(dir)) == doctest::Approx(1.0));
}

TEST_CASE("PCA basis is orthonormal and sign canonical") {
  auto rows = random_rows(30, 12, 1);
  auto model = fit_feature_space(rows, 8);
  Eigen::MatrixXd gram = model.pca.axes * model.pca.axes.transpose();
  CHECK((gram - Eigen::MatrixXd::Identity(8, 8)).cwiseAbs().maxCoeff() <= 1e-6);
  for (int a = 0; a < 8; ++a) {
    Eigen::Index idx;
    model.pca.axes.row(a).cwiseAbs().maxCoeff(&idx);
    CHECK(model.pca.axes(a, idx) > 0);
  }
  for (int a = 1; a < 8; ++a)
    CHECK(model.pca.explained_variance[a] <= model.pca.explained_variance[a - 1] + 1e-12);
}

TEST_CASE("PCA matches the covariance eigenvectors") {
  auto rows = random_rows(40, 6, 3);
  auto model = fit_feature_space(rows, 3, false);
  FeatureMatrix centered = rows.rowwise() - rows.colwise().mean();
  Eigen::MatrixXd cov = centered.transpose() * centered;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  for (int a = 0; a < 3; ++a) {
    Eigen::VectorXd v = es.eigenvectors().col(5 - a);
    CHECK(std::abs(model.pca.axes.row(a).dot(v)) == doctest::Approx(1.0).epsilon(1e-8));
  }
}

TEST_CASE("reconstruction error does not grow with p") {
  auto rows = random_rows(25, 30, 4);
  double e1 = reconstruction_error(fit_feature_space(rows, 1), rows);
  double e5 = reconstruction_error(fit_feature_space(rows, 5), rows);
  double e20 = reconstruction_error(fit_feature_space(rows, 20), rows);
  CHECK(e5 <= e1);
  CHECK(e20 <= e5);
}

TEST_CASE("face feature space") {
  Dataset ds = synthesize_faces(2, 8, 5);
  std::vector<FaceImage> imgs;
  for (const auto& per_id : ds.samples)
    for (const auto& s : per_id) imgs.push_back(std::get<FaceImage>(s));
  const int p = static_cast<int>(imgs.size()) - 1;
  auto model = fit_feature_space(imgs, p);
  CHECK(model.p() == p);

  FeatureVector x = face_preprocess(imgs[3]);
  CHECK(x.size() == 4096);
  FeatureVector back = model.reconstruct(project_face(imgs[3], model));
  CHECK((back - x).norm() / x.norm() <= 1e-6);

  FeatureMatrix all(imgs.size(), 4096);
  for (std::size_t i = 0; i < imgs.size(); ++i) all.row(i) = face_preprocess(imgs[i]).transpose();
  FeatureVector mean = all.colwise().mean().transpose();
  FeatureVector z = model.project(mean);
  CHECK(z.size() == p);
  CHECK(z.cwiseAbs().maxCoeff() <= 1e-6 * mean.norm());
}

TEST_CASE("face preprocess is luma averaged to 64x64") {
  auto img = testing::constant_image(224, 224, 100, 50, 200);
  auto x = face_preprocess(img);
  CHECK(x.size() == 4096);
  CHECK(x[0] == doctest::Approx(0.299 * 100 + 0.587 * 50 + 0.114 * 200));
  CHECK(x.maxCoeff() == doctest::Approx(x.minCoeff()));
}

TEST_CASE("default components") {
  CHECK(default_components(1000) == 150);
  CHECK(default_components(20) == 19);
}

TEST_CASE("feature space json round trip and cache key") {
  auto model = fit_feature_space(random_rows(10, 5, 8), 3);
  auto back = feature_space_from_json(feature_space_to_json(model));
  CHECK(back.pca.axes.isApprox(model.pca.axes));
  CHECK(back.standardizer.mean.isApprox(model.standardizer.mean));

  testing::TempDir dir("space");
  save_feature_space(dir.path() / "m.json", model, "k1");
  FeatureSpaceModel loaded;
  CHECK(load_feature_space(dir.path() / "m.json", "k1", loaded));
  CHECK(loaded.p() == 3);
  CHECK(!load_feature_space(dir.path() / "m.json", "k2", loaded));
  CHECK(!load_feature_space(dir.path() / "none.json", "k1", loaded));
}

TEST_CASE("standardizer") {
  FeatureMatrix rows(3, 2);
  rows << 1, 5, 2, 5, 3, 5;
  auto s = Standardizer::fit(rows);
  CHECK(s.scale[1] == 1.0);
  auto z = s.apply(rows);
  CHECK(z.col(0).mean() == doctest::Approx(0.0));
  CHECK(z.col(1).isZero(0.0));
}

}  // TEST_SUITE
