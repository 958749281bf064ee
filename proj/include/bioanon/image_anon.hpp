#pragma once

#include <string>
#include <vector>

#include "bioanon/dataset.hpp"
#include "bioanon/image.hpp"

namespace bioanon {

/// Fraction of the image height at which eye-leveled crops place the eye line.
constexpr double kEyeLineFraction = 0.40;

/// Paints a black band of `strip_height_px` rows centred on the eye line.
FaceImage eye_mask(const FaceImage& img, int strip_height_px,
                   double eye_line_fraction = kEyeLineFraction);

/// Separable Gaussian blur, sigma = (kernel_size - 1) / 6, mirrored borders
/// (the edge pixel is not repeated).
FaceImage gaussian_blur(const FaceImage& img, int kernel_size);

/// k randomized transparent overlays: k key-seeded block-permuted random-color
/// overlays are averaged and alpha-blended over the image.
FaceImage krtio(const FaceImage& img, double alpha, int block_size, int k, Seed key);

/// Laplace scale used by DP pixelization: 255 * m / (b^2 * epsilon).
double dp_pix_noise_scale(double epsilon, int b, int m);

/// Per-channel b x b pixelization with Laplace noise on every block mean.
/// epsilon = +inf gives plain pixelization.
FaceImage dp_pix(const FaceImage& img, double epsilon, int b, int m, Seed seed);

/// Replaces each pixel with probability d by mid-gray (127, 127, 127).
FaceImage dp_snow(const FaceImage& img, double d, Seed seed);

/// Per-channel palette sampling: 1-D k-means into k intensity clusters, m of
/// them drawn without replacement with weight exp(epsilon * count / (2 n)), and
/// every pixel snapped to the nearest drawn centroid.
FaceImage dp_samp(const FaceImage& img, double epsilon, int k, int m, Seed seed);

/// Per-channel 1-D k-means used by dp_samp. Exposed for testing.
struct IntensityClusters {
  std::vector<double> centroids;
  std::vector<std::size_t> counts;
};
IntensityClusters cluster_intensities(const std::vector<std::uint8_t>& values, int k,
                                      int iterations = 20);

/// One mean face per background identity, computed once and shared read-only.
class KSameBackground {
 public:
  static KSameBackground from_dataset(const Dataset& background);
  KSameBackground(std::vector<IdentityId> ids, std::vector<std::vector<double>> representatives,
                  int width, int height);

  std::size_t size() const { return ids_.size(); }
  int width() const { return width_; }
  int height() const { return height_; }
  const std::vector<IdentityId>& ids() const { return ids_; }
  const std::vector<double>& representative(std::size_t i) const { return reps_[i]; }

 private:
  std::vector<IdentityId> ids_;
  std::vector<std::vector<double>> reps_;
  int width_ = 0;
  int height_ = 0;
};

/// Replaces the face with the mean of the k background representatives closest
/// to it in pixel space (ties broken by identity id).
FaceImage k_same_pixel(const FaceImage& img, int k, const KSameBackground& background);

}  // namespace bioanon
