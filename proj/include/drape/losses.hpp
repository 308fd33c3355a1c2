#pragma once

// Training objectives over packed render outputs and offset sequences.
// Images are HW×C row-major pixel matrices.

#include "drape/autodiff.hpp"

#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace drape {

struct TrainingAbort : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct LossWeights {
  double normal = 5.0;
  double depth = 1.0;
  double silhouette = 2.0;
  double temporal = 0.1;
  double rgb = 0.8;
  double ssim = 0.2;
  double perceptual = 0.1;
  double cloth = 0.5;
  double reg = 0.01;
  double face_hands = 1.0;

  void validate() const;
};

/// Perceptual distance between a rendered and a reference RGB image.
class PerceptualMetric {
 public:
  virtual ~PerceptualMetric() = default;
  virtual std::string name() const = 0;
  virtual ad::Var loss(ad::Var pred, const Mat& gt, int width, int height) const = 0;
  double value(const Mat& pred, const Mat& gt, int width, int height) const;
};

/// Mean L1 distance between gradient magnitudes over a 2×2 average-pooled pyramid.
class PyramidGradientMetric final : public PerceptualMetric {
 public:
  explicit PyramidGradientMetric(int levels = 3, double eps = 1e-3) : levels_(levels), eps_(eps) {}
  std::string name() const override { return "pyramid-gradient"; }
  ad::Var loss(ad::Var pred, const Mat& gt, int width, int height) const override;

 private:
  int levels_;
  double eps_;
};

ad::Var l1_loss(ad::Var pred, const Mat& gt);

/// Mean SSIM (11×11 Gaussian window, σ = 1.5, valid region, per channel).
ad::Var ssim_index(ad::Var pred, const Mat& gt, int width, int height);
double ssim(const Mat& a, const Mat& b, int width, int height);
double psnr(const Mat& a, const Mat& b, double cap_db = 99.0);

struct RenderingTerms {
  ad::Var l1, ssim, perceptual;  // ssim holds 1 − SSIM
};
RenderingTerms rendering_loss(ad::Var pred_rgb, const Mat& gt_rgb, int width, int height,
                              const PerceptualMetric& metric);

/// L1 between the cloth-only render and the reference masked to cloth pixels
/// (white elsewhere). `mask` is HW with values in {0, 1}.
ad::Var cloth_loss(ad::Var cloth_rgb, const Mat& gt_rgb, const Vec& mask);

struct GeometryTerms {
  ad::Var normal, depth, silhouette, total;
};
/// Normals are (n+1)/2 encoded HW×3; depth and silhouette are HW×1.
GeometryTerms geometry_loss(ad::Var normal_pred, const Mat& normal_gt, ad::Var depth_pred, const Mat& depth_gt,
                            ad::Var sil_pred, const Mat& sil_gt, const LossWeights& weights = {});

/// Σ over gaps of point-mean squared differences of consecutive N×7 offsets
/// (unweighted; multiply by LossWeights::temporal).
ad::Var temporal_loss(const std::vector<ad::Var>& offsets);

struct RegularizerTerms {
  ad::Var position, color, scale, total;
};
/// Point-mean squared offsets, averaged over frames.
RegularizerTerms offset_regularizer(const std::vector<ad::Var>& offsets);

/// Mean squared distance between rows of `positions` and `gt`.
ad::Var position_loss(ad::Var positions, const Mat& gt);

struct LossReport {
  struct Term {
    std::string name;
    double value = 0.0;
    double weight = 0.0;
  };
  std::vector<Term> terms;
  double total = 0.0;

  double value(const std::string& name) const;
};

/// Accumulates weighted terms; total() throws TrainingAbort on non-finite terms.
class Objective {
 public:
  void add(const std::string& name, ad::Var term, double weight);
  ad::Var total(ad::Tape& tape) const;
  LossReport report() const;

 private:
  std::vector<std::pair<std::string, ad::Var>> terms_;
  std::vector<double> weights_;
};

/// Appends one CSV row (writes the header first when the file is new).
void append_loss_csv(const std::filesystem::path& path, int step, const LossReport& report);

}  // namespace drape
