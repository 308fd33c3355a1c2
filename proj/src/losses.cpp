#include "drape/losses.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <tuple>

namespace drape {

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

enum class OpKind { FilterH, FilterV, Pool, DiffX, DiffY };

ad::SparseMat build_operator(OpKind kind, int w, int h) {
  std::vector<Eigen::Triplet<double>> t;
  ad::SparseMat m;
  switch (kind) {
    case OpKind::FilterH:
    case OpKind::FilterV: {
      std::array<double, kSsimWindow> g{};
      double total = 0.0;
      for (int k = 0; k < kSsimWindow; ++k) {
        const double d = k - kSsimWindow / 2;
        g[k] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
        total += g[k];
      }
      for (double& v : g) v /= total;
      const int wo = w - kSsimWindow + 1;
      if (kind == OpKind::FilterH) {
        // HW → H·wo
        m.resize(h * wo, h * w);
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < wo; ++x)
            for (int k = 0; k < kSsimWindow; ++k) t.emplace_back(y * wo + x, y * w + x + k, g[k]);
      } else {
        // H·wo → ho·wo (w is already the filtered width here)
        const int ho = h - kSsimWindow + 1;
        m.resize(ho * w, h * w);
        for (int y = 0; y < ho; ++y)
          for (int x = 0; x < w; ++x)
            for (int k = 0; k < kSsimWindow; ++k) t.emplace_back(y * w + x, (y + k) * w + x, g[k]);
      }
      break;
    }
    case OpKind::Pool: {
      const int w2 = w / 2, h2 = h / 2;
      m.resize(w2 * h2, w * h);
      for (int y = 0; y < h2; ++y)
        for (int x = 0; x < w2; ++x)
          for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b) t.emplace_back(y * w2 + x, (2 * y + a) * w + 2 * x + b, 0.25);
      break;
    }
    case OpKind::DiffX:
    case OpKind::DiffY: {
      m.resize((w - 1) * (h - 1), w * h);
      const int step = kind == OpKind::DiffX ? 1 : w;
      for (int y = 0; y < h - 1; ++y)
        for (int x = 0; x < w - 1; ++x) {
          const int r = y * (w - 1) + x;
          t.emplace_back(r, y * w + x + step, 1.0);
          t.emplace_back(r, y * w + x, -1.0);
        }
      break;
    }
  }
  m.setFromTriplets(t.begin(), t.end());
  return m;
}

const ad::SparseMat& image_operator(OpKind kind, int w, int h) {
  static std::mutex mu;
  static std::map<std::tuple<int, int, int>, std::unique_ptr<ad::SparseMat>> cache;
  std::lock_guard lock(mu);
  auto& slot = cache[{static_cast<int>(kind), w, h}];
  if (!slot) slot = std::make_unique<ad::SparseMat>(build_operator(kind, w, h));
  return *slot;
}

void require_image(const Mat& m, int w, int h, const char* what) {
  DRAPE_REQUIRE(w > 0 && h > 0 && m.rows() == static_cast<Eigen::Index>(w) * h,
                std::string(what) + ": image size does not match resolution");
}

Mat ssim_filter(const Mat& x, int w, int h) {
  const int wo = w - kSsimWindow + 1;
  return image_operator(OpKind::FilterV, wo, h) * (image_operator(OpKind::FilterH, w, h) * x);
}

ad::Var ssim_filter(ad::Var x, int w, int h) {
  const int wo = w - kSsimWindow + 1;
  return ad::spmm(image_operator(OpKind::FilterV, wo, h), ad::spmm(image_operator(OpKind::FilterH, w, h), x));
}

ad::Var zero(ad::Tape& tape) { return tape.constant(Mat::Zero(1, 1)); }

}  // namespace

void LossWeights::validate() const {
  for (double v : {normal, depth, silhouette, temporal, rgb, ssim, perceptual, cloth, reg, face_hands})
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("loss weights must be finite and non-negative");
}

double PerceptualMetric::value(const Mat& pred, const Mat& gt, int width, int height) const {
  ad::Tape tape;
  return loss(tape.constant(pred), gt, width, height).scalar();
}

ad::Var PyramidGradientMetric::loss(ad::Var pred, const Mat& gt, int width, int height) const {
  require_image(pred.value(), width, height, "perceptual");
  DRAPE_REQUIRE(gt.rows() == pred.rows() && gt.cols() == pred.cols(), "perceptual: shape mismatch");
  ad::Tape& tape = *pred.tape;
  ad::Var p = pred;
  Mat g = gt;
  int w = width, h = height;
  std::vector<ad::Var> levels;
  std::vector<double> level_weights;
  for (int level = 0; level < levels_ && w >= 2 && h >= 2; ++level) {
    if (level > 0) {
      const auto& pool = image_operator(OpKind::Pool, w, h);
      p = ad::spmm(pool, p);
      g = pool * g;
      w /= 2;
      h /= 2;
      if (w < 2 || h < 2) break;
    }
    const auto& dx = image_operator(OpKind::DiffX, w, h);
    const auto& dy = image_operator(OpKind::DiffY, w, h);
    const double e2 = eps_ * eps_;
    ad::Var mag_p = ad::sqrt(ad::add_scalar(ad::add(ad::square(ad::spmm(dx, p)), ad::square(ad::spmm(dy, p))), e2));
    const Mat gx = dx * g, gy = dy * g;
    const Mat mag_g = (gx.array().square() + gy.array().square() + e2).sqrt().matrix();
    levels.push_back(ad::mean(ad::abs(ad::sub(mag_p, tape.constant(mag_g)))));
    level_weights.push_back(1.0);
  }
  if (levels.empty()) return zero(tape);
  for (double& lw : level_weights) lw /= static_cast<double>(levels.size());
  return ad::weighted_sum(levels, level_weights);
}

ad::Var l1_loss(ad::Var pred, const Mat& gt) {
  DRAPE_REQUIRE(pred.rows() == gt.rows() && pred.cols() == gt.cols(), "l1_loss: shape mismatch");
  return ad::mean(ad::abs(ad::sub(pred, pred.tape->constant(gt))));
}

ad::Var ssim_index(ad::Var pred, const Mat& gt, int width, int height) {
  require_image(pred.value(), width, height, "ssim");
  DRAPE_REQUIRE(gt.rows() == pred.rows() && gt.cols() == pred.cols(), "ssim: shape mismatch");
  DRAPE_REQUIRE(width >= kSsimWindow && height >= kSsimWindow, "ssim: image smaller than the window");
  ad::Tape& tape = *pred.tape;
  const Mat mu_y = ssim_filter(gt, width, height);
  const Mat syy = ssim_filter(Mat(gt.cwiseProduct(gt)), width, height);
  ad::Var mu_x = ssim_filter(pred, width, height);
  ad::Var sxx = ssim_filter(ad::square(pred), width, height);
  ad::Var sxy = ssim_filter(ad::mul(pred, tape.constant(gt)), width, height);
  ad::Var my = tape.constant(mu_y);
  ad::Var mxy = ad::mul(mu_x, my);
  ad::Var mxx = ad::square(mu_x);
  const Mat myy = mu_y.cwiseProduct(mu_y);
  ad::Var a1 = ad::add_scalar(ad::scale(mxy, 2.0), kSsimC1);
  ad::Var a2 = ad::add_scalar(ad::scale(ad::sub(sxy, mxy), 2.0), kSsimC2);
  ad::Var b1 = ad::add(mxx, tape.constant(Mat(myy.array() + kSsimC1)));
  ad::Var b2 = ad::add(ad::sub(sxx, mxx), tape.constant(Mat((syy - myy).array() + kSsimC2)));
  return ad::mean(ad::div(ad::mul(a1, a2), ad::mul(b1, b2)));
}

double ssim(const Mat& a, const Mat& b, int width, int height) {
  ad::Tape tape;
  return ssim_index(tape.constant(a), b, width, height).scalar();
}

double psnr(const Mat& a, const Mat& b, double cap_db) {
  DRAPE_REQUIRE(a.rows() == b.rows() && a.cols() == b.cols(), "psnr: shape mismatch");
  const double mse = (a - b).array().square().mean();
  if (mse <= 0.0) return cap_db;
  return std::min(cap_db, -10.0 * std::log10(mse));
}

RenderingTerms rendering_loss(ad::Var pred_rgb, const Mat& gt_rgb, int width, int height,
                              const PerceptualMetric& metric) {
  DRAPE_REQUIRE(pred_rgb.rows() == gt_rgb.rows() && pred_rgb.cols() == gt_rgb.cols(),
                "rendering_loss: resolution mismatch");
  RenderingTerms t;
  t.l1 = l1_loss(pred_rgb, gt_rgb);
  t.ssim = ad::add_scalar(ad::scale(ssim_index(pred_rgb, gt_rgb, width, height), -1.0), 1.0);
  t.perceptual = metric.loss(pred_rgb, gt_rgb, width, height);
  return t;
}

ad::Var cloth_loss(ad::Var cloth_rgb, const Mat& gt_rgb, const Vec& mask) {
  DRAPE_REQUIRE(cloth_rgb.rows() == gt_rgb.rows() && cloth_rgb.cols() == gt_rgb.cols() &&
                    mask.size() == gt_rgb.rows(),
                "cloth_loss: shape mismatch");
  if (mask.sum() <= 0.0) {
    spdlog::warn("cloth_loss: empty cloth mask, term set to 0");
    return zero(*cloth_rgb.tape);
  }
  Mat target = Mat::Ones(gt_rgb.rows(), gt_rgb.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i)
    if (mask[i] > 0.5) target.row(i) = gt_rgb.row(i);
  return l1_loss(cloth_rgb, target);
}

GeometryTerms geometry_loss(ad::Var normal_pred, const Mat& normal_gt, ad::Var depth_pred, const Mat& depth_gt,
                            ad::Var sil_pred, const Mat& sil_gt, const LossWeights& weights) {
  const Eigen::Index n = sil_gt.rows();
  DRAPE_REQUIRE(normal_pred.rows() == n && normal_pred.cols() == 3 && normal_gt.rows() == n &&
                    normal_gt.cols() == 3 && depth_pred.rows() == n && depth_gt.rows() == n &&
                    sil_pred.rows() == n && depth_pred.cols() == 1 && sil_pred.cols() == 1 && sil_gt.cols() == 1 &&
                    depth_gt.cols() == 1,
                "geometry_loss: shape mismatch");
  ad::Tape& tape = *sil_pred.tape;
  std::vector<int> joint;
  for (Eigen::Index i = 0; i < n; ++i)
    if (sil_pred.value()(i, 0) > 0.5 && sil_gt(i, 0) > 0.5) joint.push_back(static_cast<int>(i));

  GeometryTerms t;
  if (joint.empty()) {
    t.normal = zero(tape);
    t.depth = zero(tape);
  } else {
    const double eps = 1e-12;
    ad::Var np = ad::add_scalar(ad::scale(ad::gather_rows(normal_pred, joint), 2.0), -1.0);
    ad::Var norm = ad::sqrt(ad::add_scalar(ad::sum_cols(ad::square(np)), eps));
    ad::Var unit = ad::mul_col(np, ad::div(tape.constant(Mat::Ones(norm.rows(), 1)), norm));
    Mat ng(static_cast<Eigen::Index>(joint.size()), 3);
    for (std::size_t k = 0; k < joint.size(); ++k) {
      const Eigen::RowVector3d v = 2.0 * normal_gt.row(joint[k]).array() - 1.0;
      ng.row(static_cast<Eigen::Index>(k)) = v / std::sqrt(v.squaredNorm() + eps);
    }
    ad::Var cos = ad::sum_cols(ad::mul(unit, tape.constant(ng)));
    t.normal = ad::add_scalar(ad::scale(ad::mean(cos), -1.0), 1.0);
    Mat dg(static_cast<Eigen::Index>(joint.size()), 1);
    for (std::size_t k = 0; k < joint.size(); ++k) dg(static_cast<Eigen::Index>(k), 0) = depth_gt(joint[k], 0);
    t.depth = ad::mean(ad::abs(ad::sub(ad::gather_rows(depth_pred, joint), tape.constant(dg))));
  }
  t.silhouette = ad::mean(ad::square(ad::sub(sil_pred, tape.constant(sil_gt))));
  ad::Var parts[] = {t.normal, t.depth, t.silhouette};
  const double w[] = {weights.normal, weights.depth, weights.silhouette};
  t.total = ad::weighted_sum(parts, w);
  return t;
}

ad::Var temporal_loss(const std::vector<ad::Var>& offsets) {
  DRAPE_REQUIRE(!offsets.empty(), "temporal_loss: no frames");
  if (offsets.size() < 2) {
    spdlog::warn("temporal_loss: fewer than two frames, term set to 0");
    return zero(*offsets.front().tape);
  }
  std::vector<ad::Var> gaps;
  for (std::size_t t = 0; t + 1 < offsets.size(); ++t) {
    DRAPE_REQUIRE(offsets[t].rows() == offsets[t + 1].rows() && offsets[t].cols() == offsets[t + 1].cols(),
                  "temporal_loss: frame shape mismatch");
    const double inv_n = 1.0 / static_cast<double>(offsets[t].rows());
    gaps.push_back(ad::scale(ad::sum(ad::square(ad::sub(offsets[t + 1], offsets[t]))), inv_n));
  }
  const std::vector<double> ones(gaps.size(), 1.0);
  return ad::weighted_sum(gaps, ones);
}

RegularizerTerms offset_regularizer(const std::vector<ad::Var>& offsets) {
  DRAPE_REQUIRE(!offsets.empty(), "offset_regularizer: no frames");
  std::vector<ad::Var> pos, col, scl;
  for (const ad::Var& o : offsets) {
    DRAPE_REQUIRE(o.cols() == 7, "offset_regularizer: expected N×7 offsets");
    const double inv_n = 1.0 / static_cast<double>(o.rows());
    pos.push_back(ad::scale(ad::sum(ad::square(ad::slice_cols(o, 0, 3))), inv_n));
    col.push_back(ad::scale(ad::sum(ad::square(ad::slice_cols(o, 3, 3))), inv_n));
    scl.push_back(ad::scale(ad::sum(ad::square(ad::slice_cols(o, 6, 1))), inv_n));
  }
  const std::vector<double> w(offsets.size(), 1.0 / static_cast<double>(offsets.size()));
  RegularizerTerms r;
  r.position = ad::weighted_sum(pos, w);
  r.color = ad::weighted_sum(col, w);
  r.scale = ad::weighted_sum(scl, w);
  ad::Var parts[] = {r.position, r.color, r.scale};
  const double ones[] = {1.0, 1.0, 1.0};
  r.total = ad::weighted_sum(parts, ones);
  return r;
}

ad::Var position_loss(ad::Var positions, const Mat& gt) {
  DRAPE_REQUIRE(positions.rows() == gt.rows() && positions.cols() == gt.cols(), "position_loss: shape mismatch");
  if (gt.rows() == 0) return zero(*positions.tape);
  return ad::scale(ad::sum(ad::square(ad::sub(positions, positions.tape->constant(gt)))),
                   1.0 / static_cast<double>(gt.rows()));
}

double LossReport::value(const std::string& name) const {
  for (const Term& t : terms)
    if (t.name == name) return t.value;
  throw ContractError("loss report has no term " + name);
}

void Objective::add(const std::string& name, ad::Var term, double weight) {
  DRAPE_REQUIRE(term.rows() == 1 && term.cols() == 1, "objective: term " + name + " is not a scalar");
  DRAPE_REQUIRE(weight >= 0.0, "objective: negative weight for " + name);
  terms_.emplace_back(name, term);
  weights_.push_back(weight);
}

ad::Var Objective::total(ad::Tape& tape) const {
  for (const auto& [name, v] : terms_)
    if (!std::isfinite(v.scalar())) throw TrainingAbort("non-finite loss term: " + name);
  if (terms_.empty()) return zero(tape);
  std::vector<ad::Var> vars;
  for (const auto& [name, v] : terms_) vars.push_back(v);
  return ad::weighted_sum(vars, weights_);
}

LossReport Objective::report() const {
  LossReport r;
  for (std::size_t i = 0; i < terms_.size(); ++i) {
    r.terms.push_back({terms_[i].first, terms_[i].second.scalar(), weights_[i]});
    r.total += weights_[i] * terms_[i].second.scalar();
  }
  return r;
}

void append_loss_csv(const std::filesystem::path& path, int step, const LossReport& report) {
  const bool fresh = !std::filesystem::exists(path);
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("cannot open loss log " + path.string());
  out.precision(10);
  if (fresh) {
    out << "step";
    for (const auto& t : report.terms) out << ',' << t.name;
    out << ",total\n";
  }
  out << step;
  for (const auto& t : report.terms) out << ',' << t.value;
  out << ',' << report.total << '\n';
}

}  // namespace drape
