#include "drape/losses.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

using namespace drape;

namespace {

Mat random_image(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Mat m(static_cast<Eigen::Index>(w) * h, 3);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

// Direct windowed SSIM: normalized 11-tap Gaussian (σ 1.5), valid windows, per channel.
double reference_ssim(const Mat& a, const Mat& b, int w, int h) {
  constexpr int K = 11;
  double g[K], gs = 0.0;
  for (int k = 0; k < K; ++k) gs += g[k] = std::exp(-(k - 5) * (k - 5) / (2.0 * 1.5 * 1.5));
  for (double& v : g) v /= gs;
  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0.0;
  int count = 0;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y + K <= h; ++y)
      for (int x = 0; x + K <= w; ++x) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int j = 0; j < K; ++j)
          for (int i = 0; i < K; ++i) {
            const double wt = g[i] * g[j];
            const Eigen::Index p = static_cast<Eigen::Index>(y + j) * w + x + i;
            ma += wt * a(p, c);
            mb += wt * b(p, c);
            saa += wt * a(p, c) * a(p, c);
            sbb += wt * b(p, c) * b(p, c);
            sab += wt * a(p, c) * b(p, c);
          }
        const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
        total += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++count;
      }
  return total / count;
}

ad::Var col(ad::Tape& t, const Mat& m) { return t.variable(m); }

}  // namespace

TEST_CASE("PSNR of a constant 0.1 error is exactly 20 dB") {
  const Mat gt = random_image(16, 16, 1) * 0.8;
  CHECK(psnr(gt.array() + 0.1, gt) == doctest::Approx(20.0).epsilon(1e-12));
}

TEST_CASE("identical images hit the PSNR cap and SSIM 1") {
  const Mat a = random_image(16, 16, 2);
  CHECK(psnr(a, a) == 99.0);
  CHECK(ssim(a, a, 16, 16) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("SSIM matches a direct windowed computation") {
  const Mat a = random_image(20, 17, 3), b = random_image(20, 17, 4);
  const Mat c = 0.7 * a + 0.3 * b;
  CHECK(ssim(a, b, 20, 17) == doctest::Approx(reference_ssim(a, b, 20, 17)).epsilon(1e-10));
  CHECK(ssim(a, c, 20, 17) == doctest::Approx(reference_ssim(a, c, 20, 17)).epsilon(1e-10));
}

TEST_CASE("geometry loss carries the normal, depth and silhouette weights 5, 1, 2") {
  const LossWeights w;
  CHECK(w.normal == 5.0);
  CHECK(w.depth == 1.0);
  CHECK(w.silhouette == 2.0);
  CHECK(w.temporal == 0.1);

  ad::Tape t;
  Mat n_pred(2, 3), n_gt(2, 3), d_pred(2, 1), d_gt(2, 1), s_pred(2, 1), s_gt(2, 1);
  n_pred << 0.5, 0.5, 1.0, 1.0, 0.5, 0.5;  // +z, +x
  n_gt << 0.5, 0.5, 1.0, 0.5, 0.5, 1.0;    // +z, +z
  d_pred << 2.0, 3.0;
  d_gt << 2.5, 3.0;
  s_pred << 0.9, 0.8;
  s_gt << 1.0, 1.0;
  const GeometryTerms g = geometry_loss(col(t, n_pred), n_gt, col(t, d_pred), d_gt, col(t, s_pred), s_gt);
  CHECK(g.normal.scalar() == doctest::Approx(0.5));            // 1 − mean(1, 0)
  CHECK(g.depth.scalar() == doctest::Approx(0.25));            // mean |Δd|
  CHECK(g.silhouette.scalar() == doctest::Approx(0.025));      // mean (0.01, 0.04)
  CHECK(g.total.scalar() == doctest::Approx(5 * 0.5 + 1 * 0.25 + 2 * 0.025));
}

TEST_CASE("temporal loss is zero on constant offsets and sums squared gaps") {
  ad::Tape t;
  const Mat a = random_image(2, 2, 5).leftCols(3);
  const std::vector<ad::Var> same{t.constant(a), t.constant(a), t.constant(a)};
  CHECK(temporal_loss(same).scalar() == 0.0);
  Mat b = a;
  b(0, 0) += 0.2;
  const std::vector<ad::Var> step{t.constant(a), t.constant(b), t.constant(b)};
  CHECK(temporal_loss(step).scalar() == doctest::Approx(0.04 / 4.0));
}

TEST_CASE("cloth loss compares against white outside the mask") {
  ad::Tape t;
  Mat gt = Mat::Constant(4, 3, 0.2);
  Mat pred = Mat::Ones(4, 3);
  Vec mask(4);
  mask << 1, 0, 0, 0;
  CHECK(cloth_loss(t.constant(pred), gt, mask).scalar() == doctest::Approx(0.8 / 4.0));
}

TEST_CASE("L1 and position losses match their definitions") {
  ad::Tape t;
  Mat a(2, 3), b(2, 3);
  a << 0, 0, 0, 1, 1, 1;
  b << 0, 0, 1, 1, 1, 3;
  CHECK(l1_loss(t.constant(a), b).scalar() == doctest::Approx(3.0 / 6.0));
  CHECK(position_loss(t.constant(a), b).scalar() == doctest::Approx((1.0 + 4.0) / 2.0));
}

TEST_CASE("the perceptual proxy vanishes on identical images and grows with blur") {
  const Mat a = random_image(32, 32, 6);
  Mat blur = a;
  for (int y = 0; y < 32; ++y)
    for (int x = 1; x < 32; ++x) blur.row(y * 32 + x) = 0.5 * (a.row(y * 32 + x) + a.row(y * 32 + x - 1));
  const PyramidGradientMetric m;
  CHECK(m.value(a, a, 32, 32) == 0.0);
  CHECK(m.value(blur, a, 32, 32) > 0.01);
}

TEST_CASE("a non-finite term aborts training") {
  ad::Tape t;
  Objective o;
  o.add("ok", t.constant(Mat::Constant(1, 1, 1.0)), 1.0);
  o.add("bad", t.constant(Mat::Constant(1, 1, std::numeric_limits<double>::quiet_NaN())), 1.0);
  CHECK_THROWS_AS(o.total(t), TrainingAbort);
}

TEST_CASE("objective total and report agree") {
  ad::Tape t;
  Objective o;
  o.add("a", t.constant(Mat::Constant(1, 1, 2.0)), 0.5);
  o.add("b", t.constant(Mat::Constant(1, 1, 3.0)), 2.0);
  CHECK(o.total(t).scalar() == 7.0);
  const LossReport r = o.report();
  CHECK(r.total == 7.0);
  CHECK(r.value("b") == 3.0);
}

TEST_CASE("loss CSV gets a header once") {
  const auto path = std::filesystem::temp_directory_path() / "drape_test_losses.csv";
  std::filesystem::remove(path);
  LossReport r;
  r.terms = {{"rgb", 0.5, 0.8}};
  r.total = 0.4;
  append_loss_csv(path, 1, r);
  append_loss_csv(path, 2, r);
  std::ifstream in(path);
  std::string line;
  int lines = 0, headers = 0;
  while (std::getline(in, line)) {
    ++lines;
    headers += line.rfind("step", 0) == 0;
  }
  CHECK(lines == 3);
  CHECK(headers == 1);
  std::filesystem::remove(path);
}

TEST_CASE("negative weights are rejected") {
  LossWeights w;
  w.rgb = -1.0;
  CHECK_THROWS_AS(w.validate(), ConfigError);
}
