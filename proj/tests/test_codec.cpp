#include "drape/codec.hpp"

#include <doctest.h>

#include <random>

using namespace drape;

namespace {

// Axis pairs (horizontal, vertical) of the three planes: yz→(z,y), xz→(x,z), xy→(x,y).
constexpr int kAxes[3][2] = {{2, 1}, {0, 2}, {0, 1}};

// Channel 0 holds the world coordinate of the plane's horizontal axis at each
// node, channel 1 the vertical one; bilinear sampling reproduces both exactly.
Triplane coordinate_field(const TriplaneConfig& cfg) {
  Triplane t;
  t.config = cfg;
  t.planes = Mat::Zero(3 * cfg.channels, static_cast<Eigen::Index>(cfg.height) * cfg.width);
  for (int p = 0; p < 3; ++p) {
    const int ah = kAxes[p][0], av = kAxes[p][1];
    for (int y = 0; y < cfg.height; ++y)
      for (int x = 0; x < cfg.width; ++x) {
        const Eigen::Index col = static_cast<Eigen::Index>(y) * cfg.width + x;
        t.planes(p * cfg.channels, col) = cfg.box_min[ah] + (cfg.box_max[ah] - cfg.box_min[ah]) * x / (cfg.width - 1);
        t.planes(p * cfg.channels + 1, col) =
            cfg.box_min[av] + (cfg.box_max[av] - cfg.box_min[av]) * y / (cfg.height - 1);
      }
  }
  return t;
}

TriplaneConfig small_grid() {
  TriplaneConfig c;
  c.channels = 2;
  c.height = 9;
  c.width = 7;
  return c;
}

}  // namespace

TEST_CASE("default codec matches the documented dimensions") {
  const CodecConfig c;
  CHECK(c.triplane.channels == 32);
  CHECK(c.triplane.height == 128);
  CHECK(c.triplane.width == 128);
  CHECK(c.feature_dim() == 96);
}

TEST_CASE("bilinear sampling reproduces an affine field inside the box") {
  const TriplaneConfig cfg = small_grid();
  const Triplane t = coordinate_field(cfg);
  std::mt19937_64 rng(5);
  Mat pts(50, 3);
  for (Eigen::Index i = 0; i < pts.rows(); ++i)
    for (int a = 0; a < 3; ++a)
      pts(i, a) = std::uniform_real_distribution<double>(cfg.box_min[a], cfg.box_max[a])(rng);
  const Mat f = sample_features(t, pts);
  REQUIRE(f.cols() == 6);
  for (Eigen::Index i = 0; i < pts.rows(); ++i)
    for (int p = 0; p < 3; ++p) {
      CHECK(f(i, 2 * p) == doctest::Approx(pts(i, kAxes[p][0])).epsilon(1e-12));
      CHECK(f(i, 2 * p + 1) == doctest::Approx(pts(i, kAxes[p][1])).epsilon(1e-12));
    }
}

TEST_CASE("points outside the box are clamped to the border") {
  const TriplaneConfig cfg = small_grid();
  const Triplane t = coordinate_field(cfg);
  Mat pts(1, 3);
  pts << 5.0, -5.0, 0.1;
  const Mat f = sample_features(t, pts);
  CHECK(f(0, 4) == doctest::Approx(cfg.box_max[0]));   // plane xy, horizontal x
  CHECK(f(0, 5) == doctest::Approx(cfg.box_min[1]));   // plane xy, vertical y
  CHECK(f(0, 0) == doctest::Approx(0.1));              // plane yz, horizontal z
}

TEST_CASE("the differentiable sampler agrees with the value path") {
  const TriplaneConfig cfg = small_grid();
  const Triplane t = coordinate_field(cfg);
  Mat pts(3, 3);
  pts << 0.1, 0.2, -0.1, -0.5, -0.9, 0.25, 0.0, 0.0, 0.0;
  ad::Tape tape;
  const ad::Var f = triplane_sample_op(tape.variable(t.planes), tape.variable(pts), cfg);
  CHECK((f.value() - sample_features(t, pts)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("upsampling keeps constant maps constant and doubles each side") {
  ad::Tape t;
  const ad::Var up = upsample2x_op(t.constant(Mat::Constant(2, 12, 0.7)), 3, 4);
  CHECK(up.rows() == 2);
  CHECK(up.cols() == 48);
  CHECK((up.value().array() - 0.7).abs().maxCoeff() < 1e-15);
}

TEST_CASE("a centered delta kernel makes the depthwise conv an identity plus bias") {
  ad::Tape t;
  Mat maps(2, 20);
  for (Eigen::Index i = 0; i < maps.size(); ++i) maps.data()[i] = 0.1 * static_cast<double>(i);
  Mat k = Mat::Zero(2, 9);
  k.col(4).setOnes();
  Mat b(2, 1);
  b << 0.5, -1.0;
  const ad::Var y = depthwise3x3_op(t.constant(maps), t.constant(k), t.constant(b), 4, 5);
  CHECK((y.value() - (maps.colwise() + b.col(0))).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("static avatar attributes respect their ranges") {
  CodecConfig c;
  c.triplane.channels = 4;
  c.triplane.height = 16;
  c.triplane.width = 16;
  c.latent_dim = 8;
  const AvatarCodec codec(c);
  Parameters params;
  std::mt19937_64 rng(3);
  codec.init_parameters(params, rng);
  const Mat z = codec.init_latent(rng);
  const SkinnedMesh mesh = build_canonical_body(BodyConfig{});
  const GaussianSet g = codec.build_static_avatar(params, z, mesh);
  CHECK(g.size() == mesh.vertex_count());
  CHECK((g.positions - mesh.vertices).cwiseAbs().maxCoeff() <= c.max_displacement);
  CHECK(g.colors.minCoeff() >= 0.0);
  CHECK(g.colors.maxCoeff() <= 1.0);
  CHECK(g.scales.minCoeff() >= c.min_scale);
  const Triplane t = codec.decode_triplane(params, z);
  CHECK(t.planes.rows() == 3 * 4);
  CHECK(t.planes.cols() == 16 * 16);
}

TEST_CASE("initialization is deterministic per seed") {
  CodecConfig c;
  c.triplane.channels = 2;
  c.triplane.height = 8;
  c.triplane.width = 8;
  const AvatarCodec codec(c);
  Parameters a, b;
  std::mt19937_64 r1(9), r2(9);
  codec.init_parameters(a, r1);
  codec.init_parameters(b, r2);
  for (const auto& [name, m] : a.values()) CHECK(m == b.at(name));
}

TEST_CASE("invalid codec configs are rejected") {
  CodecConfig c;
  c.triplane.channels = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CodecConfig d;
  d.triplane.height = 30;  // not divisible by 4
  CHECK_THROWS_AS(d.validate(), ConfigError);
}
