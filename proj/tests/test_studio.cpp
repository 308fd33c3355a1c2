#include "drape/studio.hpp"

#include <doctest.h>

#include <cmath>

using namespace drape;

namespace {

const SubjectAsset& subject7() {
  static const SubjectAsset s = generate_subject(7);
  return s;
}

double peak_lag(const std::vector<Mat>& lag) {
  double peak = 0.0;
  for (const auto& m : lag)
    for (Eigen::Index k = 0; k < m.rows(); ++k) peak = std::max(peak, m.row(k).norm());
  return peak;
}

}  // namespace

TEST_CASE("zero spring gain leaves the garment on the skinned shell") {
  SubjectAsset s = subject7();
  s.garment.drive_gain = 0.0;
  s.garment.gravity_gain = 0.0;
  const Camera cam = studio_camera(32, 32);
  const Sequence seq = generate_sequence(s, MotionSpec{MotionKind::IdleSway}, 30.0, 0.5, cam);
  for (std::size_t t = 0; t < seq.poses.size(); ++t) {
    CHECK(seq.cloth_lag[t].cwiseAbs().maxCoeff() == 0.0);
    const Mat lbs = lbs_deform(s.mesh.vertices, s.shell_offsets, seq.poses[t], s.mesh);
    const RenderTargets ref = render_gt(s, lbs, cam);
    CHECK((seq.frames[t].rgb - ref.rgb).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK((seq.frames[t].depth - ref.depth).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("spring step response matches the damped oscillator") {
  GarmentParams g;
  g.gravity_gain = 0.0;
  g.drive_gain = 1.0;
  g.max_lag = 1.0;
  const Vec3 a(0.3, 0.0, 0.0);
  const double k = g.stiffness, c = g.damping;
  const double w0 = std::sqrt(k), zeta = c / (2.0 * w0), wd = w0 * std::sqrt(1.0 - zeta * zeta);
  const double ustar = -a.x() / k;
  const double dt = 1.0 / 30.0;
  SpringState s;
  double worst = 0.0;
  for (int f = 1; f <= 90; ++f) {
    spring_step(s, a, dt, g);
    const double t = f * dt;
    const double exact =
        ustar * (1.0 - std::exp(-zeta * w0 * t) * (std::cos(wd * t) + zeta / std::sqrt(1.0 - zeta * zeta) * std::sin(wd * t)));
    worst = std::max(worst, std::abs(s.u.x() - exact));
    CHECK(s.u.y() == 0.0);
  }
  CHECK(worst <= 0.02 * std::abs(ustar));
  CHECK(s.u.x() == doctest::Approx(ustar).epsilon(0.02));
}

TEST_CASE("spring lag is clamped to the bound") {
  GarmentParams g;
  g.max_lag = 0.01;
  SpringState s;
  for (int f = 0; f < 30; ++f) spring_step(s, Vec3(50.0, 0.0, 0.0), 1.0 / 30.0, g);
  CHECK(s.u.norm() <= 0.01 + 1e-15);
}

TEST_CASE("faster spin produces a larger peak lag") {
  const auto& s = subject7();
  const auto slow = motion_track(MotionSpec{MotionKind::Spin, 1.0}, 30.0, 2.0, s.mesh.joint_count());
  const auto fast = motion_track(MotionSpec{MotionKind::Spin, 2.0}, 30.0, 2.0, s.mesh.joint_count());
  CHECK(peak_lag(simulate_garment(s, fast, 30.0)) > peak_lag(simulate_garment(s, slow, 30.0)));
}

TEST_CASE("lag depends on motion history") {
  const auto& s = subject7();
  const auto walk = motion_track(MotionSpec{MotionKind::Walk}, 30.0, 1.0, s.mesh.joint_count());
  const std::size_t t = 20;
  std::vector<Pose> held = walk;
  for (std::size_t i = 0; i < t; ++i) held[i] = walk[t];
  const auto a = simulate_garment(s, walk, 30.0);
  const auto b = simulate_garment(s, held, 30.0);
  CHECK((a[t] - b[t]).cwiseAbs().maxCoeff() > 1e-4);
}

TEST_CASE("pseudo-GT noise has the requested scale and spares the silhouette") {
  const auto& s = subject7();
  const Sequence seq = generate_sequence(s, MotionSpec{MotionKind::IdleSway}, 30.0, 0.2, studio_camera(32, 32));
  const PseudoGT noisy = pseudo_gt_maps(seq, 0.05, 3);
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < seq.frames.size(); ++t) {
    sum += (noisy.normal[t] - seq.frames[t].normal).cwiseAbs().sum();
    sum += (noisy.depth[t] - seq.frames[t].depth).cwiseAbs().sum();
    count += static_cast<std::size_t>(noisy.normal[t].size() + noisy.depth[t].size());
    CHECK(noisy.silhouette[t] == seq.frames[t].silhouette);
    CHECK(noisy.seg[t] == seq.seg[t]);
  }
  const double mad = sum / static_cast<double>(count);
  CHECK(mad == doctest::Approx(0.05 * std::sqrt(2.0 / M_PI)).epsilon(0.1));
}

TEST_CASE("subjects and sequences are deterministic per seed") {
  const SubjectAsset a = generate_subject(11), b = generate_subject(11), c = generate_subject(12);
  CHECK(a.gt_colors == b.gt_colors);
  CHECK(a.shell_offsets == b.shell_offsets);
  CHECK(a.cloth_vertices == b.cloth_vertices);
  CHECK(a.gt_colors != c.gt_colors);
  const Camera cam = studio_camera(16, 16);
  const Sequence s1 = generate_sequence(a, MotionSpec{MotionKind::ArmWave}, 30.0, 0.3, cam);
  const Sequence s2 = generate_sequence(b, MotionSpec{MotionKind::ArmWave}, 30.0, 0.3, cam);
  for (std::size_t t = 0; t < s1.frames.size(); ++t) CHECK(s1.frames[t].rgb == s2.frames[t].rgb);
}

TEST_CASE("garment stands off the body") {
  for (std::uint64_t seed : {3u, 7u, 21u}) {
    const SubjectAsset s = generate_subject(seed);
    REQUIRE(!s.cloth_vertices.empty());
    double nearest = 1e9;
    for (int v : s.cloth_vertices) {
      CHECK(s.gt_labels[static_cast<std::size_t>(v)] == PartLabel::Cloth);
      nearest = std::min(nearest, s.shell_offsets.row(v).norm());
    }
    CHECK(nearest >= 0.005);
  }
}

TEST_CASE("turnaround cameras circle the body") {
  const auto& s = subject7();
  const Sequence seq = generate_sequence(s, MotionSpec{MotionKind::Walk}, 30.0, 0.1, studio_camera(16, 16));
  const Turnaround tv = turnaround_views(s, seq, 8);
  REQUIRE(tv.cameras.size() == 8);
  REQUIRE(tv.frames.size() == 8);
  for (const auto& f : tv.frames) CHECK(f.silhouette.maxCoeff() > 0.5);
}

TEST_CASE("motion names parse and unknown names are rejected") {
  for (auto k : {MotionKind::IdleSway, MotionKind::Walk, MotionKind::ArmWave, MotionKind::Spin})
    CHECK(parse_motion(to_string(k)) == k);
  CHECK_THROWS_AS(parse_motion("moonwalk"), ConfigError);
  CHECK_THROWS_AS(motion_track(MotionSpec{}, 0.0, 1.0, 22), ContractError);
}
