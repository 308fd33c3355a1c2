#include "drape/studio.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace drape {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kGravity = 9.81;

// Template joint ids (left is +x).
enum : int {
  kPelvis = 0, kLHip = 1, kRHip = 2, kSpine1 = 3, kLKnee = 4, kRKnee = 5, kSpine2 = 6,
  kHead = 15, kLShoulder = 16, kRShoulder = 17, kLElbow = 18, kRElbow = 19
};

Vec3 to_axis_angle(const Mat3& r) {
  const Eigen::AngleAxisd aa(r);
  return aa.angle() * aa.axis();
}

Mat3 rot_x(double a) { return Eigen::AngleAxisd(a, Vec3::UnitX()).toRotationMatrix(); }
Mat3 rot_y(double a) { return Eigen::AngleAxisd(a, Vec3::UnitY()).toRotationMatrix(); }
Mat3 rot_z(double a) { return Eigen::AngleAxisd(a, Vec3::UnitZ()).toRotationMatrix(); }

void set_joint(Pose& pose, int j, const Mat3& r) {
  if (j < pose.joint_rotations.rows()) pose.joint_rotations.row(j) = to_axis_angle(r).transpose();
}

// Arms lowered from the T-pose with a swing about the world x axis.
void lower_arms(Pose& pose, double swing_l, double swing_r, double elbow_l, double elbow_r) {
  constexpr double kLower = 1.25;
  set_joint(pose, kLShoulder, rot_x(swing_l) * rot_z(-kLower));
  set_joint(pose, kRShoulder, rot_x(swing_r) * rot_z(kLower));
  set_joint(pose, kLElbow, rot_y(-elbow_l));
  set_joint(pose, kRElbow, rot_y(elbow_r));
}

Vec3 lerp(const Vec3& a, const Vec3& b, double t) { return a + t * (b - a); }

Vec3 color_from(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  return Vec3(u(rng), u(rng), u(rng));
}

}  // namespace

MotionKind parse_motion(const std::string& name) {
  if (name == "idle-sway") return MotionKind::IdleSway;
  if (name == "walk") return MotionKind::Walk;
  if (name == "arm-wave") return MotionKind::ArmWave;
  if (name == "spin") return MotionKind::Spin;
  throw ConfigError("unknown motion '" + name + "' (expected idle-sway, walk, arm-wave or spin)");
}

std::string to_string(MotionKind kind) {
  switch (kind) {
    case MotionKind::IdleSway: return "idle-sway";
    case MotionKind::Walk: return "walk";
    case MotionKind::ArmWave: return "arm-wave";
    case MotionKind::Spin: return "spin";
  }
  return "?";
}

void spring_step(SpringState& s, const Vec3& anchor_accel, double dt, const GarmentParams& g) {
  DRAPE_REQUIRE(g.substeps >= 1 && dt > 0.0, "spring_step: substeps >= 1 and dt > 0 required");
  const double h = dt / g.substeps;
  const Vec3 pull(0.0, -kGravity * g.gravity_gain, 0.0);
  for (int k = 0; k < g.substeps; ++k) {
    const Vec3 acc = -g.stiffness * s.u - g.damping * s.v + pull - g.drive_gain * anchor_accel;
    s.v += h * acc;
    s.u += h * s.v;
  }
  const double n = s.u.norm();
  if (n > g.max_lag) s.u *= g.max_lag / n;
}

SubjectAsset generate_subject(std::uint64_t seed, const BodyConfig& body) {
  SubjectAsset s;
  s.seed = seed;
  s.mesh = build_canonical_body(body);
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + 17);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };

  const auto& V = s.mesh.vertices;
  const auto N = V.rows();
  const auto& hint = s.mesh.part_hint;

  // Garment: tunic (chest to mid-thigh) or skirt (waist to above the knee).
  const bool skirt = u01(rng) < 0.5;
  const double y_top = skirt ? uni(-0.02, 0.04) : uni(0.30, 0.36);
  const double y_hem = skirt ? uni(-0.40, -0.30) : uni(-0.30, -0.22);
  const double base = uni(0.008, 0.012);
  const double flare = uni(0.006, 0.012);
  const double y_flare = y_top - 0.35 * (y_top - y_hem);

  const Mat normals = vertex_normals(V, s.mesh.faces);
  s.shell_offsets = Mat::Zero(N, 3);
  std::vector<bool> in_garment(static_cast<std::size_t>(N), false);
  for (Eigen::Index i = 0; i < N; ++i) {
    const double y = V(i, 1);
    const bool leg = hint[static_cast<std::size_t>(i)] == PartHint::Limb && y < 0.0;
    const bool torso = hint[static_cast<std::size_t>(i)] == PartHint::Torso;
    if (!(leg || torso) || y > y_top || y < y_hem) continue;
    in_garment[static_cast<std::size_t>(i)] = true;
    s.cloth_vertices.push_back(static_cast<int>(i));
    const double f = std::clamp((y_flare - y) / (y_flare - y_hem), 0.0, 1.0);
    s.shell_offsets.row(i) = (base + flare * f * f) * normals.row(i);
  }

  s.gt_labels.resize(static_cast<std::size_t>(N));
  for (Eigen::Index i = 0; i < N; ++i) {
    const auto h = hint[static_cast<std::size_t>(i)];
    PartLabel l = PartLabel::Body;
    if (h == PartHint::Head) l = PartLabel::Face;
    else if (h == PartHint::HandL || h == PartHint::HandR) l = PartLabel::Hands;
    else if (in_garment[static_cast<std::size_t>(i)]) l = PartLabel::Cloth;
    s.gt_labels[static_cast<std::size_t>(i)] = l;
  }

  // Procedural colors: skin tone, hair cap, garment stripes, top and trousers.
  static const Vec3 kSkin[] = {Vec3(0.95, 0.80, 0.69), Vec3(0.86, 0.67, 0.53), Vec3(0.68, 0.49, 0.36),
                               Vec3(0.45, 0.31, 0.23)};
  const Vec3 skin = kSkin[static_cast<int>(u01(rng) * 4) % 4] + color_from(rng, -0.03, 0.03);
  const Vec3 hair = color_from(rng, 0.05, 0.35);
  const Vec3 cloth_a = color_from(rng, 0.1, 0.9);
  const Vec3 cloth_b = Vec3::Ones() - cloth_a + color_from(rng, -0.1, 0.1);
  const Vec3 top = color_from(rng, 0.2, 0.8);
  const Vec3 trousers = color_from(rng, 0.1, 0.4);
  const double period = uni(0.10, 0.16);
  const double phase = uni(0.0, kTwoPi);
  const double twist = uni(1.0, 3.0);
  const double head_top = V.col(1).maxCoeff();

  s.gt_colors.resize(N, 3);
  for (Eigen::Index i = 0; i < N; ++i) {
    const Vec3 p = V.row(i).transpose();
    Vec3 c;
    switch (s.gt_labels[static_cast<std::size_t>(i)]) {
      case PartLabel::Face:
        c = (p.y() > head_top - 0.07 || p.z() < -0.04) ? hair : skin;
        break;
      case PartLabel::Hands:
        c = skin;
        break;
      case PartLabel::Cloth: {
        const double ang = std::atan2(p.z(), p.x());
        const double t = 0.5 + 0.5 * std::sin(kTwoPi * p.y() / period + twist * ang + phase);
        c = lerp(cloth_a, cloth_b, t);
        break;
      }
      case PartLabel::Body:
        if (hint[static_cast<std::size_t>(i)] == PartHint::Torso) c = top;
        else if (p.y() < 0.0) c = trousers;
        else c = skin;
        break;
    }
    s.gt_colors.row(i) = c.cwiseMax(0.0).cwiseMin(1.0).transpose();
  }

  // Isotropic scale proportional to the local edge length.
  Vec sum = Vec::Zero(N), cnt = Vec::Zero(N);
  for (const auto& e : s.mesh.edges()) {
    const double len = (V.row(e[0]) - V.row(e[1])).norm();
    sum(e[0]) += len;
    sum(e[1]) += len;
    cnt(e[0]) += 1;
    cnt(e[1]) += 1;
  }
  s.gt_scales = Vec(N);
  for (Eigen::Index i = 0; i < N; ++i) s.gt_scales(i) = 0.6 * (cnt(i) > 0 ? sum(i) / cnt(i) : 0.02);

  const double freq = uni(1.6, 2.2);
  const double zeta = uni(0.2, 0.35);
  s.garment.stiffness = (kTwoPi * freq) * (kTwoPi * freq);
  s.garment.damping = 2.0 * zeta * kTwoPi * freq;
  s.garment.gravity_gain = 0.1;
  s.garment.drive_gain = 1.0;
  return s;
}

std::vector<Pose> motion_track(const MotionSpec& spec, double fps, double duration, int joints) {
  DRAPE_REQUIRE(fps > 0.0 && duration > 0.0, "motion_track: fps and duration must be positive");
  DRAPE_REQUIRE(joints >= 1 && joints <= 22, "motion_track: 1..22 joints");
  DRAPE_REQUIRE(spec.speed > 0.0, "motion_track: speed must be positive");
  const int frames = static_cast<int>(std::lround(fps * duration));
  std::vector<Pose> track;
  track.reserve(static_cast<std::size_t>(frames));
  for (int f = 0; f < frames; ++f) {
    const double t = f / fps;
    const double ts = spec.speed * t;
    Pose pose = Pose::identity(joints, t);
    switch (spec.kind) {
      case MotionKind::IdleSway: {
        set_joint(pose, kPelvis, rot_z(0.05 * std::sin(kTwoPi * 0.3 * ts)));
        set_joint(pose, kSpine1, rot_x(0.05 * std::sin(kTwoPi * 0.25 * ts + 1.0)));
        set_joint(pose, kHead, rot_y(0.15 * std::sin(kTwoPi * 0.2 * ts)));
        const double sw = 0.08 * std::sin(kTwoPi * 0.3 * ts);
        lower_arms(pose, sw, -sw, 0.2, 0.2);
        pose.root_translation = Vec3(0.03 * std::sin(kTwoPi * 0.3 * ts), 0.0, 0.0);
        break;
      }
      case MotionKind::Walk: {
        // Cadence drifts slowly so the same pose recurs with different histories.
        constexpr double f0 = 0.9, fm = 0.0713;
        const double m = spec.cadence_modulation;
        const double phi = kTwoPi * f0 * (ts + m * (1.0 - std::cos(kTwoPi * fm * ts)) / (kTwoPi * fm));
        const double s = std::sin(phi);
        set_joint(pose, kLHip, rot_x(-0.35 * s));
        set_joint(pose, kRHip, rot_x(0.35 * s));
        set_joint(pose, kLKnee, rot_x(0.5 * std::max(0.0, std::sin(phi + 1.2))));
        set_joint(pose, kRKnee, rot_x(0.5 * std::max(0.0, -std::sin(phi + 1.2))));
        set_joint(pose, kPelvis, rot_y(0.08 * s));
        set_joint(pose, kSpine2, rot_y(-0.06 * s));
        lower_arms(pose, 0.3 * s, -0.3 * s, 0.3, 0.3);
        pose.root_translation = Vec3(0.0, 0.015 * std::cos(2.0 * phi), 0.0);
        break;
      }
      case MotionKind::ArmWave: {
        set_joint(pose, kSpine1, rot_y(0.1 * std::sin(kTwoPi * 0.3 * ts)));
        set_joint(pose, kLShoulder, rot_z(-1.25));
        set_joint(pose, kLElbow, rot_y(-0.2));
        set_joint(pose, kRShoulder, rot_z(-0.9));
        set_joint(pose, kRElbow, rot_z(-(0.6 + 0.5 * std::sin(kTwoPi * 1.0 * ts))));
        break;
      }
      case MotionKind::Spin: {
        set_joint(pose, kPelvis, rot_y(kTwoPi * 0.25 * ts));
        lower_arms(pose, 0.0, 0.0, 0.15, 0.15);
        break;
      }
    }
    track.push_back(std::move(pose));
  }
  return track;
}

Mat gt_positions(const SubjectAsset& subject, const Pose& pose, const Mat& cloth_lag) {
  DRAPE_REQUIRE(cloth_lag.rows() == static_cast<Eigen::Index>(subject.cloth_vertices.size()) && cloth_lag.cols() == 3,
                "gt_positions: cloth lag shape mismatch");
  Mat posed = lbs_deform(subject.mesh.vertices, subject.shell_offsets, pose, subject.mesh);
  for (std::size_t k = 0; k < subject.cloth_vertices.size(); ++k)
    posed.row(subject.cloth_vertices[k]) += cloth_lag.row(static_cast<Eigen::Index>(k));
  return posed;
}

std::vector<Mat> simulate_garment(const SubjectAsset& subject, const std::vector<Pose>& poses, double fps) {
  DRAPE_REQUIRE(fps > 0.0, "simulate_garment: fps must be positive");
  const auto C = static_cast<Eigen::Index>(subject.cloth_vertices.size());
  const auto T = poses.size();
  std::vector<Mat> lag;
  if (T == 0) return lag;
  lag.reserve(T);
  const double dt = 1.0 / fps;

  std::vector<Mat> anchor(T);
  for (std::size_t t = 0; t < T; ++t) {
    const Mat posed = lbs_deform(subject.mesh.vertices, subject.shell_offsets, poses[t], subject.mesh);
    anchor[t].resize(C, 3);
    for (Eigen::Index k = 0; k < C; ++k) anchor[t].row(k) = posed.row(subject.cloth_vertices[static_cast<std::size_t>(k)]);
  }

  // Start at the gravity equilibrium and at rest.
  const auto& g = subject.garment;
  std::vector<SpringState> state(static_cast<std::size_t>(C));
  const double sag = g.stiffness > 0.0 ? kGravity * g.gravity_gain / g.stiffness : 0.0;
  for (auto& s : state) s.u = Vec3(0.0, -std::min(sag, g.max_lag), 0.0);

  auto record = [&] {
    Mat m(C, 3);
    for (Eigen::Index k = 0; k < C; ++k) m.row(k) = state[static_cast<std::size_t>(k)].u.transpose();
    lag.push_back(std::move(m));
  };
  record();
  for (std::size_t t = 1; t < T; ++t) {
    // Anchor acceleration over [t-1, t] from frames t-2..t; a linear
    // extrapolation stands in for the frame before the first.
    const Mat prev2 = t >= 2 ? anchor[t - 2] : Mat(2.0 * anchor[0] - anchor[1]);
    const Mat acc = (anchor[t] - 2.0 * anchor[t - 1] + prev2) / (dt * dt);
    for (Eigen::Index k = 0; k < C; ++k)
      spring_step(state[static_cast<std::size_t>(k)], acc.row(k).transpose(), dt, g);
    record();
  }
  return lag;
}

RenderTargets render_gt(const SubjectAsset& subject, const Mat& posed, const Camera& camera, std::vector<int>* seg) {
  const Mat normals = vertex_normals(posed, subject.mesh.faces);
  RenderTargets out = render_channels(posed, subject.gt_scales, subject.gt_colors, normals, camera);
  if (seg) {
    // One-hot payload for the first three labels; the fourth is the remainder
    // of the coverage.
    const auto N = posed.rows();
    Mat onehot = Mat::Zero(N, 3);
    for (Eigen::Index i = 0; i < N; ++i) {
      const int l = static_cast<int>(subject.gt_labels[static_cast<std::size_t>(i)]);
      if (l < 3) onehot(i, l) = 1.0;
    }
    RenderSettings settings;
    settings.background = Vec3::Zero();
    const RenderTargets ids = render_channels(posed, subject.gt_scales, onehot, normals, camera, settings);
    const auto P = static_cast<std::size_t>(out.width) * static_cast<std::size_t>(out.height);
    seg->assign(P, kBackgroundLabel);
    for (std::size_t p = 0; p < P; ++p) {
      const auto pi = static_cast<Eigen::Index>(p);
      if (ids.silhouette(pi) < 0.5) continue;
      double w[kPartCount] = {ids.rgb(pi, 0), ids.rgb(pi, 1), ids.rgb(pi, 2),
                              ids.silhouette(pi) - ids.rgb.row(pi).sum()};
      (*seg)[p] = static_cast<int>(std::max_element(w, w + kPartCount) - w);
    }
  }
  return out;
}

Camera studio_camera(int width, int height, double azimuth_deg) {
  const Vec3 target(0.0, -0.08, 0.0);
  const double dist = 2.8;
  const double az = azimuth_deg * std::numbers::pi / 180.0;
  const Vec3 eye = target + dist * Vec3(std::sin(az), 0.0, std::cos(az));
  return Camera::look_at(eye, target, 105.0 * width / 64.0, width, height);
}

Sequence generate_sequence(const SubjectAsset& subject, const MotionSpec& motion, double fps, double duration,
                           const Camera& camera) {
  camera.validate();
  Sequence seq;
  seq.motion = motion;
  seq.fps = fps;
  seq.camera = camera;
  seq.poses = motion_track(motion, fps, duration, subject.mesh.joint_count());
  seq.cloth_lag = simulate_garment(subject, seq.poses, fps);
  seq.frames.resize(seq.poses.size());
  seq.seg.resize(seq.poses.size());
  for (std::size_t t = 0; t < seq.poses.size(); ++t) {
    const Mat posed = gt_positions(subject, seq.poses[t], seq.cloth_lag[t]);
    seq.frames[t] = render_gt(subject, posed, camera, &seq.seg[t]);
  }
  return seq;
}

Turnaround turnaround_views(const SubjectAsset& subject, const Sequence& sequence, int views) {
  DRAPE_REQUIRE(views >= 1, "turnaround_views: views must be >= 1");
  DRAPE_REQUIRE(!sequence.poses.empty(), "turnaround_views: empty sequence");
  Turnaround out;
  out.pose = sequence.poses.front();
  const Mat posed = gt_positions(subject, out.pose, sequence.cloth_lag.front());
  for (int k = 0; k < views; ++k) {
    out.cameras.push_back(
        studio_camera(sequence.camera.width, sequence.camera.height, 360.0 * k / views));
    out.seg.emplace_back();
    out.frames.push_back(render_gt(subject, posed, out.cameras.back(), &out.seg.back()));
  }
  return out;
}

PseudoGT pseudo_gt_maps(const Sequence& sequence, double noise_sigma, std::uint64_t seed) {
  DRAPE_REQUIRE(noise_sigma >= 0.0, "pseudo_gt_maps: noise sigma must be non-negative");
  PseudoGT out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, noise_sigma > 0.0 ? noise_sigma : 1.0);
  for (std::size_t t = 0; t < sequence.frames.size(); ++t) {
    const auto& f = sequence.frames[t];
    Mat n = f.normal;
    Vec d = f.depth;
    if (noise_sigma > 0.0) {
      for (Eigen::Index i = 0; i < n.size(); ++i) n.data()[i] += noise(rng);
      for (Eigen::Index i = 0; i < d.size(); ++i) d(i) += noise(rng);
    }
    out.normal.push_back(std::move(n));
    out.depth.push_back(std::move(d));
    out.silhouette.push_back(f.silhouette);
    out.seg.push_back(sequence.seg[t]);
  }
  return out;
}

}  // namespace drape
