#include "drape/avatar.hpp"
#include "drape/studio.hpp"

#include <doctest.h>

#include <random>

using namespace drape;

namespace {

struct Fixture {
  AvatarCodec codec;
  Parameters params;
  Mat latent_a, latent_b;
  SkinnedMesh mesh = build_canonical_body(BodyConfig{});

  Fixture() {
    std::mt19937_64 rng(4);
    codec.init_parameters(params, rng);
    latent_a = codec.init_latent(rng);
    latent_b = codec.init_latent(rng);
  }

  Avatar avatar(const Mat& latent, std::uint64_t seed, double scale = 1.0) const {
    SkinnedMesh m = mesh;
    m.vertices *= scale;
    m.joints *= scale;
    const SubjectAsset s = generate_subject(seed);
    return build_avatar(codec, params, latent, m, partition(LabelField::from_labels(s.gt_labels)));
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

double iou(const Vec& a, const Vec& b) {
  double inter = 0.0, uni = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const bool x = a(i) > 0.5, y = b(i) > 0.5;
    inter += (x && y) ? 1.0 : 0.0;
    uni += (x || y) ? 1.0 : 0.0;
  }
  return uni > 0.0 ? inter / uni : 1.0;
}

Mat cloth_positions(const Avatar& a) {
  Mat p(static_cast<Eigen::Index>(a.cloth().size()), 3);
  for (std::size_t k = 0; k < a.cloth().size(); ++k) p.row(static_cast<Eigen::Index>(k)) = a.gaussians.positions.row(a.cloth()[k]);
  return p;
}

}  // namespace

TEST_CASE("built avatar is native and labeled by its partition") {
  const auto& f = fixture();
  const Avatar a = f.avatar(f.latent_a, 7);
  CHECK(a.native());
  CHECK(a.size() == f.mesh.vertex_count());
  CHECK(!a.cloth().empty());
  CHECK(a.graph.nodes == a.cloth());
  for (int i : a.cloth()) CHECK(a.gaussians.labels[static_cast<std::size_t>(i)] == PartLabel::Cloth);
}

TEST_CASE("self transfer reproduces the avatar") {
  const auto& f = fixture();
  const Avatar a = f.avatar(f.latent_a, 7);
  const Avatar t = transfer_clothing(a, a);
  CHECK(t.size() == a.size());
  const Mat diff = cloth_positions(t) - cloth_positions(a);
  CHECK(std::sqrt(diff.squaredNorm() / static_cast<double>(diff.size())) <= 1e-6);
  const Pose pose = motion_track(MotionSpec{MotionKind::Walk}, 30.0, 0.5, 22)[10];
  const Camera cam = studio_camera(32, 32);
  const auto n = static_cast<Eigen::Index>(a.cloth().size());
  const RenderTargets ra = render_avatar(a, Mat::Zero(n, 7), pose, cam);
  const RenderTargets rt = render_avatar(t, Mat::Zero(n, 7), pose, cam);
  const double rmse = std::sqrt((ra.rgb - rt.rgb).squaredNorm() / static_cast<double>(ra.rgb.size()));
  CHECK(rmse <= 1e-6);
}

TEST_CASE("transfer rescales cloth by the torso ratio") {
  const auto& f = fixture();
  const Avatar src = f.avatar(f.latent_a, 7);
  const Avatar tgt = f.avatar(f.latent_b, 3, 1.2);
  const auto [slo, shi] = torso_box(src);
  const auto [tlo, thi] = torso_box(tgt);
  CHECK(((thi - tlo) - 1.2 * (shi - slo)).cwiseAbs().maxCoeff() <= 1e-9);
  const Avatar out = transfer_clothing(src, tgt);
  const Mat ps = cloth_positions(src), po = cloth_positions(out);
  const Vec3 ext_s = ps.colwise().maxCoeff() - ps.colwise().minCoeff();
  const Vec3 ext_o = po.colwise().maxCoeff() - po.colwise().minCoeff();
  CHECK((ext_o - 1.2 * ext_s).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("transfer keeps target body Gaussians bitwise") {
  const auto& f = fixture();
  const Avatar src = f.avatar(f.latent_a, 7);
  const Avatar tgt = f.avatar(f.latent_b, 3);
  const Avatar out = transfer_clothing(src, tgt);
  CHECK(out.cloth().size() == src.cloth().size());
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < tgt.size(); ++i) {
    if (tgt.gaussians.labels[static_cast<std::size_t>(i)] == PartLabel::Cloth) continue;
    CHECK(out.gaussians.positions.row(k) == tgt.gaussians.positions.row(i));
    CHECK(out.gaussians.colors.row(k) == tgt.gaussians.colors.row(i));
    CHECK(out.gaussians.scales(k) == tgt.gaussians.scales(i));
    CHECK(out.skin_weights.row(k) == tgt.skin_weights.row(i));
    ++k;
  }
}

TEST_CASE("transfer without source cloth is rejected") {
  const auto& f = fixture();
  Avatar src = f.avatar(f.latent_a, 7);
  auto& cloth = src.parts[static_cast<int>(PartLabel::Cloth)];
  for (int i : cloth) src.parts[static_cast<int>(PartLabel::Body)].push_back(i);
  cloth.clear();
  CHECK_THROWS_AS(transfer_clothing(src, f.avatar(f.latent_b, 3)), TransferError);
}

TEST_CASE("transferred avatar animates with a coherent silhouette") {
  const auto& f = fixture();
  const Avatar src = f.avatar(f.latent_a, 7);
  const Avatar tgt = f.avatar(f.latent_b, 3);
  const Avatar out = transfer_clothing(src, tgt);
  const auto track = motion_track(MotionSpec{MotionKind::Walk}, 30.0, 1.0, 22);
  const Camera cam = studio_camera(32, 32);
  const Mat z_out = Mat::Zero(static_cast<Eigen::Index>(out.cloth().size()), 7);
  const Mat z_tgt = Mat::Zero(static_cast<Eigen::Index>(tgt.cloth().size()), 7);
  for (int t = 0; t < static_cast<int>(track.size()); t += 5) {
    const auto& pose = track[static_cast<std::size_t>(t)];
    const RenderTargets a = render_avatar(out, z_out, pose, cam);
    const RenderTargets b = render_avatar(tgt, z_tgt, pose, cam);
    CHECK(iou(a.silhouette, b.silhouette) >= 0.8);
  }
}

TEST_CASE("offset selection uses the center slot or the endpoint fraction") {
  const auto track = motion_track(MotionSpec{MotionKind::Walk}, 30.0, 2.0, 22);
  const PoseWindow w = frame_window(track, 30, 0.2, false);
  CHECK(w.frames == std::array<int, 3>{24, 30, 36});
  CHECK(select_offsets(w, track, 30).center);
  const auto lo = select_offsets(w, track, 24), hi = select_offsets(w, track, 36), mid = select_offsets(w, track, 27);
  CHECK(!lo.center);
  CHECK(lo.alpha == 0.0);
  CHECK(hi.alpha == 1.0);
  CHECK(mid.alpha == doctest::Approx(0.25));
  const PoseWindow edge = frame_window(track, 0, 0.2, false);
  CHECK(edge.frames[0] == 0);
  CHECK(!select_offsets(edge, track, 0).center);
  CHECK(select_offsets(edge, track, 0).alpha == 0.0);
}

TEST_CASE("offsets clamp colors and scales") {
  GaussianSet g;
  g.positions = Mat::Zero(2, 3);
  g.colors = Mat::Constant(2, 3, 0.5);
  g.scales = Vec::Constant(2, 0.01);
  g.labels = {PartLabel::Cloth, PartLabel::Body};
  Mat off = Mat::Zero(1, 7);
  off.block(0, 0, 1, 3) << 0.1, 0.2, 0.3;
  off.block(0, 3, 1, 3) << 0.9, -0.9, 0.1;
  off(0, 6) = -1.0;
  const GaussianSet out = apply_offsets(g, {0}, off);
  CHECK(out.positions.row(0) == off.block(0, 0, 1, 3));
  CHECK(out.colors(0, 0) == 1.0);
  CHECK(out.colors(0, 1) == 0.0);
  CHECK(out.colors(0, 2) == doctest::Approx(0.6));
  CHECK(out.scales(0) == kMinScale);
  CHECK(out.positions.row(1) == g.positions.row(1));
  CHECK(out.scales(1) == 0.01);
}

TEST_CASE("subset rendering splits cloth and body") {
  const auto& f = fixture();
  const Avatar a = f.avatar(f.latent_a, 7);
  const Pose pose = motion_track(MotionSpec{MotionKind::IdleSway}, 30.0, 0.1, 22)[0];
  const Camera cam = studio_camera(32, 32);
  const Mat z = Mat::Zero(static_cast<Eigen::Index>(a.cloth().size()), 7);
  const RenderTargets all = render_avatar(a, z, pose, cam);
  const RenderTargets cloth = render_avatar(a, z, pose, cam, RenderSubset::ClothOnly);
  const RenderTargets body = render_avatar(a, z, pose, cam, RenderSubset::BodyOnly);
  CHECK(cloth.silhouette.sum() > 0.0);
  CHECK(cloth.silhouette.sum() < all.silhouette.sum());
  CHECK(body.silhouette.sum() < all.silhouette.sum());
  CHECK((all.silhouette.array() + 1e-9 >= cloth.silhouette.array().max(body.silhouette.array())).all());
}
