#include "drape/avatar.hpp"

#include <algorithm>
#include <limits>

namespace drape {

bool Avatar::native() const {
  if (surface_vertex.size() != static_cast<std::size_t>(surface.vertex_count())) return false;
  for (std::size_t i = 0; i < surface_vertex.size(); ++i)
    if (surface_vertex[i] != static_cast<int>(i)) return false;
  return true;
}

Avatar build_avatar(const AvatarCodec& codec, const Parameters& params, const Mat& latent, const SkinnedMesh& mesh,
                    const Partition& parts) {
  Avatar a;
  a.surface = mesh;
  a.gaussians = codec.build_static_avatar(params, latent, mesh);
  a.surface_canonical = a.gaussians.positions;
  a.skin_weights = mesh.skin_weights;
  a.surface_vertex.resize(static_cast<std::size_t>(mesh.vertex_count()));
  for (std::size_t i = 0; i < a.surface_vertex.size(); ++i) a.surface_vertex[i] = static_cast<int>(i);
  a.features = sample_features(codec.decode_triplane(params, latent), mesh.vertices);
  a.parts = parts;
  a.gaussians.labels = labels_from_partition(parts, mesh.vertex_count()).labels;
  a.graph = ClothGraph::from_mesh(mesh.edges(), a.cloth());
  return a;
}

OffsetSelection select_offsets(const PoseWindow& window, const std::vector<Pose>& track, int frame) {
  DRAPE_REQUIRE(frame >= 0 && frame < static_cast<int>(track.size()), "select_offsets: frame out of range");
  OffsetSelection s;
  if (frame == window.frames[1]) return s;
  const double ta = window.poses[0].timestamp, tb = window.poses[2].timestamp;
  s.center = false;
  s.alpha = std::clamp((track[static_cast<std::size_t>(frame)].timestamp - ta) / (tb - ta), 0.0, 1.0);
  return s;
}

PoseWindow frame_window(const std::vector<Pose>& track, int frame, double delta_t, bool collapse) {
  DRAPE_REQUIRE(frame >= 0 && frame < static_cast<int>(track.size()), "frame_window: frame out of range");
  const double t = clamp_window_center(track, track[static_cast<std::size_t>(frame)].timestamp, delta_t);
  const PoseWindow w = build_window(track, t, delta_t);
  return collapse ? collapse_window(w) : w;
}

Mat cloth_offsets_at(const Avatar& avatar, const Closim* closim, const Parameters& params,
                     const std::vector<Pose>& track, int frame, double delta_t, bool collapse) {
  const auto& cloth = avatar.cloth();
  const auto n = static_cast<Eigen::Index>(cloth.size());
  if (!closim || n == 0) return Mat::Zero(n, 7);
  const PoseWindow w = frame_window(track, frame, delta_t, collapse);
  Mat feat(n, avatar.features.cols());
  for (Eigen::Index k = 0; k < n; ++k) feat.row(k) = avatar.features.row(cloth[static_cast<std::size_t>(k)]);
  const OffsetSequence seq = closim->forward(params, feat, w, avatar.graph);
  const OffsetSelection sel = select_offsets(w, track, frame);
  return sel.center ? seq.frames[1] : interpolate_offsets(seq.frames[0], seq.frames[2], sel.alpha);
}

GaussianSet apply_offsets(const GaussianSet& g, const std::vector<int>& cloth, const Mat& offsets) {
  DRAPE_REQUIRE(offsets.rows() == static_cast<Eigen::Index>(cloth.size()) && offsets.cols() == 7,
                "apply_offsets: expected N_cloth×7 offsets");
  GaussianSet out = g;
  for (std::size_t k = 0; k < cloth.size(); ++k) {
    const int i = cloth[k];
    const auto r = static_cast<Eigen::Index>(k);
    out.positions.row(i) += offsets.block(r, 0, 1, 3);
    out.colors.row(i) = (g.colors.row(i) + offsets.block(r, 3, 1, 3)).cwiseMax(0.0).cwiseMin(1.0);
    out.scales(i) = std::max(g.scales(i) + offsets(r, 6), kMinScale);
  }
  return out;
}

PosedAvatar pose_avatar(const Avatar& avatar, const GaussianSet& canonical, const Pose& pose) {
  PosedAvatar out;
  out.positions = lbs_deform_weights(canonical.positions, avatar.skin_weights, pose, avatar.surface);
  if (avatar.native()) {
    out.normals = vertex_normals(out.positions, avatar.surface.faces);
  } else {
    Mat surf = avatar.surface_canonical;
    for (std::size_t g = 0; g < avatar.surface_vertex.size(); ++g)
      surf.row(avatar.surface_vertex[g]) = canonical.positions.row(static_cast<Eigen::Index>(g));
    const Mat posed = lbs_deform_weights(surf, avatar.surface.skin_weights, pose, avatar.surface);
    const Mat n = vertex_normals(posed, avatar.surface.faces);
    out.normals.resize(canonical.size(), 3);
    for (std::size_t g = 0; g < avatar.surface_vertex.size(); ++g)
      out.normals.row(static_cast<Eigen::Index>(g)) = n.row(avatar.surface_vertex[g]);
  }
  out.colors = canonical.colors;
  out.scales = canonical.scales;
  return out;
}

RenderTargets render_avatar(const Avatar& avatar, const Mat& cloth_offsets, const Pose& pose, const Camera& camera,
                            RenderSubset subset) {
  const GaussianSet g = apply_offsets(avatar.gaussians, avatar.cloth(), cloth_offsets);
  const PosedAvatar p = pose_avatar(avatar, g, pose);
  if (subset == RenderSubset::All) return render_channels(p.positions, p.scales, p.colors, p.normals, camera);
  std::vector<int> rows;
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    const bool is_cloth = g.labels[static_cast<std::size_t>(i)] == PartLabel::Cloth;
    if (is_cloth == (subset == RenderSubset::ClothOnly)) rows.push_back(static_cast<int>(i));
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  Mat pos(n, 3), nor(n, 3), col(n, 3);
  Vec sc(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const int i = rows[static_cast<std::size_t>(k)];
    pos.row(k) = p.positions.row(i);
    nor.row(k) = p.normals.row(i);
    col.row(k) = p.colors.row(i);
    sc(k) = p.scales(i);
  }
  return render_channels(pos, sc, col, nor, camera);
}

std::pair<Vec3, Vec3> torso_box(const Avatar& avatar) {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  bool any = false;
  for (Eigen::Index i = 0; i < avatar.surface.vertex_count(); ++i) {
    if (avatar.surface.part_hint[static_cast<std::size_t>(i)] != PartHint::Torso) continue;
    const Vec3 p = avatar.surface_canonical.row(i).transpose();
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
    any = true;
  }
  if (!any) throw TransferError("avatar surface has no torso vertices");
  return {lo, hi};
}

Avatar transfer_clothing(const Avatar& source, const Avatar& target) {
  const auto& src_cloth = source.cloth();
  if (src_cloth.empty()) throw TransferError("source avatar has no cloth Gaussians");
  const auto [s_lo, s_hi] = torso_box(source);
  const auto [t_lo, t_hi] = torso_box(target);
  const Vec3 s_c = 0.5 * (s_lo + s_hi), t_c = 0.5 * (t_lo + t_hi);
  Vec3 ratio;
  for (int k = 0; k < 3; ++k) {
    const double se = s_hi(k) - s_lo(k);
    ratio(k) = se > 0.0 ? (t_hi(k) - t_lo(k)) / se : 1.0;
  }

  std::vector<int> keep;
  for (Eigen::Index i = 0; i < target.size(); ++i)
    if (target.gaussians.labels[static_cast<std::size_t>(i)] != PartLabel::Cloth) keep.push_back(static_cast<int>(i));
  const auto nk = static_cast<Eigen::Index>(keep.size());
  const auto nc = static_cast<Eigen::Index>(src_cloth.size());
  const auto n = nk + nc;
  const auto F = target.features.cols();
  DRAPE_REQUIRE(source.features.cols() == F, "transfer: feature widths differ");

  Avatar out;
  out.surface = target.surface;
  out.surface_canonical = target.surface_canonical;
  out.gaussians.positions.resize(n, 3);
  out.gaussians.colors.resize(n, 3);
  out.gaussians.scales.resize(n);
  out.gaussians.labels.resize(static_cast<std::size_t>(n));
  out.skin_weights.resize(n, target.skin_weights.cols());
  out.features.resize(n, F);
  out.surface_vertex.resize(static_cast<std::size_t>(n));

  for (Eigen::Index k = 0; k < nk; ++k) {
    const int i = keep[static_cast<std::size_t>(k)];
    out.gaussians.positions.row(k) = target.gaussians.positions.row(i);
    out.gaussians.colors.row(k) = target.gaussians.colors.row(i);
    out.gaussians.scales(k) = target.gaussians.scales(i);
    out.gaussians.labels[static_cast<std::size_t>(k)] = target.gaussians.labels[static_cast<std::size_t>(i)];
    out.skin_weights.row(k) = target.skin_weights.row(i);
    out.features.row(k) = target.features.row(i);
    out.surface_vertex[static_cast<std::size_t>(k)] = target.surface_vertex[static_cast<std::size_t>(i)];
  }
  const Mat& surf = target.surface_canonical;
  for (Eigen::Index k = 0; k < nc; ++k) {
    const int i = src_cloth[static_cast<std::size_t>(k)];
    const Vec3 p = source.gaussians.positions.row(i).transpose();
    const Vec3 q = t_c + (p - s_c).cwiseProduct(ratio);
    Eigen::Index best = 0;
    (surf.rowwise() - q.transpose()).rowwise().squaredNorm().minCoeff(&best);
    const Eigen::Index r = nk + k;
    out.gaussians.positions.row(r) = q.transpose();
    out.gaussians.colors.row(r) = source.gaussians.colors.row(i);
    out.gaussians.scales(r) = source.gaussians.scales(i);
    out.gaussians.labels[static_cast<std::size_t>(r)] = PartLabel::Cloth;
    out.skin_weights.row(r) = target.surface.skin_weights.row(best);
    out.features.row(r) = source.features.row(i);
    out.surface_vertex[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  for (Eigen::Index i = 0; i < n; ++i)
    out.parts[static_cast<int>(out.gaussians.labels[static_cast<std::size_t>(i)])].push_back(static_cast<int>(i));
  out.graph = ClothGraph::from_local(static_cast<int>(nc), source.graph.edges);
  out.graph.nodes = out.cloth();
  return out;
}

}  // namespace drape
