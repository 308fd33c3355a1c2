#include "drape/body.hpp"
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace drape {

std::string to_string(PartHint h) {
  switch (h) {
    case PartHint::Head: return "head";
    case PartHint::HandL: return "hand_l";
    case PartHint::HandR: return "hand_r";
    case PartHint::Torso: return "torso";
    case PartHint::Limb: return "limb";
  }
  return "unknown";
}

void BodyConfig::validate() const {
  if (joint_count < 4 || joint_count > 22) throw ConfigError("joint_count must be in [4, 22]");
  if (subdivision_levels < 0) throw ConfigError("subdivision_levels must be >= 0");
  if (torso_segments < 3 || limb_segments < 3 || head_segments < 4)
    throw ConfigError("segment counts too small");
  const double lengths[] = {ring_spacing, torso_length, torso_radius_x, torso_radius_z, neck_length,
                            head_radius, shoulder_offset, upper_arm_length, forearm_length, arm_radius,
                            hand_length, hand_width, hand_thickness, hip_offset, thigh_length,
                            shin_length, leg_radius, skin_falloff};
  for (double v : lengths)
    if (!(v > 0.0)) throw ConfigError("body proportions must be positive");
}

void Camera::validate() const {
  DRAPE_REQUIRE(fx > 0 && fy > 0, "camera focal lengths must be positive");
  DRAPE_REQUIRE(width > 0 && height > 0, "camera resolution must be positive");
  DRAPE_REQUIRE((rotation * rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-6,
                "camera rotation must be orthonormal");
}

Camera Camera::look_at(const Vec3& eye, const Vec3& target, double focal, int width, int height) {
  const Vec3 f = (target - eye).normalized();
  const Vec3 r = f.cross(Vec3::UnitY()).normalized();
  const Vec3 d = f.cross(r);
  Camera cam;
  cam.rotation.row(0) = r.transpose();
  cam.rotation.row(1) = d.transpose();
  cam.rotation.row(2) = f.transpose();
  cam.translation = -cam.rotation * eye;
  cam.fx = cam.fy = focal;
  cam.cx = 0.5 * width;
  cam.cy = 0.5 * height;
  cam.width = width;
  cam.height = height;
  return cam;
}

Pose Pose::identity(int joints, double t) {
  Pose p;
  p.joint_rotations = Mat::Zero(joints, 3);
  p.timestamp = t;
  return p;
}

std::vector<std::array<int, 2>> SkinnedMesh::edges() const {
  std::vector<std::array<int, 2>> out;
  out.reserve(static_cast<std::size_t>(faces.rows()) * 3);
  for (Eigen::Index f = 0; f < faces.rows(); ++f)
    for (int k = 0; k < 3; ++k) {
      int a = faces(f, k), b = faces(f, (k + 1) % 3);
      out.push_back({std::min(a, b), std::max(a, b)});
    }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

namespace {

// SMPL-style ordering of the 22-joint template.
enum Joint : int {
  kPelvis = 0, kLHip, kRHip, kSpine1, kLKnee, kRKnee, kSpine2, kLAnkle, kRAnkle, kSpine3, kLFoot, kRFoot,
  kNeck, kLCollar, kRCollar, kHead, kLShoulder, kRShoulder, kLElbow, kRElbow, kLWrist, kRWrist,
  kTemplateJoints
};
constexpr int kTemplateParents[kTemplateJoints] = {-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7,
                                                   8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19};

struct Builder {
  std::vector<Vec3> verts;
  std::vector<std::array<int, 3>> faces;
  std::vector<PartHint> hints;
  std::vector<std::vector<int>> candidates;  // per-vertex candidate bones

  int add_vertex(const Vec3& p, PartHint h, const std::vector<int>& cand) {
    verts.push_back(p);
    hints.push_back(h);
    candidates.push_back(cand);
    return static_cast<int>(verts.size()) - 1;
  }

  // Capped tube from a to b. Rings carry `segments` vertices; radius may be
  // elliptical in the plane spanned by (u, v).
  void tube(const Vec3& a, const Vec3& b, double ru, double rv, int segments, double spacing, const Vec3& u_hint,
            PartHint hint, const std::vector<int>& cand) {
    const Vec3 axis = (b - a);
    const double len = axis.norm();
    const Vec3 w = axis / len;
    Vec3 u = (u_hint - u_hint.dot(w) * w).normalized();
    Vec3 v = w.cross(u);
    const int rings = std::max(2, static_cast<int>(std::ceil(len / spacing)) + 1);
    const int base = static_cast<int>(verts.size());
    for (int r = 0; r < rings; ++r) {
      const double t = static_cast<double>(r) / (rings - 1);
      const Vec3 c = a + t * axis;
      for (int s = 0; s < segments; ++s) {
        const double phi = 2.0 * M_PI * s / segments;
        add_vertex(c + ru * std::cos(phi) * u + rv * std::sin(phi) * v, hint, cand);
      }
    }
    // Orientation: outward normals for a right-handed (u, v, w) frame.
    for (int r = 0; r + 1 < rings; ++r)
      for (int s = 0; s < segments; ++s) {
        const int s1 = (s + 1) % segments;
        const int i00 = base + r * segments + s, i01 = base + r * segments + s1;
        const int i10 = base + (r + 1) * segments + s, i11 = base + (r + 1) * segments + s1;
        faces.push_back({i00, i01, i11});
        faces.push_back({i00, i11, i10});
      }
    const int ca = add_vertex(a, hint, cand);
    const int cb = add_vertex(b, hint, cand);
    const int last = base + (rings - 1) * segments;
    for (int s = 0; s < segments; ++s) {
      const int s1 = (s + 1) % segments;
      faces.push_back({ca, base + s1, base + s});
      faces.push_back({cb, last + s, last + s1});
    }
  }

  void sphere(const Vec3& c, double radius, int segments, PartHint hint, const std::vector<int>& cand) {
    const int lat = std::max(3, segments / 2);
    const int top = add_vertex(c + Vec3(0, radius, 0), hint, cand);
    const int base = static_cast<int>(verts.size());
    for (int i = 1; i < lat; ++i) {
      const double theta = M_PI * i / lat;
      for (int s = 0; s < segments; ++s) {
        const double phi = 2.0 * M_PI * s / segments;
        add_vertex(c + radius * Vec3(std::sin(theta) * std::sin(phi), std::cos(theta), std::sin(theta) * std::cos(phi)),
                   hint, cand);
      }
    }
    const int bottom = add_vertex(c - Vec3(0, radius, 0), hint, cand);
    for (int s = 0; s < segments; ++s) {
      const int s1 = (s + 1) % segments;
      faces.push_back({top, base + s, base + s1});
      for (int i = 0; i + 2 < lat; ++i) {
        const int a = base + i * segments + s, b = base + i * segments + s1;
        const int c2 = base + (i + 1) * segments + s, d = base + (i + 1) * segments + s1;
        faces.push_back({a, c2, d});
        faces.push_back({a, d, b});
      }
      const int lastring = base + (lat - 2) * segments;
      faces.push_back({bottom, lastring + s1, lastring + s});
    }
  }

  // Axis-aligned box paddle spanning [lo, hi].
  void box(const Vec3& lo, const Vec3& hi, PartHint hint, const std::vector<int>& cand) {
    const int base = static_cast<int>(verts.size());
    for (int i = 0; i < 8; ++i)
      add_vertex(Vec3((i & 1) ? hi.x() : lo.x(), (i & 2) ? hi.y() : lo.y(), (i & 4) ? hi.z() : lo.z()), hint, cand);
    const int quads[6][4] = {{0, 2, 3, 1}, {4, 5, 7, 6}, {0, 1, 5, 4}, {2, 6, 7, 3}, {0, 4, 6, 2}, {1, 3, 7, 5}};
    for (const auto& q : quads) {
      faces.push_back({base + q[0], base + q[1], base + q[2]});
      faces.push_back({base + q[0], base + q[2], base + q[3]});
    }
  }
};

double segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double denom = ab.squaredNorm();
  const double t = denom > 0 ? std::clamp((p - a).dot(ab) / denom, 0.0, 1.0) : 0.0;
  return (p - (a + t * ab)).norm();
}

}  // namespace

SkinnedMesh build_canonical_body(const BodyConfig& c) {
  c.validate();

  const double torso_bottom = -0.10;
  const double torso_top = torso_bottom + c.torso_length;
  const double shoulder_y = torso_top - 0.04;
  const double hip_y = -0.05;

  std::array<Vec3, kTemplateJoints> jp;
  jp[kPelvis] = Vec3::Zero();
  jp[kSpine1] = Vec3(0, torso_bottom + 0.30 * c.torso_length, 0);
  jp[kSpine2] = Vec3(0, torso_bottom + 0.55 * c.torso_length, 0);
  jp[kSpine3] = Vec3(0, torso_bottom + 0.80 * c.torso_length, 0);
  jp[kNeck] = Vec3(0, torso_top, 0);
  jp[kHead] = Vec3(0, torso_top + c.neck_length, 0);
  for (int side = 0; side < 2; ++side) {
    const double sx = side == 0 ? 1.0 : -1.0;  // left is +x
    const int o = side;
    jp[kLCollar + o] = Vec3(sx * 0.06, shoulder_y, 0);
    jp[kLShoulder + o] = Vec3(sx * c.shoulder_offset, shoulder_y, 0);
    jp[kLElbow + o] = Vec3(sx * (c.shoulder_offset + c.upper_arm_length), shoulder_y, 0);
    jp[kLWrist + o] = Vec3(sx * (c.shoulder_offset + c.upper_arm_length + c.forearm_length), shoulder_y, 0);
    jp[kLHip + o] = Vec3(sx * c.hip_offset, hip_y, 0);
    jp[kLKnee + o] = Vec3(sx * c.hip_offset, hip_y - c.thigh_length, 0);
    jp[kLAnkle + o] = Vec3(sx * c.hip_offset, hip_y - c.thigh_length - c.shin_length, 0);
    jp[kLFoot + o] = Vec3(sx * c.hip_offset, hip_y - c.thigh_length - c.shin_length - 0.04, 0.10);
  }
  const Vec3 head_center = jp[kHead] + Vec3(0, 0.9 * c.head_radius, 0);

  // Bone segment of each joint: from the joint towards its primary child.
  std::array<Vec3, kTemplateJoints> bone_end;
  bone_end[kPelvis] = jp[kSpine1];
  bone_end[kSpine1] = jp[kSpine2];
  bone_end[kSpine2] = jp[kSpine3];
  bone_end[kSpine3] = jp[kNeck];
  bone_end[kNeck] = jp[kHead];
  bone_end[kHead] = head_center + Vec3(0, c.head_radius, 0);
  for (int o = 0; o < 2; ++o) {
    const double sx = o == 0 ? 1.0 : -1.0;
    bone_end[kLCollar + o] = jp[kLShoulder + o];
    bone_end[kLShoulder + o] = jp[kLElbow + o];
    bone_end[kLElbow + o] = jp[kLWrist + o];
    bone_end[kLWrist + o] = jp[kLWrist + o] + Vec3(sx * c.hand_length, 0, 0);
    bone_end[kLHip + o] = jp[kLKnee + o];
    bone_end[kLKnee + o] = jp[kLAnkle + o];
    bone_end[kLAnkle + o] = jp[kLFoot + o];
    bone_end[kLFoot + o] = jp[kLFoot + o] + Vec3(0, 0, 0.05);
  }

  Builder b;
  b.tube(Vec3(0, torso_bottom, 0), Vec3(0, torso_top, 0), c.torso_radius_z, c.torso_radius_x, c.torso_segments,
         c.ring_spacing, Vec3::UnitZ(), PartHint::Torso,
         {kPelvis, kSpine1, kSpine2, kSpine3, kNeck, kLCollar, kRCollar, kLHip, kRHip});
  b.tube(Vec3(0, torso_top - 0.02, 0), jp[kHead] + Vec3(0, 0.02, 0), 0.05, 0.05, c.limb_segments, c.ring_spacing,
         Vec3::UnitZ(), PartHint::Limb, {kSpine3, kNeck, kHead});
  b.sphere(head_center, c.head_radius, c.head_segments, PartHint::Head, {kNeck, kHead});
  for (int o = 0; o < 2; ++o) {
    const double sx = o == 0 ? 1.0 : -1.0;
    const Vec3 arm_start(sx * (c.torso_radius_x - 0.03), shoulder_y, 0);
    b.tube(arm_start, jp[kLWrist + o], c.arm_radius, c.arm_radius, c.limb_segments, c.ring_spacing, Vec3::UnitY(),
           PartHint::Limb, {kLCollar + o, kLShoulder + o, kLElbow + o, kLWrist + o});
    const Vec3 w = jp[kLWrist + o];
    const Vec3 tip = w + Vec3(sx * c.hand_length, 0, 0);
    const Vec3 lo(std::min(w.x(), tip.x()), w.y() - 0.5 * c.hand_thickness, -0.5 * c.hand_width);
    const Vec3 hi(std::max(w.x(), tip.x()), w.y() + 0.5 * c.hand_thickness, 0.5 * c.hand_width);
    b.box(lo, hi, o == 0 ? PartHint::HandL : PartHint::HandR, {kLWrist + o});
    const Vec3 leg_start = jp[kLHip + o] + Vec3(0, 0.02, 0);
    const Vec3 leg_end = jp[kLAnkle + o] - Vec3(0, 0.03, 0);
    b.tube(leg_start, leg_end, c.leg_radius, c.leg_radius, c.limb_segments, c.ring_spacing, Vec3::UnitZ(),
           PartHint::Limb, {kPelvis, kLHip + o, kLKnee + o, kLAnkle + o, kLFoot + o});
  }

  const int J = c.joint_count;
  auto resolve = [J](int j) {
    while (j >= J) j = kTemplateParents[j];
    return j;
  };

  SkinnedMesh mesh;
  const auto N = static_cast<Eigen::Index>(b.verts.size());
  mesh.vertices.resize(N, 3);
  for (Eigen::Index i = 0; i < N; ++i) mesh.vertices.row(i) = b.verts[i].transpose();
  mesh.faces.resize(static_cast<Eigen::Index>(b.faces.size()), 3);
  for (std::size_t f = 0; f < b.faces.size(); ++f)
    for (int k = 0; k < 3; ++k) mesh.faces(static_cast<Eigen::Index>(f), k) = b.faces[f][k];
  mesh.joints.resize(J, 3);
  mesh.parents.resize(J);
  for (int j = 0; j < J; ++j) {
    mesh.joints.row(j) = jp[j].transpose();
    mesh.parents[j] = kTemplateParents[j];
  }
  mesh.part_hint = b.hints;

  // Smooth falloff on distance-to-bone, relative to the closest bone, keeping
  // at most four influences.
  mesh.skin_weights = Mat::Zero(N, J);
  for (Eigen::Index i = 0; i < N; ++i) {
    const Vec3 p = b.verts[i];
    const auto& cand = b.candidates[i];
    std::vector<double> dist(cand.size());
    double dmin = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < cand.size(); ++k) {
      dist[k] = segment_distance(p, jp[cand[k]], bone_end[cand[k]]);
      dmin = std::min(dmin, dist[k]);
    }
    std::map<int, double> acc;
    for (std::size_t k = 0; k < cand.size(); ++k) {
      const double r = (dist[k] - dmin) / c.skin_falloff;
      acc[resolve(cand[k])] += std::exp(-r * r);
    }
    std::vector<std::pair<double, int>> ranked;
    for (const auto& [j, w] : acc) ranked.emplace_back(w, j);
    std::sort(ranked.begin(), ranked.end(), [](const auto& x, const auto& y) {
      return x.first != y.first ? x.first > y.first : x.second < y.second;
    });
    if (ranked.size() > 4) ranked.resize(4);
    double total = 0;
    for (const auto& [w, j] : ranked) total += w;
    for (const auto& [w, j] : ranked) mesh.skin_weights(i, j) = w / total;
  }
  return subdivide(mesh, c.subdivision_levels);
}

SkinnedMesh subdivide(const SkinnedMesh& mesh, int levels) {
  DRAPE_REQUIRE(levels >= 0, "subdivide: levels must be >= 0");
  SkinnedMesh cur = mesh;
  for (int level = 0; level < levels; ++level) {
    const auto edges = cur.edges();
    const Eigen::Index V = cur.vertex_count();
    const Eigen::Index E = static_cast<Eigen::Index>(edges.size());
    std::map<std::array<int, 2>, int> mid;
    SkinnedMesh next;
    next.joints = cur.joints;
    next.parents = cur.parents;
    next.vertices.resize(V + E, 3);
    next.vertices.topRows(V) = cur.vertices;
    next.skin_weights.resize(V + E, cur.skin_weights.cols());
    next.skin_weights.topRows(V) = cur.skin_weights;
    next.part_hint = cur.part_hint;
    next.part_hint.resize(static_cast<std::size_t>(V + E));
    for (Eigen::Index e = 0; e < E; ++e) {
      const auto [a, bb] = edges[static_cast<std::size_t>(e)];
      const Eigen::Index id = V + e;
      mid[edges[static_cast<std::size_t>(e)]] = static_cast<int>(id);
      next.vertices.row(id) = 0.5 * (cur.vertices.row(a) + cur.vertices.row(bb));
      Eigen::RowVectorXd w = 0.5 * (cur.skin_weights.row(a) + cur.skin_weights.row(bb));
      next.skin_weights.row(id) = w / w.sum();
      next.part_hint[static_cast<std::size_t>(id)] = cur.part_hint[static_cast<std::size_t>(std::min(a, bb))];
    }
    next.faces.resize(cur.faces.rows() * 4, 3);
    auto m = [&](int a, int bb) { return mid.at({std::min(a, bb), std::max(a, bb)}); };
    for (Eigen::Index f = 0; f < cur.faces.rows(); ++f) {
      const int a = cur.faces(f, 0), bb = cur.faces(f, 1), cc = cur.faces(f, 2);
      const int ab = m(a, bb), bc = m(bb, cc), ca = m(cc, a);
      next.faces.row(4 * f + 0) << a, ab, ca;
      next.faces.row(4 * f + 1) << ab, bb, bc;
      next.faces.row(4 * f + 2) << ca, bc, cc;
      next.faces.row(4 * f + 3) << ab, bc, ca;
    }
    cur = std::move(next);
  }
  return cur;
}

Mat3 axis_angle_to_matrix(const Vec3& aa) {
  const double angle = aa.norm();
  if (angle == 0.0) return Mat3::Identity();
  return Eigen::AngleAxisd(angle, aa / angle).toRotationMatrix();
}

std::vector<Eigen::Matrix<double, 3, 4>> skinning_transforms(const SkinnedMesh& mesh, const Pose& pose) {
  const int J = mesh.joint_count();
  DRAPE_REQUIRE(pose.joint_rotations.rows() == J && pose.joint_rotations.cols() == 3,
                "pose joint count does not match skeleton");
  DRAPE_REQUIRE(pose.joint_rotations.allFinite() && pose.root_translation.allFinite(), "pose must be finite");
  std::vector<Mat3> rot(J);
  std::vector<Vec3> trans(J);
  std::vector<Eigen::Matrix<double, 3, 4>> out(J);
  for (int j = 0; j < J; ++j) {
    const Mat3 local = axis_angle_to_matrix(pose.joint_rotations.row(j).transpose());
    const Vec3 rest = mesh.joints.row(j).transpose();
    const int p = mesh.parents[j];
    if (p < 0) {
      rot[j] = local;
      trans[j] = rest + pose.root_translation;
    } else {
      const Vec3 rel = rest - mesh.joints.row(p).transpose();
      rot[j] = rot[p] * local;
      trans[j] = rot[p] * rel + trans[p];
    }
    out[j].leftCols<3>() = rot[j];
    out[j].col(3) = trans[j] - rot[j] * rest;
  }
  return out;
}

std::vector<Eigen::Matrix<double, 3, 4>> blend_transforms(const Mat& skin_weights,
                                                         const std::vector<Eigen::Matrix<double, 3, 4>>& joint_tf) {
  DRAPE_REQUIRE(skin_weights.cols() == static_cast<Eigen::Index>(joint_tf.size()), "skin weight width mismatch");
  std::vector<Eigen::Matrix<double, 3, 4>> out(static_cast<std::size_t>(skin_weights.rows()));
  for (Eigen::Index i = 0; i < skin_weights.rows(); ++i) {
    Eigen::Matrix<double, 3, 4> m = Eigen::Matrix<double, 3, 4>::Zero();
    for (Eigen::Index j = 0; j < skin_weights.cols(); ++j) {
      const double w = skin_weights(i, j);
      if (w != 0.0) m += w * joint_tf[static_cast<std::size_t>(j)];
    }
    out[static_cast<std::size_t>(i)] = m;
  }
  return out;
}

Mat lbs_deform_weights(const Mat& points, const Mat& skin_weights, const Pose& pose, const SkinnedMesh& skeleton) {
  DRAPE_REQUIRE(points.cols() == 3 && points.rows() == skin_weights.rows(), "lbs: point/weight count mismatch");
  const auto blended = blend_transforms(skin_weights, skinning_transforms(skeleton, pose));
  Mat out(points.rows(), 3);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const auto& m = blended[static_cast<std::size_t>(i)];
    out.row(i) = (m.leftCols<3>() * points.row(i).transpose() + m.col(3)).transpose();
  }
  return out;
}

Mat lbs_deform(const Mat& canonical_vertices, const Mat& offsets, const Pose& pose, const SkinnedMesh& mesh) {
  DRAPE_REQUIRE(canonical_vertices.rows() == mesh.vertex_count() && canonical_vertices.cols() == 3,
                "lbs: vertex count does not match mesh");
  DRAPE_REQUIRE(offsets.rows() == canonical_vertices.rows() && offsets.cols() == 3, "lbs: offset shape mismatch");
  DRAPE_REQUIRE(offsets.allFinite(), "lbs: offsets must be finite");
  return lbs_deform_weights(canonical_vertices + offsets, mesh.skin_weights, pose, mesh);
}

ad::Var lbs_op(ad::Var canonical_points, const Mat& skin_weights, const Pose& pose, const SkinnedMesh& skeleton) {
  const Mat& p = canonical_points.value();
  DRAPE_REQUIRE(p.cols() == 3 && p.rows() == skin_weights.rows(), "lbs_op: point/weight count mismatch");
  auto blended = blend_transforms(skin_weights, skinning_transforms(skeleton, pose));
  Mat out(p.rows(), 3);
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const auto& m = blended[static_cast<std::size_t>(i)];
    out.row(i) = (m.leftCols<3>() * p.row(i).transpose() + m.col(3)).transpose();
  }
  ad::Var inputs[] = {canonical_points};
  return canonical_points.tape->record(
      std::move(out),
      [canonical_points, blended = std::move(blended)](ad::Tape& t, const Mat& g) {
        Mat gp(g.rows(), 3);
        for (Eigen::Index i = 0; i < g.rows(); ++i)
          gp.row(i) = (blended[static_cast<std::size_t>(i)].leftCols<3>().transpose() * g.row(i).transpose()).transpose();
        t.accumulate(canonical_points, gp);
      },
      inputs);
}

namespace {

// Σ of un-normalised face normals (2·area·n) incident to each vertex.
Mat accumulate_face_normals(const Mat& v, const Faces& faces) {
  Mat acc = Mat::Zero(v.rows(), 3);
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    const int a = faces(f, 0), b = faces(f, 1), c = faces(f, 2);
    DRAPE_REQUIRE(a >= 0 && b >= 0 && c >= 0 && a < v.rows() && b < v.rows() && c < v.rows(),
                  "face index out of range");
    const Vec3 pa = v.row(a).transpose(), pb = v.row(b).transpose(), pc = v.row(c).transpose();
    const Vec3 n = (pb - pa).cross(pc - pa);
    acc.row(a) += n.transpose();
    acc.row(b) += n.transpose();
    acc.row(c) += n.transpose();
  }
  return acc;
}

constexpr double kDegenerateNormal = 1e-20;

}  // namespace

Mat vertex_normals(const Mat& vertices, const Faces& faces) {
  Mat acc = accumulate_face_normals(vertices, faces);
  int degenerate = 0;
  for (Eigen::Index i = 0; i < acc.rows(); ++i) {
    const double len = acc.row(i).norm();
    if (len > kDegenerateNormal) {
      acc.row(i) /= len;
    } else {
      acc.row(i) << 0, 0, 1;
      ++degenerate;
    }
  }
  if (degenerate > 0)
    spdlog::warn("{} vertices have degenerate normals; using +z", degenerate);
  return acc;
}

ad::Var vertex_normals_op(ad::Var vertices, const Faces& faces) {
  const Mat& v = vertices.value();
  Mat acc = accumulate_face_normals(v, faces);
  Vec len(acc.rows());
  Mat out(acc.rows(), 3);
  for (Eigen::Index i = 0; i < acc.rows(); ++i) {
    len(i) = acc.row(i).norm();
    if (len(i) > kDegenerateNormal)
      out.row(i) = acc.row(i) / len(i);
    else
      out.row(i) << 0, 0, 1;
  }
  ad::Var inputs[] = {vertices};
  return vertices.tape->record(
      out,
      [vertices, faces, out, len](ad::Tape& t, const Mat& g) {
        const Mat& v = vertices.value();
        // d n / d a = (I - n nᵀ) / |a|
        Mat ga(g.rows(), 3);
        for (Eigen::Index i = 0; i < g.rows(); ++i) {
          if (len(i) > kDegenerateNormal) {
            const Vec3 n = out.row(i).transpose();
            const Vec3 gi = g.row(i).transpose();
            ga.row(i) = ((gi - n * n.dot(gi)) / len(i)).transpose();
          } else {
            ga.row(i).setZero();
          }
        }
        Mat gv = Mat::Zero(v.rows(), 3);
        for (Eigen::Index f = 0; f < faces.rows(); ++f) {
          const int a = faces(f, 0), b = faces(f, 1), c = faces(f, 2);
          const Vec3 pa = v.row(a).transpose(), pb = v.row(b).transpose(), pc = v.row(c).transpose();
          const Vec3 gn = (ga.row(a) + ga.row(b) + ga.row(c)).transpose();
          const Vec3 e1 = pb - pa, e2 = pc - pa;
          // n = e1 × e2;  dL/de1 = e2 × gn,  dL/de2 = gn × e1
          const Vec3 g1 = e2.cross(gn), g2 = gn.cross(e1);
          gv.row(a) -= (g1 + g2).transpose();
          gv.row(b) += g1.transpose();
          gv.row(c) += g2.transpose();
        }
        t.accumulate(vertices, gv);
      },
      inputs);
}

DepthResult camera_depth(const Mat& vertices, const Camera& camera) {
  DepthResult r;
  r.depth.resize(vertices.rows());
  r.behind.resize(static_cast<std::size_t>(vertices.rows()));
  const Eigen::RowVector3d row2 = camera.rotation.row(2);
  for (Eigen::Index i = 0; i < vertices.rows(); ++i) {
    r.depth(i) = row2.dot(vertices.row(i)) + camera.translation.z();
    r.behind[static_cast<std::size_t>(i)] = r.depth(i) <= 0.0;
  }
  return r;
}

}  // namespace drape
