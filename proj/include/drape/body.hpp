#pragma once

// Procedural skinned humanoid, subdivision, linear blend skinning and
// per-vertex geometric quantities.

#include "drape/autodiff.hpp"
#include "drape/types.hpp"

#include <array>
#include <string>
#include <vector>

namespace drape {

enum class PartHint : std::uint8_t { Head = 0, HandL = 1, HandR = 2, Torso = 3, Limb = 4 };

std::string to_string(PartHint h);

struct BodyConfig {
  int joint_count = 22;
  int subdivision_levels = 1;

  // Segments around each tube and approximate spacing between rings (m).
  int torso_segments = 12;
  int limb_segments = 8;
  int head_segments = 10;
  double ring_spacing = 0.07;

  double torso_length = 0.55;
  double torso_radius_x = 0.15;
  double torso_radius_z = 0.10;
  double neck_length = 0.08;
  double head_radius = 0.11;
  double shoulder_offset = 0.19;
  double upper_arm_length = 0.28;
  double forearm_length = 0.25;
  double arm_radius = 0.045;
  double hand_length = 0.16;
  double hand_width = 0.08;
  double hand_thickness = 0.03;
  double hip_offset = 0.085;
  double thigh_length = 0.42;
  double shin_length = 0.40;
  double leg_radius = 0.065;
  double skin_falloff = 0.05;

  void validate() const;
};

struct SkinnedMesh {
  Mat vertices;               // N×3 canonical positions
  Faces faces;                // F×3
  Mat joints;                 // J×3 rest positions
  std::vector<int> parents;   // -1 for the root
  Mat skin_weights;           // N×J, rows sum to 1
  std::vector<PartHint> part_hint;

  Eigen::Index vertex_count() const { return vertices.rows(); }
  int joint_count() const { return static_cast<int>(parents.size()); }
  /// Undirected edges (i < j), sorted.
  std::vector<std::array<int, 2>> edges() const;
};

struct Pose {
  Mat joint_rotations;                  // J×3 axis-angle (radians)
  Vec3 root_translation = Vec3::Zero();
  double timestamp = 0.0;

  static Pose identity(int joints, double t = 0.0);
};

struct Camera {
  double fx = 100.0, fy = 100.0, cx = 32.0, cy = 32.0;
  Mat3 rotation = Mat3::Identity();     // world → camera
  Vec3 translation = Vec3::Zero();
  int width = 64, height = 64;

  void validate() const;
  Vec3 to_camera(const Vec3& p) const { return rotation * p + translation; }
  Vec3 center() const { return -rotation.transpose() * translation; }

  /// Camera at `eye` looking at `target` with world +y up (image y down).
  static Camera look_at(const Vec3& eye, const Vec3& target, double focal, int width, int height);
};

/// Builds the canonical T-pose humanoid. The first `joint_count` joints of the
/// 22-joint template are kept (parents always precede children).
SkinnedMesh build_canonical_body(const BodyConfig& config);

/// Loop-free midpoint subdivision; new vertices average their edge endpoints.
SkinnedMesh subdivide(const SkinnedMesh& mesh, int levels);

Mat3 axis_angle_to_matrix(const Vec3& axis_angle);

/// Per-joint 3×4 skinning transforms (rest-pose inverse baked in).
std::vector<Eigen::Matrix<double, 3, 4>> skinning_transforms(const SkinnedMesh& mesh, const Pose& pose);

/// Per-vertex blended 3×4 transforms Σ_j w_ij A_j.
std::vector<Eigen::Matrix<double, 3, 4>> blend_transforms(const Mat& skin_weights,
                                                         const std::vector<Eigen::Matrix<double, 3, 4>>& joint_tf);

/// v_t = LBS(v + Δ, θ): offsets are added in canonical space before skinning.
Mat lbs_deform(const Mat& canonical_vertices, const Mat& offsets, const Pose& pose, const SkinnedMesh& mesh);
/// Same with explicit per-point skinning weights (points need not be mesh vertices).
Mat lbs_deform_weights(const Mat& points, const Mat& skin_weights, const Pose& pose, const SkinnedMesh& skeleton);

/// Differentiable skinning of canonical points (N×3 Var) with fixed weights.
ad::Var lbs_op(ad::Var canonical_points, const Mat& skin_weights, const Pose& pose, const SkinnedMesh& skeleton);

/// Area-weighted unit vertex normals; vertices without usable incident area get +z.
Mat vertex_normals(const Mat& vertices, const Faces& faces);
ad::Var vertex_normals_op(ad::Var vertices, const Faces& faces);

struct DepthResult {
  Vec depth;                      // camera-space z
  std::vector<bool> behind;       // depth <= 0
};
DepthResult camera_depth(const Mat& vertices, const Camera& camera);

}  // namespace drape
