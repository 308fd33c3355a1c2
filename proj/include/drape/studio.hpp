#pragma once

// Synthetic subjects, motions, reference garment dynamics and rendered
// ground truth for training and evaluation.

#include "drape/body.hpp"
#include "drape/codec.hpp"
#include "drape/render.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace drape {

enum class MotionKind { IdleSway, Walk, ArmWave, Spin };
MotionKind parse_motion(const std::string& name);  // throws ConfigError
std::string to_string(MotionKind kind);

struct MotionSpec {
  MotionKind kind = MotionKind::Walk;
  double speed = 1.0;            // time scale of the joint curves
  double cadence_modulation = 0.3;  // walk only: relative cadence swing
};

/// Per-vertex damped spring u'' = −k u − c u' + g − a_anchor, integrated with
/// semi-implicit Euler in `substeps` steps per frame.
struct GarmentParams {
  double stiffness = 90.0;      // k (1/s²)
  double damping = 4.5;         // c (1/s)
  double gravity_gain = 0.1;    // fraction of 9.81 m/s² pulling along −y
  double drive_gain = 1.0;      // fraction of the anchor acceleration felt
  double max_lag = 0.045;       // hard bound on |u| (m)
  int substeps = 10;
};

struct SpringState {
  Vec3 u = Vec3::Zero();
  Vec3 v = Vec3::Zero();
};

/// Advances one frame of length dt under a constant anchor acceleration.
void spring_step(SpringState& s, const Vec3& anchor_accel, double dt, const GarmentParams& g);

struct SubjectAsset {
  std::uint64_t seed = 0;
  SkinnedMesh mesh;                  // shared template (subdivided)
  std::vector<PartLabel> gt_labels;
  Mat gt_colors;                     // N×3
  Vec gt_scales;                     // N
  Mat shell_offsets;                 // N×3 canonical garment displacement (zero off-garment)
  std::vector<int> cloth_vertices;
  GarmentParams garment;
};

SubjectAsset generate_subject(std::uint64_t seed, const BodyConfig& body = {});

/// Joint curves sampled at `fps` for `duration` seconds (frame count fps·duration).
std::vector<Pose> motion_track(const MotionSpec& spec, double fps, double duration, int joints);

/// World-space lag u_t of every cloth vertex, per frame (N_cloth×3).
std::vector<Mat> simulate_garment(const SubjectAsset& subject, const std::vector<Pose>& poses, double fps);

struct Sequence {
  MotionSpec motion;
  double fps = 30.0;
  Camera camera;
  std::vector<Pose> poses;
  std::vector<Mat> cloth_lag;            // per frame, N_cloth×3 world
  std::vector<RenderTargets> frames;     // GT renders
  std::vector<std::vector<int>> seg;     // per-pixel PartLabel id, kBackground for empty
};

constexpr int kBackgroundLabel = -1;

/// Posed GT positions of all vertices at frame t (garment shell, skinning, lag).
Mat gt_positions(const SubjectAsset& subject, const Pose& pose, const Mat& cloth_lag);

/// GT render and segmentation of one posed configuration.
RenderTargets render_gt(const SubjectAsset& subject, const Mat& posed, const Camera& camera,
                        std::vector<int>* seg = nullptr);

Sequence generate_sequence(const SubjectAsset& subject, const MotionSpec& motion, double fps, double duration,
                           const Camera& camera);

/// Monocular studio camera orbiting the body at `azimuth_deg` about +y.
Camera studio_camera(int width = 64, int height = 64, double azimuth_deg = 30.0);

/// Static capture of the first pose from `views` cameras evenly spaced in
/// azimuth, used to project segmentation labels onto the whole body.
struct Turnaround {
  Pose pose;
  std::vector<Camera> cameras;
  std::vector<RenderTargets> frames;
  std::vector<std::vector<int>> seg;
};

Turnaround turnaround_views(const SubjectAsset& subject, const Sequence& sequence, int views = 8);

struct PseudoGT {
  std::vector<Mat> normal;      // HW×3 encoded
  std::vector<Vec> depth;
  std::vector<Vec> silhouette;
  std::vector<std::vector<int>> seg;
};

/// Normal/depth/silhouette/segmentation maps with optional additive Gaussian
/// noise on normals and depth (silhouette and segmentation stay clean).
PseudoGT pseudo_gt_maps(const Sequence& sequence, double noise_sigma = 0.0, std::uint64_t seed = 0);

}  // namespace drape
