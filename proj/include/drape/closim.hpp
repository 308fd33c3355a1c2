#pragma once

// Pose window → graph encoding per frame → gated recurrence → bounded
// per-frame offsets for cloth Gaussians.

#include "drape/autodiff.hpp"
#include "drape/body.hpp"
#include "drape/params.hpp"

#include <array>
#include <random>
#include <stdexcept>
#include <vector>

namespace drape {

struct BoundaryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PoseWindow {
  std::array<Pose, 3> poses;
  std::array<int, 3> frames{};  // indices into the source track
  double delta_t = 0.2;
};

/// Nearest frames to T−Δt, T, T+Δt. Throws BoundaryError if the window
/// reaches more than half a frame outside the track.
PoseWindow build_window(const std::vector<Pose>& track, double t, double delta_t = 0.2);

/// Same window with every slot replaced by the center pose.
PoseWindow collapse_window(const PoseWindow& window);

/// Clamps T so that build_window() succeeds on the track.
double clamp_window_center(const std::vector<Pose>& track, double t, double delta_t = 0.2);

struct ClothGraph {
  std::vector<int> nodes;                 // mesh vertex index per graph node
  std::vector<std::array<int, 2>> edges;  // local indices, i < j, unique
  ad::SparseMat adjacency;                // D^{-1/2}(A+I)D^{-1/2}

  /// Keeps mesh edges whose endpoints are both in `nodes`.
  static ClothGraph from_mesh(const std::vector<std::array<int, 2>>& mesh_edges, const std::vector<int>& nodes);
  /// Graph over local node ids 0..count-1.
  static ClothGraph from_local(int count, const std::vector<std::array<int, 2>>& local_edges);

  int size() const { return static_cast<int>(nodes.size()); }
};

ad::SparseMat normalized_adjacency(int count, const std::vector<std::array<int, 2>>& edges);

struct ClosimConfig {
  int pose_joints = 21;     // articulated joints; root excluded
  int canonical_dim = 96;
  int hidden = 128;         // GCN width and recurrent state
  int head_hidden = 64;
  double beta_x = 0.05;
  double beta_c = 0.2;
  double beta_s = 0.002;

  int pose_feature_dim() const { return 6 * pose_joints; }
  void validate() const;
};

/// First two rotation-matrix columns of joints 1..J, concatenated (1 × 6J).
Mat encode_pose_features(const Pose& pose, int pose_joints);

/// One graph convolution: Â X W + b.
ad::Var gcn_layer(ad::Var x, ad::Var weight, ad::Var bias, const ad::SparseMat& adjacency);

/// Per-frame offsets, N×7 each: Δx (3), Δc (3), Δs (1).
struct OffsetSequence {
  std::vector<Mat> frames;
  std::vector<double> timestamps;

  static Mat position(const Mat& f) { return f.leftCols(3); }
  static Mat color(const Mat& f) { return f.middleCols(3, 3); }
  static Vec scale(const Mat& f) { return f.col(6); }
};

Mat interpolate_offsets(const Mat& off_a, const Mat& off_b, double alpha);
ad::Var interpolate_offsets(ad::Var off_a, ad::Var off_b, double alpha);

class Closim {
 public:
  explicit Closim(ClosimConfig config = {});

  const ClosimConfig& config() const { return config_; }

  /// Adds "closim/..." parameters. The head's output layer starts at zero.
  void init_parameters(Parameters& params, std::mt19937_64& rng) const;

  ad::Var gcn_encode(Bound& p, ad::Var feat_cano, ad::Var feat_pose, const ClothGraph& graph) const;
  /// One recurrent step: returns the new hidden state.
  ad::Var gru_step(Bound& p, ad::Var x, ad::Var h) const;
  ad::Var head(Bound& p, ad::Var h) const;
  /// Offsets per step (N×7). `h0` defaults to zeros when id < 0.
  std::vector<ad::Var> gru_rollout(Bound& p, const std::vector<ad::Var>& z_seq, ad::Var h0 = {}) const;

  std::vector<ad::Var> forward(Bound& p, ad::Var feat_cano, const PoseWindow& window, const ClothGraph& graph,
                               ad::Var h0 = {}) const;
  OffsetSequence forward(const Parameters& params, const Mat& feat_cano, const PoseWindow& window,
                         const ClothGraph& graph) const;

 private:
  ClosimConfig config_;
};

}  // namespace drape
