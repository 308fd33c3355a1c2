#pragma once

// Decomposed, animatable avatar: static Gaussians from the codec, per-frame
// cloth offsets from CloSim, skinning, rendering and clothing transfer.

#include "drape/closim.hpp"
#include "drape/codec.hpp"
#include "drape/parts.hpp"
#include "drape/render.hpp"

#include <string>
#include <vector>

namespace drape {

/// Lower bound on scales after dynamic offsets are applied (m).
constexpr double kMinScale = 1e-4;

struct Avatar {
  SkinnedMesh surface;        // skeleton, faces and per-vertex skin weights
  Mat surface_canonical;      // V×3 static positions of the surface
  GaussianSet gaussians;      // canonical static attributes; labels from `parts`
  Mat skin_weights;           // per Gaussian
  std::vector<int> surface_vertex;  // surface vertex each Gaussian is bound to
  Mat features;               // per Gaussian, N×3C
  Partition parts;
  ClothGraph graph;           // nodes are Gaussian indices of parts[Cloth]

  Eigen::Index size() const { return gaussians.size(); }
  const std::vector<int>& cloth() const { return parts[static_cast<int>(PartLabel::Cloth)]; }
  /// True when Gaussian i sits on surface vertex i for every i.
  bool native() const;
};

/// One Gaussian per mesh vertex, features sampled at the canonical vertices.
Avatar build_avatar(const AvatarCodec& codec, const Parameters& params, const Mat& latent, const SkinnedMesh& mesh,
                    const Partition& parts);

/// Which window output supervises or renders frame `frame`: the center slot
/// when the frame is the window center, otherwise the endpoint interpolation.
struct OffsetSelection {
  bool center = true;
  double alpha = 0.5;
};
OffsetSelection select_offsets(const PoseWindow& window, const std::vector<Pose>& track, int frame);

/// Window used to render frame `frame` of a track (center clamped to the track).
PoseWindow frame_window(const std::vector<Pose>& track, int frame, double delta_t, bool collapse);

/// Cloth offsets (N_cloth×7) for one frame; zeros when `closim` is null.
Mat cloth_offsets_at(const Avatar& avatar, const Closim* closim, const Parameters& params,
                     const std::vector<Pose>& track, int frame, double delta_t, bool collapse);

/// Static attributes plus cloth offsets: colors clamped to [0,1], scales ≥ kMinScale.
GaussianSet apply_offsets(const GaussianSet& g, const std::vector<int>& cloth, const Mat& offsets);

struct PosedAvatar {
  Mat positions;  // world
  Mat normals;    // unit
  Mat colors;
  Vec scales;
};

PosedAvatar pose_avatar(const Avatar& avatar, const GaussianSet& canonical, const Pose& pose);

enum class RenderSubset { All, ClothOnly, BodyOnly };

RenderTargets render_avatar(const Avatar& avatar, const Mat& cloth_offsets, const Pose& pose, const Camera& camera,
                            RenderSubset subset = RenderSubset::All);

class TransferError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Target keeps its face, hands and body Gaussians bitwise; the source cloth
/// is appended after a per-axis rescale by the torso box ratio and rebound to
/// the nearest target surface vertex.
Avatar transfer_clothing(const Avatar& source, const Avatar& target);

/// Axis-aligned box of surface vertices with the Torso hint (canonical, static).
std::pair<Vec3, Vec3> torso_box(const Avatar& avatar);

}  // namespace drape
