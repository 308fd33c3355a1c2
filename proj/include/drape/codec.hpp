#pragma once

// Identity latent code → triplane → per-vertex features → static canonical
// Gaussian avatar.

#include "drape/autodiff.hpp"
#include "drape/body.hpp"
#include "drape/params.hpp"

#include <array>
#include <random>

namespace drape {

enum class PartLabel : std::uint8_t { Face = 0, Hands = 1, Cloth = 2, Body = 3 };
constexpr int kPartCount = 4;
std::string to_string(PartLabel l);

struct TriplaneConfig {
  int channels = 32;
  int height = 128;
  int width = 128;
  // Canonical-space box mapped onto the grids (node-aligned corners).
  Vec3 box_min = Vec3(-0.95, -1.05, -0.30);
  Vec3 box_max = Vec3(0.95, 0.80, 0.30);
};

/// Three C×H×W feature grids stored as one (3·C) × (H·W) matrix; rows
/// [p·C, (p+1)·C) hold plane p, columns are row-major pixels.
///   plane 0 (T^x): horizontal = z, vertical = y
///   plane 1 (T^y): horizontal = x, vertical = z
///   plane 2 (T^z): horizontal = x, vertical = y
struct Triplane {
  TriplaneConfig config;
  Mat planes;
};

struct GaussianSet {
  Mat positions;  // N×3 canonical
  Mat colors;     // N×3 in [0,1]
  Vec scales;     // N, isotropic (m)
  std::vector<PartLabel> labels;
  static constexpr double kOpacity = 1.0;

  Eigen::Index size() const { return positions.rows(); }
};

struct CodecConfig {
  TriplaneConfig triplane;
  int latent_dim = 64;
  int base_channels = 8;  // channels of the dense output before upsampling
  int head_hidden = 64;
  double max_displacement = 0.05;
  double min_scale = 0.001;
  double scale_unit = 0.01;  // s = scale_unit·softplus(raw) + min_scale

  int feature_dim() const { return 3 * triplane.channels; }
  void validate() const;
};

struct AttributeVars {
  ad::Var displacement;  // N×3
  ad::Var colors;        // N×3
  ad::Var scales;        // N×1
};

struct StaticAvatarVars {
  ad::Var planes;
  ad::Var features;      // N×3C
  AttributeVars attributes;
  ad::Var positions;     // v_cano + Δx
};

// Differentiable building blocks.
ad::Var upsample2x_op(ad::Var maps, int height, int width);
ad::Var depthwise3x3_op(ad::Var maps, ad::Var kernels, ad::Var bias, int height, int width);
ad::Var triplane_sample_op(ad::Var planes, ad::Var points, const TriplaneConfig& config);

/// Value-level triplane sampling (border-clamped bilinear); N × 3C.
Mat sample_features(const Triplane& triplane, const Mat& points);

class AvatarCodec {
 public:
  explicit AvatarCodec(CodecConfig config = {});

  const CodecConfig& config() const { return config_; }

  /// Adds decoder and head parameters ("codec/...") to the store.
  void init_parameters(Parameters& params, std::mt19937_64& rng) const;
  Mat init_latent(std::mt19937_64& rng) const;

  ad::Var decode_triplane(Bound& p, ad::Var latent) const;
  AttributeVars decode_attributes(Bound& p, ad::Var features) const;
  StaticAvatarVars build_static_avatar(Bound& p, ad::Var latent, const SkinnedMesh& mesh) const;

  // Value-level conveniences.
  Triplane decode_triplane(const Parameters& params, const Mat& latent) const;
  GaussianSet build_static_avatar(const Parameters& params, const Mat& latent, const SkinnedMesh& mesh) const;

 private:
  CodecConfig config_;
};

}  // namespace drape
