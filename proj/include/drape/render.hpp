#pragma once

// Differentiable rasterizer for isotropic, opaque Gaussians. Produces RGB
// (over white), encoded normals, depth and silhouette from one projection.

#include "drape/autodiff.hpp"
#include "drape/body.hpp"

#include <vector>

namespace drape {

struct RenderSettings {
  double cutoff = 3.0;       // support radius in σ
  double alpha_max = 0.999;  // opacity 1, clamped so occluded splats keep gradients
  double near_plane = 0.05;
  double normalize_eps = 1e-4;
  Vec3 background = Vec3::Ones();
};

struct ScreenSplat {
  int index = 0;     // source Gaussian
  double u = 0, v = 0;
  double depth = 0;
  double sigma = 0;  // pixels
  double radius = 0; // cutoff·σ
};

struct Projection {
  std::vector<ScreenSplat> splats;
  int culled = 0;
};

Projection project_gaussians(const Mat& positions, const Vec& scales, const Camera& camera,
                             const RenderSettings& settings = {});

/// Per-Gaussian payloads, indexed by ScreenSplat::index.
struct Payloads {
  Mat color;        // N×3
  Mat normal;       // N×3, already encoded as (n+1)/2
  Vec depth;        // N
};

struct RenderTargets {
  int width = 0, height = 0;
  Mat rgb;          // HW×3
  Mat normal;       // HW×3 encoded
  Vec depth;        // HW
  Vec silhouette;   // HW

  static RenderTargets blank(int width, int height, const Vec3& background);
  /// Packs channels into HW×8: rgb, normal, depth, silhouette.
  Mat packed() const;
  static RenderTargets unpack(const Mat& packed, int width, int height);
};

/// Front-to-back compositing state kept for the backward pass.
struct RasterState {
  int width = 0, height = 0;
  std::vector<ScreenSplat> sorted;
  std::vector<int> pixel_begin;       // CSR offsets, size HW+1
  struct Entry {
    int splat;                        // index into `sorted`
    double weight, alpha, transmittance;
  };
  std::vector<Entry> entries;
  Vec final_transmittance;
  Payloads payloads;
  RenderSettings settings;
};

RenderTargets rasterize(const std::vector<ScreenSplat>& splats, int width, int height, const Payloads& payloads,
                        const RenderSettings& settings = {}, RasterState* state = nullptr);

struct RasterGrads {
  Mat center;       // N×2 (du, dv)
  Vec sigma;        // N
  Mat color;        // N×3
  Mat normal;       // N×3 (w.r.t. encoded payload)
  Vec depth;        // N
};

/// Exact reverse of rasterize(). `grad_images` holds dL/d(channel) per pixel.
RasterGrads rasterize_backward(const RenderTargets& grad_images, const RasterState& state,
                               Eigen::Index gaussian_count);

/// Renders a posed Gaussian set (positions/normals already deformed).
RenderTargets render_channels(const Mat& posed_positions, const Vec& scales, const Mat& colors, const Mat& normals,
                              const Camera& camera, const RenderSettings& settings = {});

/// Differentiable render: returns the packed HW×8 image (see RenderTargets::packed).
ad::Var render_op(ad::Var positions, ad::Var scales, ad::Var colors, ad::Var normals, const Camera& camera,
                  const RenderSettings& settings = {});

}  // namespace drape
