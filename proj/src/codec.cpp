#include "drape/codec.hpp"

#include <cmath>

namespace drape {

std::string to_string(PartLabel l) {
  switch (l) {
    case PartLabel::Face: return "face";
    case PartLabel::Hands: return "hands";
    case PartLabel::Cloth: return "cloth";
    case PartLabel::Body: return "body";
  }
  return "unknown";
}

void CodecConfig::validate() const {
  if (triplane.channels < 1 || triplane.height < 8 || triplane.width < 8)
    throw ConfigError("triplane must be at least 1×8×8");
  if (triplane.height % 4 != 0 || triplane.width % 4 != 0)
    throw ConfigError("triplane height/width must be divisible by 4 (two ×2 upsampling stages)");
  if ((triplane.box_max - triplane.box_min).minCoeff() <= 0) throw ConfigError("triplane box is empty");
  if (latent_dim < 1 || base_channels < 1 || head_hidden < 1) throw ConfigError("decoder widths must be positive");
  if (!(max_displacement > 0) || !(min_scale > 0) || !(scale_unit > 0))
    throw ConfigError("displacement bound and scale parameters must be positive");
}

namespace {

struct Lerp1d {
  std::vector<int> i0, i1;
  std::vector<double> f;
};

// Half-pixel aligned ×2 bilinear resampling weights along one axis.
Lerp1d upsample_weights(int n) {
  Lerp1d w;
  const int m = 2 * n;
  w.i0.resize(m);
  w.i1.resize(m);
  w.f.resize(m);
  for (int o = 0; o < m; ++o) {
    double src = std::clamp((o + 0.5) / 2.0 - 0.5, 0.0, static_cast<double>(n - 1));
    int a = std::min(static_cast<int>(std::floor(src)), n - 1);
    int b = std::min(a + 1, n - 1);
    w.i0[o] = a;
    w.i1[o] = b;
    w.f[o] = src - a;
  }
  return w;
}

}  // namespace

ad::Var upsample2x_op(ad::Var maps, int height, int width) {
  DRAPE_REQUIRE(maps.cols() == static_cast<Eigen::Index>(height) * width, "upsample2x: size mismatch");
  const Lerp1d wy = upsample_weights(height), wx = upsample_weights(width);
  const int H2 = 2 * height, W2 = 2 * width;
  const Mat& in = maps.value();
  Mat out(in.rows(), static_cast<Eigen::Index>(H2) * W2);
  for (Eigen::Index c = 0; c < in.rows(); ++c) {
    const double* src = in.row(c).data();
    double* dst = out.row(c).data();
    for (int y = 0; y < H2; ++y) {
      const double fy = wy.f[y];
      const double* r0 = src + static_cast<std::ptrdiff_t>(wy.i0[y]) * width;
      const double* r1 = src + static_cast<std::ptrdiff_t>(wy.i1[y]) * width;
      for (int x = 0; x < W2; ++x) {
        const double fx = wx.f[x];
        const int a = wx.i0[x], b = wx.i1[x];
        dst[y * W2 + x] = (1 - fy) * ((1 - fx) * r0[a] + fx * r0[b]) + fy * ((1 - fx) * r1[a] + fx * r1[b]);
      }
    }
  }
  ad::Var inputs[] = {maps};
  return maps.tape->record(
      std::move(out),
      [maps, wy, wx, height, width, H2, W2](ad::Tape& t, const Mat& g) {
        Mat gi = Mat::Zero(g.rows(), static_cast<Eigen::Index>(height) * width);
        for (Eigen::Index c = 0; c < g.rows(); ++c) {
          const double* go = g.row(c).data();
          double* dst = gi.row(c).data();
          for (int y = 0; y < H2; ++y) {
            const double fy = wy.f[y];
            double* r0 = dst + static_cast<std::ptrdiff_t>(wy.i0[y]) * width;
            double* r1 = dst + static_cast<std::ptrdiff_t>(wy.i1[y]) * width;
            for (int x = 0; x < W2; ++x) {
              const double v = go[y * W2 + x];
              const double fx = wx.f[x];
              const int a = wx.i0[x], b = wx.i1[x];
              r0[a] += (1 - fy) * (1 - fx) * v;
              r0[b] += (1 - fy) * fx * v;
              r1[a] += fy * (1 - fx) * v;
              r1[b] += fy * fx * v;
            }
          }
        }
        t.accumulate(maps, gi);
      },
      inputs);
}

ad::Var depthwise3x3_op(ad::Var maps, ad::Var kernels, ad::Var bias, int height, int width) {
  const Mat& in = maps.value();
  DRAPE_REQUIRE(in.cols() == static_cast<Eigen::Index>(height) * width, "depthwise3x3: size mismatch");
  DRAPE_REQUIRE(kernels.rows() == in.rows() && kernels.cols() == 9, "depthwise3x3: kernel shape");
  DRAPE_REQUIRE(bias.rows() == in.rows() && bias.cols() == 1, "depthwise3x3: bias shape");
  const Mat& k = kernels.value();
  Mat out(in.rows(), in.cols());
  for (Eigen::Index c = 0; c < in.rows(); ++c) {
    const double* src = in.row(c).data();
    double* dst = out.row(c).data();
    const double b = bias.value()(c, 0);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        double acc = b;
        for (int dy = -1; dy <= 1; ++dy) {
          const int yy = y + dy;
          if (yy < 0 || yy >= height) continue;
          for (int dx = -1; dx <= 1; ++dx) {
            const int xx = x + dx;
            if (xx < 0 || xx >= width) continue;
            acc += k(c, (dy + 1) * 3 + dx + 1) * src[yy * width + xx];
          }
        }
        dst[y * width + x] = acc;
      }
  }
  ad::Var inputs[] = {maps, kernels, bias};
  return maps.tape->record(
      std::move(out),
      [maps, kernels, bias, height, width](ad::Tape& t, const Mat& g) {
        const Mat& in = maps.value();
        const Mat& k = kernels.value();
        Mat gi = Mat::Zero(in.rows(), in.cols());
        Mat gk = Mat::Zero(k.rows(), 9);
        Mat gb(in.rows(), 1);
        for (Eigen::Index c = 0; c < in.rows(); ++c) {
          const double* src = in.row(c).data();
          const double* go = g.row(c).data();
          double* dst = gi.row(c).data();
          gb(c, 0) = g.row(c).sum();
          for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
              const double v = go[y * width + x];
              for (int dy = -1; dy <= 1; ++dy) {
                const int yy = y + dy;
                if (yy < 0 || yy >= height) continue;
                for (int dx = -1; dx <= 1; ++dx) {
                  const int xx = x + dx;
                  if (xx < 0 || xx >= width) continue;
                  const int ki = (dy + 1) * 3 + dx + 1;
                  dst[yy * width + xx] += k(c, ki) * v;
                  gk(c, ki) += src[yy * width + xx] * v;
                }
              }
            }
        }
        t.accumulate(maps, gi);
        t.accumulate(kernels, gk);
        t.accumulate(bias, gb);
      },
      inputs);
}

namespace {

// Axes (horizontal, vertical) of each plane.
constexpr int kPlaneAxes[3][2] = {{2, 1}, {0, 2}, {0, 1}};

struct GridCoord {
  int x0, y0;
  double fx, fy;
  double dudp, dvdp;  // 0 where clamped
};

GridCoord grid_coord(const Vec3& p, int plane, const TriplaneConfig& cfg) {
  const int ah = kPlaneAxes[plane][0], av = kPlaneAxes[plane][1];
  const int W = cfg.width, H = cfg.height;
  const double sh = (W - 1) / (cfg.box_max[ah] - cfg.box_min[ah]);
  const double sv = (H - 1) / (cfg.box_max[av] - cfg.box_min[av]);
  double u = (p[ah] - cfg.box_min[ah]) * sh;
  double v = (p[av] - cfg.box_min[av]) * sv;
  GridCoord g{};
  g.dudp = sh;
  g.dvdp = sv;
  if (u <= 0.0) { u = 0.0; g.dudp = 0.0; }
  if (u >= W - 1) { u = W - 1; g.dudp = 0.0; }
  if (v <= 0.0) { v = 0.0; g.dvdp = 0.0; }
  if (v >= H - 1) { v = H - 1; g.dvdp = 0.0; }
  g.x0 = std::min(static_cast<int>(std::floor(u)), W - 2);
  g.y0 = std::min(static_cast<int>(std::floor(v)), H - 2);
  g.fx = u - g.x0;
  g.fy = v - g.y0;
  return g;
}

Mat sample_planes(const Mat& planes, const Mat& points, const TriplaneConfig& cfg) {
  const int C = cfg.channels, W = cfg.width;
  DRAPE_REQUIRE(planes.rows() == 3 * C && planes.cols() == static_cast<Eigen::Index>(cfg.height) * W,
                "triplane sample: plane shape mismatch");
  DRAPE_REQUIRE(points.cols() == 3, "triplane sample: points must be N×3");
  Mat out(points.rows(), 3 * C);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const Vec3 p = points.row(i).transpose();
    for (int plane = 0; plane < 3; ++plane) {
      const GridCoord g = grid_coord(p, plane, cfg);
      const Eigen::Index i00 = static_cast<Eigen::Index>(g.y0) * W + g.x0, i01 = i00 + 1, i10 = i00 + W,
                         i11 = i10 + 1;
      const double w00 = (1 - g.fx) * (1 - g.fy), w01 = g.fx * (1 - g.fy), w10 = (1 - g.fx) * g.fy,
                   w11 = g.fx * g.fy;
      for (int c = 0; c < C; ++c) {
        const auto row = planes.row(plane * C + c);
        out(i, plane * C + c) = w00 * row(i00) + w01 * row(i01) + w10 * row(i10) + w11 * row(i11);
      }
    }
  }
  return out;
}

}  // namespace

Mat sample_features(const Triplane& triplane, const Mat& points) {
  return sample_planes(triplane.planes, points, triplane.config);
}

ad::Var triplane_sample_op(ad::Var planes, ad::Var points, const TriplaneConfig& cfg) {
  Mat out = sample_planes(planes.value(), points.value(), cfg);
  ad::Var inputs[] = {planes, points};
  return planes.tape->record(
      std::move(out),
      [planes, points, cfg](ad::Tape& t, const Mat& g) {
        const Mat& pl = planes.value();
        const Mat& pts = points.value();
        const int C = cfg.channels, W = cfg.width;
        Mat gpl;
        if (planes.requires_grad()) gpl = Mat::Zero(pl.rows(), pl.cols());
        Mat gpt = Mat::Zero(pts.rows(), 3);
        for (Eigen::Index i = 0; i < pts.rows(); ++i) {
          const Vec3 p = pts.row(i).transpose();
          for (int plane = 0; plane < 3; ++plane) {
            const GridCoord gc = grid_coord(p, plane, cfg);
            const Eigen::Index i00 = static_cast<Eigen::Index>(gc.y0) * W + gc.x0, i01 = i00 + 1, i10 = i00 + W,
                               i11 = i10 + 1;
            const double w00 = (1 - gc.fx) * (1 - gc.fy), w01 = gc.fx * (1 - gc.fy), w10 = (1 - gc.fx) * gc.fy,
                         w11 = gc.fx * gc.fy;
            double du = 0.0, dv = 0.0;
            for (int c = 0; c < C; ++c) {
              const double go = g(i, plane * C + c);
              const Eigen::Index r = plane * C + c;
              if (planes.requires_grad()) {
                gpl(r, i00) += w00 * go;
                gpl(r, i01) += w01 * go;
                gpl(r, i10) += w10 * go;
                gpl(r, i11) += w11 * go;
              }
              const double f00 = pl(r, i00), f01 = pl(r, i01), f10 = pl(r, i10), f11 = pl(r, i11);
              du += go * ((1 - gc.fy) * (f01 - f00) + gc.fy * (f11 - f10));
              dv += go * ((1 - gc.fx) * (f10 - f00) + gc.fx * (f11 - f01));
            }
            gpt(i, kPlaneAxes[plane][0]) += du * gc.dudp;
            gpt(i, kPlaneAxes[plane][1]) += dv * gc.dvdp;
          }
        }
        if (planes.requires_grad()) t.accumulate(planes, gpl);
        t.accumulate(points, gpt);
      },
      inputs);
}

AvatarCodec::AvatarCodec(CodecConfig config) : config_(std::move(config)) { config_.validate(); }

void AvatarCodec::init_parameters(Parameters& params, std::mt19937_64& rng) const {
  const auto& tp = config_.triplane;
  const int C = tp.channels, C0 = config_.base_channels;
  const Eigen::Index base_pixels = static_cast<Eigen::Index>(tp.height / 4) * (tp.width / 4);
  const Eigen::Index dense_out = 3 * C0 * base_pixels;
  params.add("codec/dense/w", normal_matrix(config_.latent_dim, dense_out, 0.5 / std::sqrt(config_.latent_dim), rng));
  params.add("codec/dense/b", normal_matrix(1, dense_out, 1.0, rng));
  const int widths[2][2] = {{C0, C}, {C, C}};
  for (int s = 0; s < 2; ++s) {
    const int cin = widths[s][0], cout = widths[s][1];
    const std::string pre = "codec/up" + std::to_string(s + 1) + "/";
    params.add(pre + "dw_k", normal_matrix(3 * cin, 9, 1.0 / 3.0, rng));
    params.add(pre + "dw_b", Mat::Zero(3 * cin, 1));
    for (int p = 0; p < 3; ++p) {
      params.add(pre + "pw" + std::to_string(p), glorot(cout, cin, rng));
      params.add(pre + "pb" + std::to_string(p), Mat::Zero(cout, 1));
      if (cin != cout) params.add(pre + "skip" + std::to_string(p), glorot(cout, cin, rng));
    }
  }
  const int F = config_.feature_dim(), Hh = config_.head_hidden;
  params.add("codec/geo/w1", glorot(F, Hh, rng));
  params.add("codec/geo/b1", Mat::Zero(1, Hh));
  params.add("codec/geo/w2", Mat::Zero(Hh, 3));
  params.add("codec/geo/b2", Mat::Zero(1, 3));
  params.add("codec/app/w1", glorot(F, Hh, rng));
  params.add("codec/app/b1", Mat::Zero(1, Hh));
  params.add("codec/app/w2", Mat::Zero(Hh, 4));
  params.add("codec/app/b2", Mat::Zero(1, 4));
}

Mat AvatarCodec::init_latent(std::mt19937_64& rng) const { return normal_matrix(1, config_.latent_dim, 1.0, rng); }

ad::Var AvatarCodec::decode_triplane(Bound& p, ad::Var latent) const {
  DRAPE_REQUIRE(latent.rows() == 1 && latent.cols() == config_.latent_dim, "latent code must be 1×latent_dim");
  const auto& tp = config_.triplane;
  const int C = tp.channels, C0 = config_.base_channels;
  int h = tp.height / 4, w = tp.width / 4;
  ad::Var x = ad::linear(latent, p("codec/dense/w"), p("codec/dense/b"));
  x = ad::reshape(x, 3 * C0, static_cast<Eigen::Index>(h) * w);
  const int widths[2][2] = {{C0, C}, {C, C}};
  for (int s = 0; s < 2; ++s) {
    const int cin = widths[s][0], cout = widths[s][1];
    const std::string pre = "codec/up" + std::to_string(s + 1) + "/";
    ad::Var up = upsample2x_op(x, h, w);
    h *= 2;
    w *= 2;
    ad::Var act = ad::silu(depthwise3x3_op(up, p(pre + "dw_k"), p(pre + "dw_b"), h, w));
    std::vector<ad::Var> planes;
    for (int pl = 0; pl < 3; ++pl) {
      std::vector<int> rows(cin);
      for (int c = 0; c < cin; ++c) rows[c] = pl * cin + c;
      ad::Var a = ad::gather_rows(act, rows);
      ad::Var u = ad::gather_rows(up, rows);
      const std::string id = std::to_string(pl);
      ad::Var y = ad::add_col(ad::matmul(p(pre + "pw" + id), a), p(pre + "pb" + id));
      ad::Var skip = cin == cout ? u : ad::matmul(p(pre + "skip" + id), u);
      planes.push_back(ad::add(y, skip));
    }
    x = ad::concat_rows(planes);
  }
  return x;
}

AttributeVars AvatarCodec::decode_attributes(Bound& p, ad::Var features) const {
  DRAPE_REQUIRE(features.cols() == config_.feature_dim(), "decode_attributes: feature width mismatch");
  AttributeVars out;
  ad::Var g = ad::silu(ad::linear(features, p("codec/geo/w1"), p("codec/geo/b1")));
  out.displacement =
      ad::scale(ad::tanh(ad::linear(g, p("codec/geo/w2"), p("codec/geo/b2"))), config_.max_displacement);
  ad::Var a = ad::silu(ad::linear(features, p("codec/app/w1"), p("codec/app/b1")));
  ad::Var raw = ad::linear(a, p("codec/app/w2"), p("codec/app/b2"));
  out.colors = ad::sigmoid(ad::slice_cols(raw, 0, 3));
  out.scales = ad::add_scalar(ad::scale(ad::softplus(ad::slice_cols(raw, 3, 1)), config_.scale_unit),
                              config_.min_scale);
  return out;
}

StaticAvatarVars AvatarCodec::build_static_avatar(Bound& p, ad::Var latent, const SkinnedMesh& mesh) const {
  StaticAvatarVars out;
  out.planes = decode_triplane(p, latent);
  ad::Var cano = p.tape().constant(mesh.vertices);
  out.features = triplane_sample_op(out.planes, cano, config_.triplane);
  out.attributes = decode_attributes(p, out.features);
  out.positions = ad::add(cano, out.attributes.displacement);
  return out;
}

Triplane AvatarCodec::decode_triplane(const Parameters& params, const Mat& latent) const {
  ad::Tape tape;
  Bound p(tape, params, false);
  Triplane t;
  t.config = config_.triplane;
  t.planes = decode_triplane(p, tape.constant(latent)).value();
  return t;
}

GaussianSet AvatarCodec::build_static_avatar(const Parameters& params, const Mat& latent,
                                             const SkinnedMesh& mesh) const {
  ad::Tape tape;
  Bound p(tape, params, false);
  const StaticAvatarVars v = build_static_avatar(p, tape.constant(latent), mesh);
  GaussianSet g;
  g.positions = v.positions.value();
  g.colors = v.attributes.colors.value();
  g.scales = v.attributes.scales.value().col(0);
  g.labels.assign(static_cast<std::size_t>(g.positions.rows()), PartLabel::Body);
  return g;
}

}  // namespace drape
