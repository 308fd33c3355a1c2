#include "drape/render.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <tuple>

namespace drape {

RenderTargets RenderTargets::blank(int width, int height, const Vec3& background) {
  RenderTargets t;
  t.width = width;
  t.height = height;
  const Eigen::Index n = static_cast<Eigen::Index>(width) * height;
  t.rgb.resize(n, 3);
  t.rgb.rowwise() = background.transpose();
  t.normal = Mat::Zero(n, 3);
  t.depth = Vec::Zero(n);
  t.silhouette = Vec::Zero(n);
  return t;
}

Mat RenderTargets::packed() const {
  Mat out(rgb.rows(), 8);
  out.leftCols(3) = rgb;
  out.middleCols(3, 3) = normal;
  out.col(6) = depth;
  out.col(7) = silhouette;
  return out;
}

RenderTargets RenderTargets::unpack(const Mat& packed, int width, int height) {
  DRAPE_REQUIRE(packed.rows() == static_cast<Eigen::Index>(width) * height && packed.cols() == 8,
                "unpack: expected HW×8");
  RenderTargets t;
  t.width = width;
  t.height = height;
  t.rgb = packed.leftCols(3);
  t.normal = packed.middleCols(3, 3);
  t.depth = packed.col(6);
  t.silhouette = packed.col(7);
  return t;
}

Projection project_gaussians(const Mat& positions, const Vec& scales, const Camera& camera,
                             const RenderSettings& settings) {
  DRAPE_REQUIRE(positions.cols() == 3 && positions.rows() == scales.size(), "project: shape mismatch");
  Projection out;
  out.splats.reserve(static_cast<std::size_t>(positions.rows()));
  for (Eigen::Index i = 0; i < positions.rows(); ++i) {
    const Vec3 c = camera.to_camera(positions.row(i).transpose());
    if (!(c.z() > settings.near_plane)) {
      ++out.culled;
      continue;
    }
    ScreenSplat s;
    s.index = static_cast<int>(i);
    s.u = camera.fx * c.x() / c.z() + camera.cx;
    s.v = camera.fy * c.y() / c.z() + camera.cy;
    s.depth = c.z();
    s.sigma = scales(i) * camera.fx / c.z();
    s.radius = settings.cutoff * s.sigma;
    DRAPE_REQUIRE(s.radius > 0, "project: Gaussian scales must be positive");
    out.splats.push_back(s);
  }
  return out;
}

namespace {

// Total order on splats that does not depend on input order: geometry first,
// then payload, so fully identical splats are interchangeable.
auto sort_key(const ScreenSplat& s, const Payloads& p) {
  const auto i = s.index;
  return std::make_tuple(s.depth, s.u, s.v, s.sigma, p.color(i, 0), p.color(i, 1), p.color(i, 2), p.normal(i, 0),
                         p.normal(i, 1), p.normal(i, 2));
}

}  // namespace

RenderTargets rasterize(const std::vector<ScreenSplat>& splats, int width, int height, const Payloads& payloads,
                        const RenderSettings& settings, RasterState* state) {
  RenderTargets out = RenderTargets::blank(width, height, settings.background);
  const Eigen::Index HW = static_cast<Eigen::Index>(width) * height;

  std::vector<ScreenSplat> sorted = splats;
  std::sort(sorted.begin(), sorted.end(),
            [&](const ScreenSplat& a, const ScreenSplat& b) { return sort_key(a, payloads) < sort_key(b, payloads); });

  // Pixel (x, y) has its center at (x + 0.5, y + 0.5).
  auto pixel_range = [&](const ScreenSplat& s, int& x0, int& x1, int& y0, int& y1) {
    x0 = std::max(0, static_cast<int>(std::ceil(s.u - s.radius - 0.5)));
    x1 = std::min(width - 1, static_cast<int>(std::floor(s.u + s.radius - 0.5)));
    y0 = std::max(0, static_cast<int>(std::ceil(s.v - s.radius - 0.5)));
    y1 = std::min(height - 1, static_cast<int>(std::floor(s.v + s.radius - 0.5)));
  };

  std::vector<int> count(static_cast<std::size_t>(HW) + 1, 0);
  for (const ScreenSplat& s : sorted) {
    int x0, x1, y0, y1;
    pixel_range(s, x0, x1, y0, y1);
    const double r2 = s.radius * s.radius;
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double dx = x + 0.5 - s.u, dy = y + 0.5 - s.v;
        if (dx * dx + dy * dy < r2) ++count[static_cast<std::size_t>(y) * width + x + 1];
      }
  }
  for (std::size_t i = 1; i < count.size(); ++i) count[i] += count[i - 1];
  std::vector<RasterState::Entry> entries(static_cast<std::size_t>(count.back()));
  std::vector<int> fill(count.begin(), count.end() - 1);
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    const ScreenSplat& s = sorted[k];
    int x0, x1, y0, y1;
    pixel_range(s, x0, x1, y0, y1);
    const double r2 = s.radius * s.radius;
    const double inv2s2 = 1.0 / (2.0 * s.sigma * s.sigma);
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double dx = x + 0.5 - s.u, dy = y + 0.5 - s.v;
        const double d2 = dx * dx + dy * dy;
        if (d2 >= r2) continue;
        const double w = std::exp(-d2 * inv2s2);
        entries[static_cast<std::size_t>(fill[static_cast<std::size_t>(y) * width + x]++)] =
            RasterState::Entry{static_cast<int>(k), w, std::min(settings.alpha_max, w), 0.0};
      }
  }

  Vec final_t(HW);
  for (Eigen::Index p = 0; p < HW; ++p) {
    double T = 1.0;
    Vec3 rgb = Vec3::Zero(), nrm = Vec3::Zero();
    double dep = 0.0;
    for (int e = count[static_cast<std::size_t>(p)]; e < count[static_cast<std::size_t>(p) + 1]; ++e) {
      auto& en = entries[static_cast<std::size_t>(e)];
      en.transmittance = T;
      const int gi = sorted[static_cast<std::size_t>(en.splat)].index;
      const double wgt = en.alpha * T;
      rgb += wgt * payloads.color.row(gi).transpose();
      nrm += wgt * payloads.normal.row(gi).transpose();
      dep += wgt * payloads.depth(gi);
      T *= 1.0 - en.alpha;
    }
    final_t(p) = T;
    const double A = 1.0 - T;
    out.rgb.row(p) = (rgb + T * settings.background).transpose();
    out.silhouette(p) = A;
    if (A > settings.normalize_eps) {
      out.normal.row(p) = (nrm / A).transpose();
      out.depth(p) = dep / A;
    }
  }

  if (state) {
    state->width = width;
    state->height = height;
    state->sorted = std::move(sorted);
    state->pixel_begin = std::move(count);
    state->entries = std::move(entries);
    state->final_transmittance = std::move(final_t);
    state->payloads = payloads;
    state->settings = settings;
  }
  return out;
}

RasterGrads rasterize_backward(const RenderTargets& g, const RasterState& st, Eigen::Index n) {
  DRAPE_REQUIRE(!st.pixel_begin.empty(), "rasterize_backward: missing forward state");
  DRAPE_REQUIRE(g.width == st.width && g.height == st.height, "rasterize_backward: resolution mismatch");
  RasterGrads out;
  out.center = Mat::Zero(n, 2);
  out.sigma = Vec::Zero(n);
  out.color = Mat::Zero(n, 3);
  out.normal = Mat::Zero(n, 3);
  out.depth = Vec::Zero(n);
  const auto& P = st.payloads;
  const Vec3 bg = st.settings.background;
  const Eigen::Index HW = static_cast<Eigen::Index>(st.width) * st.height;

  for (Eigen::Index p = 0; p < HW; ++p) {
    const int b = st.pixel_begin[static_cast<std::size_t>(p)], e = st.pixel_begin[static_cast<std::size_t>(p) + 1];
    if (b == e) continue;
    const double TK = st.final_transmittance(p);
    const double A = 1.0 - TK;
    const bool normalized = A > st.settings.normalize_eps;
    const Vec3 gC = g.rgb.row(p).transpose();
    const Vec3 gN = g.normal.row(p).transpose();
    const double gD = g.depth(p), gS = g.silhouette(p);

    // Normalized outputs Q = Num / A.
    Vec3 Qn = Vec3::Zero();
    double Qd = 0.0;
    if (normalized) {
      for (int k = b; k < e; ++k) {
        const auto& en = st.entries[static_cast<std::size_t>(k)];
        const int gi = st.sorted[static_cast<std::size_t>(en.splat)].index;
        Qn += en.alpha * en.transmittance * P.normal.row(gi).transpose();
        Qd += en.alpha * en.transmittance * P.depth(gi);
      }
      Qn /= A;
      Qd /= A;
    }

    Vec3 Sc = Vec3::Zero(), Sn = Vec3::Zero();
    double Sd = 0.0;
    for (int k = e - 1; k >= b; --k) {
      const auto& en = st.entries[static_cast<std::size_t>(k)];
      const ScreenSplat& s = st.sorted[static_cast<std::size_t>(en.splat)];
      const int gi = s.index;
      const double a = en.alpha, T = en.transmittance, aT = a * T;
      const double inv1ma = 1.0 / (1.0 - a);
      const Vec3 pc = P.color.row(gi).transpose();
      const Vec3 pn = P.normal.row(gi).transpose();
      const double pd = P.depth(gi);

      out.color.row(gi) += (aT * gC).transpose();
      double dalpha = gC.dot(pc * T - (Sc + bg * TK) * inv1ma) + gS * TK * inv1ma;
      if (normalized) {
        out.normal.row(gi) += (aT / A * gN).transpose();
        out.depth(gi) += aT / A * gD;
        dalpha += gN.dot((pn * T - Sn * inv1ma) / A - Qn * TK * inv1ma / A);
        dalpha += gD * ((pd * T - Sd * inv1ma) / A - Qd * TK * inv1ma / A);
      }
      Sc += aT * pc;
      Sn += aT * pn;
      Sd += aT * pd;

      if (en.weight >= st.settings.alpha_max) continue;  // clamped: dα/dw = 0
      const int x = static_cast<int>(p % st.width), y = static_cast<int>(p / st.width);
      const double dx = x + 0.5 - s.u, dy = y + 0.5 - s.v;
      const double s2 = s.sigma * s.sigma;
      const double dw = dalpha * en.weight;
      out.center(gi, 0) += dw * dx / s2;
      out.center(gi, 1) += dw * dy / s2;
      out.sigma(gi) += dw * (dx * dx + dy * dy) / (s2 * s.sigma);
    }
  }
  return out;
}

namespace {

Payloads make_payloads(const Mat& positions, const Mat& colors, const Mat& normals, const Camera& camera) {
  Payloads p;
  p.color = colors;
  p.normal = (normals.array() + 1.0) * 0.5;
  p.depth.resize(positions.rows());
  const Eigen::RowVector3d r2 = camera.rotation.row(2);
  for (Eigen::Index i = 0; i < positions.rows(); ++i) p.depth(i) = r2.dot(positions.row(i)) + camera.translation.z();
  return p;
}

}  // namespace

RenderTargets render_channels(const Mat& posed_positions, const Vec& scales, const Mat& colors, const Mat& normals,
                              const Camera& camera, const RenderSettings& settings) {
  DRAPE_REQUIRE(colors.rows() == posed_positions.rows() && normals.rows() == posed_positions.rows(),
                "render: attribute count mismatch");
  const Projection proj = project_gaussians(posed_positions, scales, camera, settings);
  return rasterize(proj.splats, camera.width, camera.height, make_payloads(posed_positions, colors, normals, camera),
                   settings);
}

ad::Var render_op(ad::Var positions, ad::Var scales, ad::Var colors, ad::Var normals, const Camera& camera,
                  const RenderSettings& settings) {
  const Mat& pos = positions.value();
  DRAPE_REQUIRE(scales.cols() == 1 && scales.rows() == pos.rows(), "render_op: scales must be N×1");
  const Projection proj = project_gaussians(pos, scales.value().col(0), camera, settings);
  auto state = std::make_shared<RasterState>();
  const RenderTargets img = rasterize(proj.splats, camera.width, camera.height,
                                      make_payloads(pos, colors.value(), normals.value(), camera), settings,
                                      state.get());
  ad::Var inputs[] = {positions, scales, colors, normals};
  return positions.tape->record(
      img.packed(),
      [positions, scales, colors, normals, camera, state](ad::Tape& t, const Mat& g) {
        const Mat& pos = positions.value();
        const Eigen::Index n = pos.rows();
        const RasterGrads rg = rasterize_backward(RenderTargets::unpack(g, camera.width, camera.height), *state, n);
        t.accumulate(colors, rg.color);
        t.accumulate(normals, Mat(0.5 * rg.normal));
        Mat gpos = Mat::Zero(n, 3);
        Mat gs = Mat::Zero(n, 1);
        for (const ScreenSplat& s : state->sorted) {
          const int i = s.index;
          const Vec3 c = camera.to_camera(pos.row(i).transpose());
          const double z = c.z(), iz = 1.0 / z;
          const double du = rg.center(i, 0), dv = rg.center(i, 1), dsig = rg.sigma(i);
          const double scale = scales.value()(i, 0);
          Vec3 gc;
          gc.x() = du * camera.fx * iz;
          gc.y() = dv * camera.fy * iz;
          gc.z() = -(du * camera.fx * c.x() + dv * camera.fy * c.y() + dsig * scale * camera.fx) * iz * iz +
                   rg.depth(i);
          gpos.row(i) = (camera.rotation.transpose() * gc).transpose();
          gs(i, 0) = dsig * camera.fx * iz;
        }
        t.accumulate(positions, gpos);
        t.accumulate(scales, gs);
      },
      inputs);
}

}  // namespace drape
