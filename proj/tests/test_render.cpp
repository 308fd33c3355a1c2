#include "drape/render.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace drape;

namespace {

Camera front_camera() { return Camera::look_at(Vec3(0, 0, 2), Vec3::Zero(), 40.0, 16, 16); }

Payloads payloads_for(const Mat& colors, const Mat& normals, const Vec& depth) {
  return Payloads{colors, normals, depth};
}

}  // namespace

TEST_CASE("projection follows the pinhole model") {
  const Camera cam = front_camera();
  Mat p(1, 3);
  p << 0.1, -0.2, 0.3;
  const Projection pr = project_gaussians(p, Vec::Constant(1, 0.05), cam);
  REQUIRE(pr.splats.size() == 1);
  const Vec3 c = cam.to_camera(p.row(0).transpose());
  const auto& s = pr.splats[0];
  CHECK(s.u == doctest::Approx(cam.fx * c.x() / c.z() + cam.cx));
  CHECK(s.v == doctest::Approx(cam.fy * c.y() / c.z() + cam.cy));
  CHECK(s.depth == doctest::Approx(1.7));
  CHECK(s.sigma == doctest::Approx(0.05 * cam.fx / 1.7));
}

TEST_CASE("points behind the near plane are culled") {
  Mat p(2, 3);
  p << 0, 0, 0, 0, 0, 5;
  const Projection pr = project_gaussians(p, Vec::Constant(2, 0.05), front_camera());
  CHECK(pr.splats.size() == 1);
  CHECK(pr.culled == 1);
}

TEST_CASE("an empty scene renders the white background") {
  const RenderTargets r = rasterize({}, 8, 6, Payloads{}, RenderSettings{});
  CHECK(r.rgb.rows() == 48);
  CHECK((r.rgb.array() - 1.0).abs().maxCoeff() == 0.0);
  CHECK(r.silhouette.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("one splat composites over the background with a Gaussian footprint") {
  ScreenSplat s;
  s.index = 0;
  s.u = 4.3;
  s.v = 3.6;
  s.depth = 2.0;
  s.sigma = 1.2;
  s.radius = 3.0 * s.sigma;
  Mat color(1, 3), normal(1, 3);
  color << 0.2, 0.4, 0.9;
  normal << 0.5, 0.5, 1.0;
  const RenderTargets r = rasterize({s}, 8, 8, payloads_for(color, normal, Vec::Constant(1, 2.0)));
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      const double dx = x + 0.5 - s.u, dy = y + 0.5 - s.v, d2 = dx * dx + dy * dy;
      const double a = d2 < s.radius * s.radius ? std::min(0.999, std::exp(-d2 / (2 * s.sigma * s.sigma))) : 0.0;
      const Eigen::Index p = y * 8 + x;
      CHECK(r.silhouette(p) == doctest::Approx(a).epsilon(1e-14));
      for (int c = 0; c < 3; ++c) CHECK(r.rgb(p, c) == doctest::Approx(a * color(0, c) + 1.0 - a).epsilon(1e-14));
      if (a > 1e-4) {
        CHECK(r.depth(p) == doctest::Approx(2.0));
        CHECK(r.normal(p, 2) == doctest::Approx(1.0));
      }
    }
}

TEST_CASE("the nearer splat occludes by front-to-back compositing") {
  ScreenSplat near, far;
  near.index = 0;
  far.index = 1;
  near.u = far.u = 2.5;
  near.v = far.v = 2.5;
  near.sigma = far.sigma = 1.0;
  near.radius = far.radius = 3.0;
  near.depth = 1.0;
  far.depth = 3.0;
  Mat color(2, 3);
  color << 1, 0, 0, 0, 0, 1;
  const Mat normal = Mat::Constant(2, 3, 0.5);
  Vec depth(2);
  depth << 1.0, 3.0;
  RenderSettings settings;
  settings.alpha_max = 0.9;
  const RenderTargets r = rasterize({far, near}, 5, 5, payloads_for(color, normal, depth), settings);
  const Eigen::Index p = 2 * 5 + 2;  // both centers
  const double a = 0.9;
  CHECK(r.rgb(p, 0) == doctest::Approx(a + (1 - a) * (1 - a)));
  CHECK(r.rgb(p, 2) == doctest::Approx((1 - a) * a + (1 - a) * (1 - a)));
  CHECK(r.silhouette(p) == doctest::Approx(1 - (1 - a) * (1 - a)));
  CHECK(r.depth(p) == doctest::Approx((a * 1.0 + (1 - a) * a * 3.0) / (1 - (1 - a) * (1 - a))));
}

TEST_CASE("rendering does not depend on input order") {
  const Camera cam = front_camera();
  Mat pos(4, 3), col(4, 3), nrm(4, 3);
  pos << 0, 0, 0, 0.05, 0.02, 0.1, -0.1, 0.05, -0.05, 0.05, 0.02, 0.1;
  col << 1, 0, 0, 0, 1, 0, 0, 0, 1, 0.5, 0.5, 0.5;
  nrm = Mat::Zero(4, 3);
  nrm.col(2).setOnes();
  Vec sc = Vec::Constant(4, 0.06);
  const RenderTargets a = render_channels(pos, sc, col, nrm, cam);
  const std::vector<int> perm{3, 1, 0, 2};
  Mat p2(4, 3), c2(4, 3), n2(4, 3);
  Vec s2(4);
  for (int i = 0; i < 4; ++i) {
    p2.row(i) = pos.row(perm[i]);
    c2.row(i) = col.row(perm[i]);
    n2.row(i) = nrm.row(perm[i]);
    s2(i) = sc(perm[i]);
  }
  const RenderTargets b = render_channels(p2, s2, c2, n2, cam);
  CHECK(a.packed() == b.packed());
}

TEST_CASE("the differentiable render matches the value path and unit normals encode to [0,1]") {
  const Camera cam = front_camera();
  Mat pos(2, 3), col(2, 3), nrm(2, 3);
  pos << 0, 0, 0, 0.1, -0.1, 0.2;
  col << 0.3, 0.6, 0.9, 0.1, 0.1, 0.1;
  nrm << 0, 0, 1, 0, 1, 0;
  Vec sc = Vec::Constant(2, 0.08);
  ad::Tape t;
  const ad::Var img = render_op(t.variable(pos), t.variable(Mat(sc)), t.variable(col), t.variable(nrm), cam);
  const RenderTargets ref = render_channels(pos, sc, col, nrm, cam);
  CHECK(img.cols() == 8);
  CHECK(img.value() == ref.packed());
  CHECK(ref.normal.minCoeff() >= 0.0);
  CHECK(ref.normal.maxCoeff() <= 1.0 + 1e-12);
}

TEST_CASE("packed layout round-trips") {
  const Camera cam = front_camera();
  Mat pos(1, 3), col(1, 3), nrm(1, 3);
  pos << 0, 0, 0;
  col << 0.3, 0.6, 0.9;
  nrm << 0, 0, 1;
  const RenderTargets r = render_channels(pos, Vec::Constant(1, 0.1), col, nrm, cam);
  const RenderTargets u = RenderTargets::unpack(r.packed(), r.width, r.height);
  CHECK(u.rgb == r.rgb);
  CHECK(u.normal == r.normal);
  CHECK(u.depth == r.depth);
  CHECK(u.silhouette == r.silhouette);
}
