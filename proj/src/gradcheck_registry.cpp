// Registry of gradient checks: one entry per differentiable op, run by the
// `gradcheck` subcommand and the test suite.

#include "drape/body.hpp"
#include "drape/closim.hpp"
#include "drape/codec.hpp"
#include "drape/diffcheck.hpp"
#include "drape/losses.hpp"
#include "drape/parts.hpp"
#include "drape/render.hpp"

#include <cmath>
#include <random>

namespace drape {

namespace {

using ad::Tape;
using ad::Var;

Mat uniform(Eigen::Index r, Eigen::Index c, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(lo, hi);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  return m;
}

// Deterministic weight pattern in [-1, 1].
Mat uniform_like(Eigen::Index r, Eigen::Index c) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std::sin(1.3 * static_cast<double>(i) + 0.7);
  return m;
}

// Σ W ⊙ y with fixed random W: turns any op into a scalar test function.
Var project(Var y, const Mat& w) { return ad::sum(ad::mul(y, y.tape->constant(w))); }

GradCheckEntry entry(std::string name, TapeFunction f, Mat x, CheckOptions o = {}) {
  return {name, [name, f = std::move(f), x = std::move(x), o] { return check_op(name, f, x, o); }};
}

// Checks one named parameter of a model function.
GradCheckEntry param_entry(std::string name, std::shared_ptr<const Parameters> base, std::string param,
                           std::function<Var(Bound&)> f, CheckOptions o = {}) {
  return {name, [=] {
            const TapeFunction g = [&](Tape& tape, Var x) {
              Bound p(tape, *base, false);
              p.bind(param, x);  // the probed parameter is the tape input
              return f(p);
            };
            return check_op(name, g, base->at(param), o);
          }};
}

// Perturbed octahedron: closed, non-degenerate.
std::pair<Mat, Faces> small_mesh(std::mt19937_64& rng) {
  Mat v(6, 3);
  v << 1, 0, 0, -1, 0, 0, 0, 1, 0, 0, -1, 0, 0, 0, 1, 0, 0, -1;
  v += uniform(6, 3, -0.15, 0.15, rng);
  Faces f(8, 3);
  f << 0, 2, 4, 2, 1, 4, 1, 3, 4, 3, 0, 4, 2, 0, 5, 1, 2, 5, 3, 1, 5, 0, 3, 5;
  return {v, f};
}

struct SplatScene {
  Mat positions, colors, normals;
  Mat scales;  // N×1
  Camera camera;
};

// Rejects scenes where a pixel center sits near a splat's cutoff circle, near
// the alpha clamp, or where two depths nearly tie (sorting swap).
bool smooth_scene(const SplatScene& s, const RenderSettings& rs) {
  const Projection proj = project_gaussians(s.positions, s.scales.col(0), s.camera, rs);
  if (proj.culled) return false;
  for (std::size_t a = 0; a < proj.splats.size(); ++a)
    for (std::size_t b = a + 1; b < proj.splats.size(); ++b)
      if (std::abs(proj.splats[a].depth - proj.splats[b].depth) < 1e-3) return false;
  for (const ScreenSplat& sp : proj.splats)
    for (int y = 0; y < s.camera.height; ++y)
      for (int x = 0; x < s.camera.width; ++x) {
        const double d = std::hypot(x + 0.5 - sp.u, y + 0.5 - sp.v);
        if (std::abs(d - sp.radius) < 0.02) return false;
        if (d < 0.2 * sp.sigma) return false;
      }
  return true;
}

SplatScene splat_scene(int n, int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const RenderSettings rs;
  for (;;) {
    SplatScene s;
    s.camera = Camera::look_at(Vec3(0, 0, 2), Vec3::Zero(), 1.6 * size, size, size);
    s.positions = uniform(n, 3, -0.3, 0.3, rng);
    s.scales = uniform(n, 1, 0.03, 0.08, rng);
    s.colors = uniform(n, 3, 0.05, 0.95, rng);
    s.normals = uniform(n, 3, -1.0, 1.0, rng);
    for (Eigen::Index i = 0; i < n; ++i) s.normals.row(i).normalize();
    if (smooth_scene(s, rs)) return s;
  }
}

}  // namespace

std::vector<GradCheckEntry> gradient_registry() {
  std::vector<GradCheckEntry> reg;
  std::mt19937_64 rng(2024);

  // --- Tape primitives -----------------------------------------------------
  {
    const Mat a = uniform(4, 3, 0.2, 1.2, rng);
    const Mat b = uniform(4, 3, 0.2, 1.2, rng);
    const Mat w = uniform(4, 3, -1, 1, rng);
    const Mat m = uniform(3, 5, -1, 1, rng);
    const Mat row = uniform(1, 3, -1, 1, rng);
    const Mat col = uniform(4, 1, 0.5, 1.5, rng);
    reg.push_back(entry("autodiff/elementwise", [=](Tape& t, Var x) {
      Var y = ad::add(ad::mul(ad::tanh(x), ad::sigmoid(x)), ad::softplus(ad::scale(x, -0.7)));
      y = ad::add(y, ad::div(ad::silu(x), ad::add_scalar(ad::square(x), 1.0)));
      y = ad::add(y, ad::sqrt(ad::add_scalar(x, 0.5)));
      y = ad::sub(y, ad::abs(ad::sub(x, t.constant(b))));
      y = ad::add(y, ad::clamp(x, -5.0, 5.0));
      y = ad::add(y, ad::max_scalar(x, -5.0));
      return project(y, w);
    }, a));
    reg.push_back(entry("autodiff/structure", [=](Tape& t, Var x) {
      Var parts[] = {x, ad::slice_cols(x, 1, 2)};
      Var c = ad::concat_cols(parts);  // 4×5
      Var r = ad::reshape(ad::transpose(c), 4, 5);
      Var s = ad::scatter_rows(ad::gather_rows(r, {3, 0, 0, 2}), {1, 4, 2, 0}, 6);
      Var z = ad::mul_col(ad::add_col(x, t.constant(col)), ad::sum_cols(x));
      Var q = ad::mul_row(ad::add_row(z, t.constant(row)), t.constant(row));
      Var stack[] = {q, ad::broadcast_rows(ad::sum_rows(x), 2)};
      Var terms[] = {project(ad::concat_rows(stack), uniform_like(6, 3)), project(s, uniform_like(6, 5))};
      const double wts[] = {1.0, 0.5};
      return ad::weighted_sum(terms, wts);
    }, a));
    reg.push_back(entry("autodiff/matmul+linear", [=](Tape& t, Var x) {
      Var y = ad::linear(x, t.constant(m), t.constant(Mat::Ones(1, 5)));
      Var z = ad::matmul(ad::transpose(x), t.constant(Mat(w)));
      return ad::add(project(ad::tanh(y), Mat::Constant(4, 5, 0.5)), ad::mean(ad::square(z)));
    }, a));
    ad::SparseMat sp(5, 4);
    std::vector<Eigen::Triplet<double>> trip = {{0, 1, 0.5}, {1, 0, -1.0}, {2, 3, 2.0}, {4, 2, 0.3}, {4, 0, 1.1}};
    sp.setFromTriplets(trip.begin(), trip.end());
    reg.push_back(entry("autodiff/spmm", [=](Tape&, Var x) {
      return project(ad::square(ad::spmm(sp, x)), Mat::Constant(5, 3, 0.7));
    }, a));
  }

  // --- Body model ----------------------------------------------------------
  {
    auto mesh = std::make_shared<SkinnedMesh>(build_canonical_body(BodyConfig{.subdivision_levels = 0}));
    const int J = mesh->joint_count();
    Mat weights = uniform(6, J, 0.0, 1.0, rng);
    weights = (weights.array().colwise() / weights.rowwise().sum().array()).matrix();
    Pose pose = Pose::identity(J);
    pose.joint_rotations = uniform(J, 3, -0.6, 0.6, rng);
    pose.root_translation = Vec3(0.1, -0.2, 0.3);
    const Mat pts = uniform(6, 3, -0.5, 0.5, rng);
    const Mat w = uniform(6, 3, -1, 1, rng);
    reg.push_back(entry("body/lbs", [=](Tape&, Var x) { return project(lbs_op(x, weights, pose, *mesh), w); }, pts));
    auto [v, f] = small_mesh(rng);
    const Mat wn = uniform(6, 3, -1, 1, rng);
    reg.push_back(entry("body/vertex_normals", [=, f = f](Tape&, Var x) {
      return project(vertex_normals_op(x, f), wn);
    }, v));
  }

  // --- Codec ---------------------------------------------------------------
  {
    const int H = 4, W = 6, C = 3;
    const Mat maps = uniform(C, H * W, -1, 1, rng);
    const Mat kern = uniform(C, 9, -1, 1, rng);
    const Mat bias = uniform(C, 1, -1, 1, rng);
    reg.push_back(entry("codec/upsample2x", [=](Tape&, Var x) {
      return project(upsample2x_op(x, H, W), uniform_like(C, 4 * H * W));
    }, maps));
    reg.push_back(entry("codec/depthwise3x3/maps", [=](Tape& t, Var x) {
      return project(depthwise3x3_op(x, t.constant(kern), t.constant(bias), H, W), uniform_like(C, H * W));
    }, maps));
    reg.push_back(entry("codec/depthwise3x3/kernels", [=](Tape& t, Var x) {
      return project(depthwise3x3_op(t.constant(maps), x, t.constant(bias), H, W), uniform_like(C, H * W));
    }, kern));
    reg.push_back(entry("codec/depthwise3x3/bias", [=](Tape& t, Var x) {
      return project(depthwise3x3_op(t.constant(maps), t.constant(kern), x, H, W), uniform_like(C, H * W));
    }, bias));

    TriplaneConfig tc{.channels = 2, .height = 5, .width = 7};
    const Mat planes = uniform(3 * tc.channels, tc.height * tc.width, -1, 1, rng);
    // Interior points, away from grid lines so bilinear cells do not switch.
    Mat pts(5, 3);
    pts << 0.11, 0.23, -0.07, -0.41, -0.52, 0.13, 0.63, 0.31, 0.19, -0.17, 0.62, -0.21, 0.37, -0.83, 0.05;
    const Mat wf = uniform(5, 3 * tc.channels, -1, 1, rng);
    reg.push_back(entry("codec/triplane_sample/planes", [=](Tape& t, Var x) {
      return project(triplane_sample_op(x, t.constant(pts), tc), wf);
    }, planes));
    reg.push_back(entry("codec/triplane_sample/points", [=](Tape& t, Var x) {
      return project(triplane_sample_op(t.constant(planes), x, tc), wf);
    }, pts));

    CodecConfig cc;
    cc.triplane = TriplaneConfig{.channels = 2, .height = 8, .width = 8};
    cc.latent_dim = 4;
    cc.base_channels = 2;
    cc.head_hidden = 5;
    auto codec = std::make_shared<AvatarCodec>(cc);
    auto params = std::make_shared<Parameters>();
    codec->init_parameters(*params, rng);
    // Nonzero output layers so every path carries gradient.
    for (const char* name : {"codec/geo/w2", "codec/app/w2"})
      params->at(name) = uniform(params->at(name).rows(), params->at(name).cols(), -0.5, 0.5, rng);
    auto mesh = std::make_shared<SkinnedMesh>(build_canonical_body(BodyConfig{.subdivision_levels = 0}));
    std::vector<int> pick = {0, 17, 40, 95, 160, 230};
    auto small = std::make_shared<SkinnedMesh>(*mesh);
    small->vertices = Mat(pick.size(), 3);
    for (std::size_t k = 0; k < pick.size(); ++k) small->vertices.row(static_cast<Eigen::Index>(k)) = mesh->vertices.row(pick[k]);
    const Mat latent = uniform(1, cc.latent_dim, -1, 1, rng);
    const Mat wp = uniform(6, 3, -1, 1, rng), wc = uniform(6, 3, -1, 1, rng), ws = uniform(6, 1, -1, 1, rng);
    auto avatar_fn = [=](Bound& p, Var z) {
      StaticAvatarVars s = codec->build_static_avatar(p, z, *small);
      const double ones[] = {1.0, 1.0, 30.0};
      Var terms[] = {project(s.positions, wp), project(s.attributes.colors, wc), project(s.attributes.scales, ws)};
      return ad::weighted_sum(terms, ones);
    };
    reg.push_back(entry("codec/static_avatar/latent", [=](Tape& t, Var x) {
      Bound p(t, *params, false);
      return avatar_fn(p, x);
    }, latent));
    for (const char* name : {"codec/dense/w", "codec/up1/dw_k", "codec/up2/pw1", "codec/geo/w1", "codec/app/w2"}) {
      reg.push_back(param_entry(std::string("codec/static_avatar/") + name, params, name, [=](Bound& p) {
        return avatar_fn(p, p.tape().constant(latent));
      }, CheckOptions{.max_coords = 40}));
    }
  }

  // --- Renderer ------------------------------------------------------------
  {
    auto scene = std::make_shared<SplatScene>(splat_scene(5, 16, 99));
    const Mat w = uniform(16 * 16, 8, -1, 1, rng);
    auto render = [scene](Tape& t, Var pos, Var scl, Var col, Var nrm) {
      (void)t;
      return render_op(pos, scl, col, nrm, scene->camera);
    };
    reg.push_back(entry("render/positions", [=](Tape& t, Var x) {
      return project(render(t, x, t.constant(scene->scales), t.constant(scene->colors), t.constant(scene->normals)), w);
    }, scene->positions));
    reg.push_back(entry("render/scales", [=](Tape& t, Var x) {
      return project(render(t, t.constant(scene->positions), x, t.constant(scene->colors), t.constant(scene->normals)), w);
    }, scene->scales));
    reg.push_back(entry("render/colors", [=](Tape& t, Var x) {
      return project(render(t, t.constant(scene->positions), t.constant(scene->scales), x, t.constant(scene->normals)), w);
    }, scene->colors));
    reg.push_back(entry("render/normals", [=](Tape& t, Var x) {
      return project(render(t, t.constant(scene->positions), t.constant(scene->scales), t.constant(scene->colors), x), w);
    }, scene->normals));
    Mat gt = uniform(16 * 16, 3, 0, 1, rng);
    reg.push_back(entry("render/l1_image", [=](Tape& t, Var x) {
      Var img = render(t, x, t.constant(scene->scales), t.constant(scene->colors), t.constant(scene->normals));
      return l1_loss(ad::slice_cols(img, 0, 3), gt);
    }, scene->positions));
  }

  // --- CloSim --------------------------------------------------------------
  {
    ClosimConfig cfg;
    cfg.pose_joints = 3;
    cfg.canonical_dim = 4;
    cfg.hidden = 5;
    cfg.head_hidden = 4;
    auto closim = std::make_shared<Closim>(cfg);
    auto params = std::make_shared<Parameters>();
    closim->init_parameters(*params, rng);
    params->at("closim/head/w2") = uniform(cfg.head_hidden, 7, -1, 1, rng);
    params->at("closim/head/b2") = uniform(1, 7, -0.3, 0.3, rng);
    for (const char* name : {"closim/gcn1/b", "closim/gcn2/b", "closim/gru/b_i", "closim/gru/b_h", "closim/head/b1"})
      params->at(name) = uniform(1, params->at(name).cols(), -0.3, 0.3, rng);
    auto graph = std::make_shared<ClothGraph>(ClothGraph::from_local(6, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {5, 0}, {1, 4}}));
    const Mat feat = uniform(6, cfg.canonical_dim, -1, 1, rng);
    PoseWindow window;
    for (int k = 0; k < 3; ++k) {
      window.poses[k] = Pose::identity(cfg.pose_joints + 1, 0.2 * k);
      window.poses[k].joint_rotations = uniform(cfg.pose_joints + 1, 3, -0.8, 0.8, rng);
    }
    const Mat w7 = uniform(6, 7, -1, 1, rng) * 30.0;
    auto forward_fn = [=](Bound& p, Var feat_var) {
      auto offs = closim->forward(p, feat_var, window, *graph);
      std::vector<Var> terms;
      for (Var o : offs) terms.push_back(project(o, w7));
      const std::vector<double> ones(terms.size(), 1.0);
      return ad::weighted_sum(terms, ones);
    };
    reg.push_back(entry("closim/forward/features", [=](Tape& t, Var x) {
      Bound p(t, *params, false);
      return forward_fn(p, x);
    }, feat));
    for (const char* name : {"closim/gcn1/w", "closim/gcn2/w", "closim/gru/w_i", "closim/gru/w_h", "closim/gru/b_h",
                             "closim/head/w1", "closim/head/w2"}) {
      reg.push_back(param_entry(std::string("closim/forward/") + name, params, name, [=](Bound& p) {
        return forward_fn(p, p.tape().constant(feat));
      }, CheckOptions{.max_coords = 40}));
    }
    const Mat gcn_w = uniform(4, 5, -1, 1, rng), gcn_b = uniform(1, 5, -1, 1, rng);
    reg.push_back(entry("closim/gcn_layer", [=](Tape& t, Var x) {
      return project(gcn_layer(x, t.constant(gcn_w), t.constant(gcn_b), graph->adjacency), uniform_like(6, 5));
    }, feat));
    const Mat off_b = uniform(6, 7, -1, 1, rng);
    reg.push_back(entry("closim/interpolate", [=](Tape& t, Var x) {
      return project(interpolate_offsets(x, t.constant(off_b), 0.3), w7);
    }, uniform(6, 7, -1, 1, rng)));
  }

  // --- Losses --------------------------------------------------------------
  {
    const int W = 16, H = 12;
    const Mat pred = uniform(W * H, 3, 0.1, 0.9, rng);
    const Mat gt = uniform(W * H, 3, 0.1, 0.9, rng);
    reg.push_back(entry("losses/l1", [=](Tape&, Var x) { return l1_loss(x, gt); }, pred));
    reg.push_back(entry("losses/ssim", [=](Tape&, Var x) { return ssim_index(x, gt, W, H); }, pred));
    reg.push_back(entry("losses/perceptual", [=](Tape&, Var x) {
      return PyramidGradientMetric().loss(x, gt, W, H);
    }, pred));
    Vec mask(W * H);
    for (int i = 0; i < W * H; ++i) mask[i] = (i % 3 == 0) ? 1.0 : 0.0;
    reg.push_back(entry("losses/cloth", [=](Tape&, Var x) { return cloth_loss(x, gt, mask); }, pred));

    const Mat n_gt = uniform(W * H, 3, 0, 1, rng);
    const Mat d_gt = uniform(W * H, 1, 1.5, 2.5, rng);
    Mat s_gt = uniform(W * H, 1, 0, 1, rng);
    Mat s_pred = uniform(W * H, 1, 0, 1, rng);
    for (Eigen::Index i = 0; i < s_pred.size(); ++i)  // keep clear of the 0.5 mask threshold
      if (std::abs(s_pred(i) - 0.5) < 0.05) s_pred(i) += 0.1;
    const Mat n_pred = uniform(W * H, 3, 0, 1, rng);
    const Mat d_pred = uniform(W * H, 1, 1.5, 2.5, rng);
    reg.push_back(entry("losses/geometry/normal", [=](Tape& t, Var x) {
      return geometry_loss(x, n_gt, t.constant(d_pred), d_gt, t.constant(s_pred), s_gt).total;
    }, n_pred));
    reg.push_back(entry("losses/geometry/depth", [=](Tape& t, Var x) {
      return geometry_loss(t.constant(n_pred), n_gt, x, d_gt, t.constant(s_pred), s_gt).total;
    }, d_pred));
    reg.push_back(entry("losses/geometry/silhouette", [=](Tape& t, Var x) {
      return geometry_loss(t.constant(n_pred), n_gt, t.constant(d_pred), d_gt, x, s_gt).total;
    }, s_pred, CheckOptions{.eps = 1e-6}));
    const Mat o0 = uniform(5, 7, -1, 1, rng), o2 = uniform(5, 7, -1, 1, rng);
    reg.push_back(entry("losses/temporal", [=](Tape& t, Var x) {
      return temporal_loss({t.constant(o0), x, t.constant(o2)});
    }, uniform(5, 7, -1, 1, rng)));
    reg.push_back(entry("losses/regularizer", [=](Tape& t, Var x) {
      return offset_regularizer({t.constant(o0), x}).total;
    }, uniform(5, 7, -1, 1, rng)));
    reg.push_back(entry("losses/position", [=](Tape&, Var x) { return position_loss(x, o0.leftCols(3)); },
                        uniform(5, 3, -1, 1, rng)));
  }

  // --- Part classifier -----------------------------------------------------
  {
    const std::vector<int> targets = {0, 3, 2, 2, 1, 0};
    reg.push_back(entry("parts/cross_entropy", [=](Tape&, Var x) { return cross_entropy(x, targets); },
                        uniform(6, kPartCount, -2, 2, rng)));
  }

  // --- Negative control: sign-flipped backward must be rejected. ------------
  {
    const Mat x0 = uniform(3, 4, -1, 1, rng);
    const Mat w = uniform(3, 4, -1, 1, rng);
    reg.push_back({"negative_control/sign_flip",
                   [=] {
                     auto f = [&](const Mat& x) { return (w.cwiseProduct(x.array().sin().matrix())).sum(); };
                     const Mat analytic = -(w.array() * x0.array().cos()).matrix();
                     return check_gradient("negative_control/sign_flip", f, analytic, x0);
                   },
                   true});
  }
  return reg;
}

}  // namespace drape
