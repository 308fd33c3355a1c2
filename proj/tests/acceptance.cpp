// End-to-end acceptance run: one PASS/FAIL line per criterion.

#include "drape/diffcheck.hpp"
#include "drape/trainer.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <random>
#include <set>
#include <sstream>

using namespace drape;

namespace {

struct Options {
  fs::path work;
  std::string cli;
  std::vector<int> only;
  int steps = 400;          // reconstruction, ablations and temporal runs
  int stage1_steps = 400;
  int max_steps = 400;      // cap for steps-to-target runs
  int eval_every = 25;
};

struct Line {
  int id;
  bool pass;
  std::string text;
};

std::vector<Line> g_lines;

void report(int id, bool pass, const std::string& text) {
  g_lines.push_back({id, pass, text});
  std::cout << (pass ? "PASS" : "FAIL") << "  [" << id << "] " << text << std::endl;
}

std::string fixed(double v, int digits = 3) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

void progress(const std::string& msg) { std::cerr << "[acceptance] " << msg << std::endl; }

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---------------------------------------------------------------- fixtures

fs::path make_dataset(const fs::path& root, std::uint64_t seed, double duration, int res) {
  const fs::path dir = subject_dir(root, seed);
  if (fs::exists(dir / "manifest.json")) return dir;
  const SubjectAsset subject = generate_subject(seed);
  const Sequence seq = generate_sequence(subject, MotionSpec{MotionKind::Walk}, 30.0, duration, studio_camera(res, res));
  const Turnaround views = turnaround_views(subject, seq);
  return save_dataset(root, subject, seq, pseudo_gt_maps(seq), &views);
}

TrainConfig stage2_config(const fs::path& data, int steps) {
  TrainConfig c;
  c.stage = 2;
  c.subjects = {data.string()};
  c.steps = steps;
  c.from_scratch = true;
  c.log_every = 50;
  return c;
}

struct Run {
  Model model;
  TrainResult result;
  EvalResult eval;
  double cpu = 0.0;
};

Run train_and_evaluate(const TrainConfig& config, const fs::path& out) {
  Run r;
  const double t0 = cpu_seconds();
  r.model = train_stage2(config, out, &r.result);
  r.cpu = cpu_seconds() - t0;
  const SubjectData s =
      prepare_subject(config.subjects.front(), r.model.config, r.model.partitions.begin()->second);
  r.eval = evaluate(r.model, s, s.heldout_frames);
  write_metrics(out / "eval", r.eval);
  return r;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Mean absolute RGB change between consecutive frames on a held pose.
double constant_pose_flicker(const Model& model, const Dataset& d) {
  std::vector<Pose> still(60, d.poses.front());
  for (std::size_t i = 0; i < still.size(); ++i) still[i].timestamp = static_cast<double>(i) / d.fps;
  const Avatar avatar = model_avatar(model, model.subjects.front());
  const auto frames = animate(model, avatar, still, d.camera, {});
  double sum = 0.0;
  for (std::size_t t = 1; t < frames.size(); ++t) sum += (frames[t].rgb - frames[t - 1].rgb).cwiseAbs().mean();
  return sum / static_cast<double>(frames.size() - 1);
}

// ---------------------------------------------------------------- criteria

void criterion_gradients() {
  const double t0 = cpu_seconds();
  const RegistryResult r = run_registry(gradient_registry());
  const double cpu = cpu_seconds() - t0;
  int failed = 0, controls = 0;
  std::string first_bad;
  const auto entries = gradient_registry();
  for (std::size_t i = 0; i < r.reports.size(); ++i) {
    if (entries[i].expect_failure) ++controls;
    if (!r.ok[i]) {
      ++failed;
      if (first_bad.empty()) first_bad = r.reports[i].name;
    }
  }
  report(1, r.all_ok && controls > 0 && cpu < 300.0,
         "gradient suite: " + std::to_string(r.reports.size() - failed) + "/" + std::to_string(r.reports.size()) +
             " entries as expected (" + std::to_string(controls) + " negative control), " + fixed(cpu, 2) + " s CPU" +
             (first_bad.empty() ? "" : ", first mismatch " + first_bad));
}

void criterion_equations() {
  std::vector<std::string> bad;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) bad.push_back(what);
  };

  // Offsets are added in canonical space before skinning.
  const SkinnedMesh mesh = build_canonical_body(BodyConfig{});
  const Pose pose = motion_track(MotionSpec{MotionKind::ArmWave}, 30.0, 1.0, mesh.joint_count())[15];
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n01(0.0, 0.01);
  Mat offsets(mesh.vertex_count(), 3);
  for (Eigen::Index i = 0; i < offsets.size(); ++i) offsets.data()[i] = n01(rng);
  const Mat zero = Mat::Zero(mesh.vertex_count(), 3);
  const Mat ordered = lbs_deform(mesh.vertices, offsets, pose, mesh);
  expect(ordered == lbs_deform(Mat(mesh.vertices + offsets), zero, pose, mesh), "offsets-then-skinning");
  expect((ordered - (lbs_deform(mesh.vertices, zero, pose, mesh) + offsets)).cwiseAbs().maxCoeff() > 1e-6,
         "skinning rotates offsets");

  // Interpolated supervision hits the window endpoints exactly.
  Mat a(4, 7), b(4, 7);
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    a.data()[i] = n01(rng);
    b.data()[i] = n01(rng);
  }
  expect(interpolate_offsets(a, b, 0.0) == a && interpolate_offsets(a, b, 1.0) == b, "interpolation endpoints");

  // Geometry weights and the temporal weight.
  const LossWeights w;
  expect(w.normal == 5.0 && w.depth == 1.0 && w.silhouette == 2.0, "geometry weights 5/1/2");
  expect(w.temporal == 0.1, "temporal weight 0.1");
  {
    ad::Tape tape;
    const Mat n = Mat::Constant(4, 3, 0.5), d = Mat::Constant(4, 1, 2.0), s = Mat::Constant(4, 1, 1.0);
    const GeometryTerms g = geometry_loss(tape.constant(Mat::Constant(4, 3, 0.6)), n, tape.constant(Mat::Constant(4, 1, 2.5)),
                                          d, tape.constant(Mat::Constant(4, 1, 0.75)), s, w);
    const double expected = 5.0 * g.normal.scalar() + 1.0 * g.depth.scalar() + 2.0 * g.silhouette.scalar();
    expect(std::abs(g.total.scalar() - expected) <= 1e-15 * std::max(1.0, expected), "geometry total");
    const ad::Var c = tape.constant(a);
    expect(temporal_loss({c, c, c}).scalar() == 0.0, "temporal zero on constant offsets");
  }

  // Feature widths.
  const CodecConfig codec;
  const ClosimConfig closim;
  expect(codec.feature_dim() == 96 && closim.canonical_dim == 96, "canonical features 96");
  expect(closim.pose_feature_dim() == 126, "pose features 126");
  expect(closim.hidden == 128, "hidden width 128");

  std::string text = "equation conformance: offsets-then-skinning, endpoints, weights 5/1/2, temporal 0.1, dims 96/126/128";
  if (!bad.empty()) {
    text += "; violated:";
    for (const auto& s : bad) text += " " + s;
  }
  report(2, bad.empty(), text);
}

struct Shared {
  fs::path data;              // reconstruction subject
  std::vector<fs::path> pretrain;
  std::optional<Run> full;
};

void criterion_reconstruction(const Options& o, Shared& sh) {
  const TrainConfig c = stage2_config(sh.data, o.steps);
  progress("reconstruction: " + std::to_string(o.steps) + " steps");
  sh.full = train_and_evaluate(c, o.work / "full");
  const auto& e = sh.full->eval;
  const bool ok = e.mean.psnr >= 30.0 && e.mean.ssim >= 0.95 && sh.full->cpu <= 1800.0;
  report(3, ok,
         "reconstruction: held-out PSNR " + fixed(e.mean.psnr, 2) + " dB (>= 30), SSIM " + fixed(e.mean.ssim, 4) +
             " (>= 0.95), " + std::to_string(o.steps) + " steps in " + fixed(sh.full->cpu / 60.0, 1) +
             " min CPU (<= 30)");
}

void criterion_ablations(const Options& o, Shared& sh) {
  const auto& base = sh.full->eval.mean;
  auto ablate = [&](const std::string& name, const std::string& key, bool value) {
    TrainConfig c = stage2_config(sh.data, o.steps);
    if (key == "use_closim") c.use_closim = value;
    if (key == "collapse_window") c.collapse_window = value;
    if (key == "use_geometry") c.use_geometry = value;
    progress("ablation " + name);
    return train_and_evaluate(c, o.work / ("ablation_" + name)).eval.mean;
  };
  const FrameMetrics no_closim = ablate("no_closim", "use_closim", false);
  const FrameMetrics collapsed = ablate("collapsed", "collapse_window", true);
  const FrameMetrics no_geo = ablate("no_geometry", "use_geometry", false);
  const double drop_a = base.psnr - no_closim.psnr;
  const double drop_b = base.psnr - collapsed.psnr;
  const double rise_c = base.normal_angle_deg > 0.0 ? no_geo.normal_angle_deg / base.normal_angle_deg - 1.0 : 0.0;
  report(4, drop_a >= 1.0 && drop_b >= 0.3 && rise_c >= 0.2,
         "ablations: no CloSim -" + fixed(drop_a, 2) + " dB (>= 1), collapsed window -" + fixed(drop_b, 2) +
             " dB (>= 0.3), no geometry normal error " + fixed(base.normal_angle_deg, 2) + " -> " +
             fixed(no_geo.normal_angle_deg, 2) + " deg (+" + fixed(100.0 * rise_c, 1) + "%, >= 20%)");
}

void criterion_pretraining(const Options& o, Shared& sh) {
  TrainConfig s1;
  s1.stage = 1;
  for (const auto& d : sh.pretrain) s1.subjects.push_back(d.string());
  s1.steps = o.stage1_steps;
  s1.log_every = 50;
  progress("stage 1 on " + std::to_string(s1.subjects.size()) + " subjects");
  const fs::path ckpt_dir = o.work / "stage1";
  train_stage1(s1, ckpt_dir);

  auto steps_to_target = [&](bool pretrained, std::uint64_t seed) {
    TrainConfig c = stage2_config(sh.data, o.max_steps);
    c.seed = seed;
    c.eval_every = o.eval_every;
    c.target_psnr = 30.0;
    if (pretrained) {
      c.from_scratch = false;
      c.init_checkpoint = (ckpt_dir / "checkpoint.bin").string();
    }
    TrainResult r;
    train_stage2(c, {}, &r);
    const int steps = r.target_step > 0 ? r.target_step : o.max_steps + o.eval_every;
    progress(std::string(pretrained ? "pretrained" : "scratch") + " seed " + std::to_string(seed) + ": " +
             (r.target_step > 0 ? std::to_string(steps) + " steps" : "target not reached"));
    return static_cast<double>(steps);
  };
  std::vector<double> pre, scratch;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    pre.push_back(steps_to_target(true, seed));
    scratch.push_back(steps_to_target(false, seed));
  }
  const double mp = median(pre), ms = median(scratch);
  report(5, mp <= 0.8 * ms,
         "pretraining: median steps to 30 dB " + fixed(mp, 0) + " pretrained vs " + fixed(ms, 0) + " scratch (ratio " +
             fixed(mp / ms, 2) + ", <= 0.8)");
}

void criterion_decomposition(Shared& sh) {
  std::vector<std::string> bad;
  // Disjointness and coverage on every fixture partition.
  std::vector<fs::path> fixtures = sh.pretrain;
  fixtures.insert(fixtures.begin(), sh.data);
  double min_recall = 1.0;
  for (const auto& dir : fixtures) {
    const Dataset d = load_dataset(dir);
    const SegmentResult r = segment(d, SegmentConfig{});
    min_recall = std::min(min_recall, r.cloth_recall);
    std::vector<int> seen(static_cast<std::size_t>(d.mesh.vertex_count()), 0);
    for (const auto& set : r.parts)
      for (int i : set) ++seen[static_cast<std::size_t>(i)];
    if (!std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; })) bad.push_back("partition " + dir.string());
  }

  // Refinement idempotence.
  const SkinnedMesh mesh = build_canonical_body(BodyConfig{});
  const auto edges = mesh.edges();
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> pick(0, kPartCount - 1);
  int stable = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<PartLabel> labels(static_cast<std::size_t>(mesh.vertex_count()));
    for (auto& l : labels) l = static_cast<PartLabel>(pick(rng));
    const LabelField once = refine_labels(LabelField::from_labels(std::move(labels)), edges);
    stable += refine_labels(once, edges).labels == once.labels;
  }

  // Self-transfer of the trained avatar.
  const Model& m = sh.full->model;
  const Avatar avatar = model_avatar(m, m.subjects.front());
  const Avatar dressed = transfer_clothing(avatar, avatar);
  const Dataset d = load_dataset(sh.data);
  const Closim closim = m.closim();
  double worst = 0.0;
  for (int f : {0, 150, 300, 450}) {
    const RenderTargets a = render_avatar(
        avatar, cloth_offsets_at(avatar, &closim, m.params, d.poses, f, m.config.delta_t, false), d.poses[f], d.camera);
    const RenderTargets b = render_avatar(
        dressed, cloth_offsets_at(dressed, &closim, m.params, d.poses, f, m.config.delta_t, false), d.poses[f],
        d.camera);
    worst = std::max(worst, std::sqrt((a.rgb - b.rgb).squaredNorm() / static_cast<double>(a.rgb.size())));
  }

  const bool ok = bad.empty() && stable == 100 && min_recall >= 0.9 && worst <= 1e-6;
  report(6, ok,
         "decomposition: partitions disjoint/covering on " + std::to_string(fixtures.size()) + " fixtures" +
             (bad.empty() ? "" : " (violated)") + ", refinement idempotent " + std::to_string(stable) +
             "/100, min cloth recall " + fixed(min_recall, 3) + " (>= 0.9), self-transfer RMSE " +
             std::to_string(worst) + " (<= 1e-6)");
}

void criterion_temporal(const Options& o, Shared& sh) {
  TrainConfig c = stage2_config(sh.data, o.steps);
  c.weights.temporal = 0.0;
  progress("temporal ablation");
  TrainResult r;
  const Model off = train_stage2(c, o.work / "no_temporal", &r);
  const Dataset d = load_dataset(sh.data);
  const double with = constant_pose_flicker(sh.full->model, d);
  const double without = constant_pose_flicker(off, d);
  const bool ok = without > 0.0 ? with <= 0.5 * without : with == 0.0;
  report(7, ok,
         "temporal stability: constant-pose flicker " + std::to_string(with) + " with temporal loss vs " +
             std::to_string(without) + " without (ratio " + (without > 0.0 ? fixed(with / without, 3) : "n/a") +
             ", <= 0.5)");
}

int run_cli(const Options& o, const fs::path& root, const std::string& args, std::string* out = nullptr) {
  const fs::path log = root / "cli.log";
  const std::string cmd = "DRAPE_OUTPUT_ROOT='" + root.string() + "' '" + o.cli + "' --log-level warn " + args +
                          " > '" + (root / "stdout.txt").string() + "' 2>> '" + log.string() + "'";
  const int rc = std::system(cmd.c_str());
  if (out) {
    *out = file_bytes(root / "stdout.txt");
    while (!out->empty() && (out->back() == '\n' || out->back() == '\r')) out->pop_back();
  }
  return rc;
}

void criterion_determinism(const Options& o) {
  std::vector<std::string> metrics;
  std::string problem;
  for (int rep = 0; rep < 2 && problem.empty(); ++rep) {
    const fs::path root = o.work / ("determinism_" + std::to_string(rep));
    fs::remove_all(root);
    fs::create_directories(root);
    std::string data;
    if (run_cli(o, root, "gen-data --seed 5 --duration 2 --width 32 --height 32", &data) != 0) {
      problem = "gen-data failed";
      break;
    }
    const std::string sets = "--set steps=6 --set width=32 --set height=32 --set from_scratch=true --set 'subjects=[\"" +
                             data + "\"]'";
    if (run_cli(o, root, "train --stage 2 " + sets + " --out run") != 0) {
      problem = "train failed";
      break;
    }
    if (run_cli(o, root, "evaluate --checkpoint run/checkpoint.bin --data '" + data + "' --frames all") != 0) {
      problem = "evaluate failed";
      break;
    }
    metrics.push_back(file_bytes(root / "run/eval/metrics.json") + file_bytes(root / "run/eval/metrics.csv"));
  }
  const bool same_metrics = problem.empty() && metrics.size() == 2 && !metrics[0].empty() && metrics[0] == metrics[1];

  bool stable = false;
  if (problem.empty()) {
    const fs::path ckpt = o.work / "determinism_0/run/checkpoint.bin";
    const Model m = load_checkpoint(ckpt);
    const fs::path again = o.work / "determinism_0/again.bin";
    save_checkpoint(again, m);
    stable = file_bytes(ckpt) == file_bytes(again);
  }
  report(8, same_metrics && stable,
         "determinism: identical metrics across two seeded CLI runs " + std::string(same_metrics ? "yes" : "no") +
             ", checkpoint save/load/save bitwise " + (stable ? "yes" : "no") +
             (problem.empty() ? "" : " (" + problem + ")"));
}

}  // namespace

int main(int argc, char** argv) {
  Options o;
  o.work = fs::temp_directory_path() / "drape_acceptance";
  CLI::App app{"Acceptance run"};
  std::string work = o.work.string();
  app.add_option("--work", work, "scratch directory");
  app.add_option("--cli", o.cli, "path to the drape executable")->required();
  app.add_option("--only", o.only, "criterion ids to run");
  app.add_option("--steps", o.steps, "steps for reconstruction, ablation and temporal runs");
  app.add_option("--stage1-steps", o.stage1_steps);
  app.add_option("--max-steps", o.max_steps, "cap for steps-to-target runs");
  app.add_option("--eval-every", o.eval_every, "evaluation interval for steps-to-target runs");
  CLI11_PARSE(app, argc, argv);
  o.work = work;
  o.cli = fs::absolute(o.cli).string();
  fs::create_directories(o.work);
  spdlog::set_level(spdlog::level::warn);

  const std::set<int> only(o.only.begin(), o.only.end());
  auto want = [&](int id) { return only.empty() || only.count(id) != 0; };
  const auto start = std::chrono::steady_clock::now();

  Shared sh;
  const bool need_data = want(3) || want(4) || want(5) || want(6) || want(7);
  if (need_data) {
    progress("generating fixtures");
    const fs::path root = o.work / "data";
    sh.data = make_dataset(root, 101, 20.0, 64);
    sh.pretrain = {make_dataset(root, 102, 10.0, 64), make_dataset(root, 103, 10.0, 64)};
  }

  auto guarded = [&](int id, const std::function<void()>& f) {
    if (!want(id)) return;
    try {
      f();
    } catch (const std::exception& e) {
      report(id, false, std::string("aborted: ") + e.what());
    }
  };
  auto with_full = [&](int id, const std::function<void()>& f) {
    guarded(id, [&] {
      if (!sh.full) {
        TrainConfig c = stage2_config(sh.data, o.steps);
        progress("reference run: " + std::to_string(o.steps) + " steps");
        sh.full = train_and_evaluate(c, o.work / "full");
      }
      f();
    });
  };

  guarded(1, criterion_gradients);
  guarded(2, criterion_equations);
  guarded(3, [&] { criterion_reconstruction(o, sh); });
  with_full(4, [&] { criterion_ablations(o, sh); });
  guarded(5, [&] { criterion_pretraining(o, sh); });
  with_full(6, [&] { criterion_decomposition(sh); });
  with_full(7, [&] { criterion_temporal(o, sh); });
  guarded(8, [&] { criterion_determinism(o); });

  const double minutes =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60.0;
  int passed = 0;
  for (const auto& l : g_lines) passed += l.pass;
  std::cout << passed << "/" << g_lines.size() << " criteria passed in " << fixed(minutes, 1) << " min" << std::endl;

  Json summary = Json::array();
  for (const auto& l : g_lines) summary.push_back({{"criterion", l.id}, {"pass", l.pass}, {"detail", l.text}});
  write_json(o.work / "acceptance.json", summary);
  return 0;
}
