// Command-line surface: data generation, segmentation, training, evaluation,
// animation, clothing transfer and the gradient check suite.

#include "drape/diffcheck.hpp"
#include "drape/studio.hpp"
#include "drape/trainer.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <iostream>

using namespace drape;

namespace {

// Existing relative paths are taken as given; anything else resolves under the output root.
fs::path input_path(const std::string& p) {
  const fs::path path(p);
  if (path.is_absolute() || fs::exists(path)) return path;
  return resolve_output(path);
}

TrainConfig config_for(const std::string& file, const std::vector<std::string>& overrides) {
  if (!file.empty()) return load_config(input_path(file), overrides);
  return config_from_json(apply_overrides(to_json(TrainConfig{}), overrides));
}

std::vector<Pose> track_for(const std::string& poses_file, const std::string& motion, double speed, double fps,
                            double duration, int joints) {
  if (!poses_file.empty()) return poses_from_json(read_json(input_path(poses_file)));
  return motion_track(MotionSpec{.kind = parse_motion(motion), .speed = speed}, fps, duration, joints);
}

std::string pick_subject(const Model& model, const std::string& requested) {
  if (!requested.empty()) return requested;
  if (model.subjects.empty()) throw ConfigError("checkpoint has no subjects");
  return model.subjects.back();
}

RenderSubset parse_subset(const std::string& s) {
  if (s == "all") return RenderSubset::All;
  if (s == "cloth") return RenderSubset::ClothOnly;
  if (s == "body") return RenderSubset::BodyOnly;
  throw ConfigError("unknown subset '" + s + "' (all, cloth, body)");
}

std::vector<int> frame_set(const SubjectData& s, const std::string& which) {
  if (which == "heldout") return s.heldout_frames;
  if (which == "train") return s.train_frames;
  if (which == "all") {
    std::vector<int> all(s.data.frame_count());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    return all;
  }
  throw ConfigError("unknown frame set '" + which + "' (heldout, train, all)");
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("drape"));
  spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");

  CLI::App app{"Decomposed clothed-avatar reconstruction on synthetic captures"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate synthetic subjects and sequences");
  std::vector<std::uint64_t> seeds{1};
  std::string motion = "walk", gen_out = "data";
  double speed = 1.0, fps = 30.0, duration = 20.0, azimuth = 30.0, noise = 0.0;
  int width = 64, height = 64, views = 8;
  gen->add_option("--seed", seeds, "subject seeds")->expected(1, -1);
  gen->add_option("--motion", motion, "idle-sway, walk, arm-wave, spin");
  gen->add_option("--speed", speed);
  gen->add_option("--fps", fps);
  gen->add_option("--duration", duration, "seconds");
  gen->add_option("--width", width);
  gen->add_option("--height", height);
  gen->add_option("--azimuth", azimuth, "camera azimuth in degrees");
  gen->add_option("--noise", noise, "pseudo-GT normal/depth noise sigma");
  gen->add_option("--views", views, "turnaround views for segmentation (0 disables)");
  gen->add_option("--out", gen_out, "dataset root (relative to the output root)");

  // segment
  auto* seg = app.add_subcommand("segment", "Derive part labels for a dataset");
  std::string seg_data, seg_ckpt, config_file;
  std::vector<std::string> overrides;
  seg->add_option("--data", seg_data, "subject directory")->required();
  seg->add_option("--checkpoint", seg_ckpt, "use the avatar's positions and features");
  seg->add_option("--config", config_file);
  seg->add_option("--set", overrides, "key=value overrides");

  // train
  auto* tr = app.add_subcommand("train", "Run stage 1 (multi-subject) or stage 2 (single-subject)");
  int stage = 0;
  std::string train_out, resume;
  tr->add_option("--stage", stage)->check(CLI::IsMember({1, 2}));
  tr->add_option("--config", config_file);
  tr->add_option("--set", overrides, "key=value overrides");
  tr->add_option("--out", train_out, "run directory (relative to the output root)");
  tr->add_option("--resume", resume, "continue from a checkpoint");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Render frames and write PSNR/SSIM/perceptual metrics");
  std::string ev_ckpt, ev_data, ev_frames = "heldout", ev_out;
  ev->add_option("--checkpoint", ev_ckpt)->required();
  ev->add_option("--data", ev_data, "subject directory")->required();
  ev->add_option("--frames", ev_frames, "heldout, train or all");
  ev->add_option("--out", ev_out, "metrics directory (default: next to the checkpoint)");

  // animate
  auto* an = app.add_subcommand("animate", "Render an avatar along a pose track");
  std::string an_ckpt, an_subject, poses_file, an_out = "animation", subset = "all";
  an->add_option("--checkpoint", an_ckpt)->required();
  an->add_option("--subject", an_subject, "subject id (default: last trained)");
  an->add_option("--poses", poses_file, "poses.json; otherwise generated from --motion");
  an->add_option("--motion", motion);
  an->add_option("--speed", speed);
  an->add_option("--fps", fps);
  an->add_option("--duration", duration);
  an->add_option("--azimuth", azimuth);
  an->add_option("--subset", subset, "all, cloth or body");
  an->add_option("--out", an_out);

  // transfer
  auto* tf = app.add_subcommand("transfer", "Dress a target avatar in a source avatar's clothing");
  std::string src_ckpt, src_subject, dst_ckpt, dst_subject, tf_out = "transfer";
  tf->add_option("--source-checkpoint", src_ckpt)->required();
  tf->add_option("--source", src_subject, "source subject id");
  tf->add_option("--target-checkpoint", dst_ckpt, "defaults to the source checkpoint");
  tf->add_option("--target", dst_subject, "target subject id")->required();
  tf->add_option("--poses", poses_file);
  tf->add_option("--motion", motion);
  tf->add_option("--speed", speed);
  tf->add_option("--fps", fps);
  tf->add_option("--duration", duration);
  tf->add_option("--azimuth", azimuth);
  tf->add_option("--out", tf_out);

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*gen) {
      const fs::path root = resolve_output(gen_out);
      const Camera camera = studio_camera(width, height, azimuth);
      for (auto seed : seeds) {
        const SubjectAsset subject = generate_subject(seed);
        const Sequence seq =
            generate_sequence(subject, MotionSpec{.kind = parse_motion(motion), .speed = speed}, fps, duration, camera);
        const PseudoGT pseudo = pseudo_gt_maps(seq, noise, seed);
        std::optional<Turnaround> turn;
        if (views > 0) turn = turnaround_views(subject, seq, views);
        const fs::path dir =
            save_dataset(root, subject, seq, pseudo, turn ? &*turn : nullptr, Json{{"noise", noise}});
        spdlog::info("wrote {} ({} frames)", dir.string(), seq.frames.size());
        std::cout << dir.string() << '\n';
      }
    } else if (*seg) {
      const TrainConfig cfg = config_for(config_file, overrides);
      const fs::path dir = input_path(seg_data);
      const Dataset d = load_dataset(dir);
      std::optional<Model> model;
      if (!seg_ckpt.empty()) model = load_checkpoint(input_path(seg_ckpt));
      const SegmentResult r = segment(d, cfg.segment, model ? &*model : nullptr);
      save_partition(dir / "labels.json", r.parts);
      save_parameters_json(dir / "labels_classifier.json", r.classifier);
      write_json(dir / "segment_metrics.json", {{"pseudo_agreement", r.pseudo_agreement},
                                                {"classifier_accuracy", r.classifier_accuracy},
                                                {"heldout_accuracy", r.heldout_accuracy},
                                                {"unseen_accuracy", r.unseen_accuracy},
                                                {"cloth_recall", r.cloth_recall},
                                                {"cloth_precision", r.cloth_precision}});
      std::cout << (dir / "labels.json").string() << '\n';
    } else if (*tr) {
      if (!resume.empty()) {
        const fs::path out = resolve_output(train_out.empty() ? "resumed" : train_out);
        resume_training(input_path(resume), overrides, out);
        std::cout << (out / "checkpoint.bin").string() << '\n';
      } else {
        TrainConfig cfg = config_for(config_file, overrides);
        if (stage != 0) cfg.stage = stage;
        for (auto& s : cfg.subjects) s = input_path(s).string();
        if (!cfg.init_checkpoint.empty()) cfg.init_checkpoint = input_path(cfg.init_checkpoint).string();
        const fs::path out = resolve_output(train_out.empty() ? "stage" + std::to_string(cfg.stage) : train_out);
        fs::create_directories(out);
        write_json(out / "config.json", to_json(cfg));
        if (cfg.stage == 1) train_stage1(cfg, out);
        else train_stage2(cfg, out);
        std::cout << (out / "checkpoint.bin").string() << '\n';
      }
    } else if (*ev) {
      const fs::path ckpt = input_path(ev_ckpt);
      const Model model = load_checkpoint(ckpt);
      const fs::path dir = input_path(ev_data);
      const auto seed = read_json(dir / "manifest.json").at("seed").get<std::uint64_t>();
      auto it = model.partitions.find("subject_" + std::to_string(seed));
      const SubjectData s = prepare_subject(
          dir, model.config, it == model.partitions.end() ? std::nullopt : std::optional(it->second));
      const EvalResult r = evaluate(model, s, frame_set(s, ev_frames));
      const fs::path out = ev_out.empty() ? ckpt.parent_path() / "eval" : resolve_output(ev_out);
      write_metrics(out, r);
      spdlog::info("{} frames: PSNR {:.3f} dB, SSIM {:.4f}, perceptual {:.4f}", r.frames.size(), r.mean.psnr,
                   r.mean.ssim, r.mean.perceptual);
      std::cout << (out / "metrics.json").string() << '\n';
    } else if (*an) {
      const Model model = load_checkpoint(input_path(an_ckpt));
      const Avatar avatar = model_avatar(model, pick_subject(model, an_subject));
      const auto track = track_for(poses_file, motion, speed, fps, duration,
                                   static_cast<int>(avatar.surface.joint_count()));
      const fs::path out = resolve_output(an_out);
      animate(model, avatar, track, studio_camera(model.config.width, model.config.height, azimuth), out,
              parse_subset(subset));
      write_json(out / "poses.json", to_json(track));
      std::cout << out.string() << '\n';
    } else if (*tf) {
      const Model source_model = load_checkpoint(input_path(src_ckpt));
      const Model target_model = dst_ckpt.empty() ? source_model : load_checkpoint(input_path(dst_ckpt));
      const Avatar source = model_avatar(source_model, pick_subject(source_model, src_subject));
      const Avatar target = model_avatar(target_model, dst_subject);
      const Avatar dressed = transfer_clothing(source, target);
      const auto track = track_for(poses_file, motion, speed, fps, duration,
                                   static_cast<int>(dressed.surface.joint_count()));
      const fs::path out = resolve_output(tf_out);
      animate(source_model, dressed, track,
              studio_camera(source_model.config.width, source_model.config.height, azimuth), out);
      write_json(out / "poses.json", to_json(track));
      std::cout << out.string() << '\n';
    } else if (*gc) {
      const auto registry = gradient_registry();
      const RegistryResult r = run_registry(registry);
      for (std::size_t i = 0; i < registry.size(); ++i)
        std::cout << (r.ok[i] ? "ok    " : "FAIL  ") << r.reports[i].summary()
                  << (registry[i].expect_failure ? "  (negative control)" : "") << '\n';
      std::cout << (r.all_ok ? "all checks passed" : "gradient check failed") << '\n';
      return r.all_ok ? EXIT_SUCCESS : EXIT_FAILURE;
    }
  } catch (const ConfigError& e) {
    spdlog::error("configuration error: {}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return EXIT_SUCCESS;
}
