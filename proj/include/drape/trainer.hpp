#pragma once

// Two-stage optimization, evaluation, animation, segmentation and the
// versioned checkpoint container.

#include "drape/avatar.hpp"
#include "drape/io.hpp"
#include "drape/losses.hpp"

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace drape {

struct SegmentConfig {
  int views = 8;                 // frames sampled evenly over the sequence
  double tau_fraction = 0.02;    // of the foreground depth range
  double tau_floor = 0.02;       // m
  ClassifierConfig classifier;
  RefineConfig refine;
  bool hints_for_face_hands = true;
};

struct TrainConfig {
  int stage = 1;
  std::vector<std::string> subjects;   // dataset directories
  int steps = 2000;
  double learning_rate = 1e-3;
  int batch = 1;                       // windows per step
  std::uint64_t seed = 1;
  int width = 64, height = 64;
  double delta_t = 0.2;
  int holdout_every = 10;              // frame f is held out when f % every == offset
  int holdout_offset = 5;
  double fixed_alpha = -1.0;           // < 0: α ~ U[0,1] per step
  bool use_closim = true;
  bool collapse_window = false;
  bool use_geometry = true;
  std::string init_checkpoint;         // stage 2
  bool from_scratch = false;           // stage 2 without a stage-1 checkpoint
  int log_every = 10;
  int checkpoint_every = 0;            // 0: only at the end
  int eval_every = 0;                  // > 0: held-out PSNR every N steps
  int eval_frames = 8;                 // held-out frames used for periodic evaluation
  double target_psnr = 0.0;            // > 0 with eval_every: stop once reached
  LossWeights weights;
  CodecConfig codec;
  ClosimConfig closim;
  SegmentConfig segment;

  void validate() const;
};

/// Structured config: a JSON object whose keys mirror TrainConfig (nested
/// objects for weights, codec, closim, segment).
TrainConfig config_from_json(const Json& j);
Json to_json(const TrainConfig& c);
/// Applies "a.b.c=value" overrides; the value is parsed as JSON when possible,
/// otherwise taken as a string. Unknown keys are rejected.
Json apply_overrides(Json j, const std::vector<std::string>& overrides);
TrainConfig load_config(const fs::path& path, const std::vector<std::string>& overrides);

/// Relative paths resolve against $DRAPE_OUTPUT_ROOT (default "runs").
fs::path output_root();
fs::path resolve_output(const fs::path& p);

std::uint64_t fnv1a(const std::string& s);

/// All learned state plus what is needed to render each known subject.
struct Model {
  TrainConfig config;
  Parameters params;
  Adam adam;
  long long step = 0;
  std::vector<std::string> subjects;             // ids with a "latent/<id>" tensor
  std::map<std::string, Partition> partitions;   // per subject id

  AvatarCodec codec() const { return AvatarCodec(config.codec); }
  Closim closim() const { return Closim(config.closim); }
};

/// Versioned container: "DRAPECKP", uint32 version, uint64 header size, JSON
/// header (tensor manifest with name, shape, dtype, offset), raw f64 data.
constexpr std::uint32_t kCheckpointVersion = 1;
void save_checkpoint(const fs::path& path, const Model& model);
Model load_checkpoint(const fs::path& path);

/// Subject id derived from a dataset directory name.
std::string subject_id(const Dataset& d);

struct SubjectData {
  std::string id;
  Dataset data;
  Partition parts;
  ClothGraph graph;
  std::vector<int> face_hands;          // Gaussian indices supervised by the template
  std::vector<Vec> cloth_masks;         // per frame, from the segmentation
  std::vector<int> train_frames, heldout_frames;
  Parameters classifier;                // label classifier, when segmentation ran or was saved
};

/// Label classifier tensors as JSON ({name: {shape, data}}), alongside labels.json.
void save_parameters_json(const fs::path& path, const Parameters& params);
Parameters load_parameters_json(const fs::path& path);

SubjectData prepare_subject(const fs::path& dir, const TrainConfig& config,
                            const std::optional<Partition>& parts = std::nullopt);

/// Initializes codec, CloSim and latent parameters for the given subjects.
Model init_model(const TrainConfig& config, const std::vector<std::string>& subject_ids);

struct StepSample {
  int subject = 0;
  double center = 0.0;
  double alpha = 0.0;
  int frame = 0;
};

/// Differentiable forward pass for one sampled window; adds terms to `objective`.
void add_window_terms(Bound& p, const Model& model, const SubjectData& s, const StepSample& sample,
                      Objective& objective);

struct TrainResult {
  LossReport last;
  std::vector<double> totals;           // per step
  int steps_run = 0;
  int target_step = -1;                 // first step reaching target_psnr
  std::vector<std::pair<int, double>> eval_psnr;
};

using StepCallback = std::function<void(int step, const LossReport&)>;

/// Runs `config.steps` optimizer steps over the subjects. Writes the CSV log
/// and checkpoints below `out_dir` when it is non-empty.
TrainResult train(Model& model, const std::vector<SubjectData>& subjects, const fs::path& out_dir,
                  const StepCallback& callback = {});

Model train_stage1(const TrainConfig& config, const fs::path& out_dir, TrainResult* result = nullptr);
Model train_stage2(const TrainConfig& config, const fs::path& out_dir, TrainResult* result = nullptr);

/// Continues a checkpointed run up to `config.steps` total steps; overrides
/// apply to the stored config.
Model resume_training(const fs::path& checkpoint, const std::vector<std::string>& overrides, const fs::path& out_dir,
                      TrainResult* result = nullptr);

/// Avatar of a known subject.
Avatar model_avatar(const Model& model, const std::string& subject);

struct FrameMetrics {
  int frame = 0;
  double psnr = 0, ssim = 0, perceptual = 0;
  double normal_angle_deg = 0;   // mean over pixels covered in both renders
};

struct EvalResult {
  std::vector<FrameMetrics> frames;
  FrameMetrics mean;
};

EvalResult evaluate(const Model& model, const SubjectData& s, const std::vector<int>& frames);
void write_metrics(const fs::path& dir, const EvalResult& r);

/// Renders every frame of `track`, writing PNG previews and .flt channels.
std::vector<RenderTargets> animate(const Model& model, const Avatar& avatar, const std::vector<Pose>& track,
                                   const Camera& camera, const fs::path& out_dir,
                                   RenderSubset subset = RenderSubset::All);

struct SegmentResult {
  Partition parts;
  double pseudo_agreement = 0;   // non-Unknown pseudo-labels agreeing with GT
  double classifier_accuracy = 0;
  double heldout_accuracy = 0;   // final labels vs GT on pseudo-labeled points withheld from training
  double unseen_accuracy = 0;    // final labels vs GT on points no view labeled
  double cloth_recall = 0;
  double cloth_precision = 0;
  Parameters classifier;         // "labels/..." tensors
};

/// Projects segmentation maps onto canonical points, trains the label
/// classifier, refines on mesh edges and partitions. Uses the avatar's static
/// positions and features when `model` knows the subject, else the template.
SegmentResult segment(const Dataset& d, const SegmentConfig& config, const Model* model = nullptr);

}  // namespace drape
