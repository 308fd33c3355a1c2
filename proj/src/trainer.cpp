#include "drape/trainer.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

namespace drape {

namespace {

constexpr char kCheckpointMagic[8] = {'D', 'R', 'A', 'P', 'E', 'C', 'K', 'P'};

std::string latent_name(const std::string& id) { return "latent/" + id; }

int nearest_frame(const std::vector<Pose>& track, double t) {
  auto it = std::lower_bound(track.begin(), track.end(), t,
                             [](const Pose& p, double v) { return p.timestamp < v; });
  if (it == track.end()) return static_cast<int>(track.size()) - 1;
  const int hi = static_cast<int>(it - track.begin());
  if (hi == 0) return 0;
  return (t - track[hi - 1].timestamp <= track[hi].timestamp - t) ? hi - 1 : hi;
}

bool is_heldout(const TrainConfig& c, int frame) {
  return c.holdout_every > 0 && frame % c.holdout_every == c.holdout_offset;
}

// Checks that every key of `user` exists in `schema` (recursively).
void check_keys(const Json& user, const Json& schema, const std::string& prefix) {
  if (!user.is_object()) throw ConfigError("config section '" + prefix + "' must be an object");
  for (const auto& [k, v] : user.items()) {
    const std::string key = prefix.empty() ? k : prefix + "." + k;
    if (!schema.contains(k)) throw ConfigError("unknown config key '" + key + "'");
    if (schema.at(k).is_object()) check_keys(v, schema.at(k), key);
  }
}

template <typename T>
void read(const Json& j, const char* key, T& out) {
  try {
    out = j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

double mean_normal_angle(const RenderTargets& pred, const RenderTargets& gt) {
  double acc = 0.0;
  int n = 0;
  for (Eigen::Index i = 0; i < pred.silhouette.size(); ++i) {
    if (pred.silhouette(i) <= 0.5 || gt.silhouette(i) <= 0.5) continue;
    const Vec3 a = (2.0 * pred.normal.row(i).transpose().array() - 1.0).matrix();
    const Vec3 b = (2.0 * gt.normal.row(i).transpose().array() - 1.0).matrix();
    const double na = a.norm(), nb = b.norm();
    if (na < 1e-12 || nb < 1e-12) continue;
    acc += std::acos(std::clamp(a.dot(b) / (na * nb), -1.0, 1.0));
    ++n;
  }
  return n > 0 ? acc / n * 180.0 / std::numbers::pi : 0.0;
}

std::string frame_file(int t, const char* ext) {
  std::ostringstream s;
  s << std::setw(4) << std::setfill('0') << t << ext;
  return s.str();
}

}  // namespace

// ---------------------------------------------------------------- config

void TrainConfig::validate() const {
  if (stage != 1 && stage != 2) throw ConfigError("stage must be 1 or 2");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be >= 0");
  if (steps < 0) throw ConfigError("steps must be >= 0");
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (width < 8 || height < 8) throw ConfigError("render resolution must be at least 8×8");
  if (!(delta_t > 0.0)) throw ConfigError("delta_t must be positive");
  if (holdout_every < 0 || (holdout_every > 0 && (holdout_offset < 0 || holdout_offset >= holdout_every)))
    throw ConfigError("holdout_offset must lie in [0, holdout_every)");
  if (fixed_alpha > 1.0) throw ConfigError("fixed_alpha must be <= 1 (negative for random)");
  if (stage == 2 && init_checkpoint.empty() && !from_scratch)
    throw ConfigError("stage 2 needs init_checkpoint or from_scratch = true");
  if (eval_frames < 1) throw ConfigError("eval_frames must be >= 1");
  weights.validate();
  codec.validate();
  closim.validate();
  if (closim.canonical_dim != codec.feature_dim())
    throw ConfigError("closim canonical_dim must equal 3 × codec channels");
}

Json to_json(const TrainConfig& c) {
  Json j;
  j["stage"] = c.stage;
  j["subjects"] = c.subjects;
  j["steps"] = c.steps;
  j["learning_rate"] = c.learning_rate;
  j["batch"] = c.batch;
  j["seed"] = c.seed;
  j["width"] = c.width;
  j["height"] = c.height;
  j["delta_t"] = c.delta_t;
  j["holdout_every"] = c.holdout_every;
  j["holdout_offset"] = c.holdout_offset;
  j["fixed_alpha"] = c.fixed_alpha;
  j["use_closim"] = c.use_closim;
  j["collapse_window"] = c.collapse_window;
  j["use_geometry"] = c.use_geometry;
  j["init_checkpoint"] = c.init_checkpoint;
  j["from_scratch"] = c.from_scratch;
  j["log_every"] = c.log_every;
  j["checkpoint_every"] = c.checkpoint_every;
  j["eval_every"] = c.eval_every;
  j["eval_frames"] = c.eval_frames;
  j["target_psnr"] = c.target_psnr;
  const auto& w = c.weights;
  j["weights"] = {{"normal", w.normal}, {"depth", w.depth}, {"silhouette", w.silhouette},
                  {"temporal", w.temporal}, {"rgb", w.rgb}, {"ssim", w.ssim},
                  {"perceptual", w.perceptual}, {"cloth", w.cloth}, {"reg", w.reg},
                  {"face_hands", w.face_hands}};
  const auto& k = c.codec;
  j["codec"] = {{"channels", k.triplane.channels}, {"resolution", k.triplane.height},
                {"latent_dim", k.latent_dim}, {"base_channels", k.base_channels},
                {"head_hidden", k.head_hidden}, {"max_displacement", k.max_displacement},
                {"min_scale", k.min_scale}, {"scale_unit", k.scale_unit}};
  const auto& m = c.closim;
  j["closim"] = {{"pose_joints", m.pose_joints}, {"hidden", m.hidden}, {"head_hidden", m.head_hidden},
                 {"beta_x", m.beta_x}, {"beta_c", m.beta_c}, {"beta_s", m.beta_s}};
  const auto& s = c.segment;
  j["segment"] = {{"views", s.views}, {"tau_fraction", s.tau_fraction}, {"tau_floor", s.tau_floor},
                  {"epochs", s.classifier.epochs}, {"hidden", s.classifier.hidden},
                  {"learning_rate", s.classifier.learning_rate}, {"classifier_seed", s.classifier.seed},
                  {"refine_iters", s.refine.max_iters}, {"min_component", s.refine.min_component},
                  {"hints_for_face_hands", s.hints_for_face_hands}};
  return j;
}

TrainConfig config_from_json(const Json& user) {
  const Json schema = to_json(TrainConfig{});
  check_keys(user, schema, "");
  Json j = schema;
  j.merge_patch(user);

  TrainConfig c;
  read(j, "stage", c.stage);
  read(j, "subjects", c.subjects);
  read(j, "steps", c.steps);
  read(j, "learning_rate", c.learning_rate);
  read(j, "batch", c.batch);
  read(j, "seed", c.seed);
  read(j, "width", c.width);
  read(j, "height", c.height);
  read(j, "delta_t", c.delta_t);
  read(j, "holdout_every", c.holdout_every);
  read(j, "holdout_offset", c.holdout_offset);
  read(j, "fixed_alpha", c.fixed_alpha);
  read(j, "use_closim", c.use_closim);
  read(j, "collapse_window", c.collapse_window);
  read(j, "use_geometry", c.use_geometry);
  read(j, "init_checkpoint", c.init_checkpoint);
  read(j, "from_scratch", c.from_scratch);
  read(j, "log_every", c.log_every);
  read(j, "checkpoint_every", c.checkpoint_every);
  read(j, "eval_every", c.eval_every);
  read(j, "eval_frames", c.eval_frames);
  read(j, "target_psnr", c.target_psnr);

  const Json& w = j.at("weights");
  read(w, "normal", c.weights.normal);
  read(w, "depth", c.weights.depth);
  read(w, "silhouette", c.weights.silhouette);
  read(w, "temporal", c.weights.temporal);
  read(w, "rgb", c.weights.rgb);
  read(w, "ssim", c.weights.ssim);
  read(w, "perceptual", c.weights.perceptual);
  read(w, "cloth", c.weights.cloth);
  read(w, "reg", c.weights.reg);
  read(w, "face_hands", c.weights.face_hands);

  const Json& k = j.at("codec");
  read(k, "channels", c.codec.triplane.channels);
  int res = 0;
  read(k, "resolution", res);
  c.codec.triplane.height = c.codec.triplane.width = res;
  read(k, "latent_dim", c.codec.latent_dim);
  read(k, "base_channels", c.codec.base_channels);
  read(k, "head_hidden", c.codec.head_hidden);
  read(k, "max_displacement", c.codec.max_displacement);
  read(k, "min_scale", c.codec.min_scale);
  read(k, "scale_unit", c.codec.scale_unit);

  const Json& m = j.at("closim");
  read(m, "pose_joints", c.closim.pose_joints);
  read(m, "hidden", c.closim.hidden);
  read(m, "head_hidden", c.closim.head_hidden);
  read(m, "beta_x", c.closim.beta_x);
  read(m, "beta_c", c.closim.beta_c);
  read(m, "beta_s", c.closim.beta_s);
  c.closim.canonical_dim = c.codec.feature_dim();

  const Json& s = j.at("segment");
  read(s, "views", c.segment.views);
  read(s, "tau_fraction", c.segment.tau_fraction);
  read(s, "tau_floor", c.segment.tau_floor);
  read(s, "epochs", c.segment.classifier.epochs);
  read(s, "hidden", c.segment.classifier.hidden);
  read(s, "learning_rate", c.segment.classifier.learning_rate);
  read(s, "classifier_seed", c.segment.classifier.seed);
  read(s, "refine_iters", c.segment.refine.max_iters);
  read(s, "min_component", c.segment.refine.min_component);
  read(s, "hints_for_face_hands", c.segment.hints_for_face_hands);
  c.validate();
  return c;
}

Json apply_overrides(Json j, const std::vector<std::string>& overrides) {
  const Json schema = to_json(TrainConfig{});
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + o + "' is not key=value");
    const std::string key = o.substr(0, eq), text = o.substr(eq + 1);
    Json value;
    try {
      value = Json::parse(text);
    } catch (const Json::exception&) {
      value = text;
    }
    std::string pointer;
    std::stringstream parts(key);
    for (std::string part; std::getline(parts, part, '.');) pointer += "/" + part;
    const Json::json_pointer ptr(pointer);
    if (!schema.contains(ptr)) throw ConfigError("unknown config key '" + key + "'");
    j[ptr] = value;
  }
  return j;
}

TrainConfig load_config(const fs::path& path, const std::vector<std::string>& overrides) {
  Json j = path.empty() ? Json::object() : read_json(path);
  return config_from_json(apply_overrides(std::move(j), overrides));
}

fs::path output_root() {
  const char* env = std::getenv("DRAPE_OUTPUT_ROOT");
  return fs::path(env && *env ? env : "runs");
}

fs::path resolve_output(const fs::path& p) { return p.is_absolute() ? p : output_root() / p; }

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

// ---------------------------------------------------------------- checkpoint

void save_checkpoint(const fs::path& path, const Model& model) {
  std::vector<std::pair<std::string, const Mat*>> tensors;
  for (const auto& [name, m] : model.params.values()) tensors.emplace_back(name, &m);
  for (const auto& [name, m] : model.adam.first_moments()) tensors.emplace_back("adam/m/" + name, &m);
  for (const auto& [name, m] : model.adam.second_moments()) tensors.emplace_back("adam/v/" + name, &m);

  Json header;
  header["magic"] = "DRAPECKP";
  header["version"] = kCheckpointVersion;
  header["step"] = model.step;
  header["adam_step"] = model.adam.step_count();
  const Json cfg = to_json(model.config);
  header["config"] = cfg;
  {
    std::ostringstream h;
    h << std::hex << std::setw(16) << std::setfill('0') << fnv1a(cfg.dump());
    header["config_hash"] = h.str();
  }
  header["subjects"] = model.subjects;
  Json parts = Json::object();
  for (const auto& [id, p] : model.partitions) {
    Json e;
    for (int l = 0; l < kPartCount; ++l) e[to_string(static_cast<PartLabel>(l))] = p[static_cast<std::size_t>(l)];
    parts[id] = std::move(e);
  }
  header["partitions"] = std::move(parts);
  Json manifest = Json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, m] : tensors) {
    manifest.push_back({{"name", name}, {"shape", {m->rows(), m->cols()}}, {"dtype", "f64"}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(m->size()) * sizeof(double);
  }
  header["tensors"] = std::move(manifest);
  const std::string text = header.dump();

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = fs::path(path).concat(".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp.string());
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t size = text.size();
    out.write(kCheckpointMagic, 8);
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&size), sizeof size);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, m] : tensors)
      out.write(reinterpret_cast<const char*>(m->data()), static_cast<std::streamsize>(m->size() * sizeof(double)));
    if (!out) throw IoError("short write " + tmp.string());
  }
  fs::rename(tmp, path);
}

Model load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t size = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&size), sizeof size);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw IoError("not a checkpoint: " + path.string());
  if (version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
  std::string text(size, '\0');
  in.read(text.data(), static_cast<std::streamsize>(size));
  if (!in) throw IoError("truncated checkpoint header in " + path.string());
  Json header;
  try {
    header = Json::parse(text);
  } catch (const Json::exception& e) {
    throw IoError("corrupt checkpoint header: " + std::string(e.what()));
  }
  const auto data_start = in.tellg();

  Model model;
  model.config = config_from_json(header.at("config"));
  model.step = header.at("step").get<long long>();
  model.adam = Adam(AdamConfig{.learning_rate = model.config.learning_rate});
  model.adam.set_step_count(header.at("adam_step").get<long long>());
  model.subjects = header.at("subjects").get<std::vector<std::string>>();
  for (const auto& [id, e] : header.at("partitions").items()) {
    Partition p;
    for (int l = 0; l < kPartCount; ++l)
      p[static_cast<std::size_t>(l)] = e.at(to_string(static_cast<PartLabel>(l))).get<std::vector<int>>();
    model.partitions[id] = std::move(p);
  }
  for (const auto& t : header.at("tensors")) {
    const auto name = t.at("name").get<std::string>();
    if (t.at("dtype").get<std::string>() != "f64") throw IoError("unsupported dtype for " + name);
    const auto rows = t.at("shape").at(0).get<Eigen::Index>(), cols = t.at("shape").at(1).get<Eigen::Index>();
    Mat m(rows, cols);
    in.seekg(data_start + static_cast<std::streamoff>(t.at("offset").get<std::uint64_t>()));
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in) throw IoError("truncated tensor " + name + " in " + path.string());
    if (name.rfind("adam/m/", 0) == 0) model.adam.first_moments()[name.substr(7)] = std::move(m);
    else if (name.rfind("adam/v/", 0) == 0) model.adam.second_moments()[name.substr(7)] = std::move(m);
    else model.params.add(name, std::move(m));
  }
  return model;
}

// ---------------------------------------------------------------- subjects

void save_parameters_json(const fs::path& path, const Parameters& params) {
  Json j = Json::object();
  for (const auto& [name, m] : params.values())
    j[name] = {{"shape", {m.rows(), m.cols()}}, {"data", std::vector<double>(m.data(), m.data() + m.size())}};
  write_json(path, j);
}

Parameters load_parameters_json(const fs::path& path) {
  Parameters p;
  const Json j = read_json(path);
  for (const auto& [name, e] : j.items()) {
    const auto rows = e.at("shape").at(0).get<Eigen::Index>(), cols = e.at("shape").at(1).get<Eigen::Index>();
    const auto data = e.at("data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw IoError("tensor size mismatch for " + name);
    Mat m(rows, cols);
    std::copy(data.begin(), data.end(), m.data());
    p.add(name, std::move(m));
  }
  return p;
}

namespace {

// Stores a subject's label classifier in the model as "labels/<id>/...".
void attach_classifier(Model& model, const SubjectData& s) {
  for (const auto& [name, m] : s.classifier.values()) {
    const std::string key = "labels/" + s.id + "/" + name.substr(name.find('/') + 1);
    if (model.params.contains(key)) model.params.erase(key);
    model.params.add(key, m);
  }
}

}  // namespace

std::string subject_id(const Dataset& d) { return "subject_" + std::to_string(d.seed); }

SubjectData prepare_subject(const fs::path& dir, const TrainConfig& config, const std::optional<Partition>& parts) {
  SubjectData s;
  s.data = load_dataset(dir);
  s.id = subject_id(s.data);
  if (s.data.camera.width != config.width || s.data.camera.height != config.height)
    throw ConfigError("dataset " + dir.string() + " is " + std::to_string(s.data.camera.width) + "×" +
                      std::to_string(s.data.camera.height) + " but the config renders at " +
                      std::to_string(config.width) + "×" + std::to_string(config.height));
  if (s.data.mesh.joint_count() - 1 != config.closim.pose_joints)
    throw ConfigError("closim.pose_joints must equal the skeleton's joint count minus the root");
  if (parts) {
    s.parts = *parts;
  } else if (fs::exists(dir / "labels.json")) {
    s.parts = load_partition(dir / "labels.json");
    if (fs::exists(dir / "labels_classifier.json")) s.classifier = load_parameters_json(dir / "labels_classifier.json");
  } else {
    spdlog::info("{}: no labels.json, segmenting from the template", s.id);
    SegmentResult r = segment(s.data, config.segment);
    s.parts = std::move(r.parts);
    s.classifier = std::move(r.classifier);
    save_partition(dir / "labels.json", s.parts);
    save_parameters_json(dir / "labels_classifier.json", s.classifier);
  }
  labels_from_partition(s.parts, s.data.mesh.vertex_count());  // validates coverage
  s.graph = ClothGraph::from_mesh(s.data.mesh.edges(), s.parts[static_cast<int>(PartLabel::Cloth)]);
  for (PartLabel l : {PartLabel::Face, PartLabel::Hands})
    for (int i : s.parts[static_cast<int>(l)]) s.face_hands.push_back(i);
  std::sort(s.face_hands.begin(), s.face_hands.end());
  for (const auto& seg : s.data.seg) {
    Vec m(static_cast<Eigen::Index>(seg.size()));
    for (std::size_t p = 0; p < seg.size(); ++p)
      m(static_cast<Eigen::Index>(p)) = seg[p] == static_cast<int>(PartLabel::Cloth) ? 1.0 : 0.0;
    s.cloth_masks.push_back(std::move(m));
  }
  for (int f = 0; f < static_cast<int>(s.data.frame_count()); ++f)
    (is_heldout(config, f) ? s.heldout_frames : s.train_frames).push_back(f);
  return s;
}

Model init_model(const TrainConfig& config, const std::vector<std::string>& subject_ids) {
  config.validate();
  Model m;
  m.config = config;
  m.adam = Adam(AdamConfig{.learning_rate = config.learning_rate});
  std::mt19937_64 rng(config.seed);
  m.codec().init_parameters(m.params, rng);
  m.closim().init_parameters(m.params, rng);
  for (const auto& id : subject_ids) {
    m.params.add(latent_name(id), m.codec().init_latent(rng));
    m.subjects.push_back(id);
  }
  return m;
}

// ---------------------------------------------------------------- training

void add_window_terms(Bound& p, const Model& model, const SubjectData& s, const StepSample& sample,
                      Objective& objective) {
  const TrainConfig& cfg = model.config;
  const auto& track = s.data.poses;
  const auto& mesh = s.data.mesh;
  const auto& gt = s.data.frames[static_cast<std::size_t>(sample.frame)];
  const auto N = mesh.vertex_count();
  const auto& cloth = s.parts[static_cast<int>(PartLabel::Cloth)];
  const auto& w = cfg.weights;
  const AvatarCodec codec = model.codec();

  StaticAvatarVars sv = codec.build_static_avatar(p, p(latent_name(s.id)), mesh);
  ad::Var pos = sv.positions, colors = sv.attributes.colors, scales = sv.attributes.scales;

  std::vector<ad::Var> offsets;
  if (cfg.use_closim && !cloth.empty()) {
    PoseWindow window = build_window(track, sample.center, cfg.delta_t);
    if (cfg.collapse_window) window = collapse_window(window);
    offsets = model.closim().forward(p, ad::gather_rows(sv.features, cloth), window, s.graph);
    const OffsetSelection sel = select_offsets(window, track, sample.frame);
    ad::Var o = sel.center ? offsets[1] : interpolate_offsets(offsets[0], offsets[2], sel.alpha);
    pos = ad::add(pos, ad::scatter_rows(ad::slice_cols(o, 0, 3), cloth, N));
    colors = ad::clamp(ad::add(colors, ad::scatter_rows(ad::slice_cols(o, 3, 3), cloth, N)), 0.0, 1.0);
    scales = ad::max_scalar(ad::add(scales, ad::scatter_rows(ad::slice_cols(o, 6, 1), cloth, N)), kMinScale);
  }

  const Camera& cam = s.data.camera;
  const int W = cam.width, H = cam.height;
  ad::Var posed = lbs_op(pos, mesh.skin_weights, track[static_cast<std::size_t>(sample.frame)], mesh);
  ad::Var normals = vertex_normals_op(posed, mesh.faces);
  ad::Var img = render_op(posed, scales, colors, normals, cam);
  ad::Var rgb = ad::slice_cols(img, 0, 3);

  static const PyramidGradientMetric metric;
  const RenderingTerms r = rendering_loss(rgb, gt.rgb, W, H, metric);
  objective.add("rgb", r.l1, w.rgb);
  objective.add("ssim", r.ssim, w.ssim);
  objective.add("perceptual", r.perceptual, w.perceptual);

  const Vec& mask = s.cloth_masks[static_cast<std::size_t>(sample.frame)];
  if (!cloth.empty() && w.cloth > 0.0 && mask.sum() > 0.0) {
    ad::Var cloth_img = render_op(ad::gather_rows(posed, cloth), ad::gather_rows(scales, cloth),
                                  ad::gather_rows(colors, cloth), ad::gather_rows(normals, cloth), cam);
    objective.add("cloth", cloth_loss(ad::slice_cols(cloth_img, 0, 3), gt.rgb, mask), w.cloth);
  }

  if (cfg.use_geometry) {
    const GeometryTerms g = geometry_loss(ad::slice_cols(img, 3, 3), gt.normal, ad::slice_cols(img, 6, 1),
                                          Mat(gt.depth), ad::slice_cols(img, 7, 1), Mat(gt.silhouette), w);
    objective.add("normal", g.normal, w.normal);
    objective.add("depth", g.depth, w.depth);
    objective.add("silhouette", g.silhouette, w.silhouette);
  }

  if (!offsets.empty()) {
    objective.add("temporal", temporal_loss(offsets), w.temporal);
    objective.add("reg", offset_regularizer(offsets).total, w.reg);
  }

  if (!s.face_hands.empty()) {
    Mat target(static_cast<Eigen::Index>(s.face_hands.size()), 3);
    for (std::size_t k = 0; k < s.face_hands.size(); ++k)
      target.row(static_cast<Eigen::Index>(k)) = mesh.vertices.row(s.face_hands[k]);
    objective.add("face_hands", position_loss(ad::gather_rows(sv.positions, s.face_hands), target), w.face_hands);
  }
}

namespace {

StepSample draw_sample(std::mt19937_64& rng, const TrainConfig& cfg, const std::vector<SubjectData>& subjects) {
  std::uniform_int_distribution<int> pick(0, static_cast<int>(subjects.size()) - 1);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int attempt = 0; attempt < 10000; ++attempt) {
    StepSample s;
    s.subject = pick(rng);
    const auto& track = subjects[static_cast<std::size_t>(s.subject)].data.poses;
    const double lo = clamp_window_center(track, track.front().timestamp, cfg.delta_t);
    const double hi = clamp_window_center(track, track.back().timestamp, cfg.delta_t);
    s.center = lo + (hi - lo) * u01(rng);
    s.alpha = cfg.fixed_alpha >= 0.0 ? cfg.fixed_alpha : u01(rng);
    s.frame = nearest_frame(track, s.center - cfg.delta_t + 2.0 * cfg.delta_t * s.alpha);
    if (!is_heldout(cfg, s.frame)) return s;
  }
  throw ConfigError("could not sample a training frame outside the held-out set");
}

double heldout_psnr(const Model& model, const SubjectData& s, int count) {
  std::vector<int> frames;
  const auto& h = s.heldout_frames;
  if (h.empty()) return 0.0;
  const int n = std::min<int>(count, static_cast<int>(h.size()));
  for (int k = 0; k < n; ++k) frames.push_back(h[static_cast<std::size_t>(k * static_cast<int>(h.size()) / n)]);
  return evaluate(model, s, frames).mean.psnr;
}

}  // namespace

TrainResult train(Model& model, const std::vector<SubjectData>& subjects, const fs::path& out_dir,
                  const StepCallback& callback) {
  const TrainConfig& cfg = model.config;
  DRAPE_REQUIRE(!subjects.empty(), "train: no subjects");
  for (const auto& s : subjects)
    DRAPE_REQUIRE(model.params.contains(latent_name(s.id)), "train: no latent code for " + s.id);
  model.adam.config().learning_rate = cfg.learning_rate;
  if (!out_dir.empty()) fs::create_directories(out_dir);
  const fs::path log_path = out_dir.empty() ? fs::path() : out_dir / "train_log.csv";
  if (!log_path.empty() && model.step == 0 && fs::exists(log_path)) fs::remove(log_path);

  // The sampler stream depends only on the seed and the step count so a
  // resumed run continues the same sequence.
  std::mt19937_64 rng(cfg.seed ^ 0xD1B54A32D192ED03ULL);
  std::uniform_real_distribution<double> burn(0.0, 1.0);
  for (long long k = 0; k < model.step; ++k) {
    (void)draw_sample(rng, cfg, subjects);
    for (int b = 1; b < cfg.batch; ++b) (void)draw_sample(rng, cfg, subjects);
  }

  TrainResult result;
  for (int it = 0; it < cfg.steps; ++it) {
    ad::Tape tape;
    Bound p(tape, model.params);
    Objective objective;
    for (int b = 0; b < cfg.batch; ++b) {
      const StepSample sample = draw_sample(rng, cfg, subjects);
      add_window_terms(p, model, subjects[static_cast<std::size_t>(sample.subject)], sample, objective);
    }
    ad::Var total;
    try {
      total = objective.total(tape);
    } catch (const TrainingAbort&) {
      if (!out_dir.empty()) {
        save_checkpoint(out_dir / "checkpoint_last_good.bin", model);
        spdlog::error("non-finite loss at step {}; last good checkpoint written to {}", model.step + 1,
                      (out_dir / "checkpoint_last_good.bin").string());
      }
      throw;
    }
    tape.backward(total);
    model.adam.step(model.params, p.gradients());
    ++model.step;
    ++result.steps_run;

    LossReport report = objective.report();
    if (cfg.batch > 1) {
      for (auto& t : report.terms) t.value /= cfg.batch;
      report.total /= cfg.batch;
    }
    result.totals.push_back(report.total);
    result.last = report;
    if (!log_path.empty()) append_loss_csv(log_path, static_cast<int>(model.step), report);
    if (cfg.log_every > 0 && model.step % cfg.log_every == 0)
      spdlog::info("step {:>6}  loss {:.5f}", model.step, report.total);
    if (callback) callback(static_cast<int>(model.step), report);
    if (!out_dir.empty() && cfg.checkpoint_every > 0 && model.step % cfg.checkpoint_every == 0)
      save_checkpoint(out_dir / "checkpoint.bin", model);

    if (cfg.eval_every > 0 && model.step % cfg.eval_every == 0) {
      double psnr = 0.0;
      for (const auto& s : subjects) psnr += heldout_psnr(model, s, cfg.eval_frames);
      psnr /= static_cast<double>(subjects.size());
      result.eval_psnr.emplace_back(static_cast<int>(model.step), psnr);
      spdlog::info("step {:>6}  held-out PSNR {:.2f} dB", model.step, psnr);
      if (cfg.target_psnr > 0.0 && psnr >= cfg.target_psnr) {
        result.target_step = static_cast<int>(model.step);
        break;
      }
    }
  }
  if (!out_dir.empty()) save_checkpoint(out_dir / "checkpoint.bin", model);
  return result;
}

Model train_stage1(const TrainConfig& config, const fs::path& out_dir, TrainResult* result) {
  config.validate();
  if (config.subjects.size() < 2) throw ConfigError("stage 1 trains on at least two subjects");
  std::vector<SubjectData> subjects;
  std::vector<std::string> ids;
  for (const auto& dir : config.subjects) {
    subjects.push_back(prepare_subject(dir, config));
    ids.push_back(subjects.back().id);
  }
  if (std::set<std::string>(ids.begin(), ids.end()).size() != ids.size())
    throw ConfigError("stage 1 subjects must be distinct");
  Model model = init_model(config, ids);
  for (const auto& s : subjects) {
    model.partitions[s.id] = s.parts;
    attach_classifier(model, s);
  }
  TrainResult r = train(model, subjects, out_dir);
  if (result) *result = std::move(r);
  return model;
}

Model train_stage2(const TrainConfig& config, const fs::path& out_dir, TrainResult* result) {
  config.validate();
  if (config.subjects.size() != 1) throw ConfigError("stage 2 fine-tunes on exactly one subject");
  SubjectData s = prepare_subject(config.subjects.front(), config);
  Model model;
  if (config.init_checkpoint.empty()) {
    model = init_model(config, {s.id});
  } else {
    model = load_checkpoint(config.init_checkpoint);
    // Architecture comes from the checkpoint; everything else from the config.
    TrainConfig merged = config;
    merged.codec = model.config.codec;
    merged.closim = model.config.closim;
    merged.validate();
    model.config = merged;
    std::mt19937_64 rng(config.seed);
    const std::string name = latent_name(s.id);
    if (model.params.contains(name)) model.params.erase(name);
    model.params.add(name, model.codec().init_latent(rng));
    model.adam.forget(name);
    model.step = 0;
    if (std::find(model.subjects.begin(), model.subjects.end(), s.id) == model.subjects.end())
      model.subjects.push_back(s.id);
  }
  model.partitions[s.id] = s.parts;
  attach_classifier(model, s);
  TrainResult r = train(model, {s}, out_dir);
  if (result) *result = std::move(r);
  return model;
}

Model resume_training(const fs::path& checkpoint, const std::vector<std::string>& overrides, const fs::path& out_dir,
                      TrainResult* result) {
  Model model = load_checkpoint(checkpoint);
  const TrainConfig stored = model.config;
  model.config = config_from_json(apply_overrides(to_json(stored), overrides));
  model.config.codec = stored.codec;
  model.config.closim = stored.closim;
  model.config.validate();
  std::vector<SubjectData> subjects;
  for (const auto& dir : model.config.subjects) {
    const auto seed = read_json(fs::path(dir) / "manifest.json").at("seed").get<std::uint64_t>();
    auto it = model.partitions.find("subject_" + std::to_string(seed));
    subjects.push_back(prepare_subject(dir, model.config,
                                       it == model.partitions.end() ? std::nullopt : std::optional(it->second)));
  }
  const long long remaining = std::max<long long>(0, model.config.steps - model.step);
  const int total_steps = model.config.steps;
  model.config.steps = static_cast<int>(remaining);
  TrainResult r = train(model, subjects, out_dir);
  model.config.steps = total_steps;
  if (!out_dir.empty()) save_checkpoint(out_dir / "checkpoint.bin", model);
  if (result) *result = std::move(r);
  return model;
}

// ---------------------------------------------------------------- rendering

Avatar model_avatar(const Model& model, const std::string& subject) {
  const std::string name = latent_name(subject);
  if (!model.params.contains(name)) throw ConfigError("checkpoint has no latent code for " + subject);
  auto it = model.partitions.find(subject);
  if (it == model.partitions.end()) throw ConfigError("checkpoint has no partition for " + subject);
  const SkinnedMesh mesh = build_canonical_body(BodyConfig{});
  return build_avatar(model.codec(), model.params, model.params.at(name), mesh, it->second);
}

namespace {

RenderTargets render_frame(const Model& model, const Avatar& avatar, const std::vector<Pose>& track, int frame,
                           const Camera& camera, RenderSubset subset) {
  const Closim closim = model.closim();
  const Mat off = cloth_offsets_at(avatar, model.config.use_closim ? &closim : nullptr, model.params, track, frame,
                                   model.config.delta_t, model.config.collapse_window);
  return render_avatar(avatar, off, track[static_cast<std::size_t>(frame)], camera, subset);
}

}  // namespace

EvalResult evaluate(const Model& model, const SubjectData& s, const std::vector<int>& frames) {
  Avatar avatar;
  if (model.partitions.count(s.id)) {
    avatar = model_avatar(model, s.id);
  } else {
    const std::string name = latent_name(s.id);
    if (!model.params.contains(name)) throw ConfigError("checkpoint has no latent code for " + s.id);
    avatar = build_avatar(model.codec(), model.params, model.params.at(name), s.data.mesh, s.parts);
  }
  static const PyramidGradientMetric metric;
  EvalResult r;
  const int W = s.data.camera.width, H = s.data.camera.height;
  for (int f : frames) {
    DRAPE_REQUIRE(f >= 0 && f < static_cast<int>(s.data.frame_count()), "evaluate: frame out of range");
    const RenderTargets pred = render_frame(model, avatar, s.data.poses, f, s.data.camera, RenderSubset::All);
    const RenderTargets& gt = s.data.frames[static_cast<std::size_t>(f)];
    FrameMetrics m;
    m.frame = f;
    m.psnr = psnr(pred.rgb, gt.rgb);
    m.ssim = ssim(pred.rgb, gt.rgb, W, H);
    m.perceptual = metric.value(pred.rgb, gt.rgb, W, H);
    m.normal_angle_deg = mean_normal_angle(pred, gt);
    r.frames.push_back(m);
  }
  if (!r.frames.empty()) {
    const double n = static_cast<double>(r.frames.size());
    for (const auto& m : r.frames) {
      r.mean.psnr += m.psnr / n;
      r.mean.ssim += m.ssim / n;
      r.mean.perceptual += m.perceptual / n;
      r.mean.normal_angle_deg += m.normal_angle_deg / n;
    }
  }
  r.mean.frame = -1;
  return r;
}

void write_metrics(const fs::path& dir, const EvalResult& r) {
  fs::create_directories(dir);
  Json j;
  auto row = [](const FrameMetrics& m) {
    return Json{{"frame", m.frame},
                {"psnr", m.psnr},
                {"ssim", m.ssim},
                {"perceptual", m.perceptual},
                {"normal_angle_deg", m.normal_angle_deg}};
  };
  j["frames"] = Json::array();
  for (const auto& m : r.frames) j["frames"].push_back(row(m));
  j["mean"] = row(r.mean);
  j["mean"].erase("frame");
  write_json(dir / "metrics.json", j);
  std::ofstream csv(dir / "metrics.csv");
  if (!csv) throw IoError("cannot write " + (dir / "metrics.csv").string());
  csv << std::setprecision(17) << "frame,psnr,ssim,perceptual,normal_angle_deg\n";
  for (const auto& m : r.frames)
    csv << m.frame << ',' << m.psnr << ',' << m.ssim << ',' << m.perceptual << ',' << m.normal_angle_deg << '\n';
  csv << "mean," << r.mean.psnr << ',' << r.mean.ssim << ',' << r.mean.perceptual << ',' << r.mean.normal_angle_deg
      << '\n';
}

std::vector<RenderTargets> animate(const Model& model, const Avatar& avatar, const std::vector<Pose>& track,
                                   const Camera& camera, const fs::path& out_dir, RenderSubset subset) {
  if (track.size() < 2) throw BoundaryError("pose track shorter than one window");
  (void)clamp_window_center(track, track.front().timestamp, model.config.delta_t);
  std::vector<RenderTargets> frames;
  frames.reserve(track.size());
  for (int f = 0; f < static_cast<int>(track.size()); ++f) {
    frames.push_back(render_frame(model, avatar, track, f, camera, subset));
    if (!out_dir.empty()) {
      write_png_rgb(out_dir / frame_file(f, ".png"), frames.back().rgb, camera.width, camera.height);
      write_flt(out_dir / frame_file(f, ".flt"), frames.back().packed(), camera.width, camera.height);
    }
  }
  return frames;
}

// ---------------------------------------------------------------- segmentation

SegmentResult segment(const Dataset& d, const SegmentConfig& config, const Model* model) {
  DRAPE_REQUIRE(config.views >= 1, "segment: views must be >= 1");
  const SkinnedMesh& mesh = d.mesh;
  const auto N = mesh.vertex_count();
  Mat positions = mesh.vertices;
  Mat features(N, 0);
  const std::string id = subject_id(d);
  if (model && model->params.contains(latent_name(id))) {
    const Mat& z = model->params.at(latent_name(id));
    positions = model->codec().build_static_avatar(model->params, z, mesh).positions;
    features = sample_features(model->codec().decode_triplane(model->params, z), mesh.vertices);
  }

  std::vector<std::vector<int>> views;
  if (!d.views.cameras.empty()) {
    const Mat posed = lbs_deform(positions, Mat::Zero(N, 3), d.views.pose, mesh);
    const int V = std::min<int>(config.views, static_cast<int>(d.views.cameras.size()));
    for (int k = 0; k < V; ++k) {
      const auto i = static_cast<std::size_t>(k * static_cast<int>(d.views.cameras.size()) / V);
      const auto& frame = d.views.frames[i];
      const double tau = visibility_tolerance(frame.depth, frame.silhouette, config.tau_fraction, config.tau_floor);
      views.push_back(project_labels(posed, d.views.cameras[i], d.views.seg[i], frame.depth, tau));
    }
  } else {
    const int T = static_cast<int>(d.frame_count());
    DRAPE_REQUIRE(T > 0, "segment: dataset has no frames");
    const int V = std::min(config.views, T);
    for (int k = 0; k < V; ++k) {
      const int f = static_cast<int>((static_cast<long long>(k) * T) / V);
      const auto& frame = d.frames[static_cast<std::size_t>(f)];
      const Mat posed = lbs_deform(positions, Mat::Zero(N, 3), d.poses[static_cast<std::size_t>(f)], mesh);
      const double tau = visibility_tolerance(frame.depth, frame.silhouette, config.tau_fraction, config.tau_floor);
      views.push_back(project_labels(posed, d.camera, d.seg[static_cast<std::size_t>(f)], frame.depth, tau));
    }
  }
  const std::vector<int> pseudo = merge_pseudo_labels(views);

  SegmentResult r;
  int agree = 0, known = 0;
  for (Eigen::Index i = 0; i < N; ++i) {
    if (pseudo[static_cast<std::size_t>(i)] == kUnknownLabel) continue;
    ++known;
    agree += pseudo[static_cast<std::size_t>(i)] == static_cast<int>(d.gt_labels[static_cast<std::size_t>(i)]);
  }
  r.pseudo_agreement = known > 0 ? static_cast<double>(agree) / known : 0.0;

  const LabelClassifier classifier(config.classifier);
  const Mat inputs = LabelClassifier::inputs(positions, features);
  // Every 10th pseudo-labeled point is withheld from training for evaluation.
  std::vector<int> train_labels = pseudo;
  std::vector<bool> withheld(static_cast<std::size_t>(N), false);
  for (Eigen::Index i = 0, k = 0; i < N; ++i) {
    if (pseudo[static_cast<std::size_t>(i)] == kUnknownLabel) continue;
    if (k++ % 10 == 0) {
      withheld[static_cast<std::size_t>(i)] = true;
      train_labels[static_cast<std::size_t>(i)] = kUnknownLabel;
    }
  }
  const ClassifierResult cr = classifier.train(r.classifier, inputs, train_labels);
  r.classifier_accuracy = cr.accuracy;
  const LabelField predicted = classifier.predict(r.classifier, inputs);
  const LabelField refined = refine_labels(predicted, mesh.edges(), config.refine);
  r.parts = partition(refined, config.hints_for_face_hands ? &mesh.part_hint : nullptr);
  const LabelField final_labels = labels_from_partition(r.parts, N);
  int held = 0, held_ok = 0, unseen = 0, unseen_ok = 0;
  for (Eigen::Index i = 0; i < N; ++i) {
    const auto u = static_cast<std::size_t>(i);
    const bool ok = final_labels.labels[u] == d.gt_labels[u];
    if (withheld[u]) {
      ++held;
      held_ok += ok;
    } else if (pseudo[u] == kUnknownLabel) {
      ++unseen;
      unseen_ok += ok;
    }
  }
  r.heldout_accuracy = held > 0 ? static_cast<double>(held_ok) / held : 1.0;
  r.unseen_accuracy = unseen > 0 ? static_cast<double>(unseen_ok) / unseen : 1.0;

  int tp = 0, gt_cloth = 0, pred_cloth = 0;
  std::vector<bool> is_pred(static_cast<std::size_t>(N), false);
  for (int i : r.parts[static_cast<int>(PartLabel::Cloth)]) is_pred[static_cast<std::size_t>(i)] = true;
  for (Eigen::Index i = 0; i < N; ++i) {
    const bool g = d.gt_labels[static_cast<std::size_t>(i)] == PartLabel::Cloth;
    const bool p = is_pred[static_cast<std::size_t>(i)];
    gt_cloth += g;
    pred_cloth += p;
    tp += g && p;
  }
  r.cloth_recall = gt_cloth > 0 ? static_cast<double>(tp) / gt_cloth : 1.0;
  r.cloth_precision = pred_cloth > 0 ? static_cast<double>(tp) / pred_cloth : 1.0;
  spdlog::info("{}: pseudo-label agreement {:.3f}, classifier accuracy {:.3f}, held-out {:.3f}, unseen {:.3f}, "
               "cloth recall {:.3f}, precision {:.3f}",
               id, r.pseudo_agreement, r.classifier_accuracy, r.heldout_accuracy, r.unseen_accuracy, r.cloth_recall,
               r.cloth_precision);
  return r;
}

}  // namespace drape
