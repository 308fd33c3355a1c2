#include "drape/closim.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace drape {

namespace {

int nearest_frame(const std::vector<Pose>& track, double t) {
  auto it = std::lower_bound(track.begin(), track.end(), t,
                             [](const Pose& p, double v) { return p.timestamp < v; });
  if (it == track.end()) return static_cast<int>(track.size()) - 1;
  const int hi = static_cast<int>(it - track.begin());
  if (hi == 0) return 0;
  // Ties go to the earlier frame.
  return (t - track[hi - 1].timestamp <= track[hi].timestamp - t) ? hi - 1 : hi;
}

double frame_duration(const std::vector<Pose>& track) {
  return (track.back().timestamp - track.front().timestamp) / static_cast<double>(track.size() - 1);
}

}  // namespace

PoseWindow build_window(const std::vector<Pose>& track, double t, double delta_t) {
  DRAPE_REQUIRE(track.size() >= 2, "build_window: track needs at least two frames");
  DRAPE_REQUIRE(delta_t > 0.0, "build_window: delta_t must be positive");
  for (std::size_t i = 1; i < track.size(); ++i)
    DRAPE_REQUIRE(track[i].timestamp > track[i - 1].timestamp, "build_window: timestamps must increase");
  const double half = 0.5 * frame_duration(track);
  const double tol = 1e-9;
  if (t - delta_t < track.front().timestamp - half - tol || t + delta_t > track.back().timestamp + half + tol)
    throw BoundaryError("pose window [" + std::to_string(t - delta_t) + ", " + std::to_string(t + delta_t) +
                        "] outside track [" + std::to_string(track.front().timestamp) + ", " +
                        std::to_string(track.back().timestamp) + "]");
  PoseWindow w;
  w.delta_t = delta_t;
  const double centers[3] = {t - delta_t, t, t + delta_t};
  for (int k = 0; k < 3; ++k) {
    w.frames[k] = nearest_frame(track, centers[k]);
    w.poses[k] = track[static_cast<std::size_t>(w.frames[k])];
  }
  if (!(w.frames[0] < w.frames[1] && w.frames[1] < w.frames[2]))
    throw BoundaryError("pose window collapses: delta_t shorter than the frame spacing");
  return w;
}

PoseWindow collapse_window(const PoseWindow& window) {
  PoseWindow w = window;
  for (int k : {0, 2}) {
    const double ts = w.poses[k].timestamp;
    w.poses[k] = window.poses[1];
    w.poses[k].timestamp = ts;
  }
  return w;
}

double clamp_window_center(const std::vector<Pose>& track, double t, double delta_t) {
  DRAPE_REQUIRE(track.size() >= 2, "clamp_window_center: track needs at least two frames");
  const double lo = track.front().timestamp + delta_t;
  const double hi = track.back().timestamp - delta_t;
  if (lo > hi) throw BoundaryError("track shorter than the pose window");
  return std::clamp(t, lo, hi);
}

ad::SparseMat normalized_adjacency(int count, const std::vector<std::array<int, 2>>& edges) {
  Vec degree = Vec::Ones(count);
  for (const auto& e : edges) {
    DRAPE_REQUIRE(e[0] != e[1], "cloth graph: self-loop");
    DRAPE_REQUIRE(e[0] >= 0 && e[1] >= 0 && e[0] < count && e[1] < count, "cloth graph: edge out of range");
    degree[e[0]] += 1.0;
    degree[e[1]] += 1.0;
  }
  const Vec inv_sqrt = degree.cwiseSqrt().cwiseInverse();
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(count) + 2 * edges.size());
  for (int i = 0; i < count; ++i) trip.emplace_back(i, i, inv_sqrt[i] * inv_sqrt[i]);
  for (const auto& e : edges) {
    const double v = inv_sqrt[e[0]] * inv_sqrt[e[1]];
    trip.emplace_back(e[0], e[1], v);
    trip.emplace_back(e[1], e[0], v);
  }
  ad::SparseMat a(count, count);
  a.setFromTriplets(trip.begin(), trip.end());
  return a;
}

ClothGraph ClothGraph::from_local(int count, const std::vector<std::array<int, 2>>& local_edges) {
  std::set<std::array<int, 2>> unique;
  for (auto e : local_edges) {
    DRAPE_REQUIRE(e[0] != e[1], "cloth graph: self-loop");
    if (e[0] > e[1]) std::swap(e[0], e[1]);
    unique.insert(e);
  }
  ClothGraph g;
  g.nodes.resize(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) g.nodes[static_cast<std::size_t>(i)] = i;
  g.edges.assign(unique.begin(), unique.end());
  g.adjacency = normalized_adjacency(count, g.edges);
  return g;
}

ClothGraph ClothGraph::from_mesh(const std::vector<std::array<int, 2>>& mesh_edges, const std::vector<int>& nodes) {
  std::map<int, int> local;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const bool fresh = local.emplace(nodes[i], static_cast<int>(i)).second;
    DRAPE_REQUIRE(fresh, "cloth graph: duplicate node");
  }
  std::vector<std::array<int, 2>> edges;
  for (const auto& e : mesh_edges) {
    auto a = local.find(e[0]);
    auto b = local.find(e[1]);
    if (a != local.end() && b != local.end() && a->second != b->second) edges.push_back({a->second, b->second});
  }
  ClothGraph g = from_local(static_cast<int>(nodes.size()), edges);
  g.nodes = nodes;
  return g;
}

void ClosimConfig::validate() const {
  if (pose_joints <= 0 || canonical_dim <= 0 || hidden <= 0 || head_hidden <= 0)
    throw ConfigError("closim: dimensions must be positive");
  if (beta_x <= 0 || beta_c <= 0 || beta_s <= 0) throw ConfigError("closim: offset bounds must be positive");
}

Mat encode_pose_features(const Pose& pose, int pose_joints) {
  DRAPE_REQUIRE(pose.joint_rotations.rows() == pose_joints + 1 && pose.joint_rotations.cols() == 3,
                "encode_pose_features: expected " + std::to_string(pose_joints + 1) + " joints, got " +
                    std::to_string(pose.joint_rotations.rows()));
  Mat out(1, 6 * pose_joints);
  for (int j = 0; j < pose_joints; ++j) {
    const Mat3 r = axis_angle_to_matrix(pose.joint_rotations.row(j + 1).transpose());
    for (int k = 0; k < 3; ++k) {
      out(0, 6 * j + k) = r(k, 0);
      out(0, 6 * j + 3 + k) = r(k, 1);
    }
  }
  return out;
}

ad::Var gcn_layer(ad::Var x, ad::Var weight, ad::Var bias, const ad::SparseMat& adjacency) {
  DRAPE_REQUIRE(adjacency.rows() == x.rows(), "gcn_layer: node count mismatch");
  return ad::add_row(ad::spmm(adjacency, ad::matmul(x, weight)), bias);
}

Mat interpolate_offsets(const Mat& off_a, const Mat& off_b, double alpha) {
  DRAPE_REQUIRE(alpha >= 0.0 && alpha <= 1.0, "interpolate_offsets: alpha outside [0,1]");
  DRAPE_REQUIRE(off_a.rows() == off_b.rows() && off_a.cols() == off_b.cols(), "interpolate_offsets: shape mismatch");
  if (alpha == 0.0) return off_a;
  if (alpha == 1.0) return off_b;
  return (1.0 - alpha) * off_a + alpha * off_b;
}

ad::Var interpolate_offsets(ad::Var off_a, ad::Var off_b, double alpha) {
  DRAPE_REQUIRE(alpha >= 0.0 && alpha <= 1.0, "interpolate_offsets: alpha outside [0,1]");
  if (alpha == 0.0) return ad::scale(off_a, 1.0);
  if (alpha == 1.0) return ad::scale(off_b, 1.0);
  return ad::add(ad::scale(off_a, 1.0 - alpha), ad::scale(off_b, alpha));
}

Closim::Closim(ClosimConfig config) : config_(config) { config_.validate(); }

void Closim::init_parameters(Parameters& params, std::mt19937_64& rng) const {
  const int in = config_.canonical_dim + config_.pose_feature_dim();
  const int h = config_.hidden;
  params.add("closim/gcn1/w", glorot(in, h, rng));
  params.add("closim/gcn1/b", Mat::Zero(1, h));
  params.add("closim/gcn2/w", glorot(h, h, rng));
  params.add("closim/gcn2/b", Mat::Zero(1, h));
  // Gate blocks ordered [reset, update, candidate].
  Mat wi(h, 3 * h), wh(h, 3 * h);
  for (int g = 0; g < 3; ++g) {
    wi.middleCols(g * h, h) = glorot(h, h, rng);
    wh.middleCols(g * h, h) = glorot(h, h, rng);
  }
  params.add("closim/gru/w_i", wi);
  params.add("closim/gru/w_h", wh);
  params.add("closim/gru/b_i", Mat::Zero(1, 3 * h));
  params.add("closim/gru/b_h", Mat::Zero(1, 3 * h));
  params.add("closim/head/w1", glorot(h, config_.head_hidden, rng));
  params.add("closim/head/b1", Mat::Zero(1, config_.head_hidden));
  params.add("closim/head/w2", Mat::Zero(config_.head_hidden, 7));
  params.add("closim/head/b2", Mat::Zero(1, 7));
}

ad::Var Closim::gcn_encode(Bound& p, ad::Var feat_cano, ad::Var feat_pose, const ClothGraph& graph) const {
  DRAPE_REQUIRE(feat_cano.rows() == graph.size(), "gcn_encode: canonical features do not match graph size");
  DRAPE_REQUIRE(feat_cano.cols() == config_.canonical_dim, "gcn_encode: canonical feature width mismatch");
  DRAPE_REQUIRE(feat_pose.cols() == config_.pose_feature_dim(), "gcn_encode: pose feature width mismatch");
  ad::Var pose = feat_pose.rows() == 1 ? ad::broadcast_rows(feat_pose, graph.size()) : feat_pose;
  DRAPE_REQUIRE(pose.rows() == graph.size(), "gcn_encode: pose features do not match graph size");
  ad::Var parts[] = {feat_cano, pose};
  ad::Var x = ad::concat_cols(parts);
  ad::Var h1 = ad::tanh(gcn_layer(x, p("closim/gcn1/w"), p("closim/gcn1/b"), graph.adjacency));
  return gcn_layer(h1, p("closim/gcn2/w"), p("closim/gcn2/b"), graph.adjacency);
}

ad::Var Closim::gru_step(Bound& p, ad::Var x, ad::Var h) const {
  const int n = config_.hidden;
  ad::Var gi = ad::linear(x, p("closim/gru/w_i"), p("closim/gru/b_i"));
  ad::Var gh = ad::linear(h, p("closim/gru/w_h"), p("closim/gru/b_h"));
  ad::Var r = ad::sigmoid(ad::add(ad::slice_cols(gi, 0, n), ad::slice_cols(gh, 0, n)));
  ad::Var z = ad::sigmoid(ad::add(ad::slice_cols(gi, n, n), ad::slice_cols(gh, n, n)));
  ad::Var c = ad::tanh(ad::add(ad::slice_cols(gi, 2 * n, n), ad::mul(r, ad::slice_cols(gh, 2 * n, n))));
  // h' = (1−z)·c + z·h = c + z·(h − c)
  return ad::add(c, ad::mul(z, ad::sub(h, c)));
}

ad::Var Closim::head(Bound& p, ad::Var h) const {
  ad::Var hidden = ad::silu(ad::linear(h, p("closim/head/w1"), p("closim/head/b1")));
  ad::Var raw = ad::tanh(ad::linear(hidden, p("closim/head/w2"), p("closim/head/b2")));
  Mat bound(1, 7);
  bound << config_.beta_x, config_.beta_x, config_.beta_x, config_.beta_c, config_.beta_c, config_.beta_c,
      config_.beta_s;
  return ad::mul_row(raw, h.tape->constant(bound));
}

std::vector<ad::Var> Closim::gru_rollout(Bound& p, const std::vector<ad::Var>& z_seq, ad::Var h0) const {
  DRAPE_REQUIRE(!z_seq.empty(), "gru_rollout: empty sequence");
  ad::Var h = h0.id >= 0 ? h0 : z_seq.front().tape->constant(Mat::Zero(z_seq.front().rows(), config_.hidden));
  DRAPE_REQUIRE(h.rows() == z_seq.front().rows() && h.cols() == config_.hidden, "gru_rollout: h0 shape mismatch");
  std::vector<ad::Var> out;
  out.reserve(z_seq.size());
  for (const ad::Var& z : z_seq) {
    h = gru_step(p, z, h);
    out.push_back(head(p, h));
  }
  return out;
}

std::vector<ad::Var> Closim::forward(Bound& p, ad::Var feat_cano, const PoseWindow& window, const ClothGraph& graph,
                                     ad::Var h0) const {
  std::vector<ad::Var> z;
  z.reserve(3);
  for (const Pose& pose : window.poses) {
    ad::Var fp = feat_cano.tape->constant(encode_pose_features(pose, config_.pose_joints));
    z.push_back(gcn_encode(p, feat_cano, fp, graph));
  }
  return gru_rollout(p, z, h0);
}

OffsetSequence Closim::forward(const Parameters& params, const Mat& feat_cano, const PoseWindow& window,
                               const ClothGraph& graph) const {
  ad::Tape tape;
  Bound p(tape, params, false);
  auto offsets = forward(p, tape.constant(feat_cano), window, graph);
  OffsetSequence seq;
  for (std::size_t k = 0; k < offsets.size(); ++k) {
    seq.frames.push_back(offsets[k].value());
    seq.timestamps.push_back(window.poses[k].timestamp);
  }
  return seq;
}

}  // namespace drape
