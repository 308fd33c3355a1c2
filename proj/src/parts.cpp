#include "drape/parts.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>

namespace drape {

namespace {

constexpr const char* kPartKeys[kPartCount] = {"face", "hands", "cloth", "body"};

std::vector<std::vector<int>> neighbor_lists(Eigen::Index n, const std::vector<std::array<int, 2>>& edges) {
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
  for (const auto& e : edges) {
    DRAPE_REQUIRE(e[0] >= 0 && e[1] >= 0 && e[0] < n && e[1] < n, "refine_labels: edge out of range");
    if (e[0] == e[1]) continue;
    adj[static_cast<std::size_t>(e[0])].push_back(e[1]);
    adj[static_cast<std::size_t>(e[1])].push_back(e[0]);
  }
  for (auto& a : adj) {
    std::sort(a.begin(), a.end());
    a.erase(std::unique(a.begin(), a.end()), a.end());
  }
  return adj;
}

// Label with the highest count, ties to the lowest id.
int dominant(const std::array<int, kPartCount>& counts) {
  int best = 0;
  for (int l = 1; l < kPartCount; ++l)
    if (counts[l] > counts[best]) best = l;
  return best;
}

}  // namespace

LabelField LabelField::uniform(Eigen::Index n, PartLabel label) {
  return from_labels(std::vector<PartLabel>(static_cast<std::size_t>(n), label));
}

LabelField LabelField::from_labels(std::vector<PartLabel> labels) {
  LabelField f;
  f.confidence = Vec::Ones(static_cast<Eigen::Index>(labels.size()));
  f.labels = std::move(labels);
  return f;
}

double visibility_tolerance(const Vec& depth_image, const Vec& silhouette, double fraction, double floor) {
  DRAPE_REQUIRE(depth_image.size() == silhouette.size(), "visibility_tolerance: size mismatch");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (Eigen::Index i = 0; i < depth_image.size(); ++i)
    if (silhouette[i] > 0.5) {
      lo = std::min(lo, depth_image[i]);
      hi = std::max(hi, depth_image[i]);
    }
  if (!(hi >= lo)) return floor;
  return std::max(floor, fraction * (hi - lo));
}

std::vector<int> project_labels(const Mat& world_positions, const Camera& camera, const std::vector<int>& seg,
                                const Vec& depth_image, double tau_vis) {
  const Eigen::Index hw = static_cast<Eigen::Index>(camera.width) * camera.height;
  DRAPE_REQUIRE(static_cast<Eigen::Index>(seg.size()) == hw && depth_image.size() == hw,
                "project_labels: segmentation/depth resolution does not match the camera");
  std::vector<int> out(static_cast<std::size_t>(world_positions.rows()), kUnknownLabel);
  for (Eigen::Index i = 0; i < world_positions.rows(); ++i) {
    const Vec3 c = camera.to_camera(world_positions.row(i).transpose());
    if (c.z() <= 0.0) continue;
    const double u = camera.fx * c.x() / c.z() + camera.cx;
    const double v = camera.fy * c.y() / c.z() + camera.cy;
    const int x = static_cast<int>(std::floor(u)), y = static_cast<int>(std::floor(v));
    if (x < 0 || y < 0 || x >= camera.width || y >= camera.height) continue;
    const std::size_t p = static_cast<std::size_t>(y) * camera.width + x;
    if (seg[p] == kUnknownLabel) continue;
    if (std::abs(c.z() - depth_image[static_cast<Eigen::Index>(p)]) > tau_vis) continue;
    out[static_cast<std::size_t>(i)] = seg[p];
  }
  return out;
}

std::vector<int> merge_pseudo_labels(const std::vector<std::vector<int>>& views) {
  DRAPE_REQUIRE(!views.empty(), "merge_pseudo_labels: no views");
  const std::size_t n = views.front().size();
  std::vector<int> out(n, kUnknownLabel);
  for (std::size_t i = 0; i < n; ++i) {
    std::array<int, kPartCount> counts{};
    int total = 0;
    for (const auto& v : views) {
      DRAPE_REQUIRE(v.size() == n, "merge_pseudo_labels: view size mismatch");
      if (v[i] >= 0 && v[i] < kPartCount) {
        ++counts[static_cast<std::size_t>(v[i])];
        ++total;
      }
    }
    if (total > 0) out[i] = dominant(counts);
  }
  return out;
}

ad::Var cross_entropy(ad::Var logits, const std::vector<int>& targets) {
  const Mat& z = logits.value();
  DRAPE_REQUIRE(static_cast<Eigen::Index>(targets.size()) == z.rows(), "cross_entropy: target count mismatch");
  DRAPE_REQUIRE(z.rows() > 0, "cross_entropy: empty batch");
  Mat prob(z.rows(), z.cols());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const int t = targets[static_cast<std::size_t>(i)];
    DRAPE_REQUIRE(t >= 0 && t < z.cols(), "cross_entropy: target out of range");
    const double m = z.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (z.row(i).array() - m).exp().matrix();
    const double s = e.sum();
    prob.row(i) = e / s;
    loss += std::log(s) + m - z(i, t);
  }
  const double inv_n = 1.0 / static_cast<double>(z.rows());
  Mat out(1, 1);
  out(0, 0) = loss * inv_n;
  ad::Var inputs[] = {logits};
  return logits.tape->record(
      std::move(out),
      [logits, targets, prob, inv_n](ad::Tape& tape, const Mat& g) {
        Mat d = prob;
        for (std::size_t i = 0; i < targets.size(); ++i) d(static_cast<Eigen::Index>(i), targets[i]) -= 1.0;
        tape.accumulate(logits, Mat(d * (g(0, 0) * inv_n)));
      },
      inputs);
}

Mat LabelClassifier::inputs(const Mat& canonical_positions, const Mat& features) {
  DRAPE_REQUIRE(canonical_positions.rows() == features.rows(), "classifier inputs: row mismatch");
  Mat x(features.rows(), 3 + features.cols());
  x << canonical_positions, features;
  return x;
}

void LabelClassifier::init_parameters(Parameters& params, int input_dim, std::mt19937_64& rng) const {
  params.add("labels/w1", glorot(input_dim, config_.hidden, rng));
  params.add("labels/b1", Mat::Zero(1, config_.hidden));
  params.add("labels/w2", glorot(config_.hidden, kPartCount, rng));
  params.add("labels/b2", Mat::Zero(1, kPartCount));
  params.add("labels/mean", Mat::Zero(1, input_dim));
  params.add("labels/inv_std", Mat::Ones(1, input_dim));
}

ad::Var LabelClassifier::logits(Bound& p, ad::Var inputs) const {
  ad::Tape& tape = p.tape();
  // Standardization statistics are fixed inputs, not trained.
  const Mat& mean = p.parameters().at("labels/mean");
  const Mat& inv_std = p.parameters().at("labels/inv_std");
  ad::Var x = ad::mul_row(ad::add_row(inputs, tape.constant(Mat(-mean))), tape.constant(inv_std));
  ad::Var h = ad::tanh(ad::linear(x, p("labels/w1"), p("labels/b1")));
  return ad::linear(h, p("labels/w2"), p("labels/b2"));
}

ClassifierResult LabelClassifier::train(Parameters& params, const Mat& inputs,
                                        const std::vector<int>& pseudo_labels) const {
  DRAPE_REQUIRE(static_cast<Eigen::Index>(pseudo_labels.size()) == inputs.rows(), "classifier: label count mismatch");
  std::vector<int> rows, targets;
  for (std::size_t i = 0; i < pseudo_labels.size(); ++i)
    if (pseudo_labels[i] != kUnknownLabel) {
      DRAPE_REQUIRE(pseudo_labels[i] >= 0 && pseudo_labels[i] < kPartCount, "classifier: invalid label");
      rows.push_back(static_cast<int>(i));
      targets.push_back(pseudo_labels[i]);
    }
  DRAPE_REQUIRE(!rows.empty(), "classifier: no labeled points");
  if (!params.contains("labels/w1")) {
    std::mt19937_64 rng(config_.seed);
    init_parameters(params, static_cast<int>(inputs.cols()), rng);
  }

  Mat x(static_cast<Eigen::Index>(rows.size()), inputs.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) x.row(static_cast<Eigen::Index>(k)) = inputs.row(rows[k]);
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Eigen::RowVectorXd var = (x.rowwise() - mean).array().square().colwise().mean();
  params.at("labels/mean") = mean;
  params.at("labels/inv_std") = (var.array() + 1e-8).sqrt().inverse().matrix();

  ClassifierResult result;
  std::array<int, kPartCount> counts{};
  for (int t : targets) ++counts[static_cast<std::size_t>(t)];
  for (int c = 0; c < kPartCount; ++c)
    if (counts[static_cast<std::size_t>(c)] == 0) {
      result.absent.push_back(static_cast<PartLabel>(c));
      spdlog::warn("label classifier: no pseudo-labels for class {}; it will never be predicted",
                   to_string(static_cast<PartLabel>(c)));
      params.at("labels/w2").col(c).setZero();
      params.at("labels/b2")(0, c) = -30.0;
    }

  Adam adam(AdamConfig{.learning_rate = config_.learning_rate});
  for (int epoch = 0; epoch < config_.epochs; ++epoch) {
    ad::Tape tape;
    Bound p(tape, params);
    ad::Var loss = cross_entropy(logits(p, tape.constant(x)), targets);
    tape.backward(loss);
    auto grads = p.gradients();
    for (PartLabel c : result.absent) {
      grads.at("labels/w2").col(static_cast<int>(c)).setZero();
      grads.at("labels/b2")(0, static_cast<int>(c)) = 0.0;
    }
    adam.step(params, grads);
  }

  const LabelField pred = predict(params, x);
  int correct = 0;
  for (std::size_t k = 0; k < targets.size(); ++k) correct += static_cast<int>(pred.labels[k]) == targets[k];
  result.accuracy = static_cast<double>(correct) / static_cast<double>(targets.size());
  return result;
}

LabelField LabelClassifier::predict(const Parameters& params, const Mat& inputs) const {
  ad::Tape tape;
  Bound p(tape, params, false);
  const Mat z = logits(p, tape.constant(inputs)).value();
  LabelField f;
  f.labels.resize(static_cast<std::size_t>(z.rows()));
  f.confidence.resize(z.rows());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    Eigen::Index best = 0;
    z.row(i).maxCoeff(&best);
    const Eigen::RowVectorXd e = (z.row(i).array() - z(i, best)).exp().matrix();
    f.labels[static_cast<std::size_t>(i)] = static_cast<PartLabel>(best);
    f.confidence[i] = 1.0 / e.sum();
  }
  return f;
}

LabelField refine_labels(const LabelField& field, const std::vector<std::array<int, 2>>& edges,
                         const RefineConfig& config) {
  const Eigen::Index n = field.size();
  const auto adj = neighbor_lists(n, edges);
  const int min_component =
      config.min_component > 0 ? config.min_component
                               : std::max(5, static_cast<int>(std::ceil(0.001 * static_cast<double>(n))));
  std::vector<int> y(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) y[static_cast<std::size_t>(i)] = static_cast<int>(field.labels[i]);

  auto counts_of = [&](std::size_t i) {
    std::array<int, kPartCount> c{};
    for (int j : adj[i]) ++c[static_cast<std::size_t>(y[static_cast<std::size_t>(j)])];
    return c;
  };
  auto interior = [&](std::size_t i) {
    if (adj[i].empty()) return false;
    for (int j : adj[i])
      if (y[static_cast<std::size_t>(j)] != y[i]) return false;
    return true;
  };

  // Every change strictly increases the number of agreeing edges, so the loop terminates.
  for (;;) {
    bool changed = false;
    for (int it = 0; it < config.max_iters; ++it) {
      bool any = false;
      for (std::size_t i = 0; i < y.size(); ++i) {
        const auto c = counts_of(i);
        const int best = dominant(c);
        if (c[static_cast<std::size_t>(best)] > c[static_cast<std::size_t>(y[i])]) {
          y[i] = best;
          any = true;
        }
      }
      if (!any) break;
      changed = true;
    }

    // Relabel the first removable small component, then recompute.
    std::vector<int> comp(y.size(), -1);
    bool relabeled = false;
    for (std::size_t s = 0; s < y.size() && !relabeled; ++s) {
      if (comp[s] >= 0) continue;
      std::vector<int> members{static_cast<int>(s)};
      comp[s] = static_cast<int>(s);
      for (std::size_t k = 0; k < members.size(); ++k)
        for (int j : adj[static_cast<std::size_t>(members[k])])
          if (comp[static_cast<std::size_t>(j)] < 0 && y[static_cast<std::size_t>(j)] == y[s]) {
            comp[static_cast<std::size_t>(j)] = static_cast<int>(s);
            members.push_back(j);
          }
      if (static_cast<int>(members.size()) >= min_component) continue;
      if (std::any_of(members.begin(), members.end(), [&](int m) { return interior(static_cast<std::size_t>(m)); }))
        continue;
      std::array<int, kPartCount> border{};
      int total = 0;
      for (int m : members)
        for (int j : adj[static_cast<std::size_t>(m)])
          if (y[static_cast<std::size_t>(j)] != y[s]) {
            ++border[static_cast<std::size_t>(y[static_cast<std::size_t>(j)])];
            ++total;
          }
      if (total == 0) continue;
      const int target = dominant(border);
      for (int m : members) y[static_cast<std::size_t>(m)] = target;
      relabeled = true;
    }
    if (!changed && !relabeled) break;
  }

  LabelField out;
  out.labels.resize(y.size());
  out.confidence = field.confidence.size() == n ? field.confidence : Vec(Vec::Ones(n));
  for (std::size_t i = 0; i < y.size(); ++i) {
    out.labels[i] = static_cast<PartLabel>(y[i]);
    if (out.labels[i] != field.labels[i]) {
      const auto c = counts_of(i);
      out.confidence[static_cast<Eigen::Index>(i)] =
          adj[i].empty() ? 1.0 : static_cast<double>(c[static_cast<std::size_t>(y[i])]) / adj[i].size();
    }
  }
  return out;
}

Partition partition(const LabelField& field, const std::vector<PartHint>* hints) {
  if (hints) DRAPE_REQUIRE(static_cast<Eigen::Index>(hints->size()) == field.size(), "partition: hint count mismatch");
  Partition parts;
  for (Eigen::Index i = 0; i < field.size(); ++i) {
    PartLabel l = field.labels[static_cast<std::size_t>(i)];
    if (hints) {
      const PartHint h = (*hints)[static_cast<std::size_t>(i)];
      if (h == PartHint::Head) l = PartLabel::Face;
      if (h == PartHint::HandL || h == PartHint::HandR) l = PartLabel::Hands;
    }
    parts[static_cast<std::size_t>(l)].push_back(static_cast<int>(i));
  }
  return parts;
}

LabelField labels_from_partition(const Partition& parts, Eigen::Index n) {
  std::vector<int> seen(static_cast<std::size_t>(n), -1);
  std::vector<PartLabel> labels(static_cast<std::size_t>(n), PartLabel::Body);
  for (int l = 0; l < kPartCount; ++l)
    for (int i : parts[static_cast<std::size_t>(l)]) {
      DRAPE_REQUIRE(i >= 0 && i < n, "partition: index out of range");
      DRAPE_REQUIRE(seen[static_cast<std::size_t>(i)] < 0, "partition: sets overlap");
      seen[static_cast<std::size_t>(i)] = l;
      labels[static_cast<std::size_t>(i)] = static_cast<PartLabel>(l);
    }
  for (int s : seen) DRAPE_REQUIRE(s >= 0, "partition: sets do not cover all points");
  return LabelField::from_labels(std::move(labels));
}

void save_partition(const std::filesystem::path& path, const Partition& parts) {
  nlohmann::json j;
  for (int l = 0; l < kPartCount; ++l) j[kPartKeys[l]] = parts[static_cast<std::size_t>(l)];
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump() << '\n';
}

Partition load_partition(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  const nlohmann::json j = nlohmann::json::parse(in);
  Partition parts;
  for (int l = 0; l < kPartCount; ++l) parts[static_cast<std::size_t>(l)] = j.at(kPartKeys[l]).get<std::vector<int>>();
  return parts;
}

const std::array<std::array<std::uint8_t, 3>, kPartCount>& label_palette() {
  static const std::array<std::array<std::uint8_t, 3>, kPartCount> palette{{
      {{230, 180, 60}},   // face
      {{200, 60, 160}},   // hands
      {{40, 110, 220}},   // cloth
      {{90, 170, 90}},    // body
  }};
  return palette;
}

}  // namespace drape
