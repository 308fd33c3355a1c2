#pragma once

// Semantic part labels for Gaussians: projection of 2D segmentations,
// a small classifier, connectivity refinement and partitioning.

#include "drape/autodiff.hpp"
#include "drape/body.hpp"
#include "drape/codec.hpp"
#include "drape/params.hpp"

#include <array>
#include <filesystem>
#include <random>
#include <vector>

namespace drape {

constexpr int kUnknownLabel = -1;

struct LabelField {
  std::vector<PartLabel> labels;
  Vec confidence;

  static LabelField uniform(Eigen::Index n, PartLabel label);
  static LabelField from_labels(std::vector<PartLabel> labels);
  Eigen::Index size() const { return static_cast<Eigen::Index>(labels.size()); }
};

/// Visibility tolerance: `fraction` of the foreground depth range, at least `floor` meters.
double visibility_tolerance(const Vec& depth_image, const Vec& silhouette, double fraction = 0.02,
                            double floor = 0.005);

/// Per-point pseudo-label from a segmentation image (HW label ids, kUnknownLabel
/// for background); kUnknownLabel when behind the camera, outside the image,
/// on background, or occluded by more than `tau_vis`.
std::vector<int> project_labels(const Mat& world_positions, const Camera& camera, const std::vector<int>& seg,
                                const Vec& depth_image, double tau_vis);

/// Combines per-view pseudo-labels by majority over non-Unknown votes (ties → lowest id).
std::vector<int> merge_pseudo_labels(const std::vector<std::vector<int>>& views);

/// Mean cross-entropy of row-wise softmax(logits) against integer targets.
ad::Var cross_entropy(ad::Var logits, const std::vector<int>& targets);

struct ClassifierConfig {
  int hidden = 64;
  int epochs = 300;
  double learning_rate = 1e-2;
  std::uint64_t seed = 11;
};

struct ClassifierResult {
  double accuracy = 0.0;              // on non-Unknown training points
  std::vector<PartLabel> absent;      // classes with no pseudo-labels
};

/// Two-layer MLP over (canonical position ⊕ feature); parameters "labels/...".
class LabelClassifier {
 public:
  explicit LabelClassifier(ClassifierConfig config = {}) : config_(config) {}

  void init_parameters(Parameters& params, int input_dim, std::mt19937_64& rng) const;
  ad::Var logits(Bound& p, ad::Var inputs) const;
  ClassifierResult train(Parameters& params, const Mat& inputs, const std::vector<int>& pseudo_labels) const;
  LabelField predict(const Parameters& params, const Mat& inputs) const;

  static Mat inputs(const Mat& canonical_positions, const Mat& features);

 private:
  ClassifierConfig config_;
};

struct RefineConfig {
  int max_iters = 50;
  int min_component = 0;  // 0 = max(5, 0.1% of N)
};

/// Sequential majority vote over 1-ring neighbors (ties keep the current
/// label), then relabeling of small same-label components to their dominant
/// neighboring label, repeated until neither stage changes anything.
/// Components containing a point whose neighbors all share its label are kept.
LabelField refine_labels(const LabelField& field, const std::vector<std::array<int, 2>>& edges,
                         const RefineConfig& config = {});

using Partition = std::array<std::vector<int>, kPartCount>;  // indexed by PartLabel

/// Disjoint index sets covering 0..N-1. When `hints` is given, head vertices
/// go to Face and hand vertices to Hands regardless of the field.
Partition partition(const LabelField& field, const std::vector<PartHint>* hints = nullptr);
LabelField labels_from_partition(const Partition& parts, Eigen::Index n);

/// JSON object {"face": [...], "hands": [...], "cloth": [...], "body": [...]}.
void save_partition(const std::filesystem::path& path, const Partition& parts);
Partition load_partition(const std::filesystem::path& path);

/// Label palette for segmentation images (index = PartLabel, background white).
const std::array<std::array<std::uint8_t, 3>, kPartCount>& label_palette();

}  // namespace drape
