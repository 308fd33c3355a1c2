#include "drape/io.hpp"
#include "drape/parts.hpp"
#include "drape/studio.hpp"
#include "drape/trainer.hpp"

#include <doctest.h>

#include <random>

using namespace drape;

namespace {

constexpr int kCloth = static_cast<int>(PartLabel::Cloth);
constexpr int kBody = static_cast<int>(PartLabel::Body);

Camera tiny_camera() { return Camera::look_at(Vec3(0, 0, 2), Vec3::Zero(), 8.0, 8, 8); }

const SkinnedMesh& body() {
  static const SkinnedMesh m = build_canonical_body(BodyConfig{});
  return m;
}

LabelField random_field(Eigen::Index n, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(0, kPartCount - 1);
  std::vector<PartLabel> l(static_cast<std::size_t>(n));
  for (auto& v : l) v = static_cast<PartLabel>(pick(rng));
  return LabelField::from_labels(std::move(l));
}

}  // namespace

TEST_CASE("a visible point takes its pixel's label") {
  const Camera cam = tiny_camera();
  Mat p(1, 3);
  p << 0, 0, 0;
  std::vector<int> seg(64, kBody);
  seg[4 * 8 + 4] = kCloth;
  seg[3 * 8 + 3] = kCloth;
  seg[3 * 8 + 4] = kCloth;
  seg[4 * 8 + 3] = kCloth;
  const Vec depth = Vec::Constant(64, 2.0);
  CHECK(project_labels(p, cam, seg, depth, 0.01)[0] == kCloth);
}

TEST_CASE("occluded, background and behind-camera points are Unknown") {
  const Camera cam = tiny_camera();
  Mat p(3, 3);
  p << 0, 0, 0, 0.01, 0.01, 0, 0, 0, 3;
  std::vector<int> seg(64, kCloth);
  const Vec near_depth = Vec::Constant(64, 1.5);
  const auto occluded = project_labels(p.topRows(1), cam, seg, near_depth, 0.1);
  CHECK(occluded[0] == kUnknownLabel);
  std::vector<int> bg(64, kUnknownLabel);
  CHECK(project_labels(p.topRows(1), cam, bg, Vec::Constant(64, 2.0), 0.1)[0] == kUnknownLabel);
  CHECK(project_labels(p.bottomRows(1), cam, seg, Vec::Constant(64, 2.0), 0.1)[0] == kUnknownLabel);
}

TEST_CASE("visibility tolerance is a fraction of the depth range with a floor") {
  Vec d(4), s(4);
  d << 1.0, 3.0, 2.0, 100.0;
  s << 1, 1, 1, 0;
  CHECK(visibility_tolerance(d, s, 0.1, 0.0) == doctest::Approx(0.2));
  CHECK(visibility_tolerance(d, s, 0.1, 0.5) == doctest::Approx(0.5));
}

TEST_CASE("pseudo-labels merge by majority with ties to the lowest id") {
  const std::vector<std::vector<int>> views{{2, 1, kUnknownLabel, 3}, {2, 2, kUnknownLabel, 0}, {3, kUnknownLabel, kUnknownLabel, kUnknownLabel}};
  const auto m = merge_pseudo_labels(views);
  CHECK(m == std::vector<int>{2, 1, kUnknownLabel, 0});
}

TEST_CASE("classifier separates a linearly separable toy set") {
  Mat x(40, 4);
  std::vector<int> y(40);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 0.1);
  for (int i = 0; i < 40; ++i) {
    const int c = i % 2 ? kCloth : kBody;
    y[static_cast<std::size_t>(i)] = c;
    for (int k = 0; k < 4; ++k) x(i, k) = n(rng) + (c == kCloth ? 1.0 : -1.0);
  }
  Parameters p;
  const LabelClassifier clf;
  const ClassifierResult r = clf.train(p, x, y);
  CHECK(r.accuracy == 1.0);
  CHECK(r.absent.size() == 2);  // Face and Hands have no pseudo-labels
  const LabelField f = clf.predict(p, x);
  for (int i = 0; i < 40; ++i) CHECK(static_cast<int>(f.labels[static_cast<std::size_t>(i)]) == y[static_cast<std::size_t>(i)]);
  CHECK(f.confidence.minCoeff() >= 0.0);
  CHECK(f.confidence.maxCoeff() <= 1.0);
}

TEST_CASE("a single observed class is predicted everywhere") {
  Mat x = Mat::Random(20, 3);
  std::vector<int> y(20, kBody);
  y[3] = kUnknownLabel;
  Parameters p;
  const LabelClassifier clf;
  clf.train(p, x, y);
  const LabelField f = clf.predict(p, Mat::Random(30, 3) * 5.0);
  for (auto l : f.labels) CHECK(l == PartLabel::Body);
}

TEST_CASE("refinement keeps uniform fields and flips an isolated point") {
  const auto edges = body().edges();
  const auto n = body().vertex_count();
  const LabelField u = LabelField::uniform(n, PartLabel::Body);
  CHECK(refine_labels(u, edges).labels == u.labels);
  LabelField one = u;
  one.labels[100] = PartLabel::Cloth;
  CHECK(refine_labels(one, edges).labels == u.labels);
}

TEST_CASE("refinement is idempotent over 100 randomized fields") {
  const auto edges = body().edges();
  std::mt19937_64 rng(17);
  int stable = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const LabelField once = refine_labels(random_field(body().vertex_count(), rng), edges);
    stable += refine_labels(once, edges).labels == once.labels;
  }
  CHECK(stable == 100);
}

TEST_CASE("partitions are disjoint and cover every index") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const LabelField f = random_field(body().vertex_count(), rng);
    for (const auto* hints : {static_cast<const std::vector<PartHint>*>(nullptr), &body().part_hint}) {
      const Partition p = partition(f, hints);
      std::vector<int> seen(static_cast<std::size_t>(body().vertex_count()), 0);
      for (const auto& set : p)
        for (int i : set) ++seen[static_cast<std::size_t>(i)];
      CHECK(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
    }
  }
  const Partition all_body = partition(LabelField::uniform(10, PartLabel::Body));
  CHECK(all_body[kBody].size() == 10);
  CHECK(all_body[kCloth].empty());
}

TEST_CASE("hints route head and hand vertices to Face and Hands") {
  const Partition p = partition(LabelField::uniform(body().vertex_count(), PartLabel::Cloth), &body().part_hint);
  for (int i : p[static_cast<int>(PartLabel::Face)]) CHECK(body().part_hint[static_cast<std::size_t>(i)] == PartHint::Head);
  CHECK(!p[static_cast<int>(PartLabel::Hands)].empty());
}

TEST_CASE("partitions round-trip through JSON") {
  std::mt19937_64 rng(4);
  const Partition p = partition(random_field(50, rng));
  const auto path = std::filesystem::temp_directory_path() / "drape_test_labels.json";
  save_partition(path, p);
  CHECK(load_partition(path) == p);
  std::filesystem::remove(path);
}

TEST_CASE("synthetic subject: projected labels agree with GT and cloth recall is high") {
  const auto root = std::filesystem::temp_directory_path() / "drape_test_parts";
  std::filesystem::remove_all(root);
  const SubjectAsset subject = generate_subject(21);
  const Sequence seq = generate_sequence(subject, MotionSpec{}, 30.0, 1.0, studio_camera());
  const Turnaround views = turnaround_views(subject, seq, 8);
  const Dataset d = load_dataset(save_dataset(root, subject, seq, pseudo_gt_maps(seq), &views));
  const SegmentResult r = segment(d, SegmentConfig{});
  CHECK(r.pseudo_agreement >= 0.95);
  CHECK(r.cloth_recall >= 0.9);
  CHECK(r.classifier_accuracy >= 0.9);
  CHECK(r.heldout_accuracy >= 0.9);
  std::filesystem::remove_all(root);
}
