#include "drape/io.hpp"

#include <doctest.h>

#include <fstream>
#include <random>

using namespace drape;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("drape_test_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Mat random_mat(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

}  // namespace

TEST_CASE("png rgb round-trips within quantization") {
  const auto dir = scratch("png");
  const Mat img = random_mat(6 * 5, 3, 1);
  write_png_rgb(dir / "a.png", img, 6, 5);
  int w = 0, h = 0;
  const Mat back = read_png_rgb(dir / "a.png", &w, &h);
  CHECK(w == 6);
  CHECK(h == 5);
  CHECK((back - img).cwiseAbs().maxCoeff() <= 0.5 / 255.0 + 1e-12);
  CHECK_THROWS_AS(write_png_rgb(dir / "b.png", img, 5, 5), ContractError);
}

TEST_CASE("label png round-trips exactly") {
  const auto dir = scratch("labels");
  std::vector<int> labels;
  for (int i = 0; i < 12; ++i) labels.push_back(i % 5 == 4 ? kBackgroundLabel : i % 4);
  write_png_labels(dir / "l.png", labels, 4, 3);
  CHECK(read_png_labels(dir / "l.png") == labels);
}

TEST_CASE("float tensors round-trip at float precision") {
  const auto dir = scratch("flt");
  const Mat m = random_mat(4 * 3, 2, 2);
  write_flt(dir / "m.flt", m, 4, 3);
  int w = 0, h = 0;
  const Mat back = read_flt(dir / "m.flt", &w, &h);
  CHECK(w == 4);
  CHECK(h == 3);
  CHECK(back.cols() == 2);
  CHECK((back - m.cast<float>().cast<double>()).cwiseAbs().maxCoeff() == 0.0);

  std::ofstream(dir / "bad.flt") << "NOPE";
  CHECK_THROWS_AS(read_flt(dir / "bad.flt"), IoError);
  CHECK_THROWS_AS(read_flt(dir / "missing.flt"), IoError);
}

TEST_CASE("camera and poses round-trip through json") {
  const Camera cam = studio_camera(20, 10, 45.0);
  const Camera back = camera_from_json(to_json(cam));
  CHECK(back.width == 20);
  CHECK(back.height == 10);
  CHECK(back.fx == cam.fx);
  CHECK(back.rotation == cam.rotation);
  CHECK(back.translation == cam.translation);

  const auto poses = motion_track(MotionSpec{MotionKind::Walk}, 30.0, 0.2, 22);
  const auto pb = poses_from_json(to_json(poses));
  REQUIRE(pb.size() == poses.size());
  for (std::size_t i = 0; i < poses.size(); ++i) {
    CHECK(pb[i].joint_rotations == poses[i].joint_rotations);
    CHECK(pb[i].root_translation == poses[i].root_translation);
  }
}

TEST_CASE("skinned mesh round-trips exactly") {
  const auto dir = scratch("mesh");
  const SkinnedMesh m = build_canonical_body(BodyConfig{});
  save_mesh(dir / "body.obj", m);
  const SkinnedMesh b = load_mesh(dir / "body.obj");
  CHECK(b.vertices == m.vertices);
  CHECK(b.faces == m.faces);
  CHECK(b.joints == m.joints);
  CHECK(b.parents == m.parents);
  CHECK(b.skin_weights == m.skin_weights);
  CHECK(b.part_hint == m.part_hint);
}

TEST_CASE("dataset round-trips with views") {
  const auto dir = scratch("dataset");
  const SubjectAsset s = generate_subject(5);
  const Sequence seq = generate_sequence(s, MotionSpec{MotionKind::Walk}, 30.0, 0.2, studio_camera(16, 16));
  const PseudoGT pseudo = pseudo_gt_maps(seq, 0.0);
  const Turnaround views = turnaround_views(s, seq, 4);
  const fs::path root = save_dataset(dir, s, seq, pseudo, &views);
  const Dataset d = load_dataset(root);
  CHECK(d.seed == 5);
  CHECK(d.motion == "walk");
  REQUIRE(d.frame_count() == seq.poses.size());
  CHECK(d.gt_labels == s.gt_labels);
  CHECK(d.mesh.vertices == s.mesh.vertices);
  for (std::size_t t = 0; t < d.frame_count(); ++t) {
    CHECK(d.poses[t].joint_rotations == seq.poses[t].joint_rotations);
    CHECK(d.seg[t] == seq.seg[t]);
    CHECK((d.frames[t].rgb - seq.frames[t].rgb).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK((d.frames[t].depth - seq.frames[t].depth).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK(d.frames[t].silhouette == seq.frames[t].silhouette.cast<float>().cast<double>());
  }
  REQUIRE(d.views.cameras.size() == 4);
  CHECK(d.views.seg == views.seg);

  fs::remove(root / "poses.json");
  CHECK_THROWS_AS(load_dataset(root), IoError);
}
