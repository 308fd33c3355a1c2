#include "drape/io.hpp"

#include "drape/parts.hpp"

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace drape {

namespace {

constexpr char kFltMagic[4] = {'D', 'R', 'P', 'F'};

std::array<std::uint8_t, 3> background_color() { return {255, 255, 255}; }

std::string frame_name(std::size_t t, const char* ext) {
  std::ostringstream s;
  s << std::setw(4) << std::setfill('0') << t << ext;
  return s.str();
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

Json mat_to_json(const Mat& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json r = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

Mat mat_from_json(const Json& j, Eigen::Index cols) {
  Mat m(static_cast<Eigen::Index>(j.size()), cols);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const auto& r = j.at(static_cast<std::size_t>(i));
    if (static_cast<Eigen::Index>(r.size()) != cols) throw IoError("matrix row has wrong width");
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = r.at(static_cast<std::size_t>(c)).get<double>();
  }
  return m;
}

}  // namespace

void write_png_rgb(const fs::path& path, const Mat& rgb, int width, int height) {
  DRAPE_REQUIRE(rgb.rows() == static_cast<Eigen::Index>(width) * height && rgb.cols() == 3,
                "write_png_rgb: expected HW×3");
  ensure_parent(path);
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(rgb.size()));
  for (Eigen::Index i = 0; i < rgb.size(); ++i) {
    const double v = std::clamp(rgb.data()[i], 0.0, 1.0);
    buf[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr))
    throw IoError("cannot write " + path.string() + ": " + img.message);
}

namespace {

std::vector<std::uint8_t> read_png_raw(const fs::path& path, int* width, int* height) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw IoError("cannot read " + path.string() + ": " + img.message);
  img.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr))
    throw IoError("cannot decode " + path.string() + ": " + img.message);
  if (width) *width = static_cast<int>(img.width);
  if (height) *height = static_cast<int>(img.height);
  return buf;
}

}  // namespace

Mat read_png_rgb(const fs::path& path, int* width, int* height) {
  int w = 0, h = 0;
  const auto buf = read_png_raw(path, &w, &h);
  Mat rgb(static_cast<Eigen::Index>(w) * h, 3);
  for (Eigen::Index i = 0; i < rgb.size(); ++i) rgb.data()[i] = buf[static_cast<std::size_t>(i)] / 255.0;
  if (width) *width = w;
  if (height) *height = h;
  return rgb;
}

void write_png_labels(const fs::path& path, const std::vector<int>& labels, int width, int height) {
  DRAPE_REQUIRE(labels.size() == static_cast<std::size_t>(width) * static_cast<std::size_t>(height),
                "write_png_labels: size mismatch");
  ensure_parent(path);
  const auto& pal = label_palette();
  std::vector<std::uint8_t> colormap;
  for (const auto& c : pal) colormap.insert(colormap.end(), c.begin(), c.end());
  const auto bg = background_color();
  colormap.insert(colormap.end(), bg.begin(), bg.end());
  std::vector<std::uint8_t> idx(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int l = labels[i];
    DRAPE_REQUIRE(l == kBackgroundLabel || (l >= 0 && l < kPartCount), "write_png_labels: label out of range");
    idx[i] = static_cast<std::uint8_t>(l == kBackgroundLabel ? kPartCount : l);
  }
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = PNG_FORMAT_RGB_COLORMAP;
  img.colormap_entries = kPartCount + 1;
  if (!png_image_write_to_file(&img, path.c_str(), 0, idx.data(), 0, colormap.data()))
    throw IoError("cannot write " + path.string() + ": " + img.message);
}

std::vector<int> read_png_labels(const fs::path& path, int* width, int* height) {
  int w = 0, h = 0;
  const auto buf = read_png_raw(path, &w, &h);
  const auto& pal = label_palette();
  std::vector<int> labels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::uint8_t* px = &buf[3 * i];
    int found = kBackgroundLabel;
    for (int l = 0; l < kPartCount; ++l)
      if (px[0] == pal[l][0] && px[1] == pal[l][1] && px[2] == pal[l][2]) found = l;
    labels[i] = found;
  }
  if (width) *width = w;
  if (height) *height = h;
  return labels;
}

void write_flt(const fs::path& path, const Mat& data, int width, int height) {
  DRAPE_REQUIRE(data.rows() == static_cast<Eigen::Index>(width) * height, "write_flt: expected HW rows");
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const std::uint32_t hdr[3] = {static_cast<std::uint32_t>(width), static_cast<std::uint32_t>(height),
                                static_cast<std::uint32_t>(data.cols())};
  out.write(kFltMagic, 4);
  out.write(reinterpret_cast<const char*>(hdr), sizeof hdr);
  std::vector<float> plane(static_cast<std::size_t>(data.rows()));
  for (Eigen::Index c = 0; c < data.cols(); ++c) {
    for (Eigen::Index i = 0; i < data.rows(); ++i) plane[static_cast<std::size_t>(i)] = static_cast<float>(data(i, c));
    out.write(reinterpret_cast<const char*>(plane.data()), static_cast<std::streamsize>(plane.size() * sizeof(float)));
  }
  if (!out) throw IoError("short write " + path.string());
}

Mat read_flt(const fs::path& path, int* width, int* height) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  char magic[4];
  std::uint32_t hdr[3];
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(hdr), sizeof hdr);
  if (!in || std::memcmp(magic, kFltMagic, 4) != 0) throw IoError("bad tensor header in " + path.string());
  const auto n = static_cast<Eigen::Index>(hdr[0]) * hdr[1];
  Mat data(n, static_cast<Eigen::Index>(hdr[2]));
  std::vector<float> plane(static_cast<std::size_t>(n));
  for (Eigen::Index c = 0; c < data.cols(); ++c) {
    in.read(reinterpret_cast<char*>(plane.data()), static_cast<std::streamsize>(plane.size() * sizeof(float)));
    if (!in) throw IoError("truncated tensor " + path.string());
    for (Eigen::Index i = 0; i < n; ++i) data(i, c) = plane[static_cast<std::size_t>(i)];
  }
  if (width) *width = static_cast<int>(hdr[0]);
  if (height) *height = static_cast<int>(hdr[1]);
  return data;
}

Json to_json(const Camera& c) {
  Json j;
  j["fx"] = c.fx;
  j["fy"] = c.fy;
  j["cx"] = c.cx;
  j["cy"] = c.cy;
  j["width"] = c.width;
  j["height"] = c.height;
  j["rotation"] = mat_to_json(Mat(c.rotation));
  j["translation"] = {c.translation.x(), c.translation.y(), c.translation.z()};
  return j;
}

Camera camera_from_json(const Json& j) {
  Camera c;
  c.fx = j.at("fx").get<double>();
  c.fy = j.at("fy").get<double>();
  c.cx = j.at("cx").get<double>();
  c.cy = j.at("cy").get<double>();
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
  const Mat r = mat_from_json(j.at("rotation"), 3);
  if (r.rows() != 3) throw IoError("camera rotation must be 3×3");
  c.rotation = r;
  for (int k = 0; k < 3; ++k) c.translation(k) = j.at("translation").at(static_cast<std::size_t>(k)).get<double>();
  c.validate();
  return c;
}

Json to_json(const std::vector<Pose>& poses) {
  Json arr = Json::array();
  for (const auto& p : poses) {
    Json j;
    j["t"] = p.timestamp;
    j["root"] = {p.root_translation.x(), p.root_translation.y(), p.root_translation.z()};
    j["rotations"] = mat_to_json(p.joint_rotations);
    arr.push_back(std::move(j));
  }
  return arr;
}

std::vector<Pose> poses_from_json(const Json& j) {
  std::vector<Pose> poses;
  for (const auto& e : j) {
    Pose p;
    p.timestamp = e.at("t").get<double>();
    for (int k = 0; k < 3; ++k) p.root_translation(k) = e.at("root").at(static_cast<std::size_t>(k)).get<double>();
    p.joint_rotations = mat_from_json(e.at("rotations"), 3);
    poses.push_back(std::move(p));
  }
  return poses;
}

Json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw IoError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const Json& j) {
  ensure_parent(path);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void save_mesh(const fs::path& obj_path, const SkinnedMesh& mesh) {
  ensure_parent(obj_path);
  std::ofstream out(obj_path);
  if (!out) throw IoError("cannot write " + obj_path.string());
  out << std::setprecision(17);
  for (Eigen::Index i = 0; i < mesh.vertices.rows(); ++i)
    out << "v " << mesh.vertices(i, 0) << ' ' << mesh.vertices(i, 1) << ' ' << mesh.vertices(i, 2) << '\n';
  for (Eigen::Index f = 0; f < mesh.faces.rows(); ++f)
    out << "f " << mesh.faces(f, 0) + 1 << ' ' << mesh.faces(f, 1) + 1 << ' ' << mesh.faces(f, 2) + 1 << '\n';

  Json side;
  side["joints"] = mat_to_json(mesh.joints);
  side["parents"] = mesh.parents;
  Json weights = Json::array();
  for (Eigen::Index i = 0; i < mesh.skin_weights.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < mesh.skin_weights.cols(); ++j)
      if (mesh.skin_weights(i, j) != 0.0) row.push_back({j, mesh.skin_weights(i, j)});
    weights.push_back(std::move(row));
  }
  side["skin_weights"] = std::move(weights);
  std::vector<int> hints;
  for (auto h : mesh.part_hint) hints.push_back(static_cast<int>(h));
  side["part_hint"] = hints;
  write_json(fs::path(obj_path).replace_extension(".json"), side);
}

SkinnedMesh load_mesh(const fs::path& obj_path) {
  std::ifstream in(obj_path);
  if (!in) throw IoError("cannot read " + obj_path.string());
  std::vector<Vec3> verts;
  std::vector<std::array<int, 3>> faces;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream s(line);
    std::string tag;
    s >> tag;
    if (tag == "v") {
      Vec3 v;
      s >> v.x() >> v.y() >> v.z();
      verts.push_back(v);
    } else if (tag == "f") {
      std::array<int, 3> f{};
      for (auto& k : f) {
        std::string tok;
        s >> tok;
        k = std::stoi(tok.substr(0, tok.find('/'))) - 1;
      }
      faces.push_back(f);
    }
  }
  SkinnedMesh mesh;
  mesh.vertices.resize(static_cast<Eigen::Index>(verts.size()), 3);
  for (std::size_t i = 0; i < verts.size(); ++i) mesh.vertices.row(static_cast<Eigen::Index>(i)) = verts[i].transpose();
  mesh.faces.resize(static_cast<Eigen::Index>(faces.size()), 3);
  for (std::size_t f = 0; f < faces.size(); ++f)
    for (int k = 0; k < 3; ++k) {
      if (faces[f][k] < 0 || faces[f][k] >= static_cast<int>(verts.size())) throw IoError("face index out of range");
      mesh.faces(static_cast<Eigen::Index>(f), k) = faces[f][k];
    }

  const Json side = read_json(fs::path(obj_path).replace_extension(".json"));
  mesh.joints = mat_from_json(side.at("joints"), 3);
  mesh.parents = side.at("parents").get<std::vector<int>>();
  const auto J = static_cast<Eigen::Index>(mesh.parents.size());
  if (mesh.joints.rows() != J) throw IoError("joint/parent count mismatch");
  const auto& weights = side.at("skin_weights");
  if (weights.size() != verts.size()) throw IoError("skin weight count mismatch");
  mesh.skin_weights = Mat::Zero(mesh.vertices.rows(), J);
  for (std::size_t i = 0; i < weights.size(); ++i)
    for (const auto& e : weights[i]) {
      const int j = e.at(0).get<int>();
      if (j < 0 || j >= J) throw IoError("skin weight joint out of range");
      mesh.skin_weights(static_cast<Eigen::Index>(i), j) = e.at(1).get<double>();
    }
  for (int h : side.at("part_hint").get<std::vector<int>>()) {
    if (h < 0 || h > static_cast<int>(PartHint::Limb)) throw IoError("part hint out of range");
    mesh.part_hint.push_back(static_cast<PartHint>(h));
  }
  if (mesh.part_hint.size() != verts.size()) throw IoError("part hint count mismatch");
  return mesh;
}

fs::path subject_dir(const fs::path& root, std::uint64_t seed) {
  return root / ("subject_" + std::to_string(seed));
}

fs::path save_dataset(const fs::path& root, const SubjectAsset& subject, const Sequence& sequence,
                      const PseudoGT& pseudo, const Turnaround* views, const Json& extra) {
  const fs::path dir = subject_dir(root, subject.seed);
  fs::create_directories(dir);
  const int w = sequence.camera.width, h = sequence.camera.height;
  for (std::size_t t = 0; t < sequence.frames.size(); ++t) {
    const auto& f = sequence.frames[t];
    write_png_rgb(dir / "frames" / frame_name(t, ".png"), f.rgb, w, h);
    write_flt(dir / "frames" / frame_name(t, ".flt"), f.rgb, w, h);
    write_png_labels(dir / "seg" / frame_name(t, ".png"), pseudo.seg[t], w, h);
    write_flt(dir / "normal" / frame_name(t, ".flt"), pseudo.normal[t], w, h);
    write_flt(dir / "depth" / frame_name(t, ".flt"), pseudo.depth[t], w, h);
    write_flt(dir / "silhouette" / frame_name(t, ".flt"), pseudo.silhouette[t], w, h);
  }
  write_json(dir / "poses.json", to_json(sequence.poses));
  write_json(dir / "camera.json", to_json(sequence.camera));
  save_mesh(dir / "template.obj", subject.mesh);
  std::vector<int> labels;
  for (auto l : subject.gt_labels) labels.push_back(static_cast<int>(l));
  write_json(dir / "gt_labels.json", labels);

  Json m = extra;
  m["seed"] = subject.seed;
  m["frames"] = sequence.frames.size();
  m["fps"] = sequence.fps;
  m["motion"] = to_string(sequence.motion.kind);
  m["speed"] = sequence.motion.speed;
  m["width"] = w;
  m["height"] = h;
  m["vertices"] = subject.mesh.vertex_count();
  m["cloth_vertices"] = subject.cloth_vertices.size();
  m["garment"] = {{"stiffness", subject.garment.stiffness},
                  {"damping", subject.garment.damping},
                  {"gravity_gain", subject.garment.gravity_gain},
                  {"drive_gain", subject.garment.drive_gain},
                  {"max_lag", subject.garment.max_lag},
                  {"substeps", subject.garment.substeps}};
  if (views) {
    Json cams = Json::array();
    for (std::size_t k = 0; k < views->cameras.size(); ++k) {
      cams.push_back(to_json(views->cameras[k]));
      const auto& f = views->frames[k];
      const int vw = views->cameras[k].width, vh = views->cameras[k].height;
      write_png_rgb(dir / "views" / frame_name(k, ".png"), f.rgb, vw, vh);
      write_png_labels(dir / "views" / frame_name(k, "_seg.png"), views->seg[k], vw, vh);
      write_flt(dir / "views" / frame_name(k, "_depth.flt"), f.depth, vw, vh);
      write_flt(dir / "views" / frame_name(k, "_silhouette.flt"), f.silhouette, vw, vh);
    }
    write_json(dir / "views" / "views.json",
               {{"cameras", cams}, {"pose", to_json(std::vector<Pose>{views->pose}).at(0)}});
    m["views"] = views->cameras.size();
  }
  write_json(dir / "manifest.json", m);
  return dir;
}

Dataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
  Dataset d;
  d.root = dir;
  d.manifest = read_json(dir / "manifest.json");
  d.seed = d.manifest.at("seed").get<std::uint64_t>();
  d.fps = d.manifest.at("fps").get<double>();
  d.motion = d.manifest.at("motion").get<std::string>();
  d.camera = camera_from_json(read_json(dir / "camera.json"));
  d.poses = poses_from_json(read_json(dir / "poses.json"));
  d.mesh = load_mesh(dir / "template.obj");
  for (int l : read_json(dir / "gt_labels.json").get<std::vector<int>>()) {
    if (l < 0 || l >= kPartCount) throw IoError("gt label out of range");
    d.gt_labels.push_back(static_cast<PartLabel>(l));
  }
  const auto count = d.manifest.at("frames").get<std::size_t>();
  if (count != d.poses.size()) throw IoError("manifest frame count does not match poses.json");
  const int w = d.camera.width, h = d.camera.height;
  for (std::size_t t = 0; t < count; ++t) {
    RenderTargets f;
    f.width = w;
    f.height = h;
    int fw = 0, fh = 0;
    f.rgb = read_flt(dir / "frames" / frame_name(t, ".flt"), &fw, &fh);
    if (fw != w || fh != h || f.rgb.cols() != 3) throw IoError("frame size mismatch at " + std::to_string(t));
    f.normal = read_flt(dir / "normal" / frame_name(t, ".flt"));
    f.depth = read_flt(dir / "depth" / frame_name(t, ".flt")).col(0);
    f.silhouette = read_flt(dir / "silhouette" / frame_name(t, ".flt")).col(0);
    if (f.normal.rows() != f.rgb.rows() || f.normal.cols() != 3 || f.depth.size() != f.rgb.rows() ||
        f.silhouette.size() != f.rgb.rows())
      throw IoError("pseudo-GT map size mismatch at frame " + std::to_string(t));
    d.frames.push_back(std::move(f));
    d.seg.push_back(read_png_labels(dir / "seg" / frame_name(t, ".png")));
  }
  if (fs::exists(dir / "views" / "views.json")) {
    const Json v = read_json(dir / "views" / "views.json");
    d.views.pose = poses_from_json(Json::array({v.at("pose")})).at(0);
    const auto& cams = v.at("cameras");
    for (std::size_t k = 0; k < cams.size(); ++k) {
      d.views.cameras.push_back(camera_from_json(cams[k]));
      const auto& cam = d.views.cameras.back();
      RenderTargets f;
      f.width = cam.width;
      f.height = cam.height;
      f.depth = read_flt(dir / "views" / frame_name(k, "_depth.flt")).col(0);
      f.silhouette = read_flt(dir / "views" / frame_name(k, "_silhouette.flt")).col(0);
      auto seg = read_png_labels(dir / "views" / frame_name(k, "_seg.png"));
      const auto px = static_cast<std::size_t>(cam.width) * static_cast<std::size_t>(cam.height);
      if (seg.size() != px || static_cast<std::size_t>(f.depth.size()) != px ||
          static_cast<std::size_t>(f.silhouette.size()) != px)
        throw IoError("turnaround view size mismatch at view " + std::to_string(k));
      d.views.frames.push_back(std::move(f));
      d.views.seg.push_back(std::move(seg));
    }
  }
  return d;
}

}  // namespace drape
