#pragma once

// Image, tensor, mesh and dataset serialization.

#include "drape/body.hpp"
#include "drape/render.hpp"
#include "drape/studio.hpp"

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace drape {

namespace fs = std::filesystem;
using Json = nlohmann::json;

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 8-bit RGB PNG from an HW×3 image in [0,1] (values clamped).
void write_png_rgb(const fs::path& path, const Mat& rgb, int width, int height);
Mat read_png_rgb(const fs::path& path, int* width = nullptr, int* height = nullptr);

/// Paletted PNG of label ids; kBackgroundLabel is stored as the white entry.
void write_png_labels(const fs::path& path, const std::vector<int>& labels, int width, int height);
std::vector<int> read_png_labels(const fs::path& path, int* width = nullptr, int* height = nullptr);

/// Float tensor file: "DRPF", uint32 width, height, channels, then float32
/// planar data (channel-major). `data` is HW×C.
void write_flt(const fs::path& path, const Mat& data, int width, int height);
Mat read_flt(const fs::path& path, int* width = nullptr, int* height = nullptr);

Json to_json(const Camera& camera);
Camera camera_from_json(const Json& j);
Json to_json(const std::vector<Pose>& poses);
std::vector<Pose> poses_from_json(const Json& j);

/// Wavefront OBJ with a JSON sidecar (same stem) holding joints, parents,
/// skin weights and part hints.
void save_mesh(const fs::path& obj_path, const SkinnedMesh& mesh);
SkinnedMesh load_mesh(const fs::path& obj_path);

Json read_json(const fs::path& path);
void write_json(const fs::path& path, const Json& j);

/// One subject's rendered sequence with its pseudo-GT maps as stored on disk.
struct Dataset {
  fs::path root;
  std::uint64_t seed = 0;
  double fps = 30.0;
  std::string motion;
  Camera camera;
  SkinnedMesh mesh;
  std::vector<Pose> poses;
  std::vector<RenderTargets> frames;      // rgb from frames/*.flt, other channels from pseudo-GT
  std::vector<std::vector<int>> seg;
  std::vector<PartLabel> gt_labels;
  Turnaround views;                       // empty when the capture has none
  Json manifest;

  std::size_t frame_count() const { return poses.size(); }
};

fs::path subject_dir(const fs::path& root, std::uint64_t seed);

/// Writes subject_<seed>/ with frames, seg, normal, depth, silhouette maps,
/// poses.json, camera.json, template mesh, labels and manifest.json, plus
/// views/ when a turnaround capture is given.
fs::path save_dataset(const fs::path& root, const SubjectAsset& subject, const Sequence& sequence,
                      const PseudoGT& pseudo, const Turnaround* views = nullptr,
                      const Json& extra = Json::object());
Dataset load_dataset(const fs::path& dir);

}  // namespace drape
