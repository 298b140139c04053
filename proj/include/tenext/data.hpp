#pragma once
// Point-cloud IO (packed binary scans + labels), semantic remapping, the
// synthetic scene generator, and voxelization with majority labels.

#include <array>
#include <cstdint>
#include <string>
#include <unordered_set>
#include <vector>

#include "tenext/rng.hpp"
#include "tenext/sparse.hpp"

namespace tenext {

struct LabeledCloud {
  std::vector<std::array<float, 3>> points;  // meters
  std::vector<float> intensity;              // parsed but unused downstream
  std::vector<uint8_t> labels;               // 1 traversable, 0 not
  std::vector<uint32_t> raw_semantic;        // pre-remap words from the label file
  size_t size() const { return points.size(); }
};

// Scan files are packed little-endian float32 quadruples (x, y, z, intensity);
// label files are packed little-endian uint32 words whose low 16 bits hold the
// semantic class id. Both round-trip byte-losslessly.
LabeledCloud read_scan(const std::string& path);
std::vector<uint32_t> read_labels(const std::string& path);
void write_scan(const std::string& path, const LabeledCloud& cloud);
void write_labels(const std::string& path, const std::vector<uint32_t>& raw);

// Plain-text remap config: `name <dataset>` then `traversable <id> <id> ...`
// (ids may continue over multiple lines; # starts a comment).
struct RemapTable {
  std::string dataset_name;
  std::unordered_set<uint32_t> traversable_ids;
};
RemapTable load_remap_table(const std::string& path);
void save_remap_table(const std::string& path, const RemapTable& table);

// 1 iff the low 16 bits of the word name a traversable class; unknown ids are
// non-traversable by design.
std::vector<uint8_t> remap(const std::vector<uint32_t>& raw, const RemapTable& table);

// ---------------------------------------------------------------------------
// Synthetic scenes: a disc of gently sloped ground (traversable) scattered
// with boxes, cylinders, and vegetation-like blobs (non-traversable), sampled
// with ring-banded ranges like a spinning LiDAR.

struct SceneSpec {
  double extent = 12.0;   // ground disc diameter, meters
  int points = 20000;     // total points in the scene
  int obstacles = 6;      // attempted obstacle count
  double slope = 0.02;    // ground rise per meter along +x
  double clear_radius = 1.5;  // obstacle-free region around the origin
};

struct ObstacleInfo {
  enum Kind { kBox, kCylinder, kBlob };
  Kind kind;
  double cx = 0.0, cy = 0.0;  // footprint center
  double a = 0.0;             // box width / cylinder radius / blob radius
  double b = 0.0;             // box depth
  double h = 0.0;             // height (blob: center height above ground)
  double footprint_radius() const;
  double surface_area() const;
};

struct SceneGeometry {
  double ground_radius = 0.0;
  std::vector<ObstacleInfo> obstacles;
};

// Semantic ids written for synthetic points; the matching remap config is
// emitted next to generated corpora.
constexpr uint32_t kSynthGroundId = 40;
constexpr uint32_t kSynthBoxId = 50;
constexpr uint32_t kSynthCylinderId = 51;
constexpr uint32_t kSynthBlobId = 70;
RemapTable synth_remap_table();

LabeledCloud gen_synthetic_scene(uint64_t seed, const SceneSpec& spec,
                                 SceneGeometry* geometry = nullptr);

// ---------------------------------------------------------------------------
// Corpus on disk: scan_NNNN.bin / labels_NNNN.bin pairs listed by a manifest.

struct ScenePair {
  std::string scan;
  std::string labels;
};

void write_corpus(const std::string& dir, int scenes, uint64_t seed, const SceneSpec& spec);
std::vector<ScenePair> read_manifest(const std::string& dir);
LabeledCloud load_scene(const std::string& dir, const ScenePair& pair, const RemapTable& table);

// ---------------------------------------------------------------------------
// Voxel-space view of a labeled cloud: quantized coordinates with one
// majority-vote label per voxel (ties fall to non-traversable).

struct VoxelScene {
  std::vector<VoxelCoord> coords;  // batch id 0, sorted
  std::vector<uint8_t> labels;     // per voxel
  std::vector<int> point_to_voxel;
};
VoxelScene voxelize_scene(const LabeledCloud& cloud, double scale);

}  // namespace tenext
