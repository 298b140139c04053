#include "tenext/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace tenext {

namespace {

// Little-endian packing, byte-explicit so files mean the same thing on any
// host (matches the checkpoint container's conventions).

void put_u32(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f32(std::string& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  put_u32(out, bits);
}

uint32_t get_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

float get_f32(const unsigned char* p) {
  const uint32_t bits = get_u32(p);
  float v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

}  // namespace

LabeledCloud read_scan(const std::string& path) {
  const std::string bytes = read_file_bytes(path);
  if (bytes.size() % 16 != 0)
    throw std::runtime_error("scan file '" + path + "': size " + std::to_string(bytes.size()) +
                             " is not a multiple of the 16-byte point record");
  const size_t n = bytes.size() / 16;
  LabeledCloud cloud;
  cloud.points.resize(n);
  cloud.intensity.resize(n);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  for (size_t i = 0; i < n; ++i, p += 16) {
    cloud.points[i] = {get_f32(p), get_f32(p + 4), get_f32(p + 8)};
    cloud.intensity[i] = get_f32(p + 12);
  }
  return cloud;
}

std::vector<uint32_t> read_labels(const std::string& path) {
  const std::string bytes = read_file_bytes(path);
  if (bytes.size() % 4 != 0)
    throw std::runtime_error("label file '" + path + "': size " + std::to_string(bytes.size()) +
                             " is not a multiple of the 4-byte record");
  const size_t n = bytes.size() / 4;
  std::vector<uint32_t> raw(n);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  for (size_t i = 0; i < n; ++i, p += 4) raw[i] = get_u32(p);
  return raw;
}

void write_scan(const std::string& path, const LabeledCloud& cloud) {
  if (cloud.intensity.size() != cloud.points.size())
    throw std::invalid_argument("write_scan: intensity/point count mismatch");
  std::string bytes;
  bytes.reserve(cloud.points.size() * 16);
  for (size_t i = 0; i < cloud.points.size(); ++i) {
    put_f32(bytes, cloud.points[i][0]);
    put_f32(bytes, cloud.points[i][1]);
    put_f32(bytes, cloud.points[i][2]);
    put_f32(bytes, cloud.intensity[i]);
  }
  write_file_bytes(path, bytes);
}

void write_labels(const std::string& path, const std::vector<uint32_t>& raw) {
  std::string bytes;
  bytes.reserve(raw.size() * 4);
  for (uint32_t v : raw) put_u32(bytes, v);
  write_file_bytes(path, bytes);
}

RemapTable load_remap_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open remap config '" + path + "'");
  RemapTable table;
  std::string line;
  int line_no = 0;
  bool in_ids = false;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ss(line);
    std::string tok;
    while (ss >> tok) {
      if (tok == "name") {
        if (!(ss >> table.dataset_name) || table.dataset_name.empty())
          throw std::runtime_error("remap config '" + path + "' line " +
                                   std::to_string(line_no) + ": 'name' needs a value");
        in_ids = false;
      } else if (tok == "traversable") {
        in_ids = true;
      } else if (in_ids) {
        size_t used = 0;
        unsigned long v = 0;
        try {
          v = std::stoul(tok, &used);
        } catch (const std::exception&) {
          used = 0;
        }
        if (used != tok.size() || v > 0xffff)
          throw std::runtime_error("remap config '" + path + "' line " +
                                   std::to_string(line_no) + ": bad class id '" + tok + "'");
        table.traversable_ids.insert(static_cast<uint32_t>(v));
      } else {
        throw std::runtime_error("remap config '" + path + "' line " + std::to_string(line_no) +
                                 ": unexpected token '" + tok + "'");
      }
    }
  }
  if (table.dataset_name.empty())
    throw std::runtime_error("remap config '" + path + "': missing 'name' entry");
  return table;
}

void save_remap_table(const std::string& path, const RemapTable& table) {
  std::vector<uint32_t> ids(table.traversable_ids.begin(), table.traversable_ids.end());
  std::sort(ids.begin(), ids.end());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << "# traversability remap: ids listed here map to label 1\n";
  out << "name " << table.dataset_name << "\n";
  out << "traversable";
  for (uint32_t v : ids) out << ' ' << v;
  out << "\n";
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

std::vector<uint8_t> remap(const std::vector<uint32_t>& raw, const RemapTable& table) {
  std::vector<uint8_t> labels(raw.size());
  for (size_t i = 0; i < raw.size(); ++i)
    labels[i] = table.traversable_ids.count(raw[i] & 0xffffu) ? 1 : 0;
  return labels;
}

// ---------------------------------------------------------------------------
// Synthetic scenes.

double ObstacleInfo::footprint_radius() const {
  switch (kind) {
    case kBox:
      return 0.5 * std::hypot(a, b);
    case kCylinder:
    case kBlob:
      return a;
  }
  return 0.0;
}

double ObstacleInfo::surface_area() const {
  switch (kind) {
    case kBox:
      return a * b + 2.0 * (a + b) * h;  // top face + four sides
    case kCylinder:
      return M_PI * a * a + 2.0 * M_PI * a * h;  // cap + shell
    case kBlob:
      return 4.0 * M_PI * a * a;  // sphere shell
  }
  return 0.0;
}

RemapTable synth_remap_table() {
  RemapTable t;
  t.dataset_name = "synth";
  t.traversable_ids = {kSynthGroundId};
  return t;
}

namespace {

double footprint_area(const ObstacleInfo& o) {
  switch (o.kind) {
    case ObstacleInfo::kBox:
      return o.a * o.b;
    case ObstacleInfo::kCylinder:
    case ObstacleInfo::kBlob:
      return M_PI * o.a * o.a;
  }
  return 0.0;
}

bool inside_footprint(const ObstacleInfo& o, double x, double y) {
  const double dx = x - o.cx, dy = y - o.cy;
  if (o.kind == ObstacleInfo::kBox)
    return std::abs(dx) <= 0.5 * o.a && std::abs(dy) <= 0.5 * o.b;
  return dx * dx + dy * dy <= o.a * o.a;
}

// Integer point counts proportional to surface areas, largest remainder first.
std::vector<int> allocate_counts(const std::vector<double>& areas, int total) {
  const double sum = std::accumulate(areas.begin(), areas.end(), 0.0);
  std::vector<int> counts(areas.size(), 0);
  std::vector<std::pair<double, size_t>> rema;
  int assigned = 0;
  for (size_t i = 0; i < areas.size(); ++i) {
    const double exact = total * areas[i] / sum;
    counts[i] = static_cast<int>(std::floor(exact));
    assigned += counts[i];
    rema.emplace_back(exact - counts[i], i);
  }
  std::stable_sort(rema.begin(), rema.end(),
                   [](const auto& l, const auto& r) { return l.first > r.first; });
  for (int k = 0; k < total - assigned; ++k) ++counts[rema[static_cast<size_t>(k)].second];
  return counts;
}

void emit(LabeledCloud& cloud, double x, double y, double z, uint8_t label, uint32_t semantic,
          float intensity) {
  cloud.points.push_back({static_cast<float>(x), static_cast<float>(y), static_cast<float>(z)});
  cloud.intensity.push_back(intensity);
  cloud.labels.push_back(label);
  cloud.raw_semantic.push_back(semantic);
}

}  // namespace

LabeledCloud gen_synthetic_scene(uint64_t seed, const SceneSpec& spec, SceneGeometry* geometry) {
  if (!(spec.extent > 0.5)) throw std::invalid_argument("synthetic scene: degenerate extent");
  if (spec.points < 1) throw std::invalid_argument("synthetic scene: point count must be positive");
  if (spec.obstacles < 0)
    throw std::invalid_argument("synthetic scene: obstacle count must be non-negative");

  const double R = 0.5 * spec.extent;
  Rng rng(seed);

  // Place obstacles: random kind and dimensions, rejecting placements that
  // leave the disc, invade the clear start region, or overlap a previous one.
  std::vector<ObstacleInfo> obstacles;
  for (int i = 0; i < spec.obstacles; ++i) {
    for (int attempt = 0; attempt < 40; ++attempt) {
      ObstacleInfo o;
      const int kind = static_cast<int>(rng.uniform_int(3));
      if (kind == 0) {
        o.kind = ObstacleInfo::kBox;
        o.a = rng.uniform(0.6, 1.6);
        o.b = rng.uniform(0.6, 1.6);
        o.h = rng.uniform(0.5, 1.8);
      } else if (kind == 1) {
        o.kind = ObstacleInfo::kCylinder;
        o.a = rng.uniform(0.25, 0.7);
        o.h = rng.uniform(0.8, 2.2);
      } else {
        o.kind = ObstacleInfo::kBlob;
        o.a = rng.uniform(0.5, 1.1);
        o.h = o.a * rng.uniform(0.9, 1.3);
      }
      const double fp = o.footprint_radius();
      const double lo = spec.clear_radius + fp + 0.2;
      const double hi = R - fp - 0.2;
      if (lo >= hi) continue;
      const double d = rng.uniform(lo, hi);
      const double phi = rng.uniform(0.0, 2.0 * M_PI);
      o.cx = d * std::cos(phi);
      o.cy = d * std::sin(phi);
      bool overlaps = false;
      for (const ObstacleInfo& prev : obstacles) {
        const double sep = std::hypot(o.cx - prev.cx, o.cy - prev.cy);
        if (sep < fp + prev.footprint_radius() + 0.2) {
          overlaps = true;
          break;
        }
      }
      if (!overlaps) {
        obstacles.push_back(o);
        break;
      }
    }
  }

  // Point budget split across surfaces in proportion to exposed area.
  double ground_area = M_PI * R * R;
  for (const ObstacleInfo& o : obstacles) ground_area -= footprint_area(o);
  std::vector<double> areas{ground_area};
  for (const ObstacleInfo& o : obstacles) areas.push_back(o.surface_area());
  const std::vector<int> counts = allocate_counts(areas, spec.points);

  LabeledCloud cloud;
  cloud.points.reserve(static_cast<size_t>(spec.points));

  // Ground: uniform over the disc, range snapped to coarse rings for a
  // spinning-LiDAR look, re-drawn when a sample lands on a footprint.
  const int n_rings = 48;
  const double dr = R / n_rings;
  for (int i = 0; i < counts[0]; ++i) {
    double x = 0.0, y = 0.0;
    for (int attempt = 0; attempt < 200; ++attempt) {
      const double r_raw = R * std::sqrt(rng.uniform());
      const int ring = std::min(n_rings - 1, static_cast<int>(r_raw / dr));
      const double r = (ring + 0.5) * dr + (rng.uniform() - 0.5) * 0.25 * dr;
      const double th = rng.uniform(0.0, 2.0 * M_PI);
      x = r * std::cos(th);
      y = r * std::sin(th);
      bool on_footprint = false;
      for (const ObstacleInfo& o : obstacles)
        if (inside_footprint(o, x, y)) {
          on_footprint = true;
          break;
        }
      if (!on_footprint) break;
    }
    const double z = spec.slope * x + (rng.uniform() - 0.5) * 0.04;
    emit(cloud, x, y, z, 1, kSynthGroundId, static_cast<float>(rng.uniform()));
  }

  for (size_t oi = 0; oi < obstacles.size(); ++oi) {
    const ObstacleInfo& o = obstacles[oi];
    const double base = spec.slope * o.cx;
    for (int i = 0; i < counts[oi + 1]; ++i) {
      double x = o.cx, y = o.cy, z = base;
      uint32_t semantic = kSynthBoxId;
      if (o.kind == ObstacleInfo::kBox) {
        // Pick a face in proportion to its area, then sample it uniformly.
        const double top = o.a * o.b, side_x = o.b * o.h, side_y = o.a * o.h;
        double pick = rng.uniform() * (top + 2.0 * side_x + 2.0 * side_y);
        if ((pick -= top) < 0.0) {
          x += rng.uniform(-0.5, 0.5) * o.a;
          y += rng.uniform(-0.5, 0.5) * o.b;
          z = base + o.h;
        } else if ((pick -= side_x) < 0.0) {
          x += 0.5 * o.a;
          y += rng.uniform(-0.5, 0.5) * o.b;
          z = base + rng.uniform() * o.h;
        } else if ((pick -= side_x) < 0.0) {
          x -= 0.5 * o.a;
          y += rng.uniform(-0.5, 0.5) * o.b;
          z = base + rng.uniform() * o.h;
        } else if ((pick -= side_y) < 0.0) {
          x += rng.uniform(-0.5, 0.5) * o.a;
          y += 0.5 * o.b;
          z = base + rng.uniform() * o.h;
        } else {
          x += rng.uniform(-0.5, 0.5) * o.a;
          y -= 0.5 * o.b;
          z = base + rng.uniform() * o.h;
        }
      } else if (o.kind == ObstacleInfo::kCylinder) {
        semantic = kSynthCylinderId;
        const double cap = M_PI * o.a * o.a, shell = 2.0 * M_PI * o.a * o.h;
        const double phi = rng.uniform(0.0, 2.0 * M_PI);
        if (rng.uniform() * (cap + shell) < cap) {
          const double r = o.a * std::sqrt(rng.uniform());
          x += r * std::cos(phi);
          y += r * std::sin(phi);
          z = base + o.h;
        } else {
          x += o.a * std::cos(phi);
          y += o.a * std::sin(phi);
          z = base + rng.uniform() * o.h;
        }
      } else {
        semantic = kSynthBlobId;
        // Fuzzy shell: isotropic direction with jittered radius, folded above
        // the ground plane.
        double dx = rng.normal(), dy = rng.normal(), dz = rng.normal();
        const double norm = std::sqrt(dx * dx + dy * dy + dz * dz);
        const double rr =
            o.a * (1.0 + 0.3 * (rng.uniform() - 0.5)) / (norm > 1e-12 ? norm : 1.0);
        x += rr * dx;
        y += rr * dy;
        z = base + o.h + rr * dz;
        if (z < base + 0.05) z = 2.0 * (base + 0.05) - z;
      }
      emit(cloud, x, y, z, 0, semantic, static_cast<float>(rng.uniform()));
    }
  }

  if (geometry) {
    geometry->ground_radius = R;
    geometry->obstacles = obstacles;
  }
  return cloud;
}

// ---------------------------------------------------------------------------
// Corpus IO.

namespace {

std::string scene_name(const char* prefix, int index) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%04d.bin", prefix, index);
  return buf;
}

}  // namespace

void write_corpus(const std::string& dir, int scenes, uint64_t seed, const SceneSpec& spec) {
  if (scenes < 1) throw std::invalid_argument("corpus: scene count must be positive");
  std::filesystem::create_directories(dir);
  std::ostringstream manifest;
  manifest << "# synthetic corpus\n";
  manifest << "scenes " << scenes << "\n";
  for (int i = 0; i < scenes; ++i) {
    const uint64_t scene_seed = Rng(seed).fork(static_cast<uint64_t>(i)).next_u64();
    const LabeledCloud cloud = gen_synthetic_scene(scene_seed, spec);
    const std::string scan = scene_name("scan", i);
    const std::string labels = scene_name("labels", i);
    write_scan(dir + "/" + scan, cloud);
    write_labels(dir + "/" + labels, cloud.raw_semantic);
    manifest << "scene " << scan << " " << labels << "\n";
  }
  write_file_bytes(dir + "/manifest.txt", manifest.str());
  save_remap_table(dir + "/remap.txt", synth_remap_table());
}

std::vector<ScenePair> read_manifest(const std::string& dir) {
  const std::string path = dir + "/manifest.txt";
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus manifest '" + path + "'");
  std::vector<ScenePair> pairs;
  int declared = -1;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ss(line);
    std::string tok;
    if (!(ss >> tok)) continue;
    if (tok == "scenes") {
      if (!(ss >> declared) || declared < 1)
        throw std::runtime_error("manifest '" + path + "' line " + std::to_string(line_no) +
                                 ": bad scene count");
    } else if (tok == "scene") {
      ScenePair p;
      if (!(ss >> p.scan >> p.labels))
        throw std::runtime_error("manifest '" + path + "' line " + std::to_string(line_no) +
                                 ": scene entry needs scan and label file names");
      pairs.push_back(std::move(p));
    } else {
      throw std::runtime_error("manifest '" + path + "' line " + std::to_string(line_no) +
                               ": unexpected token '" + tok + "'");
    }
  }
  if (declared >= 0 && declared != static_cast<int>(pairs.size()))
    throw std::runtime_error("manifest '" + path + "' declares " + std::to_string(declared) +
                             " scenes but lists " + std::to_string(pairs.size()));
  if (pairs.empty()) throw std::runtime_error("manifest '" + path + "' lists no scenes");
  return pairs;
}

LabeledCloud load_scene(const std::string& dir, const ScenePair& pair, const RemapTable& table) {
  LabeledCloud cloud = read_scan(dir + "/" + pair.scan);
  cloud.raw_semantic = read_labels(dir + "/" + pair.labels);
  if (cloud.raw_semantic.size() != cloud.points.size())
    throw std::runtime_error("scene '" + pair.scan + "': " + std::to_string(cloud.points.size()) +
                             " points but '" + pair.labels + "' has " +
                             std::to_string(cloud.raw_semantic.size()) + " label entries");
  cloud.labels = remap(cloud.raw_semantic, table);
  return cloud;
}

VoxelScene voxelize_scene(const LabeledCloud& cloud, double scale) {
  if (cloud.labels.size() != cloud.points.size())
    throw std::invalid_argument("voxelize: cloud has no per-point labels");
  CoordinateManager mgr;
  VoxelScene scene;
  SparseTensor<float> st = quantize<float>(cloud.points, Tensor<float>{}, scale, 0, mgr,
                                           &scene.point_to_voxel);
  scene.coords = mgr.map(st.map_id).coords;

  // Majority vote per voxel; a tie counts as non-traversable (conservative).
  const size_t nv = scene.coords.size();
  std::vector<int> pos(nv, 0), total(nv, 0);
  for (size_t i = 0; i < cloud.labels.size(); ++i) {
    const int v = scene.point_to_voxel[i];
    ++total[static_cast<size_t>(v)];
    pos[static_cast<size_t>(v)] += cloud.labels[i] ? 1 : 0;
  }
  scene.labels.resize(nv);
  for (size_t v = 0; v < nv; ++v) scene.labels[v] = (2 * pos[v] > total[v]) ? 1 : 0;
  return scene;
}

}  // namespace tenext
