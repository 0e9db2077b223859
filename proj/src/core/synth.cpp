#include "core/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace prnet {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct ShapeGeom {
  int class_id;
  double cx, cy, w, h;
};

bool point_inside(const ShapeGeom& g, double x, double y) {
  const double dx = x - g.cx, dy = y - g.cy;
  switch (g.class_id) {
    case 0: {  // disc (ellipse under aspect stretch)
      const double rx = g.w / 2, ry = g.h / 2;
      return (dx * dx) / (rx * rx) + (dy * dy) / (ry * ry) <= 1.0;
    }
    case 1:  // square / rectangle
      return std::abs(dx) <= g.w / 2 && std::abs(dy) <= g.h / 2;
    default: {  // triangle, apex up
      const double top = g.cy - g.h / 2;
      if (y < top || y > g.cy + g.h / 2) return false;
      const double half_width_at_y = (g.w / 2) * ((y - top) / g.h);
      return std::abs(dx) <= half_width_at_y;
    }
  }
}

}  // namespace

double shape_coverage(int class_id, double cx, double cy, double w, double h,
                      int px, int py) {
  const ShapeGeom g{class_id, cx, cy, w, h};
  constexpr int kSub = 4;
  int hit = 0;
  for (int sy = 0; sy < kSub; ++sy)
    for (int sx = 0; sx < kSub; ++sx) {
      const double x = px + (sx + 0.5) / kSub;
      const double y = py + (sy + 0.5) / kSub;
      if (point_inside(g, x, y)) ++hit;
    }
  return static_cast<double>(hit) / (kSub * kSub);
}

namespace {

// Background: six random-frequency 2-D sinusoids plus per-pixel uniform
// noise, min-max normalized to [0,1] jointly across channels.
void render_background(Rng& rng, int size, std::vector<float>& planes) {
  struct Wave {
    double fx, fy, phase, amp;
  };
  Wave waves[6];
  for (auto& wv : waves) {
    wv.fx = 0.5 + 3.5 * rng.uniform_double();
    wv.fy = 0.5 + 3.5 * rng.uniform_double();
    if (rng.uniform_double() < 0.5) wv.fx = -wv.fx;
    wv.phase = 6.283185307179586 * rng.uniform_double();
    wv.amp = 0.5 + 0.5 * rng.uniform_double();
  }
  std::vector<float> field(static_cast<size_t>(size) * size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double v = 0;
      for (const auto& wv : waves)
        v += wv.amp * std::sin(6.283185307179586 *
                                   (wv.fx * x + wv.fy * y) / size +
                               wv.phase);
      field[static_cast<size_t>(y) * size + x] = static_cast<float>(v);
    }
  planes.assign(static_cast<size_t>(3) * size * size, 0.f);
  float lo = 1e30f, hi = -1e30f;
  for (int c = 0; c < 3; ++c)
    for (size_t i = 0; i < field.size(); ++i) {
      const float v =
          field[i] + 0.6f * (rng.uniform() - 0.5f);  // uniform noise
      planes[static_cast<size_t>(c) * size * size + i] = v;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  const float scale = hi > lo ? 1.0f / (hi - lo) : 1.0f;
  for (auto& v : planes) v = (v - lo) * scale;
}

double box_iou(const BoxLabel& a, const BoxLabel& b) {
  Box ba{a.cx, a.cy, a.w, a.h}, bb{b.cx, b.cy, b.w, b.h};
  return iou(ba, bb);
}

}  // namespace

DatasetManifest gen_dataset(const DatasetSpec& spec, const std::string& out_dir,
                            bool write_ppm) {
  spec.validate();
  DatasetManifest manifest;
  manifest.spec = spec;
  manifest.root_dir = out_dir;
  fs::create_directories(fs::path(out_dir) / "images");

  const int S = spec.image_size;
  for (int idx = 0; idx < spec.num_images; ++idx) {
    Rng rng(derive_seed(spec.seed, static_cast<uint64_t>(idx)));
    std::vector<float> planes;
    render_background(rng, S, planes);

    const int want = rng.uniform_int(spec.objects_min, spec.objects_max);
    std::vector<BoxLabel> labels;
    for (int obj = 0; obj < want; ++obj) {
      BoxLabel b;
      bool placed = false;
      for (int attempt = 0; attempt < 1000; ++attempt) {
        b.class_id = rng.uniform_int(0, spec.num_classes - 1);
        const double side =
            spec.size_min + (spec.size_max - spec.size_min) * rng.uniform_double();
        const double aspect = 0.6 + 0.4 * rng.uniform_double();
        if (rng.uniform_double() < 0.5) {
          b.w = side;
          b.h = side * aspect;
        } else {
          b.w = side * aspect;
          b.h = side;
        }
        b.cx = b.w / 2 + (S - b.w) * rng.uniform_double();
        b.cy = b.h / 2 + (S - b.h) * rng.uniform_double();
        bool ok = true;
        for (const auto& other : labels)
          if (box_iou(b, other) > 0.3) {
            ok = false;
            break;
          }
        if (ok) {
          placed = true;
          break;
        }
      }
      if (!placed) {
        ++manifest.placement_warnings;
        continue;
      }

      // Object color: contrast against the local background mean.
      const int x0 = std::max(0, static_cast<int>(b.cx - b.w / 2));
      const int x1 = std::min(S - 1, static_cast<int>(b.cx + b.w / 2));
      const int y0 = std::max(0, static_cast<int>(b.cy - b.h / 2));
      const int y1 = std::min(S - 1, static_cast<int>(b.cy + b.h / 2));
      float color[3];
      const bool bright = rng.uniform_double() < 0.5;
      for (int c = 0; c < 3; ++c) {
        double mean = 0;
        int count = 0;
        for (int y = y0; y <= y1; ++y)
          for (int x = x0; x <= x1; ++x) {
            mean += planes[(static_cast<size_t>(c) * S + y) * S + x];
            ++count;
          }
        mean /= std::max(1, count);
        const double contrast = 0.35 + 0.25 * rng.uniform_double() +
                                0.1 * (rng.uniform_double() - 0.5);
        color[c] = static_cast<float>(
            std::clamp(mean + (bright ? contrast : -contrast), 0.0, 1.0));
      }
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          const double a =
              shape_coverage(b.class_id, b.cx, b.cy, b.w, b.h, x, y);
          if (a <= 0) continue;
          for (int c = 0; c < 3; ++c) {
            float& px = planes[(static_cast<size_t>(c) * S + y) * S + x];
            px = static_cast<float>(px * (1 - a) + color[c] * a);
          }
        }
      labels.push_back(b);
    }

    char name[64];
    std::snprintf(name, sizeof(name), "images/img_%05d.prnt", idx);
    const Tensor img = Tensor::from_data({1, 3, S, S}, planes);
    save_tensor_file((fs::path(out_dir) / name).string(), img);
    if (write_ppm) {
      char ppm_name[64];
      std::snprintf(ppm_name, sizeof(ppm_name), "images/img_%05d.ppm", idx);
      export_ppm((fs::path(out_dir) / ppm_name).string(), S, S, planes);
    }
    manifest.entries.push_back({name, std::move(labels)});
  }

  ordered_json j;
  j["version"] = 1;
  j["spec"] = ordered_json::parse(spec.to_json_text());
  j["placement_warnings"] = manifest.placement_warnings;
  ordered_json images = ordered_json::array();
  for (const auto& e : manifest.entries) {
    ordered_json labels = ordered_json::array();
    for (const auto& b : e.labels)
      labels.push_back({{"class", b.class_id},
                        {"cx", b.cx},
                        {"cy", b.cy},
                        {"w", b.w},
                        {"h", b.h}});
    images.push_back({{"image", e.image}, {"labels", labels}});
  }
  j["images"] = images;
  write_text_file((fs::path(out_dir) / "manifest.json").string(),
                  j.dump(2) + "\n");
  return manifest;
}

DatasetManifest load_manifest(const std::string& dir) {
  const std::string path = (fs::path(dir) / "manifest.json").string();
  ordered_json j = ordered_json::parse(read_text_file(path), nullptr, false);
  if (j.is_discarded())
    throw std::runtime_error("malformed manifest: " + path);
  DatasetManifest m;
  m.spec = DatasetSpec::from_json_text(j.at("spec").dump());
  m.placement_warnings = j.value("placement_warnings", 0);
  m.root_dir = dir;
  for (const auto& e : j.at("images")) {
    DatasetEntry entry;
    entry.image = e.at("image").get<std::string>();
    for (const auto& l : e.at("labels")) {
      BoxLabel b;
      b.class_id = l.at("class").get<int>();
      b.cx = l.at("cx").get<double>();
      b.cy = l.at("cy").get<double>();
      b.w = l.at("w").get<double>();
      b.h = l.at("h").get<double>();
      entry.labels.push_back(b);
    }
    m.entries.push_back(std::move(entry));
  }
  return m;
}

std::pair<Tensor, std::vector<std::vector<BoxLabel>>> load_batch(
    const DatasetManifest& manifest, const std::vector<size_t>& indices) {
  if (indices.empty()) fail_invalid("load_batch: empty index list");
  const int S = manifest.spec.image_size;
  Tensor batch = Tensor::zeros(
      {static_cast<int64_t>(indices.size()), 3, S, S});
  std::vector<std::vector<BoxLabel>> labels;
  for (size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= manifest.entries.size())
      throw std::out_of_range("load_batch: index " +
                              std::to_string(indices[i]) +
                              " out of range (dataset has " +
                              std::to_string(manifest.entries.size()) +
                              " images)");
    const DatasetEntry& e = manifest.entries[indices[i]];
    const Tensor img = load_tensor_file(
        (fs::path(manifest.root_dir) / e.image).string());
    if (img.shape() != Shape4{1, 3, S, S})
      throw std::runtime_error("image " + e.image + " has shape " +
                               img.shape().str() + ", expected 1x3x" +
                               std::to_string(S) + "x" + std::to_string(S));
    std::copy(img.vec().begin(), img.vec().end(),
              batch.vec().begin() + static_cast<int64_t>(i) * 3 * S * S);
    labels.push_back(e.labels);
  }
  return {batch, labels};
}

namespace {

uint8_t to_byte(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<uint8_t>(std::lround(c * 255.0f));
}

}  // namespace

void export_ppm(const std::string& path, int h, int w,
                const std::vector<float>& rgb_planes) {
  if (rgb_planes.size() != static_cast<size_t>(3) * h * w)
    fail_invalid("export_ppm: expected 3 planes of " + std::to_string(h) +
                 "x" + std::to_string(w));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << "P6\n" << w << " " << h << "\n255\n";
  for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i) {
    out.put(static_cast<char>(to_byte(rgb_planes[static_cast<size_t>(i)])));
    out.put(static_cast<char>(
        to_byte(rgb_planes[static_cast<size_t>(h) * w + i])));
    out.put(static_cast<char>(
        to_byte(rgb_planes[static_cast<size_t>(2) * h * w + i])));
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

void export_pgm(const std::string& path, int h, int w,
                const std::vector<float>& gray) {
  if (gray.size() != static_cast<size_t>(h) * w)
    fail_invalid("export_pgm: expected " + std::to_string(h) + "x" +
                 std::to_string(w) + " values");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << "P5\n" << w << " " << h << "\n255\n";
  for (float v : gray) out.put(static_cast<char>(to_byte(v)));
  if (!out) throw std::runtime_error("write failed: " + path);
}

DatasetSplit load_split(const std::string& data_dir) {
  DatasetSplit split;
  if (fs::exists(fs::path(data_dir) / "train" / "manifest.json")) {
    split.train = load_manifest((fs::path(data_dir) / "train").string());
    split.val = load_manifest((fs::path(data_dir) / "val").string());
    for (size_t i = 0; i < split.train.size(); ++i)
      split.train_indices.push_back(i);
    for (size_t i = 0; i < split.val.size(); ++i) split.val_indices.push_back(i);
    return split;
  }
  // Single dataset: last fifth is the validation split.
  DatasetManifest all = load_manifest(data_dir);
  const size_t n = all.size();
  const size_t val_count = n >= 5 ? n / 5 : (n > 1 ? 1 : 0);
  split.train = all;
  split.val = all;
  for (size_t i = 0; i + val_count < n; ++i) split.train_indices.push_back(i);
  for (size_t i = n - val_count; i < n; ++i) split.val_indices.push_back(i);
  return split;
}

}  // namespace prnet
