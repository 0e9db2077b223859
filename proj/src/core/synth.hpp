#pragma once

#include <string>
#include <utility>
#include <vector>

#include "core/detector.hpp"
#include "core/io.hpp"

namespace prnet {

// Class ids: 0 = disc, 1 = square, 2 = triangle.
constexpr const char* kClassNames[3] = {"disc", "square", "triangle"};

struct DatasetEntry {
  std::string image;  // path relative to the dataset root
  std::vector<BoxLabel> labels;
};

struct DatasetManifest {
  DatasetSpec spec;
  int placement_warnings = 0;
  std::vector<DatasetEntry> entries;
  std::string root_dir;

  size_t size() const { return entries.size(); }
};

// Supersampled coverage of pixel (px, py) by a shape whose bounding box is
// (cx, cy, w, h). Shared by the renderer and the label-consistency checks.
double shape_coverage(int class_id, double cx, double cy, double w, double h,
                      int px, int py);

// Writes images/img_#####.prnt plus manifest.json; optional 8-bit PPM
// mirrors. Deterministic: per-image RNG seeded with spec.seed ^ index.
DatasetManifest gen_dataset(const DatasetSpec& spec, const std::string& out_dir,
                            bool write_ppm = false);

DatasetManifest load_manifest(const std::string& dir);

// Stacks the referenced images into one N x 3 x S x S tensor in [0,1].
std::pair<Tensor, std::vector<std::vector<BoxLabel>>> load_batch(
    const DatasetManifest& manifest, const std::vector<size_t>& indices);

// Binary PPM (P6) / PGM (P5), 8-bit; values clamped from [0,1].
void export_ppm(const std::string& path, int h, int w,
                const std::vector<float>& rgb_planes);  // 3 planes, CHW
void export_pgm(const std::string& path, int h, int w,
                const std::vector<float>& gray);

// Train/val views: an explicit train/ + val/ pair of datasets, or a single
// dataset split 80/20 with the tail used for validation.
struct DatasetSplit {
  DatasetManifest train;
  DatasetManifest val;
  std::vector<size_t> train_indices;  // into the respective manifests
  std::vector<size_t> val_indices;
};

DatasetSplit load_split(const std::string& data_dir);

}  // namespace prnet
