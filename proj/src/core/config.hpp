#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "core/blocks.hpp"
#include "core/neck.hpp"

namespace prnet {

struct PRNConfig {
  int stages = 1;
  NeckWidths widths{8, 16, 32};
};

// Model architecture. `widths` are the backbone channels c1..c5 at strides
// 2..32; the neck runs at `prn.widths` regardless of which neck is chosen so
// the two necks stay comparable.
struct ArchConfig {
  std::string neck = "prn";  // "prn" | "panfpn"
  PRNConfig prn;
  int essamp_layers = 2;  // how many of the first two downsamplers use ESSamp
  int essamp_d = 2;
  std::array<int, 5> widths{4, 8, 16, 32, 64};
  int num_classes = 3;
  uint32_t seed = 0;
  DownKind neck_down = DownKind::conv;

  void validate() const;
  BackboneChannels backbone_channels() const {
    return {widths[1], widths[2], widths[3], widths[4]};
  }

  static ArchConfig from_json_text(const std::string& text);
  std::string to_json_text() const;
};

struct TrainConfig {
  double lr = 0.01;
  double momentum = 0.937;
  double weight_decay = 0.0005;
  int batch_size = 8;
  int epochs = 30;
  int patience = 50;
  uint32_t seed = 0;

  void validate() const;
  static TrainConfig from_json_text(const std::string& text);
  std::string to_json_text() const;
};

struct DatasetSpec {
  int num_images = 0;
  int image_size = 256;
  int objects_min = 8, objects_max = 24;
  double size_min = 4.0, size_max = 24.0;  // max box side, pixels
  int num_classes = 3;                     // disc, square, triangle
  uint32_t seed = 0;

  void validate() const;
  static DatasetSpec from_json_text(const std::string& text);
  std::string to_json_text() const;
};

// PRNET_SEED environment variable overrides every config seed (CI hook).
bool env_seed_override(uint32_t& seed);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace prnet
