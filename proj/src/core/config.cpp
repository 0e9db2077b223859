#include "core/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace prnet {

using nlohmann::ordered_json;

bool env_seed_override(uint32_t& seed) {
  const char* env = std::getenv("PRNET_SEED");
  if (!env || !*env) return false;
  seed = static_cast<uint32_t>(std::strtoul(env, nullptr, 10));
  return true;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << text;
}

namespace {

ordered_json parse(const std::string& text, const char* what) {
  ordered_json j = ordered_json::parse(text, nullptr, false);
  if (j.is_discarded())
    fail_invalid(std::string("malformed JSON in ") + what);
  return j;
}

}  // namespace

void ArchConfig::validate() const {
  if (neck != "prn" && neck != "panfpn")
    fail_invalid("arch: neck must be 'prn' or 'panfpn', got '" + neck + "'");
  if (essamp_layers < 0 || essamp_layers > 2)
    fail_invalid("arch: essamp.layers must be in {0,1,2}");
  if (essamp_d <= 0) fail_invalid("arch: essamp.d must be positive");
  if (num_classes <= 0) fail_invalid("arch: num_classes must be positive");
  for (int w : widths)
    if (w <= 0) fail_invalid("arch: backbone widths must be positive");
  if (prn.stages < 0) fail_invalid("arch: prn.stages must be non-negative");
  if (prn.widths.w2 <= 0 || prn.widths.w3 <= 0 || prn.widths.w4 <= 0)
    fail_invalid("arch: prn.widths must be positive");
}

ArchConfig ArchConfig::from_json_text(const std::string& text) {
  ordered_json j = parse(text, "model config");
  ArchConfig c;
  c.neck = j.value("neck", c.neck);
  if (j.contains("prn")) {
    const auto& p = j["prn"];
    c.prn.stages = p.value("stages", c.prn.stages);
    if (p.contains("widths")) {
      auto w = p["widths"].get<std::vector<int>>();
      if (w.size() != 3) fail_invalid("arch: prn.widths needs 3 entries");
      c.prn.widths = {w[0], w[1], w[2]};
    }
  }
  if (j.contains("essamp")) {
    const auto& e = j["essamp"];
    c.essamp_layers = e.value("layers", c.essamp_layers);
    c.essamp_d = e.value("d", c.essamp_d);
  }
  if (j.contains("widths")) {
    auto w = j["widths"].get<std::vector<int>>();
    if (w.size() != 5) fail_invalid("arch: widths needs 5 entries");
    for (size_t i = 0; i < 5; ++i) c.widths[i] = w[i];
  }
  c.num_classes = j.value("num_classes", c.num_classes);
  c.seed = j.value("seed", c.seed);
  c.neck_down = down_kind_from_string(j.value("neck_down", std::string("conv")));
  env_seed_override(c.seed);
  c.validate();
  return c;
}

std::string ArchConfig::to_json_text() const {
  ordered_json j;
  j["neck"] = neck;
  j["prn"]["stages"] = prn.stages;
  j["prn"]["widths"] = {prn.widths.w2, prn.widths.w3, prn.widths.w4};
  j["essamp"]["layers"] = essamp_layers;
  j["essamp"]["d"] = essamp_d;
  j["widths"] = widths;
  j["num_classes"] = num_classes;
  j["seed"] = seed;
  j["neck_down"] = neck_down == DownKind::conv ? "conv" : "avgpool";
  return j.dump(2);
}

void TrainConfig::validate() const {
  // lr = 0 is allowed: a frozen run is the standard early-stop probe.
  if (lr < 0 || momentum < 0 || momentum >= 1 || weight_decay < 0)
    fail_invalid("train: lr must be >= 0, momentum in [0,1), wd >= 0");
  if (batch_size <= 0 || epochs <= 0 || patience <= 0)
    fail_invalid("train: batch_size, epochs and patience must be positive");
}

TrainConfig TrainConfig::from_json_text(const std::string& text) {
  ordered_json j = parse(text, "train config");
  TrainConfig c;
  c.lr = j.value("lr", c.lr);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.patience = j.value("patience", c.patience);
  c.seed = j.value("seed", c.seed);
  env_seed_override(c.seed);
  c.validate();
  return c;
}

std::string TrainConfig::to_json_text() const {
  ordered_json j;
  j["lr"] = lr;
  j["momentum"] = momentum;
  j["weight_decay"] = weight_decay;
  j["batch_size"] = batch_size;
  j["epochs"] = epochs;
  j["patience"] = patience;
  j["seed"] = seed;
  return j.dump(2);
}

void DatasetSpec::validate() const {
  if (num_images < 0) fail_invalid("dataset: num_images must be >= 0");
  if (image_size < 32 || image_size % 32 != 0)
    fail_invalid("dataset: image_size must be a positive multiple of 32");
  if (objects_min < 0 || objects_max < objects_min)
    fail_invalid("dataset: objects_per_image range invalid");
  if (size_min < 2 || size_max < size_min)
    fail_invalid("dataset: size_range invalid");
  if (size_max >= 32)
    fail_invalid("dataset: size_range max must stay under 32 px");
  if (num_classes < 1 || num_classes > 3)
    fail_invalid("dataset: num_classes must be in {1,2,3}");
}

DatasetSpec DatasetSpec::from_json_text(const std::string& text) {
  ordered_json j = parse(text, "dataset spec");
  DatasetSpec c;
  c.num_images = j.value("num_images", c.num_images);
  c.image_size = j.value("image_size", c.image_size);
  if (j.contains("objects_per_image")) {
    auto r = j["objects_per_image"].get<std::vector<int>>();
    if (r.size() != 2) fail_invalid("dataset: objects_per_image needs 2 entries");
    c.objects_min = r[0];
    c.objects_max = r[1];
  }
  if (j.contains("size_range")) {
    auto r = j["size_range"].get<std::vector<double>>();
    if (r.size() != 2) fail_invalid("dataset: size_range needs 2 entries");
    c.size_min = r[0];
    c.size_max = r[1];
  }
  c.num_classes = j.value("num_classes", c.num_classes);
  c.seed = j.value("seed", c.seed);
  env_seed_override(c.seed);
  c.validate();
  return c;
}

std::string DatasetSpec::to_json_text() const {
  ordered_json j;
  j["num_images"] = num_images;
  j["image_size"] = image_size;
  j["objects_per_image"] = {objects_min, objects_max};
  j["size_range"] = {size_min, size_max};
  j["num_classes"] = num_classes;
  j["seed"] = seed;
  return j.dump(2);
}

}  // namespace prnet
