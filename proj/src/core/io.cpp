#include "core/io.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <unordered_map>

#include <json.hpp>

namespace prnet {

namespace {

constexpr char kMagic[4] = {'P', 'R', 'N', 'T'};
constexpr uint8_t kVersion = 1;

void put_u32le(std::ostream& out, uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff),
               static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

uint32_t get_u32le(std::istream& in, const std::string& origin) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw std::runtime_error("corrupt tensor record in " + origin +
                             ": truncated at byte offset " +
                             std::to_string(static_cast<long long>(in.tellg())));
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void write_tensor_record(std::ostream& out, const Tensor& t) {
  out.write(kMagic, 4);
  out.put(static_cast<char>(kVersion));
  const Shape4 s = t.shape();
  put_u32le(out, static_cast<uint32_t>(s.n));
  put_u32le(out, static_cast<uint32_t>(s.c));
  put_u32le(out, static_cast<uint32_t>(s.h));
  put_u32le(out, static_cast<uint32_t>(s.w));
  for (int64_t i = 0; i < t.numel(); ++i) {
    uint32_t bits;
    float v = t.data()[i];
    std::memcpy(&bits, &v, 4);
    put_u32le(out, bits);
  }
}

Tensor read_tensor_record(std::istream& in, const std::string& origin) {
  const auto start = in.tellg();
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("corrupt tensor record in " + origin +
                             ": bad magic at byte offset " +
                             std::to_string(static_cast<long long>(start)));
  const int version = in.get();
  if (version != kVersion)
    throw std::runtime_error("corrupt tensor record in " + origin +
                             ": unsupported version " +
                             std::to_string(version) + " at byte offset " +
                             std::to_string(static_cast<long long>(start) + 4));
  Shape4 s;
  s.n = get_u32le(in, origin);
  s.c = get_u32le(in, origin);
  s.h = get_u32le(in, origin);
  s.w = get_u32le(in, origin);
  std::vector<float> data(static_cast<size_t>(s.numel()));
  for (auto& v : data) {
    const uint32_t bits = get_u32le(in, origin);
    std::memcpy(&v, &bits, 4);
  }
  return Tensor::from_data(s, std::move(data));
}

void save_tensor_file(const std::string& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  write_tensor_record(out, t);
  if (!out) throw std::runtime_error("write failed: " + path);
}

Tensor load_tensor_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  return read_tensor_record(in, path);
}

namespace {

using nlohmann::ordered_json;

Tensor buffer_as_tensor(const std::vector<float>& v) {
  return Tensor::from_data({1, static_cast<int64_t>(v.size()), 1, 1}, v);
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& json_path) {
  namespace fs = std::filesystem;
  const fs::path jp(json_path);
  fs::path bin = jp;
  bin.replace_extension(".bin");

  std::ofstream out(bin, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write file: " + bin.string());
  ordered_json index;
  index["version"] = 1;
  index["arch"] = ordered_json::parse(model.cfg.to_json_text());
  index["weights_bin"] = bin.filename().string();
  ordered_json tensors = ordered_json::array();
  for (const auto& p : model.params.learnables) {
    tensors.push_back({{"name", p.name},
                       {"kind", "param"},
                       {"offset", static_cast<long long>(out.tellp())}});
    write_tensor_record(out, p.tensor);
  }
  for (const auto& b : model.params.buffers) {
    tensors.push_back({{"name", b.name},
                       {"kind", "buffer"},
                       {"offset", static_cast<long long>(out.tellp())}});
    write_tensor_record(out, buffer_as_tensor(*b.values));
  }
  index["tensors"] = tensors;
  if (!out) throw std::runtime_error("write failed: " + bin.string());
  out.close();
  write_text_file(json_path, index.dump(2) + "\n");
}

std::unique_ptr<Model> load_checkpoint(const std::string& json_path) {
  namespace fs = std::filesystem;
  ordered_json index = ordered_json::parse(read_text_file(json_path), nullptr,
                                           false);
  if (index.is_discarded())
    throw std::runtime_error("malformed checkpoint index: " + json_path);
  ArchConfig cfg = ArchConfig::from_json_text(index.at("arch").dump());
  auto model = build_model<float>(cfg);

  const fs::path bin =
      fs::path(json_path).parent_path() / index.at("weights_bin").get<std::string>();
  std::ifstream in(bin, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + bin.string());

  std::unordered_map<std::string, std::pair<std::string, long long>> entries;
  for (const auto& t : index.at("tensors"))
    entries[t.at("name").get<std::string>()] = {
        t.at("kind").get<std::string>(), t.at("offset").get<long long>()};

  auto read_at = [&](const std::string& name) {
    auto it = entries.find(name);
    if (it == entries.end())
      throw std::runtime_error("checkpoint " + json_path +
                               " is missing tensor '" + name + "'");
    in.clear();
    in.seekg(it->second.second);
    return read_tensor_record(in, bin.string());
  };

  for (auto& p : model->params.learnables) {
    Tensor t = read_at(p.name);
    if (t.shape() != p.tensor.shape())
      throw std::runtime_error("checkpoint tensor '" + p.name + "' has shape " +
                               t.shape().str() + ", expected " +
                               p.tensor.shape().str());
    std::copy(t.vec().begin(), t.vec().end(), p.tensor.vec().begin());
  }
  for (auto& b : model->params.buffers) {
    Tensor t = read_at(b.name);
    if (t.numel() != static_cast<int64_t>(b.values->size()))
      throw std::runtime_error("checkpoint buffer '" + b.name +
                               "' has wrong length");
    std::copy(t.vec().begin(), t.vec().end(), b.values->begin());
  }
  return model;
}

}  // namespace prnet
