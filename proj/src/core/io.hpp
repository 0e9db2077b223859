#pragma once

#include <iosfwd>
#include <string>

#include "core/detector.hpp"

namespace prnet {

// "PRNT" tensor record: magic, 1-byte version (= 1), four u32 little-endian
// dims (N, C, H, W), then N*C*H*W f32 little-endian values.
void write_tensor_record(std::ostream& out, const Tensor& t);
Tensor read_tensor_record(std::istream& in, const std::string& origin);

void save_tensor_file(const std::string& path, const Tensor& t);
Tensor load_tensor_file(const std::string& path);

// Checkpoint = JSON index (embedded arch config + named tensor offsets) next
// to a .bin of concatenated PRNT records. Learnables first, then batchnorm
// running-stat buffers.
void save_checkpoint(const Model& model, const std::string& json_path);
std::unique_ptr<Model> load_checkpoint(const std::string& json_path);

}  // namespace prnet
