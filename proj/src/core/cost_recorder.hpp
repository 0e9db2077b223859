#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace prnet {

// Collects operation costs reported by the ops layer while a forward pass
// runs. Convolutions report out_elems * in_per_group * kh * kw MACs;
// batchnorm, non-identity activations and spatial resizes report one MAC per
// output element; pure rearrangements (unshuffle, shuffle, slice, concat)
// report nothing.
class CostRecorder {
 public:
  struct Row {
    std::string path;
    long long conv_macs = 0;
    long long map_macs = 0;
    long long total() const { return conv_macs + map_macs; }
  };

  CostRecorder();
  ~CostRecorder();
  CostRecorder(const CostRecorder&) = delete;
  CostRecorder& operator=(const CostRecorder&) = delete;

  static CostRecorder* current();

  void add_conv(long long macs);
  void add_map(long long elems);

  void push_scope(const std::string& name);
  void pop_scope();

  const std::vector<Row>& rows() const { return rows_; }
  long long total_macs() const;
  long long conv_macs() const;

 private:
  Row& row_at_current_path();

  CostRecorder* prev_ = nullptr;
  std::vector<std::string> scope_;
  std::string joined_;
  std::vector<Row> rows_;  // insertion order
  std::unordered_map<std::string, size_t> index_;
};

// RAII scope label; no-op when no recorder is installed.
class CostScope {
 public:
  explicit CostScope(const std::string& name);
  ~CostScope();
  CostScope(const CostScope&) = delete;

 private:
  bool active_ = false;
};

}  // namespace prnet
