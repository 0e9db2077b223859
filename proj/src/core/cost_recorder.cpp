#include "core/cost_recorder.hpp"

namespace prnet {

namespace {
thread_local CostRecorder* g_recorder = nullptr;
}

CostRecorder::CostRecorder() : prev_(g_recorder) { g_recorder = this; }

CostRecorder::~CostRecorder() { g_recorder = prev_; }

CostRecorder* CostRecorder::current() { return g_recorder; }

CostRecorder::Row& CostRecorder::row_at_current_path() {
  auto it = index_.find(joined_);
  if (it != index_.end()) return rows_[it->second];
  index_.emplace(joined_, rows_.size());
  rows_.push_back(Row{joined_, 0, 0});
  return rows_.back();
}

void CostRecorder::add_conv(long long macs) {
  row_at_current_path().conv_macs += macs;
}

void CostRecorder::add_map(long long elems) {
  row_at_current_path().map_macs += elems;
}

void CostRecorder::push_scope(const std::string& name) {
  scope_.push_back(name);
  if (!joined_.empty()) joined_ += '.';
  joined_ += name;
}

void CostRecorder::pop_scope() {
  const std::string& last = scope_.back();
  joined_.resize(joined_.size() - last.size() -
                 (scope_.size() > 1 ? 1 : 0));
  scope_.pop_back();
}

long long CostRecorder::total_macs() const {
  long long t = 0;
  for (const auto& r : rows_) t += r.total();
  return t;
}

long long CostRecorder::conv_macs() const {
  long long t = 0;
  for (const auto& r : rows_) t += r.conv_macs;
  return t;
}

CostScope::CostScope(const std::string& name) {
  if (CostRecorder* rec = CostRecorder::current()) {
    rec->push_scope(name);
    active_ = true;
  }
}

CostScope::~CostScope() {
  if (active_) CostRecorder::current()->pop_scope();
}

}  // namespace prnet
