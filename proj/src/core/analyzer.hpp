#pragma once

#include <string>
#include <vector>

#include "core/detector.hpp"

namespace prnet {

// Static cost model. Params come from enumerating registered learnables;
// MACs from replaying a forward pass under a cost recorder (shapes only, no
// training). FLOPs are reported as 2*MACs.
struct ModelStats {
  struct Row {
    std::string path;
    int64_t params = 0;
    long long macs = 0;
  };
  std::vector<Row> rows;
  int64_t total_params = 0;
  long long total_macs = 0;

  std::string to_text() const;
  std::string to_csv() const;  // path,params,macs,flops
};

ModelStats analyze_model(Model& model, int input_size);

// Conv-only MAC total of one forward invocation (used by count checks).
template <class Fn>
long long measure_conv_macs(Fn&& forward) {
  CostRecorder rec;
  NoGradGuard ng;
  forward();
  return rec.conv_macs();
}

template <class Fn>
long long measure_total_macs(Fn&& forward) {
  CostRecorder rec;
  NoGradGuard ng;
  forward();
  return rec.total_macs();
}

struct SweepRow {
  std::string label;
  int64_t params = 0;
  long long macs = 0;
};

// One row per value; `stages` sweeps prn.stages, `depth` sweeps essamp.d.
std::vector<SweepRow> sweep_stages(const ArchConfig& base,
                                   const std::vector<int>& stages,
                                   int input_size);
std::vector<SweepRow> sweep_depth(const ArchConfig& base,
                                  const std::vector<int>& depths,
                                  int input_size);

std::string sweep_to_text(const std::vector<SweepRow>& rows);
std::string sweep_to_csv(const std::vector<SweepRow>& rows);

}  // namespace prnet
