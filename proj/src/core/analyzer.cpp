#include "core/analyzer.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace prnet {

namespace {

std::string aligned_table(const std::vector<std::array<std::string, 4>>& rows) {
  std::array<size_t, 4> width = {0, 0, 0, 0};
  for (const auto& r : rows)
    for (size_t i = 0; i < 4; ++i) width[i] = std::max(width[i], r[i].size());
  std::ostringstream os;
  for (const auto& r : rows) {
    for (size_t i = 0; i < 4; ++i) {
      if (i == 0)
        os << r[i] << std::string(width[i] - r[i].size(), ' ');
      else
        os << "  " << std::string(width[i] - r[i].size(), ' ') << r[i];
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace

std::string ModelStats::to_text() const {
  std::vector<std::array<std::string, 4>> table;
  table.push_back({"module", "params", "macs", "flops"});
  for (const auto& r : rows)
    table.push_back({r.path, std::to_string(r.params), std::to_string(r.macs),
                     std::to_string(2 * r.macs)});
  table.push_back({"total", std::to_string(total_params),
                   std::to_string(total_macs), std::to_string(2 * total_macs)});
  return aligned_table(table);
}

std::string ModelStats::to_csv() const {
  std::ostringstream os;
  os << "path,params,macs,flops\n";
  for (const auto& r : rows)
    os << r.path << "," << r.params << "," << r.macs << "," << 2 * r.macs
       << "\n";
  os << "total," << total_params << "," << total_macs << "," << 2 * total_macs
     << "\n";
  return os.str();
}

ModelStats analyze_model(Model& model, int input_size) {
  if (input_size <= 0 || input_size % 32 != 0)
    fail_invalid("analyze: input size must be a positive multiple of 32");
  const bool was_training = !model.params.bn_states.empty() &&
                            model.params.bn_states[0]->training;
  model.set_training(false);
  CostRecorder rec;
  {
    NoGradGuard ng;
    Tensor input = Tensor::zeros({1, 3, input_size, input_size});
    model.forward(input);
  }
  model.set_training(was_training);

  ModelStats stats;
  for (const auto& row : rec.rows()) {
    ModelStats::Row r;
    r.path = row.path;
    r.macs = row.total();
    r.params = model.params.param_count_prefix(row.path + ".");
    stats.rows.push_back(r);
    stats.total_macs += r.macs;
    stats.total_params += r.params;
  }
  // Every learnable belongs to exactly one recorded block; guard anyway.
  const int64_t registered = model.params.param_count();
  if (registered != stats.total_params)
    fail_contract("analyze: rows cover " + std::to_string(stats.total_params) +
                  " params but the model registers " +
                  std::to_string(registered));
  return stats;
}

namespace {

std::vector<SweepRow> sweep_impl(const ArchConfig& base,
                                 const std::vector<int>& values,
                                 bool is_stages, int input_size) {
  std::vector<SweepRow> rows;
  for (int v : values) {
    ArchConfig cfg = base;
    if (is_stages)
      cfg.prn.stages = v;
    else
      cfg.essamp_d = v;
    auto model = build_model<float>(cfg);
    ModelStats stats = analyze_model(*model, input_size);
    SweepRow row;
    row.label = std::string(is_stages ? "prn.stages=" : "essamp.d=") +
                std::to_string(v);
    row.params = stats.total_params;
    row.macs = stats.total_macs;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

std::vector<SweepRow> sweep_stages(const ArchConfig& base,
                                   const std::vector<int>& stages,
                                   int input_size) {
  return sweep_impl(base, stages, true, input_size);
}

std::vector<SweepRow> sweep_depth(const ArchConfig& base,
                                  const std::vector<int>& depths,
                                  int input_size) {
  return sweep_impl(base, depths, false, input_size);
}

std::string sweep_to_text(const std::vector<SweepRow>& rows) {
  std::vector<std::array<std::string, 4>> table;
  table.push_back({"config", "params", "macs", "flops"});
  for (const auto& r : rows)
    table.push_back({r.label, std::to_string(r.params), std::to_string(r.macs),
                     std::to_string(2 * r.macs)});
  return aligned_table(table);
}

std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "path,params,macs,flops\n";
  for (const auto& r : rows)
    os << r.label << "," << r.params << "," << r.macs << "," << 2 * r.macs
       << "\n";
  return os.str();
}

}  // namespace prnet
