#pragma once

#include <cstdint>
#include <ostream>

#include "cfnsg/fields.hpp"
#include "cfnsg/reuse.hpp"

namespace cfnsg {

// Analytic multiply-add counts of the network stages (dense layers only;
// the activation and encoding costs are negligible next to the GEMVs).
struct StageCost {
  uint64_t first_stage_static = 0, first_stage_dynamic = 0;
  uint64_t second_stage_static = 0, second_stage_dynamic = 0;
  uint64_t reconstruct = 0;  // m^4 + 2 m^2 multiply-adds
};

inline uint64_t mlp_macs(int in, int width, int depth) {
  if (depth == 0) return 0;
  uint64_t macs = static_cast<uint64_t>(in) * width;
  macs += static_cast<uint64_t>(depth - 1) * width * width;
  return macs;
}

inline StageCost stage_cost(const FieldConfig& cfg) {
  StageCost c;
  const uint64_t heads1 =
      static_cast<uint64_t>(cfg.first_stage_width) * (cfg.factor_size() + 2);
  c.first_stage_static = mlp_macs(cfg.first_stage_input(false),
                                  cfg.first_stage_width,
                                  cfg.first_stage_layers) + heads1;
  c.first_stage_dynamic = mlp_macs(cfg.first_stage_input(true),
                                   cfg.first_stage_width,
                                   cfg.first_stage_layers) + heads1;
  const uint64_t head2 = static_cast<uint64_t>(cfg.second_stage_width) * 3;
  c.second_stage_static = mlp_macs(cfg.second_stage_input(false),
                                   cfg.second_stage_width,
                                   cfg.second_stage_layers) + head2;
  c.second_stage_dynamic = mlp_macs(cfg.second_stage_input(true),
                                    cfg.second_stage_width,
                                    cfg.second_stage_layers) + head2;
  const uint64_t m2 = static_cast<uint64_t>(cfg.rank) * cfg.rank;
  c.reconstruct = m2 * m2 + 2 * m2;
  return c;
}

struct CostReport {
  double queries_ratio = 0.0;  // full-path queries / all queries
  uint64_t flops = 0;          // 2 x multiply-adds per frame (or per render)
};

// Full path runs both stages; reuse runs the second stage plus the feature
// reconstruction (nothing in direct-rgb mode); skip costs nothing.
inline CostReport count_cost(const PathCounters& counters,
                             const FieldConfig& cfg, Strategy strategy) {
  const StageCost c = stage_cost(cfg);
  const uint64_t full_static = counters.full - counters.full_dynamic;
  const uint64_t reuse_static = counters.reuse - counters.reuse_dynamic;
  uint64_t macs = 0;
  macs += full_static * (c.first_stage_static + c.second_stage_static);
  macs += counters.full_dynamic * (c.first_stage_dynamic + c.second_stage_dynamic);
  if (strategy != Strategy::kDirectRgb && strategy != Strategy::kNaiveRgb) {
    const uint64_t reuse_recon =
        strategy == Strategy::kEncDec
            ? static_cast<uint64_t>(cfg.code_size()) * cfg.feature_size()
            : c.reconstruct;
    macs += reuse_static * (c.second_stage_static + reuse_recon);
    macs += counters.reuse_dynamic * (c.second_stage_dynamic + reuse_recon);
  }
  CostReport report;
  report.flops = 2 * macs;
  report.queries_ratio =
      counters.total() == 0
          ? 0.0
          : static_cast<double>(counters.full) / counters.total();
  return report;
}

inline void write_counters_csv_header(std::ostream& os) {
  os << "frame,total,full,reuse,skip,full_fraction\n";
}
inline void write_counters_csv_row(std::ostream& os, int frame,
                                   const PathCounters& c) {
  os << frame << ',' << c.total() << ',' << c.full << ',' << c.reuse << ','
     << c.skip << ',' << c.full_fraction() << '\n';
}

}  // namespace cfnsg
