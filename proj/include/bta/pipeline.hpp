#pragma once

#include <map>
#include <string>
#include <vector>

#include "bta/scenario.hpp"

namespace bta {

// Stages communicate only through files in the run directory, so any stage
// can be rerun or inspected in isolation.
extern const std::vector<std::string> kStageOrder;  // generate .. report

struct SuccessFlags {
    double transfer_rate = 0.0;
    double clean_false_sell_rate = 0.0;
    bool success_transfer = false;  // (I) fraction of victims shifting to SELL
    double max_drawdown = 0.0;
    bool success_drawdown = false;  // (II) index drop within the horizon
};

struct StageResult {
    std::string stage;
    std::vector<std::string> artifacts;  // file names written, in write order
    double seconds = 0.0;
};

// Executes one stage from persisted prior-stage outputs. Missing inputs raise
// DependencyError naming the stage to run first.
StageResult run_stage(const ScenarioConfig& config, const std::string& stage,
                      const std::string& run_dir);

// All stages in order.
std::vector<StageResult> run_all(const ScenarioConfig& config, const std::string& run_dir);

// Recomputes both Table-style success flags from the raw CSV artifacts.
SuccessFlags evaluate_success(const ScenarioConfig& config, const std::string& run_dir);

// Consolidated JSON summary of a finished run (the `report` stage output).
std::string consolidated_report(const ScenarioConfig& config, const std::string& run_dir);

// Default run directory name: <config digest>-<UTC timestamp>.
std::string default_run_dir(const ScenarioConfig& config);

// step,index_value rows; first row is the pre-feedback baseline.
std::vector<std::pair<long, double>> read_index_path_csv(const std::string& path);

// step,ticker,net_shares rows aggregated into per-step per-stock volumes.
std::vector<std::vector<double>> read_volumes_csv(const std::string& path,
                                                  const std::vector<std::string>& tickers,
                                                  long* first_step = nullptr);

}  // namespace bta
