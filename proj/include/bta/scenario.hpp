#pragma once

#include <string>
#include <vector>

#include "bta/agents.hpp"
#include "bta/attack.hpp"
#include "bta/common.hpp"
#include "bta/defenses.hpp"
#include "bta/forecast.hpp"
#include "bta/market.hpp"
#include "bta/realize.hpp"
#include "bta/transfer.hpp"

namespace bta {

// One fully seeded end-to-end experiment. Loaded from a JSON config file;
// every stage seed derives from the master seed as
// derive_seed(master_seed, stage_name).
struct ScenarioConfig {
    int schema_version = 1;
    uint64_t master_seed = 0;

    MarketParams market;
    std::vector<StockMeta> stocks;
    std::vector<std::string> index_members;
    double index_base_value = 1000.0;

    // surrogate
    ModelKind surrogate_kind = ModelKind::Linear;
    int surrogate_window = 8;
    TrainHyper surrogate_hyper;
    Thresholds thresholds;

    // attack
    std::string attack_method = "iterative";  // fgsm | iterative | universal | diachronic
    double attack_eps = 0.01;
    double attack_tau_target = -0.002;
    int attack_steps = 25;
    double attack_step_size = 0.001;
    int attack_sparsity_k = 0;  // 0 = all manipulable stocks
    int attack_rows = 1;        // trailing window rows realized as future trades
    double manip_eps_max = 0.02;
    double manip_budget = 1e6;  // per-stock manipulability budget
    int universal_train_windows = 50;

    // realization
    RealizeConfig realize;

    // agents
    struct FollowerSpec {
        ModelKind kind = ModelKind::Mlp;
        int window_len = 8;
        int hidden = 8;
        double capital = 0.0;
        double sell_fraction = 0.5;
    };
    std::vector<FollowerSpec> followers;
    double phi = 0.5;
    int feedback_horizon = 20;

    // victims
    std::vector<VictimSpec> victim_grid;

    // defenses
    DefenseConfig defense;
    std::vector<double> defense_eps_grid;
    int detect_null_steps = 1000;
    double detect_null_bg_vol_frac = 0.01;  // sigma of background volume / ADV

    // success thresholds
    double success_min_transfer = 0.5;
    double success_drop_pct = 0.01;
    int success_horizon_steps = 20;

    std::string source_digest;  // hash of the config file bytes

    void validate() const;
    uint64_t stage_seed(const std::string& stage) const { return derive_seed(master_seed, stage); }
    IndexSpec index_spec_for(const PricePanel& panel) const;
};

ScenarioConfig load_scenario(const std::string& path);
ScenarioConfig parse_scenario(const std::string& json_text);
std::string dump_scenario(const ScenarioConfig& config);  // canonical JSON

// Keeps the ceil(factor * N) largest-cap stocks (by shares * initial price),
// re-slices the covariance, scales budgets proportionally, and re-derives the
// master seed.
ScenarioConfig scale_scenario(const ScenarioConfig& config, double factor);

}  // namespace bta
