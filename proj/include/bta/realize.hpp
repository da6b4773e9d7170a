#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bta/attack.hpp"
#include "bta/common.hpp"
#include "bta/market.hpp"

namespace bta {

// ---- domain types ----------------------------------------------------------

struct Order {
    int step = 0;  // 0-based step offset from plan start
    std::string ticker;
    double shares = 0.0;
    double target_log_return = 0.0;  // total step log-return the order realizes
};

struct TradePlan {
    std::vector<Order> orders;  // steps nondecreasing
    double total_budget = 0.0;
    double est_cost = 0.0;
};

enum class Outcome { Realized, Partial, Aborted };

std::string to_string(Outcome o);

struct OrderOutcome {
    int step = 0;
    std::string ticker;
    double target_frac = 0.0;    // e^delta - 1
    double achieved_frac = 0.0;  // realized step move of the stock vs target base
    double cost = 0.0;
};

struct ExecutionReport {
    std::vector<OrderOutcome> rows;
    double residual_max = 0.0;  // max |achieved - target| over targeted (step, stock)
    double total_spend = 0.0;
    Outcome outcome = Outcome::Aborted;
    int retrades = 0;
};

struct RealizeConfig {
    double budget = 0.0;
    double tolerance = 1e-4;   // on the achieved log-return vs target
    int max_retrades = 2;      // corrective trades per (step, stock)
    double exo_sigma = 0.0;    // per-step exogenous log-return volatility
    double single_trade_cap = 0.05;
};

// A perturbation target: at plan step `step`, make the stock's total step
// log-return equal `log_return` (the crafted window assumed a zero base for
// future rows, so the target equals the delta coordinate).
struct StepTarget {
    int step = 0;
    int stock = 0;
    double log_return = 0.0;
};

// ---- operations -------------------------------------------------------------

// Targets taken from the future rows of a crafted perturbation: row
// first_future_row + s maps to plan step s.
std::vector<StepTarget> targets_from_perturbation(const Perturbation& pert,
                                                  int first_future_row);

// Emits one order per nonzero target with q = invert_impact(e^delta - 1) and
// attaches a cost estimate computed against a zero-noise price path.
TradePlan compile_plan(const std::vector<StepTarget>& targets, const MarketState& state,
                       const std::vector<StockMeta>& meta, double budget,
                       double single_trade_cap = 0.05);

// Runs the plan over n_steps market steps: per step, exogenous returns apply
// first, then the step's orders; deviations beyond tolerance trigger up to
// max_retrades corrective trades. Stops (Aborted) when the next trade would
// exceed the budget. An empty plan still advances the market n_steps (the
// no-attack counterfactual under the same noise stream).
ExecutionReport realize(const TradePlan& plan, int n_steps, MarketState& state,
                        const std::vector<StockMeta>& meta, const RealizeConfig& cfg,
                        Rng& noise, std::vector<std::vector<double>>* realized_returns = nullptr,
                        std::vector<std::vector<double>>* traded_shares = nullptr);

// ---- serialization ------------------------------------------------------------

void write_execution_json(const ExecutionReport& report, const std::string& path,
                          const std::vector<std::string>* events = nullptr);
// CSV: step,ticker,target_frac,achieved_frac,cost
void write_orders_csv(const ExecutionReport& report, long step_base, const std::string& path);

}  // namespace bta
