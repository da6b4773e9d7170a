#pragma once

#include <string>
#include <vector>

#include "bta/common.hpp"
#include "bta/forecast.hpp"
#include "bta/market.hpp"

namespace bta {

// ---- domain types ----------------------------------------------------------

// A model-following trader holding an index-proportional portfolio. On a SELL
// signal it liquidates sell_fraction of its holdings pro-rata.
struct Follower {
    ForecastModel model;
    Thresholds thresholds;
    double capital = 0.0;
    double sell_fraction = 0.0;
    std::vector<double> holdings;  // shares per stock (index members only)
};

struct AgentPopulation {
    std::vector<Follower> followers;
    double phi = 0.0;  // fraction of market participation that is model-following

    void validate() const;
};

struct AgentEvent {
    long step = 0;
    int agent_id = 0;
    Action signal = Action::Hold;
    double volume = 0.0;  // total shares sold this step (negative = sold)
    double index_value = 0.0;
};

struct FeedbackResult {
    std::vector<long> steps;          // absolute step of each feedback close
    std::vector<double> index_path;   // index at each close, preceded by the start level
    std::vector<AgentEvent> events;   // one row per follower per step
    std::vector<std::vector<double>> net_volumes;  // per step, per stock net agent shares
    double max_drawdown = 0.0;        // peak-to-trough fraction over the path
};

// ---- operations -------------------------------------------------------------

// Index-proportional holdings scaled by phi: follower capital is split across
// index members by market-cap weight at the given prices.
void init_holdings(AgentPopulation& population, const std::vector<StockMeta>& meta,
                   const IndexSpec& spec, const std::vector<std::string>& tickers,
                   const std::vector<double>& prices);

struct AgentStepResult {
    std::vector<double> net_volume;       // per-stock signed shares from all followers
    std::vector<Action> signals;          // per follower
    std::vector<double> follower_volume;  // per follower, signed total shares traded
};

// One round of reactions: every follower whose signal is SELL liquidates
// sell_fraction of holdings; aggregate volumes go through execute_trade.
AgentStepResult step_agents(AgentPopulation& population,
                            const std::vector<Matrix>& windows_per_follower, MarketState& state,
                            const std::vector<StockMeta>& meta);

// Simulates `horizon` steps of exogenous noise -> agent reactions -> price
// update -> index recompute. Followers decide on the window ending at the
// previous close. Returns the index path and max peak-to-trough drawdown.
FeedbackResult run_feedback(AgentPopulation& population, MarketState& state,
                            const std::vector<StockMeta>& meta, const IndexSpec& spec,
                            const std::vector<std::string>& tickers,
                            const Matrix& recent_returns, int horizon, double exo_sigma,
                            Rng& noise);

double max_drawdown(const std::vector<double>& path);

// CSV: step,agent_id,signal,volume,index_value
void write_events_csv(const FeedbackResult& result, const std::string& path);

}  // namespace bta
