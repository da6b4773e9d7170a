#pragma once

#include <string>
#include <vector>

#include "bta/common.hpp"

namespace bta {

// ---- domain types ----------------------------------------------------------

struct StockMeta {
    std::string ticker;
    double shares_outstanding = 0.0;  // shares
    double adv = 0.0;                 // average traded shares per step
    double lambda_impact = 0.0;       // dimensionless permanent-impact coefficient
    double half_spread = 0.0;         // fraction of price paid per share traded

    void validate() const;
};

struct MarketParams {
    int n_stocks = 0;
    int n_steps = 0;
    std::vector<double> init_prices;  // one per stock, > 0
    std::vector<double> drift;        // log-return per step, one per stock
    Matrix cov_factor;                // lower-triangular L with Sigma = L L^T
    uint64_t seed = 0;

    void validate() const;
};

struct PricePanel {
    Matrix prices;  // T x N, all > 0
    std::vector<std::string> tickers;
    long t0 = 0;

    int n_steps() const { return prices.rows; }
    int n_stocks() const { return prices.cols; }
    long last_step() const { return t0 + prices.rows - 1; }
    int stock_index(const std::string& ticker) const;  // -1 if unknown
};

struct IndexSpec {
    std::vector<std::string> members;
    double divisor = 1.0;
};

struct MarketState {
    std::vector<double> prices;
    double spend = 0.0;  // cumulative attacker/agent execution cost
    long step = 0;
};

struct Fill {
    double dp = 0.0;    // permanent price change applied
    double cost = 0.0;  // spread cost plus half the impact
};

// ---- operations -------------------------------------------------------------

// Correlated geometric walk: log p_{t+1} = log p_t + mu + L z, z ~ N(0, I).
// Identical seed gives a bit-identical panel.
PricePanel generate_market(const MarketParams& params, const std::vector<StockMeta>& meta);

// Cap-weighted index level (sum of shares_i * p_i over members) / divisor.
double index_value(const PricePanel& panel, const IndexSpec& spec,
                   const std::vector<StockMeta>& meta, long t);
double index_value(const std::vector<double>& prices, const std::vector<std::string>& tickers,
                   const IndexSpec& spec, const std::vector<StockMeta>& meta);

// Divisor that makes the index open at base_value on the panel's first row.
double index_divisor_for_base(const PricePanel& panel, const std::vector<std::string>& members,
                              const std::vector<StockMeta>& meta, double base_value);

// Applies the permanent linear impact dp = p * lambda * (q / ADV) and charges
// |q| * p * half_spread + |q| * |dp| / 2 to the cumulative spend.
// A trade that would push the price to <= 0 is rejected and not applied.
Fill execute_trade(MarketState& state, int stock, const StockMeta& meta, double signed_shares);

// Shares q = f * ADV / lambda such that execute_trade moves the price by
// exactly the fraction f. |f| above the cap is infeasible.
double invert_impact(const StockMeta& meta, double price, double target_fraction,
                     double cap = 0.05);

// Cost of moving one stock by the fraction f in a single trade at price p.
double move_cost(const StockMeta& meta, double price, double fraction);

// Stock i is manipulable iff moving it by eps_max * p_i costs at most
// per_stock_budget. Deterministic; an empty mask is a legal result.
std::vector<bool> classify_manipulable(const std::vector<StockMeta>& meta,
                                       const std::vector<double>& prices, double eps_max,
                                       double per_stock_budget);

// ---- serialization ------------------------------------------------------------

// CSV: header "step,<ticker1>,...,<tickerN>", one row per step,
// prices with 10 significant digits.
void write_panel_csv(const PricePanel& panel, const std::string& path);
PricePanel read_panel_csv(const std::string& path);

}  // namespace bta
