#include "bta/realize.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include <json.hpp>

namespace bta {

std::string to_string(Outcome o) {
    switch (o) {
        case Outcome::Realized: return "REALIZED";
        case Outcome::Partial: return "PARTIAL";
        default: return "ABORTED";
    }
}

std::vector<StepTarget> targets_from_perturbation(const Perturbation& pert,
                                                  int first_future_row) {
    std::vector<StepTarget> targets;
    for (const auto& [r, c] : pert.support) {
        if (r < first_future_row) continue;  // past rows cannot be traded
        targets.push_back({r - first_future_row, c, pert.delta.at(r, c)});
    }
    std::stable_sort(targets.begin(), targets.end(), [](const StepTarget& a, const StepTarget& b) {
        return a.step != b.step ? a.step < b.step : a.stock < b.stock;
    });
    return targets;
}

TradePlan compile_plan(const std::vector<StepTarget>& targets, const MarketState& state,
                       const std::vector<StockMeta>& meta, double budget,
                       double single_trade_cap) {
    TradePlan plan;
    plan.total_budget = budget;

    // cost estimate walks a scratch copy of the market assuming zero noise,
    // so the estimate matches a noise-free realization trade for trade
    MarketState scratch{state.prices, 0.0, state.step};
    int prev_step = 0;
    for (const auto& t : targets) {
        if (t.step < 0) throw ContractError("compile_plan: negative step");
        if (t.step < prev_step) throw ContractError("compile_plan: steps must be nondecreasing");
        prev_step = t.step;
        if (t.stock < 0 || t.stock >= static_cast<int>(meta.size()))
            throw ContractError("compile_plan: unknown stock index");
        if (t.log_return == 0.0) continue;
        const double frac = std::expm1(t.log_return);
        if (!(std::abs(frac) < single_trade_cap)) {
            throw std::runtime_error("compile_plan: target move on " + meta[t.stock].ticker +
                                     " exceeds the single-trade cap");
        }
        const double q = invert_impact(meta[t.stock], scratch.prices[t.stock], frac,
                                       single_trade_cap);
        execute_trade(scratch, t.stock, meta[t.stock], q);
        plan.orders.push_back({t.step, meta[t.stock].ticker, q, t.log_return});
    }
    plan.est_cost = scratch.spend;
    if (plan.est_cost > budget) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.2f", plan.est_cost - budget);
        throw std::runtime_error("compile_plan: estimated cost exceeds budget by " +
                                 std::string(buf));
    }
    return plan;
}

namespace {

int stock_index_of(const std::vector<StockMeta>& meta, const std::string& ticker) {
    for (size_t i = 0; i < meta.size(); ++i)
        if (meta[i].ticker == ticker) return static_cast<int>(i);
    throw ContractError("realize: unknown ticker " + ticker);
}

double trade_cost_preview(const StockMeta& meta, double price, double shares) {
    const double dp = price * meta.lambda_impact * (shares / meta.adv);
    return std::abs(shares) * price * meta.half_spread + std::abs(shares) * std::abs(dp) / 2.0;
}

}  // namespace

ExecutionReport realize(const TradePlan& plan, int n_steps, MarketState& state,
                        const std::vector<StockMeta>& meta, const RealizeConfig& cfg,
                        Rng& noise, std::vector<std::vector<double>>* realized_returns,
                        std::vector<std::vector<double>>* traded_shares) {
    const int n = static_cast<int>(state.prices.size());
    ExecutionReport report;
    report.outcome = Outcome::Realized;
    bool aborted = false;

    size_t next_order = 0;
    for (int s = 0; s < n_steps; ++s) {
        const std::vector<double> base = state.prices;

        // exogenous moves first; the stream is drawn for every stock even at
        // sigma zero so that attack and counterfactual runs share one stream
        for (int i = 0; i < n; ++i) {
            state.prices[i] *= std::exp(cfg.exo_sigma * noise.normal());
        }

        std::vector<double> traded(n, 0.0);
        while (!aborted && next_order < plan.orders.size() && plan.orders[next_order].step == s) {
            const Order& order = plan.orders[next_order];
            const int i = stock_index_of(meta, order.ticker);
            const double target_frac = std::expm1(order.target_log_return);

            OrderOutcome row;
            row.step = s;
            row.ticker = order.ticker;
            row.target_frac = target_frac;

            // planned trade plus bounded corrective re-trades
            double shares = order.shares;
            for (int attempt = 0; attempt <= cfg.max_retrades; ++attempt) {
                const double cost = trade_cost_preview(meta[i], state.prices[i], shares);
                if (state.spend + cost > plan.total_budget) {
                    aborted = true;
                    break;
                }
                const Fill fill = execute_trade(state, i, meta[i], shares);
                row.cost += fill.cost;
                report.total_spend += fill.cost;
                traded[i] += shares;
                if (attempt > 0) ++report.retrades;

                const double achieved = state.prices[i] / base[i] - 1.0;
                if (std::abs(achieved - target_frac) <= cfg.tolerance) break;
                if (attempt == cfg.max_retrades) break;
                const double f_corr = base[i] * (1.0 + target_frac) / state.prices[i] - 1.0;
                if (!(std::abs(f_corr) < cfg.single_trade_cap)) break;
                shares = invert_impact(meta[i], state.prices[i], f_corr, cfg.single_trade_cap);
            }

            row.achieved_frac = state.prices[i] / base[i] - 1.0;
            // a row is recorded once anything was filled, so the spend ledger
            // stays equal to the sum of row costs even on an aborted run
            if (!aborted || row.cost > 0.0) {
                report.rows.push_back(row);
                report.residual_max =
                    std::max(report.residual_max, std::abs(row.achieved_frac - row.target_frac));
            }
            ++next_order;
        }

        if (realized_returns) {
            std::vector<double> rets(n);
            for (int i = 0; i < n; ++i) rets[i] = std::log(state.prices[i] / base[i]);
            realized_returns->push_back(std::move(rets));
        }
        if (traded_shares) traded_shares->push_back(std::move(traded));
        state.step += 1;
        if (aborted) {
            // market keeps drifting, but no further attacker orders
            for (int t = s + 1; t < n_steps; ++t) {
                const std::vector<double> b2 = state.prices;
                for (int i = 0; i < n; ++i) state.prices[i] *= std::exp(cfg.exo_sigma * noise.normal());
                if (realized_returns) {
                    std::vector<double> rets(n);
                    for (int i = 0; i < n; ++i) rets[i] = std::log(state.prices[i] / b2[i]);
                    realized_returns->push_back(std::move(rets));
                }
                if (traded_shares) traded_shares->push_back(std::vector<double>(n, 0.0));
                state.step += 1;
            }
            break;
        }
    }

    if (aborted) {
        report.outcome = Outcome::Aborted;
    } else if (report.residual_max <= cfg.tolerance && report.total_spend <= plan.total_budget) {
        report.outcome = Outcome::Realized;
    } else {
        report.outcome = Outcome::Partial;
    }
    return report;
}

void write_execution_json(const ExecutionReport& report, const std::string& path,
                          const std::vector<std::string>* events) {
    nlohmann::json j;
    j["outcome"] = to_string(report.outcome);
    j["residual_max"] = report.residual_max;
    j["total_spend"] = report.total_spend;
    j["retrades"] = report.retrades;
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : report.rows) {
        rows.push_back({{"step", r.step},
                        {"ticker", r.ticker},
                        {"target_frac", r.target_frac},
                        {"achieved_frac", r.achieved_frac},
                        {"cost", r.cost}});
    }
    j["orders"] = rows;
    if (events && !events->empty()) j["events"] = *events;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << j.dump(2) << '\n';
}

void write_orders_csv(const ExecutionReport& report, long step_base, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << "step,ticker,target_frac,achieved_frac,cost\n";
    char buf[160];
    for (const auto& r : report.rows) {
        std::snprintf(buf, sizeof(buf), "%ld,%s,%.17g,%.17g,%.17g\n", step_base + r.step,
                      r.ticker.c_str(), r.target_frac, r.achieved_frac, r.cost);
        out << buf;
    }
}

}  // namespace bta
