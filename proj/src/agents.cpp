#include "bta/agents.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

namespace bta {

void AgentPopulation::validate() const {
    if (!(phi >= 0.0 && phi <= 1.0)) throw ValidationError("agents: phi must be in [0, 1]");
    for (const auto& f : followers) {
        if (f.capital < 0.0) throw ValidationError("agents: capital must be >= 0");
        if (!(f.sell_fraction >= 0.0 && f.sell_fraction <= 1.0))
            throw ValidationError("agents: sell_fraction must be in [0, 1]");
        f.thresholds.validate();
    }
}

void init_holdings(AgentPopulation& population, const std::vector<StockMeta>& meta,
                   const IndexSpec& spec, const std::vector<std::string>& tickers,
                   const std::vector<double>& prices) {
    population.validate();
    const int n = static_cast<int>(tickers.size());

    std::vector<double> weight(n, 0.0);
    double total_cap = 0.0;
    for (const auto& member : spec.members) {
        int idx = -1;
        for (int i = 0; i < n; ++i)
            if (tickers[i] == member) { idx = i; break; }
        if (idx < 0) throw ValidationError("agents: unknown index member " + member);
        weight[idx] = meta[idx].shares_outstanding * prices[idx];
        total_cap += weight[idx];
    }
    for (auto& follower : population.followers) {
        follower.holdings.assign(n, 0.0);
        for (int i = 0; i < n; ++i) {
            if (weight[i] == 0.0) continue;
            const double alloc = population.phi * follower.capital * (weight[i] / total_cap);
            follower.holdings[i] = alloc / prices[i];
        }
    }
}

AgentStepResult step_agents(AgentPopulation& population,
                            const std::vector<Matrix>& windows_per_follower, MarketState& state,
                            const std::vector<StockMeta>& meta) {
    const int n = static_cast<int>(state.prices.size());
    if (windows_per_follower.size() != population.followers.size())
        throw ContractError("step_agents: one window per follower required");

    AgentStepResult result;
    result.net_volume.assign(n, 0.0);
    result.signals.reserve(population.followers.size());

    result.follower_volume.assign(population.followers.size(), 0.0);
    for (size_t a = 0; a < population.followers.size(); ++a) {
        Follower& f = population.followers[a];
        Window w{windows_per_follower[a], state.step};
        const Signal sig = predict(f.model, w, f.thresholds);
        result.signals.push_back(sig.action);
        if (sig.action != Action::Sell) continue;
        for (int i = 0; i < n; ++i) {
            const double sold = f.sell_fraction * f.holdings[i];
            if (sold == 0.0) continue;
            result.net_volume[i] -= sold;
            result.follower_volume[a] -= sold;
            f.holdings[i] -= sold;
        }
    }
    for (int i = 0; i < n; ++i) {
        if (result.net_volume[i] != 0.0) execute_trade(state, i, meta[i], result.net_volume[i]);
    }
    return result;
}

double max_drawdown(const std::vector<double>& path) {
    double peak = 0.0;
    double worst = 0.0;
    for (double v : path) {
        peak = std::max(peak, v);
        if (peak > 0.0) worst = std::max(worst, (peak - v) / peak);
    }
    return worst;
}

FeedbackResult run_feedback(AgentPopulation& population, MarketState& state,
                            const std::vector<StockMeta>& meta, const IndexSpec& spec,
                            const std::vector<std::string>& tickers,
                            const Matrix& recent_returns, int horizon, double exo_sigma,
                            Rng& noise) {
    if (horizon < 1) throw ContractError("run_feedback: horizon must be >= 1");
    population.validate();
    const int n = static_cast<int>(state.prices.size());

    // rolling return history, newest row last; deep enough for every follower
    int max_w = 1;
    for (const auto& f : population.followers) max_w = std::max(max_w, f.model.window_len);
    if (recent_returns.cols != n || recent_returns.rows < max_w)
        throw ContractError("run_feedback: recent_returns must cover the longest window");

    std::vector<std::vector<double>> history;
    for (int r = recent_returns.rows - max_w; r < recent_returns.rows; ++r) {
        std::vector<double> row(n);
        for (int c = 0; c < n; ++c) row[c] = recent_returns.at(r, c);
        history.push_back(std::move(row));
    }

    FeedbackResult result;
    result.index_path.push_back(index_value(state.prices, tickers, spec, meta));

    for (int h = 0; h < horizon; ++h) {
        // decisions come from the window ending at the previous close
        std::vector<Matrix> windows;
        windows.reserve(population.followers.size());
        for (const auto& f : population.followers) {
            Matrix w(f.model.window_len, n);
            for (int r = 0; r < f.model.window_len; ++r) {
                const auto& src = history[history.size() - f.model.window_len + r];
                for (int c = 0; c < n; ++c) w.at(r, c) = src[c];
            }
            windows.push_back(std::move(w));
        }

        const std::vector<double> base = state.prices;
        for (int i = 0; i < n; ++i) state.prices[i] *= std::exp(exo_sigma * noise.normal());

        const AgentStepResult step = step_agents(population, windows, state, meta);

        std::vector<double> close_returns(n);
        for (int i = 0; i < n; ++i) close_returns[i] = std::log(state.prices[i] / base[i]);
        history.push_back(close_returns);
        history.erase(history.begin());
        state.step += 1;

        const double idx = index_value(state.prices, tickers, spec, meta);
        result.steps.push_back(state.step);
        result.index_path.push_back(idx);
        result.net_volumes.push_back(step.net_volume);
        for (size_t a = 0; a < population.followers.size(); ++a) {
            result.events.push_back({state.step, static_cast<int>(a), step.signals[a],
                                     step.follower_volume[a], idx});
        }
    }
    result.max_drawdown = max_drawdown(result.index_path);
    return result;
}

void write_events_csv(const FeedbackResult& result, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << "step,agent_id,signal,volume,index_value\n";
    char buf[128];
    for (const auto& e : result.events) {
        std::snprintf(buf, sizeof(buf), "%ld,%d,%s,%.17g,%.17g\n", e.step, e.agent_id,
                      to_string(e.signal).c_str(), e.volume, e.index_value);
        out << buf;
    }
}

}  // namespace bta
