#include "bta/market.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace bta {

void StockMeta::validate() const {
    if (ticker.empty()) throw ValidationError("stock ticker must be non-empty");
    if (!(shares_outstanding > 0.0))
        throw ValidationError("stock " + ticker + ": shares_outstanding must be > 0");
    if (!(adv > 0.0)) throw ValidationError("stock " + ticker + ": adv must be > 0");
    if (!(lambda_impact > 0.0))
        throw ValidationError("stock " + ticker + ": lambda_impact must be > 0");
    if (!(half_spread >= 0.0 && half_spread < 0.05))
        throw ValidationError("stock " + ticker + ": half_spread must be in [0, 0.05)");
}

void MarketParams::validate() const {
    if (n_stocks < 1 || n_steps < 1) throw ValidationError("market: N and T must be >= 1");
    if (static_cast<int>(init_prices.size()) != n_stocks)
        throw ValidationError("market: init_prices length must equal n_stocks");
    for (double p : init_prices)
        if (!(p > 0.0) || !std::isfinite(p))
            throw ValidationError("market: initial prices must be positive and finite");
    if (static_cast<int>(drift.size()) != n_stocks)
        throw ValidationError("market: drift length must equal n_stocks");
    for (double m : drift)
        if (!std::isfinite(m)) throw ValidationError("market: drift must be finite");
    if (cov_factor.rows != n_stocks || cov_factor.cols != n_stocks)
        throw ValidationError("market: cov_factor must be N x N");
    for (int i = 0; i < n_stocks; ++i) {
        if (!(cov_factor.at(i, i) >= 0.0))
            throw ValidationError("market: cov_factor diagonal must be non-negative");
        for (int j = i + 1; j < n_stocks; ++j)
            if (cov_factor.at(i, j) != 0.0)
                throw ValidationError("market: cov_factor must be lower-triangular");
    }
}

int PricePanel::stock_index(const std::string& ticker) const {
    for (size_t i = 0; i < tickers.size(); ++i)
        if (tickers[i] == ticker) return static_cast<int>(i);
    return -1;
}

PricePanel generate_market(const MarketParams& params, const std::vector<StockMeta>& meta) {
    params.validate();
    if (static_cast<int>(meta.size()) != params.n_stocks)
        throw ValidationError("generate_market: meta length must equal n_stocks");
    std::set<std::string> seen;
    for (const auto& m : meta) {
        m.validate();
        if (!seen.insert(m.ticker).second)
            throw ValidationError("generate_market: duplicate ticker " + m.ticker);
    }

    const int n = params.n_stocks;
    const int t_total = params.n_steps;
    PricePanel panel;
    panel.prices = Matrix(t_total, n);
    panel.tickers.reserve(n);
    for (const auto& m : meta) panel.tickers.push_back(m.ticker);

    std::vector<double> logp(n);
    for (int i = 0; i < n; ++i) {
        logp[i] = std::log(params.init_prices[i]);
        panel.prices.at(0, i) = params.init_prices[i];
    }

    Rng rng(params.seed);
    std::vector<double> z(n);
    for (int t = 1; t < t_total; ++t) {
        for (int i = 0; i < n; ++i) z[i] = rng.normal();
        for (int i = 0; i < n; ++i) {
            double shock = 0.0;
            for (int j = 0; j <= i; ++j) shock += params.cov_factor.at(i, j) * z[j];
            logp[i] += params.drift[i] + shock;
            const double p = std::exp(logp[i]);
            if (!std::isfinite(p) || !(p > 0.0)) {
                throw std::runtime_error("generate_market: non-finite price for " +
                                         meta[i].ticker + " at step " + std::to_string(t));
            }
            panel.prices.at(t, i) = p;
        }
    }
    return panel;
}

double index_value(const std::vector<double>& prices, const std::vector<std::string>& tickers,
                   const IndexSpec& spec, const std::vector<StockMeta>& meta) {
    if (spec.members.empty()) throw ValidationError("index: members must be non-empty");
    if (!(spec.divisor > 0.0)) throw ValidationError("index: divisor must be > 0");
    double total = 0.0;
    for (const auto& member : spec.members) {
        int idx = -1;
        for (size_t i = 0; i < tickers.size(); ++i)
            if (tickers[i] == member) { idx = static_cast<int>(i); break; }
        if (idx < 0) throw ValidationError("index: unknown member ticker " + member);
        total += meta[idx].shares_outstanding * prices[idx];
    }
    return total / spec.divisor;
}

double index_value(const PricePanel& panel, const IndexSpec& spec,
                   const std::vector<StockMeta>& meta, long t) {
    const long row = t - panel.t0;
    if (row < 0 || row >= panel.prices.rows)
        throw ContractError("index_value: step out of panel range");
    std::vector<double> prices(panel.prices.cols);
    for (int i = 0; i < panel.prices.cols; ++i) prices[i] = panel.prices.at(static_cast<int>(row), i);
    return index_value(prices, panel.tickers, spec, meta);
}

double index_divisor_for_base(const PricePanel& panel, const std::vector<std::string>& members,
                              const std::vector<StockMeta>& meta, double base_value) {
    if (!(base_value > 0.0)) throw ValidationError("index: base value must be > 0");
    IndexSpec unit{members, 1.0};
    const double raw = index_value(panel, unit, meta, panel.t0);
    return raw / base_value;
}

Fill execute_trade(MarketState& state, int stock, const StockMeta& meta, double signed_shares) {
    if (stock < 0 || stock >= static_cast<int>(state.prices.size()))
        throw ContractError("execute_trade: unknown stock index");
    if (!std::isfinite(signed_shares)) throw ContractError("execute_trade: shares must be finite");

    const double p = state.prices[stock];
    const double dp = p * meta.lambda_impact * (signed_shares / meta.adv);
    const double p_new = p + dp;
    if (!(p_new > 0.0)) {
        throw std::runtime_error("execute_trade: rejected, trade would push " + meta.ticker +
                                 " to a non-positive price");
    }
    const double cost =
        std::abs(signed_shares) * p * meta.half_spread + std::abs(signed_shares) * std::abs(dp) / 2.0;
    state.prices[stock] = p_new;
    state.spend += cost;
    return {dp, cost};
}

double invert_impact(const StockMeta& meta, double price, double target_fraction, double cap) {
    (void)price;  // linear impact: required shares are price-independent
    if (!(std::abs(target_fraction) < cap)) {
        throw std::runtime_error("invert_impact: |target fraction| " +
                                 std::to_string(std::abs(target_fraction)) +
                                 " at or above cap " + std::to_string(cap));
    }
    return target_fraction * meta.adv / meta.lambda_impact;
}

double move_cost(const StockMeta& meta, double price, double fraction) {
    const double q = std::abs(fraction) * meta.adv / meta.lambda_impact;
    const double dp = price * std::abs(fraction);
    return q * price * meta.half_spread + q * dp / 2.0;
}

std::vector<bool> classify_manipulable(const std::vector<StockMeta>& meta,
                                       const std::vector<double>& prices, double eps_max,
                                       double per_stock_budget) {
    if (!(eps_max > 0.0)) throw ValidationError("classify_manipulable: eps_max must be > 0");
    if (per_stock_budget < 0.0)
        throw ValidationError("classify_manipulable: budget must be >= 0");
    std::vector<bool> mask(meta.size(), false);
    for (size_t i = 0; i < meta.size(); ++i) {
        mask[i] = move_cost(meta[i], prices[i], eps_max) <= per_stock_budget;
    }
    return mask;
}

void write_panel_csv(const PricePanel& panel, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << "step";
    for (const auto& t : panel.tickers) out << ',' << t;
    out << '\n';
    char buf[64];
    for (int r = 0; r < panel.prices.rows; ++r) {
        out << (panel.t0 + r);
        for (int c = 0; c < panel.prices.cols; ++c) {
            std::snprintf(buf, sizeof(buf), "%.10g", panel.prices.at(r, c));
            out << ',' << buf;
        }
        out << '\n';
    }
}

PricePanel read_panel_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DependencyError("missing price panel file " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty panel file " + path);

    PricePanel panel;
    {
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');  // "step"
        while (std::getline(ss, cell, ',')) panel.tickers.push_back(cell);
    }
    const int n = static_cast<int>(panel.tickers.size());
    if (n == 0) throw std::runtime_error("panel file has no tickers: " + path);

    std::vector<double> values;
    long t0 = 0;
    bool first = true;
    int rows = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');
        const long step = std::stol(cell);
        if (first) { t0 = step; first = false; }
        int got = 0;
        while (std::getline(ss, cell, ',')) {
            values.push_back(std::stod(cell));
            ++got;
        }
        if (got != n) throw std::runtime_error("ragged row in panel file " + path);
        ++rows;
    }
    panel.t0 = t0;
    panel.prices = Matrix(rows, n);
    panel.prices.a = std::move(values);
    return panel;
}

}  // namespace bta
