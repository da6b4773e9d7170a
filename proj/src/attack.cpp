#include "bta/attack.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <json.hpp>

namespace bta {

bool AttackMask::any() const {
    return std::any_of(on.begin(), on.end(), [](char c) { return c != 0; });
}

std::vector<int> AttackMask::stocks_touched() const {
    std::vector<int> out;
    for (int c = 0; c < cols; ++c) {
        for (int r = 0; r < rows; ++r) {
            if (at(r, c)) { out.push_back(c); break; }
        }
    }
    return out;
}

void AttackSpec::validate(int window_len, int n_stocks) const {
    if (!(eps > 0.0)) throw ValidationError("attack: eps must be > 0");
    if (!(step_size > 0.0)) throw ValidationError("attack: step_size must be > 0");
    if (steps < 1) throw ValidationError("attack: steps must be >= 1");
    if (mode == AttackMode::Targeted && !std::isfinite(tau_target))
        throw ValidationError("attack: targeted mode needs a finite tau_target");
    if (mask.rows != window_len || mask.cols != n_stocks)
        throw ValidationError("attack: mask shape must be W x N");
    if (sparsity_k > n_stocks) throw ValidationError("attack: sparsity_k must be <= N");
    if (sparsity_k >= 1 && static_cast<int>(mask.stocks_touched().size()) > sparsity_k)
        throw ValidationError("attack: mask touches more stocks than sparsity_k allows");
}

std::vector<int> Perturbation::stocks() const {
    std::set<int> s;
    for (const auto& [r, c] : support) s.insert(c);
    return {s.begin(), s.end()};
}

namespace {

void fill_support(Perturbation& pert) {
    pert.support.clear();
    for (int r = 0; r < pert.delta.rows; ++r)
        for (int c = 0; c < pert.delta.cols; ++c)
            if (pert.delta.at(r, c) != 0.0) pert.support.emplace_back(r, c);
}

std::vector<double> apply_delta(const Window& w, const Matrix& delta) {
    std::vector<double> x(w.x.a);
    for (size_t i = 0; i < x.size(); ++i) x[i] += delta.a[i];
    return x;
}

}  // namespace

Perturbation fgsm(const ForecastModel& model, const Window& window, const AttackSpec& spec) {
    spec.validate(model.window_len, model.n_inputs);
    if (!spec.mask.any()) throw std::runtime_error("attack: no attackable coordinates");

    const std::vector<double> g = input_gradient(model, window);
    Perturbation pert;
    pert.delta = Matrix(window.window_len(), window.n_stocks());
    for (int r = 0; r < pert.delta.rows; ++r) {
        for (int c = 0; c < pert.delta.cols; ++c) {
            if (!spec.mask.at(r, c)) continue;
            pert.delta.at(r, c) = -spec.eps * sign0(g[static_cast<size_t>(r) * pert.delta.cols + c]);
        }
    }
    fill_support(pert);
    pert.y_before = model.value(window.x.flat());
    pert.y_after = model.value(apply_delta(window, pert.delta));
    return pert;
}

Perturbation iterative_attack(const ForecastModel& model, const Window& window,
                              const AttackSpec& spec) {
    spec.validate(model.window_len, model.n_inputs);
    if (!spec.mask.any()) throw std::runtime_error("attack: no attackable coordinates");

    const int rows = window.window_len();
    const int cols = window.n_stocks();
    Matrix delta(rows, cols);
    const double y0 = model.value(window.x.flat());
    double y_cur = y0;

    for (int k = 0; k < spec.steps; ++k) {
        if (spec.mode == AttackMode::Targeted && y_cur <= spec.tau_target) break;
        Window shifted{Matrix(rows, cols), window.end_step};
        shifted.x.a = apply_delta(window, delta);
        const std::vector<double> g = input_gradient(model, shifted);

        Matrix cand = delta;
        for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < cols; ++c) {
                if (!spec.mask.at(r, c)) continue;
                double d = cand.at(r, c) - spec.step_size * sign0(g[static_cast<size_t>(r) * cols + c]);
                cand.at(r, c) = std::clamp(d, -spec.eps, spec.eps);
            }
        }
        const double y_cand = model.value(apply_delta(window, cand));
        if (y_cand <= y_cur) {  // keep only non-increasing moves
            delta = std::move(cand);
            y_cur = y_cand;
        }
    }

    Perturbation pert;
    pert.delta = std::move(delta);
    fill_support(pert);
    pert.y_before = y0;
    pert.y_after = y_cur;
    return pert;
}

AttackMask select_sparse_mask(const ForecastModel& model, const Window& window,
                              const std::vector<bool>& manipulable,
                              const std::vector<double>& costs, int k) {
    if (k < 1) throw ValidationError("select_sparse_mask: k must be >= 1");
    const int cols = window.n_stocks();
    const int rows = window.window_len();
    if (static_cast<int>(manipulable.size()) != cols || static_cast<int>(costs.size()) != cols)
        throw ContractError("select_sparse_mask: manipulable/costs length must be N");
    if (std::none_of(manipulable.begin(), manipulable.end(), [](bool b) { return b; }))
        throw std::runtime_error("attack: no manipulable stocks");

    const std::vector<double> g = input_gradient(model, window);
    std::vector<std::pair<double, int>> scored;  // (-score, stock) for stable ordering
    for (int c = 0; c < cols; ++c) {
        if (!manipulable[c]) continue;
        double lever = 0.0;
        for (int r = 0; r < rows; ++r) lever += std::abs(g[static_cast<size_t>(r) * cols + c]);
        scored.emplace_back(lever / costs[c], c);
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });

    AttackMask mask(rows, cols, false);
    const int take = std::min<int>(k, static_cast<int>(scored.size()));
    for (int i = 0; i < take; ++i)
        for (int r = 0; r < rows; ++r) mask.set(r, scored[i].second, true);
    return mask;
}

UniversalResult universal_perturbation(const ForecastModel& model,
                                       const std::vector<Window>& windows,
                                       const AttackSpec& spec) {
    spec.validate(model.window_len, model.n_inputs);
    if (windows.empty()) throw ContractError("universal_perturbation: need at least one window");
    if (spec.mode != AttackMode::Targeted)
        throw ContractError("universal_perturbation: targeted mode required");
    if (!spec.mask.any()) throw std::runtime_error("attack: no attackable coordinates");

    const int rows = model.window_len;
    const int cols = model.n_inputs;
    const size_t nw = windows.size();

    auto mean_y = [&](const Matrix& d) {
        double sum = 0.0;
        for (const auto& w : windows) sum += model.value(apply_delta(w, d));
        return sum / static_cast<double>(nw);
    };
    auto success_fraction = [&](const Matrix& d) {
        size_t hits = 0;
        for (const auto& w : windows)
            if (model.value(apply_delta(w, d)) <= spec.tau_target) ++hits;
        return static_cast<double>(hits) / static_cast<double>(nw);
    };

    Matrix delta(rows, cols);
    double y_cur = mean_y(delta);
    Matrix best = delta;
    double best_frac = success_fraction(delta);

    std::vector<double> mean_sign(static_cast<size_t>(rows) * cols);
    for (int k = 0; k < spec.steps; ++k) {
        if (best_frac >= 1.0) break;
        std::fill(mean_sign.begin(), mean_sign.end(), 0.0);
        for (const auto& w : windows) {
            Window shifted{Matrix(rows, cols), w.end_step};
            shifted.x.a = apply_delta(w, delta);
            const std::vector<double> g = input_gradient(model, shifted);
            for (size_t i = 0; i < mean_sign.size(); ++i) mean_sign[i] += sign0(g[i]);
        }
        Matrix cand = delta;
        for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < cols; ++c) {
                if (!spec.mask.at(r, c)) continue;
                const size_t i = static_cast<size_t>(r) * cols + c;
                double d = cand.at(r, c) -
                           spec.step_size * mean_sign[i] / static_cast<double>(nw);
                cand.at(r, c) = std::clamp(d, -spec.eps, spec.eps);
            }
        }
        const double y_cand = mean_y(cand);
        if (y_cand <= y_cur) {
            delta = std::move(cand);
            y_cur = y_cand;
            const double frac = success_fraction(delta);
            if (frac >= best_frac) {
                best = delta;
                best_frac = frac;
            }
        }
    }

    UniversalResult res;
    res.perturbation.delta = best;
    fill_support(res.perturbation);
    // report against the first window for the before/after pair
    res.perturbation.y_before = model.value(windows.front().x.flat());
    res.perturbation.y_after = model.value(apply_delta(windows.front(), best));
    res.success_fraction = success_fraction(best);
    return res;
}

DiachronicPlan plan_diachronic(const ForecastModel& model, const Window& history,
                               const AttackSpec& spec, int horizon, DiachronicEnv& env,
                               const ManipulabilityCheck& manip) {
    const int w_len = model.window_len;
    const int cols = model.n_inputs;
    spec.validate(w_len, cols);
    if (horizon < 1 || horizon > w_len)
        throw ContractError("plan_diachronic: need 1 <= horizon <= W");
    if (history.window_len() != w_len || history.n_stocks() != cols)
        throw ContractError("plan_diachronic: history window shape mismatch");

    DiachronicPlan plan;
    plan.planned_delta = Matrix(w_len, cols);

    // realized log-returns of the horizon steps, filled as we go
    Matrix realized(horizon, cols);
    std::vector<char> active(cols, 0);
    for (int c : spec.mask.stocks_touched()) active[c] = 1;

    for (int h = 0; h < horizon; ++h) {
        // manipulability re-check at current prices and liquidity
        bool any_active = false;
        for (int c = 0; c < cols; ++c) {
            if (!active[c]) continue;
            const double cost = move_cost(env.metas()[c], env.prices()[c], manip.eps_max);
            if (cost > manip.per_stock_budget) {
                active[c] = 0;
                plan.events.push_back({DiachronicEventKind::Replan, h, env.metas()[c].ticker});
            } else {
                any_active = true;
            }
        }
        if (!any_active) {
            plan.events.push_back({DiachronicEventKind::Failed, h, ""});
            plan.failed = true;
            break;
        }

        // projected end-of-horizon window: realized history so far, zeros for
        // the steps not yet played out
        Window proj{Matrix(w_len, cols), history.end_step + horizon};
        const int past_rows = w_len - horizon;  // rows taken from pre-attack history
        for (int r = 0; r < past_rows; ++r)
            for (int c = 0; c < cols; ++c)
                proj.x.at(r, c) = history.x.at(r + horizon, c);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < cols; ++c)
                proj.x.at(past_rows + r, c) = realized.at(r, c);

        const std::vector<double> g = input_gradient(model, proj);
        const int emit_row = past_rows + h;
        std::vector<double> targets(cols, 0.0);
        for (int c = 0; c < cols; ++c) {
            if (!active[c] || !spec.mask.at(emit_row, c)) continue;
            targets[c] = -spec.eps * sign0(g[static_cast<size_t>(emit_row) * cols + c]);
            plan.planned_delta.at(emit_row, c) = targets[c];
        }
        plan.step_targets.push_back(targets);

        const std::vector<double> got = env.advance(targets);
        if (static_cast<int>(got.size()) != cols)
            throw ContractError("plan_diachronic: env returned wrong return count");
        for (int c = 0; c < cols; ++c) realized.at(h, c) = got[c];
    }
    return plan;
}

void write_perturbation_json(const Perturbation& pert, double eps,
                             const std::vector<std::string>& tickers, const std::string& path) {
    nlohmann::json j;
    j["eps"] = eps;
    nlohmann::json stocks = nlohmann::json::array();
    for (int c : pert.stocks()) stocks.push_back(tickers[c]);
    j["mask_stocks"] = stocks;
    nlohmann::json delta = nlohmann::json::array();
    for (const auto& [r, c] : pert.support)
        delta.push_back({r, tickers[c], pert.delta.at(r, c)});
    j["delta"] = delta;
    j["y_before"] = pert.y_before;
    j["y_after"] = pert.y_after;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << j.dump(2) << '\n';
}

Perturbation read_perturbation_json(const std::string& path,
                                    const std::vector<std::string>& tickers, int window_len,
                                    double* eps_out) {
    std::ifstream in(path);
    if (!in) throw DependencyError("missing perturbation file " + path);
    nlohmann::json j = nlohmann::json::parse(in);
    Perturbation pert;
    pert.delta = Matrix(window_len, static_cast<int>(tickers.size()));
    for (const auto& entry : j.at("delta")) {
        const int r = entry.at(0).get<int>();
        const std::string tk = entry.at(1).get<std::string>();
        const double v = entry.at(2).get<double>();
        int c = -1;
        for (size_t i = 0; i < tickers.size(); ++i)
            if (tickers[i] == tk) { c = static_cast<int>(i); break; }
        if (c < 0) throw std::runtime_error("perturbation references unknown ticker " + tk);
        pert.delta.at(r, c) = v;
    }
    for (int r = 0; r < pert.delta.rows; ++r)
        for (int c = 0; c < pert.delta.cols; ++c)
            if (pert.delta.at(r, c) != 0.0) pert.support.emplace_back(r, c);
    pert.y_before = j.at("y_before").get<double>();
    pert.y_after = j.at("y_after").get<double>();
    if (eps_out) *eps_out = j.at("eps").get<double>();
    return pert;
}

}  // namespace bta
