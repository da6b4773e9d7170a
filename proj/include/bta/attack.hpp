#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "bta/common.hpp"
#include "bta/forecast.hpp"
#include "bta/market.hpp"

namespace bta {

// ---- domain types ----------------------------------------------------------

enum class AttackMode { Untargeted, Targeted };

// Boolean W x N matrix of attackable (row, stock) coordinates.
struct AttackMask {
    int rows = 0;
    int cols = 0;
    std::vector<char> on;

    AttackMask() = default;
    AttackMask(int r, int c, bool fill = false)
        : rows(r), cols(c), on(static_cast<size_t>(r) * c, fill ? 1 : 0) {}

    bool at(int r, int c) const { return on[static_cast<size_t>(r) * cols + c] != 0; }
    void set(int r, int c, bool v) { on[static_cast<size_t>(r) * cols + c] = v ? 1 : 0; }
    bool any() const;
    std::vector<int> stocks_touched() const;  // columns with at least one set row
};

struct AttackSpec {
    double eps = 0.01;          // per-coordinate cap, log-return units
    AttackMask mask;            // attackable coordinates
    AttackMode mode = AttackMode::Untargeted;
    double tau_target = 0.0;    // Targeted only
    int steps = 1;              // K
    double step_size = 0.01;    // alpha
    int sparsity_k = 0;         // max distinct stocks touched; 0 = no limit

    void validate(int window_len, int n_stocks) const;
};

struct Perturbation {
    Matrix delta;  // W x N, |delta| <= eps, zero off-mask
    std::vector<std::pair<int, int>> support;  // (row, stock) with delta != 0
    double y_before = 0.0;
    double y_after = 0.0;
    double est_cost = 0.0;  // filled by the realization layer

    std::vector<int> stocks() const;
};

// ---- attacks ----------------------------------------------------------------

// One signed-gradient step: delta = -eps * sign(g) masked; sign(0) = 0.
Perturbation fgsm(const ForecastModel& model, const Window& window, const AttackSpec& spec);

// K projected steps delta <- clip_eps(delta - alpha * sign(grad)), restricted
// to the mask. A step is kept only if it does not increase y_hat; Targeted
// mode stops once y_hat(x + delta) <= tau_target.
Perturbation iterative_attack(const ForecastModel& model, const Window& window,
                              const AttackSpec& spec);

// Greedy pick of the k manipulable stocks with the largest
// sum_rows |g| / cost, ties broken by stock order. Returns a full-window mask
// restricted to those stocks.
AttackMask select_sparse_mask(const ForecastModel& model, const Window& window,
                              const std::vector<bool>& manipulable,
                              const std::vector<double>& costs, int k);

struct UniversalResult {
    Perturbation perturbation;
    double success_fraction = 0.0;  // fraction of windows with y_hat <= tau_target
};

// Single delta shared by all windows, optimized by averaging per-window
// signed-gradient steps. Targeted mode only.
UniversalResult universal_perturbation(const ForecastModel& model,
                                       const std::vector<Window>& windows,
                                       const AttackSpec& spec);

// ---- receding-horizon (diachronic) plan --------------------------------------

// The environment the planner steps through: applies next-step targets for
// masked stocks, lets everything else evolve, and reports back realized
// log-returns of all stocks.
class DiachronicEnv {
public:
    virtual ~DiachronicEnv() = default;
    // Applies the per-stock target log-returns (zero entries = untouched) for
    // one step and returns the realized log-returns of all stocks.
    virtual std::vector<double> advance(const std::vector<double>& targets) = 0;
    virtual const std::vector<StockMeta>& metas() const = 0;
    virtual const std::vector<double>& prices() const = 0;
};

enum class DiachronicEventKind { Replan, Failed };

struct DiachronicEvent {
    DiachronicEventKind kind;
    int step = 0;       // 0-based plan step
    std::string ticker; // stock dropped on Replan, empty on Failed
};

struct DiachronicPlan {
    // One entry per executed plan step: per-stock target log-returns
    // (zero = stock untouched that step).
    std::vector<std::vector<double>> step_targets;
    std::vector<DiachronicEvent> events;
    bool failed = false;
    Matrix planned_delta;  // W x N view of all emitted targets in window coordinates
};

struct ManipulabilityCheck {
    double eps_max = 0.0;
    double per_stock_budget = 0.0;
};

// Receding-horizon attack over `horizon` future steps (horizon <= W): at each
// step, re-reads realized returns, recomputes the gradient of the projected
// end-of-horizon window, emits the next-step signed-gradient targets for
// masked stocks, and re-checks manipulability (emitting Replan/Failed events).
DiachronicPlan plan_diachronic(const ForecastModel& model, const Window& history,
                               const AttackSpec& spec, int horizon, DiachronicEnv& env,
                               const ManipulabilityCheck& manip);

// ---- serialization ------------------------------------------------------------

// {eps, mask_stocks, delta: [[row, ticker, value]...], y_before, y_after}
void write_perturbation_json(const Perturbation& pert, double eps,
                             const std::vector<std::string>& tickers, const std::string& path);
Perturbation read_perturbation_json(const std::string& path,
                                    const std::vector<std::string>& tickers, int window_len,
                                    double* eps_out = nullptr);

}  // namespace bta
