#include "bta/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace bta {

const std::vector<std::string> kStageOrder = {"generate", "train",    "attack", "realize",
                                              "feedback", "transfer", "defend", "report"};

namespace {

// one producing stage per artifact, for dependency errors
const std::map<std::string, std::string> kProducers = {
    {"panel.csv", "generate"},
    {"surrogate.json", "train"},
    {"perturbation.json", "attack"},
    {"execution.json", "realize"},
    {"orders.csv", "realize"},
    {"realized_panel.csv", "realize"},
    {"counterfactual_panel.csv", "realize"},
    {"attacker_volumes.csv", "realize"},
    {"feedback_events.csv", "feedback"},
    {"index_path.csv", "feedback"},
    {"agent_volumes.csv", "feedback"},
    {"victims.json", "transfer"},
    {"transfer.csv", "transfer"},
    {"defense_report.csv", "defend"},
    {"report.json", "report"},
};

std::string artifact(const std::string& run_dir, const std::string& name) {
    return (fs::path(run_dir) / name).string();
}

void require_artifact(const std::string& run_dir, const std::string& name) {
    if (fs::exists(artifact(run_dir, name))) return;
    auto it = kProducers.find(name);
    const std::string producer = it == kProducers.end() ? "?" : it->second;
    throw DependencyError("missing artifact " + name + "; run the '" + producer +
                          "' stage first");
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << text;
}

void write_volumes_csv(const std::string& path, long first_step,
                       const std::vector<std::vector<double>>& volumes,
                       const std::vector<std::string>& tickers) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << "step,ticker,net_shares\n";
    char buf[96];
    for (size_t s = 0; s < volumes.size(); ++s) {
        for (size_t i = 0; i < tickers.size(); ++i) {
            if (volumes[s][i] == 0.0) continue;
            std::snprintf(buf, sizeof(buf), "%ld,%s,%.17g\n", first_step + static_cast<long>(s),
                          tickers[i].c_str(), volumes[s][i]);
            out << buf;
        }
    }
}

// projected end-of-horizon window: last W-h realized returns plus h zero rows
Window projected_attack_window(const PricePanel& panel, int window_len, int attack_rows) {
    Window proj{Matrix(window_len, panel.n_stocks()), panel.last_step() + attack_rows};
    const int past_rows = window_len - attack_rows;
    if (past_rows > 0) {
        const Window hist = window_at(panel, panel.last_step(), past_rows);
        for (int r = 0; r < past_rows; ++r)
            for (int c = 0; c < panel.n_stocks(); ++c) proj.x.at(r, c) = hist.x.at(r, c);
    }
    return proj;
}

std::vector<double> last_prices(const PricePanel& panel) {
    std::vector<double> p(panel.n_stocks());
    for (int i = 0; i < panel.n_stocks(); ++i)
        p[i] = panel.prices.at(panel.prices.rows - 1, i);
    return p;
}

AttackSpec attack_spec_from(const ScenarioConfig& cfg, int n_stocks) {
    AttackSpec spec;
    spec.eps = cfg.attack_eps;
    spec.mode = AttackMode::Targeted;
    spec.tau_target = cfg.attack_tau_target;
    spec.steps = cfg.attack_steps;
    spec.step_size = cfg.attack_step_size;
    spec.sparsity_k = cfg.attack_sparsity_k == 0 ? n_stocks : cfg.attack_sparsity_k;
    spec.mask = AttackMask(cfg.surrogate_window, n_stocks, false);
    return spec;
}

// mask = selected sparse stocks x future rows (only future rows are tradeable)
AttackMask build_pipeline_mask(const ScenarioConfig& cfg, const ForecastModel& surrogate,
                               const Window& proj, const std::vector<StockMeta>& metas,
                               const std::vector<double>& prices) {
    const std::vector<bool> manipulable =
        classify_manipulable(metas, prices, cfg.manip_eps_max, cfg.manip_budget);
    std::vector<double> costs(metas.size());
    for (size_t i = 0; i < metas.size(); ++i)
        costs[i] = move_cost(metas[i], prices[i], cfg.attack_eps);
    const int k = cfg.attack_sparsity_k == 0 ? static_cast<int>(metas.size())
                                             : cfg.attack_sparsity_k;
    AttackMask by_stock = select_sparse_mask(surrogate, proj, manipulable, costs, k);
    const int first_future = cfg.surrogate_window - cfg.attack_rows;
    for (int r = 0; r < first_future; ++r)
        for (int c = 0; c < by_stock.cols; ++c) by_stock.set(r, c, false);
    if (!by_stock.any())
        throw std::runtime_error("attack: mask empty after restricting to future rows");
    return by_stock;
}

ForecastModel train_follower_model(const ScenarioConfig& cfg, const PricePanel& panel,
                                   const IndexSpec& index, size_t follower_id) {
    const auto& spec = cfg.followers[follower_id];
    Dataset data = build_dataset(panel, index, cfg.stocks, spec.window_len);
    TrainHyper hyper = cfg.surrogate_hyper;
    hyper.hidden = spec.hidden;
    hyper.seed = derive_seed(cfg.master_seed, "follower:" + std::to_string(follower_id));
    return train(spec.kind, data, hyper);
}

AgentPopulation build_population(const ScenarioConfig& cfg, const PricePanel& train_panel,
                                 const IndexSpec& index) {
    AgentPopulation pop;
    pop.phi = cfg.phi;
    for (size_t a = 0; a < cfg.followers.size(); ++a) {
        Follower f;
        f.model = train_follower_model(cfg, train_panel, index, a);
        f.thresholds = cfg.thresholds;
        f.capital = cfg.followers[a].capital;
        f.sell_fraction = cfg.followers[a].sell_fraction;
        pop.followers.push_back(std::move(f));
    }
    return pop;
}

// extends a panel by per-step log-returns
PricePanel extend_panel(const PricePanel& base, const std::vector<std::vector<double>>& returns) {
    PricePanel out;
    out.tickers = base.tickers;
    out.t0 = base.t0;
    const int n = base.n_stocks();
    out.prices = Matrix(base.n_steps() + static_cast<int>(returns.size()), n);
    std::copy(base.prices.a.begin(), base.prices.a.end(), out.prices.a.begin());
    std::vector<double> p = last_prices(base);
    for (size_t s = 0; s < returns.size(); ++s) {
        for (int i = 0; i < n; ++i) {
            p[i] *= std::exp(returns[s][i]);
            out.prices.at(base.n_steps() + static_cast<int>(s), i) = p[i];
        }
    }
    return out;
}

// ---- diachronic realization ---------------------------------------------------

// Market-backed environment: each advance applies exogenous noise, then trades
// the emitted targets with the same corrective-retrade loop as `realize`.
class MarketDiachronicEnv : public DiachronicEnv {
public:
    MarketDiachronicEnv(MarketState& state, std::vector<StockMeta> metas,
                        const RealizeConfig& cfg, Rng& noise, ExecutionReport& report)
        : state_(state), metas_(std::move(metas)), cfg_(cfg), noise_(noise), report_(report) {}

    std::vector<double> advance(const std::vector<double>& targets) override {
        const int n = static_cast<int>(state_.prices.size());
        const std::vector<double> base = state_.prices;
        for (int i = 0; i < n; ++i) state_.prices[i] *= std::exp(cfg_.exo_sigma * noise_.normal());

        std::vector<double> traded(n, 0.0);
        for (int i = 0; i < n && !aborted_; ++i) {
            if (targets[i] == 0.0) continue;
            const double target_frac = std::expm1(targets[i]);
            OrderOutcome row;
            row.step = step_;
            row.ticker = metas_[i].ticker;
            row.target_frac = target_frac;
            double frac = base[i] * (1.0 + target_frac) / state_.prices[i] - 1.0;
            for (int attempt = 0; attempt <= cfg_.max_retrades; ++attempt) {
                if (!(std::abs(frac) < cfg_.single_trade_cap)) break;
                const double q = invert_impact(metas_[i], state_.prices[i], frac,
                                               cfg_.single_trade_cap);
                const double dp = state_.prices[i] * metas_[i].lambda_impact * (q / metas_[i].adv);
                const double cost = std::abs(q) * state_.prices[i] * metas_[i].half_spread +
                                    std::abs(q) * std::abs(dp) / 2.0;
                if (state_.spend + cost > budget_) {
                    aborted_ = true;
                    break;
                }
                const Fill fill = execute_trade(state_, i, metas_[i], q);
                row.cost += fill.cost;
                report_.total_spend += fill.cost;
                traded[i] += q;
                if (attempt > 0) ++report_.retrades;
                const double achieved = state_.prices[i] / base[i] - 1.0;
                if (std::abs(achieved - target_frac) <= cfg_.tolerance) break;
                frac = base[i] * (1.0 + target_frac) / state_.prices[i] - 1.0;
            }
            row.achieved_frac = state_.prices[i] / base[i] - 1.0;
            if (row.cost > 0.0 || !aborted_) {
                report_.rows.push_back(row);
                report_.residual_max = std::max(
                    report_.residual_max, std::abs(row.achieved_frac - row.target_frac));
            }
        }

        std::vector<double> rets(n);
        for (int i = 0; i < n; ++i) rets[i] = std::log(state_.prices[i] / base[i]);
        realized_returns.push_back(rets);
        traded_shares.push_back(traded);
        state_.step += 1;
        ++step_;
        return rets;
    }

    const std::vector<StockMeta>& metas() const override { return metas_; }
    const std::vector<double>& prices() const override { return state_.prices; }

    void set_budget(double b) { budget_ = b; }
    bool aborted() const { return aborted_; }

    std::vector<std::vector<double>> realized_returns;
    std::vector<std::vector<double>> traded_shares;

private:
    MarketState& state_;
    std::vector<StockMeta> metas_;
    RealizeConfig cfg_;
    Rng& noise_;
    ExecutionReport& report_;
    double budget_ = 0.0;
    bool aborted_ = false;
    int step_ = 0;
};

// ---- stage bodies ---------------------------------------------------------------

void stage_generate(const ScenarioConfig& cfg, const std::string& run_dir,
                    StageResult& result) {
    const PricePanel panel = generate_market(cfg.market, cfg.stocks);
    write_panel_csv(panel, artifact(run_dir, "panel.csv"));
    result.artifacts.push_back("panel.csv");
}

void stage_train(const ScenarioConfig& cfg, const std::string& run_dir, StageResult& result) {
    require_artifact(run_dir, "panel.csv");
    const PricePanel panel = read_panel_csv(artifact(run_dir, "panel.csv"));
    const IndexSpec index = cfg.index_spec_for(panel);
    const Dataset data = build_dataset(panel, index, cfg.stocks, cfg.surrogate_window);
    const ForecastModel surrogate = train(cfg.surrogate_kind, data, cfg.surrogate_hyper);
    write_model_json(surrogate, artifact(run_dir, "surrogate.json"));
    result.artifacts.push_back("surrogate.json");
}

void stage_attack(const ScenarioConfig& cfg, const std::string& run_dir, StageResult& result) {
    require_artifact(run_dir, "panel.csv");
    require_artifact(run_dir, "surrogate.json");
    const PricePanel panel = read_panel_csv(artifact(run_dir, "panel.csv"));
    const ForecastModel surrogate = read_model_json(artifact(run_dir, "surrogate.json"));
    const IndexSpec index = cfg.index_spec_for(panel);

    const Window proj = projected_attack_window(panel, cfg.surrogate_window, cfg.attack_rows);
    AttackSpec spec = attack_spec_from(cfg, panel.n_stocks());
    spec.mask = build_pipeline_mask(cfg, surrogate, proj, cfg.stocks, last_prices(panel));

    Perturbation pert;
    double universal_rho = -1.0;
    if (cfg.attack_method == "fgsm") {
        pert = fgsm(surrogate, proj, spec);
    } else if (cfg.attack_method == "universal") {
        const Dataset data = build_dataset(panel, index, cfg.stocks, cfg.surrogate_window);
        std::vector<Window> windows;
        const int take = std::min<int>(cfg.universal_train_windows, data.size());
        for (int s = data.size() - take; s < data.size(); ++s)
            windows.push_back(window_at(panel, data.end_steps[s], cfg.surrogate_window));
        const UniversalResult uni = universal_perturbation(surrogate, windows, spec);
        pert = uni.perturbation;
        universal_rho = uni.success_fraction;
        // report the projected window's before/after for the run record
        pert.y_before = surrogate.value(proj.x.flat());
        std::vector<double> adv(proj.x.a);
        for (size_t i = 0; i < adv.size(); ++i) adv[i] += pert.delta.a[i];
        pert.y_after = surrogate.value(adv);
    } else {
        // iterative is also the reference plan for the diachronic method
        pert = iterative_attack(surrogate, proj, spec);
    }
    const std::string pert_path = artifact(run_dir, "perturbation.json");
    write_perturbation_json(pert, spec.eps, panel.tickers, pert_path);
    if (universal_rho >= 0.0) {
        // keep the training-set success fraction next to the example it rates
        std::ifstream in(pert_path);
        json j = json::parse(in);
        in.close();
        j["success_fraction"] = universal_rho;
        write_text(pert_path, j.dump(2) + "\n");
    }
    result.artifacts.push_back("perturbation.json");
}

void stage_realize(const ScenarioConfig& cfg, const std::string& run_dir, StageResult& result) {
    require_artifact(run_dir, "panel.csv");
    require_artifact(run_dir, "perturbation.json");
    const PricePanel panel = read_panel_csv(artifact(run_dir, "panel.csv"));
    const Perturbation pert =
        read_perturbation_json(artifact(run_dir, "perturbation.json"), panel.tickers,
                               cfg.surrogate_window);
    const int first_future = cfg.surrogate_window - cfg.attack_rows;

    ExecutionReport report;
    std::vector<std::vector<double>> realized_returns;
    std::vector<std::vector<double>> traded;
    std::vector<std::string> plan_events;

    if (cfg.attack_method == "diachronic") {
        require_artifact(run_dir, "surrogate.json");
        const ForecastModel surrogate = read_model_json(artifact(run_dir, "surrogate.json"));
        MarketState state{last_prices(panel), 0.0, panel.last_step()};
        Rng noise(cfg.stage_seed("realize"));
        MarketDiachronicEnv env(state, cfg.stocks, cfg.realize, noise, report);
        env.set_budget(cfg.realize.budget);

        AttackSpec spec = attack_spec_from(cfg, panel.n_stocks());
        const Window hist = window_at(panel, panel.last_step(), cfg.surrogate_window);
        const Window proj = projected_attack_window(panel, cfg.surrogate_window, cfg.attack_rows);
        spec.mask = build_pipeline_mask(cfg, surrogate, proj, cfg.stocks, last_prices(panel));
        ManipulabilityCheck manip{cfg.manip_eps_max, cfg.manip_budget};
        const DiachronicPlan plan =
            plan_diachronic(surrogate, hist, spec, cfg.attack_rows, env, manip);
        realized_returns = env.realized_returns;
        traded = env.traded_shares;
        for (const auto& e : plan.events) {
            plan_events.push_back(
                (e.kind == DiachronicEventKind::Replan ? "REPLAN step=" : "FAILED step=") +
                std::to_string(e.step) + (e.ticker.empty() ? "" : " ticker=" + e.ticker));
        }
        report.outcome = env.aborted() ? Outcome::Aborted
                         : (plan.failed ? Outcome::Partial
                            : (report.residual_max <= cfg.realize.tolerance ? Outcome::Realized
                                                                            : Outcome::Partial));
    } else {
        const std::vector<StepTarget> targets = targets_from_perturbation(pert, first_future);
        MarketState state{last_prices(panel), 0.0, panel.last_step()};
        const TradePlan plan = compile_plan(targets, state, cfg.stocks, cfg.realize.budget,
                                            cfg.realize.single_trade_cap);
        Rng noise(cfg.stage_seed("realize"));
        report = realize(plan, cfg.attack_rows, state, cfg.stocks, cfg.realize, noise,
                         &realized_returns, &traded);
    }

    // counterfactual: same noise stream, no attacker orders
    {
        MarketState state{last_prices(panel), 0.0, panel.last_step()};
        Rng noise(cfg.stage_seed("realize"));
        std::vector<std::vector<double>> cf_returns;
        realize(TradePlan{}, cfg.attack_rows, state, cfg.stocks, cfg.realize, noise, &cf_returns,
                nullptr);
        write_panel_csv(extend_panel(panel, cf_returns),
                        artifact(run_dir, "counterfactual_panel.csv"));
    }

    write_execution_json(report, artifact(run_dir, "execution.json"),
                         plan_events.empty() ? nullptr : &plan_events);
    write_orders_csv(report, panel.last_step() + 1, artifact(run_dir, "orders.csv"));
    write_panel_csv(extend_panel(panel, realized_returns),
                    artifact(run_dir, "realized_panel.csv"));
    write_volumes_csv(artifact(run_dir, "attacker_volumes.csv"), panel.last_step() + 1, traded,
                      panel.tickers);
    result.artifacts.push_back("execution.json");
    result.artifacts.push_back("orders.csv");
    result.artifacts.push_back("realized_panel.csv");
    result.artifacts.push_back("counterfactual_panel.csv");
    result.artifacts.push_back("attacker_volumes.csv");
}

void stage_feedback(const ScenarioConfig& cfg, const std::string& run_dir, StageResult& result) {
    require_artifact(run_dir, "panel.csv");
    require_artifact(run_dir, "realized_panel.csv");
    const PricePanel train_panel = read_panel_csv(artifact(run_dir, "panel.csv"));
    const PricePanel realized = read_panel_csv(artifact(run_dir, "realized_panel.csv"));
    const IndexSpec index = cfg.index_spec_for(train_panel);

    AgentPopulation pop = build_population(cfg, train_panel, index);
    MarketState state{last_prices(realized), 0.0, realized.last_step()};
    init_holdings(pop, cfg.stocks, index, realized.tickers, state.prices);

    int max_w = 1;
    for (const auto& f : pop.followers) max_w = std::max(max_w, f.model.window_len);
    const Window recent = window_at(realized, realized.last_step(), max_w);

    Rng noise(cfg.stage_seed("feedback"));
    const FeedbackResult feedback =
        run_feedback(pop, state, cfg.stocks, index, realized.tickers, recent.x,
                     cfg.feedback_horizon, cfg.realize.exo_sigma, noise);

    write_events_csv(feedback, artifact(run_dir, "feedback_events.csv"));
    {
        std::ofstream out(artifact(run_dir, "index_path.csv"), std::ios::binary);
        out << "step,index_value\n";
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%ld,%.17g\n", realized.last_step(),
                      feedback.index_path[0]);
        out << buf;
        for (size_t i = 0; i < feedback.steps.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%ld,%.17g\n", feedback.steps[i],
                          feedback.index_path[i + 1]);
            out << buf;
        }
    }
    write_volumes_csv(artifact(run_dir, "agent_volumes.csv"), realized.last_step() + 1,
                      feedback.net_volumes, realized.tickers);
    result.artifacts.push_back("feedback_events.csv");
    result.artifacts.push_back("index_path.csv");
    result.artifacts.push_back("agent_volumes.csv");
}

void stage_transfer(const ScenarioConfig& cfg, const std::string& run_dir, StageResult& result) {
    require_artifact(run_dir, "panel.csv");
    require_artifact(run_dir, "realized_panel.csv");
    require_artifact(run_dir, "counterfactual_panel.csv");
    const PricePanel train_panel = read_panel_csv(artifact(run_dir, "panel.csv"));
    const PricePanel realized = read_panel_csv(artifact(run_dir, "realized_panel.csv"));
    const PricePanel counterfactual =
        read_panel_csv(artifact(run_dir, "counterfactual_panel.csv"));
    const IndexSpec index = cfg.index_spec_for(train_panel);

    const VictimEnsemble ensemble =
        train_ensemble(train_panel, index, cfg.stocks, cfg.victim_grid, cfg.surrogate_hyper);
    {
        json victims = json::array();
        for (size_t i = 0; i < ensemble.victims.size(); ++i) {
            const ForecastModel& m = ensemble.victims[i];
            victims.push_back({{"kind", to_string(m.kind)},
                               {"W", m.window_len},
                               {"H", m.hidden},
                               {"train_seed", m.train_seed},
                               {"train_mse", m.train_mse}});
        }
        write_text(artifact(run_dir, "victims.json"), victims.dump(2) + "\n");
    }

    const Window adv = window_at(realized, realized.last_step(), cfg.surrogate_window);
    const Window clean =
        window_at(counterfactual, counterfactual.last_step(), cfg.surrogate_window);
    TransferReport report = evaluate_transfer_realized(ensemble, clean, adv, cfg.thresholds);
    write_transfer_csv(report, artifact(run_dir, "transfer.csv"));
    result.artifacts.push_back("victims.json");
    result.artifacts.push_back("transfer.csv");
}

double eps_to_flip(const ForecastModel& model, const Window& window, const AttackSpec& base_spec,
                   const std::vector<double>& eps_grid, const Thresholds& thr, int smooth_m) {
    for (double eps : eps_grid) {
        AttackSpec spec = base_spec;
        spec.eps = eps;
        spec.step_size = eps / 5.0;
        const Perturbation pert = iterative_attack(model, window, spec);
        Window adv{window.x, window.end_step};
        for (size_t i = 0; i < adv.x.a.size(); ++i) adv.x.a[i] += pert.delta.a[i];
        const Signal sig = smooth_m > 1 ? smooth_predict(model, adv, smooth_m, thr)
                                        : predict(model, adv, thr);
        if (sig.action == Action::Sell) return eps;
    }
    return 0.0;  // not reached on the grid
}

void stage_defend(const ScenarioConfig& cfg, const std::string& run_dir, StageResult& result) {
    require_artifact(run_dir, "panel.csv");
    require_artifact(run_dir, "surrogate.json");
    require_artifact(run_dir, "attacker_volumes.csv");
    require_artifact(run_dir, "agent_volumes.csv");
    const PricePanel panel = read_panel_csv(artifact(run_dir, "panel.csv"));
    const ForecastModel surrogate = read_model_json(artifact(run_dir, "surrogate.json"));
    const IndexSpec index = cfg.index_spec_for(panel);
    const Dataset data = build_dataset(panel, index, cfg.stocks, cfg.surrogate_window);
    const Window proj = projected_attack_window(panel, cfg.surrogate_window, cfg.attack_rows);

    AttackSpec spec = attack_spec_from(cfg, panel.n_stocks());
    spec.mask = build_pipeline_mask(cfg, surrogate, proj, cfg.stocks, last_prices(panel));

    std::vector<DefenseReportRow> rows;

    // baseline surrogate
    {
        DefenseConfig plain = cfg.defense;
        plain.adv_ratio = 0.0;
        const AdversarialTrainResult base =
            adversarial_train(cfg.surrogate_kind, data, plain, cfg.surrogate_hyper);
        DefenseReportRow row;
        row.defense = "baseline";
        row.param = 0.0;
        row.clean_mse = base.clean_mse;
        row.adv_mse = base.adv_mse;
        row.attack_eps_to_flip =
            eps_to_flip(base.model, proj, spec, cfg.defense_eps_grid, cfg.thresholds, 1);
        rows.push_back(row);
    }
    // adversarial training
    {
        const AdversarialTrainResult hardened =
            adversarial_train(cfg.surrogate_kind, data, cfg.defense, cfg.surrogate_hyper);
        DefenseReportRow row;
        row.defense = "adv_train";
        row.param = cfg.defense.adv_ratio;
        row.clean_mse = hardened.clean_mse;
        row.adv_mse = hardened.adv_mse;
        row.attack_eps_to_flip =
            eps_to_flip(hardened.model, proj, spec, cfg.defense_eps_grid, cfg.thresholds, 1);
        rows.push_back(row);
    }
    // smoothing at prediction time (attacker still crafts on the raw model)
    {
        DefenseReportRow row;
        row.defense = "smooth";
        row.param = cfg.defense.smooth_width;
        double mse = 0.0;
        for (int s = 0; s < data.size(); ++s) {
            Window w{Matrix(cfg.surrogate_window, data.n_stocks), data.end_steps[s]};
            std::copy(data.features.a.begin() + static_cast<size_t>(s) * data.features.cols,
                      data.features.a.begin() + static_cast<size_t>(s + 1) * data.features.cols,
                      w.x.a.begin());
            const Signal sig =
                smooth_predict(surrogate, w, cfg.defense.smooth_width, cfg.thresholds);
            const double e = sig.y_hat - data.labels[s];
            mse += e * e;
        }
        row.clean_mse = mse / data.size();
        row.attack_eps_to_flip = eps_to_flip(surrogate, proj, spec, cfg.defense_eps_grid,
                                             cfg.thresholds, cfg.defense.smooth_width);
        rows.push_back(row);
    }
    // coordinated-manipulation detection
    {
        long first_attacker = 0;
        std::vector<std::vector<double>> attack_vol =
            read_volumes_csv(artifact(run_dir, "attacker_volumes.csv"), panel.tickers,
                             &first_attacker);
        std::vector<std::vector<double>> agent_vol =
            read_volumes_csv(artifact(run_dir, "agent_volumes.csv"), panel.tickers, nullptr);
        std::vector<std::vector<double>> log = attack_vol;
        log.insert(log.end(), agent_vol.begin(), agent_vol.end());
        const DetectionResult on_attack = detect_coordination(log, cfg.stocks, cfg.defense);

        // null scenario: background order flow only, no attack
        Rng bg(cfg.stage_seed("detect_null"));
        std::vector<std::vector<double>> null_log(cfg.detect_null_steps,
                                                  std::vector<double>(panel.n_stocks()));
        for (auto& step_vol : null_log)
            for (int i = 0; i < panel.n_stocks(); ++i)
                step_vol[i] = cfg.detect_null_bg_vol_frac * cfg.stocks[i].adv * bg.normal();
        const DetectionResult on_null = detect_coordination(null_log, cfg.stocks, cfg.defense);

        DefenseReportRow row;
        row.defense = "detect";
        row.param = cfg.defense.detect_z;
        row.alarm_rate = log.empty() ? 0.0
                                     : static_cast<double>(on_attack.alarm_count) /
                                           static_cast<double>(log.size());
        row.false_positive_rate =
            static_cast<double>(on_null.alarm_count) / static_cast<double>(cfg.detect_null_steps);
        rows.push_back(row);
    }

    write_defense_csv(rows, artifact(run_dir, "defense_report.csv"));
    result.artifacts.push_back("defense_report.csv");
}

void stage_report(const ScenarioConfig& cfg, const std::string& run_dir, StageResult& result) {
    write_text(artifact(run_dir, "report.json"), consolidated_report(cfg, run_dir));
    result.artifacts.push_back("report.json");
}

}  // namespace

std::vector<std::pair<long, double>> read_index_path_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DependencyError("missing artifact index_path.csv; run the 'feedback' stage first");
    std::string line;
    std::getline(in, line);
    std::vector<std::pair<long, double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const size_t comma = line.find(',');
        rows.emplace_back(std::stol(line.substr(0, comma)), std::stod(line.substr(comma + 1)));
    }
    return rows;
}

std::vector<std::vector<double>> read_volumes_csv(const std::string& path,
                                                  const std::vector<std::string>& tickers,
                                                  long* first_step) {
    std::ifstream in(path);
    if (!in) throw DependencyError("missing volumes file " + path);
    std::string line;
    std::getline(in, line);
    std::map<long, std::vector<double>> by_step;
    long lo = 0, hi = -1;
    bool any = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string step_s, ticker, shares_s;
        std::getline(ss, step_s, ',');
        std::getline(ss, ticker, ',');
        std::getline(ss, shares_s, ',');
        const long step = std::stol(step_s);
        if (!any) { lo = hi = step; any = true; }
        lo = std::min(lo, step);
        hi = std::max(hi, step);
        auto& row = by_step[step];
        if (row.empty()) row.assign(tickers.size(), 0.0);
        for (size_t i = 0; i < tickers.size(); ++i)
            if (tickers[i] == ticker) { row[i] += std::stod(shares_s); break; }
    }
    std::vector<std::vector<double>> out;
    if (!any) {
        if (first_step) *first_step = 0;
        return out;
    }
    for (long s = lo; s <= hi; ++s) {
        auto it = by_step.find(s);
        out.push_back(it == by_step.end() ? std::vector<double>(tickers.size(), 0.0)
                                          : it->second);
    }
    if (first_step) *first_step = lo;
    return out;
}

SuccessFlags evaluate_success(const ScenarioConfig& cfg, const std::string& run_dir) {
    require_artifact(run_dir, "transfer.csv");
    require_artifact(run_dir, "index_path.csv");

    SuccessFlags flags;
    TransferReport transfer = read_transfer_csv(artifact(run_dir, "transfer.csv"));
    recompute_rates(transfer, cfg.thresholds);
    flags.transfer_rate = transfer.transfer_rate;
    flags.clean_false_sell_rate = transfer.clean_false_sell_rate;
    flags.success_transfer = transfer.transfer_rate >= cfg.success_min_transfer;

    const auto path = read_index_path_csv(artifact(run_dir, "index_path.csv"));
    std::vector<double> values;
    for (size_t i = 0; i < path.size() && i <= static_cast<size_t>(cfg.success_horizon_steps); ++i)
        values.push_back(path[i].second);
    flags.max_drawdown = max_drawdown(values);
    flags.success_drawdown = flags.max_drawdown >= cfg.success_drop_pct;
    return flags;
}

std::string consolidated_report(const ScenarioConfig& cfg, const std::string& run_dir) {
    const SuccessFlags flags = evaluate_success(cfg, run_dir);
    json j;
    j["schema_version"] = cfg.schema_version;
    j["config_digest"] = cfg.source_digest;
    j["master_seed"] = cfg.master_seed;
    json stages = json::object();
    for (const auto& [name, producer] : kProducers) {
        if (fs::exists(artifact(run_dir, name))) stages[producer].push_back(name);
    }
    j["artifacts"] = stages;
    j["success_I"] = {{"transfer_rate", flags.transfer_rate},
                      {"clean_false_sell_rate", flags.clean_false_sell_rate},
                      {"threshold", cfg.success_min_transfer},
                      {"pass", flags.success_transfer}};
    j["success_II"] = {{"max_drawdown", flags.max_drawdown},
                       {"drop_pct", cfg.success_drop_pct},
                       {"horizon_steps", cfg.success_horizon_steps},
                       {"pass", flags.success_drawdown}};
    return j.dump(2) + "\n";
}

std::string default_run_dir(const ScenarioConfig& cfg) {
    const std::time_t now = std::time(nullptr);
    std::tm tm_utc{};
    gmtime_r(&now, &tm_utc);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", &tm_utc);
    const std::string digest =
        cfg.source_digest.empty() ? "adhoc" : cfg.source_digest.substr(0, 12);
    return (fs::path("runs") / (digest + "-" + stamp)).string();
}

StageResult run_stage(const ScenarioConfig& cfg, const std::string& stage,
                      const std::string& run_dir) {
    if (std::find(kStageOrder.begin(), kStageOrder.end(), stage) == kStageOrder.end())
        throw ValidationError("unknown stage '" + stage + "'");
    fs::create_directories(run_dir);

    // persist the resolved config once per run for `report --run`
    const std::string config_copy = artifact(run_dir, "config.json");
    if (!fs::exists(config_copy)) write_text(config_copy, dump_scenario(cfg));

    StageResult result;
    result.stage = stage;
    const auto start = std::chrono::steady_clock::now();
    if (stage == "generate") stage_generate(cfg, run_dir, result);
    else if (stage == "train") stage_train(cfg, run_dir, result);
    else if (stage == "attack") stage_attack(cfg, run_dir, result);
    else if (stage == "realize") stage_realize(cfg, run_dir, result);
    else if (stage == "feedback") stage_feedback(cfg, run_dir, result);
    else if (stage == "transfer") stage_transfer(cfg, run_dir, result);
    else if (stage == "defend") stage_defend(cfg, run_dir, result);
    else stage_report(cfg, run_dir, result);
    result.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    // wall-clock lives in a sidecar so every stage artifact stays byte-deterministic
    {
        const std::string timing_path = artifact(run_dir, "timings.json");
        json timings = json::object();
        if (fs::exists(timing_path)) {
            std::ifstream in(timing_path);
            timings = json::parse(in, nullptr, false);
            if (timings.is_discarded()) timings = json::object();
        }
        timings[stage] = result.seconds;
        write_text(timing_path, timings.dump(2) + "\n");
    }
    return result;
}

std::vector<StageResult> run_all(const ScenarioConfig& cfg, const std::string& run_dir) {
    std::vector<StageResult> results;
    for (const auto& stage : kStageOrder) results.push_back(run_stage(cfg, stage, run_dir));
    return results;
}

}  // namespace bta
