#include "bta/scenario.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace bta {

using nlohmann::json;

namespace {

const json& need(const json& j, const std::string& key, const std::string& path) {
    auto it = j.find(key);
    if (it == j.end()) throw ValidationError("config: missing key " + path + "." + key);
    return *it;
}

double number_at(const json& j, const std::string& key, const std::string& path) {
    const json& v = need(j, key, path);
    if (!v.is_number()) throw ValidationError("config: " + path + "." + key + " must be a number");
    return v.get<double>();
}

double number_or(const json& j, const std::string& key, double fallback) {
    auto it = j.find(key);
    return it == j.end() ? fallback : it->get<double>();
}

ModelKind kind_at(const json& j, const std::string& key, ModelKind fallback) {
    auto it = j.find(key);
    if (it == j.end()) return fallback;
    return model_kind_from_string(it->get<std::string>());
}

int int_or(const json& j, const std::string& key, int fallback) {
    auto it = j.find(key);
    return it == j.end() ? fallback : it->get<int>();
}

std::vector<double> broadcast(const json& j, const std::string& key, int n,
                              const std::string& path) {
    const json& v = need(j, key, path);
    std::vector<double> out;
    if (v.is_number()) {
        out.assign(n, v.get<double>());
    } else if (v.is_array()) {
        out = v.get<std::vector<double>>();
        if (static_cast<int>(out.size()) != n)
            throw ValidationError("config: " + path + "." + key + " must have one entry per stock");
    } else {
        throw ValidationError("config: " + path + "." + key + " must be a number or array");
    }
    return out;
}

Matrix cov_factor_from(const json& market, int n, const std::string& path) {
    if (market.contains("cov_factor")) {
        const json& rows = market["cov_factor"];
        if (!rows.is_array() || static_cast<int>(rows.size()) != n)
            throw ValidationError("config: " + path + ".cov_factor must be an N x N array");
        Matrix L(n, n);
        for (int i = 0; i < n; ++i) {
            const auto row = rows[i].get<std::vector<double>>();
            if (static_cast<int>(row.size()) != n)
                throw ValidationError("config: " + path + ".cov_factor rows must have N entries");
            for (int j = 0; j < n; ++j) L.at(i, j) = row[j];
        }
        return L;
    }
    // equicorrelated builder: Sigma_ij = vol_i vol_j (i == j ? 1 : corr)
    const std::vector<double> vol = broadcast(market, "vol", n, path);
    const double corr = number_or(market, "corr", 0.0);
    if (!(corr > -1.0 / std::max(1, n - 1) && corr < 1.0))
        throw ValidationError("config: " + path + ".corr out of the positive-definite range");
    Matrix sigma(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            sigma.at(i, j) = vol[i] * vol[j] * (i == j ? 1.0 : corr);
    try {
        return cholesky(sigma);
    } catch (const ContractError&) {
        throw ValidationError("config: " + path + " vol/corr matrix is not positive definite");
    }
}

}  // namespace

void ScenarioConfig::validate() const {
    if (schema_version != 1) throw ValidationError("config: unsupported schema_version");
    market.validate();
    if (stocks.size() != static_cast<size_t>(market.n_stocks))
        throw ValidationError("config: stocks length must equal market.n_stocks");
    for (const auto& s : stocks) s.validate();
    if (index_members.empty()) throw ValidationError("config: index.members must be non-empty");
    for (const auto& m : index_members) {
        bool found = false;
        for (const auto& s : stocks)
            if (s.ticker == m) { found = true; break; }
        if (!found) throw ValidationError("config: index member " + m + " is not a stock");
    }
    if (!(index_base_value > 0.0)) throw ValidationError("config: index.base_value must be > 0");
    if (surrogate_window < 1) throw ValidationError("config: surrogate.window must be >= 1");
    if (market.n_steps <= surrogate_window + 1)
        throw ValidationError("config: market.n_steps must exceed surrogate.window + 1");
    thresholds.validate();
    if (attack_method != "fgsm" && attack_method != "iterative" &&
        attack_method != "universal" && attack_method != "diachronic")
        throw ValidationError("config: attack.method must be fgsm|iterative|universal|diachronic");
    if (!(attack_eps > 0.0)) throw ValidationError("config: attack.eps must be > 0");
    if (attack_rows < 1 || attack_rows > surrogate_window)
        throw ValidationError("config: attack.attack_rows must be in [1, surrogate.window]");
    if (attack_sparsity_k < 0 || attack_sparsity_k > market.n_stocks)
        throw ValidationError("config: attack.sparsity_k must be in [0, N]");
    if (!(manip_eps_max > 0.0)) throw ValidationError("config: attack.manip_eps_max must be > 0");
    if (realize.budget < 0.0) throw ValidationError("config: realization.budget must be >= 0");
    if (!(realize.tolerance > 0.0))
        throw ValidationError("config: realization.tolerance must be > 0");
    if (realize.max_retrades < 0)
        throw ValidationError("config: realization.max_retrades must be >= 0");
    if (!(phi >= 0.0 && phi <= 1.0)) throw ValidationError("config: agents.phi must be in [0, 1]");
    if (feedback_horizon < 1) throw ValidationError("config: agents.feedback_horizon must be >= 1");
    for (const auto& f : followers) {
        if (f.window_len < 1 || f.window_len > surrogate_window)
            throw ValidationError("config: follower window must be in [1, surrogate.window]");
        if (f.capital < 0.0) throw ValidationError("config: follower capital must be >= 0");
        if (!(f.sell_fraction >= 0.0 && f.sell_fraction <= 1.0))
            throw ValidationError("config: follower sell_fraction must be in [0, 1]");
    }
    for (const auto& v : victim_grid) {
        if (v.window_len < 1 || v.window_len > surrogate_window)
            throw ValidationError("config: victim window must be in [1, surrogate.window]");
        if (v.kind == ModelKind::Mlp && v.hidden < 1)
            throw ValidationError("config: mlp victim needs hidden >= 1");
    }
    defense.validate(surrogate_window);
    if (detect_null_steps < 1) throw ValidationError("config: defense.null_steps must be >= 1");
    if (!(success_min_transfer >= 0.0 && success_min_transfer <= 1.0))
        throw ValidationError("config: success.min_transfer_fraction must be in [0, 1]");
    if (success_drop_pct < 0.0) throw ValidationError("config: success.drop_pct must be >= 0");
    if (success_horizon_steps < 1 || success_horizon_steps > feedback_horizon)
        throw ValidationError(
            "config: success.horizon_steps must be in [1, agents.feedback_horizon]");
}

IndexSpec ScenarioConfig::index_spec_for(const PricePanel& panel) const {
    IndexSpec spec;
    spec.members = index_members;
    spec.divisor = index_divisor_for_base(panel, index_members, stocks, index_base_value);
    return spec;
}

ScenarioConfig parse_scenario(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("config: invalid JSON: ") + e.what());
    }

    ScenarioConfig cfg;
    cfg.schema_version = int_or(j, "schema_version", 1);
    cfg.master_seed = need(j, "master_seed", "$").get<uint64_t>();

    const json& market = need(j, "market", "$");
    const json& stocks = need(market, "stocks", "$.market");
    if (!stocks.is_array() || stocks.empty())
        throw ValidationError("config: $.market.stocks must be a non-empty array");
    const int n = static_cast<int>(stocks.size());
    cfg.market.n_stocks = n;
    cfg.market.n_steps = static_cast<int>(number_at(market, "n_steps", "$.market"));
    for (int i = 0; i < n; ++i) {
        const json& s = stocks[i];
        const std::string path = "$.market.stocks[" + std::to_string(i) + "]";
        StockMeta m;
        m.ticker = need(s, "ticker", path).get<std::string>();
        m.shares_outstanding = number_at(s, "shares_outstanding", path);
        m.adv = number_at(s, "adv", path);
        m.lambda_impact = number_at(s, "lambda_impact", path);
        m.half_spread = number_at(s, "half_spread", path);
        cfg.stocks.push_back(std::move(m));
    }
    if (market.contains("init_prices"))
        cfg.market.init_prices = broadcast(market, "init_prices", n, "$.market");
    else
        cfg.market.init_prices.assign(n, number_or(market, "init_price", 100.0));
    cfg.market.drift = broadcast(market, "drift", n, "$.market");
    cfg.market.cov_factor = cov_factor_from(market, n, "$.market");
    cfg.market.seed = derive_seed(cfg.master_seed, "generate");

    const json& index = need(j, "index", "$");
    cfg.index_members = need(index, "members", "$.index").get<std::vector<std::string>>();
    cfg.index_base_value = number_or(index, "base_value", 1000.0);

    const json& sur = need(j, "surrogate", "$");
    cfg.surrogate_kind = kind_at(sur, "kind", ModelKind::Linear);
    cfg.surrogate_window = int_or(sur, "window", 8);
    cfg.surrogate_hyper.ridge = number_or(sur, "ridge", 1e-4);
    cfg.surrogate_hyper.hidden = int_or(sur, "hidden", 8);
    cfg.surrogate_hyper.epochs = int_or(sur, "epochs", 200);
    cfg.surrogate_hyper.batch_size = int_or(sur, "batch", 32);
    cfg.surrogate_hyper.learning_rate = number_or(sur, "lr", 0.05);
    cfg.surrogate_hyper.momentum = number_or(sur, "momentum", 0.9);
    cfg.surrogate_hyper.seed = derive_seed(cfg.master_seed, "train");

    if (j.contains("thresholds")) {
        cfg.thresholds.tau_sell = number_at(j["thresholds"], "tau_sell", "$.thresholds");
        cfg.thresholds.tau_buy = number_at(j["thresholds"], "tau_buy", "$.thresholds");
    }

    const json& attack = need(j, "attack", "$");
    cfg.attack_method = attack.value("method", std::string("iterative"));
    cfg.attack_eps = number_at(attack, "eps", "$.attack");
    cfg.attack_tau_target = number_or(attack, "tau_target", cfg.thresholds.tau_sell);
    cfg.attack_steps = int_or(attack, "steps", 25);
    cfg.attack_step_size = number_or(attack, "step_size", cfg.attack_eps / 10.0);
    cfg.attack_sparsity_k = int_or(attack, "sparsity_k", 0);
    cfg.attack_rows = int_or(attack, "attack_rows", 1);
    cfg.manip_eps_max = number_or(attack, "manip_eps_max", cfg.attack_eps);
    cfg.manip_budget = number_or(attack, "manip_budget", 1e6);
    cfg.universal_train_windows = int_or(attack, "universal_train_windows", 50);

    const json& real = need(j, "realization", "$");
    cfg.realize.budget = number_at(real, "budget", "$.realization");
    cfg.realize.tolerance = number_or(real, "tolerance", 1e-4);
    cfg.realize.max_retrades = int_or(real, "max_retrades", 2);
    cfg.realize.exo_sigma = number_or(real, "exo_sigma", 0.0);
    cfg.realize.single_trade_cap = number_or(real, "single_trade_cap", 0.05);

    const json& agents = need(j, "agents", "$");
    cfg.phi = number_at(agents, "phi", "$.agents");
    cfg.feedback_horizon = int_or(agents, "feedback_horizon", 20);
    for (const auto& f : need(agents, "followers", "$.agents")) {
        ScenarioConfig::FollowerSpec spec;
        spec.kind = kind_at(f, "kind", ModelKind::Mlp);
        spec.window_len = int_or(f, "window", 8);
        spec.hidden = int_or(f, "hidden", 8);
        spec.capital = number_at(f, "capital", "$.agents.followers[]");
        spec.sell_fraction = number_or(f, "sell_fraction", 0.5);
        cfg.followers.push_back(spec);
    }

    const json& victims = need(j, "victims", "$");
    int vid = 0;
    for (const auto& v : victims) {
        VictimSpec spec;
        spec.kind = kind_at(v, "kind", ModelKind::Linear);
        spec.window_len = int_or(v, "window", cfg.surrogate_window);
        spec.hidden = int_or(v, "hidden", 8);
        spec.ridge = number_or(v, "ridge", cfg.surrogate_hyper.ridge);
        spec.seed = derive_seed(cfg.master_seed, "victim:" + std::to_string(vid));
        cfg.victim_grid.push_back(spec);
        ++vid;
    }

    if (j.contains("defense")) {
        const json& d = j["defense"];
        cfg.defense.adv_ratio = number_or(d, "adv_ratio", 0.5);
        cfg.defense.adv_eps = number_or(d, "adv_eps", cfg.attack_eps);
        cfg.defense.smooth_width = int_or(d, "smooth_width", 3);
        cfg.defense.detect_z = number_or(d, "detect_z", 3.0);
        cfg.defense.detect_count = int_or(d, "detect_count", 1);
        cfg.defense.kappa = number_or(d, "kappa", 0.01);
        if (d.contains("eps_grid"))
            cfg.defense_eps_grid = d["eps_grid"].get<std::vector<double>>();
        cfg.detect_null_steps = int_or(d, "null_steps", 1000);
        cfg.detect_null_bg_vol_frac = number_or(d, "null_bg_vol_frac", cfg.defense.kappa);
    }
    if (cfg.defense_eps_grid.empty()) {
        for (int i = 1; i <= 25; ++i) cfg.defense_eps_grid.push_back(0.002 * i);
    }

    const json& success = need(j, "success", "$");
    cfg.success_min_transfer = number_at(success, "min_transfer_fraction", "$.success");
    cfg.success_drop_pct = number_at(success, "drop_pct", "$.success");
    cfg.success_horizon_steps = int_or(success, "horizon_steps", cfg.feedback_horizon);

    cfg.source_digest = "";
    cfg.validate();
    return cfg;
}

ScenarioConfig load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("config: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    ScenarioConfig cfg = parse_scenario(ss.str());
    char digest[32];
    std::snprintf(digest, sizeof(digest), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(ss.str())));
    cfg.source_digest = digest;
    return cfg;
}

std::string dump_scenario(const ScenarioConfig& cfg) {
    json j;
    j["schema_version"] = cfg.schema_version;
    j["master_seed"] = cfg.master_seed;

    json market;
    market["n_steps"] = cfg.market.n_steps;
    market["init_prices"] = cfg.market.init_prices;
    market["drift"] = cfg.market.drift;
    json cov = json::array();
    for (int i = 0; i < cfg.market.n_stocks; ++i) {
        json row = json::array();
        for (int k = 0; k < cfg.market.n_stocks; ++k) row.push_back(cfg.market.cov_factor.at(i, k));
        cov.push_back(row);
    }
    market["cov_factor"] = cov;
    json stocks = json::array();
    for (const auto& s : cfg.stocks) {
        stocks.push_back({{"ticker", s.ticker},
                          {"shares_outstanding", s.shares_outstanding},
                          {"adv", s.adv},
                          {"lambda_impact", s.lambda_impact},
                          {"half_spread", s.half_spread}});
    }
    market["stocks"] = stocks;
    j["market"] = market;

    j["index"] = {{"members", cfg.index_members}, {"base_value", cfg.index_base_value}};
    j["surrogate"] = {{"kind", to_string(cfg.surrogate_kind)},
                      {"window", cfg.surrogate_window},
                      {"ridge", cfg.surrogate_hyper.ridge},
                      {"hidden", cfg.surrogate_hyper.hidden},
                      {"epochs", cfg.surrogate_hyper.epochs},
                      {"batch", cfg.surrogate_hyper.batch_size},
                      {"lr", cfg.surrogate_hyper.learning_rate},
                      {"momentum", cfg.surrogate_hyper.momentum}};
    j["thresholds"] = {{"tau_sell", cfg.thresholds.tau_sell}, {"tau_buy", cfg.thresholds.tau_buy}};
    j["attack"] = {{"method", cfg.attack_method},
                   {"eps", cfg.attack_eps},
                   {"tau_target", cfg.attack_tau_target},
                   {"steps", cfg.attack_steps},
                   {"step_size", cfg.attack_step_size},
                   {"sparsity_k", cfg.attack_sparsity_k},
                   {"attack_rows", cfg.attack_rows},
                   {"manip_eps_max", cfg.manip_eps_max},
                   {"manip_budget", cfg.manip_budget},
                   {"universal_train_windows", cfg.universal_train_windows}};
    j["realization"] = {{"budget", cfg.realize.budget},
                        {"tolerance", cfg.realize.tolerance},
                        {"max_retrades", cfg.realize.max_retrades},
                        {"exo_sigma", cfg.realize.exo_sigma},
                        {"single_trade_cap", cfg.realize.single_trade_cap}};
    json followers = json::array();
    for (const auto& f : cfg.followers) {
        followers.push_back({{"kind", to_string(f.kind)},
                             {"window", f.window_len},
                             {"hidden", f.hidden},
                             {"capital", f.capital},
                             {"sell_fraction", f.sell_fraction}});
    }
    j["agents"] = {{"phi", cfg.phi},
                   {"feedback_horizon", cfg.feedback_horizon},
                   {"followers", followers}};
    json victims = json::array();
    for (const auto& v : cfg.victim_grid) {
        victims.push_back({{"kind", to_string(v.kind)},
                           {"window", v.window_len},
                           {"hidden", v.hidden},
                           {"ridge", v.ridge}});
    }
    j["victims"] = victims;
    j["defense"] = {{"adv_ratio", cfg.defense.adv_ratio},
                    {"adv_eps", cfg.defense.adv_eps},
                    {"smooth_width", cfg.defense.smooth_width},
                    {"detect_z", cfg.defense.detect_z},
                    {"detect_count", cfg.defense.detect_count},
                    {"kappa", cfg.defense.kappa},
                    {"eps_grid", cfg.defense_eps_grid},
                    {"null_steps", cfg.detect_null_steps},
                    {"null_bg_vol_frac", cfg.detect_null_bg_vol_frac}};
    j["success"] = {{"min_transfer_fraction", cfg.success_min_transfer},
                    {"drop_pct", cfg.success_drop_pct},
                    {"horizon_steps", cfg.success_horizon_steps}};
    return j.dump(2) + "\n";
}

ScenarioConfig scale_scenario(const ScenarioConfig& config, double factor) {
    if (!(factor > 0.0 && factor <= 1.0))
        throw ValidationError("scale_scenario: factor must be in (0, 1]");
    const int n = config.market.n_stocks;
    const int keep = static_cast<int>(std::ceil(factor * n));
    if (keep < 1) throw ValidationError("scale_scenario: scaled market has no stocks");

    // drop the lowest-cap stocks first; retained stocks keep their order
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        const double cap_a = config.stocks[a].shares_outstanding * config.market.init_prices[a];
        const double cap_b = config.stocks[b].shares_outstanding * config.market.init_prices[b];
        return cap_a > cap_b;
    });
    std::vector<char> retain(n, 0);
    for (int i = 0; i < keep; ++i) retain[order[i]] = 1;

    ScenarioConfig out = config;
    out.stocks.clear();
    out.market.init_prices.clear();
    out.market.drift.clear();
    out.index_members.clear();
    std::vector<int> kept;
    for (int i = 0; i < n; ++i) {
        if (!retain[i]) continue;
        kept.push_back(i);
        out.stocks.push_back(config.stocks[i]);
        out.market.init_prices.push_back(config.market.init_prices[i]);
        out.market.drift.push_back(config.market.drift[i]);
    }
    out.market.n_stocks = keep;
    for (const auto& m : config.index_members) {
        for (int i : kept)
            if (config.stocks[i].ticker == m) { out.index_members.push_back(m); break; }
    }
    if (out.index_members.empty())
        throw ValidationError("scale_scenario: no index members left after scaling");

    // re-slice the covariance and re-factor (unchanged when nothing was dropped)
    if (keep < n) {
        Matrix sigma(n, n);
        for (int i = 0; i < n; ++i)
            for (int k = 0; k < n; ++k) {
                double s = 0.0;
                for (int m = 0; m <= std::min(i, k); ++m)
                    s += config.market.cov_factor.at(i, m) * config.market.cov_factor.at(k, m);
                sigma.at(i, k) = s;
            }
        Matrix sliced(keep, keep);
        for (int i = 0; i < keep; ++i)
            for (int k = 0; k < keep; ++k) sliced.at(i, k) = sigma.at(kept[i], kept[k]);
        out.market.cov_factor = cholesky(sliced);
    }

    out.realize.budget = config.realize.budget * factor;
    out.manip_budget = config.manip_budget * factor;
    if (out.attack_sparsity_k > keep) out.attack_sparsity_k = keep;

    char label[48];
    std::snprintf(label, sizeof(label), "scale:%.6g", factor);
    out.master_seed = derive_seed(config.master_seed, label);
    out.market.seed = derive_seed(out.master_seed, "generate");
    out.surrogate_hyper.seed = derive_seed(out.master_seed, "train");
    for (size_t v = 0; v < out.victim_grid.size(); ++v)
        out.victim_grid[v].seed = derive_seed(out.master_seed, "victim:" + std::to_string(v));
    out.source_digest = "";
    out.validate();
    return out;
}

}  // namespace bta
