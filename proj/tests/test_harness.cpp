#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unistd.h>

#include <json.hpp>

#include "bta/pipeline.hpp"

using namespace bta;
namespace fs = std::filesystem;

namespace {

// compact but complete scenario used by the harness tests
const char* kTestConfig = R"json({
  "schema_version": 1,
  "master_seed": 90210,
  "market": {
    "n_steps": 160,
    "init_price": 100.0,
    "drift": 0.0,
    "vol": 0.008,
    "corr": 0.3,
    "stocks": [
      {"ticker": "ALP", "shares_outstanding": 4e6, "adv": 2e6, "lambda_impact": 0.08, "half_spread": 0.0008},
      {"ticker": "BET", "shares_outstanding": 3e6, "adv": 1e6, "lambda_impact": 0.1, "half_spread": 0.001},
      {"ticker": "GAM", "shares_outstanding": 2e6, "adv": 8e5, "lambda_impact": 0.12, "half_spread": 0.001},
      {"ticker": "DEL", "shares_outstanding": 1e6, "adv": 5e5, "lambda_impact": 0.15, "half_spread": 0.0012}
    ]
  },
  "index": {"members": ["ALP", "BET", "GAM", "DEL"], "base_value": 1000.0},
  "surrogate": {"kind": "linear", "window": 6, "ridge": 1e-4},
  "thresholds": {"tau_sell": -0.002, "tau_buy": 0.002},
  "attack": {"method": "iterative", "eps": 0.02, "tau_target": -0.004, "steps": 30,
             "step_size": 0.002, "sparsity_k": 3, "attack_rows": 2,
             "manip_eps_max": 0.025, "manip_budget": 6e6},
  "realization": {"budget": 2e7, "tolerance": 1e-4, "max_retrades": 2, "exo_sigma": 0.001},
  "agents": {"phi": 0.8, "feedback_horizon": 10, "followers": [
    {"kind": "linear", "window": 6, "capital": 8e7, "sell_fraction": 0.5},
    {"kind": "mlp", "window": 6, "hidden": 6, "capital": 8e7, "sell_fraction": 0.5}
  ]},
  "victims": [
    {"kind": "linear", "window": 4},
    {"kind": "linear", "window": 6, "ridge": 1e-3},
    {"kind": "mlp", "window": 6, "hidden": 6},
    {"kind": "mlp", "window": 5, "hidden": 8}
  ],
  "defense": {"adv_ratio": 0.5, "adv_eps": 0.02, "smooth_width": 3, "detect_z": 3.0,
              "detect_count": 2, "kappa": 0.01, "null_steps": 200},
  "success": {"min_transfer_fraction": 0.25, "drop_pct": 0.001, "horizon_steps": 10}
})json";

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("bta_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("scenario parsing and validation") {
    const ScenarioConfig cfg = parse_scenario(kTestConfig);
    CHECK(cfg.market.n_stocks == 4);
    CHECK(cfg.stocks[0].ticker == "ALP");
    CHECK(cfg.surrogate_window == 6);
    CHECK(cfg.attack_sparsity_k == 3);

    SUBCASE("stage seeds derive from the master seed") {
        CHECK(cfg.market.seed == derive_seed(90210, "generate"));
        CHECK(cfg.surrogate_hyper.seed == derive_seed(90210, "train"));
        CHECK(cfg.victim_grid[0].seed == derive_seed(90210, "victim:0"));
        CHECK(cfg.victim_grid[1].seed == derive_seed(90210, "victim:1"));
    }
    SUBCASE("missing keys name their path") {
        nlohmann::json j = nlohmann::json::parse(kTestConfig);
        j["market"].erase("n_steps");
        CHECK_THROWS_WITH_AS(parse_scenario(j.dump()), doctest::Contains("$.market"),
                             ValidationError);
    }
    SUBCASE("bad values are validation errors") {
        nlohmann::json j = nlohmann::json::parse(kTestConfig);
        j["attack"]["eps"] = -0.5;
        CHECK_THROWS_AS(parse_scenario(j.dump()), ValidationError);
        j = nlohmann::json::parse(kTestConfig);
        j["agents"]["phi"] = 1.5;
        CHECK_THROWS_AS(parse_scenario(j.dump()), ValidationError);
        j = nlohmann::json::parse(kTestConfig);
        j["index"]["members"] = {"NOPE"};
        CHECK_THROWS_AS(parse_scenario(j.dump()), ValidationError);
    }
    SUBCASE("dump and reparse round-trips") {
        const ScenarioConfig back = parse_scenario(dump_scenario(cfg));
        CHECK(back.master_seed == cfg.master_seed);
        CHECK(back.market.n_stocks == cfg.market.n_stocks);
        CHECK(back.attack_eps == cfg.attack_eps);
        for (int i = 0; i < 4; ++i)
            for (int k = 0; k <= i; ++k)
                CHECK(back.market.cov_factor.at(i, k) == cfg.market.cov_factor.at(i, k));
    }
}

TEST_CASE("scenario scaling") {
    const ScenarioConfig cfg = parse_scenario(kTestConfig);

    SUBCASE("factor one only re-derives seeds") {
        const ScenarioConfig s = scale_scenario(cfg, 1.0);
        CHECK(s.market.n_stocks == 4);
        CHECK(s.stocks.size() == 4);
        CHECK(s.index_members == cfg.index_members);
        CHECK(s.realize.budget == cfg.realize.budget);
        CHECK(s.master_seed == derive_seed(cfg.master_seed, "scale:1"));
        for (size_t i = 0; i < cfg.market.cov_factor.a.size(); ++i)
            CHECK(s.market.cov_factor.a[i] == cfg.market.cov_factor.a[i]);
    }
    SUBCASE("factor one half keeps the two largest caps") {
        const ScenarioConfig s = scale_scenario(cfg, 0.5);
        CHECK(s.market.n_stocks == 2);
        // caps: ALP 4e8, BET 3e8, GAM 2e8, DEL 1e8
        CHECK(s.stocks[0].ticker == "ALP");
        CHECK(s.stocks[1].ticker == "BET");
        CHECK(s.realize.budget == doctest::Approx(cfg.realize.budget * 0.5));
        CHECK(s.attack_sparsity_k <= 2);
    }
    SUBCASE("invalid factors are rejected") {
        CHECK_THROWS_AS(scale_scenario(cfg, 0.0), ValidationError);
        CHECK_THROWS_AS(scale_scenario(cfg, 1.5), ValidationError);
    }
}

TEST_CASE("stage dependencies are explicit") {
    const ScenarioConfig cfg = parse_scenario(kTestConfig);
    TempDir dir("deps");

    CHECK_THROWS_WITH_AS(run_stage(cfg, "attack", dir.path.string()),
                         doctest::Contains("generate"), DependencyError);
    run_stage(cfg, "generate", dir.path.string());
    CHECK_THROWS_WITH_AS(run_stage(cfg, "attack", dir.path.string()),
                         doctest::Contains("train"), DependencyError);
    CHECK_THROWS_AS(run_stage(cfg, "report", dir.path.string()), DependencyError);
    CHECK_THROWS_AS(run_stage(cfg, "bogus", dir.path.string()), ValidationError);
}

TEST_CASE("generate is deterministic across invocations") {
    const ScenarioConfig cfg = parse_scenario(kTestConfig);
    TempDir a("gen_a"), b("gen_b");
    run_stage(cfg, "generate", a.path.string());
    run_stage(cfg, "generate", b.path.string());
    CHECK(file_bytes(a.path / "panel.csv") == file_bytes(b.path / "panel.csv"));
}

TEST_CASE("the full pipeline runs and its artifacts are reproducible") {
    const ScenarioConfig cfg = parse_scenario(kTestConfig);
    TempDir a("pipe_a"), b("pipe_b");
    const auto results = run_all(cfg, a.path.string());
    CHECK(results.size() == kStageOrder.size());
    run_all(cfg, b.path.string());

    const char* artifacts[] = {"panel.csv",         "surrogate.json",
                               "perturbation.json", "execution.json",
                               "orders.csv",        "realized_panel.csv",
                               "counterfactual_panel.csv", "attacker_volumes.csv",
                               "feedback_events.csv", "index_path.csv",
                               "agent_volumes.csv", "victims.json",
                               "transfer.csv",      "defense_report.csv",
                               "report.json",       "config.json"};
    for (const char* name : artifacts) {
        REQUIRE_MESSAGE(fs::exists(a.path / name), name);
        CHECK_MESSAGE(file_bytes(a.path / name) == file_bytes(b.path / name), name);
    }

    SUBCASE("success flags recompute from the stored artifacts") {
        const SuccessFlags flags = evaluate_success(cfg, a.path.string());
        const auto report = nlohmann::json::parse(file_bytes(a.path / "report.json"));
        CHECK(report["success_I"]["pass"].get<bool>() == flags.success_transfer);
        CHECK(report["success_II"]["pass"].get<bool>() == flags.success_drawdown);
        CHECK(report["success_I"]["transfer_rate"].get<double>() == flags.transfer_rate);
    }
    SUBCASE("thresholds of zero always pass, impossible thresholds never do") {
        nlohmann::json j = nlohmann::json::parse(kTestConfig);
        j["success"]["min_transfer_fraction"] = 0.0;
        j["success"]["drop_pct"] = 0.0;
        const SuccessFlags easy = evaluate_success(parse_scenario(j.dump()), a.path.string());
        CHECK(easy.success_transfer);
        CHECK(easy.success_drawdown);

        j["success"]["drop_pct"] = 1.5;  // beyond any possible drawdown
        const SuccessFlags hard = evaluate_success(parse_scenario(j.dump()), a.path.string());
        CHECK_FALSE(hard.success_drawdown);
    }
    SUBCASE("rerunning a later stage leaves earlier artifacts untouched") {
        const std::string panel_before = file_bytes(a.path / "panel.csv");
        const std::string surrogate_before = file_bytes(a.path / "surrogate.json");
        run_stage(cfg, "transfer", a.path.string());
        CHECK(file_bytes(a.path / "panel.csv") == panel_before);
        CHECK(file_bytes(a.path / "surrogate.json") == surrogate_before);
    }
    SUBCASE("a REALIZED outcome is verifiable from the stored panel") {
        const auto execution = nlohmann::json::parse(file_bytes(a.path / "execution.json"));
        REQUIRE(execution["outcome"] == "REALIZED");

        const PricePanel realized = read_panel_csv((a.path / "realized_panel.csv").string());
        const PricePanel original = read_panel_csv((a.path / "panel.csv").string());
        const Perturbation pert = read_perturbation_json(
            (a.path / "perturbation.json").string(), realized.tickers, cfg.surrogate_window);
        const int first_future = cfg.surrogate_window - cfg.attack_rows;
        for (const auto& [row, stock] : pert.support) {
            REQUIRE(row >= first_future);
            const long step = original.last_step() + 1 + (row - first_future);
            const int panel_row = static_cast<int>(step - realized.t0);
            const double realized_return = std::log(realized.prices.at(panel_row, stock) /
                                                    realized.prices.at(panel_row - 1, stock));
            // exogenous noise on top of the target is corrected to tolerance;
            // the stored panel adds ~1e-9 of rounding at 10 significant digits
            CHECK(std::abs(realized_return - pert.delta.at(row, stock)) <
                  cfg.realize.tolerance + 1e-6);
        }
    }
    SUBCASE("the defense report carries every measured number") {
        std::ifstream in(a.path / "defense_report.csv");
        std::string line;
        std::getline(in, line);
        CHECK(line ==
              "defense,param,clean_mse,adv_mse,attack_eps_to_flip,alarm_rate,false_positive_rate");
        std::map<std::string, std::vector<std::string>> rows;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::vector<std::string> cells;
            std::stringstream ss(line);
            std::string cell;
            while (std::getline(ss, cell, ',')) cells.push_back(cell);
            cells.resize(7);
            rows[cells[0]] = cells;
        }
        REQUIRE(rows.count("baseline") == 1);
        REQUIRE(rows.count("adv_train") == 1);
        REQUIRE(rows.count("smooth") == 1);
        REQUIRE(rows.count("detect") == 1);
        // performance-degradation numbers are reported, not ordered
        CHECK_FALSE(rows["baseline"][2].empty());   // clean_mse
        CHECK_FALSE(rows["baseline"][3].empty());   // adv_mse
        CHECK_FALSE(rows["baseline"][4].empty());   // eps to flip
        CHECK_FALSE(rows["adv_train"][2].empty());
        CHECK_FALSE(rows["adv_train"][3].empty());
        CHECK_FALSE(rows["smooth"][2].empty());
        CHECK_FALSE(rows["smooth"][4].empty());
        CHECK_FALSE(rows["detect"][5].empty());     // alarm_rate
        CHECK_FALSE(rows["detect"][6].empty());     // false_positive_rate
    }
    SUBCASE("the attacker never trades outside the perturbation support") {
        const PricePanel panel = read_panel_csv((a.path / "panel.csv").string());
        const Perturbation pert = read_perturbation_json(
            (a.path / "perturbation.json").string(), panel.tickers, cfg.surrogate_window);
        std::set<int> support_stocks(pert.stocks().begin(), pert.stocks().end());
        std::ifstream in(a.path / "attacker_volumes.csv");
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const size_t c1 = line.find(',');
            const size_t c2 = line.find(',', c1 + 1);
            const std::string ticker = line.substr(c1 + 1, c2 - c1 - 1);
            CHECK(support_stocks.count(panel.stock_index(ticker)) == 1);
        }
    }
}

TEST_CASE("every attack method completes the pipeline") {
    for (const char* method : {"fgsm", "universal", "diachronic"}) {
        CAPTURE(method);
        nlohmann::json j = nlohmann::json::parse(kTestConfig);
        j["attack"]["method"] = method;
        const ScenarioConfig cfg = parse_scenario(j.dump());
        TempDir dir(std::string("method_") + method);
        CHECK_NOTHROW(run_all(cfg, dir.path.string()));
        const auto execution =
            nlohmann::json::parse(file_bytes(dir.path / "execution.json"));
        CHECK(execution["outcome"] == "REALIZED");
        const SuccessFlags flags = evaluate_success(cfg, dir.path.string());
        CHECK(flags.transfer_rate >= 0.0);
    }
}

TEST_CASE("scaled scenarios still complete the pipeline") {
    const ScenarioConfig cfg = parse_scenario(kTestConfig);
    const ScenarioConfig scaled = scale_scenario(cfg, 0.75);  // 3 stocks
    CHECK(scaled.market.n_stocks == 3);
    TempDir dir("scaled");
    CHECK_NOTHROW(run_all(scaled, dir.path.string()));
    const SuccessFlags flags = evaluate_success(scaled, dir.path.string());
    CHECK(flags.transfer_rate >= 0.0);
}
