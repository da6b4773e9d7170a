#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "bta/transfer.hpp"

using namespace bta;

namespace {

std::vector<StockMeta> metas_n(int n) {
    std::vector<StockMeta> metas;
    for (int i = 0; i < n; ++i)
        metas.push_back({"S" + std::to_string(i), 1e6, 1e6, 0.1, 0.001});
    return metas;
}

PricePanel noisy_panel(int t, int n, uint64_t seed) {
    MarketParams params;
    params.n_stocks = n;
    params.n_steps = t;
    params.init_prices.assign(n, 100.0);
    params.drift.assign(n, 0.0);
    params.cov_factor = Matrix(n, n, 0.0);
    for (int i = 0; i < n; ++i) {
        params.cov_factor.at(i, i) = 0.01;
        for (int j = 0; j < i; ++j) params.cov_factor.at(i, j) = 0.003;
    }
    params.seed = seed;
    return generate_market(params, metas_n(n));
}

}  // namespace

TEST_CASE("ensemble training follows the grid") {
    const PricePanel panel = noisy_panel(80, 2, 5);
    const IndexSpec spec{{"S0", "S1"}, 1.0};
    const auto metas = metas_n(2);
    TrainHyper hyper;
    hyper.epochs = 20;

    SUBCASE("grid of one gives an ensemble of one") {
        const VictimEnsemble e =
            train_ensemble(panel, spec, metas, {{ModelKind::Linear, 1, 4, 0, 1e-4}}, hyper);
        CHECK(e.victims.size() == 1);
        CHECK(e.victims[0].kind == ModelKind::Linear);
    }
    SUBCASE("mlp victims differing only in seed have distinct parameters") {
        const VictimEnsemble e = train_ensemble(panel, spec, metas,
                                                {{ModelKind::Mlp, 1, 4, 4, 1e-4},
                                                 {ModelKind::Mlp, 2, 4, 4, 1e-4}},
                                                hyper);
        bool any_diff = false;
        for (size_t i = 0; i < e.victims[0].params.size(); ++i)
            if (e.victims[0].params[i] != e.victims[1].params[i]) any_diff = true;
        CHECK(any_diff);
    }
    SUBCASE("linear victims are seed-independent") {
        const VictimEnsemble e = train_ensemble(panel, spec, metas,
                                                {{ModelKind::Linear, 1, 4, 0, 1e-4},
                                                 {ModelKind::Linear, 999, 4, 0, 1e-4}},
                                                hyper);
        REQUIRE(e.victims[0].params.size() == e.victims[1].params.size());
        for (size_t i = 0; i < e.victims[0].params.size(); ++i)
            CHECK(e.victims[0].params[i] == e.victims[1].params[i]);
    }
    SUBCASE("empty grid is rejected") {
        CHECK_THROWS_AS(train_ensemble(panel, spec, metas, {}, hyper), ValidationError);
    }
}

TEST_CASE("transfer report rates") {
    const PricePanel panel = noisy_panel(100, 2, 9);
    const IndexSpec spec{{"S0", "S1"}, 1.0};
    const auto metas = metas_n(2);
    TrainHyper hyper;
    hyper.epochs = 30;
    const std::vector<VictimSpec> grid{{ModelKind::Linear, 1, 4, 0, 1e-4},
                                       {ModelKind::Linear, 2, 3, 0, 1e-3},
                                       {ModelKind::Mlp, 3, 4, 4, 1e-4}};
    const VictimEnsemble ensemble = train_ensemble(panel, spec, metas, grid, hyper);
    const Thresholds thr{-0.002, 0.002};
    const Window window = window_at(panel, panel.last_step(), 4);

    SUBCASE("zero delta makes both rates coincide") {
        Perturbation zero;
        zero.delta = Matrix(4, 2);
        const TransferReport report = evaluate_transfer(ensemble, window, zero, thr);
        CHECK(report.transfer_rate == report.clean_false_sell_rate);
        for (const auto& row : report.rows) CHECK(row.y_clean == row.y_adv);
    }
    SUBCASE("rates are exact row counts") {
        Perturbation pert;
        pert.delta = Matrix(4, 2);
        for (auto& d : pert.delta.a) d = -0.02;
        const TransferReport report = evaluate_transfer(ensemble, window, pert, thr);
        int sell_adv = 0, sell_clean = 0;
        for (const auto& row : report.rows) {
            if (row.y_adv <= thr.tau_sell) ++sell_adv;
            if (row.y_clean <= thr.tau_sell) ++sell_clean;
        }
        CHECK(report.transfer_rate == static_cast<double>(sell_adv) / report.rows.size());
        CHECK(report.clean_false_sell_rate ==
              static_cast<double>(sell_clean) / report.rows.size());
    }
    SUBCASE("determinism: identical grids give identical reports") {
        const VictimEnsemble again = train_ensemble(panel, spec, metas, grid, hyper);
        Perturbation pert;
        pert.delta = Matrix(4, 2);
        for (auto& d : pert.delta.a) d = -0.01;
        const TransferReport a = evaluate_transfer(ensemble, window, pert, thr);
        const TransferReport b = evaluate_transfer(again, window, pert, thr);
        REQUIRE(a.rows.size() == b.rows.size());
        for (size_t i = 0; i < a.rows.size(); ++i) {
            CHECK(a.rows[i].y_clean == b.rows[i].y_clean);
            CHECK(a.rows[i].y_adv == b.rows[i].y_adv);
        }
    }
}

TEST_CASE("a surrogate clone transfers whenever the attack succeeded") {
    const PricePanel panel = noisy_panel(100, 2, 10);
    const IndexSpec spec{{"S0", "S1"}, 1.0};
    const auto metas = metas_n(2);
    TrainHyper hyper;
    hyper.seed = 1;
    const Dataset data = build_dataset(panel, spec, metas, 4);
    const ForecastModel surrogate = train(ModelKind::Linear, data, hyper);

    VictimEnsemble clone;
    clone.victims = {surrogate};
    clone.provenance = {{ModelKind::Linear, 1, 4, 0, 1e-4}};

    const Window window = window_at(panel, panel.last_step(), 4);
    const Thresholds thr{-0.002, 0.002};

    // a saturating perturbation that certainly pushes the clone below tau_sell
    Perturbation pert;
    pert.delta = Matrix(4, 2);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 2; ++c)
            pert.delta.at(r, c) = -0.05 * sign0(surrogate.params[static_cast<size_t>(r) * 2 + c]);
    const double y_attacked = [&] {
        std::vector<double> x(window.x.a);
        for (size_t i = 0; i < x.size(); ++i) x[i] += pert.delta.a[i];
        return surrogate.value(x);
    }();
    REQUIRE(y_attacked <= thr.tau_sell);  // the attack succeeded on the surrogate

    const TransferReport report = evaluate_transfer(clone, window, pert, thr);
    CHECK(report.transfer_rate == 1.0);
}

TEST_CASE("adding the surrogate to the ensemble never hurts a successful attack") {
    const PricePanel panel = noisy_panel(120, 2, 77);
    const IndexSpec spec{{"S0", "S1"}, 1.0};
    const auto metas = metas_n(2);
    TrainHyper hyper;
    hyper.epochs = 30;
    const Dataset data = build_dataset(panel, spec, metas, 4);
    const ForecastModel surrogate = train(ModelKind::Linear, data, hyper);
    const std::vector<VictimSpec> grid{{ModelKind::Linear, 1, 4, 0, 1e-3},
                                       {ModelKind::Mlp, 2, 4, 4, 1e-4},
                                       {ModelKind::Mlp, 3, 3, 6, 1e-4}};
    const VictimEnsemble base = train_ensemble(panel, spec, metas, grid, hyper);
    VictimEnsemble with_surrogate = base;
    with_surrogate.victims.push_back(surrogate);
    with_surrogate.provenance.push_back({ModelKind::Linear, 0, 4, 0, 1e-4});

    const Window window = window_at(panel, panel.last_step(), 4);
    const Thresholds thr{-0.002, 0.002};
    Perturbation pert;
    pert.delta = Matrix(4, 2);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 2; ++c)
            pert.delta.at(r, c) = -0.04 * sign0(surrogate.params[static_cast<size_t>(r) * 2 + c]);
    std::vector<double> x(window.x.a);
    for (size_t i = 0; i < x.size(); ++i) x[i] += pert.delta.a[i];
    REQUIRE(surrogate.value(x) <= thr.tau_sell);  // the attack succeeds on the surrogate

    const TransferReport without = evaluate_transfer(base, window, pert, thr);
    const TransferReport with = evaluate_transfer(with_surrogate, window, pert, thr);
    CHECK(with.transfer_rate >= without.transfer_rate);
}

TEST_CASE("shorter victims evaluate on the window suffix, longer ones fail") {
    const PricePanel panel = noisy_panel(100, 2, 11);
    const IndexSpec spec{{"S0", "S1"}, 1.0};
    const auto metas = metas_n(2);
    TrainHyper hyper;
    const VictimEnsemble shorter =
        train_ensemble(panel, spec, metas, {{ModelKind::Linear, 1, 2, 0, 1e-4}}, hyper);
    const Window window = window_at(panel, panel.last_step(), 4);
    Perturbation zero;
    zero.delta = Matrix(4, 2);
    CHECK_NOTHROW(evaluate_transfer(shorter, window, zero, Thresholds{}));

    const VictimEnsemble longer =
        train_ensemble(panel, spec, metas, {{ModelKind::Linear, 1, 6, 0, 1e-4}}, hyper);
    CHECK_THROWS_AS(evaluate_transfer(longer, window, zero, Thresholds{}), ContractError);
}

TEST_CASE("transfer csv round-trips rows and recomputes rates") {
    TransferReport report;
    for (int i = 0; i < 4; ++i) {
        TransferRow row;
        row.victim_id = i;
        row.spec = {i % 2 == 0 ? ModelKind::Linear : ModelKind::Mlp,
                    static_cast<uint64_t>(1000 + i), 4 + i, i, 1e-4};
        row.y_clean = 0.001 * i;
        row.y_adv = -0.003 * i;
        row.flipped = i > 0;
        report.rows.push_back(row);
    }
    const std::string path =
        (std::filesystem::temp_directory_path() / "bta_test_transfer.csv").string();
    write_transfer_csv(report, path);
    TransferReport back = read_transfer_csv(path);
    REQUIRE(back.rows.size() == 4);
    for (int i = 0; i < 4; ++i) {
        CHECK(back.rows[i].y_clean == report.rows[i].y_clean);
        CHECK(back.rows[i].y_adv == report.rows[i].y_adv);
        CHECK(back.rows[i].flipped == report.rows[i].flipped);
        CHECK(back.rows[i].spec.seed == report.rows[i].spec.seed);
    }
    const Thresholds thr{-0.002, 0.002};
    recompute_rates(back, thr);
    CHECK(back.transfer_rate == doctest::Approx(3.0 / 4.0));   // rows 1..3 fall below tau_sell
    CHECK(back.clean_false_sell_rate == 0.0);
    std::filesystem::remove(path);
}
