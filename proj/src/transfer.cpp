#include "bta/transfer.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace bta {

VictimEnsemble train_ensemble(const PricePanel& panel, const IndexSpec& spec,
                              const std::vector<StockMeta>& meta,
                              const std::vector<VictimSpec>& grid, const TrainHyper& base_hyper) {
    if (grid.empty()) throw ValidationError("train_ensemble: grid must be non-empty");
    VictimEnsemble ensemble;
    ensemble.provenance = grid;
    ensemble.victims.reserve(grid.size());
    for (const auto& v : grid) {
        Dataset data = build_dataset(panel, spec, meta, v.window_len);
        TrainHyper hyper = base_hyper;
        hyper.seed = v.seed;
        hyper.hidden = v.hidden;
        hyper.ridge = v.ridge;
        ensemble.victims.push_back(train(v.kind, data, hyper));
    }
    return ensemble;
}

namespace {

Window suffix_window(const Window& full, int window_len) {
    if (window_len > full.window_len())
        throw ContractError("evaluate_transfer: victim window longer than the evaluated window");
    Window w{Matrix(window_len, full.n_stocks()), full.end_step};
    const int skip = full.window_len() - window_len;
    for (int r = 0; r < window_len; ++r)
        for (int c = 0; c < full.n_stocks(); ++c) w.x.at(r, c) = full.x.at(r + skip, c);
    return w;
}

TransferReport evaluate_pair(const VictimEnsemble& ensemble, const Window& clean,
                             const Window& adv, const Thresholds& thr) {
    TransferReport report;
    int sell_adv = 0;
    int sell_clean = 0;
    for (size_t i = 0; i < ensemble.victims.size(); ++i) {
        const ForecastModel& victim = ensemble.victims[i];
        const Signal clean_sig = predict(victim, suffix_window(clean, victim.window_len), thr);
        const Signal adv_sig = predict(victim, suffix_window(adv, victim.window_len), thr);
        TransferRow row;
        row.victim_id = static_cast<int>(i);
        row.spec = ensemble.provenance[i];
        row.y_clean = clean_sig.y_hat;
        row.y_adv = adv_sig.y_hat;
        row.clean_action = clean_sig.action;
        row.adv_action = adv_sig.action;
        row.flipped = clean_sig.action != Action::Sell && adv_sig.action == Action::Sell;
        report.rows.push_back(row);
        if (adv_sig.action == Action::Sell) ++sell_adv;
        if (clean_sig.action == Action::Sell) ++sell_clean;
    }
    const double n = static_cast<double>(ensemble.victims.size());
    report.transfer_rate = sell_adv / n;
    report.clean_false_sell_rate = sell_clean / n;
    return report;
}

}  // namespace

TransferReport evaluate_transfer(const VictimEnsemble& ensemble, const Window& window,
                                 const Perturbation& pert, const Thresholds& thr) {
    if (!pert.delta.same_shape(window.x))
        throw ContractError("evaluate_transfer: perturbation shape mismatch");
    Window adv{window.x, window.end_step};
    for (size_t i = 0; i < adv.x.a.size(); ++i) adv.x.a[i] += pert.delta.a[i];
    return evaluate_pair(ensemble, window, adv, thr);
}

TransferReport evaluate_transfer_realized(const VictimEnsemble& ensemble, const Window& clean,
                                          const Window& adv, const Thresholds& thr) {
    if (!clean.x.same_shape(adv.x))
        throw ContractError("evaluate_transfer: clean/adv window shape mismatch");
    return evaluate_pair(ensemble, clean, adv, thr);
}

void write_transfer_csv(const TransferReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << "victim_id,kind,seed,W,H,y_clean,y_adv,flipped\n";
    char buf[200];
    for (const auto& r : report.rows) {
        std::snprintf(buf, sizeof(buf), "%d,%s,%llu,%d,%d,%.17g,%.17g,%d\n", r.victim_id,
                      to_string(r.spec.kind).c_str(),
                      static_cast<unsigned long long>(r.spec.seed), r.spec.window_len,
                      r.spec.hidden, r.y_clean, r.y_adv, r.flipped ? 1 : 0);
        out << buf;
    }
}

TransferReport read_transfer_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DependencyError("missing transfer report file " + path);
    std::string line;
    std::getline(in, line);  // header
    TransferReport report;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        TransferRow row;
        std::getline(ss, cell, ','); row.victim_id = std::stoi(cell);
        std::getline(ss, cell, ','); row.spec.kind = model_kind_from_string(cell);
        std::getline(ss, cell, ','); row.spec.seed = std::stoull(cell);
        std::getline(ss, cell, ','); row.spec.window_len = std::stoi(cell);
        std::getline(ss, cell, ','); row.spec.hidden = std::stoi(cell);
        std::getline(ss, cell, ','); row.y_clean = std::stod(cell);
        std::getline(ss, cell, ','); row.y_adv = std::stod(cell);
        std::getline(ss, cell, ','); row.flipped = cell == "1";
        report.rows.push_back(row);
    }
    return report;
}

void recompute_rates(TransferReport& report, const Thresholds& thr) {
    int sell_adv = 0;
    int sell_clean = 0;
    for (auto& row : report.rows) {
        row.clean_action = row.y_clean <= thr.tau_sell
                               ? Action::Sell
                               : (row.y_clean >= thr.tau_buy ? Action::Buy : Action::Hold);
        row.adv_action = row.y_adv <= thr.tau_sell
                             ? Action::Sell
                             : (row.y_adv >= thr.tau_buy ? Action::Buy : Action::Hold);
        if (row.adv_action == Action::Sell) ++sell_adv;
        if (row.clean_action == Action::Sell) ++sell_clean;
    }
    const double n = static_cast<double>(report.rows.empty() ? 1 : report.rows.size());
    report.transfer_rate = sell_adv / n;
    report.clean_false_sell_rate = sell_clean / n;
}

}  // namespace bta
