#pragma once

#include <string>
#include <vector>

#include "bta/attack.hpp"
#include "bta/forecast.hpp"

namespace bta {

// ---- domain types ----------------------------------------------------------

struct VictimSpec {
    ModelKind kind = ModelKind::Linear;
    uint64_t seed = 0;
    int window_len = 0;
    int hidden = 0;       // Mlp only
    double ridge = 1e-4;  // Linear only
};

struct VictimEnsemble {
    std::vector<ForecastModel> victims;
    std::vector<VictimSpec> provenance;
};

struct TransferRow {
    int victim_id = 0;
    VictimSpec spec;
    double y_clean = 0.0;
    double y_adv = 0.0;
    Action clean_action = Action::Hold;
    Action adv_action = Action::Hold;
    bool flipped = false;  // clean HOLD/BUY turned into adv SELL
};

struct TransferReport {
    std::vector<TransferRow> rows;
    double transfer_rate = 0.0;         // fraction signalling SELL on the adversarial input
    double clean_false_sell_rate = 0.0; // fraction signalling SELL on the clean input
};

// ---- operations -------------------------------------------------------------

// Trains one model per grid entry on the same panel; deterministic.
VictimEnsemble train_ensemble(const PricePanel& panel, const IndexSpec& spec,
                              const std::vector<StockMeta>& meta,
                              const std::vector<VictimSpec>& grid, const TrainHyper& base_hyper);

// Evaluates every victim on the clean window and on window + delta; victims
// with a shorter window evaluate on the suffix. Requires victim W <= window W.
TransferReport evaluate_transfer(const VictimEnsemble& ensemble, const Window& window,
                                 const Perturbation& pert, const Thresholds& thr);

// Same, but against two fully realized windows (end-to-end mode).
TransferReport evaluate_transfer_realized(const VictimEnsemble& ensemble, const Window& clean,
                                          const Window& adv, const Thresholds& thr);

// CSV: victim_id,kind,seed,W,H,y_clean,y_adv,flipped
void write_transfer_csv(const TransferReport& report, const std::string& path);
TransferReport read_transfer_csv(const std::string& path);

// Recomputes both rates (and the per-row actions) from the recorded
// predictions; used when a report is reloaded from its CSV.
void recompute_rates(TransferReport& report, const Thresholds& thr);

}  // namespace bta
