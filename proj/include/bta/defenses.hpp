#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bta/attack.hpp"
#include "bta/forecast.hpp"
#include "bta/market.hpp"

namespace bta {

// ---- domain types ----------------------------------------------------------

struct DefenseConfig {
    double adv_ratio = 0.0;   // fraction of training samples replaced by FGSM copies
    double adv_eps = 0.0;     // epsilon used during adversarial training
    int smooth_width = 1;     // odd moving-median width, 1 <= m <= W
    double detect_z = 3.0;    // per-stock volume z-score threshold
    int detect_count = 1;     // simultaneous-stock count threshold
    double kappa = 0.01;      // normal-flow fraction of ADV for the z-score

    void validate(int window_len) const;
};

struct AdversarialTrainResult {
    ForecastModel model;
    double clean_mse = 0.0;
    double adv_mse = 0.0;  // MSE on the FGSM-perturbed copy of the dataset
};

struct DetectionResult {
    std::vector<char> alarm;  // per step
    std::vector<std::vector<std::string>> contributors;  // tickers over threshold per step
    int alarm_count = 0;
};

// ---- operations -------------------------------------------------------------

// Replaces a seeded adv_ratio fraction of inputs with x + FGSM_eps(x) crafted
// against a plainly trained twin (labels unchanged), then trains as usual.
// ratio = 0 or eps = 0 reproduces plain training bit for bit.
AdversarialTrainResult adversarial_train(ModelKind kind, const Dataset& data,
                                         const DefenseConfig& config, const TrainHyper& hyper);

// Centered moving median of width m along the time axis per stock (edges
// shrink to fit), then predict. m = 1 is the identity.
Signal smooth_predict(const ForecastModel& model, const Window& window, int m,
                      const Thresholds& thr, Window* smoothed_out = nullptr);

Matrix smooth_window(const Matrix& x, int m);

// Per-step alarm iff at least detect_count stocks have |volume / (kappa *
// ADV)| > detect_z simultaneously.
DetectionResult detect_coordination(const std::vector<std::vector<double>>& net_volumes,
                                    const std::vector<StockMeta>& meta,
                                    const DefenseConfig& config);

// ---- report -------------------------------------------------------------------

struct DefenseReportRow {
    std::string defense;  // baseline | adv_train | smooth | detect
    double param = 0.0;
    std::optional<double> clean_mse;
    std::optional<double> adv_mse;
    std::optional<double> attack_eps_to_flip;
    std::optional<double> alarm_rate;
    std::optional<double> false_positive_rate;
};

// CSV: defense,param,clean_mse,adv_mse,attack_eps_to_flip,alarm_rate,false_positive_rate
void write_defense_csv(const std::vector<DefenseReportRow>& rows, const std::string& path);

}  // namespace bta
