#pragma once

#include <string>
#include <vector>

#include "bta/common.hpp"
#include "bta/market.hpp"

namespace bta {

// ---- domain types ----------------------------------------------------------

// W x N matrix of per-stock log-returns, flattened row-major as the model
// input. end_step is the panel step of the last row.
struct Window {
    Matrix x;
    long end_step = 0;

    int window_len() const { return x.rows; }
    int n_stocks() const { return x.cols; }
};

enum class ModelKind { Linear, Mlp };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& s);

enum class Action { Sell, Hold, Buy };

std::string to_string(Action a);

struct Thresholds {
    double tau_sell = -0.001;
    double tau_buy = 0.001;

    void validate() const {
        if (!(tau_sell < 0.0 && tau_buy > 0.0))
            throw ValidationError("thresholds: need tau_sell < 0 < tau_buy");
    }
};

struct Signal {
    double y_hat = 0.0;
    Action action = Action::Hold;
};

// Next-step index log-return predictor. Parameter layout:
//   Linear: [theta (W*N), bias]
//   Mlp:    [U (H x W*N, row-major), c (H), v (H), bias]; tanh hidden layer.
struct ForecastModel {
    ModelKind kind = ModelKind::Linear;
    int window_len = 0;
    int n_inputs = 0;  // stocks per row
    int hidden = 0;    // 0 for Linear
    std::vector<double> params;
    uint64_t train_seed = 0;
    double train_mse = 0.0;

    int feature_count() const { return window_len * n_inputs; }
    size_t expected_param_count() const;
    void validate() const;

    double value(std::span<const double> x) const;
    std::vector<double> gradient(std::span<const double> x) const;
};

struct TrainHyper {
    double ridge = 1e-4;     // penalty on weights, not bias (Linear)
    int hidden = 8;          // Mlp width
    int epochs = 200;        // Mlp
    int batch_size = 32;     // Mlp
    double learning_rate = 0.05;  // Mlp
    double momentum = 0.9;   // Mlp
    uint64_t seed = 0;
};

// Supervised samples: one flattened window per row plus the next-step index
// log-return as the label.
struct Dataset {
    Matrix features;  // samples x (W*N)
    std::vector<double> labels;
    std::vector<long> end_steps;
    int window_len = 0;
    int n_stocks = 0;

    int size() const { return features.rows; }
};

// ---- operations -------------------------------------------------------------

// Log-return window ending at panel step end_step (rows cover the returns of
// steps end_step-W+1 .. end_step).
Window window_at(const PricePanel& panel, long end_step, int window_len);

// One sample per end_step in [t0+W, t0+T-2]; label is the index log-return of
// the following step.
Dataset build_dataset(const PricePanel& panel, const IndexSpec& spec,
                      const std::vector<StockMeta>& meta, int window_len);

ForecastModel train(ModelKind kind, const Dataset& data, const TrainHyper& hyper);

double mse_on(const ForecastModel& model, const Dataset& data);

Signal predict(const ForecastModel& model, const Window& window, const Thresholds& thr);

// Exact d y_hat / d x at the window (theta for Linear, backprop for Mlp).
std::vector<double> input_gradient(const ForecastModel& model, const Window& window);

// Flat JSON document {kind, W, N, H, params, train_seed, train_mse}.
void write_model_json(const ForecastModel& model, const std::string& path);
ForecastModel read_model_json(const std::string& path);

}  // namespace bta
