#include "bta/forecast.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace bta {

std::string to_string(ModelKind kind) { return kind == ModelKind::Linear ? "linear" : "mlp"; }

ModelKind model_kind_from_string(const std::string& s) {
    if (s == "linear") return ModelKind::Linear;
    if (s == "mlp") return ModelKind::Mlp;
    throw ValidationError("unknown model kind '" + s + "'");
}

std::string to_string(Action a) {
    switch (a) {
        case Action::Sell: return "SELL";
        case Action::Buy: return "BUY";
        default: return "HOLD";
    }
}

size_t ForecastModel::expected_param_count() const {
    const size_t f = static_cast<size_t>(feature_count());
    if (kind == ModelKind::Linear) return f + 1;
    return static_cast<size_t>(hidden) * f + 2 * static_cast<size_t>(hidden) + 1;
}

void ForecastModel::validate() const {
    if (window_len < 1 || n_inputs < 1) throw ValidationError("model: W and N must be >= 1");
    if (kind == ModelKind::Mlp && hidden < 1)
        throw ValidationError("model: mlp hidden width must be >= 1");
    if (params.size() != expected_param_count())
        throw ValidationError("model: parameter count does not match (W, N, H)");
    for (double p : params)
        if (!std::isfinite(p)) throw ValidationError("model: parameters must be finite");
}

double ForecastModel::value(std::span<const double> x) const {
    const int f = feature_count();
    if (static_cast<int>(x.size()) != f)
        throw ContractError("model: input length does not match W*N");
    if (kind == ModelKind::Linear) {
        double y = params[f];  // bias
        for (int i = 0; i < f; ++i) y += params[i] * x[i];
        return y;
    }
    const int h = hidden;
    const double* U = params.data();
    const double* c = params.data() + static_cast<size_t>(h) * f;
    const double* v = c + h;
    const double b = *(v + h);
    double y = b;
    for (int j = 0; j < h; ++j) {
        double z = c[j];
        const double* row = U + static_cast<size_t>(j) * f;
        for (int i = 0; i < f; ++i) z += row[i] * x[i];
        y += v[j] * std::tanh(z);
    }
    return y;
}

std::vector<double> ForecastModel::gradient(std::span<const double> x) const {
    const int f = feature_count();
    if (static_cast<int>(x.size()) != f)
        throw ContractError("model: input length does not match W*N");
    std::vector<double> g(f, 0.0);
    if (kind == ModelKind::Linear) {
        for (int i = 0; i < f; ++i) g[i] = params[i];
        return g;
    }
    const int h = hidden;
    const double* U = params.data();
    const double* c = params.data() + static_cast<size_t>(h) * f;
    const double* v = c + h;
    for (int j = 0; j < h; ++j) {
        double z = c[j];
        const double* row = U + static_cast<size_t>(j) * f;
        for (int i = 0; i < f; ++i) z += row[i] * x[i];
        const double th = std::tanh(z);
        const double w = v[j] * (1.0 - th * th);
        for (int i = 0; i < f; ++i) g[i] += w * row[i];
    }
    return g;
}

Window window_at(const PricePanel& panel, long end_step, int window_len) {
    const long first_row = end_step - window_len + 1 - panel.t0;  // return of step t needs p_{t-1}
    if (window_len < 1) throw ContractError("window_at: window length must be >= 1");
    if (first_row < 1 || end_step > panel.last_step())
        throw ContractError("window_at: window does not fit in panel");
    Window w;
    w.x = Matrix(window_len, panel.prices.cols);
    w.end_step = end_step;
    for (int r = 0; r < window_len; ++r) {
        const int row = static_cast<int>(first_row) + r;
        for (int c = 0; c < panel.prices.cols; ++c) {
            w.x.at(r, c) = std::log(panel.prices.at(row, c) / panel.prices.at(row - 1, c));
        }
    }
    return w;
}

Dataset build_dataset(const PricePanel& panel, const IndexSpec& spec,
                      const std::vector<StockMeta>& meta, int window_len) {
    const int t_total = panel.n_steps();
    if (window_len < 1) throw ValidationError("build_dataset: window length must be >= 1");
    if (t_total <= window_len + 1)
        throw std::runtime_error("build_dataset: panel too short, need T > W+1");

    Dataset data;
    data.window_len = window_len;
    data.n_stocks = panel.n_stocks();
    const int n_samples = t_total - 1 - window_len;  // end rows W .. T-2
    data.features = Matrix(n_samples, window_len * data.n_stocks);
    data.labels.reserve(n_samples);
    data.end_steps.reserve(n_samples);

    for (int s = 0; s < n_samples; ++s) {
        const long end_step = panel.t0 + window_len + s;
        const Window w = window_at(panel, end_step, window_len);
        std::copy(w.x.a.begin(), w.x.a.end(),
                  data.features.a.begin() + static_cast<size_t>(s) * data.features.cols);
        const double i_now = index_value(panel, spec, meta, end_step);
        const double i_next = index_value(panel, spec, meta, end_step + 1);
        data.labels.push_back(std::log(i_next / i_now));
        data.end_steps.push_back(end_step);
    }
    return data;
}

namespace {

ForecastModel train_linear(const Dataset& data, const TrainHyper& hyper) {
    const int f = data.features.cols;
    const int n = data.size();
    const int dim = f + 1;  // weights + bias

    // normal equations with ridge on weights only
    Matrix A(dim, dim, 0.0);
    std::vector<double> rhs(dim, 0.0);
    for (int s = 0; s < n; ++s) {
        const double* x = data.features.a.data() + static_cast<size_t>(s) * f;
        for (int i = 0; i < f; ++i) {
            for (int j = 0; j <= i; ++j) A.at(i, j) += x[i] * x[j];
            A.at(f, i) += x[i];
            rhs[i] += x[i] * data.labels[s];
        }
        rhs[f] += data.labels[s];
    }
    A.at(f, f) = static_cast<double>(n);
    for (int i = 0; i < f; ++i) {
        A.at(i, i) += hyper.ridge;
        for (int j = 0; j < i; ++j) A.at(j, i) = A.at(i, j);
    }
    for (int i = 0; i < f; ++i) A.at(i, f) = A.at(f, i);

    ForecastModel model;
    model.kind = ModelKind::Linear;
    model.window_len = data.window_len;
    model.n_inputs = data.n_stocks;
    model.hidden = 0;
    model.train_seed = hyper.seed;
    try {
        model.params = solve_spd(std::move(A), std::move(rhs));
    } catch (const ContractError&) {
        throw std::runtime_error(
            "train: normal equations are singular; use a ridge penalty > 0");
    }
    model.train_mse = mse_on(model, data);
    return model;
}

ForecastModel train_mlp(const Dataset& data, const TrainHyper& hyper) {
    const int f = data.features.cols;
    const int h = hyper.hidden;
    if (h < 1) throw ValidationError("train: mlp hidden width must be >= 1");
    if (hyper.epochs < 1 || hyper.batch_size < 1)
        throw ValidationError("train: epochs and batch_size must be >= 1");

    // train in standardized units, then fold the scales back into the
    // parameters: v tanh((U/sx) x + c) b*sy is the same function family, so
    // the emitted model is exact on raw inputs
    double sx = 0.0, sy = 0.0;
    for (double v : data.features.a) sx += v * v;
    sx = std::sqrt(sx / static_cast<double>(data.features.a.size()));
    for (double v : data.labels) sy += v * v;
    sy = std::sqrt(sy / static_cast<double>(data.labels.size()));
    if (!(sx > 0.0)) sx = 1.0;
    if (!(sy > 0.0)) sy = 1.0;

    ForecastModel model;
    model.kind = ModelKind::Mlp;
    model.window_len = data.window_len;
    model.n_inputs = data.n_stocks;
    model.hidden = h;
    model.train_seed = hyper.seed;
    model.params.assign(model.expected_param_count(), 0.0);

    Rng rng(hyper.seed);
    double* U = model.params.data();
    double* c = U + static_cast<size_t>(h) * f;
    double* v = c + h;
    double* b = v + h;
    const double u_scale = 1.0 / std::sqrt(static_cast<double>(f));
    for (int i = 0; i < h * f; ++i) U[i] = rng.uniform(-u_scale, u_scale);
    for (int j = 0; j < h; ++j) c[j] = 0.0;
    const double v_scale = 1.0 / std::sqrt(static_cast<double>(h));
    for (int j = 0; j < h; ++j) v[j] = rng.uniform(-v_scale, v_scale);
    *b = 0.0;

    const int n = data.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> vel(model.params.size(), 0.0);
    std::vector<double> grad(model.params.size(), 0.0);
    std::vector<double> z(h), th(h);

    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        rng.shuffle(order);
        for (int start = 0; start < n; start += hyper.batch_size) {
            const int stop = std::min(n, start + hyper.batch_size);
            std::fill(grad.begin(), grad.end(), 0.0);
            double* gU = grad.data();
            double* gc = gU + static_cast<size_t>(h) * f;
            double* gv = gc + h;
            double* gb = gv + h;
            for (int s = start; s < stop; ++s) {
                const double* x = data.features.a.data() + order[s] * f;
                double y = *b;
                for (int j = 0; j < h; ++j) {
                    double zz = c[j];
                    const double* row = U + static_cast<size_t>(j) * f;
                    for (int i = 0; i < f; ++i) zz += row[i] * (x[i] / sx);
                    z[j] = zz;
                    th[j] = std::tanh(zz);
                    y += v[j] * th[j];
                }
                const double err = y - data.labels[order[s]] / sy;  // d(0.5 e^2)/dy
                *gb += err;
                for (int j = 0; j < h; ++j) {
                    gv[j] += err * th[j];
                    const double back = err * v[j] * (1.0 - th[j] * th[j]);
                    gc[j] += back;
                    double* grow = gU + static_cast<size_t>(j) * f;
                    for (int i = 0; i < f; ++i) grow[i] += back * (x[i] / sx);
                }
            }
            const double scale = hyper.learning_rate / static_cast<double>(stop - start);
            for (size_t i = 0; i < model.params.size(); ++i) {
                vel[i] = hyper.momentum * vel[i] - scale * grad[i];
                model.params[i] += vel[i];
            }
        }
    }

    // fold the standardization into the parameters
    for (int i = 0; i < h * f; ++i) U[i] /= sx;
    for (int j = 0; j < h; ++j) v[j] *= sy;
    *b *= sy;

    model.train_mse = mse_on(model, data);
    return model;
}

}  // namespace

ForecastModel train(ModelKind kind, const Dataset& data, const TrainHyper& hyper) {
    if (data.size() < 1) throw std::runtime_error("train: dataset is empty");
    ForecastModel m = (kind == ModelKind::Linear) ? train_linear(data, hyper)
                                                  : train_mlp(data, hyper);
    m.validate();
    return m;
}

double mse_on(const ForecastModel& model, const Dataset& data) {
    if (data.size() == 0) return 0.0;
    double sum = 0.0;
    const int f = data.features.cols;
    for (int s = 0; s < data.size(); ++s) {
        std::span<const double> x(data.features.a.data() + static_cast<size_t>(s) * f,
                                  static_cast<size_t>(f));
        const double e = model.value(x) - data.labels[s];
        sum += e * e;
    }
    return sum / data.size();
}

Signal predict(const ForecastModel& model, const Window& window, const Thresholds& thr) {
    thr.validate();
    if (window.window_len() != model.window_len || window.n_stocks() != model.n_inputs)
        throw ContractError("predict: window shape does not match model");
    Signal s;
    s.y_hat = model.value(window.x.flat());
    if (s.y_hat <= thr.tau_sell) s.action = Action::Sell;
    else if (s.y_hat >= thr.tau_buy) s.action = Action::Buy;
    else s.action = Action::Hold;
    return s;
}

std::vector<double> input_gradient(const ForecastModel& model, const Window& window) {
    if (window.window_len() != model.window_len || window.n_stocks() != model.n_inputs)
        throw ContractError("input_gradient: window shape does not match model");
    return model.gradient(window.x.flat());
}

void write_model_json(const ForecastModel& model, const std::string& path) {
    nlohmann::json j;
    j["kind"] = to_string(model.kind);
    j["W"] = model.window_len;
    j["N"] = model.n_inputs;
    j["H"] = model.hidden;
    j["params"] = model.params;
    j["train_seed"] = model.train_seed;
    j["train_mse"] = model.train_mse;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << j.dump(2) << '\n';
}

ForecastModel read_model_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DependencyError("missing model file " + path);
    nlohmann::json j = nlohmann::json::parse(in);
    ForecastModel m;
    m.kind = model_kind_from_string(j.at("kind").get<std::string>());
    m.window_len = j.at("W").get<int>();
    m.n_inputs = j.at("N").get<int>();
    m.hidden = j.at("H").get<int>();
    m.params = j.at("params").get<std::vector<double>>();
    m.train_seed = j.at("train_seed").get<uint64_t>();
    m.train_mse = j.at("train_mse").get<double>();
    m.validate();
    return m;
}

}  // namespace bta
