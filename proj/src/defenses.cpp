#include "bta/defenses.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace bta {

void DefenseConfig::validate(int window_len) const {
    if (!(adv_ratio >= 0.0 && adv_ratio <= 1.0))
        throw ValidationError("defense: adv_ratio must be in [0, 1]");
    if (adv_eps < 0.0) throw ValidationError("defense: adv_eps must be >= 0");
    if (smooth_width < 1 || smooth_width > window_len || smooth_width % 2 == 0)
        throw ValidationError("defense: smooth_width must be odd and in [1, W]");
    if (!(detect_z > 0.0)) throw ValidationError("defense: detect_z must be > 0");
    if (detect_count < 1) throw ValidationError("defense: detect_count must be >= 1");
    if (!(kappa > 0.0)) throw ValidationError("defense: kappa must be > 0");
}

AdversarialTrainResult adversarial_train(ModelKind kind, const Dataset& data,
                                         const DefenseConfig& config, const TrainHyper& hyper) {
    config.validate(data.window_len);

    Dataset mixed = data;
    if (config.adv_ratio > 0.0 && config.adv_eps > 0.0) {
        // craft against a plainly trained twin, then retrain on the mix
        const ForecastModel twin = train(kind, data, hyper);
        const int n = data.size();
        const int f = data.features.cols;
        std::vector<size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        Rng rng(derive_seed(hyper.seed, "adv_train_selection"));
        rng.shuffle(order);
        const int replaced = static_cast<int>(config.adv_ratio * n);
        for (int k = 0; k < replaced; ++k) {
            double* x = mixed.features.a.data() + order[k] * f;
            const std::vector<double> g = twin.gradient({x, static_cast<size_t>(f)});
            for (int i = 0; i < f; ++i) x[i] += -config.adv_eps * sign0(g[i]);
        }
    }

    AdversarialTrainResult result{train(kind, mixed, hyper), 0.0, 0.0};
    result.clean_mse = mse_on(result.model, data);

    // adversarial MSE: FGSM against the returned model, applied to every sample
    Dataset advset = data;
    const int f = data.features.cols;
    const double eps = config.adv_eps > 0.0 ? config.adv_eps : 0.0;
    for (int s = 0; s < advset.size(); ++s) {
        double* x = advset.features.a.data() + static_cast<size_t>(s) * f;
        const std::vector<double> g = result.model.gradient({x, static_cast<size_t>(f)});
        for (int i = 0; i < f; ++i) x[i] += -eps * sign0(g[i]);
    }
    result.adv_mse = mse_on(result.model, advset);
    return result;
}

Matrix smooth_window(const Matrix& x, int m) {
    if (m == 1) return x;
    Matrix out(x.rows, x.cols);
    const int r = m / 2;
    std::vector<double> buf;
    for (int c = 0; c < x.cols; ++c) {
        for (int t = 0; t < x.rows; ++t) {
            const int lo = std::max(0, t - r);
            const int hi = std::min(x.rows - 1, t + r);
            buf.clear();
            for (int k = lo; k <= hi; ++k) buf.push_back(x.at(k, c));
            std::sort(buf.begin(), buf.end());
            const size_t len = buf.size();
            out.at(t, c) = (len % 2 == 1) ? buf[len / 2]
                                          : 0.5 * (buf[len / 2 - 1] + buf[len / 2]);
        }
    }
    return out;
}

Signal smooth_predict(const ForecastModel& model, const Window& window, int m,
                      const Thresholds& thr, Window* smoothed_out) {
    if (m < 1 || m > window.window_len() || m % 2 == 0)
        throw ValidationError("smooth_predict: width must be odd and in [1, W]");
    Window smoothed{smooth_window(window.x, m), window.end_step};
    if (smoothed_out) *smoothed_out = smoothed;
    return predict(model, smoothed, thr);
}

DetectionResult detect_coordination(const std::vector<std::vector<double>>& net_volumes,
                                    const std::vector<StockMeta>& meta,
                                    const DefenseConfig& config) {
    DetectionResult result;
    result.alarm.reserve(net_volumes.size());
    for (const auto& step_vol : net_volumes) {
        if (step_vol.size() != meta.size())
            throw ContractError("detect_coordination: volume row length must match meta");
        std::vector<std::string> hot;
        for (size_t i = 0; i < meta.size(); ++i) {
            const double z = step_vol[i] / (config.kappa * meta[i].adv);
            if (std::abs(z) > config.detect_z) hot.push_back(meta[i].ticker);
        }
        const bool alarm = static_cast<int>(hot.size()) >= config.detect_count;
        result.alarm.push_back(alarm ? 1 : 0);
        if (alarm) ++result.alarm_count;
        result.contributors.push_back(alarm ? hot : std::vector<std::string>{});
    }
    return result;
}

void write_defense_csv(const std::vector<DefenseReportRow>& rows, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << "defense,param,clean_mse,adv_mse,attack_eps_to_flip,alarm_rate,false_positive_rate\n";
    auto cell = [](const std::optional<double>& v) -> std::string {
        if (!v) return "";
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.17g", *v);
        return buf;
    };
    for (const auto& r : rows) {
        out << r.defense << ',' << cell(r.param) << ',' << cell(r.clean_mse) << ','
            << cell(r.adv_mse) << ',' << cell(r.attack_eps_to_flip) << ',' << cell(r.alarm_rate)
            << ',' << cell(r.false_positive_rate) << '\n';
    }
}

}  // namespace bta
