#pragma once

// AdamW with decoupled weight decay, cosine schedule with linear warm-up,
// and global-norm gradient clipping.

#include <map>

#include "uhkd/models.hpp"

namespace uhkd {

// linear ramp 0 -> lr_max over [0, warmup], then cosine decay to 0 at horizon
inline double lr_schedule(std::size_t step, std::size_t warmup, std::size_t horizon,
                          double lr_max) {
    if (warmup > 0 && step < warmup) return lr_max * double(step) / double(warmup);
    if (step >= horizon) return 0.0;
    const double progress =
        double(step - warmup) / double(horizon > warmup ? horizon - warmup : 1);
    return lr_max * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

// Scales all trainable grads so the global L2 norm is at most max_norm.
// Returns the pre-clip norm.
inline double clip_global_norm(std::vector<Tensor*> params, double max_norm) {
    double sq = 0.0;
    for (Tensor* p : params) {
        if (!p->has_grad()) continue;
        for (double g : p->grad_data()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double scale = max_norm / norm;
        for (Tensor* p : params) {
            if (!p->has_grad()) continue;
            for (double& g : p->grad_data()) g *= scale;
        }
    }
    return norm;
}

class AdamW {
public:
    struct Hyper {
        double beta1 = 0.9;
        double beta2 = 0.999;
        double weight_decay = 0.005;
        double eps = 1e-8;
    };

    AdamW() = default;
    explicit AdamW(Hyper h) : h_(h) {}

    // One update over the named trainable parameters. `lr` already reflects
    // the schedule; `t` is the 1-based step count for bias correction.
    void step(const std::vector<std::pair<std::string, Tensor*>>& params, double lr,
              std::size_t t) {
        const double bc1 = 1.0 - std::pow(h_.beta1, double(t));
        const double bc2 = 1.0 - std::pow(h_.beta2, double(t));
        for (const auto& [path, p] : params) {
            auto& st = state_[path];
            auto& w = p->data();
            auto& g = p->grad_data();
            if (st.m.size() != w.size()) {
                st.m.assign(w.size(), 0.0);
                st.v.assign(w.size(), 0.0);
            }
            for (std::size_t i = 0; i < w.size(); ++i) {
                if (!std::isfinite(g[i]))
                    throw NumericDomainError("AdamW: non-finite gradient at " + path);
                st.m[i] = h_.beta1 * st.m[i] + (1.0 - h_.beta1) * g[i];
                st.v[i] = h_.beta2 * st.v[i] + (1.0 - h_.beta2) * g[i] * g[i];
                const double mhat = st.m[i] / bc1;
                const double vhat = st.v[i] / bc2;
                w[i] -= lr * (mhat / (std::sqrt(vhat) + h_.eps) +
                              h_.weight_decay * w[i]);
            }
        }
    }

private:
    struct State {
        std::vector<double> m, v;
    };
    Hyper h_;
    std::map<std::string, State> state_;
};

} // namespace uhkd
