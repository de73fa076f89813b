#pragma once

// Three-term distillation objective: frequency-domain MSE on aligned stage
// features, temperature-scaled KL on logits, label-smoothed cross entropy.

#include <array>
#include <utility>

#include "uhkd/fam.hpp"
#include "uhkd/ftm.hpp"

namespace uhkd {

struct LossBreakdown {
    double mse = 0.0;
    double kl = 0.0;
    double ce = 0.0;
    double total = 0.0;
    double lambda_kl = 0.4;
    double lambda_ce = 0.3;
    double tau = 4.0;
    std::array<double, 4> per_stage_mse{0.0, 0.0, 0.0, 0.0};
};

// mean squared error over all (B, N^T, C^T) entries; teacher side detached
inline Tensor freq_mse(const FtmOutput& t, const FamOutput& s) {
    if (t.tensor.shape() != s.tensor.shape())
        throw DimensionError("freq_mse: shape mismatch " + shape_str(t.tensor.shape()) +
                             " vs " + shape_str(s.tensor.shape()));
    return mean(square(sub(s.tensor, t.tensor.detach())));
}

// tau^2 * mean_batch KL(softmax(z_t/tau) || softmax(z_s/tau)), teacher detached
inline Tensor kd_kl(const Tensor& z_t, const Tensor& z_s, double tau) {
    if (tau <= 0.0) throw NumericDomainError("kd_kl: tau must be positive");
    if (z_t.shape() != z_s.shape() || z_t.rank() != 2 || z_t.extent(1) < 2)
        throw DimensionError("kd_kl: expected matching (B,K) logits with K >= 2");
    const std::size_t B = z_t.extent(0);

    Tensor log_pt = log_softmax(div(z_t.detach(), tau)).detach();
    Tensor pt = exp(log_pt);
    Tensor log_ps = log_softmax(div(z_s, tau));
    Tensor per = sum(mul(pt, sub(log_pt, log_ps)), {1});
    return mul(mean(reshape(per, {B})), tau * tau);
}

// cross entropy against targets smoothed to (1-eps) on the true class and
// eps/(K-1) elsewhere; mean over batch
inline Tensor cross_entropy_smoothed(const Tensor& z_s, const std::vector<int>& labels,
                                     double smoothing = 0.1) {
    if (z_s.rank() != 2 || z_s.extent(0) != labels.size())
        throw DimensionError("cross_entropy_smoothed: logits/label mismatch");
    if (smoothing < 0.0 || smoothing >= 1.0)
        throw NumericDomainError("cross_entropy_smoothed: smoothing must be in [0,1)");
    const std::size_t B = z_s.extent(0), K = z_s.extent(1);
    const double off = (K > 1) ? smoothing / double(K - 1) : 0.0;

    Tensor target({B, K});
    for (std::size_t b = 0; b < B; ++b) {
        const int y = labels[b];
        if (y < 0 || std::size_t(y) >= K)
            throw NumericDomainError("cross_entropy_smoothed: label " +
                                     std::to_string(y) + " out of range [0," +
                                     std::to_string(K) + ")");
        for (std::size_t k = 0; k < K; ++k)
            target.data()[b * K + k] = (std::size_t(y) == k) ? 1.0 - smoothing : off;
    }
    Tensor per = sum(mul(target, log_softmax(z_s)), {1});
    return neg(mean(reshape(per, {B})));
}

// Joint objective: (1 - l_kl - l_ce) * L_MSE + l_kl * L_KL + l_ce * L_CE.
// L_MSE is the mean over the selected stage branches; per_stage_mse keeps one
// slot per stage (zero for unselected stages).
inline std::pair<Tensor, LossBreakdown> total_loss(
    const std::vector<std::pair<FtmOutput, FamOutput>>& stage_pairs,
    const Tensor& z_t, const Tensor& z_s, const std::vector<int>& labels,
    double lambda_kl = 0.4, double lambda_ce = 0.3, double tau = 4.0,
    double smoothing = 0.1) {
    if (lambda_kl < 0.0 || lambda_ce < 0.0 || lambda_kl + lambda_ce > 1.0)
        throw NumericDomainError("total_loss: weights must satisfy 0 <= l_kl + l_ce <= 1");

    LossBreakdown bd;
    bd.lambda_kl = lambda_kl;
    bd.lambda_ce = lambda_ce;
    bd.tau = tau;

    Tensor mse_sum = Tensor::scalar(0.0);
    for (const auto& [t, s] : stage_pairs) {
        Tensor m = freq_mse(t, s);
        const int st = t.stage;
        if (st >= 1 && st <= 4) bd.per_stage_mse[std::size_t(st - 1)] = m.item();
        mse_sum = add(mse_sum, m);
    }
    Tensor mse = stage_pairs.empty()
                     ? Tensor::scalar(0.0)
                     : div(mse_sum, double(stage_pairs.size()));
    Tensor kl = kd_kl(z_t, z_s, tau);
    Tensor ce = cross_entropy_smoothed(z_s, labels, smoothing);

    const double lm = 1.0 - lambda_kl - lambda_ce;
    Tensor total = add(add(mul(mse, lm), mul(kl, lambda_kl)), mul(ce, lambda_ce));

    bd.mse = mse.item();
    bd.kl = kl.item();
    bd.ce = ce.item();
    bd.total = total.item();
    return {total, bd};
}

} // namespace uhkd
