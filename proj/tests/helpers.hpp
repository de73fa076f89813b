#pragma once

#include <cmath>
#include <complex>
#include <vector>

#include "uhkd/tensor.hpp"

namespace testutil {

using uhkd::Tensor;

inline uhkd::Rng& rng() {
    static uhkd::Rng r(0xC0FFEE);
    return r;
}

// central finite differences against the analytic gradient; loss_fn must be
// re-runnable and read x's current data
template <class F>
inline void check_grad(Tensor& x, F loss_fn, double eps = 1e-5, double rtol = 1e-4,
                       double atol = 1e-7) {
    x.set_requires_grad(true);
    x.zero_grad();
    std::vector<double> analytic;
    {
        uhkd::Tape tape;
        Tensor L = loss_fn();
        uhkd::backward(L);
        analytic = x.grad_data();
    }
    uhkd::NoGradGuard ng;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x.data()[i];
        x.data()[i] = v + eps;
        const double fp = loss_fn().item();
        x.data()[i] = v - eps;
        const double fm = loss_fn().item();
        x.data()[i] = v;
        const double fd = (fp - fm) / (2.0 * eps);
        const double err = std::abs(analytic[i] - fd);
        const double scale = std::max(std::abs(fd), std::abs(analytic[i]));
        INFO("index ", i, ": analytic ", analytic[i], " vs fd ", fd);
        CHECK(err <= atol + rtol * scale);
    }
}

// Eq. 1 summed directly: X[k] = sum_n x[n] e^{-2 pi i k n / N}
inline std::vector<std::complex<double>> naive_dft(const std::vector<double>& x) {
    const std::size_t N = x.size();
    std::vector<std::complex<double>> X(N);
    const double w = -2.0 * M_PI / double(N);
    for (std::size_t k = 0; k < N; ++k) {
        std::complex<double> acc{0.0, 0.0};
        for (std::size_t n = 0; n < N; ++n)
            acc += x[n] * std::complex<double>(std::cos(w * double(k * n)),
                                               std::sin(w * double(k * n)));
        X[k] = acc;
    }
    return X;
}

inline Tensor random_tensor(uhkd::Shape s, double lo = -1.0, double hi = 1.0) {
    return Tensor::uniform(std::move(s), lo, hi, rng());
}

} // namespace testutil
