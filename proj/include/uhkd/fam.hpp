#pragma once

// Student-side feature alignment: FFT -> magnitude -> channel projection ->
// sequence-length projection -> normalization. Learnable and fully on the
// autodiff tape.

#include "uhkd/spectral.hpp"

namespace uhkd {

struct FamParams {
    Tensor channel_w; // (C^S, C^T)
    Tensor channel_b; // (C^T)
    Tensor seq_w;     // (N^S, N^T)
    Tensor seq_b;     // (N^T)
    Tensor gamma;     // (C^T)
    Tensor beta;      // (C^T)
    bool trainable = true;

    std::vector<Tensor*> tensors() {
        return {&channel_w, &channel_b, &seq_w, &seq_b, &gamma, &beta};
    }
};

struct FamConfig {
    bool use_fft = true;
};

struct FamOutput {
    Tensor tensor; // (B, N^T, C^T)
    int stage = 1;
};

// fan-in scaled uniform init (bound = 1/sqrt(fan_in)); biases zero, affine
// identity
inline FamParams fam_init(std::size_t Cs, std::size_t Ct, std::size_t Ns,
                          std::size_t Nt, Rng& rng) {
    if (!Cs || !Ct || !Ns || !Nt)
        throw DimensionError("fam_init: extents must be positive");
    FamParams p;
    const double bc = 1.0 / std::sqrt(double(Cs));
    const double bn = 1.0 / std::sqrt(double(Ns));
    p.channel_w = Tensor::uniform({Cs, Ct}, -bc, bc, rng);
    p.channel_b = Tensor::zeros({Ct});
    p.seq_w = Tensor::uniform({Ns, Nt}, -bn, bn, rng);
    p.seq_b = Tensor::zeros({Nt});
    p.gamma = Tensor::ones({Ct});
    p.beta = Tensor::zeros({Ct});
    return p;
}

namespace famdetail {

// student feature -> centered magnitude in sequence form (B, N^S, C^S)
inline Tensor seq_magnitude(const StageFeature& f, bool use_fft) {
    if (use_fft) {
        Spectrum spec = center_shift(fft_forward(f.tensor, f.layout));
        Tensor mag = magnitude(spec);
        return (f.layout == Layout::GRID) ? grid_to_seq(mag) : mag;
    }
    return (f.layout == Layout::GRID) ? grid_to_seq(f.tensor) : f.tensor;
}

} // namespace famdetail

inline FamOutput fam_forward(const StageFeature& f, const FamParams& p,
                             const FamConfig& cfg = {}) {
    validate_stage_feature(f);
    if (f.source != StageFeature::Source::Student)
        throw DimensionError("fam_forward: input must be student-sourced");

    Tensor seq = famdetail::seq_magnitude(f, cfg.use_fft); // (B, Ns, Cs)
    if (seq.extent(2) != p.channel_w.extent(0))
        throw DimensionError("fam_forward: channel extent " +
                             std::to_string(seq.extent(2)) + " does not match params " +
                             std::to_string(p.channel_w.extent(0)));
    if (seq.extent(1) != p.seq_w.extent(0))
        throw DimensionError("fam_forward: token extent " +
                             std::to_string(seq.extent(1)) + " does not match params " +
                             std::to_string(p.seq_w.extent(0)));

    // channel alignment (Linear_C; identical to a 1x1 conv on GRID inputs)
    Tensor ca = add(matmul(seq, p.channel_w), p.channel_b); // (B, Ns, Ct)

    // sequence alignment (Linear_N along the token axis)
    Tensor t = permute(ca, {0, 2, 1});           // (B, Ct, Ns)
    Tensor sa = add(matmul(t, p.seq_w), p.seq_b); // (B, Ct, Nt)
    sa = permute(sa, {0, 2, 1});                 // (B, Nt, Ct)

    FamOutput out;
    out.tensor = layer_norm(sa, p.gamma, p.beta);
    out.stage = f.stage;
    return out;
}

// Same forward; the caller keeps the parameters out of the trainable
// registry (Random Init. baseline). Student backbone gradients still flow.
inline FamOutput fam_forward_frozen(const StageFeature& f, const FamParams& p,
                                    const FamConfig& cfg = {}) {
    return fam_forward(f, p, cfg);
}

// ---------------------------------------------------------------------------
// Non-parametric alignment baselines
// ---------------------------------------------------------------------------

enum class InterpMode { Bilinear, Nearest, Linear };

namespace famdetail {

// differentiable 1D resample along the token axis of (B, N, C)
inline Tensor resample_tokens(const Tensor& x, std::size_t Nt, bool nearest) {
    const std::size_t B = x.extent(0), N = x.extent(1), C = x.extent(2);
    Tensor out({B, Nt, C});
    struct Taps {
        std::size_t i0, i1;
        double w0, w1;
    };
    std::vector<Taps> taps(Nt);
    for (std::size_t o = 0; o < Nt; ++o) {
        if (nearest) {
            const std::size_t srci = std::min(N - 1, o * N / Nt);
            taps[o] = {srci, srci, 1.0, 0.0};
        } else {
            const double src = (Nt > 1) ? double(o) * double(N - 1) / double(Nt - 1) : 0.0;
            const std::size_t i0 = std::min(N - 1, std::size_t(src));
            const std::size_t i1 = std::min(N - 1, i0 + 1);
            const double w1 = src - double(i0);
            taps[o] = {i0, i1, 1.0 - w1, w1};
        }
    }
    const auto& xv = x.data();
    auto& ov = out.data();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < Nt; ++o)
            for (std::size_t c = 0; c < C; ++c)
                ov[(b * Nt + o) * C + c] = taps[o].w0 * xv[(b * N + taps[o].i0) * C + c] +
                                           taps[o].w1 * xv[(b * N + taps[o].i1) * C + c];
    const bool rec = detail::recording({&x});
    detail::mark_output(out, rec);
    if (rec) {
        auto xp = x.impl(), op = out.impl();
        Tape::active()->record([xp, op, taps = std::move(taps), B, N, C, Nt]() {
            xp->ensure_grad();
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t o = 0; o < Nt; ++o)
                    for (std::size_t c = 0; c < C; ++c) {
                        const double g = op->g[(b * Nt + o) * C + c];
                        xp->g[(b * N + taps[o].i0) * C + c] += g * taps[o].w0;
                        xp->g[(b * N + taps[o].i1) * C + c] += g * taps[o].w1;
                    }
        });
    }
    return out;
}

// differentiable 2D resize of (B, C, H, W); bilinear uses align-corners
inline Tensor resize_grid(const Tensor& x, std::size_t Ht, std::size_t Wt,
                          bool nearest) {
    const std::size_t B = x.extent(0), C = x.extent(1), H = x.extent(2),
                      W = x.extent(3);
    struct Axis {
        std::size_t i0, i1;
        double w0, w1;
    };
    auto make_taps = [nearest](std::size_t n, std::size_t nt) {
        std::vector<Axis> t(nt);
        for (std::size_t o = 0; o < nt; ++o) {
            if (nearest) {
                const std::size_t i = std::min(n - 1, o * n / nt);
                t[o] = {i, i, 1.0, 0.0};
            } else {
                const double src =
                    (nt > 1) ? double(o) * double(n - 1) / double(nt - 1) : 0.0;
                const std::size_t i0 = std::min(n - 1, std::size_t(src));
                const std::size_t i1 = std::min(n - 1, i0 + 1);
                const double w1 = src - double(i0);
                t[o] = {i0, i1, 1.0 - w1, w1};
            }
        }
        return t;
    };
    const auto ty = make_taps(H, Ht);
    const auto tx = make_taps(W, Wt);

    Tensor out({B, C, Ht, Wt});
    const auto& xv = x.data();
    auto& ov = out.data();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
            const double* plane = xv.data() + (b * C + c) * H * W;
            double* oplane = ov.data() + (b * C + c) * Ht * Wt;
            for (std::size_t oy = 0; oy < Ht; ++oy)
                for (std::size_t ox = 0; ox < Wt; ++ox)
                    oplane[oy * Wt + ox] =
                        ty[oy].w0 * (tx[ox].w0 * plane[ty[oy].i0 * W + tx[ox].i0] +
                                     tx[ox].w1 * plane[ty[oy].i0 * W + tx[ox].i1]) +
                        ty[oy].w1 * (tx[ox].w0 * plane[ty[oy].i1 * W + tx[ox].i0] +
                                     tx[ox].w1 * plane[ty[oy].i1 * W + tx[ox].i1]);
        }
    const bool rec = detail::recording({&x});
    detail::mark_output(out, rec);
    if (rec) {
        auto xp = x.impl(), op = out.impl();
        Tape::active()->record([xp, op, ty, tx, B, C, H, W, Ht, Wt]() {
            xp->ensure_grad();
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t c = 0; c < C; ++c) {
                    double* gplane = xp->g.data() + (b * C + c) * H * W;
                    const double* oplane = op->g.data() + (b * C + c) * Ht * Wt;
                    for (std::size_t oy = 0; oy < Ht; ++oy)
                        for (std::size_t ox = 0; ox < Wt; ++ox) {
                            const double g = oplane[oy * Wt + ox];
                            gplane[ty[oy].i0 * W + tx[ox].i0] += g * ty[oy].w0 * tx[ox].w0;
                            gplane[ty[oy].i0 * W + tx[ox].i1] += g * ty[oy].w0 * tx[ox].w1;
                            gplane[ty[oy].i1 * W + tx[ox].i0] += g * ty[oy].w1 * tx[ox].w0;
                            gplane[ty[oy].i1 * W + tx[ox].i1] += g * ty[oy].w1 * tx[ox].w1;
                        }
                }
        });
    }
    return out;
}

// C^S < C^T: replicate channels cyclically; C^S > C^T: average contiguous
// channel groups with floor boundaries.
inline Tensor resolve_channels(const Tensor& seq, std::size_t Ct) {
    const std::size_t B = seq.extent(0), N = seq.extent(1), Cs = seq.extent(2);
    if (Cs == Ct) return seq;
    struct Group {
        std::size_t lo, hi; // [lo, hi)
    };
    std::vector<Group> groups(Ct);
    if (Cs < Ct) {
        for (std::size_t c = 0; c < Ct; ++c) groups[c] = {c % Cs, c % Cs + 1};
    } else {
        for (std::size_t c = 0; c < Ct; ++c)
            groups[c] = {c * Cs / Ct, (c + 1) * Cs / Ct};
    }
    Tensor out({B, N, Ct});
    const auto& xv = seq.data();
    auto& ov = out.data();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < Ct; ++c) {
                double acc = 0.0;
                for (std::size_t k = groups[c].lo; k < groups[c].hi; ++k)
                    acc += xv[(b * N + n) * Cs + k];
                ov[(b * N + n) * Ct + c] = acc / double(groups[c].hi - groups[c].lo);
            }
    const bool rec = detail::recording({&seq});
    detail::mark_output(out, rec);
    if (rec) {
        auto xp = seq.impl(), op = out.impl();
        Tape::active()->record([xp, op, groups = std::move(groups), B, N, Cs, Ct]() {
            xp->ensure_grad();
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t c = 0; c < Ct; ++c) {
                        const double g = op->g[(b * N + n) * Ct + c] /
                                         double(groups[c].hi - groups[c].lo);
                        for (std::size_t k = groups[c].lo; k < groups[c].hi; ++k)
                            xp->g[(b * N + n) * Cs + k] += g;
                    }
        });
    }
    return out;
}

} // namespace famdetail

// Non-parametric alignment of the student magnitude spectrum to the target
// (N^T, C^T). Bilinear/nearest act on GRID features; linear on SEQ tokens.
inline FamOutput interp_align(const StageFeature& f, InterpMode mode, std::size_t Nt,
                              std::size_t Ct, bool use_fft = true) {
    validate_stage_feature(f);
    if (f.source != StageFeature::Source::Student)
        throw DimensionError("interp_align: input must be student-sourced");

    Tensor seq;
    if (f.layout == Layout::GRID) {
        if (mode == InterpMode::Linear)
            throw DimensionError("interp_align: linear mode is SEQ-only");
        Tensor mag;
        if (use_fft) {
            mag = magnitude(center_shift(fft_forward(f.tensor, Layout::GRID)));
        } else {
            mag = f.tensor;
        }
        std::size_t side = 1;
        while (side * side < Nt) ++side;
        if (side * side == Nt) {
            mag = famdetail::resize_grid(mag, side, side,
                                         mode == InterpMode::Nearest);
            seq = grid_to_seq(mag);
        } else {
            // non-square target (SEQ teacher): resample the flattened tokens
            seq = famdetail::resample_tokens(grid_to_seq(mag), Nt,
                                             mode == InterpMode::Nearest);
        }
    } else {
        if (mode != InterpMode::Linear)
            throw DimensionError("interp_align: SEQ supports linear mode only");
        Tensor mag;
        if (use_fft) {
            mag = magnitude(center_shift(fft_forward(f.tensor, Layout::SEQ)));
        } else {
            mag = f.tensor;
        }
        seq = famdetail::resample_tokens(mag, Nt, false);
    }
    seq = famdetail::resolve_channels(seq, Ct);

    FamOutput out;
    out.tensor = seq;
    out.stage = f.stage;
    return out;
}

} // namespace uhkd
