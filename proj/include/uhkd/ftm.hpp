#pragma once

// Teacher-side feature transformation: FFT -> magnitude -> frequency filter
// -> average-pool -> flatten to a unified (B, N, C) sequence. Non-learnable;
// the teacher path never carries gradient.

#include "uhkd/spectral.hpp"

namespace uhkd {

struct FtmConfig {
    double sigma_low = 0.5;
    double sigma_high = 0.5;
    double high_weight = 0.2;
    std::size_t pool_factor = 2;
    // ablation switches
    bool use_fft = true;
    bool use_filter = true;
    bool use_downsample = true;
};

struct FtmOutput {
    Tensor tensor; // (B, N^T, C^T)
    int stage = 1;
};

// Output (tokens, channels) for a given input feature shape, without running
// the transform. Used to size the paired FAM.
inline std::pair<std::size_t, std::size_t> ftm_output_extents(const Shape& s,
                                                              Layout layout,
                                                              const FtmConfig& cfg) {
    const std::size_t f = cfg.use_downsample ? cfg.pool_factor : 1;
    if (layout == Layout::SEQ) {
        const std::size_t N = cfg.use_fft ? fftdetail::next_pow2(s[1]) : s[1];
        const std::size_t fn = std::min(f, N);
        if (N % fn != 0)
            throw DimensionError("ftm: tokens not divisible by pool factor");
        return {N / fn, s[2]};
    }
    const std::size_t H = cfg.use_fft ? fftdetail::next_pow2(s[2]) : s[2];
    const std::size_t W = cfg.use_fft ? fftdetail::next_pow2(s[3]) : s[3];
    const std::size_t fh = std::min(f, H), fw = std::min(f, W);
    if (H % fh != 0 || W % fw != 0)
        throw DimensionError("ftm: grid not divisible by pool factor");
    return {(H / fh) * (W / fw), s[1]};
}

inline FtmOutput ftm_forward(const StageFeature& f, const FtmConfig& cfg) {
    validate_stage_feature(f);
    if (f.source != StageFeature::Source::Teacher)
        throw DimensionError("ftm_forward: input must be teacher-sourced");

    NoGradGuard ng; // teacher is frozen
    const std::size_t factor = cfg.use_downsample ? cfg.pool_factor : 1;

    Tensor cur;
    if (cfg.use_fft) {
        Spectrum spec = center_shift(fft_forward(f.tensor, f.layout));
        cur = magnitude(spec);
        if (cfg.use_filter) {
            Shape mext = (f.layout == Layout::SEQ)
                             ? Shape{cur.extent(1)}
                             : Shape{cur.extent(2), cur.extent(3)};
            FrequencyMask m =
                build_mask(mext, cfg.sigma_low, cfg.sigma_high, cfg.high_weight);
            cur = apply_mask(cur, m);
        }
    } else {
        // spatial-domain ablation arm: align raw features directly
        cur = f.tensor.detach();
    }

    cur = avg_downsample(cur, f.layout, factor);
    if (f.layout == Layout::GRID) cur = grid_to_seq(cur);

    FtmOutput out;
    out.tensor = cur.detach();
    out.stage = f.stage;
    return out;
}

} // namespace uhkd
