#pragma once

// FFT, magnitude spectra, centered Gaussian frequency masks, average-pool
// downsampling. Shared numeric core of the teacher and student feature paths.

#include <complex>
#include <cstddef>
#include <map>
#include <vector>

#include "uhkd/tensor.hpp"

namespace uhkd {

enum class Layout { SEQ, GRID };

struct StageFeature {
    Tensor tensor;
    Layout layout = Layout::SEQ;
    int stage = 1; // 1..4
    enum class Source { Teacher, Student } source = Source::Teacher;
};

inline void validate_stage_feature(const StageFeature& f) {
    const std::size_t want = (f.layout == Layout::SEQ) ? 3 : 4;
    if (f.tensor.rank() != want)
        throw DimensionError("StageFeature: layout/rank mismatch, rank " +
                             std::to_string(f.tensor.rank()));
    if (f.stage < 1 || f.stage > 4)
        throw DimensionError("StageFeature: stage out of range");
}

struct Spectrum {
    Tensor real;
    Tensor imag;
    bool centered = false;
    Layout layout = Layout::SEQ; // 1 transformed axis for SEQ, 2 for GRID
    std::size_t transformed_axes() const { return layout == Layout::SEQ ? 1u : 2u; }
};

namespace fftdetail {

inline bool is_pow2(std::size_t n) { return n && (n & (n - 1)) == 0; }

inline std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

// half-size twiddle table e^{-2*pi*i*k/N}, k in [0, N/2)
inline const std::vector<std::complex<double>>& twiddles(std::size_t n) {
    static std::map<std::size_t, std::vector<std::complex<double>>> cache;
    auto it = cache.find(n);
    if (it == cache.end()) {
        std::vector<std::complex<double>> t(n / 2);
        const double base = -2.0 * 3.14159265358979323846264338327950288 / double(n);
        for (std::size_t k = 0; k < n / 2; ++k)
            t[k] = std::polar(1.0, base * double(k));
        it = cache.emplace(n, std::move(t)).first;
    }
    return it->second;
}

// in-place iterative radix-2; invert_sign uses e^{+i...} (no 1/N scaling)
inline void fft_radix2(double* re, double* im, std::size_t n, bool invert_sign) {
    if (n == 0) throw DimensionError("fft: zero-length axis");
    if (n == 1) return;
    if (!is_pow2(n)) throw DimensionError("fft: length not a power of two");

    // bit-reversal permutation
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) {
            std::swap(re[i], re[j]);
            std::swap(im[i], im[j]);
        }
    }

    const auto& tw = twiddles(n);
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const std::size_t step = n / len;
        for (std::size_t i = 0; i < n; i += len) {
            for (std::size_t k = 0; k < len / 2; ++k) {
                const auto w = tw[k * step];
                const double wr = w.real();
                const double wi = invert_sign ? -w.imag() : w.imag();
                const std::size_t a = i + k, b = i + k + len / 2;
                const double tr = re[b] * wr - im[b] * wi;
                const double ti = re[b] * wi + im[b] * wr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
        }
    }
}

// strided 1D transform: gather, transform, scatter
inline void fft_strided(double* re, double* im, std::size_t n, std::size_t stride,
                        bool invert_sign, std::vector<double>& sr,
                        std::vector<double>& si) {
    sr.resize(n);
    si.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        sr[k] = re[k * stride];
        si[k] = im[k * stride];
    }
    fft_radix2(sr.data(), si.data(), n, invert_sign);
    for (std::size_t k = 0; k < n; ++k) {
        re[k * stride] = sr[k];
        im[k * stride] = si[k];
    }
}

// Full complex transform over the trailing transformed axes of a padded
// buffer laid out per Layout: SEQ (B, Np, C) along axis 1; GRID (B, C, Hp, Wp)
// along the last two axes.
inline void transform_buffer(std::vector<double>& re, std::vector<double>& im,
                             const Shape& shape, Layout layout, bool invert_sign) {
    std::vector<double> sr, si;
    if (layout == Layout::SEQ) {
        const std::size_t B = shape[0], N = shape[1], C = shape[2];
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c)
                fft_strided(re.data() + b * N * C + c, im.data() + b * N * C + c, N, C,
                            invert_sign, sr, si);
    } else {
        const std::size_t B = shape[0], C = shape[1], H = shape[2], W = shape[3];
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c) {
                double* pr = re.data() + (b * C + c) * H * W;
                double* pi = im.data() + (b * C + c) * H * W;
                for (std::size_t y = 0; y < H; ++y)
                    fft_radix2(pr + y * W, pi + y * W, W, invert_sign);
                for (std::size_t x = 0; x < W; ++x)
                    fft_strided(pr + x, pi + x, H, W, invert_sign, sr, si);
            }
    }
}

} // namespace fftdetail

// Zero-pad transformed axes up to the next power of two (applied identically
// to teacher and student paths so alignment extents agree).
inline Shape fft_padded_shape(const Shape& s, Layout layout) {
    Shape out = s;
    if (layout == Layout::SEQ) {
        out[1] = fftdetail::next_pow2(s[1]);
    } else {
        out[2] = fftdetail::next_pow2(s[2]);
        out[3] = fftdetail::next_pow2(s[3]);
    }
    return out;
}

// Forward FFT of a real feature tensor. SEQ: 1D along the token axis per
// channel; GRID: 2D along (H, W) per channel. Output is uncentered.
// Differentiable: the transform is linear, backward applies the adjoint
// (sign-inverted transform of the complex cotangent, real part kept).
inline Spectrum fft_forward(const Tensor& x, Layout layout) {
    const Shape& xs = x.shape();
    const std::size_t want = (layout == Layout::SEQ) ? 3 : 4;
    if (xs.size() != want)
        throw DimensionError("fft_forward: rank " + std::to_string(xs.size()) +
                             " does not match layout");
    for (auto e : xs)
        if (e == 0) throw DimensionError("fft_forward: zero-length axis");

    const Shape ps = fft_padded_shape(xs, layout);
    std::vector<double> re(numel(ps), 0.0), im(numel(ps), 0.0);

    // copy x into the zero-padded buffer
    if (layout == Layout::SEQ) {
        const std::size_t B = xs[0], N = xs[1], C = xs[2], Np = ps[1];
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t nidx = 0; nidx < N; ++nidx)
                for (std::size_t c = 0; c < C; ++c)
                    re[(b * Np + nidx) * C + c] = x.data()[(b * N + nidx) * C + c];
    } else {
        const std::size_t B = xs[0], C = xs[1], H = xs[2], W = xs[3];
        const std::size_t Hp = ps[2], Wp = ps[3];
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t y = 0; y < H; ++y)
                    for (std::size_t xx = 0; xx < W; ++xx)
                        re[((b * C + c) * Hp + y) * Wp + xx] =
                            x.data()[((b * C + c) * H + y) * W + xx];
    }

    fftdetail::transform_buffer(re, im, ps, layout, false);

    Spectrum s;
    s.real = Tensor(ps, std::move(re));
    s.imag = Tensor(ps, std::move(im));
    s.centered = false;
    s.layout = layout;

    const bool rec = detail::recording({&x});
    detail::mark_output(s.real, rec);
    detail::mark_output(s.imag, rec);
    if (rec) {
        auto xp = x.impl();
        auto rp = s.real.impl(), ip = s.imag.impl();
        Tape::active()->record([xp, rp, ip, ps, layout]() {
            xp->ensure_grad();
            std::vector<double> gr(rp->g), gi(ip->g);
            fftdetail::transform_buffer(gr, gi, ps, layout, true);
            // crop the padded region back onto x's grad; real part only
            const Shape& xs2 = xp->shape;
            if (layout == Layout::SEQ) {
                const std::size_t B = xs2[0], N = xs2[1], C = xs2[2], Np = ps[1];
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t nidx = 0; nidx < N; ++nidx)
                        for (std::size_t c = 0; c < C; ++c)
                            xp->g[(b * N + nidx) * C + c] += gr[(b * Np + nidx) * C + c];
            } else {
                const std::size_t B = xs2[0], C = xs2[1], H = xs2[2], W = xs2[3];
                const std::size_t Hp = ps[2], Wp = ps[3];
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t y = 0; y < H; ++y)
                            for (std::size_t xx = 0; xx < W; ++xx)
                                xp->g[((b * C + c) * H + y) * W + xx] +=
                                    gr[((b * C + c) * Hp + y) * Wp + xx];
            }
        });
    }
    return s;
}

// Elementwise sqrt(re^2 + im^2). Subgradient 0 at exact zeros (1e-12 floor in
// the backward denominator).
inline Tensor magnitude(const Spectrum& s) {
    if (s.real.shape() != s.imag.shape())
        throw DimensionError("magnitude: real/imag shape mismatch");
    Tensor out(s.real.shape());
    const auto& rv = s.real.data();
    const auto& iv = s.imag.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < rv.size(); ++i)
        ov[i] = std::sqrt(rv[i] * rv[i] + iv[i] * iv[i]);

    const bool rec = detail::recording({&s.real, &s.imag});
    detail::mark_output(out, rec);
    if (rec) {
        auto rp = s.real.impl(), ip = s.imag.impl(), op = out.impl();
        Tape::active()->record([rp, ip, op]() {
            rp->ensure_grad();
            ip->ensure_grad();
            for (std::size_t i = 0; i < op->v.size(); ++i) {
                const double denom = op->v[i] > 1e-12 ? op->v[i] : 1e-12;
                const double g = op->g[i] / denom;
                rp->g[i] += g * rp->v[i];
                ip->g[i] += g * ip->v[i];
            }
        });
    }
    return out;
}

namespace fftdetail {

// circular roll by `shift` along `axis` (differentiable permutation)
inline Tensor roll(const Tensor& a, std::size_t axis, std::size_t shift) {
    const Shape& s = a.shape();
    const Shape str = row_major_strides(s);
    const std::size_t ext = s.at(axis);
    shift %= ext;
    const std::size_t n = a.size();
    std::vector<std::size_t> src(n);
    Shape idx(s.size(), 0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = idx[axis];
        const std::size_t ksrc = (k + ext - shift) % ext;
        src[i] = i + (ksrc - k) * str[axis];
        for (std::size_t d = s.size(); d-- > 0;) {
            if (++idx[d] < s[d]) break;
            idx[d] = 0;
        }
    }
    Tensor out(s);
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[src[i]];
    const bool rec = detail::recording({&a});
    detail::mark_output(out, rec);
    if (rec) {
        auto ap = a.impl(), op = out.impl();
        Tape::active()->record([ap, op, src = std::move(src)]() {
            ap->ensure_grad();
            for (std::size_t i = 0; i < src.size(); ++i) ap->g[src[i]] += op->g[i];
        });
    }
    return out;
}

} // namespace fftdetail

// Rotates every transformed axis by floor(extent/2), moving DC to the
// midpoint.
inline Spectrum center_shift(const Spectrum& s) {
    if (s.centered) throw DimensionError("center_shift: spectrum already centered");
    Spectrum out = s;
    if (s.layout == Layout::SEQ) {
        const std::size_t N = s.real.extent(1);
        out.real = fftdetail::roll(s.real, 1, N / 2);
        out.imag = fftdetail::roll(s.imag, 1, N / 2);
    } else {
        const std::size_t H = s.real.extent(2), W = s.real.extent(3);
        out.real = fftdetail::roll(fftdetail::roll(s.real, 2, H / 2), 3, W / 2);
        out.imag = fftdetail::roll(fftdetail::roll(s.imag, 2, H / 2), 3, W / 2);
    }
    out.centered = true;
    return out;
}

inline Spectrum inverse_shift(const Spectrum& s) {
    if (!s.centered) throw DimensionError("inverse_shift: spectrum not centered");
    Spectrum out = s;
    if (s.layout == Layout::SEQ) {
        const std::size_t N = s.real.extent(1);
        out.real = fftdetail::roll(s.real, 1, N - N / 2);
        out.imag = fftdetail::roll(s.imag, 1, N - N / 2);
    } else {
        const std::size_t H = s.real.extent(2), W = s.real.extent(3);
        out.real = fftdetail::roll(fftdetail::roll(s.real, 2, H - H / 2), 3, W - W / 2);
        out.imag = fftdetail::roll(fftdetail::roll(s.imag, 2, H - H / 2), 3, W - W / 2);
    }
    out.centered = false;
    return out;
}

// ---------------------------------------------------------------------------
// Frequency mask
// ---------------------------------------------------------------------------

struct FrequencyMask {
    Tensor values; // in [0,1], shape = transformed-axis extents
    double sigma_low = 0.5;
    double sigma_high = 0.5;
    double high_weight = 0.2;
};

// Gaussian low band plus weighted complementary high band over normalized
// center distance: M = clamp(exp(-(d/s_lo)^2) + w*(1 - exp(-(d/s_hi)^2)), 0, 1)
inline FrequencyMask build_mask(const Shape& extents, double sigma_low,
                                double sigma_high, double high_weight) {
    if (sigma_low <= 0.0 || sigma_high <= 0.0)
        throw NumericDomainError("build_mask: sigma must be positive");
    if (high_weight < 0.0 || high_weight > 1.0)
        throw NumericDomainError("build_mask: high_weight must be in [0,1]");
    if (extents.empty() || extents.size() > 2)
        throw DimensionError("build_mask: expected 1 or 2 extents");

    FrequencyMask m;
    m.sigma_low = sigma_low;
    m.sigma_high = sigma_high;
    m.high_weight = high_weight;
    m.values = Tensor(extents);

    std::vector<double> centers(extents.size());
    for (std::size_t d = 0; d < extents.size(); ++d)
        centers[d] = double(extents[d] / 2);
    double dmax2 = 0.0;
    for (std::size_t d = 0; d < extents.size(); ++d) {
        const double far = std::max(centers[d], double(extents[d] - 1) - centers[d]);
        dmax2 += far * far;
    }
    const double dmax = std::sqrt(dmax2);

    auto& v = m.values.data();
    Shape idx(extents.size(), 0);
    for (std::size_t i = 0; i < v.size(); ++i) {
        double r2 = 0.0;
        for (std::size_t d = 0; d < extents.size(); ++d) {
            const double dd = double(idx[d]) - centers[d];
            r2 += dd * dd;
        }
        const double d = dmax > 0.0 ? std::sqrt(r2) / dmax : 0.0;
        const double lo = std::exp(-(d / sigma_low) * (d / sigma_low));
        const double hi = 1.0 - std::exp(-(d / sigma_high) * (d / sigma_high));
        v[i] = std::clamp(lo + high_weight * hi, 0.0, 1.0);
        for (std::size_t dd = extents.size(); dd-- > 0;) {
            if (++idx[dd] < extents[dd]) break;
            idx[dd] = 0;
        }
    }
    return m;
}

// Hadamard product of a centered magnitude spectrum with the mask, broadcast
// over batch and channel axes. SEQ mag is (B,N,C) with mask (N); GRID mag is
// (B,C,H,W) with mask (H,W).
inline Tensor apply_mask(const Tensor& spec_mag, const FrequencyMask& m) {
    const Shape& s = spec_mag.shape();
    const Shape& ms = m.values.shape();
    if (s.size() == 3) {
        if (ms.size() != 1 || ms[0] != s[1])
            throw DimensionError("apply_mask: mask extent " + shape_str(ms) +
                                 " does not match SEQ tokens " + shape_str(s));
        return mul(spec_mag, reshape(m.values, {ms[0], 1}));
    }
    if (s.size() == 4) {
        if (ms.size() != 2 || ms[0] != s[2] || ms[1] != s[3])
            throw DimensionError("apply_mask: mask extents " + shape_str(ms) +
                                 " do not match GRID " + shape_str(s));
        return mul(spec_mag, m.values);
    }
    throw DimensionError("apply_mask: expected rank 3 or 4, got " + shape_str(s));
}

// ---------------------------------------------------------------------------
// Average-pool downsampling (mean-preserving, parameter-free)
// ---------------------------------------------------------------------------

inline Tensor avg_downsample(const Tensor& x, Layout layout, std::size_t factor) {
    if (factor == 0) throw DimensionError("avg_downsample: zero factor");
    if (factor == 1) return x;
    const Shape& s = x.shape();
    if (layout == Layout::SEQ) {
        if (s.size() != 3) throw DimensionError("avg_downsample: SEQ expects rank 3");
        factor = std::min(factor, s[1]); // short sequences pool over what exists
        if (s[1] % factor != 0)
            throw DimensionError("avg_downsample: token count " + std::to_string(s[1]) +
                                 " not divisible by factor " + std::to_string(factor));
        if (factor == 1) return x;
        const std::size_t B = s[0], N = s[1], C = s[2], No = N / factor;
        Tensor out({B, No, C});
        const auto& xv = x.data();
        auto& ov = out.data();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t o = 0; o < No; ++o)
                for (std::size_t c = 0; c < C; ++c) {
                    double acc = 0.0;
                    for (std::size_t k = 0; k < factor; ++k)
                        acc += xv[(b * N + o * factor + k) * C + c];
                    ov[(b * No + o) * C + c] = acc / double(factor);
                }
        const bool rec = detail::recording({&x});
        detail::mark_output(out, rec);
        if (rec) {
            auto xp = x.impl(), op = out.impl();
            Tape::active()->record([xp, op, B, N, C, No, factor]() {
                xp->ensure_grad();
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t o = 0; o < No; ++o)
                        for (std::size_t c = 0; c < C; ++c) {
                            const double g =
                                op->g[(b * No + o) * C + c] / double(factor);
                            for (std::size_t k = 0; k < factor; ++k)
                                xp->g[(b * N + o * factor + k) * C + c] += g;
                        }
            });
        }
        return out;
    }

    if (s.size() != 4) throw DimensionError("avg_downsample: GRID expects rank 4");
    // per-axis: tiny grids pool over what exists
    const std::size_t fh = std::min(factor, s[2]), fw = std::min(factor, s[3]);
    if (s[2] % fh != 0 || s[3] % fw != 0)
        throw DimensionError("avg_downsample: extents " + shape_str(s) +
                             " not divisible by factor " + std::to_string(factor));
    if (fh == 1 && fw == 1) return x;
    const std::size_t B = s[0], C = s[1], H = s[2], W = s[3];
    const std::size_t Ho = H / fh, Wo = W / fw;
    Tensor out({B, C, Ho, Wo});
    const auto& xv = x.data();
    auto& ov = out.data();
    const double inv = 1.0 / double(fh * fw);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t oy = 0; oy < Ho; ++oy)
                for (std::size_t ox = 0; ox < Wo; ++ox) {
                    double acc = 0.0;
                    for (std::size_t ky = 0; ky < fh; ++ky)
                        for (std::size_t kx = 0; kx < fw; ++kx)
                            acc += xv[((b * C + c) * H + oy * fh + ky) * W +
                                      ox * fw + kx];
                    ov[((b * C + c) * Ho + oy) * Wo + ox] = acc * inv;
                }
    const bool rec = detail::recording({&x});
    detail::mark_output(out, rec);
    if (rec) {
        auto xp = x.impl(), op = out.impl();
        Tape::active()->record([xp, op, B, C, H, W, Ho, Wo, fh, fw, inv]() {
            xp->ensure_grad();
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t oy = 0; oy < Ho; ++oy)
                        for (std::size_t ox = 0; ox < Wo; ++ox) {
                            const double g =
                                op->g[((b * C + c) * Ho + oy) * Wo + ox] * inv;
                            for (std::size_t ky = 0; ky < fh; ++ky)
                                for (std::size_t kx = 0; kx < fw; ++kx)
                                    xp->g[((b * C + c) * H + oy * fh + ky) * W +
                                          ox * fw + kx] += g;
                        }
        });
    }
    return out;
}

} // namespace uhkd
