#pragma once

// Tiny four-stage backbones in three architecture families: convolutional
// (GRID taps), single-head attention (SEQ taps), token/channel mixer (SEQ
// taps). Each stage boundary emits one StageFeature.

#include <array>
#include <map>
#include <string>

#include "uhkd/spectral.hpp"

namespace uhkd {

enum class Family { CNN, ATTN, MLP };

inline const char* family_name(Family f) {
    switch (f) {
        case Family::CNN: return "cnn";
        case Family::ATTN: return "attn";
        case Family::MLP: return "mlp";
    }
    return "?";
}

inline Family family_from_name(const std::string& s) {
    if (s == "cnn") return Family::CNN;
    if (s == "attn") return Family::ATTN;
    if (s == "mlp") return Family::MLP;
    throw std::runtime_error("unknown model family: " + s);
}

struct ModelSpec {
    Family family = Family::CNN;
    std::array<std::size_t, 4> stage_widths{16, 32, 48, 64};
    std::size_t num_classes = 10;
    std::size_t patch_size = 4;  // ATTN/MLP only
    std::size_t image_size = 32;
    std::size_t mlp_ratio = 2;   // hidden = ratio * width in ATTN/MLP blocks
};

class ParameterRegistry {
public:
    Tensor& add(const std::string& path, Tensor t, bool trainable = true) {
        if (map_.count(path))
            throw std::runtime_error("ParameterRegistry: duplicate path " + path);
        order_.push_back(path);
        auto [it, ok] = map_.emplace(path, Entry{std::move(t), trainable});
        it->second.tensor.set_requires_grad(trainable);
        return it->second.tensor;
    }

    Tensor& get(const std::string& path) {
        auto it = map_.find(path);
        if (it == map_.end())
            throw std::runtime_error("ParameterRegistry: unknown path " + path);
        return it->second.tensor;
    }
    const Tensor& get(const std::string& path) const {
        return const_cast<ParameterRegistry*>(this)->get(path);
    }

    bool trainable(const std::string& path) const { return map_.at(path).trainable; }

    void set_trainable_all(bool b) {
        for (auto& [k, e] : map_) {
            e.trainable = b;
            e.tensor.set_requires_grad(b);
        }
    }

    const std::vector<std::string>& paths() const { return order_; }
    std::size_t count() const { return order_.size(); }

    std::size_t total_params() const {
        std::size_t n = 0;
        for (const auto& [k, e] : map_) n += e.tensor.size();
        return n;
    }

    void zero_grads() {
        for (auto& [k, e] : map_) e.tensor.zero_grad();
    }

    // FNV-1a over raw f64 payload in path order; used for immutability checks
    std::uint64_t digest() const {
        std::uint64_t h = 1469598103934665603ULL;
        auto mix = [&h](const void* p, std::size_t n) {
            const unsigned char* b = static_cast<const unsigned char*>(p);
            for (std::size_t i = 0; i < n; ++i) {
                h ^= b[i];
                h *= 1099511628211ULL;
            }
        };
        for (const auto& path : order_) {
            mix(path.data(), path.size());
            const auto& v = map_.at(path).tensor.data();
            mix(v.data(), v.size() * sizeof(double));
        }
        return h;
    }

private:
    struct Entry {
        Tensor tensor;
        bool trainable;
    };
    std::vector<std::string> order_;
    std::map<std::string, Entry> map_;
};

// ---------------------------------------------------------------------------

class Model {
public:
    Model(ModelSpec spec, Rng& rng) : spec_(spec) {
        if (spec_.family != Family::CNN) {
            for (auto w : spec_.stage_widths)
                if (w != spec_.stage_widths[0])
                    throw DimensionError("Model: ATTN/MLP require equal stage widths");
            if (spec_.image_size % spec_.patch_size != 0)
                throw DimensionError("Model: image size not divisible by patch size");
        }
        build(rng);
    }

    const ModelSpec& spec() const { return spec_; }
    ParameterRegistry& params() { return params_; }
    const ParameterRegistry& params() const { return params_; }

    std::size_t tokens() const {
        const std::size_t g = spec_.image_size / spec_.patch_size;
        return g * g;
    }

    struct Forward {
        Tensor logits;
        std::array<StageFeature, 4> taps;
    };

    Forward forward_with_taps(const Tensor& batch, StageFeature::Source src) {
        const Shape& bs = batch.shape();
        if (bs.size() != 4 || bs[1] != 3 || bs[2] != spec_.image_size ||
            bs[3] != spec_.image_size)
            throw DimensionError("forward: expected (B,3," +
                                 std::to_string(spec_.image_size) + "," +
                                 std::to_string(spec_.image_size) + "), got " +
                                 shape_str(bs));
        switch (spec_.family) {
            case Family::CNN: return forward_cnn(batch, src);
            case Family::ATTN: return forward_attn(batch, src);
            case Family::MLP: return forward_mlp(batch, src);
        }
        throw std::logic_error("unreachable");
    }

    Tensor forward(const Tensor& batch) {
        return forward_with_taps(batch, StageFeature::Source::Student).logits;
    }

    // closed-form parameter count for the audit test
    static std::size_t expected_param_count(const ModelSpec& s) {
        std::size_t n = 0;
        if (s.family == Family::CNN) {
            std::size_t cin = 3;
            for (auto w : s.stage_widths) {
                n += w * cin * 9 + w;
                cin = w;
            }
            n += s.stage_widths[3] * s.num_classes + s.num_classes;
            return n;
        }
        const std::size_t d = s.stage_widths[0];
        const std::size_t p2 = s.patch_size * s.patch_size * 3;
        const std::size_t g = s.image_size / s.patch_size;
        const std::size_t N = g * g;
        const std::size_t hid = s.mlp_ratio * d;
        n += p2 * d + d; // patch embed
        for (int i = 0; i < 4; ++i) {
            n += 2 * d; // ln1
            if (s.family == Family::ATTN)
                n += 4 * (d * d + d); // q,k,v,o
            else
                n += N * N + N; // token mix
            n += 2 * d;                       // ln2
            n += d * hid + hid + hid * d + d; // channel mlp
        }
        n += 2 * d;                               // final ln
        n += d * s.num_classes + s.num_classes;   // head
        return n;
    }

private:
    void build(Rng& rng) {
        auto lin = [&](const std::string& path, std::size_t in, std::size_t out) {
            const double b = 1.0 / std::sqrt(double(in));
            params_.add(path + ".w", Tensor::uniform({in, out}, -b, b, rng));
            params_.add(path + ".b", Tensor::zeros({out}));
        };
        auto ln = [&](const std::string& path, std::size_t d) {
            params_.add(path + ".g", Tensor::ones({d}));
            params_.add(path + ".b", Tensor::zeros({d}));
        };
        if (spec_.family == Family::CNN) {
            std::size_t cin = 3;
            for (int i = 0; i < 4; ++i) {
                const std::size_t cout = spec_.stage_widths[std::size_t(i)];
                const double b = 1.0 / std::sqrt(double(cin * 9));
                params_.add("stage" + std::to_string(i + 1) + ".conv.w",
                            Tensor::uniform({cout, cin, 3, 3}, -b, b, rng));
                params_.add("stage" + std::to_string(i + 1) + ".conv.b",
                            Tensor::zeros({cout}));
                cin = cout;
            }
            lin("head", cin, spec_.num_classes);
            return;
        }
        const std::size_t d = spec_.stage_widths[0];
        const std::size_t N = tokens();
        const std::size_t hid = spec_.mlp_ratio * d;
        lin("embed", spec_.patch_size * spec_.patch_size * 3, d);
        for (int i = 0; i < 4; ++i) {
            const std::string s = "stage" + std::to_string(i + 1);
            ln(s + ".ln1", d);
            if (spec_.family == Family::ATTN) {
                lin(s + ".q", d, d);
                lin(s + ".k", d, d);
                lin(s + ".v", d, d);
                lin(s + ".o", d, d);
            } else {
                lin(s + ".tok", N, N);
            }
            ln(s + ".ln2", d);
            lin(s + ".mlp1", d, hid);
            lin(s + ".mlp2", hid, d);
        }
        ln("lnf", d);
        lin("head", d, spec_.num_classes);
    }

    Tensor linear(const std::string& path, const Tensor& x) {
        return add(matmul(x, params_.get(path + ".w")), params_.get(path + ".b"));
    }
    Tensor norm(const std::string& path, const Tensor& x) {
        return layer_norm(x, params_.get(path + ".g"), params_.get(path + ".b"));
    }

    // (B,3,H,W) -> (B, N, p*p*3)
    Tensor patchify(const Tensor& x) {
        const std::size_t B = x.extent(0), p = spec_.patch_size;
        const std::size_t g = spec_.image_size / p;
        Tensor r = reshape(x, {B, 3, g, p, g, p});
        Tensor t = permute(r, {0, 2, 4, 1, 3, 5}); // (B, g, g, 3, p, p)
        return reshape(t, {B, g * g, 3 * p * p});
    }

    Forward forward_cnn(const Tensor& batch, StageFeature::Source src) {
        Forward out;
        Tensor x = batch;
        for (int i = 0; i < 4; ++i) {
            const std::string s = "stage" + std::to_string(i + 1);
            x = relu(conv2d(x, params_.get(s + ".conv.w"), params_.get(s + ".conv.b"),
                            2, 1));
            out.taps[std::size_t(i)] = {x, Layout::GRID, i + 1, src};
        }
        Tensor pooled = mean(x, {2, 3}); // (B, C)
        out.logits = linear("head", pooled);
        return out;
    }

    Forward forward_attn(const Tensor& batch, StageFeature::Source src) {
        Forward out;
        const std::size_t d = spec_.stage_widths[0];
        Tensor x = linear("embed", patchify(batch)); // (B, N, d)
        const double scale = 1.0 / std::sqrt(double(d));
        for (int i = 0; i < 4; ++i) {
            const std::string s = "stage" + std::to_string(i + 1);
            Tensor h = norm(s + ".ln1", x);
            Tensor q = linear(s + ".q", h);
            Tensor k = linear(s + ".k", h);
            Tensor v = linear(s + ".v", h);
            Tensor scores = mul(matmul(q, permute(k, {0, 2, 1})), scale);
            Tensor attn = softmax(scores);
            Tensor ctx = linear(s + ".o", matmul(attn, v));
            x = add(x, ctx);
            Tensor h2 = norm(s + ".ln2", x);
            Tensor m = linear(s + ".mlp2", gelu(linear(s + ".mlp1", h2)));
            x = add(x, m);
            out.taps[std::size_t(i)] = {x, Layout::SEQ, i + 1, src};
        }
        Tensor pooled = mean(norm("lnf", x), {1}); // (B, d)
        out.logits = linear("head", pooled);
        return out;
    }

    Forward forward_mlp(const Tensor& batch, StageFeature::Source src) {
        Forward out;
        Tensor x = linear("embed", patchify(batch)); // (B, N, d)
        for (int i = 0; i < 4; ++i) {
            const std::string s = "stage" + std::to_string(i + 1);
            Tensor h = norm(s + ".ln1", x);
            Tensor t = permute(h, {0, 2, 1}); // (B, d, N)
            t = gelu(linear(s + ".tok", t));
            x = add(x, permute(t, {0, 2, 1}));
            Tensor h2 = norm(s + ".ln2", x);
            Tensor m = linear(s + ".mlp2", gelu(linear(s + ".mlp1", h2)));
            x = add(x, m);
            out.taps[std::size_t(i)] = {x, Layout::SEQ, i + 1, src};
        }
        Tensor pooled = mean(norm("lnf", x), {1});
        out.logits = linear("head", pooled);
        return out;
    }

    ModelSpec spec_;
    ParameterRegistry params_;
};

} // namespace uhkd
