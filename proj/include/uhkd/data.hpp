#pragma once

// Dataset generation and ingestion. The synthetic generator gives every class
// both a frequency cue (oriented sinusoid with per-image random phase, so the
// magnitude spectrum is the clean signal) and a spatial cue (a shape primitive
// at a class-specific position).

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "uhkd/tensor.hpp"

namespace uhkd {

struct DatasetHandle {
    Tensor images; // (Ntotal, 3, H, W), values in [0,1]
    std::vector<int> labels;
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> val_idx;
    std::size_t num_classes = 0;
    enum class Provenance { Synthetic, External } provenance = Provenance::Synthetic;

    std::size_t height() const { return images.extent(2); }
    std::size_t width() const { return images.extent(3); }
};

inline DatasetHandle synth_dataset(std::size_t K, std::size_t n_per_class,
                                   std::size_t H, std::size_t W, std::uint64_t seed,
                                   double val_fraction = 0.25,
                                   double noise = 0.18) {
    if (K < 2) throw std::runtime_error("synth_dataset: K must be >= 2");
    const std::size_t total = K * n_per_class;
    DatasetHandle ds;
    ds.images = Tensor({total, 3, H, W});
    ds.labels.resize(total);
    ds.num_classes = K;

    Rng rng(mix_key(seed, 0x5d5ULL));
    auto& img = ds.images.data();
    const double two_pi = 6.283185307179586476925286766559;

    std::size_t n = 0;
    for (std::size_t k = 0; k < K; ++k) {
        // class-conditional parameters
        const double fx = 1.0 + double(k % 5);
        const double fy = 1.0 + double((k * 2 + 1) % 5);
        const double cx = 0.2 + 0.6 * double(k % 4) / 3.0;  // shape center
        const double cy = 0.2 + 0.6 * double((k / 4) % 4) / 3.0;
        const bool disk = (k % 2) == 0;
        const double rw = 0.55 + 0.45 * double(k % 3) / 2.0; // channel weights
        const double gw = 0.55 + 0.45 * double((k + 1) % 3) / 2.0;
        const double bw = 0.55 + 0.45 * double((k + 2) % 3) / 2.0;
        const double cw[3] = {rw, gw, bw};

        for (std::size_t s = 0; s < n_per_class; ++s, ++n) {
            ds.labels[n] = int(k);
            const double phase = rng.uniform(0.0, two_pi);
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t x = 0; x < W; ++x) {
                    const double u = double(x) / double(W);
                    const double v = double(y) / double(H);
                    double val =
                        0.5 + 0.35 * std::sin(two_pi * (fx * u + fy * v) + phase);
                    const double dx = u - cx, dy = v - cy;
                    const bool inside =
                        disk ? (dx * dx + dy * dy < 0.018)
                             : (std::abs(dx) < 0.12 && std::abs(dy) < 0.12);
                    if (inside) val = 0.5 * val + 0.45;
                    for (std::size_t c = 0; c < 3; ++c) {
                        double px = cw[c] * val + rng.uniform(-noise, noise);
                        img[((n * 3 + c) * H + y) * W + x] = std::clamp(px, 0.0, 1.0);
                    }
                }
        }
    }

    // per-class tail goes to val: splits are disjoint, exhaustive, stratified
    const std::size_t n_val = std::size_t(double(n_per_class) * val_fraction);
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t s = 0; s < n_per_class; ++s) {
            const std::size_t i = k * n_per_class + s;
            if (s + n_val >= n_per_class)
                ds.val_idx.push_back(i);
            else
                ds.train_idx.push_back(i);
        }
    return ds;
}

// sanity oracle: 1-nearest-neighbor in pixel space, train -> val
inline double nn_pixel_accuracy(const DatasetHandle& ds) {
    const std::size_t dim = 3 * ds.height() * ds.width();
    const auto& v = ds.images.data();
    std::size_t hits = 0;
    for (auto vi : ds.val_idx) {
        double best = std::numeric_limits<double>::infinity();
        int best_lab = -1;
        for (auto ti : ds.train_idx) {
            double d = 0.0;
            const double* a = v.data() + vi * dim;
            const double* b = v.data() + ti * dim;
            for (std::size_t j = 0; j < dim; ++j) {
                const double e = a[j] - b[j];
                d += e * e;
            }
            if (d < best) {
                best = d;
                best_lab = ds.labels[ti];
            }
        }
        if (best_lab == ds.labels[vi]) ++hits;
    }
    return ds.val_idx.empty() ? 0.0 : double(hits) / double(ds.val_idx.size());
}

// ---------------------------------------------------------------------------
// Packed-record external format: per record one label byte followed by
// 3*H*W bytes as R, G, B planes, each H x W row-major. A manifest file
// (key = value lines) names the record files, dims, and split sizes.
// ---------------------------------------------------------------------------

inline void save_packed(const DatasetHandle& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const std::size_t H = ds.height(), W = ds.width();
    auto write_split = [&](const std::string& name,
                           const std::vector<std::size_t>& idx) {
        std::ofstream f(dir + "/" + name, std::ios::binary);
        for (auto i : idx) {
            const unsigned char lab = (unsigned char)ds.labels[i];
            f.put(char(lab));
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t p = 0; p < H * W; ++p) {
                    const double x = ds.images.data()[(i * 3 + c) * H * W + p];
                    const int q = int(std::lround(std::clamp(x, 0.0, 1.0) * 255.0));
                    f.put(char((unsigned char)q));
                }
        }
    };
    write_split("train.bin", ds.train_idx);
    write_split("val.bin", ds.val_idx);
    std::ofstream m(dir + "/manifest.txt");
    m << "# packed-record dataset manifest\n";
    m << "classes = " << ds.num_classes << "\n";
    m << "height = " << H << "\n";
    m << "width = " << W << "\n";
    m << "train_file = train.bin\n";
    m << "train_count = " << ds.train_idx.size() << "\n";
    m << "val_file = val.bin\n";
    m << "val_count = " << ds.val_idx.size() << "\n";
}

inline DatasetHandle load_external(const std::string& dir,
                                   const std::string& manifest = "manifest.txt") {
    std::ifstream m(dir + "/" + manifest);
    if (!m) throw std::runtime_error("load_external: cannot open manifest " + dir +
                                     "/" + manifest);
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(m, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    auto need = [&](const std::string& k) {
        auto it = kv.find(k);
        if (it == kv.end())
            throw std::runtime_error("load_external: manifest missing key " + k);
        return it->second;
    };
    const std::size_t K = std::stoul(need("classes"));
    const std::size_t H = std::stoul(need("height"));
    const std::size_t W = std::stoul(need("width"));
    const std::size_t ntr = std::stoul(need("train_count"));
    const std::size_t nva = std::stoul(need("val_count"));
    if (ntr + nva == 0) throw std::runtime_error("load_external: empty dataset");

    DatasetHandle ds;
    ds.num_classes = K;
    ds.provenance = DatasetHandle::Provenance::External;
    ds.images = Tensor({ntr + nva, 3, H, W});
    ds.labels.resize(ntr + nva);

    const std::size_t rec = 1 + 3 * H * W;
    std::size_t n = 0;
    auto read_split = [&](const std::string& file, std::size_t count,
                          std::vector<std::size_t>& idx) {
        std::ifstream f(dir + "/" + file, std::ios::binary);
        if (!f) throw std::runtime_error("load_external: cannot open " + file);
        std::vector<char> buf(rec);
        for (std::size_t r = 0; r < count; ++r) {
            f.read(buf.data(), std::streamsize(rec));
            if (std::size_t(f.gcount()) != rec)
                throw std::runtime_error(
                    "load_external: truncated record in " + file + " at byte offset " +
                    std::to_string(r * rec) + " (got " + std::to_string(f.gcount()) +
                    " of " + std::to_string(rec) + ")");
            const int lab = (unsigned char)buf[0];
            if (lab < 0 || std::size_t(lab) >= K)
                throw std::runtime_error("load_external: label " + std::to_string(lab) +
                                         " out of range in " + file);
            ds.labels[n] = lab;
            for (std::size_t j = 0; j < 3 * H * W; ++j)
                ds.images.data()[n * 3 * H * W + j] =
                    double((unsigned char)buf[1 + j]) / 255.0;
            idx.push_back(n);
            ++n;
        }
    };
    read_split(need("train_file"), ntr, ds.train_idx);
    read_split(need("val_file"), nva, ds.val_idx);
    return ds;
}

// ---------------------------------------------------------------------------
// Augmentation: flip / pad-crop / jitter, keyed by (seed, epoch, sample index)
// so every ablation arm sees identical augmentation noise.
// ---------------------------------------------------------------------------

struct AugmentFlags {
    bool flip = false;
    bool crop = false;
    bool jitter = false;
};

inline void augment_inplace(Tensor& batch, const std::vector<std::size_t>& sample_ids,
                            const AugmentFlags& flags, std::uint64_t seed,
                            std::size_t epoch) {
    if (!flags.flip && !flags.crop && !flags.jitter) return;
    const std::size_t B = batch.extent(0), H = batch.extent(2), W = batch.extent(3);
    auto& v = batch.data();
    for (std::size_t b = 0; b < B; ++b) {
        Rng r(mix_key(seed, epoch, sample_ids[b]));
        if (flags.flip && r.uniform() < 0.5) {
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t y = 0; y < H; ++y)
                    for (std::size_t x = 0; x < W / 2; ++x)
                        std::swap(v[((b * 3 + c) * H + y) * W + x],
                                  v[((b * 3 + c) * H + y) * W + (W - 1 - x)]);
        }
        if (flags.crop) {
            // zero-pad by 2 then crop back to size (shape preserved)
            const long pad = 2;
            const long dy = long(r.below(2 * pad + 1)) - pad;
            const long dx = long(r.below(2 * pad + 1)) - pad;
            if (dy != 0 || dx != 0) {
                std::vector<double> tmp(3 * H * W, 0.0);
                for (std::size_t c = 0; c < 3; ++c)
                    for (std::size_t y = 0; y < H; ++y)
                        for (std::size_t x = 0; x < W; ++x) {
                            const long sy = long(y) + dy, sx = long(x) + dx;
                            if (sy >= 0 && sy < long(H) && sx >= 0 && sx < long(W))
                                tmp[(c * H + y) * W + x] =
                                    v[((b * 3 + c) * H + sy) * W + sx];
                        }
                std::copy(tmp.begin(), tmp.end(), v.begin() + b * 3 * H * W);
            }
        }
        if (flags.jitter) {
            const double bright = r.uniform(-0.08, 0.08);
            const double contrast = r.uniform(0.9, 1.1);
            for (std::size_t j = 0; j < 3 * H * W; ++j) {
                double& px = v[b * 3 * H * W + j];
                px = std::clamp((px - 0.5) * contrast + 0.5 + bright, 0.0, 1.0);
            }
        }
    }
}

// gather a batch (copy) of the given sample indices
inline std::pair<Tensor, std::vector<int>> gather_batch(
    const DatasetHandle& ds, const std::vector<std::size_t>& ids) {
    const std::size_t H = ds.height(), W = ds.width();
    Tensor batch({ids.size(), 3, H, W});
    std::vector<int> labels(ids.size());
    const std::size_t dim = 3 * H * W;
    for (std::size_t b = 0; b < ids.size(); ++b) {
        std::copy(ds.images.data().begin() + ids[b] * dim,
                  ds.images.data().begin() + (ids[b] + 1) * dim,
                  batch.data().begin() + b * dim);
        labels[b] = ds.labels[ids[b]];
    }
    return {batch, labels};
}

} // namespace uhkd
