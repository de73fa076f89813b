#pragma once

// Human-readable `key = value` configuration with [section] headers and `#`
// comments; sections flatten into dotted keys. CLI `--set key=value` overrides
// file values. Every DistillRecipe field is addressable.

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace uhkd {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

class Config {
public:
    void load_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw ConfigError("cannot open config file: " + path);
        std::string line, section;
        std::size_t lineno = 0;
        while (std::getline(f, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.resize(hash);
            const std::string t = trim(line);
            if (t.empty()) continue;
            if (t.front() == '[') {
                if (t.back() != ']')
                    throw ConfigError(path + ":" + std::to_string(lineno) +
                                      ": malformed section header");
                section = trim(t.substr(1, t.size() - 2));
                continue;
            }
            const auto eq = t.find('=');
            if (eq == std::string::npos)
                throw ConfigError(path + ":" + std::to_string(lineno) +
                                  ": expected `key = value`");
            std::string key = trim(t.substr(0, eq));
            if (!section.empty()) key = section + "." + key;
            values_[key] = trim(t.substr(eq + 1));
        }
    }

    void set(const std::string& key, const std::string& value) {
        values_[trim(key)] = trim(value);
    }

    // "key=value" as passed to --set
    void set_kv(const std::string& kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects key=value, got: " + kv);
        set(kv.substr(0, eq), kv.substr(eq + 1));
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get_str(const std::string& key, const std::string& def) const {
        auto it = values_.find(key);
        return it == values_.end() ? def : it->second;
    }
    double get_double(const std::string& key, double def) const {
        auto it = values_.find(key);
        if (it == values_.end()) return def;
        try {
            std::size_t pos = 0;
            const double v = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (...) {
            throw ConfigError("config key " + key + ": not a number: " + it->second);
        }
    }
    long get_int(const std::string& key, long def) const {
        auto it = values_.find(key);
        if (it == values_.end()) return def;
        try {
            std::size_t pos = 0;
            const long v = std::stol(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (...) {
            throw ConfigError("config key " + key + ": not an integer: " + it->second);
        }
    }
    bool get_bool(const std::string& key, bool def) const {
        auto it = values_.find(key);
        if (it == values_.end()) return def;
        if (it->second == "true" || it->second == "1") return true;
        if (it->second == "false" || it->second == "0") return false;
        throw ConfigError("config key " + key + ": not a boolean: " + it->second);
    }

    const std::map<std::string, std::string>& entries() const { return values_; }

private:
    static std::string trim(const std::string& s) {
        const auto a = s.find_first_not_of(" \t\r");
        const auto b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    }
    std::map<std::string, std::string> values_;
};

// ---------------------------------------------------------------------------

enum class AlignMode { Learned, Frozen, Bilinear, Nearest, Linear };

inline const char* align_mode_name(AlignMode m) {
    switch (m) {
        case AlignMode::Learned: return "learned";
        case AlignMode::Frozen: return "frozen";
        case AlignMode::Bilinear: return "bilinear";
        case AlignMode::Nearest: return "nearest";
        case AlignMode::Linear: return "linear";
    }
    return "?";
}

inline AlignMode align_mode_from_name(const std::string& s) {
    if (s == "learned") return AlignMode::Learned;
    if (s == "frozen") return AlignMode::Frozen;
    if (s == "bilinear") return AlignMode::Bilinear;
    if (s == "nearest") return AlignMode::Nearest;
    if (s == "linear") return AlignMode::Linear;
    throw ConfigError("unknown align mode: " + s);
}

struct DistillRecipe {
    // loss
    double lambda_kl = 0.4;
    double lambda_ce = 0.3;
    double tau = 4.0;
    double label_smoothing = 0.1;
    std::set<int> stage_set{1, 2, 3, 4};
    // frequency mask / pooling
    double sigma_low = 0.5;
    double sigma_high = 0.5;
    double high_weight = 0.2;
    std::size_t pool_factor = 2;
    // optimizer
    double lr = 3e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 0.005;
    double adam_eps = 1e-8;
    double grad_clip = 5.0;
    double warmup_frac = 0.05;
    // run
    std::uint64_t seed = 1;
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    std::size_t checkpoint_every = 0; // epochs; 0 = final only
    // ablation
    bool no_fft = false;
    bool no_filter = false;
    bool no_downsample = false;
    AlignMode align_mode = AlignMode::Learned;
    // augmentation
    struct Augment {
        bool flip = true;
        bool crop = true;
        bool jitter = false;
    };
    Augment aug;

    void validate() const {
        if (lambda_kl < 0 || lambda_ce < 0 || lambda_kl + lambda_ce > 1.0)
            throw ConfigError("recipe: lambda_kl + lambda_ce must be in [0,1]");
        if (stage_set.empty()) throw ConfigError("recipe: stage_set must be non-empty");
        for (int s : stage_set)
            if (s < 1 || s > 4) throw ConfigError("recipe: stage indices must be 1..4");
        if (grad_clip <= 0) throw ConfigError("recipe: grad_clip must be positive");
        if (tau <= 0) throw ConfigError("recipe: tau must be positive");
        if (epochs == 0 || batch_size == 0)
            throw ConfigError("recipe: epochs and batch_size must be positive");
    }

    static std::set<int> parse_stage_set(const std::string& s) {
        std::set<int> out;
        std::stringstream ss(s);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            if (tok.empty()) continue;
            out.insert(std::stoi(tok));
        }
        return out;
    }

    std::string stage_set_str() const {
        std::string s;
        for (int v : stage_set) s += (s.empty() ? "" : ",") + std::to_string(v);
        return s;
    }

    static DistillRecipe from_config(const Config& c) {
        DistillRecipe r;
        r.lambda_kl = c.get_double("loss.lambda_kl", r.lambda_kl);
        r.lambda_ce = c.get_double("loss.lambda_ce", r.lambda_ce);
        r.tau = c.get_double("loss.tau", r.tau);
        r.label_smoothing = c.get_double("loss.label_smoothing", r.label_smoothing);
        if (c.has("loss.stage_set"))
            r.stage_set = parse_stage_set(c.get_str("loss.stage_set", ""));
        r.sigma_low = c.get_double("mask.sigma_low", r.sigma_low);
        r.sigma_high = c.get_double("mask.sigma_high", r.sigma_high);
        r.high_weight = c.get_double("mask.high_weight", r.high_weight);
        r.pool_factor = std::size_t(c.get_int("mask.pool_factor", long(r.pool_factor)));
        r.lr = c.get_double("optim.lr", r.lr);
        r.beta1 = c.get_double("optim.beta1", r.beta1);
        r.beta2 = c.get_double("optim.beta2", r.beta2);
        r.weight_decay = c.get_double("optim.weight_decay", r.weight_decay);
        r.adam_eps = c.get_double("optim.eps", r.adam_eps);
        r.grad_clip = c.get_double("optim.grad_clip", r.grad_clip);
        r.warmup_frac = c.get_double("optim.warmup_frac", r.warmup_frac);
        r.seed = std::uint64_t(c.get_int("run.seed", long(r.seed)));
        r.epochs = std::size_t(c.get_int("run.epochs", long(r.epochs)));
        r.batch_size = std::size_t(c.get_int("run.batch_size", long(r.batch_size)));
        r.checkpoint_every =
            std::size_t(c.get_int("run.checkpoint_every", long(r.checkpoint_every)));
        r.no_fft = c.get_bool("ablation.no_fft", r.no_fft);
        r.no_filter = c.get_bool("ablation.no_filter", r.no_filter);
        r.no_downsample = c.get_bool("ablation.no_downsample", r.no_downsample);
        r.align_mode = align_mode_from_name(
            c.get_str("ablation.align_mode", align_mode_name(r.align_mode)));
        r.aug.flip = c.get_bool("augment.flip", r.aug.flip);
        r.aug.crop = c.get_bool("augment.crop", r.aug.crop);
        r.aug.jitter =
            c.get_bool("augment.jitter", r.aug.jitter);
        r.validate();
        return r;
    }

    // echo in config grammar (round-trips through --set / file parsing)
    std::string echo() const {
        std::ostringstream os;
        os << "[loss]\n";
        os << "lambda_kl = " << lambda_kl << "\n";
        os << "lambda_ce = " << lambda_ce << "\n";
        os << "tau = " << tau << "\n";
        os << "label_smoothing = " << label_smoothing << "\n";
        os << "stage_set = " << stage_set_str() << "\n";
        os << "[mask]\n";
        os << "sigma_low = " << sigma_low << "\n";
        os << "sigma_high = " << sigma_high << "\n";
        os << "high_weight = " << high_weight << "\n";
        os << "pool_factor = " << pool_factor << "\n";
        os << "[optim]\n";
        os << "lr = " << lr << "\n";
        os << "beta1 = " << beta1 << "\n";
        os << "beta2 = " << beta2 << "\n";
        os << "weight_decay = " << weight_decay << "\n";
        os << "eps = " << adam_eps << "\n";
        os << "grad_clip = " << grad_clip << "\n";
        os << "warmup_frac = " << warmup_frac << "\n";
        os << "[run]\n";
        os << "seed = " << seed << "\n";
        os << "epochs = " << epochs << "\n";
        os << "batch_size = " << batch_size << "\n";
        os << "checkpoint_every = " << checkpoint_every << "\n";
        os << "[ablation]\n";
        os << "no_fft = " << (no_fft ? "true" : "false") << "\n";
        os << "no_filter = " << (no_filter ? "true" : "false") << "\n";
        os << "no_downsample = " << (no_downsample ? "true" : "false") << "\n";
        os << "align_mode = " << align_mode_name(align_mode) << "\n";
        os << "[augment]\n";
        os << "flip = " << (aug.flip ? "true" : "false") << "\n";
        os << "crop = " << (aug.crop ? "true" : "false") << "\n";
        os << "jitter = " << (aug.jitter ? "true" : "false") << "\n";
        return os.str();
    }
};

} // namespace uhkd
