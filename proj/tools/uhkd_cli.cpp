// uhkd — experiment runner: teacher pretraining, distillation, evaluation,
// ablation sweeps, spectrum dumps, and similarity analysis.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "uhkd/uhkd.hpp"

namespace fs = std::filesystem;
using namespace uhkd;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "out";
    long seed = -1; // -1: keep config/default
    std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
    cmd->add_option("--config", a.config_path, "config file (key = value, [section] headers)");
    cmd->add_option("--seed", a.seed, "override run.seed");
    cmd->add_option("--out-dir", a.out_dir, "output directory (all artifacts land here)");
    cmd->add_option("--set", a.sets, "override a config key, key=value")->take_all();
}

// bare recipe keys accepted on --set for convenience (lambda_kl=0.4 etc.)
const std::map<std::string, std::string> kBareKeys = {
    {"lambda_kl", "loss.lambda_kl"},       {"lambda_ce", "loss.lambda_ce"},
    {"tau", "loss.tau"},                   {"label_smoothing", "loss.label_smoothing"},
    {"stage_set", "loss.stage_set"},       {"sigma_low", "mask.sigma_low"},
    {"sigma_high", "mask.sigma_high"},     {"high_weight", "mask.high_weight"},
    {"pool_factor", "mask.pool_factor"},   {"lr", "optim.lr"},
    {"weight_decay", "optim.weight_decay"},{"grad_clip", "optim.grad_clip"},
    {"warmup_frac", "optim.warmup_frac"},  {"seed", "run.seed"},
    {"epochs", "run.epochs"},              {"batch_size", "run.batch_size"},
    {"checkpoint_every", "run.checkpoint_every"},
    {"no_fft", "ablation.no_fft"},         {"no_filter", "ablation.no_filter"},
    {"no_downsample", "ablation.no_downsample"},
    {"align_mode", "ablation.align_mode"},
};

Config build_config(const CommonArgs& a) {
    Config cfg;
    if (!a.config_path.empty()) cfg.load_file(a.config_path);
    for (const auto& kv : a.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects key=value, got: " + kv);
        std::string key = kv.substr(0, eq);
        auto it = kBareKeys.find(key);
        if (it != kBareKeys.end() && !cfg.has(key)) key = it->second;
        cfg.set(key, kv.substr(eq + 1));
    }
    if (a.seed >= 0) cfg.set("run.seed", std::to_string(a.seed));
    return cfg;
}

DatasetHandle make_dataset(const Config& cfg, std::uint64_t run_seed) {
    const std::string dir = cfg.get_str("data.dir", "");
    if (!dir.empty()) return load_external(dir, cfg.get_str("data.manifest", "manifest.txt"));
    return synth_dataset(
        std::size_t(cfg.get_int("data.classes", 10)),
        std::size_t(cfg.get_int("data.n_per_class", 40)),
        std::size_t(cfg.get_int("data.image_size", 32)),
        std::size_t(cfg.get_int("data.image_size", 32)),
        std::uint64_t(cfg.get_int("data.seed", long(run_seed))),
        cfg.get_double("data.val_fraction", 0.25),
        cfg.get_double("data.noise", 0.18));
}

std::array<std::size_t, 4> parse_widths(const std::string& s) {
    std::array<std::size_t, 4> w{};
    std::stringstream ss(s);
    std::string tok;
    std::size_t i = 0;
    while (std::getline(ss, tok, ',')) {
        if (i >= 4) throw ConfigError("widths: expected 4 comma-separated values");
        w[i++] = std::size_t(std::stoul(tok));
    }
    if (i != 4) throw ConfigError("widths: expected 4 comma-separated values");
    return w;
}

ModelSpec model_spec(const Config& cfg, const std::string& role,
                     const DatasetHandle& ds) {
    ModelSpec s;
    s.family = family_from_name(
        cfg.get_str(role + ".family", role == "teacher" ? "attn" : "cnn"));
    const std::string def_widths =
        (s.family == Family::CNN) ? "16,32,48,64" : "32,32,32,32";
    s.stage_widths = parse_widths(cfg.get_str(role + ".widths", def_widths));
    s.patch_size = std::size_t(cfg.get_int(role + ".patch", 4));
    s.num_classes = ds.num_classes;
    s.image_size = ds.height();
    return s;
}

PretrainOptions pretrain_options(const Config& cfg, const DistillRecipe& r) {
    PretrainOptions o;
    o.epochs = std::size_t(cfg.get_int("pretrain.epochs", 12));
    o.batch_size = r.batch_size;
    o.lr = cfg.get_double("pretrain.lr", r.lr);
    o.weight_decay = r.weight_decay;
    o.grad_clip = r.grad_clip;
    o.label_smoothing = r.label_smoothing;
    o.warmup_frac = r.warmup_frac;
    o.seed = mix_key(r.seed, 0x7ea);
    o.aug = r.aug;
    return o;
}

// load from teacher.checkpoint, or pretrain inline and save into out_dir
Model get_teacher(const Config& cfg, const DistillRecipe& r, const DatasetHandle& ds,
                  const std::string& out_dir) {
    const ModelSpec spec = model_spec(cfg, "teacher", ds);
    const std::string ckpt = cfg.get_str("teacher.checkpoint", "");
    if (!ckpt.empty()) {
        Rng rng(0);
        Model m(spec, rng);
        load_checkpoint(m.params(), ckpt);
        m.params().set_trainable_all(false);
        return m;
    }
    Model m = pretrain_teacher(spec, ds, pretrain_options(cfg, r));
    save_checkpoint(m.params(), out_dir + "/teacher.bin");
    return m;
}

int cmd_pretrain(const CommonArgs& a) {
    Config cfg = build_config(a);
    DistillRecipe r = DistillRecipe::from_config(cfg);
    DatasetHandle ds = make_dataset(cfg, r.seed);
    fs::create_directories(a.out_dir);
    Model teacher = pretrain_teacher(model_spec(cfg, "teacher", ds), ds,
                                     pretrain_options(cfg, r));
    save_checkpoint(teacher.params(), a.out_dir + "/teacher.bin");
    std::cout << "val_acc " << fmt_num(evaluate(teacher, ds, ds.val_idx)) << "\n";
    return 0;
}

int cmd_distill(const CommonArgs& a) {
    Config cfg = build_config(a);
    DistillRecipe r = DistillRecipe::from_config(cfg);
    DatasetHandle ds = make_dataset(cfg, r.seed);
    fs::create_directories(a.out_dir);
    Model teacher = get_teacher(cfg, r, ds, a.out_dir);
    Rng srng(mix_key(r.seed, 0x57d));
    Model student(model_spec(cfg, "student", ds), srng);
    std::cout << r.echo();
    {
        std::ofstream f(a.out_dir + "/recipe.cfg");
        f << r.echo();
    }
    DistillResult res = distill(teacher, student, r, ds, a.out_dir);
    std::cout << "val_acc " << fmt_num(res.report.final_val_acc()) << "\n";
    return 0;
}

int cmd_eval(const CommonArgs& a) {
    Config cfg = build_config(a);
    DistillRecipe r = DistillRecipe::from_config(cfg);
    DatasetHandle ds = make_dataset(cfg, r.seed);
    fs::create_directories(a.out_dir);
    const std::string target = cfg.get_str("eval.target", "student");
    const std::string ckpt = cfg.get_str("eval.checkpoint", "");
    if (target == "teacher") {
        Rng rng(0);
        Model m(model_spec(cfg, "teacher", ds), rng);
        if (!ckpt.empty()) load_checkpoint(m.params(), ckpt);
        std::cout << "val_acc " << fmt_num(evaluate(m, ds, ds.val_idx)) << "\n";
        return 0;
    }
    Model teacher = get_teacher(cfg, r, ds, a.out_dir);
    Rng srng(mix_key(r.seed, 0x57d));
    Model student(model_spec(cfg, "student", ds), srng);
    AlignBank bank = build_align_bank(teacher, student, r, ds);
    ParameterRegistry reg = build_run_registry(student, bank);
    if (!ckpt.empty()) load_checkpoint(reg, ckpt);
    std::cout << "val_acc " << fmt_num(evaluate(student, ds, ds.val_idx)) << "\n";
    return 0;
}

int cmd_ablate(const CommonArgs& a) {
    Config cfg = build_config(a);
    DistillRecipe r = DistillRecipe::from_config(cfg);
    DatasetHandle ds = make_dataset(cfg, r.seed);
    fs::create_directories(a.out_dir);
    Model teacher = get_teacher(cfg, r, ds, a.out_dir);
    auto arms = run_ablation_suite(teacher, model_spec(cfg, "student", ds), r, ds);
    write_ablation_csv(arms, a.out_dir + "/ablation.csv");
    for (const auto& arm : arms)
        std::cout << arm.name << " "
                  << (arm.failed ? ("failed: " + arm.error)
                                 : fmt_num(arm.report.final_val_acc()))
                  << "\n";
    return 0;
}

// reconstruct the distillation setup and optionally load a run checkpoint
struct Loaded {
    Model teacher;
    Model student;
    AlignBank bank;
};

Loaded load_run(const Config& cfg, const DistillRecipe& r, const DatasetHandle& ds,
                const std::string& out_dir) {
    Model teacher = get_teacher(cfg, r, ds, out_dir);
    Rng srng(mix_key(r.seed, 0x57d));
    Model student(model_spec(cfg, "student", ds), srng);
    AlignBank bank = build_align_bank(teacher, student, r, ds);
    const std::string ckpt = cfg.get_str("run.checkpoint", "");
    if (!ckpt.empty()) {
        ParameterRegistry reg = build_run_registry(student, bank);
        load_checkpoint(reg, ckpt);
    }
    return {std::move(teacher), std::move(student), std::move(bank)};
}

int cmd_inspect(const CommonArgs& a) {
    Config cfg = build_config(a);
    DistillRecipe r = DistillRecipe::from_config(cfg);
    DatasetHandle ds = make_dataset(cfg, r.seed);
    fs::create_directories(a.out_dir);
    Loaded run = load_run(cfg, r, ds, a.out_dir);

    const std::size_t n =
        std::min<std::size_t>(std::size_t(cfg.get_int("inspect.batch", 4)),
                              ds.val_idx.size());
    std::vector<std::size_t> ids(ds.val_idx.begin(), ds.val_idx.begin() + n);
    auto [batch, labels] = gather_batch(ds, ids);

    NoGradGuard ng;
    auto t_out = run.teacher.forward_with_taps(batch, StageFeature::Source::Teacher);
    auto s_out = run.student.forward_with_taps(batch, StageFeature::Source::Student);
    for (std::size_t s = 0; s < 4; ++s) {
        Spectrum ft = center_shift(
            fft_forward(t_out.taps[s].tensor, t_out.taps[s].layout));
        Spectrum fs = center_shift(
            fft_forward(s_out.taps[s].tensor, s_out.taps[s].layout));
        dump_spectrum(ft, a.out_dir + "/ftm_stage" + std::to_string(s + 1) + ".spec");
        dump_spectrum(fs, a.out_dir + "/fam_stage" + std::to_string(s + 1) + ".spec");
        std::cout << "stage " << (s + 1) << " teacher "
                  << shape_str(ft.real.shape()) << " student "
                  << shape_str(fs.real.shape()) << "\n";
    }
    return 0;
}

int cmd_similarity(const CommonArgs& a) {
    Config cfg = build_config(a);
    DistillRecipe r = DistillRecipe::from_config(cfg);
    DatasetHandle ds = make_dataset(cfg, r.seed);
    fs::create_directories(a.out_dir);
    Loaded run = load_run(cfg, r, ds, a.out_dir);

    const std::size_t n = std::min<std::size_t>(8, ds.val_idx.size());
    std::vector<std::size_t> ids(ds.val_idx.begin(), ds.val_idx.begin() + n);
    auto [batch, labels] = gather_batch(ds, ids);
    auto sims = similarity_probe(run.teacher, run.student, run.bank, batch);

    std::ofstream f(a.out_dir + "/similarity.csv");
    f << "stage,cos_raw,cos_uhkd,pearson_raw,pearson_uhkd\n";
    for (std::size_t s = 0; s < 4; ++s) {
        const auto& x = sims[s];
        const std::string row = std::to_string(s + 1) + "," + fmt_opt(x.cos_raw) +
                                "," + fmt_opt(x.cos_uhkd) + "," +
                                fmt_opt(x.pearson_raw) + "," +
                                fmt_opt(x.pearson_uhkd);
        f << row << "\n";
        std::cout << row << "\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"UHKD frequency-domain distillation runner"};
    app.require_subcommand(1);

    std::map<std::string, std::pair<CommonArgs, int (*)(const CommonArgs&)>> verbs;
    const std::pair<const char*, int (*)(const CommonArgs&)> table[] = {
        {"pretrain", cmd_pretrain}, {"distill", cmd_distill},
        {"eval", cmd_eval},         {"ablate", cmd_ablate},
        {"inspect", cmd_inspect},   {"similarity", cmd_similarity},
    };
    const char* help[] = {
        "train and checkpoint a teacher",
        "run UHKD distillation (metrics.csv + checkpoints)",
        "print validation accuracy for a checkpoint",
        "run the ablation suite (ablation.csv)",
        "dump per-stage spectra in the UHKDSPEC format",
        "per-stage cosine/Pearson similarity, raw vs post-alignment",
    };
    int i = 0;
    for (const auto& [name, fn] : table) {
        auto& slot = verbs[name];
        slot.second = fn;
        add_common(app.add_subcommand(name, help[i++]), slot.first);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << app.help() << "\n";
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    try {
        for (auto& [name, slot] : verbs)
            if (app.get_subcommand(name)->parsed()) return slot.second(slot.first);
        std::cerr << app.help() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
