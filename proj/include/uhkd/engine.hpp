#pragma once

// Training orchestration: teacher pretraining, the distillation loop with the
// joint objective, similarity probes, checkpointing, metrics, ablation arms.

#include <chrono>
#include <cstdio>
#include <optional>

#include "uhkd/config.hpp"
#include "uhkd/data.hpp"
#include "uhkd/losses.hpp"
#include "uhkd/models.hpp"
#include "uhkd/optim.hpp"
#include "uhkd/serialize.hpp"

namespace uhkd {

// ---------------------------------------------------------------------------
// Evaluation and similarity metrics
// ---------------------------------------------------------------------------

inline double evaluate(Model& model, const DatasetHandle& ds,
                       const std::vector<std::size_t>& idx,
                       std::size_t batch_size = 64) {
    NoGradGuard ng;
    std::size_t hits = 0;
    for (std::size_t start = 0; start < idx.size(); start += batch_size) {
        const std::size_t n = std::min(batch_size, idx.size() - start);
        std::vector<std::size_t> ids(idx.begin() + start, idx.begin() + start + n);
        auto [batch, labels] = gather_batch(ds, ids);
        Tensor logits = model.forward(batch);
        const std::size_t K = logits.extent(1);
        for (std::size_t b = 0; b < n; ++b) {
            std::size_t arg = 0;
            for (std::size_t k = 1; k < K; ++k)
                if (logits.data()[b * K + k] > logits.data()[b * K + arg]) arg = k;
            if (int(arg) == labels[b]) ++hits;
        }
    }
    return idx.empty() ? 0.0 : double(hits) / double(idx.size());
}

inline std::optional<double> cosine_similarity(const std::vector<double>& a,
                                               const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return std::nullopt;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline std::optional<double> pearson_correlation(const std::vector<double>& a,
                                                 const std::vector<double>& b) {
    const double n = double(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        cov += (a[i] - ma) * (b[i] - mb);
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
    }
    if (va == 0.0 || vb == 0.0) return std::nullopt; // undefined, not 0
    return cov / (std::sqrt(va) * std::sqrt(vb));
}

namespace enginedetail {

// nearest-resample a flat vector to a target length (raw-similarity arm)
inline std::vector<double> nearest_resample(const std::vector<double>& v,
                                            std::size_t target) {
    if (v.size() == target) return v;
    std::vector<double> out(target);
    for (std::size_t i = 0; i < target; ++i)
        out[i] = v[std::min(v.size() - 1, i * v.size() / target)];
    return out;
}

inline std::optional<double> avg_opt(const std::vector<std::optional<double>>& xs) {
    double acc = 0.0;
    std::size_t n = 0;
    for (const auto& x : xs)
        if (x) {
            acc += *x;
            ++n;
        }
    if (n == 0) return std::nullopt;
    return acc / double(n);
}

} // namespace enginedetail

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct StageSimilarity {
    std::optional<double> cos_raw, cos_uhkd, pearson_raw, pearson_uhkd;
};

struct EpochMetrics {
    std::size_t epoch = 0;
    double train_acc = 0.0;
    double val_acc = 0.0;
    LossBreakdown loss; // epoch mean of the step breakdowns
    std::array<StageSimilarity, 4> sims;
};

struct RunReport {
    std::vector<EpochMetrics> epochs;
    double wall_seconds = 0.0;
    std::uint64_t checkpoint_digest = 0;

    double final_val_acc() const {
        return epochs.empty() ? 0.0 : epochs.back().val_acc;
    }
};

inline std::string fmt_opt(const std::optional<double>& v) {
    char buf[40];
    if (!v) return "nan";
    std::snprintf(buf, sizeof buf, "%.10g", *v);
    return buf;
}

inline std::string fmt_num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

inline void write_metrics_csv(const RunReport& report, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_metrics_csv: cannot open " + path);
    f << "epoch,split,acc,mse,kl,ce,total,stage,cos_raw,cos_uhkd,pearson_raw,"
         "pearson_uhkd\n";
    for (const auto& e : report.epochs) {
        const auto& L = e.loss;
        f << e.epoch << ",train," << fmt_num(e.train_acc) << "," << fmt_num(L.mse)
          << "," << fmt_num(L.kl) << "," << fmt_num(L.ce) << "," << fmt_num(L.total)
          << ",0,nan,nan,nan,nan\n";
        f << e.epoch << ",val," << fmt_num(e.val_acc) << "," << fmt_num(L.mse) << ","
          << fmt_num(L.kl) << "," << fmt_num(L.ce) << "," << fmt_num(L.total)
          << ",0,nan,nan,nan,nan\n";
        for (std::size_t s = 0; s < 4; ++s) {
            const auto& sim = e.sims[s];
            f << e.epoch << ",val," << fmt_num(e.val_acc) << ","
              << fmt_num(L.per_stage_mse[s]) << "," << fmt_num(L.kl) << ","
              << fmt_num(L.ce) << "," << fmt_num(L.total) << "," << (s + 1) << ","
              << fmt_opt(sim.cos_raw) << "," << fmt_opt(sim.cos_uhkd) << ","
              << fmt_opt(sim.pearson_raw) << "," << fmt_opt(sim.pearson_uhkd) << "\n";
        }
    }
}

// ---------------------------------------------------------------------------
// Teacher pretraining
// ---------------------------------------------------------------------------

struct PretrainOptions {
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    double lr = 3e-3;
    double weight_decay = 0.005;
    double grad_clip = 5.0;
    double label_smoothing = 0.1;
    double warmup_frac = 0.05;
    std::uint64_t seed = 1;
    DistillRecipe::Augment aug{};
};

namespace enginedetail {

inline std::vector<std::size_t> shuffled(const std::vector<std::size_t>& idx,
                                         std::uint64_t key) {
    std::vector<std::size_t> out = idx;
    Rng r(key);
    for (std::size_t i = out.size(); i > 1; --i)
        std::swap(out[i - 1], out[r.below(i)]);
    return out;
}

inline std::vector<std::pair<std::string, Tensor*>> trainable_list(
    ParameterRegistry& reg) {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (const auto& path : reg.paths())
        if (reg.trainable(path)) out.emplace_back(path, &reg.get(path));
    return out;
}

} // namespace enginedetail

inline Model pretrain_teacher(const ModelSpec& spec, const DatasetHandle& ds,
                              const PretrainOptions& opt) {
    Rng init_rng(mix_key(opt.seed, 0x7e4c));
    Model model(spec, init_rng);

    AdamW optimizer({0.9, 0.999, opt.weight_decay, 1e-8});
    auto params = enginedetail::trainable_list(model.params());

    const std::size_t steps_per_epoch =
        (ds.train_idx.size() + opt.batch_size - 1) / opt.batch_size;
    const std::size_t horizon = steps_per_epoch * opt.epochs;
    const std::size_t warmup = std::size_t(double(horizon) * opt.warmup_frac);

    AugmentFlags aug{opt.aug.flip, opt.aug.crop, opt.aug.jitter};
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
        auto order = enginedetail::shuffled(ds.train_idx,
                                            mix_key(opt.seed, 0xba7c, epoch));
        for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
            const std::size_t n = std::min(opt.batch_size, order.size() - start);
            std::vector<std::size_t> ids(order.begin() + start,
                                         order.begin() + start + n);
            auto [batch, labels] = gather_batch(ds, ids);
            augment_inplace(batch, ids, aug, opt.seed, epoch);

            Tape tape;
            Tensor logits = model.forward_with_taps(batch, StageFeature::Source::Teacher)
                                .logits;
            Tensor loss = cross_entropy_smoothed(logits, labels, opt.label_smoothing);
            if (!std::isfinite(loss.item()))
                throw NumericDomainError("pretrain_teacher: loss diverged (NaN) at step " +
                                         std::to_string(step));
            model.params().zero_grads();
            backward(loss);
            std::vector<Tensor*> ptrs;
            for (auto& [p, t] : params) ptrs.push_back(t);
            clip_global_norm(ptrs, opt.grad_clip);
            ++step;
            optimizer.step(params, lr_schedule(step, warmup, horizon, opt.lr), step);
        }
    }
    model.params().set_trainable_all(false); // frozen from here on
    return model;
}

// ---------------------------------------------------------------------------
// Distillation
// ---------------------------------------------------------------------------

namespace enginedetail {

// student magnitude-path extents entering the channel/sequence projections
inline std::pair<std::size_t, std::size_t> fam_input_extents(const Shape& s,
                                                             Layout layout,
                                                             bool use_fft) {
    if (layout == Layout::SEQ) {
        const std::size_t N = use_fft ? fftdetail::next_pow2(s[1]) : s[1];
        return {N, s[2]};
    }
    const std::size_t H = use_fft ? fftdetail::next_pow2(s[2]) : s[2];
    const std::size_t W = use_fft ? fftdetail::next_pow2(s[3]) : s[3];
    return {H * W, s[1]};
}

inline std::vector<double> flat_sample(const Tensor& t, std::size_t b) {
    const std::size_t per = t.size() / t.extent(0);
    return std::vector<double>(t.data().begin() + b * per,
                               t.data().begin() + (b + 1) * per);
}

} // namespace enginedetail

// Per-stage alignment state for one distillation run.
struct AlignBank {
    FtmConfig ftm_cfg;
    FamConfig fam_cfg;
    AlignMode mode = AlignMode::Learned;
    std::array<std::optional<FamParams>, 4> fam; // per stage, learned/frozen modes
    std::array<std::pair<std::size_t, std::size_t>, 4> targets; // (N^T, C^T)
};

// Sizes FAM parameters against the teacher's FTM output extents, using one
// probe forward through both frozen models.
inline AlignBank build_align_bank(Model& teacher, Model& student,
                                  const DistillRecipe& recipe,
                                  const DatasetHandle& ds) {
    AlignBank bank;
    bank.ftm_cfg = {recipe.sigma_low, recipe.sigma_high,   recipe.high_weight,
                    recipe.pool_factor, !recipe.no_fft,    !recipe.no_filter,
                    !recipe.no_downsample};
    bank.fam_cfg = {!recipe.no_fft};
    bank.mode = recipe.align_mode;

    NoGradGuard ng;
    std::vector<std::size_t> probe_ids{ds.train_idx.at(0)};
    auto [probe, labels] = gather_batch(ds, probe_ids);
    auto t_out = teacher.forward_with_taps(probe, StageFeature::Source::Teacher);
    auto s_out = student.forward_with_taps(probe, StageFeature::Source::Student);

    Rng fam_rng(mix_key(recipe.seed, 0xfa3));
    for (std::size_t s = 0; s < 4; ++s) {
        const auto& ttap = t_out.taps[s];
        const auto [Nt, Ct] =
            ftm_output_extents(ttap.tensor.shape(), ttap.layout, bank.ftm_cfg);
        bank.targets[s] = {Nt, Ct};
        if (bank.mode == AlignMode::Learned || bank.mode == AlignMode::Frozen) {
            const auto& stap = s_out.taps[s];
            const auto [Ns, Cs] = enginedetail::fam_input_extents(
                stap.tensor.shape(), stap.layout, !recipe.no_fft);
            FamParams p = fam_init(Cs, Ct, Ns, Nt, fam_rng);
            p.trainable = (bank.mode == AlignMode::Learned);
            for (Tensor* t : p.tensors()) t->set_requires_grad(p.trainable);
            bank.fam[s] = std::move(p);
        }
    }
    return bank;
}

inline FamOutput align_student_tap(const StageFeature& tap, AlignBank& bank,
                                   std::size_t stage_idx) {
    const auto [Nt, Ct] = bank.targets[stage_idx];
    switch (bank.mode) {
        case AlignMode::Learned:
            return fam_forward(tap, *bank.fam[stage_idx], bank.fam_cfg);
        case AlignMode::Frozen:
            return fam_forward_frozen(tap, *bank.fam[stage_idx], bank.fam_cfg);
        case AlignMode::Bilinear:
            return interp_align(tap, InterpMode::Bilinear, Nt, Ct,
                                bank.fam_cfg.use_fft);
        case AlignMode::Nearest:
            return interp_align(tap, InterpMode::Nearest, Nt, Ct,
                                bank.fam_cfg.use_fft);
        case AlignMode::Linear:
            return interp_align(tap, InterpMode::Linear, Nt, Ct,
                                bank.fam_cfg.use_fft);
    }
    throw std::logic_error("unreachable");
}

// Picks the applicable non-parametric mode for a layout (Table V arms).
inline AlignMode interp_mode_for_layout(Layout layout, AlignMode requested) {
    if (layout == Layout::SEQ) return AlignMode::Linear;
    return requested == AlignMode::Nearest ? AlignMode::Nearest : AlignMode::Bilinear;
}

inline StageSimilarity stage_similarity(const StageFeature& ttap,
                                        const StageFeature& stap,
                                        const FtmOutput& ftm_out,
                                        const FamOutput& fam_out) {
    StageSimilarity sim;
    const std::size_t B = ttap.tensor.extent(0);
    std::vector<std::optional<double>> cr, cu, pr, pu;
    for (std::size_t b = 0; b < B; ++b) {
        auto tv = enginedetail::flat_sample(ttap.tensor, b);
        auto sv = enginedetail::flat_sample(stap.tensor, b);
        // raw arm: flatten and nearest-resample the longer to the shorter
        if (tv.size() > sv.size())
            tv = enginedetail::nearest_resample(tv, sv.size());
        else if (sv.size() > tv.size())
            sv = enginedetail::nearest_resample(sv, tv.size());
        cr.push_back(cosine_similarity(tv, sv));
        pr.push_back(pearson_correlation(tv, sv));

        auto fv = enginedetail::flat_sample(ftm_out.tensor, b);
        auto av = enginedetail::flat_sample(fam_out.tensor, b);
        cu.push_back(cosine_similarity(fv, av));
        pu.push_back(pearson_correlation(fv, av));
    }
    sim.cos_raw = enginedetail::avg_opt(cr);
    sim.cos_uhkd = enginedetail::avg_opt(cu);
    sim.pearson_raw = enginedetail::avg_opt(pr);
    sim.pearson_uhkd = enginedetail::avg_opt(pu);
    return sim;
}

// Similarity of teacher/student stage features on a probe batch, raw-spatial
// and post-alignment.
inline std::array<StageSimilarity, 4> similarity_probe(Model& teacher, Model& student,
                                                       AlignBank& bank,
                                                       const Tensor& probe_batch) {
    NoGradGuard ng;
    auto t_out = teacher.forward_with_taps(probe_batch, StageFeature::Source::Teacher);
    auto s_out = student.forward_with_taps(probe_batch, StageFeature::Source::Student);
    std::array<StageSimilarity, 4> sims;
    for (std::size_t s = 0; s < 4; ++s) {
        FtmOutput ftm_out = ftm_forward(t_out.taps[s], bank.ftm_cfg);
        FamOutput fam_out = align_student_tap(s_out.taps[s], bank, s);
        sims[s] = stage_similarity(t_out.taps[s], s_out.taps[s], ftm_out, fam_out);
    }
    return sims;
}

struct DistillResult {
    RunReport report;
    AlignBank bank; // trained alignment parameters
};

// Student backbone plus alignment parameters under one namespace; entries
// alias the live tensors, so checkpoint load/save acts on the models directly.
inline ParameterRegistry build_run_registry(Model& student, AlignBank& bank) {
    ParameterRegistry run_reg;
    for (const auto& path : student.params().paths())
        run_reg.add("student." + path, student.params().get(path),
                    student.params().trainable(path));
    for (std::size_t s = 0; s < 4; ++s) {
        if (!bank.fam[s]) continue;
        auto& p = *bank.fam[s];
        const std::string base = "fam.stage" + std::to_string(s + 1) + ".";
        run_reg.add(base + "channel_w", p.channel_w, p.trainable);
        run_reg.add(base + "channel_b", p.channel_b, p.trainable);
        run_reg.add(base + "seq_w", p.seq_w, p.trainable);
        run_reg.add(base + "seq_b", p.seq_b, p.trainable);
        run_reg.add(base + "gamma", p.gamma, p.trainable);
        run_reg.add(base + "beta", p.beta, p.trainable);
    }
    return run_reg;
}

// The UHKD training loop. `out_dir`, when set, receives metrics.csv and
// checkpoints; teacher stays frozen throughout.
inline DistillResult distill(Model& teacher, Model& student,
                             const DistillRecipe& recipe, const DatasetHandle& ds,
                             const std::string& out_dir = "") {
    recipe.validate();
    const auto t0 = std::chrono::steady_clock::now();

    AlignBank bank = build_align_bank(teacher, student, recipe, ds);

    ParameterRegistry run_reg = build_run_registry(student, bank);
    auto params = enginedetail::trainable_list(run_reg);
    AdamW optimizer({recipe.beta1, recipe.beta2, recipe.weight_decay,
                     recipe.adam_eps});

    const std::size_t steps_per_epoch =
        (ds.train_idx.size() + recipe.batch_size - 1) / recipe.batch_size;
    const std::size_t horizon = steps_per_epoch * recipe.epochs;
    const std::size_t warmup = std::size_t(double(horizon) * recipe.warmup_frac);
    AugmentFlags aug{recipe.aug.flip, recipe.aug.crop, recipe.aug.jitter};

    // fixed probe batch for comparable similarity curves
    const std::size_t probe_n = std::min<std::size_t>(8, ds.val_idx.size());
    std::vector<std::size_t> probe_ids(ds.val_idx.begin(),
                                       ds.val_idx.begin() + probe_n);
    auto [probe_batch, probe_labels] = gather_batch(ds, probe_ids);

    RunReport report;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < recipe.epochs; ++epoch) {
        auto order = enginedetail::shuffled(ds.train_idx,
                                            mix_key(recipe.seed, 0xba7c, epoch));
        LossBreakdown acc_loss;
        std::size_t nsteps = 0;
        for (std::size_t start = 0; start < order.size(); start += recipe.batch_size) {
            const std::size_t n = std::min(recipe.batch_size, order.size() - start);
            std::vector<std::size_t> ids(order.begin() + start,
                                         order.begin() + start + n);
            auto [batch, labels] = gather_batch(ds, ids);
            augment_inplace(batch, ids, aug, recipe.seed, epoch);

            Tape tape;
            Model::Forward t_out;
            {
                NoGradGuard ng;
                t_out = teacher.forward_with_taps(batch, StageFeature::Source::Teacher);
            }
            auto s_out = student.forward_with_taps(batch, StageFeature::Source::Student);

            std::vector<std::pair<FtmOutput, FamOutput>> pairs;
            for (int st : recipe.stage_set) {
                const std::size_t si = std::size_t(st - 1);
                pairs.emplace_back(ftm_forward(t_out.taps[si], bank.ftm_cfg),
                                   align_student_tap(s_out.taps[si], bank, si));
            }
            auto [loss, bd] = total_loss(pairs, t_out.logits, s_out.logits, labels,
                                         recipe.lambda_kl, recipe.lambda_ce,
                                         recipe.tau, recipe.label_smoothing);
            if (!std::isfinite(bd.total)) {
                if (!out_dir.empty())
                    save_checkpoint(run_reg, out_dir + "/ckpt_last.bin");
                throw NumericDomainError(
                    "distill: loss diverged (NaN) at step " + std::to_string(step) +
                    "; last-known-good checkpoint retained");
            }
            run_reg.zero_grads();
            backward(loss);
            std::vector<Tensor*> ptrs;
            for (auto& [p, t] : params) ptrs.push_back(t);
            clip_global_norm(ptrs, recipe.grad_clip);
            ++step;
            optimizer.step(params, lr_schedule(step, warmup, horizon, recipe.lr), step);

            acc_loss.mse += bd.mse;
            acc_loss.kl += bd.kl;
            acc_loss.ce += bd.ce;
            acc_loss.total += bd.total;
            for (std::size_t s = 0; s < 4; ++s)
                acc_loss.per_stage_mse[s] += bd.per_stage_mse[s];
            ++nsteps;
        }

        EpochMetrics em;
        em.epoch = epoch;
        em.loss = acc_loss;
        if (nsteps > 0) {
            em.loss.mse /= double(nsteps);
            em.loss.kl /= double(nsteps);
            em.loss.ce /= double(nsteps);
            em.loss.total /= double(nsteps);
            for (auto& v : em.loss.per_stage_mse) v /= double(nsteps);
        }
        em.loss.lambda_kl = recipe.lambda_kl;
        em.loss.lambda_ce = recipe.lambda_ce;
        em.loss.tau = recipe.tau;
        em.train_acc = evaluate(student, ds, ds.train_idx);
        em.val_acc = evaluate(student, ds, ds.val_idx);
        em.sims = similarity_probe(teacher, student, bank, probe_batch);
        report.epochs.push_back(em);

        if (!out_dir.empty() && recipe.checkpoint_every > 0 &&
            (epoch + 1) % recipe.checkpoint_every == 0)
            save_checkpoint(run_reg, out_dir + "/ckpt_epoch" +
                                         std::to_string(epoch + 1) + ".bin");
    }

    report.checkpoint_digest = run_reg.digest();
    if (!out_dir.empty()) {
        save_checkpoint(run_reg, out_dir + "/ckpt_last.bin");
        write_metrics_csv(report, out_dir + "/metrics.csv");
    }
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    DistillResult res;
    res.report = std::move(report);
    res.bank = std::move(bank);
    return res;
}

// Plain supervised control: same loop shape, CE only.
inline RunReport train_ce_only(Model& student, const DistillRecipe& recipe,
                               const DatasetHandle& ds) {
    const auto t0 = std::chrono::steady_clock::now();
    ParameterRegistry& reg = student.params();
    auto params = enginedetail::trainable_list(reg);
    AdamW optimizer({recipe.beta1, recipe.beta2, recipe.weight_decay,
                     recipe.adam_eps});
    const std::size_t steps_per_epoch =
        (ds.train_idx.size() + recipe.batch_size - 1) / recipe.batch_size;
    const std::size_t horizon = steps_per_epoch * recipe.epochs;
    const std::size_t warmup = std::size_t(double(horizon) * recipe.warmup_frac);
    AugmentFlags aug{recipe.aug.flip, recipe.aug.crop, recipe.aug.jitter};

    RunReport report;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < recipe.epochs; ++epoch) {
        auto order = enginedetail::shuffled(ds.train_idx,
                                            mix_key(recipe.seed, 0xba7c, epoch));
        for (std::size_t start = 0; start < order.size(); start += recipe.batch_size) {
            const std::size_t n = std::min(recipe.batch_size, order.size() - start);
            std::vector<std::size_t> ids(order.begin() + start,
                                         order.begin() + start + n);
            auto [batch, labels] = gather_batch(ds, ids);
            augment_inplace(batch, ids, aug, recipe.seed, epoch);
            Tape tape;
            Tensor logits = student.forward(batch);
            Tensor loss = cross_entropy_smoothed(logits, labels,
                                                 recipe.label_smoothing);
            if (!std::isfinite(loss.item()))
                throw NumericDomainError("train_ce_only: loss diverged (NaN)");
            reg.zero_grads();
            backward(loss);
            std::vector<Tensor*> ptrs;
            for (auto& [p, t] : params) ptrs.push_back(t);
            clip_global_norm(ptrs, recipe.grad_clip);
            ++step;
            optimizer.step(params, lr_schedule(step, warmup, horizon, recipe.lr), step);
        }
        EpochMetrics em;
        em.epoch = epoch;
        em.loss.ce = 0.0;
        em.train_acc = evaluate(student, ds, ds.train_idx);
        em.val_acc = evaluate(student, ds, ds.val_idx);
        report.epochs.push_back(em);
    }
    report.checkpoint_digest = reg.digest();
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

// ---------------------------------------------------------------------------
// Ablation suite
// ---------------------------------------------------------------------------

struct AblationArm {
    std::string name;
    DistillRecipe recipe;
    bool failed = false;
    std::string error;
    RunReport report;
};

// Runs {full, no_fft, no_filter, no_downsample, interp, frozen, stage
// subsets} with equal seed pairing; failures are recorded and the suite
// continues.
inline std::vector<AblationArm> run_ablation_suite(
    Model& teacher, const ModelSpec& student_spec, const DistillRecipe& base,
    const DatasetHandle& ds,
    const std::vector<std::set<int>>& stage_subsets = {{1}, {2}, {3}, {4}}) {
    std::vector<AblationArm> arms;
    auto push = [&](const std::string& name, auto mutate) {
        AblationArm arm;
        arm.name = name;
        arm.recipe = base;
        mutate(arm.recipe);
        arms.push_back(std::move(arm));
    };
    push("full", [](DistillRecipe&) {});
    push("no_fft", [](DistillRecipe& r) { r.no_fft = true; });
    push("no_filter", [](DistillRecipe& r) { r.no_filter = true; });
    push("no_downsample", [](DistillRecipe& r) { r.no_downsample = true; });
    push("bilinear", [](DistillRecipe& r) { r.align_mode = AlignMode::Bilinear; });
    push("nearest", [](DistillRecipe& r) { r.align_mode = AlignMode::Nearest; });
    push("linear", [](DistillRecipe& r) { r.align_mode = AlignMode::Linear; });
    push("random_init_frozen",
         [](DistillRecipe& r) { r.align_mode = AlignMode::Frozen; });
    // plain KD: Eq. 18/CE only, MSE weight driven to zero
    push("kd_only", [](DistillRecipe& r) { r.lambda_kl = 1.0 - r.lambda_ce; });
    push("ce_only", [](DistillRecipe& r) {
        r.lambda_kl = 0.0;
        r.lambda_ce = 1.0;
    });
    for (const auto& subset : stage_subsets) {
        DistillRecipe r = base;
        r.stage_set = subset;
        AblationArm arm;
        arm.name = "stages_{" + r.stage_set_str() + "}";
        arm.recipe = r;
        arms.push_back(std::move(arm));
    }

    const Layout student_layout =
        (student_spec.family == Family::CNN) ? Layout::GRID : Layout::SEQ;

    for (auto& arm : arms) {
        try {
            // non-parametric modes must match the student layout
            if (arm.recipe.align_mode == AlignMode::Bilinear ||
                arm.recipe.align_mode == AlignMode::Nearest ||
                arm.recipe.align_mode == AlignMode::Linear)
                arm.recipe.align_mode =
                    interp_mode_for_layout(student_layout, arm.recipe.align_mode);
            Rng srng(mix_key(arm.recipe.seed, 0x57d));
            Model student(student_spec, srng);
            arm.report = distill(teacher, student, arm.recipe, ds).report;
        } catch (const std::exception& e) {
            arm.failed = true;
            arm.error = e.what();
        }
    }
    return arms;
}

inline void write_ablation_csv(const std::vector<AblationArm>& arms,
                               const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_ablation_csv: cannot open " + path);
    f << "arm,status,final_val_acc,epochs,wall_seconds\n";
    for (const auto& a : arms) {
        f << a.name << "," << (a.failed ? "failed" : "ok") << ","
          << fmt_num(a.failed ? 0.0 : a.report.final_val_acc()) << ","
          << a.recipe.epochs << ","
          << fmt_num(a.failed ? 0.0 : a.report.wall_seconds) << "\n";
    }
}

} // namespace uhkd
