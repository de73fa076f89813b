#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "helpers.hpp"
#include "uhkd/losses.hpp"
#include "uhkd/models.hpp"

using namespace uhkd;
using testutil::random_tensor;

namespace {

ModelSpec spec_for(Family f, std::size_t image_size = 32) {
    ModelSpec s;
    s.family = f;
    s.image_size = image_size;
    if (f == Family::CNN)
        s.stage_widths = {16, 32, 48, 64};
    else
        s.stage_widths = {32, 32, 32, 32};
    return s;
}

} // namespace

TEST_CASE("mini-CNN taps halve spatial extents 16-8-4-2") {
    Rng r(1);
    Model m(spec_for(Family::CNN), r);
    auto out = m.forward_with_taps(random_tensor({2, 3, 32, 32}),
                                   StageFeature::Source::Teacher);
    CHECK(out.logits.shape() == Shape{2, 10});
    const std::size_t spatial[] = {16, 8, 4, 2};
    const std::size_t widths[] = {16, 32, 48, 64};
    for (int i = 0; i < 4; ++i) {
        const auto& tap = out.taps[std::size_t(i)];
        CHECK(tap.layout == Layout::GRID);
        CHECK(tap.stage == i + 1);
        CHECK(tap.tensor.shape() ==
              Shape{2, widths[i], spatial[i], spatial[i]});
    }
}

TEST_CASE("mini-ATTN keeps 64 tokens at every stage") {
    Rng r(2);
    Model m(spec_for(Family::ATTN), r);
    auto out = m.forward_with_taps(random_tensor({3, 3, 32, 32}),
                                   StageFeature::Source::Student);
    CHECK(out.logits.shape() == Shape{3, 10});
    for (const auto& tap : out.taps) {
        CHECK(tap.layout == Layout::SEQ);
        CHECK(tap.tensor.shape() == Shape{3, 64, 32});
    }
}

TEST_CASE("mini-MLP emits SEQ taps") {
    Rng r(3);
    Model m(spec_for(Family::MLP), r);
    auto out = m.forward_with_taps(random_tensor({1, 3, 32, 32}),
                                   StageFeature::Source::Student);
    for (const auto& tap : out.taps) {
        CHECK(tap.layout == Layout::SEQ);
        CHECK(tap.tensor.shape() == Shape{1, 64, 32});
        CHECK_NOTHROW(validate_stage_feature(tap));
    }
}

TEST_CASE("zero input produces finite logits") {
    for (Family f : {Family::CNN, Family::ATTN, Family::MLP}) {
        Rng r(4);
        Model m(spec_for(f), r);
        Tensor logits = m.forward(Tensor::zeros({2, 3, 32, 32}));
        for (double v : logits.data()) CHECK(std::isfinite(v));
    }
}

TEST_CASE("input shape mismatch rejected") {
    Rng r(5);
    Model m(spec_for(Family::CNN), r);
    CHECK_THROWS_AS(m.forward(random_tensor({1, 3, 16, 16})), DimensionError);
    CHECK_THROWS_AS(m.forward(random_tensor({1, 1, 32, 32})), DimensionError);
}

TEST_CASE("parameter counts match the closed form and stay under 200k") {
    for (Family f : {Family::CNN, Family::ATTN, Family::MLP}) {
        Rng r(6);
        ModelSpec s = spec_for(f);
        Model m(s, r);
        CHECK(m.params().total_params() == Model::expected_param_count(s));
        CHECK(m.params().total_params() <= 200000);
        INFO(family_name(f), ": ", m.params().total_params());
    }
}

TEST_CASE("registry path and trainability contracts") {
    ParameterRegistry reg;
    reg.add("a.w", Tensor::ones({2, 2}));
    CHECK_THROWS_WITH_AS(reg.add("a.w", Tensor::ones({2})),
                         doctest::Contains("duplicate"), std::runtime_error);
    CHECK_THROWS_WITH_AS(reg.get("missing"), doctest::Contains("unknown"),
                         std::runtime_error);
    CHECK(reg.trainable("a.w"));
    reg.set_trainable_all(false);
    CHECK_FALSE(reg.trainable("a.w"));
    CHECK_FALSE(reg.get("a.w").requires_grad());
}

TEST_CASE("registry digest tracks values and ordering") {
    ParameterRegistry a, b;
    a.add("x", Tensor::ones({3}));
    b.add("x", Tensor::ones({3}));
    CHECK(a.digest() == b.digest());
    b.get("x").data()[1] = 2.0;
    CHECK(a.digest() != b.digest());
}

TEST_CASE("model construction is deterministic under seed") {
    Rng r1(42), r2(42), r3(43);
    Model a(spec_for(Family::ATTN), r1);
    Model b(spec_for(Family::ATTN), r2);
    Model c(spec_for(Family::ATTN), r3);
    CHECK(a.params().digest() == b.params().digest());
    CHECK(a.params().digest() != c.params().digest());
}

TEST_CASE("ATTN/MLP require equal stage widths and divisible patch") {
    Rng r(7);
    ModelSpec bad = spec_for(Family::ATTN);
    bad.stage_widths = {16, 32, 32, 32};
    CHECK_THROWS_AS(Model(bad, r), DimensionError);
    ModelSpec odd = spec_for(Family::MLP);
    odd.patch_size = 5;
    CHECK_THROWS_AS(Model(odd, r), DimensionError);
}

TEST_CASE("heterogeneity matrix: every pairing aligns end-to-end") {
    const Family fams[] = {Family::CNN, Family::ATTN, Family::MLP};
    const std::pair<Family, Family> pairs[] = {
        {Family::CNN, Family::ATTN}, {Family::CNN, Family::MLP},
        {Family::ATTN, Family::CNN}, {Family::ATTN, Family::MLP},
        {Family::MLP, Family::CNN},  {Family::MLP, Family::ATTN},
        {Family::CNN, Family::CNN},  {Family::ATTN, Family::ATTN},
    };
    (void)fams;
    Tensor batch = random_tensor({1, 3, 16, 16}, 0.0, 1.0);
    for (auto [tf, sf] : pairs) {
        Rng rt(100), rs(200);
        ModelSpec ts = spec_for(tf, 16), ss = spec_for(sf, 16);
        if (tf != Family::CNN) ts.stage_widths = {16, 16, 16, 16};
        if (sf != Family::CNN) ss.stage_widths = {16, 16, 16, 16};
        Model teacher(ts, rt);
        Model student(ss, rs);
        auto tout = teacher.forward_with_taps(batch, StageFeature::Source::Teacher);
        auto sout = student.forward_with_taps(batch, StageFeature::Source::Student);
        FtmConfig cfg;
        Rng rf(300);
        for (std::size_t st = 0; st < 4; ++st) {
            auto [Nt, Ct] = ftm_output_extents(tout.taps[st].tensor.shape(),
                                               tout.taps[st].layout, cfg);
            FtmOutput t = ftm_forward(tout.taps[st], cfg);
            const Shape& sh = sout.taps[st].tensor.shape();
            std::size_t Ns, Cs;
            if (sout.taps[st].layout == Layout::SEQ) {
                Ns = fftdetail::next_pow2(sh[1]);
                Cs = sh[2];
            } else {
                Ns = fftdetail::next_pow2(sh[2]) * fftdetail::next_pow2(sh[3]);
                Cs = sh[1];
            }
            FamParams p = fam_init(Cs, Ct, Ns, Nt, rf);
            FamOutput s = fam_forward(sout.taps[st], p);
            CHECK(t.tensor.shape() == s.tensor.shape());
        }
    }
}

TEST_CASE("gradients reach student backbone but never the teacher") {
    Rng rt(8), rs(9);
    ModelSpec ts = spec_for(Family::ATTN, 16);
    ts.stage_widths = {16, 16, 16, 16};
    Model teacher(ts, rt);
    teacher.params().set_trainable_all(false);
    Model student(spec_for(Family::CNN, 16), rs);

    Tensor batch = random_tensor({2, 3, 16, 16}, 0.0, 1.0);
    Tape tape;
    Model::Forward tout;
    {
        NoGradGuard ng;
        tout = teacher.forward_with_taps(batch, StageFeature::Source::Teacher);
    }
    auto sout = student.forward_with_taps(batch, StageFeature::Source::Student);
    FtmConfig cfg;
    FtmOutput t = ftm_forward(tout.taps[0], cfg);
    auto [Nt, Ct] = ftm_output_extents(tout.taps[0].tensor.shape(),
                                       tout.taps[0].layout, cfg);
    Rng rf(10);
    const Shape& sh = sout.taps[0].tensor.shape();
    FamParams p = fam_init(sh[1], Ct, fftdetail::next_pow2(sh[2]) * fftdetail::next_pow2(sh[3]),
                           Nt, rf);
    FamOutput s = fam_forward(sout.taps[0], p);
    backward(freq_mse(t, s));

    double student_norm = 0.0;
    for (const auto& path : student.params().paths())
        if (student.params().get(path).has_grad())
            for (double g : student.params().get(path).grad_data())
                student_norm += g * g;
    CHECK(student_norm > 0.0);
    double teacher_norm = 0.0;
    for (const auto& path : teacher.params().paths())
        if (teacher.params().get(path).has_grad())
            for (double g : teacher.params().get(path).grad_data())
                teacher_norm += g * g;
    CHECK(teacher_norm == 0.0);
}
