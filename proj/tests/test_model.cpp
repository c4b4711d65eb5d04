#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "asdfd/model.hpp"

using namespace asdfd;

namespace {

using M = Model<double>;
using T64 = Tensor<double>;

ModelConfig toy_config(int layers = 1) {
    ModelConfig cfg;
    cfg.num_layers = layers;
    cfg.hidden_dim = 4;
    cfg.num_heads = 2;
    cfg.ff_dim = 8;
    cfg.vocab_size = 16;
    cfg.max_len = 6;
    cfg.num_classes = 3;
    return cfg;
}

// ---------------------------------------------------------------------------
// Independent reference computation of one post-LN encoder layer. Plain
// loops over std::vector<double>, no shared code with the implementation.
// ---------------------------------------------------------------------------

std::vector<double> ref_ln(const std::vector<double>& x, const std::vector<double>& g, const std::vector<double>& b,
                           double eps) {
    const size_t d = g.size();
    const size_t rows = x.size() / d;
    std::vector<double> out(x.size());
    for (size_t r = 0; r < rows; ++r) {
        double mu = 0, var = 0;
        for (size_t j = 0; j < d; ++j) mu += x[r * d + j];
        mu /= double(d);
        for (size_t j = 0; j < d; ++j) {
            double c = x[r * d + j] - mu;
            var += c * c;
        }
        var /= double(d);
        for (size_t j = 0; j < d; ++j) out[r * d + j] = g[j] * (x[r * d + j] - mu) / std::sqrt(var + eps) + b[j];
    }
    return out;
}

std::vector<double> ref_affine(const std::vector<double>& x, const std::vector<double>& w,
                               const std::vector<double>& bias, size_t din, size_t dout) {
    const size_t rows = x.size() / din;
    std::vector<double> out(rows * dout);
    for (size_t r = 0; r < rows; ++r)
        for (size_t j = 0; j < dout; ++j) {
            double acc = bias[j];
            for (size_t i = 0; i < din; ++i) acc += x[r * din + i] * w[i * dout + j];
            out[r * dout + j] = acc;
        }
    return out;
}

double ref_gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

// One encoder layer on a single sample (L, D) with a key mask.
std::vector<double> ref_encoder_layer(const EncoderLayer<double>& ly, const std::vector<double>& x, int L, int D,
                                      int heads, const std::vector<uint8_t>& attend, double eps) {
    const int dh = D / heads;
    auto q = ref_affine(x, ly.wq.values(), ly.bq.values(), D, D);
    auto k = ref_affine(x, ly.wk.values(), ly.bk.values(), D, D);
    auto v = ref_affine(x, ly.wv.values(), ly.bv.values(), D, D);
    std::vector<double> ctx(size_t(L) * D, 0.0);
    for (int h = 0; h < heads; ++h) {
        for (int i = 0; i < L; ++i) {
            std::vector<double> scores(L, -std::numeric_limits<double>::infinity());
            double mx = -std::numeric_limits<double>::infinity();
            for (int j = 0; j < L; ++j) {
                if (!attend[j]) continue;
                double dot = 0;
                for (int c = 0; c < dh; ++c) dot += q[size_t(i) * D + h * dh + c] * k[size_t(j) * D + h * dh + c];
                scores[j] = dot / std::sqrt(double(dh));
                mx = std::max(mx, scores[j]);
            }
            double z = 0;
            std::vector<double> a(L, 0.0);
            for (int j = 0; j < L; ++j) {
                if (!attend[j]) continue;
                a[j] = std::exp(scores[j] - mx);
                z += a[j];
            }
            for (int j = 0; j < L; ++j) {
                if (a[j] == 0.0) continue;
                const double w = a[j] / z;
                for (int c = 0; c < dh; ++c) ctx[size_t(i) * D + h * dh + c] += w * v[size_t(j) * D + h * dh + c];
            }
        }
    }
    auto proj = ref_affine(ctx, ly.wo.values(), ly.bo.values(), D, D);
    std::vector<double> res1(x.size());
    for (size_t i = 0; i < x.size(); ++i) res1[i] = x[i] + proj[i];
    auto h1 = ref_ln(res1, ly.ln1_g.values(), ly.ln1_b.values(), eps);
    auto mid = ref_affine(h1, ly.w1.values(), ly.b1.values(), D, ly.b1.numel());
    for (auto& m : mid) m = ref_gelu(m);
    auto ff = ref_affine(mid, ly.w2.values(), ly.b2.values(), ly.b1.numel(), D);
    std::vector<double> res2(h1.size());
    for (size_t i = 0; i < h1.size(); ++i) res2[i] = h1[i] + ff[i];
    return ref_ln(res2, ly.ln2_g.values(), ly.ln2_b.values(), eps);
}

}  // namespace

TEST_CASE("encode matches an independent step-by-step reference") {
    Rng rng(21);
    auto m = M::random_init(toy_config(), rng, 0.3);
    const int B = 2, L = 6, D = 4;
    auto e = T64::randn({B, L, D}, rng, 0.0, 1.0);
    AttentionMask mask(B, L);
    mask.set(0, 5, false);
    mask.set(1, 4, false);
    mask.set(1, 5, false);

    auto h = m.encode(e, mask);
    CHECK(h.shape() == e.shape());

    for (int b = 0; b < B; ++b) {
        std::vector<double> x(e.values().begin() + b * L * D, e.values().begin() + (b + 1) * L * D);
        std::vector<uint8_t> attend(L);
        for (int p = 0; p < L; ++p) attend[size_t(p)] = mask.at(b, p) ? 1 : 0;
        auto ref = ref_encoder_layer(m.layers[0], x, L, D, m.cfg.num_heads, attend, m.cfg.ln_eps);
        for (int i = 0; i < L * D; ++i)
            CHECK(h.values()[size_t(b) * L * D + i] == doctest::Approx(ref[size_t(i)]).epsilon(1e-5));
    }
}

TEST_CASE("classify matches affine+tanh+affine reference") {
    Rng rng(22);
    auto m = M::random_init(toy_config(), rng, 0.4);
    auto h = T64::randn({3, 4}, rng, 0.0, 1.0);
    auto logits = m.classify(h);
    auto pooled = ref_affine(h.values(), m.head.pool_w.values(), m.head.pool_b.values(), 4, 4);
    for (auto& p : pooled) p = std::tanh(p);
    auto ref = ref_affine(pooled, m.head.cls_w.values(), m.head.cls_b.values(), 4, 3);
    for (size_t i = 0; i < ref.size(); ++i) CHECK(logits.values()[i] == doctest::Approx(ref[i]).epsilon(1e-9));

    // zero weights and bias give all-zero logits
    auto z = M::random_init(toy_config(), rng);
    for (auto& p : z.head.params()) std::fill(p.values().begin(), p.values().end(), 0.0);
    auto zl = z.classify(h);
    for (double v : zl.values()) CHECK(v == 0.0);

    // identical rows give identical logits
    T64 same({2, 4}, {1, 2, 3, 4, 1, 2, 3, 4});
    auto sl = m.classify(same);
    for (int j = 0; j < 3; ++j) CHECK(sl.values()[size_t(j)] == sl.values()[size_t(3 + j)]);
}

TEST_CASE("embed is deterministic and position-aware") {
    Rng rng(23);
    auto m = M::random_init(toy_config(), rng);
    std::vector<int> ids{kClsId, 7, 7, kSepId, kPadId, kPadId};

    auto e1 = m.embed(ids, 1);
    auto e2 = m.embed(ids, 1);
    CHECK(e1.values() == e2.values());

    // same token at positions 1 and 2 embeds differently
    bool differs = false;
    for (int j = 0; j < 4; ++j)
        differs = differs || e1.values()[size_t(1 * 4 + j)] != e1.values()[size_t(2 * 4 + j)];
    CHECK(differs);

    // two identical rows in one batch produce identical blocks
    std::vector<int> two = ids;
    two.insert(two.end(), ids.begin(), ids.end());
    auto eb = m.embed(two, 2);
    for (int i = 0; i < 6 * 4; ++i) CHECK(eb.values()[size_t(i)] == eb.values()[size_t(6 * 4 + i)]);

    // row 0 ([CLS] at position 0) matches any other sequence's row 0
    std::vector<int> other{kClsId, 9, kSepId, kPadId, kPadId, kPadId};
    auto eo = m.embed(other, 1);
    for (int j = 0; j < 4; ++j) CHECK(eo.values()[size_t(j)] == e1.values()[size_t(j)]);

    CHECK_THROWS_AS(m.embed({99, 0, 0, 0, 0, 0}, 1), std::invalid_argument);
}

TEST_CASE("mask isolation: masked-out rows cannot influence attendable ones") {
    Rng rng(24);
    auto m = M::random_init(toy_config(2), rng, 0.2);
    const int B = 1, L = 6, D = 4;
    auto e = T64::randn({B, L, D}, rng, 0.0, 1.0);
    AttentionMask mask(B, L);
    mask.set(0, 4, false);
    mask.set(0, 5, false);

    auto h_before = m.encode(e, mask);
    auto e2 = e.clone_detached();
    for (int p : {4, 5})
        for (int j = 0; j < D; ++j) e2.values()[size_t(p * D + j)] += rng.uniform(-3.0, 3.0);
    auto h_after = m.encode(e2, mask);

    for (int p = 0; p < 4; ++p)
        for (int j = 0; j < D; ++j) {
            const size_t idx = size_t(p * D + j);
            CHECK(std::fabs(h_before.values()[idx] - h_after.values()[idx]) <= 1e-6);
        }
}

TEST_CASE("forward composes embed/encode/classify and ignores extra padding") {
    Rng rng(25);
    auto m = M::random_init(toy_config(2), rng, 0.2);
    std::vector<int> ids{kClsId, 6, 8, kSepId, kPadId, kPadId};
    auto logits = m.forward(ids, 1);

    auto e = m.embed(ids, 1);
    auto mask = M::attention_mask_from_ids(ids, 1);
    auto out = m.forward_from_embeddings(e, mask);
    for (size_t i = 0; i < logits.numel(); ++i)
        CHECK(logits.values()[i] == doctest::Approx(out.logits.values()[i]).epsilon(1e-12));

    // h_cls equals h_all at position 0
    for (int j = 0; j < 4; ++j) CHECK(out.h_cls.values()[size_t(j)] == out.h_all.values()[size_t(j)]);

    // shorter padding vs the same content: logits unchanged within 1e-5
    std::vector<int> short_ids{kClsId, 6, 8, kSepId};
    auto logits_short = m.forward(short_ids, 1);
    for (size_t i = 0; i < logits.numel(); ++i)
        CHECK(std::fabs(logits.values()[i] - logits_short.values()[i]) <= 1e-5);

    // bitwise stability across repeated runs
    auto again = m.forward(ids, 1);
    CHECK(again.values() == logits.values());
}

TEST_CASE("forward_from_embeddings gradient wrt e matches finite differences") {
    Rng rng(26);
    auto m = M::random_init(toy_config(2), rng, 0.2);
    m.set_requires_grad(false);
    const int B = 2, L = 5, D = 4;
    auto e = T64::randn({B, L, D}, rng, 0.0, 0.5);
    e.set_requires_grad(true);
    AttentionMask mask(B, L);
    mask.set(1, 4, false);
    std::vector<int> labels{1, 2};

    auto loss_fn = [&] { return cross_entropy(m.forward_from_embeddings(e, mask).logits, labels); };
    e.zero_grad();
    backward(loss_fn());
    auto analytic = e.grad_view();

    const double h = 1e-4;
    double worst = 0.0;
    for (int s = 0; s < 40; ++s) {
        const int idx = rng.uniform_int(0, B * L * D - 1);
        const double orig = e.data()[idx];
        e.data()[idx] = orig + h;
        const double up = loss_fn().item();
        e.data()[idx] = orig - h;
        const double dn = loss_fn().item();
        e.data()[idx] = orig;
        const double num = (up - dn) / (2 * h);
        worst = std::max(worst, std::fabs(analytic[size_t(idx)] - num) /
                                    std::max({std::fabs(num), std::fabs(analytic[size_t(idx)]), 1e-4}));
    }
    CHECK(worst <= 1e-4);
}

TEST_CASE("init_student_from_teacher copies layers, shares frozen embeddings") {
    Rng rng(27);
    ModelConfig cfg = toy_config(4);
    auto teacher = M::random_init(cfg, rng, 0.2);

    SUBCASE("identity initialisation reproduces the teacher") {
        auto student = init_student_from_teacher(teacher, {1, 2, 3, 4});
        std::vector<int> ids{kClsId, 5, 9, kSepId, kPadId, kPadId};
        auto lt = teacher.forward(ids, 1);
        auto ls = student.forward(ids, 1);
        for (size_t i = 0; i < lt.numel(); ++i) CHECK(ls.values()[i] == doctest::Approx(lt.values()[i]).epsilon(1e-12));
    }

    SUBCASE("subset initialisation maps indices 1-based") {
        auto student = init_student_from_teacher(teacher, {1, 4});
        CHECK(student.cfg.num_layers == 2);
        CHECK(student.layers[0].wq.values() == teacher.layers[0].wq.values());
        CHECK(student.layers[1].wq.values() == teacher.layers[3].wq.values());
        CHECK_THROWS_AS(init_student_from_teacher(teacher, {0, 2}), std::invalid_argument);
        CHECK_THROWS_AS(init_student_from_teacher(teacher, {1, 5}), std::invalid_argument);
    }

    SUBCASE("layer copies are independent, embedding is shared and frozen") {
        auto student = init_student_from_teacher(teacher, {1, 4});
        const double before = teacher.layers[0].wq.values()[0];
        student.layers[0].wq.values()[0] += 1.0;
        CHECK(teacher.layers[0].wq.values()[0] == before);

        CHECK(student.embedding.get() == teacher.embedding.get());
        CHECK(student.embedding->frozen());
        AdamState<double> st(student.embedding->tok.numel());
        student.embedding->tok.grad();
        CHECK_THROWS_AS(adam_step(student.embedding->tok, st, 1e-3), precondition_error);

        // shared table embeds identical tokens to bit-identical blocks
        std::vector<int> ids{kClsId, 3, kSepId, kPadId, kPadId, kPadId};
        CHECK(teacher.embed(ids, 1).values() == student.embed(ids, 1).values());
    }
}
