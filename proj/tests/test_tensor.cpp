#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "asdfd/ops.hpp"
#include "asdfd/optim.hpp"
#include "asdfd/rng.hpp"

using namespace asdfd;

namespace {

using T64 = Tensor<double>;

// Central finite differences against the analytic gradient of `make_loss`
// with respect to `leaf`. Returns the max relative error over sampled
// coordinates; the denominator is floored so near-zero gradients compare at
// an absolute scale instead of dividing by noise.
template <class F>
double gradcheck(F&& make_loss, T64& leaf, Rng& rng, int samples = 24, double h = 1e-4) {
    leaf.set_requires_grad(true);
    leaf.zero_grad();
    {
        auto loss = make_loss();
        backward(loss);
    }
    std::vector<double> analytic = leaf.grad_view();
    REQUIRE(analytic.size() == leaf.numel());

    double worst = 0.0;
    const int n = static_cast<int>(leaf.numel());
    for (int s = 0; s < samples; ++s) {
        const int idx = rng.uniform_int(0, n - 1);
        const double orig = leaf.data()[idx];
        leaf.data()[idx] = orig + h;
        const double up = make_loss().item();
        leaf.data()[idx] = orig - h;
        const double dn = make_loss().item();
        leaf.data()[idx] = orig;
        const double numeric = (up - dn) / (2.0 * h);
        const double a = analytic[idx];
        const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-4});
        worst = std::max(worst, std::fabs(a - numeric) / denom);
    }
    return worst;
}

}  // namespace

TEST_CASE("softmax matches hand-computed rows") {
    T64 z({2, 2}, {0.0, 0.0, 1.0, 0.0});
    auto p = softmax(z, 1.0);
    CHECK(p.data()[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(p.data()[1] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(p.data()[2] == doctest::Approx(0.7310585786300049).epsilon(1e-10));
    CHECK(p.data()[3] == doctest::Approx(0.2689414213699951).epsilon(1e-10));

    // logits/tau reduces [2,0] at tau=2 to [1,0] at tau=1
    T64 z2({1, 2}, {2.0, 0.0});
    auto p2 = softmax(z2, 2.0);
    CHECK(p2.data()[0] == doctest::Approx(0.7310585786300049).epsilon(1e-10));

    CHECK_THROWS_AS(softmax(z, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(softmax(z, -1.0), std::invalid_argument);
}

TEST_CASE("softmax rows are probability vectors") {
    Rng rng(7);
    for (int trial = 0; trial < 30; ++trial) {
        const int b = rng.uniform_int(1, 5), c = rng.uniform_int(2, 8);
        auto z = T64::randn({b, c}, rng, 0.0, rng.uniform(0.1, 4.0));
        auto p = softmax(z, rng.uniform(0.5, 4.0));
        for (int i = 0; i < b; ++i) {
            double sum = 0.0;
            for (int j = 0; j < c; ++j) {
                const double v = p.data()[i * c + j];
                CHECK(v > 0.0);
                CHECK(v < 1.0);
                sum += v;
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
}

TEST_CASE("layer_norm hand cases") {
    T64 g1({4}, {1, 1, 1, 1});
    T64 b0({4}, {0, 0, 0, 0});
    T64 x({1, 4}, {1, 1, 1, 1});
    auto y = layer_norm(x, g1, b0, 1e-5);
    for (int j = 0; j < 4; ++j) CHECK(y.data()[j] == doctest::Approx(0.0).epsilon(1e-12));

    T64 g2({2}, {1, 1});
    T64 b2({2}, {0, 0});
    T64 x2({1, 2}, {1, -1});
    auto y2 = layer_norm(x2, g2, b2, 1e-5);
    CHECK(std::fabs(y2.data()[0] - 1.0) < 1e-5);
    CHECK(std::fabs(y2.data()[1] + 1.0) < 1e-5);

    T64 gz({2}, {0, 0});
    T64 bz({2}, {0.5, -0.25});
    T64 x3({1, 2}, {3.0, -7.0});
    auto y3 = layer_norm(x3, gz, bz, 1e-5);
    CHECK(y3.data()[0] == doctest::Approx(0.5));
    CHECK(y3.data()[1] == doctest::Approx(-0.25));

    CHECK_THROWS_AS(layer_norm(x3, g1, b0, 1e-5), shape_error);
    CHECK_THROWS_AS(layer_norm(x3, g2, b2, 0.0), std::invalid_argument);
}

TEST_CASE("layer_norm output row statistics") {
    Rng rng(11);
    T64 g({8}, std::vector<double>(8, 1.0));
    T64 b({8}, std::vector<double>(8, 0.0));
    for (int trial = 0; trial < 20; ++trial) {
        auto x = T64::randn({3, 8}, rng, rng.uniform(-4, 4), rng.uniform(0.5, 5.0));
        auto y = layer_norm(x, g, b, 1e-8);
        for (int i = 0; i < 3; ++i) {
            double mean = 0.0, var = 0.0;
            for (int j = 0; j < 8; ++j) mean += y.data()[i * 8 + j];
            mean /= 8;
            for (int j = 0; j < 8; ++j) {
                const double c = y.data()[i * 8 + j] - mean;
                var += c * c;
            }
            var /= 8;
            CHECK(std::fabs(mean) < 1e-5);
            CHECK(std::fabs(var - 1.0) < 1e-5);
        }
    }
}

TEST_CASE("cross_entropy hand cases") {
    T64 z({1, 2}, {0.0, 0.0});
    CHECK(cross_entropy(z, {0}).item() == doctest::Approx(0.6931471805599453).epsilon(1e-12));

    T64 z2({1, 2}, {1.0, 0.0});
    CHECK(cross_entropy(z2, {0}).item() == doctest::Approx(0.31326168751822286).epsilon(1e-10));

    CHECK_THROWS_AS(cross_entropy(z2, {2}), std::invalid_argument);
    CHECK_THROWS_AS(cross_entropy(z2, {-1}), std::invalid_argument);

    // CE(p, p) equals the entropy of p
    Rng rng(3);
    auto logits = T64::randn({4, 5}, rng, 0.0, 2.0);
    auto p = softmax(logits, 1.0);
    auto target = p.clone_detached();
    double entropy = 0.0;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 5; ++j) {
            const double q = target.data()[i * 5 + j];
            entropy -= q * std::log(q);
        }
    entropy /= 4;
    CHECK(cross_entropy_soft(logits, target).item() == doctest::Approx(entropy).epsilon(1e-10));

    CHECK(cross_entropy(T64::randn({3, 4}, rng), {0, 1, 2}).item() >= 0.0);
}

TEST_CASE("kl_divergence hand cases and invariants") {
    T64 t({1, 2}, {1.0, 0.0});
    T64 s({1, 2}, {0.0, 1.0});
    CHECK(kl_divergence(t, s, 1.0).item() == doctest::Approx(0.46211715726000974).epsilon(1e-10));

    // identical rows -> 0 at any temperature
    Rng rng(5);
    for (double tau : {0.5, 1.0, 3.0}) {
        auto z = T64::randn({3, 4}, rng, 0.0, 2.0);
        CHECK(kl_divergence(z, z, tau).item() == doctest::Approx(0.0).epsilon(1e-12));
    }

    // per-row constant shift of the student changes nothing
    for (double c : {-2.0, 0.7, 10.0}) {
        T64 s2({1, 2}, {1.0 + c, c});
        CHECK(std::fabs(kl_divergence(t, s2, 1.0).item()) < 1e-12);
    }

    // nonnegative on random pairs
    for (int trial = 0; trial < 40; ++trial) {
        auto a = T64::randn({2, 6}, rng, 0.0, 3.0);
        auto b = T64::randn({2, 6}, rng, 0.0, 3.0);
        CHECK(kl_divergence(a, b, rng.uniform(0.25, 4.0)).item() >= -1e-12);
    }

    T64 bad({1, 3}, {0, 0, 0});
    CHECK_THROWS_AS(kl_divergence(t, bad, 1.0), shape_error);
    CHECK_THROWS_AS(kl_divergence(t, s, 0.0), std::invalid_argument);
}

TEST_CASE("normalized_sqdist hand cases and range") {
    T64 a({2}, {1.0, 0.0});
    T64 b({2}, {1.0, 1.0});
    CHECK(normalized_sqdist(a, b).item() == doctest::Approx(2.0 - std::sqrt(2.0)).epsilon(1e-12));

    T64 v({3}, {0.3, -1.2, 4.0});
    CHECK(normalized_sqdist(v, v).item() == doctest::Approx(0.0).epsilon(1e-12));
    auto neg = scale(v, -1.0);
    CHECK(normalized_sqdist(v, neg).item() == doctest::Approx(4.0).epsilon(1e-12));

    T64 zero({3}, {0, 0, 0});
    CHECK_THROWS_AS(normalized_sqdist(v, zero), degenerate_input_error);
    CHECK_THROWS_AS(normalized_sqdist(zero, v), degenerate_input_error);

    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        auto x = T64::randn({4, 5}, rng, rng.uniform(-2, 2), rng.uniform(0.2, 3.0));
        auto y = T64::randn({4, 5}, rng, rng.uniform(-2, 2), rng.uniform(0.2, 3.0));
        const double d1 = normalized_sqdist(x, y).item();
        const double d2 = normalized_sqdist(y, x).item();
        CHECK(d1 >= 0.0);
        CHECK(d1 <= 4.0 + 1e-12);
        CHECK(d1 == doctest::Approx(d2).epsilon(1e-12));
        // positive rescaling of either side is invisible
        const double d3 = normalized_sqdist(scale(x, 3.7), y).item();
        CHECK(d3 == doctest::Approx(d1).epsilon(1e-9));
    }
}

TEST_CASE("backward populates and accumulates gradients") {
    T64 x({2, 2}, {1, 2, 3, 4});
    x.set_requires_grad(true);
    auto root = sum_all(x);
    backward(root);
    for (int i = 0; i < 4; ++i) CHECK(x.grad_view()[i] == doctest::Approx(1.0));

    // repeated backward on a fresh graph accumulates
    auto root2 = sum_all(x);
    backward(root2);
    for (int i = 0; i < 4; ++i) CHECK(x.grad_view()[i] == doctest::Approx(2.0));

    x.zero_grad();
    auto vec = sum_all(x);
    CHECK_THROWS_AS(backward(x), std::invalid_argument);  // non-scalar root
    (void)vec;
}

TEST_CASE("gradients match finite differences on every op") {
    Rng seed_rng(101);
    double worst = 0.0;
    for (int seed = 0; seed < 20; ++seed) {
        Rng rng(1000 + seed * 37);

        // elementwise chain: gelu(tanh(x)) summed
        auto x = T64::randn({3, 5}, rng, 0.0, 1.2);
        worst = std::max(worst, gradcheck([&] { return sum_all(gelu(tanh_act(x))); }, x, rng));

        // linear + layer_norm + mean
        auto w = T64::randn({5, 4}, rng, 0.0, 0.5);
        auto b = T64::randn({4}, rng, 0.0, 0.5);
        auto g = T64::randn({4}, rng, 1.0, 0.2);
        auto bb = T64::randn({4}, rng, 0.0, 0.2);
        auto x2 = T64::randn({6, 5}, rng, 0.0, 1.0);
        auto ln_loss = [&] { return mean_all(layer_norm(linear(x2, w, b), g, bb, 1e-5)); };
        worst = std::max(worst, gradcheck(ln_loss, x2, rng));
        worst = std::max(worst, gradcheck(ln_loss, w, rng));
        worst = std::max(worst, gradcheck(ln_loss, g, rng));
        worst = std::max(worst, gradcheck(ln_loss, bb, rng));

        // softmax + losses
        auto z = T64::randn({4, 3}, rng, 0.0, 1.5);
        worst = std::max(worst, gradcheck([&] { return mean_all(softmax(z, 1.7)); }, z, rng));
        std::vector<int> labels{0, 2, 1, 1};
        worst = std::max(worst, gradcheck([&] { return cross_entropy(z, labels); }, z, rng));

        auto zt = T64::randn({4, 3}, rng, 0.0, 1.5);
        worst = std::max(worst, gradcheck([&] { return kl_divergence(zt, z, 1.3); }, z, rng));
        worst = std::max(worst, gradcheck([&] { return kl_divergence(zt, z, 1.3); }, zt, rng));

        auto soft_logits = T64::randn({4, 3}, rng, 0.0, 1.0);
        auto soft_t = softmax(soft_logits, 1.0).clone_detached();
        worst = std::max(worst, gradcheck([&] { return cross_entropy_soft(z, soft_t); }, z, rng));

        auto va = T64::randn({3, 6}, rng, 0.5, 1.0);
        auto vb = T64::randn({3, 6}, rng, -0.5, 1.0);
        worst = std::max(worst, gradcheck([&] { return normalized_sqdist(va, vb); }, va, rng));
        worst = std::max(worst, gradcheck([&] { return normalized_sqdist(va, vb); }, vb, rng));

        // attention with a masked tail
        const int B = 2, L = 4, D = 6, H = 2;
        auto q = T64::randn({B, L, D}, rng, 0.0, 0.8);
        auto k = T64::randn({B, L, D}, rng, 0.0, 0.8);
        auto v = T64::randn({B, L, D}, rng, 0.0, 0.8);
        AttentionMask mask(B, L);
        mask.set(0, 3, false);
        mask.set(1, 2, false);
        mask.set(1, 3, false);
        worst = std::max(worst, gradcheck([&] { return mean_all(attention(q, k, v, mask, H)); }, q, rng));
        worst = std::max(worst, gradcheck([&] { return mean_all(attention(q, k, v, mask, H)); }, k, rng));
        worst = std::max(worst, gradcheck([&] { return mean_all(attention(q, k, v, mask, H)); }, v, rng));

        // structural ops
        auto seq = T64::randn({2, 3, 4}, rng, 0.0, 1.0);
        std::vector<int> pos{1, 2};
        worst = std::max(worst, gradcheck([&] { return sum_all(gelu(gather_positions(seq, pos))); }, seq, rng));
        auto rows = T64::randn({2, 4}, rng, 0.0, 1.0);
        worst = std::max(worst,
                         gradcheck([&] { return mean_all(tanh_act(replace_positions(seq, pos, rows))); }, seq, rng));
        worst = std::max(worst,
                         gradcheck([&] { return mean_all(tanh_act(replace_positions(seq, pos, rows))); }, rows, rng));

        auto tok = T64::randn({7, 4}, rng, 0.0, 1.0);
        auto pemb = T64::randn({3, 4}, rng, 0.0, 1.0);
        std::vector<int> ids{1, 5, 0, 6, 2, 2};
        worst = std::max(worst,
                         gradcheck([&] { return mean_all(gelu(embedding_lookup(tok, pemb, ids, 2, 3))); }, tok, rng));
        worst = std::max(worst,
                         gradcheck([&] { return mean_all(gelu(embedding_lookup(tok, pemb, ids, 2, 3))); }, pemb, rng));
    }
    (void)seed_rng;
    CHECK(worst <= 1e-5);
    MESSAGE("max relative gradient error over all ops/seeds: ", worst);
}

TEST_CASE("adam behaves per the update rule") {
    using TF = Tensor<double>;
    TF p({1}, {0.0});
    p.set_requires_grad(true);
    AdamState<double> st(1);

    SUBCASE("missing grad is a precondition error") { CHECK_THROWS_AS(adam_step(p, st, 0.01), precondition_error); }

    SUBCASE("zero gradient is a no-op on values") {
        p.grad();  // allocate zeros
        for (int i = 0; i < 3; ++i) adam_step(p, st, 0.01);
        CHECK(p.data()[0] == doctest::Approx(0.0));
        CHECK(st.t == 3);
    }

    SUBCASE("first step with unit gradient moves by about -lr") {
        p.grad()[0] = 1.0;
        adam_step(p, st, 0.01);
        CHECK(p.data()[0] == doctest::Approx(-0.01).epsilon(1e-6));
        CHECK(st.t == 1);
    }

    SUBCASE("constant negative gradient moves the value monotonically up") {
        double prev = p.data()[0];
        for (int i = 0; i < 10; ++i) {
            p.zero_grad();
            p.grad()[0] = -1.0;
            adam_step(p, st, 0.01);
            CHECK(p.data()[0] > prev);
            prev = p.data()[0];
        }
    }

    SUBCASE("frozen parameters are rejected") {
        p.grad()[0] = 1.0;
        p.set_frozen(true);
        CHECK_THROWS_AS(adam_step(p, st, 0.01), precondition_error);
    }
}

TEST_CASE("lr schedule") {
    auto fixed = LRSchedule::fixed(3e-4);
    for (long s : {0L, 5L, 1000L}) CHECK(schedule_lr(fixed, s) == doctest::Approx(3e-4));

    auto w = LRSchedule::warmup(1.0, 0.1, 100);
    CHECK(schedule_lr(w, 0) == doctest::Approx(0.0));
    CHECK(schedule_lr(w, 10) == doctest::Approx(1.0));
    CHECK(schedule_lr(w, 55) == doctest::Approx(0.5));
    CHECK(schedule_lr(w, 100) == doctest::Approx(0.0));
    CHECK(schedule_lr(w, 5) == doctest::Approx(0.5));
    CHECK(schedule_lr(w, 150) == doctest::Approx(0.0));  // clamps past the end
    for (long s = 0; s <= 120; ++s) CHECK(schedule_lr(w, s) >= 0.0);
}

TEST_CASE("seeded rng reproduces streams") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c(42), d(43);
    bool differ = false;
    for (int i = 0; i < 10; ++i) differ = differ || (c.next_u64() != d.next_u64());
    CHECK(differ);
}
