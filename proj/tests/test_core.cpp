// Autodiff engine and primitive ops: value semantics, gradient correctness
// against central differences, shape errors.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "kinet/ops.hpp"
#include "kinet/rng.hpp"
#include "oracles.hpp"

using namespace kinet;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// evaluates loss = sum(op(x...) ⊙ r) with recording off
template <typename F>
double eval_scalar(F&& build) {
    Tape<double> tape;
    tape.recording = false;
    return build(tape)->value[0];
}

}  // namespace

TEST_CASE("backward of x^2 via mul") {
    Tape<double> tape;
    auto x = make_leaf(Tensor<double>::scalar(1.5), true, "x");
    auto y = mul(tape, x, x);
    tape.backward(y);
    CHECK(y->value[0] == doctest::Approx(2.25));
    CHECK(x->grad[0] == doctest::Approx(3.0));
}

TEST_CASE("tape replay accumulates through shared subexpressions") {
    // f = (x + x) * x = 2x^2, df/dx = 4x
    Tape<double> tape;
    auto x = make_leaf(Tensor<double>::scalar(3.0), true);
    auto f = mul(tape, add(tape, x, x), x);
    tape.backward(f);
    CHECK(f->value[0] == doctest::Approx(18.0));
    CHECK(x->grad[0] == doctest::Approx(12.0));
}

TEST_CASE("global_avg_pool matches two-loop mean oracle") {
    Rng rng(11);
    auto x = random_tensor({2, 5, 7, 3}, rng);
    Tape<double> tape;
    auto xv = make_leaf(x, false);
    auto y = global_avg_pool(tape, xv);
    auto ref = oracle::pool_mean(x);
    for (int64_t i = 0; i < y->value.numel(); ++i) {
        CHECK(std::abs(y->value[i] - ref[i]) < 1e-6);
    }
}

TEST_CASE("global_avg_pool of constant map is the constant") {
    Tape<double> tape;
    auto x = make_leaf(Tensor<double>::full({3, 4, 6, 6}, 2.5), false);
    auto y = global_avg_pool(tape, x);
    for (int64_t i = 0; i < y->value.numel(); ++i) CHECK(y->value[i] == doctest::Approx(2.5));
    auto one_px = make_leaf(Tensor<double>::full({2, 4, 1, 1}, -1.25), false);
    auto y2 = global_avg_pool(tape, one_px);
    CHECK(y2->value.shape() == Shape{2, 4});
    for (int64_t i = 0; i < y2->value.numel(); ++i) CHECK(y2->value[i] == doctest::Approx(-1.25));
}

TEST_CASE("matmul matches triple-loop oracle") {
    Rng rng(5);
    auto a = random_tensor({4, 6}, rng);
    auto b = random_tensor({6, 3}, rng);
    Tape<double> tape;
    auto y = matmul(tape, make_leaf(a), make_leaf(b));
    auto ref = oracle::matmul(a, b);
    for (int64_t i = 0; i < y->value.numel(); ++i) CHECK(std::abs(y->value[i] - ref[i]) < 1e-9);
}

TEST_CASE("finite differences: conv2d, train-mode bn, pooling, linear chain") {
    // the chain is smooth end to end (no relu) so central differences are
    // valid at every coordinate, including through the batch statistics
    Rng rng(21);
    auto x0 = random_tensor({2, 3, 9, 8}, rng);
    auto w0 = random_tensor({4, 3, 3, 3}, rng, -0.5, 0.5);
    auto b0 = random_tensor({4}, rng, -0.2, 0.2);
    auto g0 = random_tensor({4}, rng, 0.5, 1.5);
    auto be0 = random_tensor({4}, rng, -0.3, 0.3);
    auto lw0 = random_tensor({4, 5}, rng);
    auto r = random_tensor({2, 5}, rng);

    auto x = make_leaf(x0, true, "x");
    auto w = make_leaf(w0, true, "w");
    auto b = make_leaf(b0, true, "b");
    BatchNorm<double> bn;
    bn.gamma = make_leaf(g0, true, "gamma");
    bn.beta = make_leaf(be0, true, "beta");
    bn.running_mean = Tensor<double>({4});
    bn.running_var = Tensor<double>::full({4}, 1.0);
    auto lw = make_leaf(lw0, true, "lw");

    // biasless conv under BN, as in the network: a bias feeding train-mode BN
    // has an exactly-zero gradient, which finite differences cannot resolve
    auto build = [&](Tape<double>& tape) {
        auto c = conv2d(tape, x, w, Var<double>{}, 2, 1);
        auto n = batch_norm2d(tape, c, bn, /*training=*/true);
        auto p = global_avg_pool(tape, n);
        auto l = matmul(tape, p, lw);
        return inner_const(tape, l, r);
    };

    Tape<double> tape;
    auto loss = build(tape);
    tape.backward(loss);

    struct LeafRef {
        Var<double> var;
        const char* name;
    };
    double max_err = 0.0;
    for (auto& leaf : {LeafRef{x, "x"}, LeafRef{w, "w"}, LeafRef{bn.gamma, "gamma"},
                       LeafRef{bn.beta, "beta"}, LeafRef{lw, "lw"}}) {
        for (int64_t i = 0; i < leaf.var->value.numel(); ++i) {
            const double fd = oracle::central_difference(
                [&] { return eval_scalar(build); }, leaf.var->value, i);
            max_err = std::max(max_err, oracle::rel_err(leaf.var->grad[i], fd));
        }
    }
    CHECK(max_err < 1e-4);

    // biased conv without normalization; checks the bias path itself
    auto build_biased = [&](Tape<double>& tape) {
        auto c = conv2d(tape, x, w, b, 2, 1);
        auto p = global_avg_pool(tape, c);
        auto l = matmul(tape, p, lw);
        return inner_const(tape, l, r);
    };
    Tape<double> tape2;
    x->zero_grad();
    w->zero_grad();
    lw->zero_grad();
    auto loss2 = build_biased(tape2);
    tape2.backward(loss2);
    double max_err2 = 0.0;
    for (auto& leaf : {LeafRef{x, "x"}, LeafRef{w, "w"}, LeafRef{b, "b"}, LeafRef{lw, "lw"}}) {
        for (int64_t i = 0; i < leaf.var->value.numel(); ++i) {
            const double fd = oracle::central_difference(
                [&] { return eval_scalar(build_biased); }, leaf.var->value, i);
            max_err2 = std::max(max_err2, oracle::rel_err(leaf.var->grad[i], fd));
        }
    }
    CHECK(max_err2 < 1e-4);
}

TEST_CASE("finite differences: relu probed away from the kink") {
    Rng rng(23);
    Tensor<double> x0({4, 6});
    for (int64_t i = 0; i < x0.numel(); ++i) x0[i] = rng.uniform_with_margin(1e-3, 1.0);
    auto r = random_tensor({4, 6}, rng);
    auto x = make_leaf(x0, true, "x");
    auto build = [&](Tape<double>& tape) { return inner_const(tape, relu(tape, x), r); };

    Tape<double> tape;
    auto loss = build(tape);
    tape.backward(loss);
    double max_err = 0.0;
    for (int64_t i = 0; i < x->value.numel(); ++i) {
        const double fd = oracle::central_difference([&] { return eval_scalar(build); }, x->value, i);
        max_err = std::max(max_err, oracle::rel_err(x->grad[i], fd));
    }
    CHECK(max_err < 1e-6);
}

TEST_CASE("batch norm eval mode is affine in the input") {
    Rng rng(3);
    BatchNorm<double> bn;
    bn.gamma = make_leaf(random_tensor({3}, rng, 0.5, 1.5), true);
    bn.beta = make_leaf(random_tensor({3}, rng, -0.5, 0.5), true);
    bn.running_mean = random_tensor({3}, rng, -0.2, 0.2);
    bn.running_var = random_tensor({3}, rng, 0.5, 1.5);
    auto x = make_leaf(random_tensor({2, 3, 4, 4}, rng), true);
    auto r = random_tensor({2, 3, 4, 4}, rng);

    auto build = [&](Tape<double>& tape) {
        return inner_const(tape, batch_norm2d(tape, x, bn, /*training=*/false), r);
    };
    Tape<double> tape;
    auto loss = build(tape);
    tape.backward(loss);
    const Tensor<double> saved_mean = bn.running_mean;

    double max_err = 0.0;
    for (int64_t i = 0; i < x->value.numel(); ++i) {
        const double fd = oracle::central_difference([&] { return eval_scalar(build); }, x->value, i);
        max_err = std::max(max_err, oracle::rel_err(x->grad[i], fd));
    }
    CHECK(max_err < 1e-6);
    // eval mode must not move the running statistics
    for (int64_t i = 0; i < 3; ++i) CHECK(bn.running_mean[i] == saved_mean[i]);
}

TEST_CASE("softmax cross-entropy gradient and value") {
    Rng rng(31);
    auto logits0 = random_tensor({3, 5}, rng, -2.0, 2.0);
    std::vector<int> labels = {1, 4, 0};
    auto logits = make_leaf(logits0, true);
    auto build = [&](Tape<double>& tape) { return softmax_cross_entropy(tape, logits, labels); };

    Tape<double> tape;
    auto loss = build(tape);
    tape.backward(loss);
    CHECK(loss->value[0] == doctest::Approx(oracle::cross_entropy_rows(logits0, labels)).epsilon(1e-9));

    double max_err = 0.0;
    for (int64_t i = 0; i < logits->value.numel(); ++i) {
        const double fd = oracle::central_difference([&] { return eval_scalar(build); }, logits->value, i);
        max_err = std::max(max_err, oracle::rel_err(logits->grad[i], fd));
    }
    CHECK(max_err < 1e-6);
}

TEST_CASE("softmax cross-entropy rejects out-of-range labels") {
    Tape<double> tape;
    auto logits = make_leaf(Tensor<double>({2, 3}), false);
    CHECK_THROWS_AS(softmax_cross_entropy(tape, logits, std::vector<int>{0, 3}), ValidationError);
    CHECK_THROWS_AS(softmax_cross_entropy(tape, logits, std::vector<int>{-1, 0}), ValidationError);
}

TEST_CASE("elementwise ops enforce shape agreement") {
    Tape<double> tape;
    auto a = make_leaf(Tensor<double>({2, 3}), false);
    auto b = make_leaf(Tensor<double>({3, 2}), false);
    CHECK_THROWS_AS(add(tape, a, b), ShapeError);
    CHECK_THROWS_AS(mul(tape, a, b), ShapeError);
}

TEST_CASE("weighted_sum is exactly linear in each term") {
    Rng rng(17);
    for (int trial = 0; trial < 10; ++trial) {
        const double la = rng.uniform(0.0, 2.0), lb = rng.uniform(0.0, 2.0), lc = rng.uniform(0.0, 2.0);
        const double va = rng.uniform(-3.0, 3.0), vb = rng.uniform(-3.0, 3.0), vc = rng.uniform(-3.0, 3.0);
        Tape<double> tape;
        auto a = make_leaf(Tensor<double>::scalar(va));
        auto b = make_leaf(Tensor<double>::scalar(vb));
        auto c = make_leaf(Tensor<double>::scalar(vc));
        auto y = weighted_sum<double>(tape, {a, b, c}, {la, lb, lc});
        CHECK(y->value[0] == la * va + lb * vb + lc * vc);
    }
}

TEST_CASE("determinism: identical seeds give identical draws") {
    Rng a(99), b(99);
    for (int i = 0; i < 1000; ++i) {
        CHECK(a.next_u64() == b.next_u64());
    }
    Rng c(99), d(100);
    bool any_differ = false;
    for (int i = 0; i < 10; ++i) any_differ = any_differ || (c.next_u64() != d.next_u64());
    CHECK(any_differ);
}

TEST_CASE("mean_rows_grouped averages contiguous groups") {
    Tape<double> tape;
    Tensor<double> x({4, 2});
    for (int64_t i = 0; i < 8; ++i) x[i] = static_cast<double>(i);
    auto y = mean_rows_grouped(tape, make_leaf(x, false), 2);
    CHECK(y->value.shape() == Shape{2, 2});
    CHECK(y->value.at(0, 0) == doctest::Approx(1.0));  // (0+2)/2
    CHECK(y->value.at(0, 1) == doctest::Approx(2.0));  // (1+3)/2
    CHECK(y->value.at(1, 0) == doctest::Approx(5.0));
    CHECK(y->value.at(1, 1) == doctest::Approx(6.0));
}
