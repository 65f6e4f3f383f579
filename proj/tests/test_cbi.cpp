// Cross-branch fusion: identity at initialization, channel preservation,
// gate support, gradients.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "kinet/cbi.hpp"
#include "kinet/netcore.hpp"
#include "kinet/rng.hpp"
#include "oracles.hpp"

using namespace kinet;

namespace {

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<T> t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

// fresh parameters exactly as the model builds them: BN gamma=1 beta=0,
// reduction [I | 0 | 0] with zero bias
template <typename T>
CbiParams<T> fresh_params(int64_t c) {
    CbiParams<T> p;
    p.bn_scene.gamma = make_leaf(Tensor<T>::full({c}, T(1)), true);
    p.bn_scene.beta = make_leaf(Tensor<T>({c}), true);
    p.bn_scene.running_mean = Tensor<T>({c});
    p.bn_scene.running_var = Tensor<T>::full({c}, T(1));
    p.bn_human.gamma = make_leaf(Tensor<T>::full({c}, T(1)), true);
    p.bn_human.beta = make_leaf(Tensor<T>({c}), true);
    p.bn_human.running_mean = Tensor<T>({c});
    p.bn_human.running_var = Tensor<T>::full({c}, T(1));
    Tensor<T> w({c, 3 * c, 1, 1});
    for (int64_t i = 0; i < c; ++i) w.at(i, i, 0, 0) = T(1);
    p.reduce_w = make_leaf(std::move(w), true);
    p.reduce_b = make_leaf(Tensor<T>({c}), true);
    return p;
}

}  // namespace

TEST_CASE("identity at initialization: zero auxiliaries pass the action map through exactly") {
    Rng rng(3);
    for (bool training : {true, false}) {
        auto params = fresh_params<double>(5);
        Tape<double> tape;
        auto action = make_leaf(random_tensor<double>({2, 5, 4, 6}, rng));
        auto zero_scene = make_leaf(Tensor<double>({2, 5, 4, 6}));
        auto zero_human = make_leaf(Tensor<double>({2, 5, 4, 6}));
        auto out = cbi_forward(tape, action, zero_scene, zero_human, params, training);
        for (int64_t i = 0; i < out->value.numel(); ++i) {
            CHECK(out->value[i] == action->value[i]);  // exact, not approximate
        }
    }
}

TEST_CASE("channel preservation: output shape equals action input shape") {
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        const int64_t b = 1 + rng.uniform_int(3);
        const int64_t c = 1 + rng.uniform_int(12);
        const int64_t h = 1 + rng.uniform_int(9);
        const int64_t w = 1 + rng.uniform_int(9);
        auto params = fresh_params<double>(c);
        Tape<double> tape;
        tape.recording = false;
        auto action = make_leaf(random_tensor<double>({b, c, h, w}, rng));
        auto scene = make_leaf(random_tensor<double>({b, c, h, w}, rng));
        auto human = make_leaf(random_tensor<double>({b, c, h, w}, rng));
        auto out = cbi_forward(tape, action, scene, human, params, true);
        CHECK(out->value.shape() == action->value.shape());
    }
}

TEST_CASE("fixed shape example (2,64,14,14)") {
    Rng rng(6);
    auto params = fresh_params<double>(64);
    Tape<double> tape;
    tape.recording = false;
    auto action = make_leaf(random_tensor<double>({2, 64, 14, 14}, rng));
    auto scene = make_leaf(random_tensor<double>({2, 64, 14, 14}, rng));
    auto human = make_leaf(random_tensor<double>({2, 64, 14, 14}, rng));
    auto out = cbi_forward(tape, action, scene, human, params, true);
    CHECK(out->value.shape() == Shape{2, 64, 14, 14});
}

TEST_CASE("mismatched input shapes are rejected") {
    auto params = fresh_params<double>(4);
    Tape<double> tape;
    auto action = make_leaf(Tensor<double>({2, 4, 5, 5}));
    auto scene = make_leaf(Tensor<double>({2, 4, 5, 5}));
    auto human = make_leaf(Tensor<double>({2, 4, 5, 4}));
    CHECK_THROWS_AS(cbi_forward(tape, action, scene, human, params, true), ShapeError);
}

TEST_CASE("gate support: pixels with both gates at zero keep the action value pre-reduction") {
    // eval-mode BN with beta<0 clamps the gates of small auxiliary values to
    // zero through the relu; at those pixels fused == action, observable
    // through the identity reduction up to the concat contribution of the raw
    // auxiliary maps, which is zero off the spikes
    Rng rng(7);
    const int64_t c = 3;
    auto params = fresh_params<double>(c);
    for (int64_t ch = 0; ch < c; ++ch) {
        params.bn_scene.beta->value[ch] = -1.0;
        params.bn_human.beta->value[ch] = -1.0;
    }
    Tape<double> tape;
    auto action = make_leaf(random_tensor<double>({1, c, 6, 6}, rng));
    // sparse positive spikes; everything else is driven below the gate cut
    Tensor<double> scene_v({1, c, 6, 6}), human_v({1, c, 6, 6});
    scene_v.at(0, 1, 2, 3) = 8.0;
    human_v.at(0, 2, 4, 1) = 8.0;
    auto scene = make_leaf(scene_v);
    auto human = make_leaf(human_v);
    auto out = cbi_forward(tape, action, scene, human, params, /*training=*/false);
    for (int64_t ch = 0; ch < c; ++ch) {
        for (int64_t y = 0; y < 6; ++y) {
            for (int64_t x = 0; x < 6; ++x) {
                const bool spiked = (ch == 1 && y == 2 && x == 3) || (ch == 2 && y == 4 && x == 1);
                if (!spiked) {
                    CHECK(out->value.at(0, ch, y, x) == doctest::Approx(action->value.at(0, ch, y, x)));
                } else {
                    CHECK(out->value.at(0, ch, y, x) != doctest::Approx(action->value.at(0, ch, y, x)));
                }
            }
        }
    }
}

TEST_CASE("gradients match finite differences through all inputs and params") {
    Rng rng(11);
    const int64_t c = 3;
    auto params = fresh_params<double>(c);
    // random parameters, not the identity init, so every path carries signal
    for (auto& leaf : {params.bn_scene.gamma, params.bn_scene.beta, params.bn_human.gamma,
                       params.bn_human.beta, params.reduce_w, params.reduce_b}) {
        for (int64_t i = 0; i < leaf->value.numel(); ++i) leaf->value[i] += rng.uniform(-0.3, 0.3);
    }
    auto action = make_leaf(random_tensor<double>({2, c, 4, 4}, rng), true);
    auto scene = make_leaf(random_tensor<double>({2, c, 4, 4}, rng), true);
    auto human = make_leaf(random_tensor<double>({2, c, 4, 4}, rng), true);
    auto proj = random_tensor<double>({2, c, 4, 4}, rng);

    auto build = [&](Tape<double>& tape) {
        return inner_const(tape, cbi_forward(tape, action, scene, human, params, /*training=*/false), proj);
    };
    Tape<double> tape;
    auto loss = build(tape);
    tape.backward(loss);

    auto eval = [&] {
        Tape<double> t;
        t.recording = false;
        return build(t)->value[0];
    };
    double max_err = 0.0;
    for (auto& leaf : {action, scene, human, params.bn_scene.gamma, params.bn_scene.beta,
                       params.bn_human.gamma, params.bn_human.beta, params.reduce_w, params.reduce_b}) {
        for (int64_t i = 0; i < leaf->value.numel(); ++i) {
            const double fd = oracle::central_difference(eval, leaf->value, i);
            max_err = std::max(max_err, oracle::rel_err(leaf->grad[i], fd));
        }
    }
    CHECK(max_err <= 1e-4);
}

TEST_CASE("model-built fusion parameters satisfy the identity invariant") {
    // the registry's [I | 0 | 0] initialization, exercised through the model
    ModelConfig cfg;
    cfg.k_action = 3;
    Model<double> model(cfg, 7);
    auto& params = model.cbi_params("res4");
    Rng rng(13);
    const int64_t c = cfg.branch_channels[2];
    Tape<double> tape;
    auto action = make_leaf(random_tensor<double>({2, c, 3, 3}, rng));
    auto zs = make_leaf(Tensor<double>({2, c, 3, 3}));
    auto zh = make_leaf(Tensor<double>({2, c, 3, 3}));
    auto out = cbi_forward(tape, action, zs, zh, params, true);
    for (int64_t i = 0; i < out->value.numel(); ++i) CHECK(out->value[i] == action->value[i]);
}
