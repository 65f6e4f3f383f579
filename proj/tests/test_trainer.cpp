// Loss weighting, SGD with momentum, the lr schedule, checkpoint round-trips,
// the gradient-check harness, and deterministic micro-training runs.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "kinet/gradcheck.hpp"
#include "kinet/trainer.hpp"
#include "oracles.hpp"

using namespace kinet;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / ("kinet_trainer_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::vector<uint8_t> file_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// micro setup shared by the training tests: 2 classes x 2 videos x 4 frames
struct MicroRun {
    RunConfig cfg;
    fs::path data_dir;
    Dataset dataset;
    fs::path label_dir;
    std::unique_ptr<LabelCache> labels;

    explicit MicroRun(const std::string& tag) {
        cfg.model.stem_channels = 4;
        cfg.model.branch_channels = {4, 4, 8, 8};
        cfg.model.d = 8;
        cfg.model.k_action = 2;
        cfg.model.k_scene = 4;
        cfg.model.input_h = 24;
        cfg.model.input_w = 24;
        cfg.data.base_h = 32;
        cfg.data.base_w = 40;
        cfg.optim.epochs = 2;
        cfg.optim.batch_size = 2;
        cfg.eval.n_eval_seg = 5;
        cfg.eval.window = 3;

        data_dir = fresh_dir(tag + "_data");
        SynthConfig scfg;
        scfg.n_classes = 2;
        scfg.videos_per_class = 2;
        scfg.frames_per_video = 4;
        scfg.frame_h = 32;
        scfg.frame_w = 40;
        dataset = load_dataset(synth_dataset(data_dir, scfg));

        label_dir = fresh_dir(tag + "_labels");
        auto teacher = synthetic_teacher(17, static_cast<int>(cfg.model.k_scene));
        write_label_cache(label_dir, dataset, static_cast<int>(cfg.model.n_seg), *teacher);
        labels = std::make_unique<LabelCache>(LabelCache::open(label_dir));
    }
};

}  // namespace

TEST_CASE("total_loss arithmetic and validation") {
    LossWeights defaults;
    CHECK(total_loss(1.0, 2.0, 3.0, defaults) == doctest::Approx(1.05).epsilon(1e-12));
    CHECK(total_loss(0.0, 0.0, 0.0, defaults) == 0.0);
    LossWeights action_only{1.0, 0.0, 0.0};
    CHECK(total_loss(0.37, 9.0, 4.0, action_only) == 0.37);
    CHECK_THROWS_AS(total_loss(std::numeric_limits<double>::infinity(), 0, 0, defaults), NumericError);
    CHECK_THROWS_AS(total_loss(0, std::nan(""), 0, defaults), NumericError);

    // exactly linear in each component
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        LossWeights w{rng.uniform(0.1, 2.0), rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0)};
        const double a = rng.uniform(-4, 4), h = rng.uniform(-4, 4), s = rng.uniform(-4, 4);
        CHECK(total_loss(a, h, s, w) == w.action * a + w.human * h + w.scene * s);
        const double bump = rng.uniform(0.1, 1.0);
        CHECK(total_loss(a + bump, h, s, w) - total_loss(a, h, s, w) ==
              doctest::Approx(w.action * bump).epsilon(1e-12));
    }
}

TEST_CASE("sgd: plain gradient descent when momentum and decay are zero") {
    auto w = make_leaf(Tensor<float>::scalar(2.0f), true, "w");
    w->ensure_grad();
    w->grad[0] = 0.5f;
    std::vector<std::pair<std::string, Var<float>>> params = {{"w", w}};
    OptimState state;
    state.momentum = 0.0;
    state.weight_decay = 0.0;
    state.init_for(params);
    sgd_step(params, state, 0.1);
    CHECK(w->value[0] == doctest::Approx(2.0 - 0.1 * 0.5).epsilon(1e-6));
}

TEST_CASE("sgd: two momentum steps on the scalar quadratic follow the recurrence") {
    // independent recurrence oracle for f(w) = w^2/2, grad = w:
    //   v <- mu v + w;  w <- w - lr v
    double w_ref = 1.0, v_ref = 0.0;
    std::vector<double> expected;
    for (int step = 0; step < 2; ++step) {
        v_ref = 0.9 * v_ref + w_ref;
        w_ref = w_ref - 0.1 * v_ref;
        expected.push_back(w_ref);
    }
    CHECK(expected[0] == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(expected[1] == doctest::Approx(0.72).epsilon(1e-12));

    auto w = make_leaf(Tensor<float>::scalar(1.0f), true, "w");
    std::vector<std::pair<std::string, Var<float>>> params = {{"w", w}};
    OptimState state;
    state.momentum = 0.9;
    state.weight_decay = 0.0;
    state.init_for(params);
    std::vector<double> got;
    for (int step = 0; step < 2; ++step) {
        w->ensure_grad();
        w->grad[0] = w->value[0];  // grad of w^2/2
        sgd_step(params, state, 0.1);
        got.push_back(w->value[0]);
    }
    CHECK(got[0] == doctest::Approx(expected[0]).epsilon(1e-6));
    CHECK(got[1] == doctest::Approx(expected[1]).epsilon(1e-6));
}

TEST_CASE("sgd: decay-only step shrinks weights by (1 - lr wd)") {
    auto w = make_leaf(Tensor<float>::scalar(4.0f), true, "w");
    w->ensure_grad();
    w->grad[0] = 0.0f;
    std::vector<std::pair<std::string, Var<float>>> params = {{"w", w}};
    OptimState state;
    state.momentum = 0.0;
    state.weight_decay = 0.01;
    state.init_for(params);
    sgd_step(params, state, 0.1);
    CHECK(w->value[0] == doctest::Approx(4.0 * (1.0 - 0.1 * 0.01)).epsilon(1e-7));
}

TEST_CASE("optimizer equivalence: zero-momentum zero-decay sgd equals closed-form descent") {
    // f(w) = w^2/2 at 64-bit reference: w_{k+1} = w_k (1 - lr)
    double reference = 1.7;
    auto w = make_leaf(Tensor<float>::scalar(1.7f), true, "w");
    std::vector<std::pair<std::string, Var<float>>> params = {{"w", w}};
    OptimState state;
    state.momentum = 0.0;
    state.weight_decay = 0.0;
    state.init_for(params);
    for (int step = 0; step < 10; ++step) {
        reference *= (1.0 - 0.05);
        w->ensure_grad();
        w->grad[0] = w->value[0];
        sgd_step(params, state, 0.05);
        // float arithmetic tracks the double reference to float precision
        CHECK(w->value[0] == doctest::Approx(reference).epsilon(1e-5));
    }
}

TEST_CASE("learning rate schedule reproduces the milestone decays") {
    const std::vector<int64_t> milestones = {20, 40, 60};
    CHECK(lr_at(0, 0.01, milestones, 0.1) == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(lr_at(19, 0.01, milestones, 0.1) == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(lr_at(20, 0.01, milestones, 0.1) == doctest::Approx(0.001).epsilon(1e-12));
    CHECK(lr_at(40, 0.01, milestones, 0.1) == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(lr_at(59, 0.01, milestones, 0.1) == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(lr_at(60, 0.01, milestones, 0.1) == doctest::Approx(1e-5).epsilon(1e-12));
    CHECK(lr_at(65, 0.01, milestones, 0.1) == doctest::Approx(1e-5).epsilon(1e-12));

    CHECK(milestones_from_fracs(200, {0.5, 0.75, 0.875}) == std::vector<int64_t>{100, 150, 175});
    CHECK(milestones_from_fracs(70, {2.0 / 7, 4.0 / 7, 6.0 / 7}) == std::vector<int64_t>{20, 40, 60});
}

TEST_CASE("checkpoint round-trip is byte-identical") {
    ModelConfig cfg;
    cfg.stem_channels = 4;
    cfg.branch_channels = {4, 4, 8, 8};
    cfg.d = 8;
    cfg.k_action = 3;
    cfg.input_h = 24;
    cfg.input_w = 24;
    Model<float> model(cfg, 5);
    // move running stats off init so buffers carry real content
    Tape<float> tape;
    Rng rng(6);
    Tensor<float> frames({3, 3, 24, 24});
    for (int64_t i = 0; i < frames.numel(); ++i) frames[i] = static_cast<float>(rng.uniform(-1, 1));
    (void)model.forward(tape, make_leaf(frames), 3, true);

    OptimState optim;
    optim.init_for(model.parameters());
    for (auto& v : optim.velocity) {
        for (int64_t i = 0; i < v.numel(); ++i) v[i] = static_cast<float>(rng.uniform(-0.1, 0.1));
    }

    const fs::path dir = fresh_dir("ckpt");
    save_checkpoint(dir / "a.ckpt", model, &optim, 12, 5);
    auto loaded = load_checkpoint(dir / "a.ckpt");
    CHECK(loaded.epoch == 12);
    CHECK(loaded.seed == 5);
    CHECK(loaded.config.d == 8);

    auto restored = model_from_checkpoint(loaded);
    OptimState optim2 = loaded.optim_state_for(*restored);
    CHECK(optim2.momentum == optim.momentum);
    CHECK(optim2.weight_decay == optim.weight_decay);
    save_checkpoint(dir / "b.ckpt", *restored, &optim2, loaded.epoch, loaded.seed);
    CHECK(file_bytes(dir / "a.ckpt") == file_bytes(dir / "b.ckpt"));

    CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), IoError);
}

TEST_CASE("grad check harness: quadratic subject and fault injection") {
    // exact subject: f(x) = x*x at x = 1.5
    GradCheckCase good;
    good.name = "square";
    {
        auto x = make_leaf(Tensor<double>::scalar(1.5), true, "x");
        good.leaves = {x};
        good.forward = [x](Tape<double>& tape) { return mul(tape, x, x); };
        auto xl = make_leaf(Tensor<long double>::scalar(1.5L), true, "x");
        good.oracle_leaves = {xl};
        good.oracle_forward = [xl](Tape<long double>& tape) { return mul(tape, xl, xl); };
    }
    auto rep = run_grad_check(good);
    CHECK(rep.passed);
    CHECK(rep.max_rel_err <= 1e-8);

    // deliberately corrupted backward: reports the offending coordinate
    GradCheckCase bad;
    bad.name = "corrupted";
    {
        auto x = make_leaf(Tensor<double>::scalar(1.5), true, "x");
        bad.leaves = {x};
        bad.forward = [x](Tape<double>& tape) {
            Tensor<double> y = Tensor<double>::scalar(x->value[0] * x->value[0]);
            auto out = make_leaf(std::move(y), false);
            out->requires_grad = true;
            tape.record([x, out] {
                x->ensure_grad();
                x->grad[0] += 1.9 * x->value[0] * out->grad[0];  // should be 2.0
            });
            return out;
        };
        auto xl = make_leaf(Tensor<long double>::scalar(1.5L), true, "x");
        bad.oracle_leaves = {xl};
        bad.oracle_forward = [xl](Tape<long double>& tape) { return mul(tape, xl, xl); };
    }
    auto bad_rep = run_grad_check(bad);
    CHECK_FALSE(bad_rep.passed);
    CHECK(bad_rep.worst_leaf == "x");
    CHECK(bad_rep.worst_index == 0);
    CHECK(bad_rep.worst_analytic == doctest::Approx(2.85).epsilon(1e-9));
    CHECK(bad_rep.worst_fd == doctest::Approx(3.0).epsilon(1e-6));
}

TEST_CASE("standard grad-check battery covers every documented target") {
    CHECK_THROWS_AS(grad_checks_for_target("bogus", 1), ConfigError);
    auto all = grad_checks_for_target("all", 1);
    CHECK(all.size() == 9);
    auto akg = grad_checks_for_target("akg", 1);
    CHECK(akg.size() == 5);
}

TEST_CASE("micro training run: determinism, metrics shape, actionable label error") {
    MicroRun run("det");

    const fs::path out_a = fresh_dir("det_out_a");
    auto res_a = train(run.cfg, run.dataset, run.labels.get(), 7, out_a);
    CHECK(res_a.history.size() == 2);
    CHECK(res_a.history[0].lr == doctest::Approx(0.01));
    for (const auto& m : res_a.history) {
        CHECK(std::isfinite(m.loss_total));
        CHECK(m.train_top1 >= 0.0);
        CHECK(m.train_top1 <= 1.0);
    }

    const fs::path out_b = fresh_dir("det_out_b");
    auto res_b = train(run.cfg, run.dataset, run.labels.get(), 7, out_b);
    CHECK(file_bytes(res_a.metrics_path) == file_bytes(res_b.metrics_path));
    CHECK(file_bytes(res_a.checkpoint_path) == file_bytes(res_b.checkpoint_path));

    const fs::path out_c = fresh_dir("det_out_c");
    auto res_c = train(run.cfg, run.dataset, run.labels.get(), 8, out_c);
    CHECK(file_bytes(res_a.metrics_path) != file_bytes(res_c.metrics_path));

    // auxiliary losses without labels is an actionable error
    try {
        train(run.cfg, run.dataset, nullptr, 7, fresh_dir("det_out_d"));
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("pseudolabel") != std::string::npos);
    }
}

TEST_CASE("evaluation protocols: view counts, top-5 containment, logit consensus") {
    MicroRun run("eval");
    const fs::path out = fresh_dir("eval_out");
    auto res = train(run.cfg, run.dataset, run.labels.get(), 3, out);

    auto ckpt = load_checkpoint(res.checkpoint_path);
    auto model = model_from_checkpoint(ckpt);

    EvalDetail detail;
    auto full = evaluate(*model, run.dataset, run.cfg, "full250", &detail);
    CHECK(full.views_per_video == run.cfg.eval.n_eval_seg * 10);
    CHECK(full.top5 >= full.top1);
    CHECK(full.top5 == 1.0);  // k=2 classes, top-5 covers everything
    REQUIRE(detail.view_logits.size() == run.dataset.videos.size());

    // final scores equal the brute-force consensus of the recorded view logits
    for (size_t v = 0; v < detail.view_logits.size(); ++v) {
        auto ref = oracle::consensus(detail.view_logits[v], run.cfg.eval.window);
        for (size_t c = 0; c < ref.size(); ++c) {
            CHECK(std::abs(detail.final_scores[v][c] - ref[c]) < 1e-6);
        }
    }

    auto fast = evaluate(*model, run.dataset, run.cfg, "fast");
    CHECK(fast.views_per_video == run.cfg.model.n_seg);
    CHECK(fast.top5 >= fast.top1);

    // class-count mismatch is a validation error
    Dataset bad = run.dataset;
    bad.n_classes = 99;
    CHECK_THROWS_AS(evaluate(*model, bad, run.cfg, "fast"), ValidationError);
}

TEST_CASE("baseline reduction: disabled fusion/graph/aux losses never touch auxiliary weights") {
    MicroRun run("base");
    run.cfg.model.cbi_attach = {};
    run.cfg.model.use_akg = false;
    run.cfg.optim.lambda_human = 0.0;
    run.cfg.optim.lambda_scene = 0.0;

    const fs::path out_a = fresh_dir("base_a");
    auto res_a = train(run.cfg, run.dataset, nullptr, 7, out_a);

    // a second run from an independently constructed baseline config
    RunConfig baseline;
    baseline.model = run.cfg.model;
    baseline.data = run.cfg.data;
    baseline.optim = run.cfg.optim;
    baseline.eval = run.cfg.eval;
    const fs::path out_b = fresh_dir("base_b");
    auto res_b = train(baseline, run.dataset, nullptr, 7, out_b);
    CHECK(file_bytes(res_a.metrics_path) == file_bytes(res_b.metrics_path));

    // forward instrumentation: auxiliary parameters remain untouched
    auto model = model_from_checkpoint(load_checkpoint(res_a.checkpoint_path));
    model->set_train(true);
    model->reset_touch_counters();
    Tape<float> tape;
    Rng rng(5);
    Tensor<float> frames({6, 3, 24, 24});
    for (int64_t i = 0; i < frames.numel(); ++i) frames[i] = static_cast<float>(rng.uniform(-1, 1));
    auto fw = model->forward(tape, make_leaf(std::move(frames)), 3, /*with_aux_heads=*/false);
    auto loss = softmax_cross_entropy(tape, fw.video_logits, std::vector<int>{0, 1});
    tape.backward(loss);
    CHECK(model->touches_with_prefix("scene/") == 0);
    CHECK(model->touches_with_prefix("human/") == 0);
    CHECK(model->touches_with_prefix("cbi/") == 0);
    CHECK(model->touches_with_prefix("akg/") == 0);
}
