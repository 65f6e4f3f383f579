#include "kinet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "kinet/akg.hpp"
#include "kinet/cbi.hpp"
#include "kinet/distill.hpp"
#include "kinet/errors.hpp"
#include "kinet/netcore.hpp"
#include "kinet/rng.hpp"

namespace kinet {

namespace {

long double eval_oracle(const GradCheckCase& check) {
    Tape<long double> tape;
    tape.recording = false;
    auto loss = check.oracle_forward(tape);
    const long double v = loss->value[0];
    if (!std::isfinite(static_cast<double>(v))) {
        throw NumericError("grad check '" + check.name + "': non-finite loss");
    }
    return v;
}

std::string leaf_label(const std::string& name, size_t ordinal) {
    return name.empty() ? "leaf" + std::to_string(ordinal) : name;
}

}  // namespace

GradCheckReport run_grad_check(const GradCheckCase& check) {
    const bool analytic_from_oracle = !check.forward;
    if (!analytic_from_oracle && check.leaves.size() != check.oracle_leaves.size()) {
        throw ShapeError("grad check '" + check.name + "': analytic/oracle leaf count mismatch");
    }

    std::vector<Tensor<double>> analytic;
    analytic.reserve(check.oracle_leaves.size());
    int64_t total_coords = 0;
    if (analytic_from_oracle) {
        for (auto& leaf : check.oracle_leaves) {
            leaf->requires_grad = true;
            leaf->ensure_grad();
            leaf->zero_grad();
        }
        Tape<long double> tape;
        auto loss = check.oracle_forward(tape);
        if (!std::isfinite(static_cast<double>(loss->value[0]))) {
            throw NumericError("grad check '" + check.name + "': non-finite loss");
        }
        tape.backward(loss);
        for (auto& leaf : check.oracle_leaves) {
            leaf->ensure_grad();
            analytic.push_back(leaf->grad.template cast<double>());
            total_coords += leaf->value.numel();
        }
    } else {
        for (size_t l = 0; l < check.leaves.size(); ++l) {
            if (check.leaves[l]->value.shape() != check.oracle_leaves[l]->value.shape()) {
                throw ShapeError("grad check '" + check.name + "': leaf shape mismatch at index " +
                                 std::to_string(l));
            }
            check.leaves[l]->requires_grad = true;
            check.leaves[l]->ensure_grad();
            check.leaves[l]->zero_grad();
        }
        Tape<double> tape;
        auto loss = check.forward(tape);
        if (!std::isfinite(loss->value[0])) {
            throw NumericError("grad check '" + check.name + "': non-finite loss");
        }
        tape.backward(loss);
        for (auto& leaf : check.leaves) {
            leaf->ensure_grad();
            analytic.push_back(leaf->grad);
            total_coords += leaf->value.numel();
        }
    }

    // enumerate all coordinates, or a seeded subset when there are too many
    std::vector<std::pair<size_t, int64_t>> coords;
    if (total_coords <= check.max_exact_coords) {
        coords.reserve(static_cast<size_t>(total_coords));
        for (size_t l = 0; l < check.oracle_leaves.size(); ++l) {
            for (int64_t i = 0; i < check.oracle_leaves[l]->value.numel(); ++i) coords.emplace_back(l, i);
        }
    } else {
        Rng rng(check.sample_seed);
        coords.reserve(static_cast<size_t>(check.sample_size));
        for (int64_t n = 0; n < check.sample_size; ++n) {
            int64_t flat = rng.uniform_int(total_coords);
            for (size_t l = 0; l < check.oracle_leaves.size(); ++l) {
                const int64_t sz = check.oracle_leaves[l]->value.numel();
                if (flat < sz) {
                    coords.emplace_back(l, flat);
                    break;
                }
                flat -= sz;
            }
        }
    }

    GradCheckReport report;
    report.name = check.name;
    report.coords_checked = static_cast<int64_t>(coords.size());
    const long double eps = static_cast<long double>(check.eps);
    for (const auto& [l, i] : coords) {
        auto& leaf = check.oracle_leaves[l];
        const long double saved = leaf->value[i];
        leaf->value[i] = saved + eps;
        const long double fp = eval_oracle(check);
        leaf->value[i] = saved - eps;
        const long double fm = eval_oracle(check);
        leaf->value[i] = saved;
        const double fd = static_cast<double>((fp - fm) / (2.0L * eps));
        const double an = analytic[l][i];
        if (!std::isfinite(fd) || !std::isfinite(an)) {
            throw NumericError("grad check '" + check.name + "': non-finite gradient at " +
                               leaf_label(check.oracle_leaves[l]->name, l) + "[" + std::to_string(i) + "]");
        }
        const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-8});
        if (rel > report.max_rel_err) {
            report.max_rel_err = rel;
            report.worst_leaf = leaf_label(check.oracle_leaves[l]->name, l);
            report.worst_index = i;
            report.worst_analytic = an;
            report.worst_fd = fd;
        }
    }
    report.passed = report.max_rel_err <= check.tolerance;
    return report;
}

// ---------------------------------------------------------------------------
// standard battery
// ---------------------------------------------------------------------------

namespace {

// Each subject is built twice, at double and long double, from the same seed;
// every random draw happens in double and is assigned into T, so the two
// instances hold bit-identical values.
template <typename T>
struct CasePart {
    std::vector<Var<T>> leaves;
    std::function<Var<T>(Tape<T>&)> forward;
};

template <typename T>
Var<T> rand_leaf(const std::string& name, Shape shape, Rng& rng, double lo, double hi) {
    Tensor<T> t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
    return make_leaf(std::move(t), true, name);
}

template <typename T>
Var<T> margin_leaf(const std::string& name, Shape shape, Rng& rng, double lo, double hi) {
    Tensor<T> t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform_with_margin(lo, hi));
    return make_leaf(std::move(t), true, name);
}

template <typename T>
Tensor<T> rand_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<T> t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

template <typename T>
CasePart<T> cbi_part(uint64_t seed) {
    Rng rng(seed_for(seed, "gradcheck/cbi"));
    auto action = rand_leaf<T>("action", {2, 4, 5, 5}, rng, -1.0, 1.0);
    auto scene = rand_leaf<T>("scene", {2, 4, 5, 5}, rng, -1.0, 1.0);
    auto human = rand_leaf<T>("human", {2, 4, 5, 5}, rng, -1.0, 1.0);
    auto params = std::make_shared<CbiParams<T>>();
    params->bn_scene.gamma = rand_leaf<T>("bn_scene/gamma", {4}, rng, 0.5, 1.5);
    params->bn_scene.beta = rand_leaf<T>("bn_scene/beta", {4}, rng, -0.4, 0.4);
    params->bn_scene.running_mean = rand_tensor<T>({4}, rng, -0.5, 0.5);
    params->bn_scene.running_var = Tensor<T>::full({4}, T(1));
    params->bn_human.gamma = rand_leaf<T>("bn_human/gamma", {4}, rng, 0.5, 1.5);
    params->bn_human.beta = rand_leaf<T>("bn_human/beta", {4}, rng, -0.4, 0.4);
    params->bn_human.running_mean = rand_tensor<T>({4}, rng, -0.5, 0.5);
    params->bn_human.running_var = Tensor<T>::full({4}, T(1));
    params->reduce_w = rand_leaf<T>("reduce/weight", {4, 12, 1, 1}, rng, -0.4, 0.4);
    params->reduce_b = rand_leaf<T>("reduce/bias", {4}, rng, -0.2, 0.2);
    auto proj = std::make_shared<Tensor<T>>(rand_tensor<T>({2, 4, 5, 5}, rng));

    CasePart<T> part;
    part.leaves = {action, scene,
                   human, params->bn_scene.gamma,
                   params->bn_scene.beta, params->bn_human.gamma,
                   params->bn_human.beta, params->reduce_w,
                   params->reduce_b};
    part.forward = [action, scene, human, params, proj](Tape<T>& tape) {
        // batch-norm kinks are avoided by running in eval mode
        auto out = cbi_forward(tape, action, scene, human, *params, /*training=*/false);
        return inner_const(tape, out, *proj);
    };
    return part;
}

template <typename T>
CasePart<T> relation_part(const std::string& name, RelationKind kind, uint64_t seed) {
    Rng rng(seed_for(seed, "gradcheck/" + name));
    const int64_t n = 6, d = 8, de = 4;
    auto x = margin_leaf<T>("nodes", {n, d}, rng, 0.05, 1.0);
    auto params = std::make_shared<RelationParams<T>>();
    params->kind = kind;
    CasePart<T> part;
    part.leaves = {x};
    if (kind != RelationKind::kDot) {
        params->theta = rand_leaf<T>("theta", {d, de}, rng, -0.7, 0.7);
        params->phi = rand_leaf<T>("phi", {d, de}, rng, -0.7, 0.7);
        part.leaves.push_back(params->theta);
        part.leaves.push_back(params->phi);
    }
    if (kind == RelationKind::kConcat) {
        params->w_cat = rand_leaf<T>("w_cat", {2 * de}, rng, -0.7, 0.7);
        part.leaves.push_back(params->w_cat);
    }
    auto proj = std::make_shared<Tensor<T>>(rand_tensor<T>({n, n}, rng));
    part.forward = [x, params, proj](Tape<T>& tape) {
        return inner_const(tape, relation_scores(tape, x, *params), *proj);
    };
    return part;
}

template <typename T>
CasePart<T> normalize_part(uint64_t seed) {
    Rng rng(seed_for(seed, "gradcheck/normalize"));
    const int64_t n_seg = 3, n = 3 * n_seg;
    auto scores = rand_leaf<T>("scores", {n, n}, rng, -2.0, 2.0);
    auto mask = std::make_shared<Tensor<T>>(edge_mask<T>(n_seg));
    auto proj = std::make_shared<Tensor<T>>(rand_tensor<T>({n, n}, rng));
    CasePart<T> part;
    part.leaves = {scores};
    part.forward = [scores, mask, proj](Tape<T>& tape) {
        return inner_const(tape, normalize_graph(tape, scores, *mask), *proj);
    };
    return part;
}

template <typename T>
CasePart<T> gcn_part(uint64_t seed) {
    Rng rng(seed_for(seed, "gradcheck/gcn"));
    const int64_t n = 9, d = 8;
    auto g = rand_leaf<T>("graph", {n, n}, rng, 0.0, 1.0);
    auto x = margin_leaf<T>("nodes", {n, d}, rng, 0.05, 1.0);
    auto params = std::make_shared<GcnParams<T>>();
    params->weight = rand_leaf<T>("weight", {d, d}, rng, -0.6, 0.6);
    params->activation = GcnActivation::kRelu;
    auto proj = std::make_shared<Tensor<T>>(rand_tensor<T>({n, d}, rng));
    CasePart<T> part;
    part.leaves = {g, x, params->weight};
    part.forward = [g, x, params, proj](Tape<T>& tape) {
        return inner_const(tape, gcn_layer(tape, g, x, *params), *proj);
    };
    return part;
}

template <typename T>
CasePart<T> scene_loss_part(uint64_t seed) {
    Rng rng(seed_for(seed, "gradcheck/scene_loss"));
    auto logits = rand_leaf<T>("logits", {3, 7}, rng, -2.0, 2.0);
    auto labels = std::make_shared<std::vector<int>>(std::vector<int>{2, 0, 6});
    CasePart<T> part;
    part.leaves = {logits};
    part.forward = [logits, labels](Tape<T>& tape) { return scene_loss(tape, logits, *labels); };
    return part;
}

template <typename T>
CasePart<T> human_loss_part(uint64_t seed) {
    Rng rng(seed_for(seed, "gradcheck/human_loss"));
    auto logits = rand_leaf<T>("logits", {2, 2, 4, 5}, rng, -2.0, 2.0);
    auto masks = std::make_shared<Tensor<uint8_t>>(Shape{2, 8, 10});
    for (int64_t i = 0; i < masks->numel(); ++i) (*masks)[i] = rng.coin() ? 1 : 0;
    CasePart<T> part;
    part.leaves = {logits};
    part.forward = [logits, masks](Tape<T>& tape) { return human_loss(tape, logits, *masks); };
    return part;
}

template <typename T>
CasePart<T> model_part(uint64_t seed) {
    ModelConfig cfg;
    cfg.n_seg = 3;
    cfg.stem_channels = 4;
    cfg.branch_channels = {4, 4, 8, 8};
    cfg.d = 8;
    cfg.k_action = 3;
    cfg.k_scene = 4;
    cfg.input_h = 32;
    cfg.input_w = 32;

    auto model = std::make_shared<Model<T>>(cfg, seed_for(seed, "gradcheck/model"));
    model->set_train(false);  // finite differences need BN in eval mode

    // move every parameter off its initialization point: zero-initialized
    // heads and identity reductions would otherwise block gradient flow into
    // the trunk and turn the check into a zero-vs-zero comparison
    {
        Rng prng(seed_for(seed, "gradcheck/model_perturb"));
        for (const auto& [name, p] : model->parameters()) {
            for (int64_t i = 0; i < p->value.numel(); ++i) {
                p->value[i] = static_cast<T>(static_cast<double>(p->value[i]) + 0.2 * prng.uniform(-1.0, 1.0));
            }
        }
    }

    Rng rng(seed_for(seed, "gradcheck/model_inputs"));
    const int64_t n_videos = 2;
    auto frames = rand_leaf<T>("frames", {n_videos * cfg.n_seg, 3, cfg.input_h, cfg.input_w}, rng, -1.0, 1.0);
    auto action_labels = std::make_shared<std::vector<int>>(std::vector<int>{1, 2});
    auto scene_labels = std::make_shared<std::vector<int>>();
    for (int64_t i = 0; i < n_videos * cfg.n_seg; ++i) {
        scene_labels->push_back(static_cast<int>(rng.uniform_int(cfg.k_scene)));
    }
    auto masks = std::make_shared<Tensor<uint8_t>>(Shape{n_videos * cfg.n_seg, cfg.input_h, cfg.input_w});
    for (int64_t i = 0; i < masks->numel(); ++i) (*masks)[i] = rng.coin() ? 1 : 0;

    CasePart<T> part;
    part.leaves.push_back(frames);
    for (const auto& [name, p] : model->parameters()) part.leaves.push_back(p);
    part.forward = [model, frames, action_labels, scene_labels, masks](Tape<T>& tape) {
        auto out = model->forward(tape, frames, model->config().n_seg, /*with_aux_heads=*/true);
        auto l_action = softmax_cross_entropy(tape, out.video_logits, *action_labels);
        auto l_scene = scene_loss(tape, out.scene_logits, *scene_labels);
        auto l_human = human_loss(tape, out.human_logits, *masks);
        return weighted_sum<T>(tape, {l_action, l_human, l_scene}, {T(1.0), T(0.01), T(0.01)});
    };
    return part;
}

GradCheckCase assemble(const std::string& name, CasePart<double> analytic, CasePart<long double> oracle) {
    GradCheckCase check;
    check.name = name;
    check.leaves = std::move(analytic.leaves);
    check.forward = std::move(analytic.forward);
    check.oracle_leaves = std::move(oracle.leaves);
    check.oracle_forward = std::move(oracle.forward);
    return check;
}

}  // namespace

std::vector<std::string> grad_check_target_names() {
    return {"cbi", "akg", "losses", "model"};
}

std::vector<GradCheckCase> grad_checks_for_target(const std::string& target, uint64_t seed) {
    std::vector<GradCheckCase> checks;
    const bool all = target == "all";
    if (all || target == "cbi") {
        checks.push_back(assemble("cbi", cbi_part<double>(seed), cbi_part<long double>(seed)));
    }
    if (all || target == "akg") {
        checks.push_back(assemble("relation_dot", relation_part<double>("relation_dot", RelationKind::kDot, seed),
                                  relation_part<long double>("relation_dot", RelationKind::kDot, seed)));
        checks.push_back(assemble(
            "relation_embedded_dot",
            relation_part<double>("relation_embedded_dot", RelationKind::kEmbeddedDot, seed),
            relation_part<long double>("relation_embedded_dot", RelationKind::kEmbeddedDot, seed)));
        checks.push_back(assemble("relation_concat",
                                  relation_part<double>("relation_concat", RelationKind::kConcat, seed),
                                  relation_part<long double>("relation_concat", RelationKind::kConcat, seed)));
        checks.push_back(assemble("normalize", normalize_part<double>(seed), normalize_part<long double>(seed)));
        checks.push_back(assemble("gcn", gcn_part<double>(seed), gcn_part<long double>(seed)));
    }
    if (all || target == "losses") {
        checks.push_back(assemble("scene_loss", scene_loss_part<double>(seed), scene_loss_part<long double>(seed)));
        checks.push_back(assemble("human_loss", human_loss_part<double>(seed), human_loss_part<long double>(seed)));
    }
    if (all || target == "model") {
        // analytic gradients come from the oracle-precision graph; see the
        // GradCheckCase comment
        GradCheckCase check;
        check.name = "model";
        auto part = model_part<long double>(seed);
        check.oracle_leaves = std::move(part.leaves);
        check.oracle_forward = std::move(part.forward);
        check.sample_seed = seed_for(seed, "gradcheck/model_sample");
        checks.push_back(std::move(check));
    }
    if (checks.empty()) {
        throw ConfigError("gradcheck: unknown target '" + target + "' (use cbi|akg|losses|model|all)");
    }
    return checks;
}

}  // namespace kinet
