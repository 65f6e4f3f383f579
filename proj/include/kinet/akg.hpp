#pragma once

#include <string>
#include <vector>

#include "kinet/ops.hpp"

namespace kinet {

// Node ordering inside the graph: rows [0,n_seg) are action nodes,
// [n_seg,2n_seg) scene, [2n_seg,3n_seg) human.
enum class NodeRole { kAction = 0, kScene = 1, kHuman = 2 };

inline NodeRole node_role(int64_t index, int64_t n_seg) {
    return static_cast<NodeRole>(index / n_seg);
}

enum class RelationKind { kDot, kEmbeddedDot, kConcat };

// kLiteral zeroes exactly the scene-human pairs; kActionIncident additionally
// zeroes scene-scene and human-human pairs off the diagonal. Self-loops stay
// active in both so every row has support under normalization.
enum class MaskMode { kLiteral, kActionIncident };

enum class GcnActivation { kRelu, kIdentity };

template <typename T>
struct RelationParams {
    RelationKind kind = RelationKind::kDot;
    Var<T> theta;  // [d, d_e], embedded_dot and concat only
    Var<T> phi;    // [d, d_e]
    Var<T> w_cat;  // [2*d_e], concat only
};

template <typename T>
struct GcnParams {
    Var<T> weight;  // [d, d], output width equals input width
    GcnActivation activation = GcnActivation::kRelu;
};

template <typename T>
Tensor<T> edge_mask(int64_t n_seg, MaskMode mode = MaskMode::kLiteral) {
    if (n_seg < 1) throw ConfigError("edge_mask: n_seg must be >= 1, got " + std::to_string(n_seg));
    const int64_t n = 3 * n_seg;
    Tensor<T> mask({n, n});
    for (int64_t a = 0; a < n; ++a) {
        const NodeRole ra = node_role(a, n_seg);
        for (int64_t b = 0; b < n; ++b) {
            const NodeRole rb = node_role(b, n_seg);
            bool active;
            const bool scene_human = (ra == NodeRole::kScene && rb == NodeRole::kHuman) ||
                                     (ra == NodeRole::kHuman && rb == NodeRole::kScene);
            if (mode == MaskMode::kLiteral) {
                active = !scene_human;
            } else {
                active = ra == NodeRole::kAction || rb == NodeRole::kAction || a == b;
            }
            mask.at(a, b) = active ? T(1) : T(0);
        }
    }
    return mask;
}

// Stacks three equally shaped [n_seg, d] groups into the fixed role ordering.
template <typename T>
Var<T> build_nodes(Tape<T>& tape, const Var<T>& action, const Var<T>& scene, const Var<T>& human) {
    if (!action->value.same_shape(scene->value) || !action->value.same_shape(human->value)) {
        throw ShapeError("build_nodes: group shapes differ: " + shape_str(action->value.shape()) +
                         ", " + shape_str(scene->value.shape()) + ", " +
                         shape_str(human->value.shape()));
    }
    require_rank(action->value, 2, "build_nodes group");
    return concat_rows(tape, {action, scene, human});
}

namespace detail {

// Pairwise scores for the concat relation: s[a][b] = relu(u[a] + v[b]) with
// u = (x theta) w_head and v = (x phi) w_tail, w_cat = [w_head; w_tail].
template <typename T>
Var<T> concat_relation(Tape<T>& tape, const Var<T>& a_proj, const Var<T>& b_proj, const Var<T>& w_cat) {
    touch(a_proj);
    touch(b_proj);
    touch(w_cat);
    const int64_t n = a_proj->value.dim(0), de = a_proj->value.dim(1);
    if (w_cat->value.numel() != 2 * de) {
        throw ShapeError("concat relation: w_cat extent " + std::to_string(w_cat->value.numel()) +
                         " != 2*d_e = " + std::to_string(2 * de));
    }
    using A = acc_t<T>;
    std::vector<A> u(static_cast<size_t>(n)), v(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        A au = A(0), bv = A(0);
        for (int64_t j = 0; j < de; ++j) {
            au += static_cast<A>(a_proj->value.at(i, j)) * static_cast<A>(w_cat->value[j]);
            bv += static_cast<A>(b_proj->value.at(i, j)) * static_cast<A>(w_cat->value[de + j]);
        }
        u[static_cast<size_t>(i)] = au;
        v[static_cast<size_t>(i)] = bv;
    }
    Tensor<T> s({n, n});
    for (int64_t a = 0; a < n; ++a) {
        for (int64_t b = 0; b < n; ++b) {
            const A pre = u[static_cast<size_t>(a)] + v[static_cast<size_t>(b)];
            s.at(a, b) = pre > A(0) ? static_cast<T>(pre) : T(0);
        }
    }
    const bool req = a_proj->requires_grad || b_proj->requires_grad || w_cat->requires_grad;
    auto out = make_out(std::move(s), req);
    if (tape.recording && req) {
        tape.record([a_proj, b_proj, w_cat, out] {
            const int64_t n = a_proj->value.dim(0), de = a_proj->value.dim(1);
            using A = acc_t<T>;
            std::vector<A> du(static_cast<size_t>(n), A(0)), dv(static_cast<size_t>(n), A(0));
            for (int64_t a = 0; a < n; ++a) {
                for (int64_t b = 0; b < n; ++b) {
                    if (out->value.at(a, b) > T(0)) {
                        const A g = static_cast<A>(out->grad.at(a, b));
                        du[static_cast<size_t>(a)] += g;
                        dv[static_cast<size_t>(b)] += g;
                    }
                }
            }
            if (a_proj->requires_grad) a_proj->ensure_grad();
            if (b_proj->requires_grad) b_proj->ensure_grad();
            if (w_cat->requires_grad) w_cat->ensure_grad();
            for (int64_t i = 0; i < n; ++i) {
                for (int64_t j = 0; j < de; ++j) {
                    if (a_proj->requires_grad) {
                        a_proj->grad.at(i, j) +=
                            static_cast<T>(du[static_cast<size_t>(i)] * static_cast<A>(w_cat->value[j]));
                    }
                    if (b_proj->requires_grad) {
                        b_proj->grad.at(i, j) +=
                            static_cast<T>(dv[static_cast<size_t>(i)] * static_cast<A>(w_cat->value[de + j]));
                    }
                    if (w_cat->requires_grad) {
                        w_cat->grad[j] +=
                            static_cast<T>(du[static_cast<size_t>(i)] * static_cast<A>(a_proj->value.at(i, j)));
                        w_cat->grad[de + j] +=
                            static_cast<T>(dv[static_cast<size_t>(i)] * static_cast<A>(b_proj->value.at(i, j)));
                    }
                }
            }
        });
    }
    return out;
}

}  // namespace detail

// s[a][b] = f(x_a, x_b) for every ordered pair, self-pairs included.
template <typename T>
Var<T> relation_scores(Tape<T>& tape, const Var<T>& x, const RelationParams<T>& params) {
    require_rank(x->value, 2, "relation_scores nodes");
    switch (params.kind) {
        case RelationKind::kDot:
            return matmul(tape, x, x, /*trans_b=*/true);
        case RelationKind::kEmbeddedDot: {
            auto a = matmul(tape, x, params.theta);
            auto b = matmul(tape, x, params.phi);
            return matmul(tape, a, b, /*trans_b=*/true);
        }
        case RelationKind::kConcat: {
            auto a = matmul(tape, x, params.theta);
            auto b = matmul(tape, x, params.phi);
            return detail::concat_relation(tape, a, b, params.w_cat);
        }
    }
    throw ConfigError("relation_scores: unknown relation kind");
}

// Masked row-softmax; masking precedes normalization so each row's active
// entries sum to 1 and masked entries are exactly zero.
template <typename T>
Var<T> normalize_graph(Tape<T>& tape, const Var<T>& scores, const Tensor<T>& mask) {
    return masked_row_softmax(tape, scores, mask);
}

// z = activation(g x w); one application per forward pass.
template <typename T>
Var<T> gcn_layer(Tape<T>& tape, const Var<T>& g, const Var<T>& x, const GcnParams<T>& params) {
    auto mixed = matmul(tape, g, x);
    auto z = matmul(tape, mixed, params.weight);
    if (params.activation == GcnActivation::kRelu) return relu(tape, z);
    return z;
}

// rows [0, n_seg) of the refined node matrix.
template <typename T>
Var<T> select_action_nodes(Tape<T>& tape, const Var<T>& z, int64_t n_seg) {
    if (z->value.dim(0) % 3 != 0 || z->value.dim(0) != 3 * n_seg) {
        throw ShapeError("select_action_nodes: node count " + std::to_string(z->value.dim(0)) +
                         " != 3*n_seg = " + std::to_string(3 * n_seg));
    }
    return slice_rows(tape, z, 0, n_seg);
}

}  // namespace kinet
