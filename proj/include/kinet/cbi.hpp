#pragma once

#include "kinet/ops.hpp"

namespace kinet {

// Cross-branch fusion parameters for one attachment point. The 1x1 reduction
// maps 3C -> C channels and is initialized to [I | 0 | 0] with zero bias, so a
// freshly built module is an exact identity on the action path when both
// auxiliary inputs are zero.
template <typename T>
struct CbiParams {
    BatchNorm<T> bn_scene;
    BatchNorm<T> bn_human;
    Var<T> reduce_w;  // [C, 3C, 1, 1]
    Var<T> reduce_b;  // [C]
};

// Gated modulation of the action map by both auxiliary maps, residual add,
// channel concat with the raw auxiliary maps, then 1x1 channel reduction.
// Output shape equals the action input shape.
template <typename T>
Var<T> cbi_forward(Tape<T>& tape, const Var<T>& action, const Var<T>& scene, const Var<T>& human,
                   CbiParams<T>& params, bool training) {
    if (!action->value.same_shape(scene->value) || !action->value.same_shape(human->value)) {
        throw ShapeError("cbi_forward: input shapes differ: " + shape_str(action->value.shape()) +
                         ", " + shape_str(scene->value.shape()) + ", " +
                         shape_str(human->value.shape()));
    }
    auto gate_scene = relu(tape, batch_norm2d(tape, scene, params.bn_scene, training));
    auto gate_human = relu(tape, batch_norm2d(tape, human, params.bn_human, training));
    auto fused = add(tape, action, add(tape, mul(tape, action, gate_scene), mul(tape, action, gate_human)));
    auto stacked = concat_channels<T>(tape, {fused, scene, human});
    return conv2d(tape, stacked, params.reduce_w, params.reduce_b, /*stride=*/1, /*pad=*/0);
}

}  // namespace kinet
