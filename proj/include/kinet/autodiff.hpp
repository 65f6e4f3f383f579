#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "kinet/tensor.hpp"

namespace kinet {

// A value in the computation graph. Leaves (inputs, parameters) are created
// with make_leaf; ops allocate intermediate nodes. The gradient buffer is
// allocated lazily on first accumulation so inference carries no overhead.
template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::string name;  // set for parameters and named leaves, empty otherwise

    // How many times an op consumed this node since the last reset. Used to
    // verify that disabled subnetworks are genuinely never evaluated.
    uint64_t forward_touches = 0;

    void ensure_grad() {
        if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    }
    void zero_grad() {
        if (grad.shape() == value.shape()) grad.fill(T(0));
    }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> make_leaf(Tensor<T> value, bool requires_grad = false, std::string name = {}) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    n->name = std::move(name);
    return n;
}

// Reverse-mode tape. Ops append one backward closure each in execution order;
// replaying the closures in reverse is a valid topological order of the
// recorded graph, so each closure sees the fully accumulated output gradient.
template <typename T>
class Tape {
public:
    // When false, ops still compute values (and bump touch counters) but
    // record nothing; used for inference and finite-difference re-evaluation.
    bool recording = true;

    void record(std::function<void()> fn) {
        if (recording) steps_.push_back(std::move(fn));
    }

    void backward(const Var<T>& loss) {
        if (loss->value.numel() != 1) {
            throw ShapeError("backward: loss must be scalar, got " + shape_str(loss->value.shape()));
        }
        loss->ensure_grad();
        loss->grad[0] = T(1);
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    }

    void clear() { steps_.clear(); }
    size_t size() const { return steps_.size(); }

private:
    std::vector<std::function<void()>> steps_;
};

// Scoped no-grad: flips a tape to pure evaluation for the lifetime of the guard.
template <typename T>
class NoGradGuard {
public:
    explicit NoGradGuard(Tape<T>& tape) : tape_(tape), saved_(tape.recording) { tape_.recording = false; }
    ~NoGradGuard() { tape_.recording = saved_; }

private:
    Tape<T>& tape_;
    bool saved_;
};

}  // namespace kinet
