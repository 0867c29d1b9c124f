#pragma once
// Minimal reverse-mode autodiff: dense row-major tensors plus a tape of
// backward closures. Each op appends one closure; Graph::backward seeds the
// scalar loss with 1 and replays the tape in reverse, accumulating into the
// grad buffers of every tensor that requires grad.

#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "emgdis/errors.hpp"

namespace emgdis::ad {

template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> v;  // values, row-major
    std::vector<T> g;  // gradient, empty until needed
    bool requires_grad = false;
    std::string name;

    size_t numel() const {
        size_t n = 1;
        for (int d : shape) n *= static_cast<size_t>(d);
        return n;
    }

    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(shape.size()); }

    void ensure_grad() {
        if (g.size() != v.size()) g.assign(v.size(), T(0));
    }

    bool has_grad() const { return g.size() == v.size(); }

    void zero_grad() {
        if (!g.empty()) std::fill(g.begin(), g.end(), T(0));
    }
};

template <typename T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

inline std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline size_t shape_numel(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    return n;
}

template <typename T>
TensorPtr<T> make_tensor(std::vector<int> shape, bool requires_grad = false, std::string name = {}) {
    for (int d : shape) {
        if (d <= 0) throw ShapeError("tensor dims must be positive, got " + shape_str(shape));
    }
    auto t = std::make_shared<Tensor<T>>();
    t->shape = std::move(shape);
    t->v.assign(shape_numel(t->shape), T(0));
    t->requires_grad = requires_grad;
    t->name = std::move(name);
    return t;
}

template <typename T>
TensorPtr<T> make_tensor(std::vector<int> shape, std::vector<T> values, bool requires_grad = false,
                         std::string name = {}) {
    auto t = make_tensor<T>(std::move(shape), requires_grad, std::move(name));
    if (values.size() != t->v.size())
        throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                         shape_str(t->shape));
    t->v = std::move(values);
    return t;
}

// Tape of backward closures. One backward pass per graph instance.
template <typename T>
class Graph {
public:
    void record(std::function<void()> fn) {
        if (recording_) tape_.push_back(std::move(fn));
    }

    bool recording() const { return recording_; }
    void set_recording(bool on) { recording_ = on; }
    size_t size() const { return tape_.size(); }

    void backward(const TensorPtr<T>& loss) {
        if (!loss) throw ContractError("backward on null tensor");
        if (loss->numel() != 1)
            throw ShapeError("backward requires a scalar loss, got " + shape_str(loss->shape));
        if (!loss->requires_grad)
            throw ContractError("backward on a tensor that does not require grad");
        loss->ensure_grad();
        loss->g[0] = T(1);
        for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
    }

    void clear() { tape_.clear(); }

private:
    std::vector<std::function<void()>> tape_;
    bool recording_ = true;
};

}  // namespace emgdis::ad
