#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fode/error.hpp"

namespace fode {

using Shape = std::vector<int>;

long shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One record on the autodiff tape. Ops append a node per output; `backward`
// reads this node's grad and accumulates into the parents' grads, using
// whatever activations the op closure saved at record time.
struct Node {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad; // lazily allocated, zero-initialized
    bool requires_grad = false;
    const char* op = nullptr; // null for leaves
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    long numel() const { return static_cast<long>(data.size()); }
    bool is_leaf() const { return op == nullptr; }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
    }
};

} // namespace detail

// Dense row-major float32 tensor handle with reverse-mode autodiff.
// Copies share storage (shallow); use clone() for a deep, detached copy.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, float value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<float> values, bool requires_grad = false);
    static Tensor scalar(float value);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int rank() const { return static_cast<int>(shape().size()); }
    int dim(int i) const;
    long numel() const;

    std::span<const float> data() const;
    // Mutable access to a leaf tensor's storage. Non-leaf tensors are results
    // recorded on the tape; mutating them would corrupt the reverse pass.
    std::span<float> mut_data();

    bool requires_grad() const;
    void set_requires_grad(bool v);
    bool has_grad() const;
    // Read the gradient buffer; zeros are materialized if backward never
    // reached this tensor.
    std::span<const float> grad() const;
    void zero_grad();

    float item() const;
    float at(std::initializer_list<int> index) const;

    // Deep copy of the data, detached from the tape.
    Tensor clone(bool requires_grad = false) const;

    const char* op_name() const;
    bool is_leaf() const;

    std::shared_ptr<detail::Node> node() const { return node_; }
    static Tensor wrap(std::shared_ptr<detail::Node> node) {
        Tensor t;
        t.node_ = std::move(node);
        return t;
    }

private:
    std::shared_ptr<detail::Node> node_;
};

// Reverse pass: seeds d(loss)/d(loss) = 1 and walks the tape once in reverse
// topological order. Gradients accumulate until zero_grad() is called, so
// repeated backward() calls without zeroing sum their contributions.
void backward(const Tensor& loss);

} // namespace fode
