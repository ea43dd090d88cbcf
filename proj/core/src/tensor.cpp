#include "fode/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace fode {

long shape_numel(const Shape& shape) {
    long n = 1;
    for (int e : shape) {
        if (e <= 0) throw ShapeError("tensor extent must be positive, got " + std::to_string(e));
        n *= e;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto node = std::make_shared<detail::Node>();
    node->data.assign(static_cast<std::size_t>(shape_numel(shape)), 0.0f);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return wrap(std::move(node));
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.node_->data.begin(), t.node_->data.end(), value);
    return t;
}

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
    const long n = shape_numel(shape);
    if (static_cast<long>(values.size()) != n) {
        throw ShapeError("tensor data length " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    return wrap(std::move(node));
}

Tensor Tensor::scalar(float value) {
    return from({1}, {value});
}

const Shape& Tensor::shape() const {
    if (!node_) throw Error("undefined tensor");
    return node_->shape;
}

int Tensor::dim(int i) const {
    const Shape& s = shape();
    if (i < 0 || i >= static_cast<int>(s.size())) {
        throw ShapeError("dimension index " + std::to_string(i) + " out of range for " + shape_str(s));
    }
    return s[static_cast<std::size_t>(i)];
}

long Tensor::numel() const {
    if (!node_) throw Error("undefined tensor");
    return node_->numel();
}

std::span<const float> Tensor::data() const {
    if (!node_) throw Error("undefined tensor");
    return node_->data;
}

std::span<float> Tensor::mut_data() {
    if (!node_) throw Error("undefined tensor");
    if (!node_->is_leaf()) {
        throw Error("in-place mutation of a tape-recorded tensor (op " + std::string(node_->op) +
                    ") is not allowed");
    }
    return node_->data;
}

bool Tensor::requires_grad() const {
    if (!node_) throw Error("undefined tensor");
    return node_->requires_grad;
}

void Tensor::set_requires_grad(bool v) {
    if (!node_) throw Error("undefined tensor");
    node_->requires_grad = v;
}

bool Tensor::has_grad() const {
    return node_ && node_->grad.size() == node_->data.size();
}

std::span<const float> Tensor::grad() const {
    if (!node_) throw Error("undefined tensor");
    node_->ensure_grad();
    return node_->grad;
}

void Tensor::zero_grad() {
    if (!node_) throw Error("undefined tensor");
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
}

float Tensor::item() const {
    if (!node_) throw Error("undefined tensor");
    if (node_->numel() != 1) {
        throw ShapeError("item() on non-scalar tensor of shape " + shape_str(node_->shape));
    }
    return node_->data[0];
}

float Tensor::at(std::initializer_list<int> index) const {
    const Shape& s = shape();
    if (index.size() != s.size()) {
        throw ShapeError("index rank does not match tensor rank " + shape_str(s));
    }
    long flat = 0;
    std::size_t d = 0;
    for (int i : index) {
        if (i < 0 || i >= s[d]) throw ShapeError("index out of bounds in dim " + std::to_string(d));
        flat = flat * s[d] + i;
        ++d;
    }
    return node_->data[static_cast<std::size_t>(flat)];
}

Tensor Tensor::clone(bool requires_grad) const {
    if (!node_) throw Error("undefined tensor");
    auto node = std::make_shared<detail::Node>();
    node->shape = node_->shape;
    node->data = node_->data;
    node->requires_grad = requires_grad;
    return wrap(std::move(node));
}

const char* Tensor::op_name() const {
    if (!node_) throw Error("undefined tensor");
    return node_->op ? node_->op : "leaf";
}

bool Tensor::is_leaf() const {
    if (!node_) throw Error("undefined tensor");
    return node_->is_leaf();
}

void backward(const Tensor& loss) {
    if (!loss.defined()) throw Error("backward: undefined tensor");
    if (loss.numel() != 1) {
        throw NumericsError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    }

    // Iterative post-order DFS; `order` ends up topologically sorted with the
    // loss last, so walking it backwards visits every node exactly once after
    // all of its consumers.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    struct Frame {
        detail::Node* node;
        std::size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({loss.node().get(), 0});
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            detail::Node* p = f.node->parents[f.next_parent++].get();
            if (visited.insert(p).second) {
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    // Leaf grads persist across calls (accumulation semantics); intermediate
    // grads are scratch space for this pass and start from zero.
    for (detail::Node* n : order) {
        n->ensure_grad();
        if (!n->is_leaf()) std::fill(n->grad.begin(), n->grad.end(), 0.0f);
    }
    loss.node()->grad[0] += 1.0f;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backward) n->backward(*n);
    }
}

} // namespace fode
