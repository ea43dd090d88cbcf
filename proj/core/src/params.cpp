#include "fode/params.hpp"

#include <algorithm>

namespace fode {

void ParameterSet::add(std::string name, Tensor tensor) {
    if (has(name)) throw Error("duplicate parameter name: " + name);
    entries_.push_back({std::move(name), std::move(tensor)});
}

bool ParameterSet::has(const std::string& name) const {
    return std::any_of(entries_.begin(), entries_.end(),
                       [&](const Entry& e) { return e.name == name; });
}

const Tensor& ParameterSet::get(const std::string& name) const {
    for (const auto& e : entries_) {
        if (e.name == name) return e.tensor;
    }
    throw Error("unknown parameter: " + name);
}

Tensor& ParameterSet::get(const std::string& name) {
    for (auto& e : entries_) {
        if (e.name == name) return e.tensor;
    }
    throw Error("unknown parameter: " + name);
}

long ParameterSet::total_elements() const {
    long n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
}

ParameterSet ParameterSet::clone() const {
    ParameterSet out;
    for (const auto& e : entries_) {
        out.add(e.name, e.tensor.clone(e.tensor.requires_grad()));
    }
    return out;
}

bool ParameterSet::congruent(const ParameterSet& a, const ParameterSet& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].name != b[i].name || a[i].tensor.shape() != b[i].tensor.shape()) return false;
    }
    return true;
}

void ParameterSet::require_congruent(const ParameterSet& a, const ParameterSet& b) {
    if (a.size() != b.size()) {
        throw ShapeError("parameter sets are incongruent: " + std::to_string(a.size()) +
                         " entries vs " + std::to_string(b.size()));
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].name != b[i].name) {
            throw ShapeError("parameter sets are incongruent at entry " + std::to_string(i) + ": '" +
                             a[i].name + "' vs '" + b[i].name + "'");
        }
        if (a[i].tensor.shape() != b[i].tensor.shape()) {
            throw ShapeError("parameter sets are incongruent at '" + a[i].name + "': shape " +
                             shape_str(a[i].tensor.shape()) + " vs " + shape_str(b[i].tensor.shape()));
        }
    }
}

void ParameterSet::load_values(const ParameterSet& src) {
    require_congruent(*this, src);
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        auto dst = entries_[i].tensor.mut_data();
        auto s = src[i].tensor.data();
        std::copy(s.begin(), s.end(), dst.begin());
    }
}

void ParameterSet::zero_grads() {
    for (auto& e : entries_) e.tensor.zero_grad();
}

void sgd_step(ParameterSet& params, float eta) {
    if (eta < 0.0f) throw Error("sgd_step: learning rate must be >= 0");
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& t = params[i].tensor;
        if (!t.has_grad()) continue;
        auto g = t.grad();
        auto w = t.mut_data();
        if (g.size() != w.size()) {
            throw ShapeError("sgd_step: grad size mismatch at '" + params[i].name + "'");
        }
        for (std::size_t j = 0; j < w.size(); ++j) w[j] -= eta * g[j];
        t.zero_grad();
    }
}

} // namespace fode
