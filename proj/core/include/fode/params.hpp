#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fode/tensor.hpp"

namespace fode {

// Ordered, uniquely named collection of weight tensors. The order is the
// builder's declaration order and is canonical: serialization, averaging and
// parameter counting all align entry-by-entry across models built from
// congruent configs.
class ParameterSet {
public:
    struct Entry {
        std::string name;
        Tensor tensor;
    };

    ParameterSet() = default;

    void add(std::string name, Tensor tensor);

    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    const Entry& operator[](std::size_t i) const { return entries_[i]; }
    Entry& operator[](std::size_t i) { return entries_[i]; }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    bool has(const std::string& name) const;
    const Tensor& get(const std::string& name) const;
    Tensor& get(const std::string& name);

    long total_elements() const;

    // Deep copy; clones are leaves with requires_grad preserved.
    ParameterSet clone() const;

    // Entry-by-entry shape congruence (names and shapes, in order).
    static bool congruent(const ParameterSet& a, const ParameterSet& b);
    // Throws ShapeError naming the first mismatching entry path.
    static void require_congruent(const ParameterSet& a, const ParameterSet& b);

    // Copies `src` values into this set's tensors (shape-checked). The
    // receiving tensors keep their identity, so models holding references to
    // them see the new values.
    void load_values(const ParameterSet& src);

    void zero_grads();

private:
    std::vector<Entry> entries_;
};

// One SGD update: w <- w - eta * grad for every entry, then grads are zeroed.
// Entries whose gradient buffer was never touched are left unchanged.
void sgd_step(ParameterSet& params, float eta);

} // namespace fode
