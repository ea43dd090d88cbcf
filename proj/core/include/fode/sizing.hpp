#pragma once

#include "fode/model.hpp"

namespace fode {

// Communication cost of shipping one parameter set: raw tensor payload at
// 4 bytes per parameter, with MiB meaning 2^20 bytes.
struct CommSize {
    long param_count = 0;
    long payload_bytes = 0;
    double mib = 0.0;
};

double payload_mib(long param_count);
CommSize communication_size(const ModelConfig& config);

// 100 * (1 - size(a) / size(b)), i.e. how much smaller a is than b.
double reduction_ratio(const ModelConfig& a, const ModelConfig& b);

} // namespace fode
