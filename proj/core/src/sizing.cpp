#include "fode/sizing.hpp"

namespace fode {

double payload_mib(long param_count) {
    return (double)(4 * param_count) / (double)(1 << 20);
}

CommSize communication_size(const ModelConfig& config) {
    CommSize out;
    out.param_count = count_parameters(config).total;
    out.payload_bytes = 4 * out.param_count;
    out.mib = payload_mib(out.param_count);
    return out;
}

double reduction_ratio(const ModelConfig& a, const ModelConfig& b) {
    const CommSize sa = communication_size(a);
    const CommSize sb = communication_size(b);
    if (sb.payload_bytes == 0) {
        throw ConfigError("reduction_ratio: reference model has zero size");
    }
    return 100.0 * (1.0 - (double)sa.payload_bytes / (double)sb.payload_bytes);
}

} // namespace fode
