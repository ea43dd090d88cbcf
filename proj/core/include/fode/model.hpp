#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fode/ops.hpp"
#include "fode/params.hpp"
#include "fode/tensor.hpp"

namespace fode {

enum class Family { resnet, odenet, dsodenet };
enum class EulerMode { unit_step, interval_step };

const char* family_name(Family f);
Family family_from_name(const std::string& name);
const char* euler_mode_name(EulerMode m);
EulerMode euler_mode_from_name(const std::string& name);

// Declarative description of one architecture. Parameter shapes depend on
// every field except `iterations` for the odenet/dsodenet families; that is
// the weight-compatibility property the federation relies on.
struct ModelConfig {
    Family family = Family::odenet;
    int in_channels = 3;
    int stem_channels = 16;
    std::array<int, 3> stage_channels{16, 32, 64};
    int iterations = 1; // C: per-stage repeat count for stage1/2/3
    int kernel_size = 3;
    int num_classes = 10;
    int norm_groups = 8;
    EulerMode euler_mode = EulerMode::interval_step;

    bool operator==(const ModelConfig&) const = default;
};

// Throws ConfigError naming the offending field.
void validate_config(const ModelConfig& config);

// Nominal depth N -> iteration count. C = round((N - 6) / 6), ties up;
// effective_N = 6C + 6 is reported so callers can see the approximation.
struct DepthMapping {
    int iterations;  // C
    int effective_n; // 6C + 6
};
DepthMapping depth_to_iterations(int n);

// Walks the parameter schema of `config` in canonical (declaration) order
// without allocating tensors. `kind` drives initialization: weights get
// Kaiming-uniform by fan-in, gamma is ones, beta/bias zeros.
enum class ParamKind { weight, one, zero };
void for_each_parameter(const ModelConfig& config,
                        const std::function<void(const std::string&, const Shape&, ParamKind)>& fn);

struct ParameterCount {
    long total = 0;
    std::vector<std::pair<std::string, long>> entries;
};
// Exact element count of a built model's ParameterSet, computed from the
// schema alone.
ParameterCount count_parameters(const ModelConfig& config);

// Parameters of one residual block. For separable blocks each conv is a
// depthwise/pointwise pair.
struct BlockParams {
    bool separable = false;
    int kernel = 3;
    int groups = 8;
    Tensor conv1_w;  // standard conv, or depthwise when separable
    Tensor conv1_pw; // pointwise, separable only
    Tensor norm1_gamma, norm1_beta;
    Tensor conv2_w;
    Tensor conv2_pw;
    Tensor norm2_gamma, norm2_beta;
};

// Downsampling block: stride-2 first conv, width doubling, 1x1 stride-2
// projection shortcut. Executed once in every family, never iterated, and
// always built from standard convolutions.
struct DownBlockParams {
    int kernel = 3;
    int groups = 8;
    Tensor conv1_w;
    Tensor norm1_gamma, norm1_beta;
    Tensor conv2_w;
    Tensor norm2_gamma, norm2_beta;
    Tensor proj_w;
    Tensor proj_gamma, proj_beta;
};

// Residual map of one block: f = conv -> norm -> relu -> conv -> norm.
Tensor block_residual(const Tensor& x, const BlockParams& bp);

// Iterated residual update x <- relu(x + h * f(x)). unit_step uses h = 1 and
// skips the scale entirely; interval_step integrates t in [0,1] with h = 1/C,
// which is what makes parameters trained at one C reusable at another.
template <typename F>
Tensor iterate_residual(Tensor x, int iterations, EulerMode mode, const F& f) {
    if (iterations < 1) {
        throw ConfigError("iterations must be >= 1, got " + std::to_string(iterations));
    }
    const float h = mode == EulerMode::unit_step ? 1.0f : 1.0f / static_cast<float>(iterations);
    for (int i = 0; i < iterations; ++i) {
        Tensor fx = f(x);
        x = relu(mode == EulerMode::unit_step ? add(x, fx) : add(x, scale(fx, h)));
    }
    return x;
}

// y = relu(x + f(x)): one physically-stacked residual block.
Tensor res_block_forward(const Tensor& x, const BlockParams& bp);

// One block executed `iterations` times with the same parameters. With C=1
// and unit_step this is bitwise-identical to res_block_forward.
Tensor ode_block_forward(const Tensor& x, const BlockParams& bp, int iterations, EulerMode mode);

// Same, with each conv inside f replaced by a depthwise + pointwise pair.
Tensor ds_block_forward(const Tensor& x, const BlockParams& bp, int iterations, EulerMode mode);

Tensor down_block_forward(const Tensor& x, const DownBlockParams& bp);

// A built model: config + parameters + the 7-block plan
// (stem, stage1, down2, stage2, down3, stage3, fc).
class Model {
public:
    Model(ModelConfig config, ParameterSet params);

    const ModelConfig& config() const { return config_; }
    const ParameterSet& params() const { return params_; }
    ParameterSet& params() { return params_; }

    // Runs the block plan. For ode families `override_iterations` replaces
    // the config's C at inference time; the resnet family rejects it.
    Tensor forward(const Tensor& x, std::optional<int> override_iterations = std::nullopt) const;

    // Smallest valid input side and the validity rule for this config.
    void check_input(const Tensor& x) const;

private:
    ModelConfig config_;
    ParameterSet params_;
    Tensor stem_w_, stem_gamma_, stem_beta_;
    std::vector<std::vector<BlockParams>> stages_; // 3 stages; resnet: C blocks each
    DownBlockParams down2_, down3_;
    Tensor fc_w_, fc_b_;

    void wire_views();
};

// Deterministic build: equal (config, seed) gives bit-identical parameters.
Model build_model(const ModelConfig& config, std::uint64_t seed);

// Calibrated per-family stage widths of the shipped presets (stem equals the
// first stage width). Pinned by the width-calibration acceptance test.
std::array<int, 3> preset_widths(Family family);

// Named preset: family plus nominal depth in {34, 50, 101} (other depths are
// mapped through depth_to_iterations).
ModelConfig preset_config(Family family, int depth);

} // namespace fode
