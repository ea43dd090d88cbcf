#include "fode/model.hpp"

#include <cmath>

#include "fode/rng.hpp"

namespace fode {

const char* family_name(Family f) {
    switch (f) {
        case Family::resnet: return "resnet";
        case Family::odenet: return "odenet";
        case Family::dsodenet: return "dsodenet";
    }
    throw ConfigError("unknown family enum value");
}

Family family_from_name(const std::string& name) {
    if (name == "resnet") return Family::resnet;
    if (name == "odenet") return Family::odenet;
    if (name == "dsodenet") return Family::dsodenet;
    throw ConfigError("unknown model family '" + name + "' (expected resnet|odenet|dsodenet)");
}

const char* euler_mode_name(EulerMode m) {
    return m == EulerMode::unit_step ? "unit_step" : "interval_step";
}

EulerMode euler_mode_from_name(const std::string& name) {
    if (name == "unit_step") return EulerMode::unit_step;
    if (name == "interval_step") return EulerMode::interval_step;
    throw ConfigError("unknown euler_mode '" + name + "' (expected unit_step|interval_step)");
}

void validate_config(const ModelConfig& c) {
    if (c.in_channels < 1) throw ConfigError("invalid config field in_channels: must be >= 1");
    if (c.stem_channels < 1) throw ConfigError("invalid config field stem_channels: must be >= 1");
    for (int s : c.stage_channels) {
        if (s < 1) throw ConfigError("invalid config field stage_channels: widths must be >= 1");
    }
    if (c.stem_channels != c.stage_channels[0]) {
        throw ConfigError("invalid config field stem_channels: must equal stage_channels[0] (" +
                          std::to_string(c.stage_channels[0]) + "), got " +
                          std::to_string(c.stem_channels) +
                          " (stage1 blocks use an identity shortcut)");
    }
    if (c.iterations < 1) throw ConfigError("invalid config field iterations: must be >= 1");
    if (c.kernel_size < 1 || c.kernel_size % 2 == 0) {
        throw ConfigError("invalid config field kernel_size: must be odd and >= 1, got " +
                          std::to_string(c.kernel_size));
    }
    if (c.num_classes < 2) throw ConfigError("invalid config field num_classes: must be >= 2");
    if (c.norm_groups < 1) throw ConfigError("invalid config field norm_groups: must be >= 1");
    for (int s : c.stage_channels) {
        if (s % c.norm_groups != 0) {
            throw ConfigError("invalid config field norm_groups: " + std::to_string(c.norm_groups) +
                              " does not divide stage width " + std::to_string(s));
        }
    }
}

DepthMapping depth_to_iterations(int n) {
    if (n < 12) {
        throw ConfigError("depth must be >= 12, got " + std::to_string(n));
    }
    // round((n - 6) / 6) with ties rounding up
    const int c = (2 * (n - 6) + 6) / 12;
    return DepthMapping{c, 6 * c + 6};
}

namespace {

void emit_norm(const std::function<void(const std::string&, const Shape&, ParamKind)>& fn,
               const std::string& prefix, int channels) {
    fn(prefix + ".gamma", {channels}, ParamKind::one);
    fn(prefix + ".beta", {channels}, ParamKind::zero);
}

void emit_block(const std::function<void(const std::string&, const Shape&, ParamKind)>& fn,
                const std::string& prefix, int width, int kernel, bool separable) {
    if (separable) {
        fn(prefix + ".conv1.dw.weight", {width, 1, kernel, kernel}, ParamKind::weight);
        fn(prefix + ".conv1.pw.weight", {width, width, 1, 1}, ParamKind::weight);
    } else {
        fn(prefix + ".conv1.weight", {width, width, kernel, kernel}, ParamKind::weight);
    }
    emit_norm(fn, prefix + ".norm1", width);
    if (separable) {
        fn(prefix + ".conv2.dw.weight", {width, 1, kernel, kernel}, ParamKind::weight);
        fn(prefix + ".conv2.pw.weight", {width, width, 1, 1}, ParamKind::weight);
    } else {
        fn(prefix + ".conv2.weight", {width, width, kernel, kernel}, ParamKind::weight);
    }
    emit_norm(fn, prefix + ".norm2", width);
}

void emit_down_block(const std::function<void(const std::string&, const Shape&, ParamKind)>& fn,
                     const std::string& prefix, int in_width, int out_width, int kernel) {
    fn(prefix + ".conv1.weight", {out_width, in_width, kernel, kernel}, ParamKind::weight);
    emit_norm(fn, prefix + ".norm1", out_width);
    fn(prefix + ".conv2.weight", {out_width, out_width, kernel, kernel}, ParamKind::weight);
    emit_norm(fn, prefix + ".norm2", out_width);
    fn(prefix + ".proj.weight", {out_width, in_width, 1, 1}, ParamKind::weight);
    emit_norm(fn, prefix + ".proj_norm", out_width);
}

} // namespace

void for_each_parameter(const ModelConfig& c,
                        const std::function<void(const std::string&, const Shape&, ParamKind)>& fn) {
    validate_config(c);
    const int k = c.kernel_size;
    const bool sep = c.family == Family::dsodenet;
    const int repeats = c.family == Family::resnet ? c.iterations : 1;

    fn("stem.conv.weight", {c.stem_channels, c.in_channels, k, k}, ParamKind::weight);
    emit_norm(fn, "stem.norm", c.stem_channels);

    for (int stage = 0; stage < 3; ++stage) {
        const int width = c.stage_channels[(std::size_t)stage];
        if (stage > 0) {
            const int in_width = c.stage_channels[(std::size_t)stage - 1];
            emit_down_block(fn, "down" + std::to_string(stage + 1), in_width, width, k);
        }
        const std::string stage_prefix = "stage" + std::to_string(stage + 1);
        for (int r = 0; r < repeats; ++r) {
            const std::string prefix =
                c.family == Family::resnet ? stage_prefix + ".block" + std::to_string(r) : stage_prefix;
            emit_block(fn, prefix, width, k, sep);
        }
    }

    fn("fc.weight", {c.num_classes, c.stage_channels[2]}, ParamKind::weight);
    fn("fc.bias", {c.num_classes}, ParamKind::zero);
}

ParameterCount count_parameters(const ModelConfig& config) {
    ParameterCount out;
    for_each_parameter(config, [&](const std::string& name, const Shape& shape, ParamKind) {
        const long n = shape_numel(shape);
        out.entries.emplace_back(name, n);
        out.total += n;
    });
    return out;
}

Tensor block_residual(const Tensor& x, const BlockParams& bp) {
    const int pad = bp.kernel / 2;
    Tensor h = bp.separable
                   ? pointwise_conv2d(depthwise_conv2d(x, bp.conv1_w, 1, pad), bp.conv1_pw)
                   : conv2d(x, bp.conv1_w, std::nullopt, 1, pad);
    h = relu(group_norm(h, bp.groups, bp.norm1_gamma, bp.norm1_beta));
    h = bp.separable ? pointwise_conv2d(depthwise_conv2d(h, bp.conv2_w, 1, pad), bp.conv2_pw)
                     : conv2d(h, bp.conv2_w, std::nullopt, 1, pad);
    return group_norm(h, bp.groups, bp.norm2_gamma, bp.norm2_beta);
}

Tensor res_block_forward(const Tensor& x, const BlockParams& bp) {
    if (x.rank() != 4 || x.dim(1) != bp.conv1_w.dim(0)) {
        throw ShapeError("res_block_forward: input channels " +
                         std::to_string(x.rank() == 4 ? x.dim(1) : -1) +
                         " do not match block width " + std::to_string(bp.conv1_w.dim(0)));
    }
    return relu(add(x, block_residual(x, bp)));
}

Tensor ode_block_forward(const Tensor& x, const BlockParams& bp, int iterations, EulerMode mode) {
    if (x.rank() != 4 || x.dim(1) != bp.conv1_w.dim(0)) {
        throw ShapeError("ode_block_forward: input channels " +
                         std::to_string(x.rank() == 4 ? x.dim(1) : -1) +
                         " do not match block width " + std::to_string(bp.conv1_w.dim(0)));
    }
    return iterate_residual(x, iterations, mode,
                            [&](const Tensor& v) { return block_residual(v, bp); });
}

Tensor ds_block_forward(const Tensor& x, const BlockParams& bp, int iterations, EulerMode mode) {
    if (!bp.separable) {
        throw ConfigError("ds_block_forward: block parameters are not separable");
    }
    return ode_block_forward(x, bp, iterations, mode);
}

Tensor down_block_forward(const Tensor& x, const DownBlockParams& bp) {
    const int pad = bp.kernel / 2;
    Tensor h = conv2d(x, bp.conv1_w, std::nullopt, 2, pad);
    h = relu(group_norm(h, bp.groups, bp.norm1_gamma, bp.norm1_beta));
    h = conv2d(h, bp.conv2_w, std::nullopt, 1, pad);
    h = group_norm(h, bp.groups, bp.norm2_gamma, bp.norm2_beta);
    Tensor shortcut = conv2d(x, bp.proj_w, std::nullopt, 2, 0);
    shortcut = group_norm(shortcut, bp.groups, bp.proj_gamma, bp.proj_beta);
    return relu(add(shortcut, h));
}

Model::Model(ModelConfig config, ParameterSet params)
    : config_(std::move(config)), params_(std::move(params)) {
    validate_config(config_);
    wire_views();
}

void Model::wire_views() {
    const bool sep = config_.family == Family::dsodenet;
    const int repeats = config_.family == Family::resnet ? config_.iterations : 1;

    stem_w_ = params_.get("stem.conv.weight");
    stem_gamma_ = params_.get("stem.norm.gamma");
    stem_beta_ = params_.get("stem.norm.beta");

    stages_.assign(3, {});
    for (int stage = 0; stage < 3; ++stage) {
        const std::string stage_prefix = "stage" + std::to_string(stage + 1);
        for (int r = 0; r < repeats; ++r) {
            const std::string p =
                config_.family == Family::resnet ? stage_prefix + ".block" + std::to_string(r)
                                                 : stage_prefix;
            BlockParams bp;
            bp.separable = sep;
            bp.kernel = config_.kernel_size;
            bp.groups = config_.norm_groups;
            if (sep) {
                bp.conv1_w = params_.get(p + ".conv1.dw.weight");
                bp.conv1_pw = params_.get(p + ".conv1.pw.weight");
                bp.conv2_w = params_.get(p + ".conv2.dw.weight");
                bp.conv2_pw = params_.get(p + ".conv2.pw.weight");
            } else {
                bp.conv1_w = params_.get(p + ".conv1.weight");
                bp.conv2_w = params_.get(p + ".conv2.weight");
            }
            bp.norm1_gamma = params_.get(p + ".norm1.gamma");
            bp.norm1_beta = params_.get(p + ".norm1.beta");
            bp.norm2_gamma = params_.get(p + ".norm2.gamma");
            bp.norm2_beta = params_.get(p + ".norm2.beta");
            stages_[(std::size_t)stage].push_back(std::move(bp));
        }
    }

    for (int d = 0; d < 2; ++d) {
        const std::string p = "down" + std::to_string(d + 2);
        DownBlockParams& bp = d == 0 ? down2_ : down3_;
        bp.kernel = config_.kernel_size;
        bp.groups = config_.norm_groups;
        bp.conv1_w = params_.get(p + ".conv1.weight");
        bp.norm1_gamma = params_.get(p + ".norm1.gamma");
        bp.norm1_beta = params_.get(p + ".norm1.beta");
        bp.conv2_w = params_.get(p + ".conv2.weight");
        bp.norm2_gamma = params_.get(p + ".norm2.gamma");
        bp.norm2_beta = params_.get(p + ".norm2.beta");
        bp.proj_w = params_.get(p + ".proj.weight");
        bp.proj_gamma = params_.get(p + ".proj_norm.gamma");
        bp.proj_beta = params_.get(p + ".proj_norm.beta");
    }

    fc_w_ = params_.get("fc.weight");
    fc_b_ = params_.get("fc.bias");
}

void Model::check_input(const Tensor& x) const {
    if (x.rank() != 4) {
        throw ShapeError("model input must be [B,C,H,W], got " + shape_str(x.shape()));
    }
    if (x.dim(1) != config_.in_channels) {
        throw ShapeError("model input channels " + std::to_string(x.dim(1)) +
                         " do not match config in_channels " + std::to_string(config_.in_channels));
    }
    // Two stride-2 downsamples: 8x8 is the smallest side that keeps the last
    // stage at a 2x2 map.
    for (int axis = 2; axis <= 3; ++axis) {
        if (x.dim(axis) < 4) {
            throw ShapeError("model input side " + std::to_string(x.dim(axis)) +
                             " is too small for two stride-2 downsamples (need >= 4)");
        }
    }
}

Tensor Model::forward(const Tensor& x, std::optional<int> override_iterations) const {
    if (override_iterations && config_.family == Family::resnet) {
        throw ConfigError("stacked blocks are not re-iterable");
    }
    if (override_iterations && *override_iterations < 1) {
        throw ConfigError("override iterations must be >= 1, got " +
                          std::to_string(*override_iterations));
    }
    check_input(x);
    const int c_eff = override_iterations.value_or(config_.iterations);
    const int pad = config_.kernel_size / 2;

    Tensor h = conv2d(x, stem_w_, std::nullopt, 1, pad);
    h = relu(group_norm(h, config_.norm_groups, stem_gamma_, stem_beta_));

    for (int stage = 0; stage < 3; ++stage) {
        if (stage == 1) h = down_block_forward(h, down2_);
        if (stage == 2) h = down_block_forward(h, down3_);
        const auto& blocks = stages_[(std::size_t)stage];
        if (config_.family == Family::resnet) {
            for (const auto& bp : blocks) h = res_block_forward(h, bp);
        } else {
            h = ode_block_forward(h, blocks[0], c_eff, config_.euler_mode);
        }
    }

    h = avg_pool_global(h);
    return linear(h, fc_w_, fc_b_);
}

Model build_model(const ModelConfig& config, std::uint64_t seed) {
    validate_config(config);
    Rng rng(mix_seed({seed, 0xb01d5eedULL}));
    ParameterSet params;
    for_each_parameter(config, [&](const std::string& name, const Shape& shape, ParamKind kind) {
        Tensor t = Tensor::zeros(shape, /*requires_grad=*/true);
        auto data = t.mut_data();
        switch (kind) {
            case ParamKind::weight: {
                long fan_in = 1;
                for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
                const float bound = std::sqrt(6.0f / (float)fan_in);
                for (auto& v : data) v = rng.uniform_f(-bound, bound);
                break;
            }
            case ParamKind::one:
                for (auto& v : data) v = 1.0f;
                break;
            case ParamKind::zero:
                break;
        }
        params.add(name, std::move(t));
    });
    return Model(config, std::move(params));
}

std::array<int, 3> preset_widths(Family family) {
    // Pinned by the width-calibration acceptance test (criterion 2).
    switch (family) {
        case Family::odenet: return {56, 120, 208};
        case Family::dsodenet: return {64, 112, 256};
        case Family::resnet: return {88, 184, 376};
    }
    throw ConfigError("unknown family enum value");
}

ModelConfig preset_config(Family family, int depth) {
    ModelConfig c;
    c.family = family;
    const auto widths = preset_widths(family);
    c.stem_channels = widths[0];
    c.stage_channels = widths;
    c.iterations = depth_to_iterations(depth).iterations;
    c.kernel_size = 3;
    c.num_classes = 10;
    c.norm_groups = 8;
    c.euler_mode = EulerMode::interval_step;
    validate_config(c);
    return c;
}

} // namespace fode
