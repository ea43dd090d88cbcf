#include <doctest.h>

#include <cmath>

#include "fode/model.hpp"
#include "fode/rng.hpp"
#include "testutil.hpp"

using namespace fode;
using testutil::bitwise_equal;
using testutil::random_tensor;

namespace {

ModelConfig tiny_config(Family family, int iterations) {
    ModelConfig c;
    c.family = family;
    c.stem_channels = 8;
    c.stage_channels = {8, 16, 32};
    c.iterations = iterations;
    c.num_classes = 4;
    c.norm_groups = 4;
    return c;
}

bool params_bitwise_equal(const ParameterSet& a, const ParameterSet& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].name != b[i].name) return false;
        if (!bitwise_equal(a[i].tensor.data(), b[i].tensor.data())) return false;
    }
    return true;
}

// A standard block with the residual path forced to zero via the final norm
// gamma, so relu(x + f(x)) == relu(x).
BlockParams zero_residual_block(int width, int groups, Rng& rng) {
    BlockParams bp;
    bp.kernel = 3;
    bp.groups = groups;
    bp.conv1_w = random_tensor({width, width, 3, 3}, rng);
    bp.norm1_gamma = Tensor::full({width}, 1.0f);
    bp.norm1_beta = Tensor::zeros({width});
    bp.conv2_w = random_tensor({width, width, 3, 3}, rng);
    bp.norm2_gamma = Tensor::zeros({width});
    bp.norm2_beta = Tensor::zeros({width});
    return bp;
}

BlockParams random_block(int width, int groups, Rng& rng, bool separable = false) {
    BlockParams bp;
    bp.kernel = 3;
    bp.groups = groups;
    bp.separable = separable;
    if (separable) {
        bp.conv1_w = random_tensor({width, 1, 3, 3}, rng);
        bp.conv1_pw = random_tensor({width, width, 1, 1}, rng);
        bp.conv2_w = random_tensor({width, 1, 3, 3}, rng);
        bp.conv2_pw = random_tensor({width, width, 1, 1}, rng);
    } else {
        bp.conv1_w = random_tensor({width, width, 3, 3}, rng);
        bp.conv2_w = random_tensor({width, width, 3, 3}, rng);
    }
    bp.norm1_gamma = random_tensor({width}, rng, 0.5f, 1.5f);
    bp.norm1_beta = random_tensor({width}, rng, -0.2f, 0.2f);
    bp.norm2_gamma = random_tensor({width}, rng, 0.5f, 1.5f);
    bp.norm2_beta = random_tensor({width}, rng, -0.2f, 0.2f);
    return bp;
}

} // namespace

TEST_SUITE_BEGIN("models");

TEST_CASE("build_model is deterministic in the seed") {
    const ModelConfig c = tiny_config(Family::odenet, 3);
    Model a = build_model(c, 99);
    Model b = build_model(c, 99);
    CHECK(params_bitwise_equal(a.params(), b.params()));
    Model other = build_model(c, 100);
    CHECK_FALSE(params_bitwise_equal(a.params(), other.params()));
}

TEST_CASE("ode-family parameter sets are congruent across iteration counts") {
    for (Family family : {Family::odenet, Family::dsodenet}) {
        CAPTURE(family_name(family));
        ModelConfig c5 = tiny_config(family, 5);
        ModelConfig c16 = tiny_config(family, 16);
        Model a = build_model(c5, 1);
        Model b = build_model(c16, 1);
        CHECK(ParameterSet::congruent(a.params(), b.params()));
        CHECK(a.params().total_elements() == b.params().total_elements());
    }
}

TEST_CASE("resnet parameter count grows by exactly one block set per stage per C") {
    const ParameterCount c1 = count_parameters(tiny_config(Family::resnet, 1));
    const ParameterCount c2 = count_parameters(tiny_config(Family::resnet, 2));
    // One extra block per stage: 2 convs (18 w^2) + 2 norms (4w) at each width.
    long expected_delta = 0;
    for (int w : {8, 16, 32}) expected_delta += 18L * w * w + 4L * w;
    CHECK(c2.total - c1.total == expected_delta);
}

TEST_CASE("res_block_forward") {
    Rng rng(31);
    Tensor x = random_tensor({2, 8, 5, 5}, rng);
    SUBCASE("zeroed residual path reduces to relu(x)") {
        BlockParams bp = zero_residual_block(8, 4, rng);
        Tensor y = res_block_forward(x, bp);
        Tensor want = relu(x);
        CHECK(bitwise_equal(y.data(), want.data()));
    }
    SUBCASE("output shape equals input shape") {
        BlockParams bp = random_block(8, 4, rng);
        CHECK(res_block_forward(x, bp).shape() == x.shape());
    }
    SUBCASE("bitwise equal to ode_block_forward with C=1, unit_step") {
        BlockParams bp = random_block(8, 4, rng);
        Tensor a = res_block_forward(x, bp);
        Tensor b = ode_block_forward(x, bp, 1, EulerMode::unit_step);
        CHECK(bitwise_equal(a.data(), b.data()));
    }
    SUBCASE("channel mismatch errors") {
        BlockParams bp = random_block(16, 4, rng);
        CHECK_THROWS_AS(res_block_forward(x, bp), ShapeError);
    }
}

TEST_CASE("ode_block_forward") {
    Rng rng(37);
    SUBCASE("zero residual map is a fixed point for any C") {
        // Non-negative input: block inputs in the network are relu outputs.
        Tensor x = random_tensor({1, 8, 5, 5}, rng, 0.0f, 1.0f);
        BlockParams bp = zero_residual_block(8, 4, rng);
        for (int c : {1, 2, 5, 9}) {
            Tensor y = ode_block_forward(x, bp, c, EulerMode::interval_step);
            CHECK(bitwise_equal(y.data(), x.data()));
        }
    }
    SUBCASE("interval_step Euler on the linear stub x' = x") {
        Tensor x = random_tensor({4}, rng, 0.5f, 1.5f);
        auto identity = [](const Tensor& v) { return v; };
        Tensor c1 = iterate_residual(x, 1, EulerMode::interval_step, identity);
        Tensor c2 = iterate_residual(x, 2, EulerMode::interval_step, identity);
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(c1.data()[i] == doctest::Approx(2.0f * x.data()[i]));
            CHECK(c2.data()[i] == doctest::Approx(2.25f * x.data()[i]));
        }
        Tensor c64 = iterate_residual(x, 64, EulerMode::interval_step, identity);
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(c64.data()[i] ==
                  doctest::Approx((float)std::exp(1.0) * x.data()[i]).epsilon(0.03));
        }
    }
    SUBCASE("first-order convergence: error vs e*x halves as C doubles") {
        Tensor x = Tensor::from({1}, {1.0f});
        auto identity = [](const Tensor& v) { return v; };
        const double e = std::exp(1.0);
        double prev_err = 0.0;
        for (int c : {4, 8, 16, 32}) {
            const double err =
                e - (double)iterate_residual(x, c, EulerMode::interval_step, identity).item();
            if (prev_err > 0.0) {
                const double factor = prev_err / err;
                CHECK(factor > 1.6);
                CHECK(factor < 2.4);
            }
            prev_err = err;
        }
    }
    SUBCASE("unit_step C=3 equals manual three-fold shared-weight composition") {
        Tensor x = random_tensor({1, 8, 5, 5}, rng);
        BlockParams bp = random_block(8, 4, rng);
        Tensor manual = res_block_forward(res_block_forward(res_block_forward(x, bp), bp), bp);
        Tensor iterated = ode_block_forward(x, bp, 3, EulerMode::unit_step);
        CHECK(bitwise_equal(manual.data(), iterated.data()));
    }
    SUBCASE("C < 1 errors") {
        Tensor x = random_tensor({1, 8, 5, 5}, rng);
        BlockParams bp = random_block(8, 4, rng);
        CHECK_THROWS_AS(ode_block_forward(x, bp, 0, EulerMode::unit_step), ConfigError);
    }
}

TEST_CASE("ds_block_forward") {
    Rng rng(41);
    SUBCASE("zero pointwise weights make the block an identity for any C") {
        Tensor x = random_tensor({1, 8, 5, 5}, rng, 0.0f, 1.0f);
        BlockParams bp = random_block(8, 4, rng, /*separable=*/true);
        bp.conv1_pw = Tensor::zeros({8, 8, 1, 1});
        bp.conv2_pw = Tensor::zeros({8, 8, 1, 1});
        // with the pointwise outputs zeroed, the final norm contributes only
        // its beta; zero it (the builder's init) so f is exactly 0
        bp.norm2_beta = Tensor::zeros({8});
        for (int c : {1, 3, 7}) {
            Tensor y = ds_block_forward(x, bp, c, EulerMode::interval_step);
            CHECK(bitwise_equal(y.data(), x.data()));
        }
    }
    SUBCASE("output shape equals input shape") {
        Tensor x = random_tensor({3, 8, 5, 5}, rng);
        BlockParams bp = random_block(8, 4, rng, true);
        CHECK(ds_block_forward(x, bp, 2, EulerMode::interval_step).shape() == x.shape());
    }
    SUBCASE("separable layer parameter arithmetic") {
        // N = M = 8, 3x3: depthwise 8*9 + pointwise 8*8 = 136 vs standard 576.
        CHECK(8 * 9 + 8 * 8 == 136);
        CHECK(8 * 8 * 9 == 576);
        // N = 8, M = 16: depthwise 72 + pointwise 128 = 200 (excl. bias).
        CHECK(8 * 9 == 72);
        CHECK(8 * 16 == 128);
        ModelConfig ds = tiny_config(Family::dsodenet, 1);
        const ParameterCount count = count_parameters(ds);
        long dw1 = -1, pw1 = -1;
        for (const auto& [name, n] : count.entries) {
            if (name == "stage1.conv1.dw.weight") dw1 = n;
            if (name == "stage1.conv1.pw.weight") pw1 = n;
        }
        CHECK(dw1 == 8 * 9);
        CHECK(pw1 == 8 * 8);
    }
    SUBCASE("rejects non-separable parameters") {
        Tensor x = random_tensor({1, 8, 5, 5}, rng);
        BlockParams bp = random_block(8, 4, rng, false);
        CHECK_THROWS_AS(ds_block_forward(x, bp, 1, EulerMode::interval_step), ConfigError);
    }
}

TEST_CASE("model forward") {
    Rng rng(43);
    const ModelConfig c = tiny_config(Family::odenet, 4);
    Model model = build_model(c, 5);
    Tensor x = random_tensor({7, 3, 8, 8}, rng);

    SUBCASE("batch dimension is preserved") {
        Tensor logits = model.forward(x);
        CHECK(logits.shape() == Shape{7, 4});
    }
    SUBCASE("override equal to the config C gives identical logits") {
        Tensor a = model.forward(x);
        Tensor b = model.forward(x, 4);
        CHECK(bitwise_equal(a.data(), b.data()));
    }
    SUBCASE("override at other C values produces valid logits") {
        for (int c_eval : {1, 2, 8}) {
            Tensor logits = model.forward(x, c_eval);
            CHECK(logits.shape() == Shape{7, 4});
        }
    }
    SUBCASE("resnet rejects override") {
        Model resnet = build_model(tiny_config(Family::resnet, 2), 5);
        CHECK_THROWS_WITH_AS(resnet.forward(x, 4),
                             doctest::Contains("stacked blocks are not re-iterable"), ConfigError);
    }
}

TEST_CASE("count_parameters matches built models") {
    for (Family family : {Family::resnet, Family::odenet, Family::dsodenet}) {
        for (int c : {1, 2, 5, 7, 16}) {
            CAPTURE(family_name(family));
            CAPTURE(c);
            const ModelConfig config = tiny_config(family, c);
            const ParameterCount count = count_parameters(config);
            Model model = build_model(config, 0);
            CHECK(count.total == model.params().total_elements());
            REQUIRE(count.entries.size() == model.params().size());
            for (std::size_t i = 0; i < count.entries.size(); ++i) {
                CHECK(count.entries[i].first == model.params()[i].name);
                CHECK(count.entries[i].second == model.params()[i].tensor.numel());
            }
        }
    }
}

TEST_CASE("family size ordering at equal widths: ds < ode < resnet for C >= 2") {
    Rng rng(51);
    for (int trial = 0; trial < 8; ++trial) {
        const int w = 8 * (1 + (int)rng.uniform_index(4));
        const int c = 2 + (int)rng.uniform_index(6);
        ModelConfig base;
        base.stem_channels = w;
        base.stage_channels = {w, 2 * w, 4 * w};
        base.iterations = c;
        base.num_classes = 10;
        base.norm_groups = 4;
        ModelConfig ode = base;
        ode.family = Family::odenet;
        ModelConfig ds = base;
        ds.family = Family::dsodenet;
        ModelConfig rn = base;
        rn.family = Family::resnet;
        const long n_ds = count_parameters(ds).total;
        const long n_ode = count_parameters(ode).total;
        const long n_rn = count_parameters(rn).total;
        CHECK(n_ds < n_ode);
        CHECK(n_ode < n_rn);
    }
}

TEST_CASE("depth_to_iterations mapping") {
    CHECK(depth_to_iterations(102).iterations == 16);
    CHECK(depth_to_iterations(102).effective_n == 102);
    CHECK(depth_to_iterations(12).iterations == 1);
    CHECK(depth_to_iterations(12).effective_n == 12);
    // Named presets 34/50/101 -> C = 5/7/16.
    CHECK(depth_to_iterations(34).iterations == 5);
    CHECK(depth_to_iterations(50).iterations == 7);
    CHECK(depth_to_iterations(50).effective_n == 48);
    CHECK(depth_to_iterations(101).iterations == 16);
    // Ties round up: (15-6)/6 = 1.5 -> 2.
    CHECK(depth_to_iterations(15).iterations == 2);
    CHECK_THROWS_AS(depth_to_iterations(11), ConfigError);
}

TEST_CASE("config validation names the offending field") {
    ModelConfig c = tiny_config(Family::odenet, 1);
    c.stem_channels = 12;
    CHECK_THROWS_WITH_AS(validate_config(c), doctest::Contains("stem_channels"), ConfigError);
    c = tiny_config(Family::odenet, 1);
    c.norm_groups = 3;
    CHECK_THROWS_WITH_AS(validate_config(c), doctest::Contains("norm_groups"), ConfigError);
    c = tiny_config(Family::odenet, 0);
    CHECK_THROWS_WITH_AS(validate_config(c), doctest::Contains("iterations"), ConfigError);
    c = tiny_config(Family::odenet, 1);
    c.kernel_size = 4;
    CHECK_THROWS_WITH_AS(validate_config(c), doctest::Contains("kernel_size"), ConfigError);
}

TEST_CASE("preset configs expose the depth presets") {
    const ModelConfig ode34 = preset_config(Family::odenet, 34);
    const ModelConfig ode50 = preset_config(Family::odenet, 50);
    const ModelConfig ode101 = preset_config(Family::odenet, 101);
    CHECK(ode34.iterations == 5);
    CHECK(ode50.iterations == 7);
    CHECK(ode101.iterations == 16);
    CHECK(count_parameters(ode34).total == count_parameters(ode101).total);
}

TEST_SUITE_END();
