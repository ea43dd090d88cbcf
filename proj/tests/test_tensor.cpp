#include <doctest.h>

#include <cmath>

#include "fode/ops.hpp"
#include "fode/params.hpp"
#include "fode/rng.hpp"
#include "fode/tensor.hpp"
#include "testutil.hpp"

using namespace fode;
using testutil::bitwise_equal;
using testutil::check_close;
using testutil::check_gradients;
using testutil::random_tensor;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("conv2d identity 1x1 kernel passes input through") {
    Tensor x = Tensor::full({1, 1, 3, 3}, 1.0f);
    Tensor w = Tensor::from({1, 1, 1, 1}, {1.0f});
    Tensor y = conv2d(x, w);
    check_close(y.data(), x.data(), 0.0f);
}

TEST_CASE("conv2d hand-computed 2x2 diagonal kernel") {
    Tensor x = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor w = Tensor::from({1, 1, 2, 2}, {1, 0, 0, 1});
    Tensor y = conv2d(x, w);
    REQUIRE(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.item() == doctest::Approx(5.0f));
}

TEST_CASE("conv2d matches the naive six-loop oracle") {
    Rng rng(42);
    Tensor x = random_tensor({2, 3, 8, 8}, rng);
    Tensor w = random_tensor({4, 3, 3, 3}, rng);
    Tensor b = random_tensor({4}, rng);
    Tensor y = conv2d(x, w, b, /*stride=*/2, /*padding=*/1);
    const std::vector<float> bias_vec(b.data().begin(), b.data().end());
    auto want = testutil::naive_conv2d({x.data().begin(), x.data().end()}, 2, 3, 8, 8,
                                       {w.data().begin(), w.data().end()}, 4, 3, 3, &bias_vec, 2, 1,
                                       y.dim(2), y.dim(3));
    check_close(y.data(), want, 1e-5f);
}

TEST_CASE("conv2d shape errors name the offending dimension") {
    Tensor x = Tensor::zeros({1, 3, 4, 4});
    Tensor w = Tensor::zeros({2, 4, 3, 3});
    CHECK_THROWS_WITH_AS(conv2d(x, w), doctest::Contains("does not match input channels"),
                         ShapeError);
    Tensor w2 = Tensor::zeros({2, 3, 7, 7});
    CHECK_THROWS_WITH_AS(conv2d(x, w2), doctest::Contains("not a positive integer"), ShapeError);
}

TEST_CASE("depthwise_conv2d identity kernels and channel independence") {
    Rng rng(7);
    Tensor x = random_tensor({1, 2, 4, 4}, rng);
    SUBCASE("identity 1x1 kernels pass through") {
        Tensor w = Tensor::from({2, 1, 1, 1}, {1.0f, 1.0f});
        Tensor y = depthwise_conv2d(x, w);
        check_close(y.data(), x.data(), 0.0f);
    }
    SUBCASE("zero kernel on channel 0 leaves channel 1 alone") {
        Tensor w = Tensor::from({2, 1, 1, 1}, {0.0f, 1.0f});
        Tensor y = depthwise_conv2d(x, w);
        for (int i = 0; i < 16; ++i) {
            CHECK(y.data()[(std::size_t)i] == 0.0f);
            CHECK(y.data()[(std::size_t)(16 + i)] == x.data()[(std::size_t)(16 + i)]);
        }
    }
}

TEST_CASE("depthwise_conv2d matches the per-channel loop oracle") {
    Rng rng(11);
    Tensor x = random_tensor({2, 3, 6, 6}, rng);
    Tensor w = random_tensor({3, 1, 3, 3}, rng);
    Tensor y = depthwise_conv2d(x, w, 2, 1);
    auto want = testutil::naive_depthwise({x.data().begin(), x.data().end()}, 2, 3, 6, 6,
                                          {w.data().begin(), w.data().end()}, 3, 3, 2, 1, y.dim(2),
                                          y.dim(3));
    check_close(y.data(), want, 1e-5f);
}

TEST_CASE("pointwise_conv2d identity and channel sum") {
    Rng rng(3);
    Tensor x = random_tensor({1, 2, 3, 3}, rng);
    SUBCASE("identity channel matrix") {
        Tensor w = Tensor::from({2, 2, 1, 1}, {1, 0, 0, 1});
        check_close(pointwise_conv2d(x, w).data(), x.data(), 0.0f);
    }
    SUBCASE("all-ones row sums channels") {
        Tensor w = Tensor::from({1, 2, 1, 1}, {1, 1});
        Tensor y = pointwise_conv2d(x, w);
        for (int i = 0; i < 9; ++i) {
            CHECK(y.data()[(std::size_t)i] ==
                  doctest::Approx(x.data()[(std::size_t)i] + x.data()[(std::size_t)(9 + i)]));
        }
    }
}

TEST_CASE("pointwise_conv2d equals conv2d with a 1x1 kernel bitwise") {
    Rng rng(19);
    for (int trial = 0; trial < 10; ++trial) {
        const int c = 1 + (int)rng.uniform_index(5);
        const int m = 1 + (int)rng.uniform_index(5);
        const int h = 2 + (int)rng.uniform_index(5);
        Tensor x = random_tensor({2, c, h, h}, rng);
        Tensor w = random_tensor({m, c, 1, 1}, rng);
        Tensor a = pointwise_conv2d(x, w);
        Tensor b = conv2d(x, w, std::nullopt, 1, 0);
        CHECK(bitwise_equal(a.data(), b.data()));
    }
}

TEST_CASE("depthwise+pointwise composition keeps conv2d output shape") {
    Rng rng(23);
    Tensor x = random_tensor({2, 4, 7, 7}, rng);
    Tensor dw = random_tensor({4, 1, 3, 3}, rng);
    Tensor pw = random_tensor({6, 4, 1, 1}, rng);
    Tensor full_w = random_tensor({6, 4, 3, 3}, rng);
    for (int stride : {1, 2}) {
        Tensor separable = pointwise_conv2d(depthwise_conv2d(x, dw, stride, 1), pw);
        Tensor standard = conv2d(x, full_w, std::nullopt, stride, 1);
        CHECK(separable.shape() == standard.shape());
    }
}

TEST_CASE("group_norm basics") {
    SUBCASE("constant input normalizes to zero") {
        Tensor x = Tensor::full({2, 4, 3, 3}, 3.5f);
        Tensor gamma = Tensor::full({4}, 1.0f);
        Tensor beta = Tensor::zeros({4});
        Tensor y = group_norm(x, 2, gamma, beta);
        for (float v : y.data()) CHECK(v == doctest::Approx(0.0f));
    }
    SUBCASE("gamma 0, beta 7 pins output at 7") {
        Rng rng(5);
        Tensor x = random_tensor({1, 4, 2, 2}, rng);
        Tensor y = group_norm(x, 2, Tensor::zeros({4}), Tensor::full({4}, 7.0f));
        for (float v : y.data()) CHECK(v == doctest::Approx(7.0f));
    }
    SUBCASE("per-group moments are ~0/1 before affine") {
        Rng rng(9);
        const int b = 2, c = 6, h = 5, groups = 3, cg = c / groups;
        Tensor x = random_tensor({b, c, h, h}, rng, -2.0f, 2.0f);
        Tensor y = group_norm(x, groups, Tensor::full({c}, 1.0f), Tensor::zeros({c}));
        const long hw = h * h;
        for (int n = 0; n < b; ++n) {
            for (int g = 0; g < groups; ++g) {
                double mean = 0.0, var = 0.0;
                const long base = ((long)n * c + (long)g * cg) * hw;
                const long m = cg * hw;
                for (long i = 0; i < m; ++i) mean += y.data()[(std::size_t)(base + i)];
                mean /= (double)m;
                for (long i = 0; i < m; ++i) {
                    const double d = y.data()[(std::size_t)(base + i)] - mean;
                    var += d * d;
                }
                var /= (double)m;
                CHECK(std::fabs(mean) < 1e-4);
                CHECK(std::fabs(var - 1.0) < 1e-3);
            }
        }
    }
    SUBCASE("channel/groups mismatch errors") {
        Tensor x = Tensor::zeros({1, 5, 2, 2});
        CHECK_THROWS_AS(group_norm(x, 2, Tensor::full({5}, 1.0f), Tensor::zeros({5})), ShapeError);
    }
}

TEST_CASE("relu, global pool, linear") {
    Tensor r = relu(Tensor::from({3}, {-1, 0, 2}));
    CHECK(r.data()[0] == 0.0f);
    CHECK(r.data()[1] == 0.0f);
    CHECK(r.data()[2] == 2.0f);

    Tensor pooled = avg_pool_global(Tensor::full({2, 3, 4, 4}, 5.0f));
    REQUIRE(pooled.shape() == Shape{2, 3});
    for (float v : pooled.data()) CHECK(v == doctest::Approx(5.0f));

    Rng rng(13);
    Tensor x = random_tensor({3, 5}, rng);
    Tensor w = random_tensor({4, 5}, rng);
    Tensor b = random_tensor({4}, rng);
    auto want = testutil::naive_linear({x.data().begin(), x.data().end()}, 3, 5,
                                       {w.data().begin(), w.data().end()}, 4,
                                       {b.data().begin(), b.data().end()});
    check_close(linear(x, w, b).data(), want, 1e-5f);

    CHECK_THROWS_AS(linear(x, Tensor::zeros({4, 6}), b), ShapeError);
    CHECK_THROWS_AS(add(Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
}

TEST_CASE("softmax cross entropy values") {
    SUBCASE("uniform logits over 4 classes give ln 4") {
        Tensor logits = Tensor::zeros({2, 4});
        std::vector<int> labels{1, 3};
        CHECK(softmax_cross_entropy(logits, labels).item() == doctest::Approx(std::log(4.0f)));
    }
    SUBCASE("huge correct-class margin drives loss to zero") {
        Tensor logits = Tensor::from({1, 3}, {50.0f, 0.0f, 0.0f});
        std::vector<int> labels{0};
        CHECK(softmax_cross_entropy(logits, labels).item() < 1e-6f);
    }
    SUBCASE("matches a naive unstabilized oracle at small magnitudes") {
        Rng rng(17);
        Tensor logits = random_tensor({4, 6}, rng);
        std::vector<int> labels{0, 2, 5, 3};
        double want = 0.0;
        for (int n = 0; n < 4; ++n) {
            double denom = 0.0;
            for (int c = 0; c < 6; ++c) {
                denom += std::exp((double)logits.data()[(std::size_t)(n * 6 + c)]);
            }
            want -= std::log(
                std::exp((double)logits.data()[(std::size_t)(n * 6 + labels[(std::size_t)n])]) /
                denom);
        }
        want /= 4.0;
        CHECK(softmax_cross_entropy(logits, labels).item() == doctest::Approx(want).epsilon(1e-5));
    }
    SUBCASE("out-of-range label errors") {
        Tensor logits = Tensor::zeros({1, 3});
        std::vector<int> labels{3};
        CHECK_THROWS_AS(softmax_cross_entropy(logits, labels), ShapeError);
    }
}

TEST_CASE("backward basics") {
    SUBCASE("loss = sum(w*w) gives 2w") {
        Tensor w = Tensor::from({2}, {1, 2}, /*requires_grad=*/true);
        backward(sum(mul(w, w)));
        CHECK(w.grad()[0] == doctest::Approx(2.0f));
        CHECK(w.grad()[1] == doctest::Approx(4.0f));
    }
    SUBCASE("parameter off the path keeps zero grad") {
        Tensor w = Tensor::from({2}, {1, 2}, true);
        Tensor unused = Tensor::from({2}, {5, 5}, true);
        backward(sum(w));
        CHECK(unused.grad()[0] == 0.0f);
        CHECK(unused.grad()[1] == 0.0f);
    }
    SUBCASE("backward on a non-scalar errors") {
        Tensor w = Tensor::from({2}, {1, 2}, true);
        CHECK_THROWS_AS(backward(mul(w, w)), NumericsError);
    }
    SUBCASE("grads accumulate across backward calls until zeroed") {
        Tensor w = Tensor::from({1}, {3}, true);
        Tensor loss = sum(mul(w, w));
        backward(loss);
        backward(loss);
        CHECK(w.grad()[0] == doctest::Approx(12.0f));
        w.zero_grad();
        CHECK(w.grad()[0] == 0.0f);
    }
    SUBCASE("mutating a tape-recorded tensor is rejected") {
        Tensor w = Tensor::from({2}, {1, 2}, true);
        Tensor y = mul(w, w);
        CHECK_THROWS_AS(y.mut_data(), Error);
    }
}

TEST_CASE("finite-difference gradient checks per operator") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        CAPTURE(seed);
        Rng rng(seed * 1031);

        SUBCASE("conv2d") {
            Tensor x = random_tensor({2, 2, 4, 4}, rng, -1, 1, true);
            Tensor w = random_tensor({3, 2, 3, 3}, rng, -1, 1, true);
            Tensor b = random_tensor({3}, rng, -1, 1, true);
            Tensor proj = random_tensor({2, 3, 2, 2}, rng);
            auto loss = [&] { return sum(mul(conv2d(x, w, b, 2, 1), proj)); };
            check_gradients(loss, {x, w, b});
        }
        SUBCASE("depthwise") {
            Tensor x = random_tensor({2, 3, 4, 4}, rng, -1, 1, true);
            Tensor w = random_tensor({3, 1, 3, 3}, rng, -1, 1, true);
            Tensor proj = random_tensor({2, 3, 4, 4}, rng);
            auto loss = [&] { return sum(mul(depthwise_conv2d(x, w, 1, 1), proj)); };
            check_gradients(loss, {x, w});
        }
        SUBCASE("pointwise") {
            Tensor x = random_tensor({2, 3, 3, 3}, rng, -1, 1, true);
            Tensor w = random_tensor({4, 3, 1, 1}, rng, -1, 1, true);
            Tensor proj = random_tensor({2, 4, 3, 3}, rng);
            auto loss = [&] { return sum(mul(pointwise_conv2d(x, w), proj)); };
            check_gradients(loss, {x, w});
        }
        SUBCASE("group_norm") {
            Tensor x = random_tensor({2, 4, 3, 3}, rng, -2, 2, true);
            Tensor gamma = random_tensor({4}, rng, 0.5f, 1.5f, true);
            Tensor beta = random_tensor({4}, rng, -0.5f, 0.5f, true);
            Tensor proj = random_tensor({2, 4, 3, 3}, rng);
            auto loss = [&] { return sum(mul(group_norm(x, 2, gamma, beta), proj)); };
            check_gradients(loss, {x, gamma, beta});
        }
        SUBCASE("relu") {
            // operands offset away from 0 so the finite step never crosses a kink
            Tensor x = random_tensor({3, 4}, rng, 0.1f, 1.0f, true);
            Tensor s = random_tensor({3, 4}, rng, -1.0f, -0.1f, true);
            Tensor proj = random_tensor({3, 4}, rng);
            auto loss = [&] { return sum(mul(relu(add(x, s)), proj)); };
            check_gradients(loss, {x, s}, 1e-3f, 1e-2f, 2e-2f);
        }
        SUBCASE("avg_pool_global and linear") {
            Tensor x = random_tensor({2, 3, 3, 3}, rng, -1, 1, true);
            Tensor w = random_tensor({4, 3}, rng, -1, 1, true);
            Tensor b = random_tensor({4}, rng, -1, 1, true);
            Tensor proj = random_tensor({2, 4}, rng);
            auto loss = [&] { return sum(mul(linear(avg_pool_global(x), w, b), proj)); };
            check_gradients(loss, {x, w, b});
        }
        SUBCASE("scale and add") {
            Tensor x = random_tensor({5}, rng, -1, 1, true);
            Tensor y = random_tensor({5}, rng, -1, 1, true);
            Tensor proj = random_tensor({5}, rng);
            auto loss = [&] { return sum(mul(add(scale(x, 0.37f), y), proj)); };
            check_gradients(loss, {x, y});
        }
        SUBCASE("softmax cross entropy") {
            Tensor logits = random_tensor({3, 5}, rng, -1, 1, true);
            std::vector<int> labels{(int)rng.uniform_index(5), (int)rng.uniform_index(5),
                                    (int)rng.uniform_index(5)};
            auto loss = [&] { return softmax_cross_entropy(logits, labels); };
            check_gradients(loss, {logits});
        }
        SUBCASE("soft-target cross entropy") {
            Tensor logits = random_tensor({3, 4}, rng, -1, 1, true);
            std::vector<float> t((std::size_t)12);
            for (int n = 0; n < 3; ++n) {
                float total = 0.0f;
                for (int c = 0; c < 4; ++c) {
                    t[(std::size_t)(n * 4 + c)] = rng.uniform_f(0.05f, 1.0f);
                    total += t[(std::size_t)(n * 4 + c)];
                }
                for (int c = 0; c < 4; ++c) t[(std::size_t)(n * 4 + c)] /= total;
            }
            Tensor targets = Tensor::from({3, 4}, std::move(t));
            auto loss = [&] { return softmax_cross_entropy_soft(scale(logits, 0.5f), targets); };
            check_gradients(loss, {logits});
        }
    }
}

TEST_CASE("sgd_step semantics") {
    SUBCASE("eta 0 leaves parameters unchanged and zeroes grads") {
        ParameterSet p;
        p.add("w", Tensor::from({2}, {1, 2}, true));
        backward(sum(mul(p.get("w"), p.get("w"))));
        sgd_step(p, 0.0f);
        CHECK(p.get("w").data()[0] == 1.0f);
        CHECK(p.get("w").data()[1] == 2.0f);
        CHECK(p.get("w").grad()[0] == 0.0f);
    }
    SUBCASE("direct formula: w=1, g=0.5, eta=0.1 -> 0.95") {
        ParameterSet p;
        p.add("w", Tensor::from({1}, {1.0f}, true));
        backward(scale(sum(p.get("w")), 0.5f));
        sgd_step(p, 0.1f);
        CHECK(p.get("w").data()[0] == doctest::Approx(0.95f));
    }
    SUBCASE("two steps on a quadratic strictly decrease the loss") {
        ParameterSet p;
        p.add("w", Tensor::from({2}, {1.5f, -2.0f}, true));
        auto loss_value = [&] { return sum(mul(p.get("w"), p.get("w"))).item(); };
        const float l0 = loss_value();
        for (int step = 0; step < 2; ++step) {
            Tensor loss = sum(mul(p.get("w"), p.get("w")));
            p.zero_grads();
            backward(loss);
            sgd_step(p, 0.1f);
        }
        CHECK(loss_value() < l0);
        // eta=0.1 on sum(w^2): w <- 0.8 w per step
        CHECK(p.get("w").data()[0] == doctest::Approx(1.5f * 0.8f * 0.8f));
    }
}

TEST_CASE("determinism: identical seeds give bit-identical forward and grads") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        Tensor x = random_tensor({2, 3, 5, 5}, rng, -1, 1, true);
        Tensor w = random_tensor({4, 3, 3, 3}, rng, -1, 1, true);
        Tensor y = conv2d(x, w, std::nullopt, 1, 1);
        Tensor proj = random_tensor(y.shape(), rng);
        backward(sum(mul(relu(y), proj)));
        std::vector<float> out(y.data().begin(), y.data().end());
        out.insert(out.end(), w.grad().begin(), w.grad().end());
        return out;
    };
    auto a = run(123);
    auto b = run(123);
    CHECK(bitwise_equal(a, b));
}

TEST_CASE("non-finite forward results raise NumericsError") {
    Tensor big = Tensor::full({1, 4}, 3e38f);
    CHECK_THROWS_AS(add(big, big), NumericsError);
}

TEST_SUITE_END();
