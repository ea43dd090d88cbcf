#pragma once

// Shared test helpers: independent reference implementations (naive loop
// oracles) and a central-difference gradient checker. Everything here stays
// deliberately separate from the library's own compute paths.

#include <cmath>
#include <functional>
#include <vector>

#include <doctest.h>

#include "fode/rng.hpp"
#include "fode/tensor.hpp"

namespace testutil {

inline fode::Tensor random_tensor(fode::Shape shape, fode::Rng& rng, float lo = -1.0f,
                                  float hi = 1.0f, bool requires_grad = false) {
    std::vector<float> data((std::size_t)fode::shape_numel(shape));
    for (auto& v : data) v = rng.uniform_f(lo, hi);
    return fode::Tensor::from(std::move(shape), std::move(data), requires_grad);
}

// Plain six-loop cross-correlation, no tricks.
inline std::vector<float> naive_conv2d(const std::vector<float>& in, int B, int Cin, int H, int W,
                                       const std::vector<float>& w, int Cout, int Kh, int Kw,
                                       const std::vector<float>* bias, int stride, int padding,
                                       int OH, int OW) {
    std::vector<float> out((std::size_t)B * Cout * OH * OW, 0.0f);
    for (int b = 0; b < B; ++b)
        for (int co = 0; co < Cout; ++co)
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow) {
                    float acc = bias ? (*bias)[(std::size_t)co] : 0.0f;
                    for (int ci = 0; ci < Cin; ++ci)
                        for (int kh = 0; kh < Kh; ++kh)
                            for (int kw = 0; kw < Kw; ++kw) {
                                const int ih = oh * stride - padding + kh;
                                const int iw = ow * stride - padding + kw;
                                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                                acc += in[(std::size_t)(((b * Cin + ci) * H + ih) * W + iw)] *
                                       w[(std::size_t)(((co * Cin + ci) * Kh + kh) * Kw + kw)];
                            }
                    out[(std::size_t)(((b * Cout + co) * OH + oh) * OW + ow)] = acc;
                }
    return out;
}

// Per-channel spatial convolution reference.
inline std::vector<float> naive_depthwise(const std::vector<float>& in, int B, int C, int H, int W,
                                          const std::vector<float>& w, int Kh, int Kw, int stride,
                                          int padding, int OH, int OW) {
    std::vector<float> out((std::size_t)B * C * OH * OW, 0.0f);
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow) {
                    float acc = 0.0f;
                    for (int kh = 0; kh < Kh; ++kh)
                        for (int kw = 0; kw < Kw; ++kw) {
                            const int ih = oh * stride - padding + kh;
                            const int iw = ow * stride - padding + kw;
                            if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                            acc += in[(std::size_t)(((b * C + c) * H + ih) * W + iw)] *
                                   w[(std::size_t)((c * Kh + kh) * Kw + kw)];
                        }
                    out[(std::size_t)(((b * C + c) * OH + oh) * OW + ow)] = acc;
                }
    return out;
}

// Triple-loop x W^T + b.
inline std::vector<float> naive_linear(const std::vector<float>& x, int B, int F,
                                       const std::vector<float>& w, int O,
                                       const std::vector<float>& bias) {
    std::vector<float> out((std::size_t)B * O, 0.0f);
    for (int b = 0; b < B; ++b)
        for (int o = 0; o < O; ++o) {
            float acc = bias[(std::size_t)o];
            for (int f = 0; f < F; ++f)
                acc += x[(std::size_t)(b * F + f)] * w[(std::size_t)(o * F + f)];
            out[(std::size_t)(b * O + o)] = acc;
        }
    return out;
}

inline void check_close(std::span<const float> got, std::span<const float> want,
                        float tol = 1e-5f) {
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
        const float diff = std::fabs(got[i] - want[i]);
        const float scale = std::max({1.0f, std::fabs(got[i]), std::fabs(want[i])});
        if (diff > tol * scale) {
            CAPTURE(i);
            CAPTURE(got[i]);
            CAPTURE(want[i]);
            REQUIRE(diff <= tol * scale);
        }
    }
}

inline bool bitwise_equal(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::bit_cast<std::uint32_t>(a[i]) != std::bit_cast<std::uint32_t>(b[i])) return false;
    }
    return true;
}

// Central finite differences in f32 against the analytic gradient of a
// scalar-valued function of leaf tensors. h = 1e-3; relative tolerance 1e-2
// with a small absolute floor for near-zero entries.
inline void check_gradients(const std::function<fode::Tensor()>& loss_fn,
                            std::vector<fode::Tensor> inputs, float h = 1e-3f,
                            float rel_tol = 1e-2f, float abs_tol = 5e-3f) {
    fode::Tensor loss = loss_fn();
    for (auto& t : inputs) t.zero_grad();
    fode::backward(loss);

    for (auto& t : inputs) {
        const std::vector<float> analytic(t.grad().begin(), t.grad().end());
        auto data = t.mut_data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const float orig = data[i];
            data[i] = orig + h;
            const float up = loss_fn().item();
            data[i] = orig - h;
            const float down = loss_fn().item();
            data[i] = orig;
            const float fd = (up - down) / (2.0f * h);
            const float a = analytic[i];
            const float diff = std::fabs(a - fd);
            if (diff > rel_tol * std::max(std::fabs(a), std::fabs(fd)) + abs_tol) {
                CAPTURE(i);
                CAPTURE(a);
                CAPTURE(fd);
                REQUIRE(diff <= rel_tol * std::max(std::fabs(a), std::fabs(fd)) + abs_tol);
            }
        }
    }
}

} // namespace testutil
