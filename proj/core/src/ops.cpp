#include "fode/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace fode {

namespace {

using detail::Node;

std::shared_ptr<Node> make_result(const char* op, Shape shape,
                                  std::vector<std::shared_ptr<Node>> parents) {
    auto node = std::make_shared<Node>();
    node->data.assign(static_cast<std::size_t>(shape_numel(shape)), 0.0f);
    node->shape = std::move(shape);
    node->op = op;
    bool rg = false;
    for (const auto& p : parents) rg = rg || p->requires_grad;
    node->requires_grad = rg;
    node->parents = std::move(parents);
    return node;
}

void check_finite(const char* op, const Node& node) {
    for (std::size_t i = 0; i < node.data.size(); ++i) {
        if (!std::isfinite(node.data[i])) {
            throw NumericsError(std::string(op) + " produced a non-finite value at flat index " +
                                std::to_string(i));
        }
    }
}

void require_rank(const char* op, const Tensor& t, int rank, const char* name) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(op) + ": " + name + " must have rank " + std::to_string(rank) +
                         ", got " + shape_str(t.shape()));
    }
}

int conv_out_extent(const char* op, int in, int kernel, int stride, int padding, const char* axis) {
    const int span = in + 2 * padding - kernel;
    if (span < 0) {
        throw ShapeError(std::string(op) + ": output extent along " + axis + " is not a positive integer (" +
                         "in=" + std::to_string(in) + ", kernel=" + std::to_string(kernel) +
                         ", stride=" + std::to_string(stride) + ", padding=" + std::to_string(padding) + ")");
    }
    return span / stride + 1;
}

} // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight,
              const std::optional<Tensor>& bias, int stride, int padding) {
    require_rank("conv2d", input, 4, "input");
    require_rank("conv2d", weight, 4, "weight");
    if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
    if (padding < 0) throw ShapeError("conv2d: padding must be >= 0");

    const int B = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int Cout = weight.dim(0), Kh = weight.dim(2), Kw = weight.dim(3);
    if (weight.dim(1) != Cin) {
        throw ShapeError("conv2d: weight input-channel dim " + std::to_string(weight.dim(1)) +
                         " does not match input channels " + std::to_string(Cin));
    }
    if (bias) {
        require_rank("conv2d", *bias, 1, "bias");
        if (bias->dim(0) != Cout) {
            throw ShapeError("conv2d: bias extent " + std::to_string(bias->dim(0)) +
                             " does not match output channels " + std::to_string(Cout));
        }
    }
    const int OH = conv_out_extent("conv2d", H, Kh, stride, padding, "height");
    const int OW = conv_out_extent("conv2d", W, Kw, stride, padding, "width");

    std::vector<std::shared_ptr<Node>> parents{input.node(), weight.node()};
    if (bias) parents.push_back(bias->node());
    auto out = make_result("conv2d", {B, Cout, OH, OW}, std::move(parents));

    const float* in = input.data().data();
    const float* w = weight.data().data();
    const float* b = bias ? bias->data().data() : nullptr;
    float* o = out->data.data();

    for (int n = 0; n < B; ++n) {
        for (int co = 0; co < Cout; ++co) {
            const float bias_v = b ? b[co] : 0.0f;
            for (int oh = 0; oh < OH; ++oh) {
                for (int ow = 0; ow < OW; ++ow) {
                    float acc = bias_v;
                    for (int ci = 0; ci < Cin; ++ci) {
                        const float* in_c = in + ((long)n * Cin + ci) * H * W;
                        const float* w_c = w + (((long)co * Cin + ci) * Kh) * Kw;
                        for (int kh = 0; kh < Kh; ++kh) {
                            const int ih = oh * stride - padding + kh;
                            if (ih < 0 || ih >= H) continue;
                            for (int kw = 0; kw < Kw; ++kw) {
                                const int iw = ow * stride - padding + kw;
                                if (iw < 0 || iw >= W) continue;
                                acc += in_c[ih * W + iw] * w_c[kh * Kw + kw];
                            }
                        }
                    }
                    o[(((long)n * Cout + co) * OH + oh) * OW + ow] = acc;
                }
            }
        }
    }
    check_finite("conv2d", *out);

    const bool has_bias = bias.has_value();
    out->backward = [B, Cin, Cout, H, W, Kh, Kw, OH, OW, stride, padding, has_bias](Node& self) {
        Node& nin = *self.parents[0];
        Node& nw = *self.parents[1];
        const bool need_in = nin.requires_grad;
        const bool need_w = nw.requires_grad;
        if (need_in) nin.ensure_grad();
        if (need_w) nw.ensure_grad();
        Node* nb = has_bias ? self.parents[2].get() : nullptr;
        if (nb && nb->requires_grad) nb->ensure_grad();

        const float* go = self.grad.data();
        const float* in = nin.data.data();
        const float* w = nw.data.data();

        for (int n = 0; n < B; ++n) {
            for (int co = 0; co < Cout; ++co) {
                for (int oh = 0; oh < OH; ++oh) {
                    for (int ow = 0; ow < OW; ++ow) {
                        const float g = go[(((long)n * Cout + co) * OH + oh) * OW + ow];
                        if (nb && nb->requires_grad) nb->grad[co] += g;
                        for (int ci = 0; ci < Cin; ++ci) {
                            const long in_base = ((long)n * Cin + ci) * H * W;
                            const long w_base = ((long)co * Cin + ci) * Kh * Kw;
                            for (int kh = 0; kh < Kh; ++kh) {
                                const int ih = oh * stride - padding + kh;
                                if (ih < 0 || ih >= H) continue;
                                for (int kw = 0; kw < Kw; ++kw) {
                                    const int iw = ow * stride - padding + kw;
                                    if (iw < 0 || iw >= W) continue;
                                    if (need_in) nin.grad[in_base + ih * W + iw] += g * w[w_base + kh * Kw + kw];
                                    if (need_w) nw.grad[w_base + kh * Kw + kw] += g * in[in_base + ih * W + iw];
                                }
                            }
                        }
                    }
                }
            }
        }
    };
    return Tensor::wrap(out);
}

Tensor depthwise_conv2d(const Tensor& input, const Tensor& weight, int stride, int padding) {
    require_rank("depthwise_conv2d", input, 4, "input");
    require_rank("depthwise_conv2d", weight, 4, "weight");
    if (stride < 1) throw ShapeError("depthwise_conv2d: stride must be >= 1");
    if (padding < 0) throw ShapeError("depthwise_conv2d: padding must be >= 0");

    const int B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int Kh = weight.dim(2), Kw = weight.dim(3);
    if (weight.dim(0) != C) {
        throw ShapeError("depthwise_conv2d: weight channel dim " + std::to_string(weight.dim(0)) +
                         " does not match input channels " + std::to_string(C));
    }
    if (weight.dim(1) != 1) {
        throw ShapeError("depthwise_conv2d: weight dim 1 must be 1, got " + std::to_string(weight.dim(1)));
    }
    const int OH = conv_out_extent("depthwise_conv2d", H, Kh, stride, padding, "height");
    const int OW = conv_out_extent("depthwise_conv2d", W, Kw, stride, padding, "width");

    auto out = make_result("depthwise_conv2d", {B, C, OH, OW}, {input.node(), weight.node()});

    const float* in = input.data().data();
    const float* w = weight.data().data();
    float* o = out->data.data();

    for (int n = 0; n < B; ++n) {
        for (int c = 0; c < C; ++c) {
            const float* in_c = in + ((long)n * C + c) * H * W;
            const float* w_c = w + (long)c * Kh * Kw;
            for (int oh = 0; oh < OH; ++oh) {
                for (int ow = 0; ow < OW; ++ow) {
                    float acc = 0.0f;
                    for (int kh = 0; kh < Kh; ++kh) {
                        const int ih = oh * stride - padding + kh;
                        if (ih < 0 || ih >= H) continue;
                        for (int kw = 0; kw < Kw; ++kw) {
                            const int iw = ow * stride - padding + kw;
                            if (iw < 0 || iw >= W) continue;
                            acc += in_c[ih * W + iw] * w_c[kh * Kw + kw];
                        }
                    }
                    o[(((long)n * C + c) * OH + oh) * OW + ow] = acc;
                }
            }
        }
    }
    check_finite("depthwise_conv2d", *out);

    out->backward = [B, C, H, W, Kh, Kw, OH, OW, stride, padding](Node& self) {
        Node& nin = *self.parents[0];
        Node& nw = *self.parents[1];
        const bool need_in = nin.requires_grad;
        const bool need_w = nw.requires_grad;
        if (need_in) nin.ensure_grad();
        if (need_w) nw.ensure_grad();
        const float* go = self.grad.data();
        const float* in = nin.data.data();
        const float* w = nw.data.data();
        for (int n = 0; n < B; ++n) {
            for (int c = 0; c < C; ++c) {
                const long in_base = ((long)n * C + c) * H * W;
                const long w_base = (long)c * Kh * Kw;
                for (int oh = 0; oh < OH; ++oh) {
                    for (int ow = 0; ow < OW; ++ow) {
                        const float g = go[(((long)n * C + c) * OH + oh) * OW + ow];
                        for (int kh = 0; kh < Kh; ++kh) {
                            const int ih = oh * stride - padding + kh;
                            if (ih < 0 || ih >= H) continue;
                            for (int kw = 0; kw < Kw; ++kw) {
                                const int iw = ow * stride - padding + kw;
                                if (iw < 0 || iw >= W) continue;
                                if (need_in) nin.grad[in_base + ih * W + iw] += g * w[w_base + kh * Kw + kw];
                                if (need_w) nw.grad[w_base + kh * Kw + kw] += g * in[in_base + ih * W + iw];
                            }
                        }
                    }
                }
            }
        }
    };
    return Tensor::wrap(out);
}

Tensor pointwise_conv2d(const Tensor& input, const Tensor& weight) {
    require_rank("pointwise_conv2d", input, 4, "input");
    require_rank("pointwise_conv2d", weight, 4, "weight");
    const int B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int M = weight.dim(0);
    if (weight.dim(1) != C) {
        throw ShapeError("pointwise_conv2d: weight input-channel dim " + std::to_string(weight.dim(1)) +
                         " does not match input channels " + std::to_string(C));
    }
    if (weight.dim(2) != 1 || weight.dim(3) != 1) {
        throw ShapeError("pointwise_conv2d: kernel must be 1x1, got " + shape_str(weight.shape()));
    }

    auto out = make_result("pointwise_conv2d", {B, M, H, W}, {input.node(), weight.node()});
    const float* in = input.data().data();
    const float* w = weight.data().data();
    float* o = out->data.data();
    const long HW = (long)H * W;

    for (int n = 0; n < B; ++n) {
        for (int m = 0; m < M; ++m) {
            float* o_c = o + ((long)n * M + m) * HW;
            for (int c = 0; c < C; ++c) {
                const float wv = w[(long)m * C + c];
                const float* in_c = in + ((long)n * C + c) * HW;
                for (long i = 0; i < HW; ++i) o_c[i] += wv * in_c[i];
            }
        }
    }
    check_finite("pointwise_conv2d", *out);

    out->backward = [B, C, M, HW](Node& self) {
        Node& nin = *self.parents[0];
        Node& nw = *self.parents[1];
        const bool need_in = nin.requires_grad;
        const bool need_w = nw.requires_grad;
        if (need_in) nin.ensure_grad();
        if (need_w) nw.ensure_grad();
        const float* go = self.grad.data();
        const float* in = nin.data.data();
        const float* w = nw.data.data();
        for (int n = 0; n < B; ++n) {
            for (int m = 0; m < M; ++m) {
                const float* g_c = go + ((long)n * M + m) * HW;
                for (int c = 0; c < C; ++c) {
                    const long in_base = ((long)n * C + c) * HW;
                    const float wv = w[(long)m * C + c];
                    float wg = 0.0f;
                    for (long i = 0; i < HW; ++i) {
                        if (need_in) nin.grad[in_base + i] += g_c[i] * wv;
                        wg += g_c[i] * in[in_base + i];
                    }
                    if (need_w) nw.grad[(long)m * C + c] += wg;
                }
            }
        }
    };
    return Tensor::wrap(out);
}

Tensor group_norm(const Tensor& input, int groups, const Tensor& gamma,
                  const Tensor& beta, float eps) {
    require_rank("group_norm", input, 4, "input");
    require_rank("group_norm", gamma, 1, "gamma");
    require_rank("group_norm", beta, 1, "beta");
    const int B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (groups < 1 || C % groups != 0) {
        throw ShapeError("group_norm: channels " + std::to_string(C) + " not divisible by groups " +
                         std::to_string(groups));
    }
    if (gamma.dim(0) != C || beta.dim(0) != C) {
        throw ShapeError("group_norm: gamma/beta extent must equal channel count " + std::to_string(C));
    }
    if (!(eps > 0.0f)) throw ShapeError("group_norm: eps must be > 0");

    auto out = make_result("group_norm", {B, C, H, W}, {input.node(), gamma.node(), beta.node()});
    const int cg = C / groups;
    const long HW = (long)H * W;
    const long m = (long)cg * HW; // elements per (sample, group)

    const float* in = input.data().data();
    const float* g = gamma.data().data();
    const float* be = beta.data().data();
    float* o = out->data.data();

    // Saved for backward: normalized activations and per-(b,group) inv-std.
    std::vector<float> xhat(in ? input.numel() : 0);
    std::vector<float> invstd((std::size_t)B * groups);

    for (int n = 0; n < B; ++n) {
        for (int gr = 0; gr < groups; ++gr) {
            const long base = ((long)n * C + (long)gr * cg) * HW;
            double mean = 0.0;
            for (long i = 0; i < m; ++i) mean += in[base + i];
            mean /= (double)m;
            double var = 0.0;
            for (long i = 0; i < m; ++i) {
                const double d = in[base + i] - mean;
                var += d * d;
            }
            var /= (double)m;
            const float is = 1.0f / std::sqrt((float)var + eps);
            invstd[(std::size_t)n * groups + gr] = is;
            for (long i = 0; i < m; ++i) {
                const int c = gr * cg + (int)(i / HW);
                const float xh = ((float)(in[base + i] - mean)) * is;
                xhat[base + i] = xh;
                o[base + i] = g[c] * xh + be[c];
            }
        }
    }
    check_finite("group_norm", *out);

    out->backward = [B, C, groups, cg, HW, m, xhat = std::move(xhat),
                     invstd = std::move(invstd)](Node& self) {
        Node& nin = *self.parents[0];
        Node& ng = *self.parents[1];
        Node& nb = *self.parents[2];
        const bool need_in = nin.requires_grad;
        if (need_in) nin.ensure_grad();
        if (ng.requires_grad) ng.ensure_grad();
        if (nb.requires_grad) nb.ensure_grad();
        const float* go = self.grad.data();
        const float* g = ng.data.data();

        for (int n = 0; n < B; ++n) {
            for (int gr = 0; gr < groups; ++gr) {
                const long base = ((long)n * C + (long)gr * cg) * HW;
                double s1 = 0.0, s2 = 0.0;
                for (long i = 0; i < m; ++i) {
                    const int c = gr * cg + (int)(i / HW);
                    const double dxh = (double)go[base + i] * g[c];
                    s1 += dxh;
                    s2 += dxh * xhat[base + i];
                }
                const float is = invstd[(std::size_t)n * groups + gr];
                for (long i = 0; i < m; ++i) {
                    const int c = gr * cg + (int)(i / HW);
                    const float dxh = go[base + i] * g[c];
                    if (need_in) {
                        nin.grad[base + i] +=
                            is * (dxh - (float)((s1 + (double)xhat[base + i] * s2) / (double)m));
                    }
                    if (ng.requires_grad) ng.grad[c] += go[base + i] * xhat[base + i];
                    if (nb.requires_grad) nb.grad[c] += go[base + i];
                }
            }
        }
    };
    return Tensor::wrap(out);
}

Tensor relu(const Tensor& x) {
    auto out = make_result("relu", x.shape(), {x.node()});
    const float* in = x.data().data();
    float* o = out->data.data();
    const long n = x.numel();
    for (long i = 0; i < n; ++i) o[i] = in[i] > 0.0f ? in[i] : 0.0f;
    check_finite("relu", *out);
    out->backward = [n](Node& self) {
        Node& nin = *self.parents[0];
        if (!nin.requires_grad) return;
        nin.ensure_grad();
        for (long i = 0; i < n; ++i) {
            if (nin.data[(std::size_t)i] > 0.0f) nin.grad[(std::size_t)i] += self.grad[(std::size_t)i];
        }
    };
    return Tensor::wrap(out);
}

Tensor avg_pool_global(const Tensor& x) {
    require_rank("avg_pool_global", x, 4, "input");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const long HW = (long)H * W;
    auto out = make_result("avg_pool_global", {B, C}, {x.node()});
    const float* in = x.data().data();
    float* o = out->data.data();
    for (int n = 0; n < B; ++n) {
        for (int c = 0; c < C; ++c) {
            double acc = 0.0;
            const float* p = in + ((long)n * C + c) * HW;
            for (long i = 0; i < HW; ++i) acc += p[i];
            o[(long)n * C + c] = (float)(acc / (double)HW);
        }
    }
    check_finite("avg_pool_global", *out);
    out->backward = [B, C, HW](Node& self) {
        Node& nin = *self.parents[0];
        if (!nin.requires_grad) return;
        nin.ensure_grad();
        for (int n = 0; n < B; ++n) {
            for (int c = 0; c < C; ++c) {
                const float g = self.grad[(std::size_t)((long)n * C + c)] / (float)HW;
                float* p = nin.grad.data() + ((long)n * C + c) * HW;
                for (long i = 0; i < HW; ++i) p[i] += g;
            }
        }
    };
    return Tensor::wrap(out);
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    require_rank("linear", x, 2, "input");
    require_rank("linear", weight, 2, "weight");
    require_rank("linear", bias, 1, "bias");
    const int B = x.dim(0), F = x.dim(1);
    const int O = weight.dim(0);
    if (weight.dim(1) != F) {
        throw ShapeError("linear: weight feature dim " + std::to_string(weight.dim(1)) +
                         " does not match input features " + std::to_string(F));
    }
    if (bias.dim(0) != O) {
        throw ShapeError("linear: bias extent " + std::to_string(bias.dim(0)) +
                         " does not match output features " + std::to_string(O));
    }
    auto out = make_result("linear", {B, O}, {x.node(), weight.node(), bias.node()});
    const float* in = x.data().data();
    const float* w = weight.data().data();
    const float* b = bias.data().data();
    float* o = out->data.data();
    for (int n = 0; n < B; ++n) {
        for (int j = 0; j < O; ++j) {
            float acc = b[j];
            for (int f = 0; f < F; ++f) acc += in[(long)n * F + f] * w[(long)j * F + f];
            o[(long)n * O + j] = acc;
        }
    }
    check_finite("linear", *out);
    out->backward = [B, F, O](Node& self) {
        Node& nin = *self.parents[0];
        Node& nw = *self.parents[1];
        Node& nb = *self.parents[2];
        if (nin.requires_grad) nin.ensure_grad();
        if (nw.requires_grad) nw.ensure_grad();
        if (nb.requires_grad) nb.ensure_grad();
        const float* go = self.grad.data();
        for (int n = 0; n < B; ++n) {
            for (int j = 0; j < O; ++j) {
                const float g = go[(long)n * O + j];
                if (nb.requires_grad) nb.grad[(std::size_t)j] += g;
                for (int f = 0; f < F; ++f) {
                    if (nin.requires_grad)
                        nin.grad[(std::size_t)((long)n * F + f)] += g * nw.data[(std::size_t)((long)j * F + f)];
                    if (nw.requires_grad)
                        nw.grad[(std::size_t)((long)j * F + f)] += g * nin.data[(std::size_t)((long)n * F + f)];
                }
            }
        }
    };
    return Tensor::wrap(out);
}

Tensor add(const Tensor& x, const Tensor& y) {
    if (x.shape() != y.shape()) {
        throw ShapeError("add: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
    }
    auto out = make_result("add", x.shape(), {x.node(), y.node()});
    const float* a = x.data().data();
    const float* b = y.data().data();
    float* o = out->data.data();
    const long n = x.numel();
    for (long i = 0; i < n; ++i) o[i] = a[i] + b[i];
    check_finite("add", *out);
    out->backward = [n](Node& self) {
        for (int p = 0; p < 2; ++p) {
            Node& np = *self.parents[(std::size_t)p];
            if (!np.requires_grad) continue;
            np.ensure_grad();
            for (long i = 0; i < n; ++i) np.grad[(std::size_t)i] += self.grad[(std::size_t)i];
        }
    };
    return Tensor::wrap(out);
}

Tensor mul(const Tensor& x, const Tensor& y) {
    if (x.shape() != y.shape()) {
        throw ShapeError("mul: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
    }
    auto out = make_result("mul", x.shape(), {x.node(), y.node()});
    const float* a = x.data().data();
    const float* b = y.data().data();
    float* o = out->data.data();
    const long n = x.numel();
    for (long i = 0; i < n; ++i) o[i] = a[i] * b[i];
    check_finite("mul", *out);
    out->backward = [n](Node& self) {
        Node& nx = *self.parents[0];
        Node& ny = *self.parents[1];
        if (nx.requires_grad) {
            nx.ensure_grad();
            for (long i = 0; i < n; ++i) nx.grad[(std::size_t)i] += self.grad[(std::size_t)i] * ny.data[(std::size_t)i];
        }
        if (ny.requires_grad) {
            ny.ensure_grad();
            for (long i = 0; i < n; ++i) ny.grad[(std::size_t)i] += self.grad[(std::size_t)i] * nx.data[(std::size_t)i];
        }
    };
    return Tensor::wrap(out);
}

Tensor scale(const Tensor& x, float s) {
    if (!std::isfinite(s)) throw NumericsError("scale: factor is not finite");
    auto out = make_result("scale", x.shape(), {x.node()});
    const float* a = x.data().data();
    float* o = out->data.data();
    const long n = x.numel();
    for (long i = 0; i < n; ++i) o[i] = a[i] * s;
    check_finite("scale", *out);
    out->backward = [n, s](Node& self) {
        Node& nx = *self.parents[0];
        if (!nx.requires_grad) return;
        nx.ensure_grad();
        for (long i = 0; i < n; ++i) nx.grad[(std::size_t)i] += self.grad[(std::size_t)i] * s;
    };
    return Tensor::wrap(out);
}

Tensor sum(const Tensor& x) {
    auto out = make_result("sum", {1}, {x.node()});
    const float* a = x.data().data();
    double acc = 0.0;
    const long n = x.numel();
    for (long i = 0; i < n; ++i) acc += a[i];
    out->data[0] = (float)acc;
    check_finite("sum", *out);
    out->backward = [n](Node& self) {
        Node& nx = *self.parents[0];
        if (!nx.requires_grad) return;
        nx.ensure_grad();
        const float g = self.grad[0];
        for (long i = 0; i < n; ++i) nx.grad[(std::size_t)i] += g;
    };
    return Tensor::wrap(out);
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
    require_rank("softmax_cross_entropy", logits, 2, "logits");
    const int B = logits.dim(0), C = logits.dim(1);
    if ((int)labels.size() != B) {
        throw ShapeError("softmax_cross_entropy: label count " + std::to_string(labels.size()) +
                         " does not match batch " + std::to_string(B));
    }
    for (int i = 0; i < B; ++i) {
        if (labels[(std::size_t)i] < 0 || labels[(std::size_t)i] >= C) {
            throw ShapeError("softmax_cross_entropy: label " + std::to_string(labels[(std::size_t)i]) +
                             " out of range [0," + std::to_string(C) + ") at row " + std::to_string(i));
        }
    }
    auto out = make_result("softmax_cross_entropy", {1}, {logits.node()});
    const float* l = logits.data().data();

    // Saved softmax probabilities for backward.
    std::vector<float> probs((std::size_t)B * C);
    double loss = 0.0;
    for (int n = 0; n < B; ++n) {
        const float* row = l + (long)n * C;
        float mx = row[0];
        for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        double se = 0.0;
        for (int c = 0; c < C; ++c) se += std::exp((double)row[c] - mx);
        const double lse = mx + std::log(se);
        for (int c = 0; c < C; ++c) probs[(std::size_t)((long)n * C + c)] = (float)std::exp((double)row[c] - lse);
        loss += lse - row[labels[(std::size_t)n]];
    }
    out->data[0] = (float)(loss / (double)B);
    check_finite("softmax_cross_entropy", *out);

    std::vector<int> labels_copy(labels.begin(), labels.end());
    out->backward = [B, C, probs = std::move(probs), labels = std::move(labels_copy)](Node& self) {
        Node& nl = *self.parents[0];
        if (!nl.requires_grad) return;
        nl.ensure_grad();
        const float g = self.grad[0] / (float)B;
        for (int n = 0; n < B; ++n) {
            for (int c = 0; c < C; ++c) {
                const float p = probs[(std::size_t)((long)n * C + c)];
                const float y = (labels[(std::size_t)n] == c) ? 1.0f : 0.0f;
                nl.grad[(std::size_t)((long)n * C + c)] += g * (p - y);
            }
        }
    };
    return Tensor::wrap(out);
}

Tensor softmax_cross_entropy_soft(const Tensor& logits, const Tensor& targets) {
    require_rank("softmax_cross_entropy_soft", logits, 2, "logits");
    if (logits.shape() != targets.shape()) {
        throw ShapeError("softmax_cross_entropy_soft: target shape " + shape_str(targets.shape()) +
                         " does not match logits " + shape_str(logits.shape()));
    }
    const int B = logits.dim(0), C = logits.dim(1);
    auto out = make_result("softmax_cross_entropy_soft", {1}, {logits.node()});
    const float* l = logits.data().data();
    const float* t = targets.data().data();

    std::vector<float> probs((std::size_t)B * C);
    double loss = 0.0;
    for (int n = 0; n < B; ++n) {
        const float* row = l + (long)n * C;
        float mx = row[0];
        for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        double se = 0.0;
        for (int c = 0; c < C; ++c) se += std::exp((double)row[c] - mx);
        const double lse = mx + std::log(se);
        for (int c = 0; c < C; ++c) {
            probs[(std::size_t)((long)n * C + c)] = (float)std::exp((double)row[c] - lse);
            loss += (double)t[(long)n * C + c] * (lse - row[c]);
        }
    }
    out->data[0] = (float)(loss / (double)B);
    check_finite("softmax_cross_entropy_soft", *out);

    std::vector<float> targets_copy(t, t + (std::size_t)B * C);
    std::vector<float> target_row_sums((std::size_t)B, 0.0f);
    for (int n = 0; n < B; ++n) {
        double s = 0.0;
        for (int c = 0; c < C; ++c) s += targets_copy[(std::size_t)((long)n * C + c)];
        target_row_sums[(std::size_t)n] = (float)s;
    }
    out->backward = [B, C, probs = std::move(probs), targets = std::move(targets_copy),
                     row_sums = std::move(target_row_sums)](Node& self) {
        Node& nl = *self.parents[0];
        if (!nl.requires_grad) return;
        nl.ensure_grad();
        const float g = self.grad[0] / (float)B;
        for (long i = 0; i < (long)B * C; ++i) {
            // d/dlogit of sum_c t_c * (lse - l_c) is (sum_c t_c) * p - t.
            nl.grad[(std::size_t)i] +=
                g * (probs[(std::size_t)i] * row_sums[(std::size_t)(i / C)] - targets[(std::size_t)i]);
        }
    };
    return Tensor::wrap(out);
}

std::vector<float> softmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) {
        throw ShapeError("softmax_rows: logits must have rank 2, got " + shape_str(logits.shape()));
    }
    const int B = logits.dim(0), C = logits.dim(1);
    const float* l = logits.data().data();
    std::vector<float> probs((std::size_t)B * C);
    for (int n = 0; n < B; ++n) {
        const float* row = l + (long)n * C;
        float mx = row[0];
        for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        double se = 0.0;
        for (int c = 0; c < C; ++c) se += std::exp((double)row[c] - mx);
        for (int c = 0; c < C; ++c) {
            probs[(std::size_t)((long)n * C + c)] = (float)(std::exp((double)row[c] - mx) / se);
        }
    }
    return probs;
}

} // namespace fode
