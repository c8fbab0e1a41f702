#include "metaprune/tensorcore/ops.hpp"

#include <Eigen/Dense>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace metaprune::tensorcore {

namespace {

using MatRM = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;
using Index = Eigen::Index;

[[noreturn]] void shape_fail(const char* op, const std::string& detail) {
    throw ShapeError(fmt::format("{}: {}", op, detail));
}

void require_rank(const char* op, const char* what, const Var& v, int rank) {
    if (!v.defined()) shape_fail(op, fmt::format("{} is undefined", what));
    if (v.value().rank() != rank) {
        shape_fail(op, fmt::format("{} must have rank {}, got {}", what, rank, shape_string(v.shape())));
    }
}

bool needs(const Node& self, std::size_t i) {
    return i < self.inputs.size() && self.inputs[i]->requires_grad;
}

struct ConvGeom {
    std::int64_t n, c, h, w, o, kh, kw, stride, pad, ho, wo;
    std::int64_t k() const { return c * kh * kw; }
    std::int64_t p() const { return ho * wo; }
};

// col is [C*kh*kw, N*Ho*Wo].
void im2col(const real* x, const ConvGeom& g, real* col) {
    const std::int64_t np = g.n * g.p();
    for (std::int64_t n = 0; n < g.n; ++n) {
        for (std::int64_t c = 0; c < g.c; ++c) {
            const real* xc = x + (n * g.c + c) * g.h * g.w;
            for (std::int64_t i = 0; i < g.kh; ++i) {
                for (std::int64_t j = 0; j < g.kw; ++j) {
                    real* dst = col + ((c * g.kh + i) * g.kw + j) * np + n * g.p();
                    for (std::int64_t oh = 0; oh < g.ho; ++oh) {
                        const std::int64_t hh = oh * g.stride - g.pad + i;
                        real* row = dst + oh * g.wo;
                        if (hh < 0 || hh >= g.h) {
                            std::fill(row, row + g.wo, real{0});
                            continue;
                        }
                        const real* src = xc + hh * g.w;
                        for (std::int64_t ow = 0; ow < g.wo; ++ow) {
                            const std::int64_t ww = ow * g.stride - g.pad + j;
                            row[ow] = (ww >= 0 && ww < g.w) ? src[ww] : real{0};
                        }
                    }
                }
            }
        }
    }
}

void col2im(const real* col, const ConvGeom& g, real* dx) {
    const std::int64_t np = g.n * g.p();
    for (std::int64_t n = 0; n < g.n; ++n) {
        for (std::int64_t c = 0; c < g.c; ++c) {
            real* xc = dx + (n * g.c + c) * g.h * g.w;
            for (std::int64_t i = 0; i < g.kh; ++i) {
                for (std::int64_t j = 0; j < g.kw; ++j) {
                    const real* src = col + ((c * g.kh + i) * g.kw + j) * np + n * g.p();
                    for (std::int64_t oh = 0; oh < g.ho; ++oh) {
                        const std::int64_t hh = oh * g.stride - g.pad + i;
                        if (hh < 0 || hh >= g.h) continue;
                        const real* row = src + oh * g.wo;
                        real* dst = xc + hh * g.w;
                        for (std::int64_t ow = 0; ow < g.wo; ++ow) {
                            const std::int64_t ww = ow * g.stride - g.pad + j;
                            if (ww >= 0 && ww < g.w) dst[ww] += row[ow];
                        }
                    }
                }
            }
        }
    }
}

std::int64_t out_dim(const char* op, std::int64_t in, std::int64_t k, int stride, int pad) {
    if (stride < 1) shape_fail(op, "stride must be >= 1");
    if (pad < 0) shape_fail(op, "padding must be >= 0");
    const std::int64_t o = (in + 2 * pad - k) / stride + 1;
    if (in + 2 * pad < k || o < 1) {
        shape_fail(op, fmt::format("kernel {} does not fit input {} with padding {}", k, in, pad));
    }
    return o;
}

// Channel layout helper for [N, C, rest...] tensors.
struct ChannelView {
    std::int64_t n, c, s;
};

ChannelView channel_view(const char* op, const Tensor& x) {
    if (x.rank() < 2) shape_fail(op, fmt::format("input must have rank >= 2, got {}", shape_string(x.shape())));
    std::int64_t s = 1;
    for (int i = 2; i < x.rank(); ++i) s *= x.dim(i);
    return {x.dim(0), x.dim(1), s};
}

void check_affine(const char* op, const Var& p, std::int64_t c, const char* what) {
    if (!p.defined()) return;
    if (p.value().rank() != 1 || p.value().dim(0) != c) {
        shape_fail(op, fmt::format("{} must be [{}], got {}", what, c, shape_string(p.shape())));
    }
}

}  // namespace

Var dense(const Var& x, const Var& w, const Var& bias) {
    require_rank("dense", "input", x, 2);
    require_rank("dense", "weight", w, 2);
    const Index n = x.value().dim(0);
    const Index in = x.value().dim(1);
    const Index out = w.value().dim(0);
    if (w.value().dim(1) != in) {
        shape_fail("dense", fmt::format("input {} does not match weight {}", shape_string(x.shape()),
                                        shape_string(w.shape())));
    }
    if (bias.defined() && (bias.value().rank() != 1 || bias.value().dim(0) != out)) {
        shape_fail("dense", fmt::format("bias must be [{}], got {}", out, shape_string(bias.shape())));
    }
    Tensor y({n, out});
    MapRM ym(y.data(), n, out);
    ym.noalias() = CMapRM(x.value().data(), n, in) * CMapRM(w.value().data(), out, in).transpose();
    if (bias.defined()) {
        ym.rowwise() += Eigen::Map<const Eigen::Matrix<real, 1, Eigen::Dynamic>>(bias.value().data(), out);
    }
    std::vector<Var> inputs{x, w};
    if (bias.defined()) inputs.push_back(bias);
    return make_result(std::move(y), std::move(inputs), "dense", [n, in, out](Node& self) {
        CMapRM gy(self.tensor.grad().data(), n, out);
        const Tensor& xv = self.inputs[0]->tensor;
        const Tensor& wv = self.inputs[1]->tensor;
        if (needs(self, 0)) MapRM(input_grad(self, 0).data(), n, in).noalias() += gy * CMapRM(wv.data(), out, in);
        if (needs(self, 1)) MapRM(input_grad(self, 1).data(), out, in).noalias() += gy.transpose() * CMapRM(xv.data(), n, in);
        if (needs(self, 2)) {
            Eigen::Map<Eigen::Matrix<real, 1, Eigen::Dynamic>>(input_grad(self, 2).data(), out) += gy.colwise().sum();
        }
    });
}

Var conv2d(const Var& x, const Var& w, int stride, int padding) {
    require_rank("conv2d", "input", x, 4);
    require_rank("conv2d", "weight", w, 4);
    ConvGeom g{};
    g.n = x.value().dim(0);
    g.c = x.value().dim(1);
    g.h = x.value().dim(2);
    g.w = x.value().dim(3);
    g.o = w.value().dim(0);
    g.kh = w.value().dim(2);
    g.kw = w.value().dim(3);
    g.stride = stride;
    g.pad = padding;
    if (w.value().dim(1) != g.c) {
        shape_fail("conv2d", fmt::format("input channels {} (input {}) do not match weight {}", g.c,
                                         shape_string(x.shape()), shape_string(w.shape())));
    }
    g.ho = out_dim("conv2d", g.h, g.kh, stride, padding);
    g.wo = out_dim("conv2d", g.w, g.kw, stride, padding);

    const Index k = g.k();
    const Index np = g.n * g.p();
    auto col = std::make_shared<MatRM>(k, np);
    im2col(x.value().data(), g, col->data());
    MatRM out_mat(g.o, np);
    out_mat.noalias() = CMapRM(w.value().data(), g.o, k) * (*col);

    Tensor y({g.n, g.o, g.ho, g.wo});
    const std::int64_t p = g.p();
    for (std::int64_t n = 0; n < g.n; ++n) {
        for (std::int64_t o = 0; o < g.o; ++o) {
            const real* src = out_mat.data() + o * np + n * p;
            std::copy(src, src + p, y.data() + (n * g.o + o) * p);
        }
    }
    const bool keep_col = w.requires_grad();
    return make_result(std::move(y), {x, w}, "conv2d", [g, col = keep_col ? col : nullptr](Node& self) {
        const Index k = g.k();
        const std::int64_t p = g.p();
        const Index np = g.n * p;
        MatRM gy(g.o, np);
        const real* gsrc = self.tensor.grad().data();
        for (std::int64_t n = 0; n < g.n; ++n) {
            for (std::int64_t o = 0; o < g.o; ++o) {
                const real* src = gsrc + (n * g.o + o) * p;
                std::copy(src, src + p, gy.data() + o * np + n * p);
            }
        }
        if (needs(self, 1)) MapRM(input_grad(self, 1).data(), g.o, k).noalias() += gy * col->transpose();
        if (needs(self, 0)) {
            MatRM dcol(k, np);
            dcol.noalias() = CMapRM(self.inputs[1]->tensor.data(), g.o, k).transpose() * gy;
            col2im(dcol.data(), g, input_grad(self, 0).data());
        }
    });
}

Var depthwise_conv2d(const Var& x, const Var& w, int stride, int padding) {
    require_rank("depthwise_conv2d", "input", x, 4);
    require_rank("depthwise_conv2d", "weight", w, 4);
    ConvGeom g{};
    g.n = x.value().dim(0);
    g.c = x.value().dim(1);
    g.h = x.value().dim(2);
    g.w = x.value().dim(3);
    g.o = g.c;
    g.kh = w.value().dim(2);
    g.kw = w.value().dim(3);
    g.stride = stride;
    g.pad = padding;
    if (w.value().dim(0) != g.c || w.value().dim(1) != 1) {
        shape_fail("depthwise_conv2d", fmt::format("weight must be [{}, 1, kh, kw], got {}", g.c, shape_string(w.shape())));
    }
    g.ho = out_dim("depthwise_conv2d", g.h, g.kh, stride, padding);
    g.wo = out_dim("depthwise_conv2d", g.w, g.kw, stride, padding);

    Tensor y({g.n, g.c, g.ho, g.wo});
    const real* xd = x.value().data();
    const real* wd = w.value().data();
    for (std::int64_t n = 0; n < g.n; ++n) {
        for (std::int64_t c = 0; c < g.c; ++c) {
            const real* xc = xd + (n * g.c + c) * g.h * g.w;
            const real* wk = wd + c * g.kh * g.kw;
            real* yc = y.data() + (n * g.c + c) * g.ho * g.wo;
            for (std::int64_t oh = 0; oh < g.ho; ++oh) {
                for (std::int64_t ow = 0; ow < g.wo; ++ow) {
                    real acc = 0;
                    for (std::int64_t i = 0; i < g.kh; ++i) {
                        const std::int64_t hh = oh * g.stride - g.pad + i;
                        if (hh < 0 || hh >= g.h) continue;
                        for (std::int64_t j = 0; j < g.kw; ++j) {
                            const std::int64_t ww = ow * g.stride - g.pad + j;
                            if (ww < 0 || ww >= g.w) continue;
                            acc += wk[i * g.kw + j] * xc[hh * g.w + ww];
                        }
                    }
                    yc[oh * g.wo + ow] = acc;
                }
            }
        }
    }
    return make_result(std::move(y), {x, w}, "depthwise_conv2d", [g](Node& self) {
        const real* gy = self.tensor.grad().data();
        const real* xd = self.inputs[0]->tensor.data();
        const real* wd = self.inputs[1]->tensor.data();
        real* dx = needs(self, 0) ? input_grad(self, 0).data() : nullptr;
        real* dw = needs(self, 1) ? input_grad(self, 1).data() : nullptr;
        for (std::int64_t n = 0; n < g.n; ++n) {
            for (std::int64_t c = 0; c < g.c; ++c) {
                const std::int64_t xoff = (n * g.c + c) * g.h * g.w;
                const real* gyc = gy + (n * g.c + c) * g.ho * g.wo;
                const real* wk = wd + c * g.kh * g.kw;
                for (std::int64_t oh = 0; oh < g.ho; ++oh) {
                    for (std::int64_t ow = 0; ow < g.wo; ++ow) {
                        const real go = gyc[oh * g.wo + ow];
                        if (go == real{0}) continue;
                        for (std::int64_t i = 0; i < g.kh; ++i) {
                            const std::int64_t hh = oh * g.stride - g.pad + i;
                            if (hh < 0 || hh >= g.h) continue;
                            for (std::int64_t j = 0; j < g.kw; ++j) {
                                const std::int64_t ww = ow * g.stride - g.pad + j;
                                if (ww < 0 || ww >= g.w) continue;
                                if (dx) dx[xoff + hh * g.w + ww] += go * wk[i * g.kw + j];
                                if (dw) dw[c * g.kh * g.kw + i * g.kw + j] += go * xd[xoff + hh * g.w + ww];
                            }
                        }
                    }
                }
            }
        }
    });
}

Var channel_norm_affine(const Var& x, const Var& gamma, const Var& beta, real eps, NormStats* stats_out) {
    if (!x.defined()) shape_fail("channel_norm_affine", "input is undefined");
    const auto v = channel_view("channel_norm_affine", x.value());
    check_affine("channel_norm_affine", gamma, v.c, "gamma");
    check_affine("channel_norm_affine", beta, v.c, "beta");
    const std::int64_t m = v.n * v.s;
    if (m < 1) shape_fail("channel_norm_affine", "empty batch");

    const real* xd = x.value().data();
    std::vector<real> mean(static_cast<std::size_t>(v.c), 0);
    std::vector<real> var(static_cast<std::size_t>(v.c), 0);
    for (std::int64_t n = 0; n < v.n; ++n) {
        for (std::int64_t c = 0; c < v.c; ++c) {
            const real* p = xd + (n * v.c + c) * v.s;
            real acc = 0;
            for (std::int64_t i = 0; i < v.s; ++i) acc += p[i];
            mean[static_cast<std::size_t>(c)] += acc;
        }
    }
    for (auto& mu : mean) mu /= static_cast<real>(m);
    for (std::int64_t n = 0; n < v.n; ++n) {
        for (std::int64_t c = 0; c < v.c; ++c) {
            const real* p = xd + (n * v.c + c) * v.s;
            const real mu = mean[static_cast<std::size_t>(c)];
            real acc = 0;
            for (std::int64_t i = 0; i < v.s; ++i) acc += (p[i] - mu) * (p[i] - mu);
            var[static_cast<std::size_t>(c)] += acc;
        }
    }
    for (auto& s2 : var) s2 /= static_cast<real>(m);

    std::vector<real> invstd(static_cast<std::size_t>(v.c));
    for (std::size_t c = 0; c < invstd.size(); ++c) invstd[c] = real{1} / std::sqrt(var[c] + eps);

    auto xhat = std::make_shared<std::vector<real>>(x.value().size());
    Tensor y(x.shape());
    const real* gd = gamma.defined() ? gamma.value().data() : nullptr;
    const real* bd = beta.defined() ? beta.value().data() : nullptr;
    for (std::int64_t n = 0; n < v.n; ++n) {
        for (std::int64_t c = 0; c < v.c; ++c) {
            const std::int64_t off = (n * v.c + c) * v.s;
            const auto uc = static_cast<std::size_t>(c);
            const real g = gd ? gd[c] : real{1};
            const real b = bd ? bd[c] : real{0};
            for (std::int64_t i = 0; i < v.s; ++i) {
                const real h = (xd[off + i] - mean[uc]) * invstd[uc];
                (*xhat)[static_cast<std::size_t>(off + i)] = h;
                y[static_cast<std::size_t>(off + i)] = g * h + b;
            }
        }
    }
    if (stats_out) *stats_out = NormStats{mean, var};

    std::vector<Var> inputs{x};
    const std::size_t gi = gamma.defined() ? inputs.size() : SIZE_MAX;
    if (gamma.defined()) inputs.push_back(gamma);
    const std::size_t bi = beta.defined() ? inputs.size() : SIZE_MAX;
    if (beta.defined()) inputs.push_back(beta);

    return make_result(std::move(y), std::move(inputs), "channel_norm_affine",
                       [v, m, gi, bi, xhat, invstd = std::move(invstd)](Node& self) {
        const real* gy = self.tensor.grad().data();
        const real* gd = gi != SIZE_MAX ? self.inputs[gi]->tensor.data() : nullptr;
        std::vector<real> sum_dy(static_cast<std::size_t>(v.c), 0);
        std::vector<real> sum_dy_xhat(static_cast<std::size_t>(v.c), 0);
        for (std::int64_t n = 0; n < v.n; ++n) {
            for (std::int64_t c = 0; c < v.c; ++c) {
                const std::int64_t off = (n * v.c + c) * v.s;
                real a = 0;
                real b = 0;
                for (std::int64_t i = 0; i < v.s; ++i) {
                    a += gy[off + i];
                    b += gy[off + i] * (*xhat)[static_cast<std::size_t>(off + i)];
                }
                sum_dy[static_cast<std::size_t>(c)] += a;
                sum_dy_xhat[static_cast<std::size_t>(c)] += b;
            }
        }
        if (needs(self, gi)) {
            auto dg = input_grad(self, gi);
            for (std::size_t c = 0; c < sum_dy_xhat.size(); ++c) dg[c] += sum_dy_xhat[c];
        }
        if (needs(self, bi)) {
            auto db = input_grad(self, bi);
            for (std::size_t c = 0; c < sum_dy.size(); ++c) db[c] += sum_dy[c];
        }
        if (needs(self, 0)) {
            real* dx = input_grad(self, 0).data();
            const real inv_m = real{1} / static_cast<real>(m);
            for (std::int64_t n = 0; n < v.n; ++n) {
                for (std::int64_t c = 0; c < v.c; ++c) {
                    const auto uc = static_cast<std::size_t>(c);
                    const real g = gd ? gd[c] : real{1};
                    const real k = g * invstd[uc];
                    const real mean_dy = sum_dy[uc] * inv_m;
                    const real mean_dy_xhat = sum_dy_xhat[uc] * inv_m;
                    const std::int64_t off = (n * v.c + c) * v.s;
                    for (std::int64_t i = 0; i < v.s; ++i) {
                        const real h = (*xhat)[static_cast<std::size_t>(off + i)];
                        dx[off + i] += k * (gy[off + i] - mean_dy - h * mean_dy_xhat);
                    }
                }
            }
        }
    });
}

Var channel_norm_fixed(const Var& x, const Var& gamma, const Var& beta, const NormStats& stats, real eps) {
    if (!x.defined()) shape_fail("channel_norm_fixed", "input is undefined");
    const auto v = channel_view("channel_norm_fixed", x.value());
    check_affine("channel_norm_fixed", gamma, v.c, "gamma");
    check_affine("channel_norm_fixed", beta, v.c, "beta");
    if (static_cast<std::int64_t>(stats.mean.size()) != v.c || static_cast<std::int64_t>(stats.var.size()) != v.c) {
        shape_fail("channel_norm_fixed", fmt::format("statistics for {} channels, input has {}", stats.mean.size(), v.c));
    }
    std::vector<real> invstd(static_cast<std::size_t>(v.c));
    for (std::size_t c = 0; c < invstd.size(); ++c) invstd[c] = real{1} / std::sqrt(stats.var[c] + eps);
    const real* xd = x.value().data();
    const real* gd = gamma.defined() ? gamma.value().data() : nullptr;
    const real* bd = beta.defined() ? beta.value().data() : nullptr;
    Tensor y(x.shape());
    for (std::int64_t n = 0; n < v.n; ++n) {
        for (std::int64_t c = 0; c < v.c; ++c) {
            const auto uc = static_cast<std::size_t>(c);
            const std::int64_t off = (n * v.c + c) * v.s;
            const real g = gd ? gd[c] : real{1};
            const real b = bd ? bd[c] : real{0};
            for (std::int64_t i = 0; i < v.s; ++i) {
                y[static_cast<std::size_t>(off + i)] = g * (xd[off + i] - stats.mean[uc]) * invstd[uc] + b;
            }
        }
    }
    std::vector<Var> inputs{x};
    const std::size_t gi = gamma.defined() ? inputs.size() : SIZE_MAX;
    if (gamma.defined()) inputs.push_back(gamma);
    const std::size_t bi = beta.defined() ? inputs.size() : SIZE_MAX;
    if (beta.defined()) inputs.push_back(beta);
    return make_result(std::move(y), std::move(inputs), "channel_norm_fixed",
                       [v, gi, bi, mean = stats.mean, invstd = std::move(invstd)](Node& self) {
        const real* gy = self.tensor.grad().data();
        const real* xd = self.inputs[0]->tensor.data();
        const real* gd = gi != SIZE_MAX ? self.inputs[gi]->tensor.data() : nullptr;
        real* dx = needs(self, 0) ? input_grad(self, 0).data() : nullptr;
        real* dg = needs(self, gi) ? input_grad(self, gi).data() : nullptr;
        real* db = needs(self, bi) ? input_grad(self, bi).data() : nullptr;
        for (std::int64_t n = 0; n < v.n; ++n) {
            for (std::int64_t c = 0; c < v.c; ++c) {
                const auto uc = static_cast<std::size_t>(c);
                const std::int64_t off = (n * v.c + c) * v.s;
                const real g = gd ? gd[c] : real{1};
                for (std::int64_t i = 0; i < v.s; ++i) {
                    const real go = gy[off + i];
                    if (dx) dx[off + i] += go * g * invstd[uc];
                    if (dg) dg[c] += go * (xd[off + i] - mean[uc]) * invstd[uc];
                    if (db) db[c] += go;
                }
            }
        }
    });
}

Var relu(const Var& x) {
    Tensor y(x.shape());
    const auto xv = x.value().values();
    for (std::size_t i = 0; i < xv.size(); ++i) y[i] = xv[i] > real{0} ? xv[i] : real{0};
    return make_result(std::move(y), {x}, "relu", [](Node& self) {
        const auto gy = self.tensor.grad();
        const auto xv = self.inputs[0]->tensor.values();
        auto dx = input_grad(self, 0);
        for (std::size_t i = 0; i < gy.size(); ++i) {
            if (xv[i] > real{0}) dx[i] += gy[i];
        }
    });
}

Var add(const Var& a, const Var& b) {
    if (a.shape() != b.shape()) {
        shape_fail("add", fmt::format("operands differ: {} vs {}", shape_string(a.shape()), shape_string(b.shape())));
    }
    Tensor y(a.shape());
    const auto av = a.value().values();
    const auto bv = b.value().values();
    for (std::size_t i = 0; i < av.size(); ++i) y[i] = av[i] + bv[i];
    return make_result(std::move(y), {a, b}, "add", [](Node& self) {
        const auto gy = self.tensor.grad();
        for (std::size_t k = 0; k < 2; ++k) {
            if (!needs(self, k)) continue;
            auto d = input_grad(self, k);
            for (std::size_t i = 0; i < gy.size(); ++i) d[i] += gy[i];
        }
    });
}

Var add_scalar(const Var& x, real c) {
    Tensor y(x.shape());
    const auto xv = x.value().values();
    for (std::size_t i = 0; i < xv.size(); ++i) y[i] = xv[i] + c;
    return make_result(std::move(y), {x}, "add_scalar", [](Node& self) {
        const auto gy = self.tensor.grad();
        auto d = input_grad(self, 0);
        for (std::size_t i = 0; i < gy.size(); ++i) d[i] += gy[i];
    });
}

Var global_avg_pool(const Var& x) {
    require_rank("global_avg_pool", "input", x, 4);
    const std::int64_t n = x.value().dim(0);
    const std::int64_t c = x.value().dim(1);
    const std::int64_t s = x.value().dim(2) * x.value().dim(3);
    if (s < 1) shape_fail("global_avg_pool", "empty spatial extent");
    Tensor y({n, c});
    const real* xd = x.value().data();
    for (std::int64_t i = 0; i < n * c; ++i) {
        real acc = 0;
        for (std::int64_t k = 0; k < s; ++k) acc += xd[i * s + k];
        y[static_cast<std::size_t>(i)] = acc / static_cast<real>(s);
    }
    return make_result(std::move(y), {x}, "global_avg_pool", [n, c, s](Node& self) {
        const real* gy = self.tensor.grad().data();
        real* dx = input_grad(self, 0).data();
        const real inv = real{1} / static_cast<real>(s);
        for (std::int64_t i = 0; i < n * c; ++i) {
            const real g = gy[i] * inv;
            for (std::int64_t k = 0; k < s; ++k) dx[i * s + k] += g;
        }
    });
}

Var max_pool2d(const Var& x, int kernel, int stride, int padding) {
    require_rank("max_pool2d", "input", x, 4);
    if (padding >= kernel) shape_fail("max_pool2d", "padding must be smaller than the kernel");
    const std::int64_t n = x.value().dim(0);
    const std::int64_t c = x.value().dim(1);
    const std::int64_t h = x.value().dim(2);
    const std::int64_t w = x.value().dim(3);
    const std::int64_t ho = out_dim("max_pool2d", h, kernel, stride, padding);
    const std::int64_t wo = out_dim("max_pool2d", w, kernel, stride, padding);
    Tensor y({n, c, ho, wo});
    auto argmax = std::make_shared<std::vector<std::int64_t>>(y.size());
    const real* xd = x.value().data();
    for (std::int64_t p = 0; p < n * c; ++p) {
        const real* xc = xd + p * h * w;
        for (std::int64_t oh = 0; oh < ho; ++oh) {
            for (std::int64_t ow = 0; ow < wo; ++ow) {
                real best = -std::numeric_limits<real>::infinity();
                std::int64_t arg = -1;
                for (int i = 0; i < kernel; ++i) {
                    const std::int64_t hh = oh * stride - padding + i;
                    if (hh < 0 || hh >= h) continue;
                    for (int j = 0; j < kernel; ++j) {
                        const std::int64_t ww = ow * stride - padding + j;
                        if (ww < 0 || ww >= w) continue;
                        if (xc[hh * w + ww] > best || arg < 0) {
                            best = xc[hh * w + ww];
                            arg = p * h * w + hh * w + ww;
                        }
                    }
                }
                const auto o = static_cast<std::size_t>((p * ho + oh) * wo + ow);
                y[o] = best;
                (*argmax)[o] = arg;
            }
        }
    }
    return make_result(std::move(y), {x}, "max_pool2d", [argmax](Node& self) {
        const auto gy = self.tensor.grad();
        auto dx = input_grad(self, 0);
        for (std::size_t i = 0; i < gy.size(); ++i) dx[static_cast<std::size_t>((*argmax)[i])] += gy[i];
    });
}

Var flatten(const Var& x) {
    if (x.value().rank() < 1) shape_fail("flatten", "input must have rank >= 1");
    const std::int64_t n = x.value().dim(0);
    Tensor y = x.value();
    y.drop_grad();
    y.reshape({n, n == 0 ? 0 : static_cast<std::int64_t>(y.size()) / n});
    return make_result(std::move(y), {x}, "flatten", [](Node& self) {
        const auto gy = self.tensor.grad();
        auto dx = input_grad(self, 0);
        for (std::size_t i = 0; i < gy.size(); ++i) dx[i] += gy[i];
    });
}

Tensor softmax(const Tensor& logits) {
    if (logits.rank() != 2) throw ShapeError("softmax: logits must be [N, K]");
    const std::int64_t n = logits.dim(0);
    const std::int64_t k = logits.dim(1);
    Tensor p(logits.shape());
    for (std::int64_t i = 0; i < n; ++i) {
        const real* z = logits.data() + i * k;
        real* out = p.data() + i * k;
        const real mx = *std::max_element(z, z + k);
        real sum = 0;
        for (std::int64_t j = 0; j < k; ++j) {
            out[j] = std::exp(z[j] - mx);
            sum += out[j];
        }
        for (std::int64_t j = 0; j < k; ++j) out[j] /= sum;
    }
    return p;
}

Var softmax_cross_entropy(const Var& logits, std::span<const int> labels) {
    require_rank("softmax_cross_entropy", "logits", logits, 2);
    const std::int64_t n = logits.value().dim(0);
    const std::int64_t k = logits.value().dim(1);
    if (static_cast<std::int64_t>(labels.size()) != n) {
        shape_fail("softmax_cross_entropy", fmt::format("{} labels for {} rows", labels.size(), n));
    }
    if (n < 1) shape_fail("softmax_cross_entropy", "empty batch");
    auto probs = std::make_shared<Tensor>(softmax(logits.value()));
    std::vector<int> lab(labels.begin(), labels.end());
    real loss = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        const int y = lab[static_cast<std::size_t>(i)];
        if (y < 0 || y >= k) shape_fail("softmax_cross_entropy", fmt::format("label {} outside [0, {})", y, k));
        const real* z = logits.value().data() + i * k;
        const real mx = *std::max_element(z, z + k);
        real sum = 0;
        for (std::int64_t j = 0; j < k; ++j) sum += std::exp(z[j] - mx);
        loss += mx + std::log(sum) - z[y];
    }
    Tensor out({1}, loss / static_cast<real>(n));
    return make_result(std::move(out), {logits}, "softmax_cross_entropy", [probs, lab = std::move(lab), n, k](Node& self) {
        const real g = self.tensor.grad()[0] / static_cast<real>(n);
        auto dz = input_grad(self, 0);
        for (std::int64_t i = 0; i < n; ++i) {
            for (std::int64_t j = 0; j < k; ++j) {
                const auto idx = static_cast<std::size_t>(i * k + j);
                dz[idx] += g * ((*probs)[idx] - (j == lab[static_cast<std::size_t>(i)] ? real{1} : real{0}));
            }
        }
    });
}

Var weighted_sum(const Var& x, const Tensor& weights) {
    if (x.value().size() != weights.size()) {
        shape_fail("weighted_sum", fmt::format("{} values vs {} weights", x.value().size(), weights.size()));
    }
    real acc = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) acc += x.value()[i] * weights[i];
    return make_result(Tensor({1}, acc), {x}, "weighted_sum", [weights](Node& self) {
        const real g = self.tensor.grad()[0];
        auto dx = input_grad(self, 0);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g * weights[i];
    });
}

Var crop(const Var& source, std::int64_t offset, const Shape& full_shape, const Shape& out_shape) {
    if (full_shape.size() != out_shape.size()) shape_fail("crop", "full and output shapes differ in rank");
    for (std::size_t d = 0; d < full_shape.size(); ++d) {
        if (out_shape[d] > full_shape[d] || out_shape[d] < 0) {
            shape_fail("crop", fmt::format("output {} does not fit in {}", shape_string(out_shape), shape_string(full_shape)));
        }
    }
    const std::int64_t full = numel(full_shape);
    if (offset < 0 || offset + full > static_cast<std::int64_t>(source.value().size())) {
        shape_fail("crop", fmt::format("segment [{}, {}) exceeds source of {} values", offset, offset + full,
                                       source.value().size()));
    }
    // Gather map: flat index into the source for every output element.
    auto index = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(numel(out_shape)));
    const std::size_t rank = out_shape.size();
    std::vector<std::int64_t> stride(rank, 1);
    for (std::size_t d = rank; d-- > 1;) stride[d - 1] = stride[d] * full_shape[d];
    std::vector<std::int64_t> pos(rank, 0);
    for (std::size_t i = 0; i < index->size(); ++i) {
        std::int64_t flat = offset;
        for (std::size_t d = 0; d < rank; ++d) flat += pos[d] * stride[d];
        (*index)[i] = flat;
        for (std::size_t d = rank; d-- > 0;) {
            if (++pos[d] < out_shape[d]) break;
            pos[d] = 0;
        }
    }
    Tensor y(out_shape);
    const real* src = source.value().data();
    for (std::size_t i = 0; i < index->size(); ++i) y[i] = src[(*index)[i]];
    return make_result(std::move(y), {source}, "crop", [index](Node& self) {
        const auto gy = self.tensor.grad();
        auto ds = input_grad(self, 0);
        for (std::size_t i = 0; i < gy.size(); ++i) ds[static_cast<std::size_t>((*index)[i])] += gy[i];
    });
}

}  // namespace metaprune::tensorcore
