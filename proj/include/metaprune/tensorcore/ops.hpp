#pragma once

// Differentiable ops. Activations use NCHW layout; weights are
// [out, in, kh, kw] for standard convolutions, [C, 1, kh, kw] for depthwise
// and [out, in] for dense layers.
//
// Shape algebra:
//   dense(x[N,I], w[O,I], b[O])                     -> [N,O]
//   conv2d(x[N,C,H,W], w[O,C,kh,kw], s, p)          -> [N,O,(H+2p-kh)/s+1,(W+2p-kw)/s+1]
//   depthwise_conv2d(x[N,C,H,W], w[C,1,kh,kw], s, p)-> [N,C,...]
//   channel_norm_affine(x[N,C,...], g[C], b[C])     -> same as x
//   global_avg_pool(x[N,C,H,W])                     -> [N,C]
//   softmax_cross_entropy(z[N,K], labels[N])        -> [1] (batch mean)

#include <cstdint>
#include <span>
#include <vector>

#include "metaprune/tensorcore/autograd.hpp"

namespace metaprune::tensorcore {

inline constexpr real kNormEps = real(1e-12);

Var dense(const Var& x, const Var& w, const Var& bias = {});
Var conv2d(const Var& x, const Var& w, int stride, int padding);
Var depthwise_conv2d(const Var& x, const Var& w, int stride, int padding);

/// Per-channel mean and biased variance.
struct NormStats {
    std::vector<real> mean;
    std::vector<real> var;
};

/// Normalizes with the batch's own statistics (training / calibration mode).
/// `gamma`/`beta` may be undefined for unit scale and zero shift. When
/// `stats_out` is given it receives the batch statistics.
Var channel_norm_affine(const Var& x, const Var& gamma, const Var& beta, real eps = kNormEps,
                        NormStats* stats_out = nullptr);

/// Normalizes with fixed statistics (evaluation mode).
Var channel_norm_fixed(const Var& x, const Var& gamma, const Var& beta, const NormStats& stats, real eps = kNormEps);

Var relu(const Var& x);
Var add(const Var& a, const Var& b);
Var add_scalar(const Var& x, real c);
Var global_avg_pool(const Var& x);
Var max_pool2d(const Var& x, int kernel, int stride, int padding);
Var flatten(const Var& x);
Var softmax_cross_entropy(const Var& logits, std::span<const int> labels);

/// sum(x * weights); a generic scalar functional for gradient checks.
Var weighted_sum(const Var& x, const Tensor& weights);

/// Reads a block of shape `full_shape` starting at `offset` of a flat source
/// and keeps the leading `out_shape` corner of it (every out dim <= full dim).
Var crop(const Var& source, std::int64_t offset, const Shape& full_shape, const Shape& out_shape);

/// Row-wise softmax probabilities (no graph).
Tensor softmax(const Tensor& logits);

}  // namespace metaprune::tensorcore
