#pragma once

#include "lgpt/numerics/graph.hpp"

#include <cstddef>
#include <cstdint>
#include <vector>

// Differentiable operations on Graph nodes. Sequence tensors are time-major:
// [T, C] or [B, T, C].
namespace lgpt {

// Row offsets [0, t1, ..., T] splitting a packed [T, C] sequence into
// independent segments. Empty means a single segment.
using Segments = std::vector<std::size_t>;

enum class Unary : std::uint8_t { tanh, relu, gelu, elu, silu, sigmoid, abs, square, exp, log };

// [..., n, k] x [k, m] -> [..., n, m]
Var matmul(Var a, Var b);
// [..., n, k] x [m, k]^T -> [..., n, m]
Var matmul_nt(Var a, Var b);
// Elementwise; b may also be a suffix-shaped tensor broadcast over a's leading dims.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
// abs has subgradient 0 at 0.
Var unary(Var x, Unary kind);
inline Var tanh(Var x) { return unary(x, Unary::tanh); }
inline Var relu(Var x) { return unary(x, Unary::relu); }
inline Var gelu(Var x) { return unary(x, Unary::gelu); }
inline Var elu(Var x) { return unary(x, Unary::elu); }
inline Var silu(Var x) { return unary(x, Unary::silu); }
inline Var sigmoid(Var x) { return unary(x, Unary::sigmoid); }
inline Var abs(Var x) { return unary(x, Unary::abs); }
inline Var square(Var x) { return unary(x, Unary::square); }
inline Var exp(Var x) { return unary(x, Unary::exp); }
inline Var log(Var x) { return unary(x, Unary::log); }

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

Var sum(Var x);
Var mean(Var x);
Var reshape(Var x, Shape shape);
// Identity forward, zero gradient.
Var stop_gradient(Var x);

Var concat(const std::vector<Var>& parts, std::size_t axis);
// Rows [begin, end) along axis 0.
Var slice_rows(Var x, std::size_t begin, std::size_t end);
// Selects rows along axis 0 of a rank-2 tensor; duplicates allowed.
Var gather_rows(Var x, std::vector<std::size_t> rows);
// table [V, D] -> [ids.size(), D]
Var embedding(Var table, std::vector<std::size_t> ids);

inline constexpr double kLayerNormEps = 1e-8;

// Normalizes over the last axis.
Var layer_norm(Var x, double eps = kLayerNormEps);
Var layer_norm(Var x, Var gamma, Var beta, double eps = kLayerNormEps);
// Training-mode batch normalization: statistics over all leading rows, per column.
Var batch_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
// Softmax over the last axis.
Var softmax(Var x);

// Sum over rows of weight[i] * -log softmax(logits[i])[labels[i]]; rows with
// label < 0 are skipped.
Var cross_entropy(Var logits, std::vector<std::int64_t> labels, std::vector<double> weights);

struct AttentionSpec {
    std::size_t heads = 1;
    bool causal = false;
    Segments segments;
};
// Multi-head scaled dot-product attention on [T, D] projections.
Var attention(Var q, Var k, Var v, AttentionSpec spec);

struct Conv1dSpec {
    std::size_t stride = 1;
    std::size_t pad_left = 0;
    std::size_t pad_right = 0;
};
// x [B, T, Cin], weight [k, Cin, Cout], bias [Cout] -> [B, (T + pads - k) / stride + 1, Cout]
Var conv1d(Var x, Var weight, Var bias, Conv1dSpec spec);

struct ConvTranspose1dSpec {
    std::size_t stride = 1;
    std::size_t crop_left = 0;
    std::size_t crop_right = 0;
};
// x [B, T, Cin], weight [Cin, k, Cout], bias [Cout] -> [B, (T - 1) * stride + k - crops, Cout]
Var conv_transpose1d(Var x, Var weight, Var bias, ConvTranspose1dSpec spec);

// x [T, C], weight [k, C], bias [C]; "same" padding, no mixing across segments.
Var depthwise_conv1d(Var x, Var weight, Var bias, Segments segments = {});

// Magnitude STFT of x [B, T] (or [T]) with frames starting at multiples of
// hop and the tail zero-padded: [B, ceil(T / hop), win / 2 + 1].
Var stft_magnitude(Var x, std::size_t win, std::size_t hop, bool hann = true);

} // namespace lgpt
