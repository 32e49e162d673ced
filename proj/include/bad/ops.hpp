#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "bad/autodiff.hpp"

namespace bad::ops {

// Matrix ops treat every tensor as rows x cols (see Tensor::cols()).
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, real s);
// x[r, c] + bias[c]
Var add_bias(Var x, Var bias);
Var linear(Var x, Var weight, Var bias);
Var relu(Var x);
Var gelu(Var x);

// Per-row normalization to zero mean / unit variance, then gain * xhat + bias.
Var layer_norm(Var x, Var gain, Var bias, real epsilon = real(1e-5));

// One block of rows attending to another block of rows. An empty mask means
// every key is allowed.
struct AttentionSegment {
  std::size_t query_begin = 0;
  std::size_t query_count = 0;
  std::size_t key_begin = 0;
  std::size_t key_count = 0;
  AttentionMask mask;
};

// Multi-head scaled dot-product attention over independent segments.
// queries [Nq, d], keys [Nk, d], values [Nk, dv]; d and dv divisible by heads.
// Disallowed keys receive exactly zero weight (they are skipped, which is the
// additive -inf limit). A query row with no allowed key throws.
Var attention(Var queries, Var keys, Var values, std::span<const AttentionSegment> segments,
              std::size_t heads, real scale);

// Single-segment, single-head form.
Var masked_attention(Var queries, Var keys, Var values, const AttentionMask& mask, real scale);

Var gather_rows(Var x, std::span<const std::size_t> rows);
Var concat_rows(std::span<const Var> parts);
// Mean over all rows -> [1, cols].
Var mean_rows(Var x);
// Each row repeated `factor` times in place.
Var repeat_rows(Var x, std::size_t factor);

// Sum_i weight_i * -log softmax(logits_i)[target_i]. Empty weights mean 1.
Var cross_entropy(Var logits, std::span<const std::size_t> targets, std::span<const real> weights = {});
// -log softmax(row)[target] for a single row of logits.
Var cross_entropy(Var logits, std::size_t target);

Var sum(Var x);
Var mean(Var x);
Var mean_abs(Var x);
Var mean_square(Var x);

// Value of x, no gradient.
Var stop_gradient(Var x);
// Value of `quantized`, gradient routed unchanged to `latent`.
Var straight_through(Var latent, Var quantized);

// 1-D convolution over `batch` equal-length sequences stacked by rows.
// x [batch*T, Cin], weight [Cout, kernel*Cin] (tap-major), bias [Cout].
Var conv1d(Var x, Var weight, Var bias, std::size_t batch, std::size_t kernel, std::size_t stride,
           std::size_t padding);

std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride, std::size_t padding);

}  // namespace bad::ops
