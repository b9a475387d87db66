#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "giv/tensor.hpp"

// Differentiable tensor operations. Every op records a backward rule on the
// thread's current tape when at least one input requires a gradient.
namespace giv::ag {

// [m x k] * [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float factor);
// Adds `row` (numel == last dim of a) to every row of a 2-D tensor.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor square(const Tensor& a);

Tensor gelu(const Tensor& a);
Tensor silu(const Tensor& a);

// Numerically stable softmax along `axis` (negative counts from the back).
Tensor softmax(const Tensor& x, int axis);
// Scaled dot-product attention over a packed [N x 3d] q|k|v matrix split
// into `heads` column groups, returning the [N x d] head outputs side by
// side. Each head's [N x N] probabilities are appended to `probs` if given.
Tensor multi_head_attention(const Tensor& qkv, std::int64_t heads,
                            std::vector<Tensor>* probs = nullptr);
// Normalizes over the last axis, then applies gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  float eps);

Tensor reshape(const Tensor& a, Shape shape);
Tensor slice_rows(const Tensor& a, std::int64_t begin, std::int64_t end);
Tensor slice_cols(const Tensor& a, std::int64_t begin, std::int64_t end);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
// out[i, :] = table[indices[i], :]
Tensor gather_rows(const Tensor& table, std::span<const std::int64_t> indices);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Mean squared error over all elements.
Tensor mse(const Tensor& prediction, const Tensor& target);

}  // namespace giv::ag
