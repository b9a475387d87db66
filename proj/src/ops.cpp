#include "giv/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "giv/error.hpp"

namespace giv::ag {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMat>;
using MatMap = Eigen::Map<RowMat>;
using ConstArrMap = Eigen::Map<const Eigen::ArrayXf>;
using ArrMap = Eigen::Map<Eigen::ArrayXf>;
using Impl = detail::TensorImpl;

template <class T>
using RowMatT = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ArrT = Eigen::Array<T, Eigen::Dynamic, 1>;

ConstMatMap as_mat(const Buffer& v, std::int64_t rows, std::int64_t cols) {
  return ConstMatMap(v.data(), rows, cols);
}
MatMap as_mat(Buffer& v, std::int64_t rows, std::int64_t cols) {
  return MatMap(v.data(), rows, cols);
}
ConstArrMap as_arr(const Buffer& v) {
  return ConstArrMap(v.data(), static_cast<Eigen::Index>(v.size()));
}
ArrMap as_arr(Buffer& v) {
  return ArrMap(v.data(), static_cast<Eigen::Index>(v.size()));
}

template <class T>
Eigen::Map<const RowMatT<T>> mat_of(const AlignedVector<T>& v, std::int64_t rows,
                                    std::int64_t cols) {
  return Eigen::Map<const RowMatT<T>>(v.data(), rows, cols);
}
template <class T>
Eigen::Map<RowMatT<T>> mat_of(AlignedVector<T>& v, std::int64_t rows, std::int64_t cols) {
  return Eigen::Map<RowMatT<T>>(v.data(), rows, cols);
}
template <class T>
Eigen::Map<const ArrT<T>> arr_of(const AlignedVector<T>& v) {
  return Eigen::Map<const ArrT<T>>(v.data(), static_cast<Eigen::Index>(v.size()));
}
template <class T>
Eigen::Map<ArrT<T>> arr_of(AlignedVector<T>& v) {
  return Eigen::Map<ArrT<T>>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// Double view of a tensor's value: its own double evaluation when present,
// otherwise its f32 data.
AlignedVector<double> widen(const Tensor& t) {
  const auto& w = t.impl()->wide;
  if (!w.empty()) return w;
  const auto& d = t.impl()->data;
  return {d.begin(), d.end()};
}

template <class Compute>
Tensor with_wide(Tensor out, Compute&& compute) {
  if (wide_enabled()) out.impl()->wide = compute();
  return out;
}

// Wraps the result of a forward computation and, if recording, registers
// the backward rule built by `make_rule(out_impl)`.
template <class MakeRule>
Tensor emit(Shape shape, Buffer data, std::initializer_list<Tensor> inputs,
            MakeRule&& make_rule) {
  Tensor out = Tensor::from_buffer(std::move(shape), std::move(data));
  Tape* tape = current_tape();
  if (tape == nullptr) return out;
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (!any) return out;
  out.impl()->requires_grad = true;
  out.impl()->is_leaf = false;
  std::vector<std::shared_ptr<Impl>> in;
  in.reserve(inputs.size());
  for (const auto& t : inputs) in.push_back(t.impl());
  tape->record(out.impl(), std::move(in), make_rule(out.impl().get()));
  return out;
}

template <class MakeRule>
Tensor emit_many(Shape shape, Buffer data, std::span<const Tensor> inputs,
                 MakeRule&& make_rule) {
  Tensor out = Tensor::from_buffer(std::move(shape), std::move(data));
  Tape* tape = current_tape();
  if (tape == nullptr) return out;
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (!any) return out;
  out.impl()->requires_grad = true;
  out.impl()->is_leaf = false;
  std::vector<std::shared_ptr<Impl>> in;
  for (const auto& t : inputs) in.push_back(t.impl());
  tape->record(out.impl(), std::move(in), make_rule(out.impl().get()));
  return out;
}

void require_rank(const Tensor& t, int rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     ", got " + shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

// Forward kernels, shared by the f32 path and the double evaluation.

template <class T>
AlignedVector<T> matmul_fwd(const AlignedVector<T>& a, const AlignedVector<T>& b, std::int64_t m,
                          std::int64_t k, std::int64_t n) {
  AlignedVector<T> out(static_cast<std::size_t>(m * n));
  mat_of(out, m, n).noalias() = mat_of(a, m, k) * mat_of(b, k, n);
  return out;
}

template <class T>
AlignedVector<T> transpose_fwd(const AlignedVector<T>& a, std::int64_t r, std::int64_t c) {
  AlignedVector<T> out(a.size());
  mat_of(out, c, r) = mat_of(a, r, c).transpose();
  return out;
}

template <class T, class Op>
AlignedVector<T> zip_fwd(const AlignedVector<T>& a, const AlignedVector<T>& b, Op op) {
  AlignedVector<T> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = op(a[i], b[i]);
  return out;
}

template <class T>
AlignedVector<T> add_row_fwd(const AlignedVector<T>& a, const AlignedVector<T>& row, std::int64_t r,
                           std::int64_t c) {
  AlignedVector<T> out(a.size());
  auto rowv = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(row.data(), c);
  mat_of(out, r, c) = mat_of(a, r, c).rowwise() + rowv;
  return out;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

template <class T>
AlignedVector<T> gelu_fwd(const AlignedVector<T>& x) {
  const T c = static_cast<T>(kGeluC), k = static_cast<T>(kGeluA);
  AlignedVector<T> out(x.size());
  const auto v = arr_of(x);
  arr_of(out) = T(0.5) * v * (T(1) + (c * (v + k * v.cube())).tanh());
  return out;
}

template <class T>
AlignedVector<T> silu_fwd(const AlignedVector<T>& x) {
  AlignedVector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / (T(1) + std::exp(-x[i]));
  return out;
}

template <class T>
AlignedVector<T> softmax_fwd(const AlignedVector<T>& in, std::int64_t outer, std::int64_t inner,
                           std::int64_t len) {
  AlignedVector<T> out(in.size());
  if (inner == 1) {
    for (std::int64_t o = 0; o < outer; ++o) {
      Eigen::Map<const ArrT<T>> row(in.data() + o * len, len);
      Eigen::Map<ArrT<T>> dst(out.data() + o * len, len);
      dst = (row - row.maxCoeff()).exp();
      dst /= dst.sum();
    }
    return out;
  }
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t j = 0; j < inner; ++j) {
      const std::int64_t base = o * len * inner + j;
      T mx = in[base];
      for (std::int64_t k = 1; k < len; ++k) mx = std::max(mx, in[base + k * inner]);
      T total = 0;
      for (std::int64_t k = 0; k < len; ++k) {
        const T e = std::exp(in[base + k * inner] - mx);
        out[base + k * inner] = e;
        total += e;
      }
      for (std::int64_t k = 0; k < len; ++k) out[base + k * inner] /= total;
    }
  }
  return out;
}

template <class T>
AlignedVector<T> layer_norm_fwd(const AlignedVector<T>& in, const AlignedVector<T>& gv,
                              const AlignedVector<T>& bv, std::int64_t rows, std::int64_t cols,
                              T eps, AlignedVector<T>* xhat, AlignedVector<T>* inv_std) {
  AlignedVector<T> out(in.size());
  if (xhat) xhat->resize(in.size());
  if (inv_std) inv_std->resize(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* row = in.data() + r * cols;
    T mu = 0;
    for (std::int64_t j = 0; j < cols; ++j) mu += row[j];
    mu /= static_cast<T>(cols);
    T var = 0;
    for (std::int64_t j = 0; j < cols; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(cols);
    const T is = T(1) / std::sqrt(var + eps);
    if (inv_std) (*inv_std)[r] = is;
    for (std::int64_t j = 0; j < cols; ++j) {
      const T h = (row[j] - mu) * is;
      if (xhat) (*xhat)[r * cols + j] = h;
      out[r * cols + j] = h * gv[j] + bv[j];
    }
  }
  return out;
}

template <class T>
AlignedVector<T> slice_cols_fwd(const AlignedVector<T>& a, std::int64_t rows, std::int64_t cols,
                              std::int64_t begin, std::int64_t width) {
  AlignedVector<T> out(static_cast<std::size_t>(rows * width));
  mat_of(out, rows, width) = mat_of(a, rows, cols).middleCols(begin, width);
  return out;
}

template <class T>
AlignedVector<T> concat_cols_fwd(const std::vector<AlignedVector<T>>& parts,
                               const std::vector<std::int64_t>& widths, std::int64_t rows,
                               std::int64_t cols) {
  AlignedVector<T> out(static_cast<std::size_t>(rows * cols));
  auto dst = mat_of(out, rows, cols);
  std::int64_t offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    dst.middleCols(offset, widths[i]) = mat_of(parts[i], rows, widths[i]);
    offset += widths[i];
  }
  return out;
}

template <class T>
AlignedVector<T> gather_fwd(const AlignedVector<T>& table, std::span<const std::int64_t> indices,
                          std::int64_t cols) {
  AlignedVector<T> out(indices.size() * static_cast<std::size_t>(cols));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::copy_n(table.begin() + indices[i] * cols, cols,
                out.begin() + static_cast<std::int64_t>(i) * cols);
  }
  return out;
}

template <class T>
double total_of(const AlignedVector<T>& v) {
  double total = 0.0;
  for (T x : v) total += static_cast<double>(x);
  return total;
}

template <class T>
double squared_error_total(const AlignedVector<T>& p, const AlignedVector<T>& t) {
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = static_cast<double>(p[i]) - static_cast<double>(t[i]);
    total += d * d;
  }
  return total;
}

template <class T>
using StridedMat = Eigen::Map<RowMatT<T>, 0, Eigen::OuterStride<>>;
template <class T>
using ConstStridedMat = Eigen::Map<const RowMatT<T>, 0, Eigen::OuterStride<>>;

// Scaled dot-product attention per head over a packed [N x 3d] q|k|v
// matrix. Row-softmax probabilities go to `probs` (heads x N x N) when it
// is non-null. Query rows are processed in blocks so the score rows are
// still in cache for the softmax and the value product.
template <class T>
AlignedVector<T> attention_fwd(const AlignedVector<T>& qkv, std::int64_t n, std::int64_t d,
                             std::int64_t heads, AlignedVector<T>* probs) {
  constexpr std::int64_t kRowBlock = 128;
  const auto hd = d / heads;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(hd));
  AlignedVector<T> out(static_cast<std::size_t>(n * d));
  AlignedVector<T> scratch;
  if (probs != nullptr) {
    probs->resize(static_cast<std::size_t>(heads * n * n));
  } else {
    scratch.resize(static_cast<std::size_t>(std::min(n, kRowBlock) * n));
  }
  const Eigen::OuterStride<> packed(3 * d), plain(d);
  for (std::int64_t h = 0; h < heads; ++h) {
    ConstStridedMat<T> q(qkv.data() + h * hd, n, hd, packed);
    ConstStridedMat<T> k(qkv.data() + d + h * hd, n, hd, packed);
    ConstStridedMat<T> v(qkv.data() + 2 * d + h * hd, n, hd, packed);
    StridedMat<T> o(out.data() + h * hd, n, hd, plain);
    for (std::int64_t r0 = 0; r0 < n; r0 += kRowBlock) {
      const auto rows = std::min(kRowBlock, n - r0);
      T* p_data = probs != nullptr ? probs->data() + (h * n + r0) * n : scratch.data();
      Eigen::Map<RowMatT<T>> p(p_data, rows, n);
      p.noalias() = (q.middleRows(r0, rows) * inv_sqrt) * k.transpose();
      for (std::int64_t r = 0; r < rows; ++r) {
        auto row = p.row(r).array();
        row = (row - row.maxCoeff()).exp();
        row /= row.sum();
      }
      o.middleRows(r0, rows).noalias() = p * v;
    }
  }
  return out;
}
}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) +
                     " * " + shape_str(b.shape()));
  }
  auto out = emit({m, n}, matmul_fwd(a.impl()->data, b.impl()->data, m, k, n), {a, b},
                  [a, b, m, k, n](Impl*) {
                    return [a, b, m, k, n](const Buffer& g) {
                      auto G = as_mat(g, m, n);
                      if (a.requires_grad()) {
                        as_mat(a.impl()->ensure_grad(), m, k).noalias() +=
                            G * as_mat(b.impl()->data, k, n).transpose();
                      }
                      if (b.requires_grad()) {
                        as_mat(b.impl()->ensure_grad(), k, n).noalias() +=
                            as_mat(a.impl()->data, m, k).transpose() * G;
                      }
                    };
                  });
  return with_wide(std::move(out), [&] { return matmul_fwd(widen(a), widen(b), m, k, n); });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const auto r = a.dim(0), c = a.dim(1);
  auto out = emit({c, r}, transpose_fwd(a.impl()->data, r, c), {a}, [a, r, c](Impl*) {
    return [a, r, c](const Buffer& g) {
      as_mat(a.impl()->ensure_grad(), r, c) += as_mat(g, c, r).transpose();
    };
  });
  return with_wide(std::move(out), [&] { return transpose_fwd(widen(a), r, c); });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto op = [](auto x, auto y) { return x + y; };
  auto out = emit(a.shape(), zip_fwd(a.impl()->data, b.impl()->data, op), {a, b}, [a, b](Impl*) {
    return [a, b](const Buffer& g) {
      if (a.requires_grad()) as_arr(a.impl()->ensure_grad()) += as_arr(g);
      if (b.requires_grad()) as_arr(b.impl()->ensure_grad()) += as_arr(g);
    };
  });
  return with_wide(std::move(out), [&] { return zip_fwd(widen(a), widen(b), op); });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const auto op = [](auto x, auto y) { return x - y; };
  auto out = emit(a.shape(), zip_fwd(a.impl()->data, b.impl()->data, op), {a, b}, [a, b](Impl*) {
    return [a, b](const Buffer& g) {
      if (a.requires_grad()) as_arr(a.impl()->ensure_grad()) += as_arr(g);
      if (b.requires_grad()) as_arr(b.impl()->ensure_grad()) -= as_arr(g);
    };
  });
  return with_wide(std::move(out), [&] { return zip_fwd(widen(a), widen(b), op); });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto op = [](auto x, auto y) { return x * y; };
  auto out = emit(a.shape(), zip_fwd(a.impl()->data, b.impl()->data, op), {a, b}, [a, b](Impl*) {
    return [a, b](const Buffer& g) {
      if (a.requires_grad()) {
        as_arr(a.impl()->ensure_grad()) += as_arr(g) * as_arr(b.impl()->data);
      }
      if (b.requires_grad()) {
        as_arr(b.impl()->ensure_grad()) += as_arr(g) * as_arr(a.impl()->data);
      }
    };
  });
  return with_wide(std::move(out), [&] { return zip_fwd(widen(a), widen(b), op); });
}

Tensor scale(const Tensor& a, float factor) {
  Buffer data(a.impl()->data.size());
  as_arr(data) = as_arr(a.impl()->data) * factor;
  auto out = emit(a.shape(), std::move(data), {a}, [a, factor](Impl*) {
    return [a, factor](const Buffer& g) {
      as_arr(a.impl()->ensure_grad()) += as_arr(g) * factor;
    };
  });
  return with_wide(std::move(out), [&] {
    auto w = widen(a);
    for (auto& v : w) v *= static_cast<double>(factor);
    return w;
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  require_rank(a, 2, "add_row");
  const auto r = a.dim(0), c = a.dim(1);
  if (row.numel() != c) {
    throw ShapeError("add_row: row " + shape_str(row.shape()) + " does not match " +
                     shape_str(a.shape()));
  }
  auto out = emit(a.shape(), add_row_fwd(a.impl()->data, row.impl()->data, r, c), {a, row},
                  [a, row, r, c](Impl*) {
                    return [a, row, r, c](const Buffer& g) {
                      if (a.requires_grad()) as_arr(a.impl()->ensure_grad()) += as_arr(g);
                      if (row.requires_grad()) {
                        Eigen::Map<Eigen::RowVectorXf>(row.impl()->ensure_grad().data(), c) +=
                            as_mat(g, r, c).colwise().sum();
                      }
                    };
                  });
  return with_wide(std::move(out), [&] { return add_row_fwd(widen(a), widen(row), r, c); });
}

Tensor square(const Tensor& a) { return mul(a, a); }

Tensor gelu(const Tensor& a) {
  auto out = emit(a.shape(), gelu_fwd(a.impl()->data), {a}, [a](Impl*) {
    return [a](const Buffer& g) {
      constexpr float kC = static_cast<float>(kGeluC);
      constexpr float kA = static_cast<float>(kGeluA);
      const auto& x = a.impl()->data;
      auto& ga = a.impl()->ensure_grad();
      const auto v = as_arr(x);
      const Eigen::ArrayXf th = (kC * (v + kA * v.cube())).tanh();
      const auto dth = (1.0f - th.square()) * kC * (1.0f + 3.0f * kA * v.square());
      as_arr(ga) += as_arr(g) * (0.5f * (1.0f + th) + 0.5f * v * dth);
    };
  });
  return with_wide(std::move(out), [&] { return gelu_fwd(widen(a)); });
}

Tensor silu(const Tensor& a) {
  auto out = emit(a.shape(), silu_fwd(a.impl()->data), {a}, [a](Impl*) {
    return [a](const Buffer& g) {
      const auto& x = a.impl()->data;
      auto& ga = a.impl()->ensure_grad();
      for (std::size_t i = 0; i < x.size(); ++i) {
        const float s = 1.0f / (1.0f + std::exp(-x[i]));
        ga[i] += g[i] * s * (1.0f + x[i] * (1.0f - s));
      }
    };
  });
  return with_wide(std::move(out), [&] { return silu_fwd(widen(a)); });
}

Tensor softmax(const Tensor& x, int axis) {
  if (axis < 0) axis += x.rank();
  if (axis < 0 || axis >= x.rank()) {
    throw ShapeError("softmax: axis out of range for " + shape_str(x.shape()));
  }
  const auto& s = x.shape();
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (int i = axis + 1; i < x.rank(); ++i) inner *= s[i];
  const std::int64_t len = s[axis];
  auto out = emit(s, softmax_fwd(x.impl()->data, outer, inner, len), {x},
                  [x, outer, inner, len](Impl* out_impl) {
    return [x, out_impl, outer, inner, len](const Buffer& g) {
      const auto& y = out_impl->data;
      auto& gx = x.impl()->ensure_grad();
      if (inner == 1) {
        for (std::int64_t o = 0; o < outer; ++o) {
          ConstArrMap yr(y.data() + o * len, len);
          ConstArrMap gr(g.data() + o * len, len);
          const float dot = (yr * gr).sum();
          ArrMap(gx.data() + o * len, len) += yr * (gr - dot);
        }
        return;
      }
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t j = 0; j < inner; ++j) {
          const std::int64_t base = o * len * inner + j;
          float dot = 0.0f;
          for (std::int64_t k = 0; k < len; ++k) dot += y[base + k * inner] * g[base + k * inner];
          for (std::int64_t k = 0; k < len; ++k) {
            const auto idx = base + k * inner;
            gx[idx] += y[idx] * (g[idx] - dot);
          }
        }
      }
    };
  });
  return with_wide(std::move(out), [&] { return softmax_fwd(widen(x), outer, inner, len); });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
  const auto cols = x.shape().back();
  if (gain.numel() != cols || bias.numel() != cols) {
    throw ShapeError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                     shape_str(bias.shape()) + " do not match last axis of " +
                     shape_str(x.shape()));
  }
  const auto rows = x.numel() / cols;
  Buffer xhat, inv_std;
  auto data = layer_norm_fwd(x.impl()->data, gain.impl()->data, bias.impl()->data, rows, cols,
                             eps, &xhat, &inv_std);
  auto out = emit(x.shape(), std::move(data), {x, gain, bias},
              [x, gain, bias, rows, cols, xhat = std::move(xhat),
               inv_std = std::move(inv_std)](Impl*) mutable {
                return [x, gain, bias, rows, cols, xhat = std::move(xhat),
                        inv_std = std::move(inv_std)](const Buffer& g) {
                  const auto& gv = gain.impl()->data;
                  if (gain.requires_grad()) {
                    auto& gg = gain.impl()->ensure_grad();
                    for (std::int64_t r = 0; r < rows; ++r) {
                      for (std::int64_t j = 0; j < cols; ++j) {
                        gg[j] += g[r * cols + j] * xhat[r * cols + j];
                      }
                    }
                  }
                  if (bias.requires_grad()) {
                    auto& gb = bias.impl()->ensure_grad();
                    for (std::int64_t r = 0; r < rows; ++r) {
                      for (std::int64_t j = 0; j < cols; ++j) gb[j] += g[r * cols + j];
                    }
                  }
                  if (!x.requires_grad()) return;
                  auto& gx = x.impl()->ensure_grad();
                  const float inv_n = 1.0f / static_cast<float>(cols);
                  for (std::int64_t r = 0; r < rows; ++r) {
                    float mean_d = 0.0f, mean_dx = 0.0f;
                    for (std::int64_t j = 0; j < cols; ++j) {
                      const float d = g[r * cols + j] * gv[j];
                      mean_d += d;
                      mean_dx += d * xhat[r * cols + j];
                    }
                    mean_d *= inv_n;
                    mean_dx *= inv_n;
                    for (std::int64_t j = 0; j < cols; ++j) {
                      const float d = g[r * cols + j] * gv[j];
                      gx[r * cols + j] +=
                          inv_std[r] * (d - mean_d - xhat[r * cols + j] * mean_dx);
                    }
                  }
                };
              });
  return with_wide(std::move(out), [&] {
    return layer_norm_fwd(widen(x), widen(gain), widen(bias), rows, cols,
                          static_cast<double>(eps), static_cast<AlignedVector<double>*>(nullptr),
                          static_cast<AlignedVector<double>*>(nullptr));
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                     shape_str(shape));
  }
  auto out = emit(std::move(shape), a.impl()->data, {a}, [a](Impl*) {
    return [a](const Buffer& g) { as_arr(a.impl()->ensure_grad()) += as_arr(g); };
  });
  return with_wide(std::move(out), [&] { return widen(a); });
}

Tensor slice_rows(const Tensor& a, std::int64_t begin, std::int64_t end) {
  require_rank(a, 2, "slice_rows");
  const auto cols = a.dim(1);
  if (begin < 0 || end > a.dim(0) || begin >= end) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for " + shape_str(a.shape()));
  }
  const auto& in = a.impl()->data;
  Buffer data(in.begin() + begin * cols, in.begin() + end * cols);
  auto out = emit({end - begin, cols}, std::move(data), {a}, [a, begin, cols](Impl*) {
    return [a, begin, cols](const Buffer& g) {
      auto& ga = a.impl()->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[begin * cols + i] += g[i];
    };
  });
  return with_wide(std::move(out), [&] {
    const auto w = widen(a);
    return AlignedVector<double>(w.begin() + begin * cols, w.begin() + end * cols);
  });
}

Tensor slice_cols(const Tensor& a, std::int64_t begin, std::int64_t end) {
  require_rank(a, 2, "slice_cols");
  const auto rows = a.dim(0), cols = a.dim(1);
  if (begin < 0 || end > cols || begin >= end) {
    throw ShapeError("slice_cols: [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for " + shape_str(a.shape()));
  }
  const auto width = end - begin;
  auto out = emit({rows, width}, slice_cols_fwd(a.impl()->data, rows, cols, begin, width), {a},
                  [a, rows, cols, begin, width](Impl*) {
                    return [a, rows, cols, begin, width](const Buffer& g) {
                      as_mat(a.impl()->ensure_grad(), rows, cols).middleCols(begin, width) +=
                          as_mat(g, rows, width);
                    };
                  });
  return with_wide(std::move(out),
                   [&] { return slice_cols_fwd(widen(a), rows, cols, begin, width); });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const auto cols = parts[0].dim(1);
  std::int64_t rows = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_rows");
    if (p.dim(1) != cols) {
      throw ShapeError("concat_rows: column mismatch " + shape_str(parts[0].shape()) +
                       " vs " + shape_str(p.shape()));
    }
    rows += p.dim(0);
  }
  Buffer data;
  data.reserve(static_cast<std::size_t>(rows * cols));
  for (const auto& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
  std::vector<Tensor> keep(parts.begin(), parts.end());
  auto out = emit_many({rows, cols}, std::move(data), parts, [keep](Impl*) {
    return [keep](const Buffer& g) {
      std::size_t offset = 0;
      for (const auto& p : keep) {
        const auto n = static_cast<std::size_t>(p.numel());
        if (p.requires_grad()) {
          auto& gp = p.impl()->ensure_grad();
          for (std::size_t i = 0; i < n; ++i) gp[i] += g[offset + i];
        }
        offset += n;
      }
    };
  });
  return with_wide(std::move(out), [&] {
    AlignedVector<double> w;
    w.reserve(static_cast<std::size_t>(rows * cols));
    for (const auto& p : parts) {
      const auto pw = widen(p);
      w.insert(w.end(), pw.begin(), pw.end());
    }
    return w;
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const auto rows = parts[0].dim(0);
  std::int64_t cols = 0;
  std::vector<std::int64_t> widths;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != rows) {
      throw ShapeError("concat_cols: row mismatch " + shape_str(parts[0].shape()) +
                       " vs " + shape_str(p.shape()));
    }
    cols += p.dim(1);
    widths.push_back(p.dim(1));
  }
  std::vector<Buffer> values;
  for (const auto& p : parts) values.push_back(p.impl()->data);
  std::vector<Tensor> keep(parts.begin(), parts.end());
  auto out = emit_many({rows, cols}, concat_cols_fwd(values, widths, rows, cols), parts,
                       [keep, rows, cols](Impl*) {
    return [keep, rows, cols](const Buffer& g) {
      auto src = as_mat(g, rows, cols);
      std::int64_t offset = 0;
      for (const auto& p : keep) {
        const auto w = p.dim(1);
        if (p.requires_grad()) {
          as_mat(p.impl()->ensure_grad(), rows, w) += src.middleCols(offset, w);
        }
        offset += w;
      }
    };
  });
  return with_wide(std::move(out), [&] {
    std::vector<AlignedVector<double>> wide;
    for (const auto& p : parts) wide.push_back(widen(p));
    return concat_cols_fwd(wide, widths, rows, cols);
  });
}

Tensor gather_rows(const Tensor& table, std::span<const std::int64_t> indices) {
  require_rank(table, 2, "gather_rows");
  const auto vocab = table.dim(0), cols = table.dim(1);
  if (indices.empty()) throw ShapeError("gather_rows: empty index list");
  for (const auto idx : indices) {
    if (idx < 0 || idx >= vocab) {
      throw ShapeError("gather_rows: index " + std::to_string(idx) + " outside table " +
                       shape_str(table.shape()));
    }
  }
  std::vector<std::int64_t> idx(indices.begin(), indices.end());
  const auto rows = static_cast<std::int64_t>(idx.size());
  auto out = emit({rows, cols}, gather_fwd(table.impl()->data, indices, cols), {table},
              [table, idx, cols](Impl*) mutable {
                return [table, idx = std::move(idx), cols](const Buffer& g) {
                  auto& gt = table.impl()->ensure_grad();
                  for (std::size_t i = 0; i < idx.size(); ++i) {
                    for (std::int64_t j = 0; j < cols; ++j) {
                      gt[idx[i] * cols + j] += g[static_cast<std::int64_t>(i) * cols + j];
                    }
                  }
                };
              });
  return with_wide(std::move(out), [&] { return gather_fwd(widen(table), indices, cols); });
}

Tensor sum(const Tensor& a) {
  const double total = total_of(a.impl()->data);
  auto out = emit({1}, {static_cast<float>(total)}, {a}, [a](Impl*) {
    return [a](const Buffer& g) { as_arr(a.impl()->ensure_grad()) += g[0]; };
  });
  return with_wide(std::move(out), [&] { return AlignedVector<double>{total_of(widen(a))}; });
}

Tensor mean(const Tensor& a) {
  const auto n = static_cast<double>(a.numel());
  const double total = total_of(a.impl()->data);
  auto out = emit({1}, {static_cast<float>(total / n)}, {a}, [a, n](Impl*) {
    return [a, n](const Buffer& g) {
      as_arr(a.impl()->ensure_grad()) += static_cast<float>(g[0] / n);
    };
  });
  return with_wide(std::move(out), [&] { return AlignedVector<double>{total_of(widen(a)) / n}; });
}

Tensor mse(const Tensor& prediction, const Tensor& target) {
  require_same_shape(prediction, target, "mse");
  const auto n = static_cast<double>(prediction.numel());
  const double total = squared_error_total(prediction.impl()->data, target.impl()->data);
  auto out = emit({1}, {static_cast<float>(total / n)}, {prediction, target},
              [prediction, target, n](Impl*) {
                return [prediction, target, n](const Buffer& g) {
                  const float k = static_cast<float>(2.0 * g[0] / n);
                  const auto diff =
                      (as_arr(prediction.impl()->data) - as_arr(target.impl()->data)).eval();
                  if (prediction.requires_grad()) {
                    as_arr(prediction.impl()->ensure_grad()) += k * diff;
                  }
                  if (target.requires_grad()) as_arr(target.impl()->ensure_grad()) -= k * diff;
                };
              });
  return with_wide(std::move(out), [&] {
    return AlignedVector<double>{squared_error_total(widen(prediction), widen(target)) / n};
  });
}

Tensor multi_head_attention(const Tensor& qkv, std::int64_t heads,
                            std::vector<Tensor>* probs_out) {
  require_rank(qkv, 2, "multi_head_attention");
  const auto n = qkv.dim(0);
  if (heads < 1 || qkv.dim(1) % (3 * heads) != 0) {
    throw ShapeError("multi_head_attention: " + shape_str(qkv.shape()) +
                     " cannot be split into q, k, v for " + std::to_string(heads) + " heads");
  }
  const auto d = qkv.dim(1) / 3, hd = d / heads;
  const bool recording = current_tape() != nullptr && qkv.requires_grad();
  auto probs = std::make_shared<Buffer>();
  const bool keep = recording || probs_out != nullptr;
  auto out = emit({n, d}, attention_fwd(qkv.impl()->data, n, d, heads, keep ? probs.get() : nullptr),
                  {qkv}, [qkv, probs, n, d, heads, hd](Impl*) {
    return [qkv, probs, n, d, heads, hd](const Buffer& g) {
      const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(hd));
      const auto& x = qkv.impl()->data;
      auto& gx = qkv.impl()->ensure_grad();
      const Eigen::OuterStride<> packed(3 * d), plain(d);
      constexpr std::int64_t kRowBlock = 128;
      RowMat ds(std::min(n, kRowBlock), n);
      for (std::int64_t h = 0; h < heads; ++h) {
        ConstStridedMat<float> q(x.data() + h * hd, n, hd, packed);
        ConstStridedMat<float> k(x.data() + d + h * hd, n, hd, packed);
        ConstStridedMat<float> v(x.data() + 2 * d + h * hd, n, hd, packed);
        StridedMat<float> gq(gx.data() + h * hd, n, hd, packed);
        StridedMat<float> gk(gx.data() + d + h * hd, n, hd, packed);
        StridedMat<float> gv(gx.data() + 2 * d + h * hd, n, hd, packed);
        for (std::int64_t r0 = 0; r0 < n; r0 += kRowBlock) {
          const auto rows = std::min(kRowBlock, n - r0);
          ConstMatMap p(probs->data() + (h * n + r0) * n, rows, n);
          ConstStridedMat<float> go(g.data() + r0 * d + h * hd, rows, hd, plain);
          auto dsb = ds.topRows(rows);
          gv.noalias() += p.transpose() * go;
          dsb.noalias() = go * v.transpose();
          for (std::int64_t r = 0; r < rows; ++r) {
            const float dot = p.row(r).dot(dsb.row(r));
            dsb.row(r).array() = p.row(r).array() * (dsb.row(r).array() - dot) * inv_sqrt;
          }
          gq.middleRows(r0, rows).noalias() += dsb * k;
          gk.noalias() += dsb.transpose() * q.middleRows(r0, rows);
        }
      }
    };
  });
  if (probs_out != nullptr) {
    for (std::int64_t h = 0; h < heads; ++h) {
      const auto* begin = probs->data() + h * n * n;
      probs_out->push_back(Tensor::from_buffer(Shape{n, n}, Buffer(begin, begin + n * n)));
    }
  }
  return with_wide(std::move(out),
                   [&] { return attention_fwd<double>(widen(qkv), n, d, heads, nullptr); });
}

}  // namespace giv::ag
