#include "seqaug/core/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "seqaug/core/error.hpp"

namespace seqaug {

namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Map = Eigen::Map<MatRM<T>>;
template <typename T>
using CMap = Eigen::Map<const MatRM<T>>;

// Gradient buffer of `t` if it takes part in differentiation, else nullptr.
template <typename T>
T* grad_of(const Tensor<T>& t) {
  if (!t.defined() || !t.requires_grad()) return nullptr;
  return t.grad_buffer().data();
}

template <typename T>
Tensor<T> make(Shape shape) {
  return Tensor<T>::zeros(shape);
}

std::int64_t prod(const Shape& s, std::size_t from, std::size_t to) {
  std::int64_t n = 1;
  for (std::size_t i = from; i < to; ++i) n *= s[i];
  return n;
}

// Calls fn(out_index, a_index, b_index) for every element of the broadcast
// result of shapes `sa` and `sb` (same rank).
template <typename Fn>
void for_each_broadcast(const Shape& out, const Shape& sa, const Shape& sb, Fn&& fn) {
  const std::size_t r = out.size();
  std::vector<std::int64_t> stride_a(r, 0), stride_b(r, 0);
  std::int64_t ra = 1, rb = 1;
  for (std::size_t i = r; i-- > 0;) {
    stride_a[i] = sa[i] == 1 ? 0 : ra;
    stride_b[i] = sb[i] == 1 ? 0 : rb;
    ra *= sa[i];
    rb *= sb[i];
  }
  const std::int64_t total = shape_numel(out);
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t ia = 0, ib = 0;
  for (std::int64_t o = 0; o < total; ++o) {
    fn(o, ia, ib);
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      ia += stride_a[d];
      ib += stride_b[d];
      if (idx[d] < out[d]) break;
      ia -= stride_a[d] * out[d];
      ib -= stride_b[d] * out[d];
      idx[d] = 0;
    }
  }
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  if (a.size() != b.size())
    throw DimensionError(std::string(op) + ": rank mismatch " + shape_str(a) + " vs " + shape_str(b));
  Shape out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i] || b[i] == 1) {
      out[i] = a[i];
    } else if (a[i] == 1) {
      out[i] = b[i];
    } else {
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
  }
  return out;
}

enum class BinOp { Add, Sub, Mul };

template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinOp op, const char* name) {
  const Shape out_shape = a.shape() == b.shape() ? a.shape() : broadcast_shape(a.shape(), b.shape(), name);
  Tensor<T> out = make<T>(out_shape);
  auto o = out.data();
  auto da = a.data();
  auto db = b.data();
  const bool same = a.shape() == b.shape();
  auto apply = [&](std::int64_t io, std::int64_t ia, std::int64_t ib) {
    switch (op) {
      case BinOp::Add: o[io] = da[ia] + db[ib]; break;
      case BinOp::Sub: o[io] = da[ia] - db[ib]; break;
      case BinOp::Mul: o[io] = da[ia] * db[ib]; break;
    }
  };
  if (same) {
    for (std::int64_t i = 0; i < out.numel(); ++i) apply(i, i, i);
  } else {
    for_each_broadcast(out_shape, a.shape(), b.shape(), apply);
  }
  attach_grad_fn<T>(out, {a, b}, [a, b, op, same, out_shape](const detail::TensorImpl<T>& res) {
    T* ga = grad_of(a);
    T* gb = grad_of(b);
    const auto& g = res.grad;
    auto va = a.data();
    auto vb = b.data();
    auto back = [&](std::int64_t io, std::int64_t ia, std::int64_t ib) {
      const T go = g[io];
      switch (op) {
        case BinOp::Add:
          if (ga) ga[ia] += go;
          if (gb) gb[ib] += go;
          break;
        case BinOp::Sub:
          if (ga) ga[ia] += go;
          if (gb) gb[ib] -= go;
          break;
        case BinOp::Mul:
          if (ga) ga[ia] += go * vb[ib];
          if (gb) gb[ib] += go * va[ia];
          break;
      }
    };
    if (same) {
      for (std::int64_t i = 0; i < static_cast<std::int64_t>(g.size()); ++i) back(i, i, i);
    } else {
      for_each_broadcast(out_shape, a.shape(), b.shape(), back);
    }
  });
  return out;
}

template <typename T, typename F, typename D>
Tensor<T> unary(const Tensor<T>& x, F f, D dfdx) {
  Tensor<T> out = make<T>(x.shape());
  auto xi = x.data();
  auto o = out.data();
  for (std::int64_t i = 0; i < x.numel(); ++i) o[i] = f(xi[i]);
  attach_grad_fn<T>(out, {x}, [x, dfdx](const detail::TensorImpl<T>& res) {
    T* gx = grad_of(x);
    if (!gx) return;
    auto xi = x.data();
    for (std::size_t i = 0; i < res.grad.size(); ++i) gx[i] += res.grad[i] * dfdx(xi[i], res.data[i]);
  });
  return out;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinOp::Add, "add");
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinOp::Sub, "sub");
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinOp::Mul, "mul");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return unary(a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return unary(a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return v / (T(1) + std::exp(-v)); },
      [](T v, T) {
        const T s = T(1) / (T(1) + std::exp(-v));
        return s * (T(1) + v * (T(1) - s));
      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary(x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary(x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.data()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(acc);
  attach_grad_fn<T>(out, {x}, [x](const detail::TensorImpl<T>& res) {
    T* gx = grad_of(x);
    if (!gx) return;
    for (std::int64_t i = 0; i < x.numel(); ++i) gx[i] += res.grad[0];
  });
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> mean_trailing(const Tensor<T>& x, std::size_t first_axis) {
  if (first_axis > x.rank()) throw DimensionError("mean_trailing: axis out of range");
  const Shape out_shape(x.shape().begin(), x.shape().begin() + static_cast<std::ptrdiff_t>(first_axis));
  const std::int64_t outer = prod(x.shape(), 0, first_axis);
  const std::int64_t inner = prod(x.shape(), first_axis, x.rank());
  if (inner == 0) throw DimensionError("mean_trailing over empty extent");
  Tensor<T> out = make<T>(out_shape);
  auto xi = x.data();
  auto o = out.data();
  for (std::int64_t i = 0; i < outer; ++i) {
    T acc = T(0);
    for (std::int64_t j = 0; j < inner; ++j) acc += xi[i * inner + j];
    o[i] = acc / static_cast<T>(inner);
  }
  attach_grad_fn<T>(out, {x}, [x, outer, inner](const detail::TensorImpl<T>& res) {
    T* gx = grad_of(x);
    if (!gx) return;
    for (std::int64_t i = 0; i < outer; ++i) {
      const T g = res.grad[i] / static_cast<T>(inner);
      for (std::int64_t j = 0; j < inner; ++j) gx[i * inner + j] += g;
    }
  });
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  std::int64_t known = 1;
  int infer = -1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw DimensionError("reshape: more than one inferred extent");
      infer = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0) {
    if (known == 0 || x.numel() % known != 0) throw DimensionError("reshape: cannot infer extent");
    shape[static_cast<std::size_t>(infer)] = x.numel() / known;
  }
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  auto out = Tensor<T>::from_buffer(shape, x.impl().data);
  attach_grad_fn<T>(out, {x}, [x](const detail::TensorImpl<T>& res) {
    T* gx = grad_of(x);
    if (!gx) return;
    for (std::size_t i = 0; i < res.grad.size(); ++i) gx[i] += res.grad[i];
  });
  return out;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  const std::size_t r = x.rank();
  if (perm.size() != r) throw DimensionError("permute: rank mismatch");
  std::vector<bool> used(r, false);
  for (auto p : perm) {
    if (p >= r || used[p]) throw DimensionError("permute: invalid permutation");
    used[p] = true;
  }
  Shape in_stride(r);
  std::int64_t s = 1;
  for (std::size_t i = r; i-- > 0;) {
    in_stride[i] = s;
    s *= x.shape()[i];
  }
  Shape out_shape(r), src_stride(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = x.shape()[perm[i]];
    src_stride[i] = in_stride[perm[i]];
  }
  // Maps output flat index -> input flat index.
  const std::int64_t total = x.numel();
  auto index = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(total));
  {
    std::vector<std::int64_t> idx(r, 0);
    std::int64_t src = 0;
    for (std::int64_t o = 0; o < total; ++o) {
      (*index)[static_cast<std::size_t>(o)] = src;
      for (std::size_t d = r; d-- > 0;) {
        ++idx[d];
        src += src_stride[d];
        if (idx[d] < out_shape[d]) break;
        src -= src_stride[d] * out_shape[d];
        idx[d] = 0;
      }
    }
  }
  Tensor<T> out = make<T>(out_shape);
  auto xi = x.data();
  auto o = out.data();
  for (std::int64_t i = 0; i < total; ++i) o[i] = xi[(*index)[static_cast<std::size_t>(i)]];
  attach_grad_fn<T>(out, {x}, [x, index](const detail::TensorImpl<T>& res) {
    T* gx = grad_of(x);
    if (!gx) return;
    for (std::size_t i = 0; i < res.grad.size(); ++i) gx[(*index)[i]] += res.grad[i];
  });
  return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) throw DimensionError("concat: axis out of range");
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != ref.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t i = 0; i < ref.size(); ++i)
      if (i != axis && p.shape()[i] != ref[i])
        throw DimensionError("concat: extent mismatch " + shape_str(p.shape()) + " vs " + shape_str(ref));
    out_shape[axis] += p.shape()[axis];
  }
  const std::int64_t outer = prod(ref, 0, axis);
  const std::int64_t inner = prod(ref, axis + 1, ref.size());
  const std::int64_t out_row = out_shape[axis] * inner;
  Tensor<T> out = make<T>(out_shape);
  auto o = out.data();
  std::int64_t offset = 0;
  for (const auto& p : parts) {
    const std::int64_t row = p.shape()[axis] * inner;
    auto pi = p.data();
    for (std::int64_t i = 0; i < outer; ++i)
      std::copy_n(pi.data() + i * row, row, o.data() + i * out_row + offset);
    offset += row;
  }
  attach_grad_fn<T>(out, parts, [parts, outer, inner, out_row, axis](const detail::TensorImpl<T>& res) {
    std::int64_t offset = 0;
    for (const auto& p : parts) {
      const std::int64_t row = p.shape()[axis] * inner;
      if (T* gp = grad_of(p)) {
        for (std::int64_t i = 0; i < outer; ++i)
          for (std::int64_t j = 0; j < row; ++j) gp[i * row + j] += res.grad[i * out_row + offset + j];
      }
      offset += row;
    }
  });
  return out;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::int64_t start, std::int64_t length) {
  if (axis >= x.rank()) throw DimensionError("slice: axis out of range");
  if (start < 0 || length < 0 || start + length > x.shape()[axis])
    throw DimensionError("slice: range out of bounds for " + shape_str(x.shape()));
  std::vector<std::int64_t> idx(static_cast<std::size_t>(length));
  std::iota(idx.begin(), idx.end(), start);
  return index_select(x, axis, std::span<const std::int64_t>(idx));
}

template <typename T>
Tensor<T> index_select(const Tensor<T>& x, std::size_t axis, std::span<const std::int64_t> indices) {
  if (axis >= x.rank()) throw DimensionError("index_select: axis out of range");
  const std::int64_t extent = x.shape()[axis];
  for (auto i : indices)
    if (i < 0 || i >= extent) throw DimensionError("index_select: index " + std::to_string(i) + " out of range");
  const std::int64_t outer = prod(x.shape(), 0, axis);
  const std::int64_t inner = prod(x.shape(), axis + 1, x.rank());
  const auto count = static_cast<std::int64_t>(indices.size());
  Shape out_shape = x.shape();
  out_shape[axis] = count;
  Tensor<T> out = make<T>(out_shape);
  auto xi = x.data();
  auto o = out.data();
  for (std::int64_t i = 0; i < outer; ++i)
    for (std::int64_t j = 0; j < count; ++j)
      std::copy_n(xi.data() + (i * extent + indices[static_cast<std::size_t>(j)]) * inner, inner,
                  o.data() + (i * count + j) * inner);
  auto idx = std::make_shared<std::vector<std::int64_t>>(indices.begin(), indices.end());
  attach_grad_fn<T>(out, {x}, [x, idx, outer, inner, extent](const detail::TensorImpl<T>& res) {
    T* gx = grad_of(x);
    if (!gx) return;
    const auto count = static_cast<std::int64_t>(idx->size());
    for (std::int64_t i = 0; i < outer; ++i)
      for (std::int64_t j = 0; j < count; ++j) {
        T* dst = gx + (i * extent + (*idx)[static_cast<std::size_t>(j)]) * inner;
        const T* src = res.grad.data() + (i * count + j) * inner;
        for (std::int64_t k = 0; k < inner; ++k) dst[k] += src[k];
      }
  });
  return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> out = make<T>({m, n});
  Map<T>(out.data().data(), m, n).noalias() = CMap<T>(a.data().data(), m, k) * CMap<T>(b.data().data(), k, n);
  attach_grad_fn<T>(out, {a, b}, [a, b, m, k, n](const detail::TensorImpl<T>& res) {
    CMap<T> g(res.grad.data(), m, n);
    if (T* ga = grad_of(a)) Map<T>(ga, m, k).noalias() += g * CMap<T>(b.data().data(), k, n).transpose();
    if (T* gb = grad_of(b)) Map<T>(gb, k, n).noalias() += CMap<T>(a.data().data(), m, k).transpose() * g;
  });
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (weight.rank() != 2 || x.rank() < 1 || x.shape().back() != weight.dim(1))
    throw DimensionError("linear: input " + shape_str(x.shape()) + " weight " + shape_str(weight.shape()));
  const std::int64_t in = weight.dim(1), outf = weight.dim(0);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != outf)) throw DimensionError("linear: bias shape");
  const std::int64_t rows = x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = outf;
  Tensor<T> out = make<T>(out_shape);
  Map<T> y(out.data().data(), rows, outf);
  y.noalias() = CMap<T>(x.data().data(), rows, in) * CMap<T>(weight.data().data(), outf, in).transpose();
  if (bias.defined()) {
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bv(bias.data().data(), outf);
    y.rowwise() += bv;
  }
  attach_grad_fn<T>(out, {x, weight, bias}, [x, weight, bias, rows, in, outf](const detail::TensorImpl<T>& res) {
    CMap<T> g(res.grad.data(), rows, outf);
    if (T* gx = grad_of(x)) Map<T>(gx, rows, in).noalias() += g * CMap<T>(weight.data().data(), outf, in);
    if (T* gw = grad_of(weight))
      Map<T>(gw, outf, in).noalias() += g.transpose() * CMap<T>(x.data().data(), rows, in);
    if (T* gb = grad_of(bias)) {
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> bg(gb, outf);
      bg += g.colwise().sum();
    }
  });
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  if (x.rank() < 1) throw DimensionError("softmax of a scalar");
  const std::int64_t n = x.shape().back();
  const std::int64_t rows = n ? x.numel() / n : 0;
  Tensor<T> out = make<T>(x.shape());
  auto xi = x.data();
  auto o = out.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* src = xi.data() + r * n;
    T* dst = o.data() + r * n;
    const T mx = *std::max_element(src, src + n);
    T total = T(0);
    for (std::int64_t j = 0; j < n; ++j) total += (dst[j] = std::exp(src[j] - mx));
    for (std::int64_t j = 0; j < n; ++j) dst[j] /= total;
  }
  attach_grad_fn<T>(out, {x}, [x, rows, n](const detail::TensorImpl<T>& res) {
    T* gx = grad_of(x);
    if (!gx) return;
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* y = res.data.data() + r * n;
      const T* g = res.grad.data() + r * n;
      T dot = T(0);
      for (std::int64_t j = 0; j < n; ++j) dot += g[j] * y[j];
      for (std::int64_t j = 0; j < n; ++j) gx[r * n + j] += y[j] * (g[j] - dot);
    }
  });
  return out;
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x) {
  if (x.rank() < 1) throw DimensionError("log_softmax of a scalar");
  const std::int64_t n = x.shape().back();
  const std::int64_t rows = n ? x.numel() / n : 0;
  Tensor<T> out = make<T>(x.shape());
  auto xi = x.data();
  auto o = out.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* src = xi.data() + r * n;
    const T mx = *std::max_element(src, src + n);
    T total = T(0);
    for (std::int64_t j = 0; j < n; ++j) total += std::exp(src[j] - mx);
    const T lse = mx + std::log(total);
    for (std::int64_t j = 0; j < n; ++j) o[r * n + j] = src[j] - lse;
  }
  attach_grad_fn<T>(out, {x}, [x, rows, n](const detail::TensorImpl<T>& res) {
    T* gx = grad_of(x);
    if (!gx) return;
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* y = res.data.data() + r * n;
      const T* g = res.grad.data() + r * n;
      T gs = T(0);
      for (std::int64_t j = 0; j < n; ++j) gs += g[j];
      for (std::int64_t j = 0; j < n; ++j) gx[r * n + j] += g[j] - std::exp(y[j]) * gs;
    }
  });
  return out;
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != static_cast<std::int64_t>(labels.size()))
    throw DimensionError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  const std::int64_t classes = logits.dim(1);
  std::vector<std::int64_t> pick(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes) throw InputError("cross_entropy: label out of range");
    pick[i] = static_cast<std::int64_t>(i) * classes + labels[i];
  }
  auto flat = reshape(log_softmax(logits), {-1});
  auto chosen = index_select(flat, 0, std::span<const std::int64_t>(pick));
  return scale(mean(chosen), T(-1));
}

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& prediction, const Tensor<T>& target) {
  if (prediction.shape() != target.shape())
    throw DimensionError("mse_loss: " + shape_str(prediction.shape()) + " vs " + shape_str(target.shape()));
  auto diff = sub(prediction, target);
  return mean(mul(diff, diff));
}

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, T scale_factor,
                    std::span<const std::int64_t> key_lengths) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3) throw DimensionError("attention expects rank-3 inputs");
  const std::int64_t b = q.dim(0), n = q.dim(1), d = q.dim(2);
  const std::int64_t m = k.dim(1), e = v.dim(2);
  if (k.dim(0) != b || v.dim(0) != b || k.dim(2) != d || v.dim(1) != m)
    throw DimensionError("attention: q " + shape_str(q.shape()) + " k " + shape_str(k.shape()) + " v " +
                         shape_str(v.shape()));
  if (d < 1 || m < 1) throw DimensionError("attention: empty key or feature axis");
  if (!key_lengths.empty() && static_cast<std::int64_t>(key_lengths.size()) != b)
    throw DimensionError("attention: key_lengths must have one entry per batch");
  for (auto len : key_lengths)
    if (len < 1 || len > m) throw DimensionError("attention: key length out of range");
  Tensor<T> out = make<T>({b, n, e});
  auto weights = std::make_shared<Buffer<T>>(static_cast<std::size_t>(b * n * m));
  for (std::int64_t i = 0; i < b; ++i) {
    CMap<T> qi(q.data().data() + i * n * d, n, d);
    CMap<T> ki(k.data().data() + i * m * d, m, d);
    CMap<T> vi(v.data().data() + i * m * e, m, e);
    Map<T> p(weights->data() + i * n * m, n, m);
    p.noalias() = (qi * ki.transpose()) * scale_factor;
    const std::int64_t valid = key_lengths.empty() ? m : key_lengths[static_cast<std::size_t>(i)];
    for (std::int64_t r = 0; r < n; ++r) {
      auto row = p.row(r).head(valid);
      const T mx = row.maxCoeff();
      row = (row.array() - mx).exp();
      row /= row.sum();
      if (valid < m) p.row(r).tail(m - valid).setZero();
    }
    Map<T>(out.data().data() + i * n * e, n, e).noalias() = p * vi;
  }
  attach_grad_fn<T>(out, {q, k, v}, [q, k, v, weights, b, n, d, m, e, scale_factor](const detail::TensorImpl<T>& res) {
    T* gq = grad_of(q);
    T* gk = grad_of(k);
    T* gv = grad_of(v);
    MatRM<T> dp(n, m), ds(n, m);
    for (std::int64_t i = 0; i < b; ++i) {
      CMap<T> go(res.grad.data() + i * n * e, n, e);
      CMap<T> p(weights->data() + i * n * m, n, m);
      CMap<T> qi(q.data().data() + i * n * d, n, d);
      CMap<T> ki(k.data().data() + i * m * d, m, d);
      CMap<T> vi(v.data().data() + i * m * e, m, e);
      if (gv) Map<T>(gv + i * m * e, m, e).noalias() += p.transpose() * go;
      if (!gq && !gk) continue;
      dp.noalias() = go * vi.transpose();
      for (std::int64_t r = 0; r < n; ++r) {
        const T dot = (dp.row(r).array() * p.row(r).array()).sum();
        ds.row(r) = p.row(r).array() * (dp.row(r).array() - dot);
      }
      ds *= scale_factor;
      if (gq) Map<T>(gq + i * n * d, n, d).noalias() += ds * ki;
      if (gk) Map<T>(gk + i * m * d, m, d).noalias() += ds.transpose() * qi;
    }
  });
  return out;
}

template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, const Conv3dParams& p) {
  if (x.rank() != 5 || weight.rank() != 5)
    throw DimensionError("conv3d expects rank-5 input and weight, got " + shape_str(x.shape()) + " and " +
                         shape_str(weight.shape()));
  const std::int64_t n = x.dim(0), c = x.dim(1), dd = x.dim(2), hh = x.dim(3), ww = x.dim(4);
  const std::int64_t o = weight.dim(0), kd = weight.dim(2), kh = weight.dim(3), kw = weight.dim(4);
  if (weight.dim(1) != c)
    throw DimensionError("conv: channel mismatch, input has " + std::to_string(c) + ", kernel expects " +
                         std::to_string(weight.dim(1)));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != o)) throw DimensionError("conv: bias shape");
  const auto [sd, sh, sw] = p.stride;
  const auto [pd, ph, pw] = p.padding;
  const std::int64_t od = (dd + 2 * pd - kd) / sd + 1;
  const std::int64_t oh = (hh + 2 * ph - kh) / sh + 1;
  const std::int64_t ow = (ww + 2 * pw - kw) / sw + 1;
  if (od < 1 || oh < 1 || ow < 1) throw DimensionError("conv: kernel larger than padded input");
  const std::int64_t plane = od * oh * ow;
  const std::int64_t ck = c * kd * kh * kw;
  const std::int64_t cols_w = n * plane;

  // Column matrix [ck, n*plane]; each column is one receptive field.
  auto cols = std::make_shared<Buffer<T>>(static_cast<std::size_t>(ck * cols_w), T(0));
  auto xi = x.data();
  for (std::int64_t s = 0; s < n; ++s)
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t a = 0; a < kd; ++a)
        for (std::int64_t bb = 0; bb < kh; ++bb)
          for (std::int64_t e = 0; e < kw; ++e) {
            const std::int64_t row = ((ch * kd + a) * kh + bb) * kw + e;
            T* dst = cols->data() + row * cols_w + s * plane;
            for (std::int64_t z = 0; z < od; ++z) {
              const std::int64_t iz = z * sd - pd + a;
              if (iz < 0 || iz >= dd) continue;
              for (std::int64_t y = 0; y < oh; ++y) {
                const std::int64_t iy = y * sh - ph + bb;
                if (iy < 0 || iy >= hh) continue;
                const T* src = xi.data() + (((s * c + ch) * dd + iz) * hh + iy) * ww;
                T* drow = dst + (z * oh + y) * ow;
                for (std::int64_t xo = 0; xo < ow; ++xo) {
                  const std::int64_t ix = xo * sw - pw + e;
                  if (ix >= 0 && ix < ww) drow[xo] = src[ix];
                }
              }
            }
          }

  MatRM<T> result(o, cols_w);
  result.noalias() = CMap<T>(weight.data().data(), o, ck) * CMap<T>(cols->data(), ck, cols_w);
  Tensor<T> out = make<T>({n, o, od, oh, ow});
  auto od_ = out.data();
  for (std::int64_t s = 0; s < n; ++s)
    for (std::int64_t ch = 0; ch < o; ++ch) {
      const T bv = bias.defined() ? bias.data()[ch] : T(0);
      const T* src = result.data() + ch * cols_w + s * plane;
      T* dst = od_.data() + (s * o + ch) * plane;
      for (std::int64_t i = 0; i < plane; ++i) dst[i] = src[i] + bv;
    }

  attach_grad_fn<T>(out, {x, weight, bias},
                    [x, weight, bias, cols, n, c, dd, hh, ww, o, kd, kh, kw, sd, sh, sw, pd, ph, pw, od, oh, ow, plane,
                     ck, cols_w](const detail::TensorImpl<T>& res) {
                      MatRM<T> g(o, cols_w);
                      for (std::int64_t s = 0; s < n; ++s)
                        for (std::int64_t ch = 0; ch < o; ++ch)
                          std::copy_n(res.grad.data() + (s * o + ch) * plane, plane, g.data() + ch * cols_w + s * plane);
                      if (T* gb = grad_of(bias))
                        for (std::int64_t ch = 0; ch < o; ++ch) gb[ch] += g.row(ch).sum();
                      if (T* gw = grad_of(weight))
                        Map<T>(gw, o, ck).noalias() += g * CMap<T>(cols->data(), ck, cols_w).transpose();
                      T* gx = grad_of(x);
                      if (!gx) return;
                      MatRM<T> dcols(ck, cols_w);
                      dcols.noalias() = CMap<T>(weight.data().data(), o, ck).transpose() * g;
                      for (std::int64_t s = 0; s < n; ++s)
                        for (std::int64_t chn = 0; chn < c; ++chn)
                          for (std::int64_t a = 0; a < kd; ++a)
                            for (std::int64_t bb = 0; bb < kh; ++bb)
                              for (std::int64_t e = 0; e < kw; ++e) {
                                const std::int64_t row = ((chn * kd + a) * kh + bb) * kw + e;
                                const T* src = dcols.data() + row * cols_w + s * plane;
                                for (std::int64_t z = 0; z < od; ++z) {
                                  const std::int64_t iz = z * sd - pd + a;
                                  if (iz < 0 || iz >= dd) continue;
                                  for (std::int64_t y = 0; y < oh; ++y) {
                                    const std::int64_t iy = y * sh - ph + bb;
                                    if (iy < 0 || iy >= hh) continue;
                                    T* dst = gx + (((s * c + chn) * dd + iz) * hh + iy) * ww;
                                    const T* srow = src + (z * oh + y) * ow;
                                    for (std::int64_t xo = 0; xo < ow; ++xo) {
                                      const std::int64_t ix = xo * sw - pw + e;
                                      if (ix >= 0 && ix < ww) dst[ix] += srow[xo];
                                    }
                                  }
                                }
                              }
                    });
  return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::int64_t stride,
                 std::int64_t padding) {
  if (x.rank() != 4 || weight.rank() != 4)
    throw DimensionError("conv2d expects rank-4 input and weight, got " + shape_str(x.shape()) + " and " +
                         shape_str(weight.shape()));
  auto x5 = reshape(x, {x.dim(0), x.dim(1), 1, x.dim(2), x.dim(3)});
  auto w5 = reshape(weight, {weight.dim(0), weight.dim(1), 1, weight.dim(2), weight.dim(3)});
  auto y = conv3d(x5, w5, bias, Conv3dParams{{1, stride, stride}, {0, padding, padding}});
  return reshape(y, {y.dim(0), y.dim(1), y.dim(3), y.dim(4)});
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, std::int64_t factor) {
  if (x.rank() < 2 || factor < 1) throw DimensionError("upsample_nearest: bad input");
  const std::int64_t h = x.shape()[x.rank() - 2], w = x.shape()[x.rank() - 1];
  const std::int64_t outer = x.numel() / (h * w);
  Shape out_shape = x.shape();
  out_shape[x.rank() - 2] = h * factor;
  out_shape[x.rank() - 1] = w * factor;
  Tensor<T> out = make<T>(out_shape);
  auto xi = x.data();
  auto o = out.data();
  const std::int64_t H = h * factor, W = w * factor;
  for (std::int64_t i = 0; i < outer; ++i)
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t xx = 0; xx < W; ++xx) o[(i * H + y) * W + xx] = xi[(i * h + y / factor) * w + xx / factor];
  attach_grad_fn<T>(out, {x}, [x, outer, h, w, factor](const detail::TensorImpl<T>& res) {
    T* gx = grad_of(x);
    if (!gx) return;
    const std::int64_t H = h * factor, W = w * factor;
    for (std::int64_t i = 0; i < outer; ++i)
      for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t xx = 0; xx < W; ++xx) gx[(i * h + y / factor) * w + xx / factor] += res.grad[(i * H + y) * W + xx];
  });
  return out;
}

namespace {

// Shared normalization kernel: rows of `len` elements, each row split into
// `groups_per_row` statistics groups; affine parameters indexed by
// `param_index(row, element)`.
template <typename T, typename ParamIndex>
Tensor<T> normalize(const Tensor<T>& x, std::int64_t count, std::int64_t len, const Tensor<T>& gamma,
                    const Tensor<T>& beta, T eps, ParamIndex param_index) {
  Tensor<T> out = make<T>(x.shape());
  auto xhat = std::make_shared<std::vector<T>>(static_cast<std::size_t>(x.numel()));
  auto rstd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(count));
  auto xi = x.data();
  auto o = out.data();
  auto g = gamma.data();
  auto b = beta.data();
  for (std::int64_t r = 0; r < count; ++r) {
    const T* src = xi.data() + r * len;
    double mu = 0.0;
    for (std::int64_t j = 0; j < len; ++j) mu += src[j];
    mu /= static_cast<double>(len);
    double var = 0.0;
    for (std::int64_t j = 0; j < len; ++j) var += (src[j] - mu) * (src[j] - mu);
    var /= static_cast<double>(len);
    const T rs = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
    (*rstd)[static_cast<std::size_t>(r)] = rs;
    for (std::int64_t j = 0; j < len; ++j) {
      const T xh = static_cast<T>(src[j] - mu) * rs;
      (*xhat)[static_cast<std::size_t>(r * len + j)] = xh;
      const auto pi = param_index(r, j);
      o[r * len + j] = xh * g[pi] + b[pi];
    }
  }
  attach_grad_fn<T>(out, {x, gamma, beta}, [x, gamma, beta, xhat, rstd, count, len, param_index](const detail::TensorImpl<T>& res) {
    T* gx = grad_of(x);
    T* gg = grad_of(gamma);
    T* gb = grad_of(beta);
    auto gam = gamma.data();
    for (std::int64_t r = 0; r < count; ++r) {
      const T* gy = res.grad.data() + r * len;
      const T* xh = xhat->data() + r * len;
      T mean_dx = T(0), mean_dx_xh = T(0);
      for (std::int64_t j = 0; j < len; ++j) {
        const auto pi = param_index(r, j);
        if (gg) gg[pi] += gy[j] * xh[j];
        if (gb) gb[pi] += gy[j];
        const T dxh = gy[j] * gam[pi];
        mean_dx += dxh;
        mean_dx_xh += dxh * xh[j];
      }
      if (!gx) continue;
      mean_dx /= static_cast<T>(len);
      mean_dx_xh /= static_cast<T>(len);
      const T rs = (*rstd)[static_cast<std::size_t>(r)];
      for (std::int64_t j = 0; j < len; ++j) {
        const T dxh = gy[j] * gam[param_index(r, j)];
        gx[r * len + j] += rs * (dxh - mean_dx - xh[j] * mean_dx_xh);
      }
    }
  });
  return out;
}

}  // namespace

template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, std::int64_t groups, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  if (x.rank() < 2) throw DimensionError("group_norm expects [N,C,...]");
  const std::int64_t n = x.dim(0), c = x.dim(1);
  if (groups < 1 || c % groups != 0) throw DimensionError("group_norm: channels not divisible by groups");
  if (gamma.numel() != c || beta.numel() != c) throw DimensionError("group_norm: affine parameter shape");
  const std::int64_t spatial = x.numel() / (n * c);
  const std::int64_t per_group = c / groups;
  const std::int64_t len = per_group * spatial;
  return normalize(x, n * groups, len, gamma, beta, eps, [groups, per_group, spatial](std::int64_t r, std::int64_t j) {
    return static_cast<std::size_t>((r % groups) * per_group + j / spatial);
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  if (x.rank() < 1) throw DimensionError("layer_norm of a scalar");
  const std::int64_t c = x.shape().back();
  if (gamma.numel() != c || beta.numel() != c) throw DimensionError("layer_norm: affine parameter shape");
  return normalize(x, x.numel() / c, c, gamma, beta, eps,
                   [](std::int64_t, std::int64_t j) { return static_cast<std::size_t>(j); });
}

template <typename T>
void require_finite(const Tensor<T>& x, const char* what) {
  if (x.has_non_finite()) throw NumericError(std::string("non-finite values in ") + what);
}

#define SEQAUG_INSTANTIATE_OPS(T)                                                                              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                  \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                                  \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                                  \
  template Tensor<T> scale(const Tensor<T>&, T);                                                               \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                                          \
  template Tensor<T> silu(const Tensor<T>&);                                                                   \
  template Tensor<T> relu(const Tensor<T>&);                                                                   \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                                \
  template Tensor<T> exp(const Tensor<T>&);                                                                    \
  template Tensor<T> sum(const Tensor<T>&);                                                                    \
  template Tensor<T> mean(const Tensor<T>&);                                                                   \
  template Tensor<T> mean_trailing(const Tensor<T>&, std::size_t);                                             \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                         \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);                               \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                                       \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::int64_t, std::int64_t);                         \
  template Tensor<T> index_select(const Tensor<T>&, std::size_t, std::span<const std::int64_t>);               \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                               \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> softmax(const Tensor<T>&);                                                                \
  template Tensor<T> log_softmax(const Tensor<T>&);                                                            \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const int>);                                    \
  template Tensor<T> mse_loss(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T,                          \
                               std::span<const std::int64_t>);                                                \
  template Tensor<T> conv3d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Conv3dParams&);        \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::int64_t, std::int64_t); \
  template Tensor<T> upsample_nearest(const Tensor<T>&, std::int64_t);                                         \
  template Tensor<T> group_norm(const Tensor<T>&, std::int64_t, const Tensor<T>&, const Tensor<T>&, T);        \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                      \
  template void require_finite(const Tensor<T>&, const char*);

SEQAUG_INSTANTIATE_OPS(float)
SEQAUG_INSTANTIATE_OPS(double)

}  // namespace seqaug
