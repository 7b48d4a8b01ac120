#include "seqaug/core/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

#include "seqaug/core/error.hpp"

namespace seqaug {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) {
    if (e < 0) throw DimensionError("negative extent in shape " + shape_str(shape));
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

template <typename T>
Tensor<T>::Tensor() = default;

template <typename T>
Tensor<T>::Tensor(Shape shape, const std::vector<T>& data, bool requires_grad)
    : Tensor(from_buffer(std::move(shape), Buffer<T>(data.begin(), data.end()), requires_grad)) {}

template <typename T>
Tensor<T> Tensor<T>::from_buffer(Shape shape, Buffer<T> data, bool requires_grad) {
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
  }
  Tensor t;
  t.impl_ = std::make_shared<detail::TensorImpl<T>>();
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(data);
  t.impl_->requires_grad = requires_grad;
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(const Shape& shape, bool requires_grad) {
  return from_buffer(shape, Buffer<T>(static_cast<std::size_t>(shape_numel(shape)), T(0)), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(const Shape& shape, T value, bool requires_grad) {
  return from_buffer(shape, Buffer<T>(static_cast<std::size_t>(shape_numel(shape)), value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::randn(const Shape& shape, Rng& rng, T stddev, bool requires_grad) {
  std::vector<T> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<T>(rng.normal()) * stddev;
  return Tensor(shape, std::move(v), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::uniform(const Shape& shape, Rng& rng, T lo, T hi, bool requires_grad) {
  std::vector<T> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return Tensor(shape, std::move(v), requires_grad);
}

template <typename T>
T Tensor<T>::item() const {
  if (impl_->data.size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::int64_t> index) const {
  if (index.size() != rank()) throw DimensionError("at(): rank mismatch");
  std::int64_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i < 0 || i >= impl_->shape[axis]) throw DimensionError("at(): index out of range");
    flat = flat * impl_->shape[axis] + i;
    ++axis;
  }
  return impl_->data[static_cast<std::size_t>(flat)];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

template <typename T>
std::span<T> Tensor<T>::grad() {
  return grad_buffer();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  return grad_buffer();
}

template <typename T>
Buffer<T>& Tensor<T>::grad_buffer() const {
  if (impl_->grad.size() != impl_->data.size()) impl_->grad.assign(impl_->data.size(), T(0));
  return impl_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  impl_->grad.clear();
}

template <typename T>
void Tensor<T>::backward() const {
  if (numel() != 1) throw DimensionError("backward() requires a scalar, got " + shape_str(shape()));
  if (!impl_->requires_grad) throw StateError("backward() on a tensor that does not require grad");

  // Iterative post-order DFS gives a topological order of the tape.
  std::vector<detail::TensorImpl<T>*> order;
  std::unordered_set<detail::TensorImpl<T>*> seen;
  std::vector<std::pair<detail::TensorImpl<T>*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  seen.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    const auto& fn = node->grad_fn;
    if (fn && next < fn->inputs.size()) {
      auto* child = &fn->inputs[next++].impl();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* node = *it;
    if (!node->grad_fn) continue;
    if (node->grad.size() != node->data.size()) node->grad.assign(node->data.size(), T(0));
    node->grad_fn->backward(*node);
    // Interior gradients are not needed once propagated.
    Buffer<T>().swap(node->grad);
  }
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return from_buffer(impl_->shape, impl_->data, false);
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return from_buffer(impl_->shape, impl_->data, impl_->requires_grad);
}

template <typename T>
template <typename U>
Tensor<U> Tensor<T>::cast() const {
  std::vector<U> v(impl_->data.begin(), impl_->data.end());
  return Tensor<U>(impl_->shape, std::move(v), impl_->requires_grad);
}

template <typename T>
bool Tensor<T>::has_non_finite() const {
  for (T x : impl_->data)
    if (!std::isfinite(x)) return true;
  return false;
}

template <typename T>
void attach_grad_fn(Tensor<T>& out, std::vector<Tensor<T>> inputs,
                    std::function<void(const detail::TensorImpl<T>&)> backward) {
  if (!GradMode::enabled()) return;
  bool any = false;
  for (const auto& t : inputs) any = any || (t.defined() && t.requires_grad());
  if (!any) return;
  auto node = std::make_shared<detail::Node<T>>();
  for (auto& t : inputs)
    if (t.defined()) node->inputs.push_back(std::move(t));
  node->backward = std::move(backward);
  out.impl().requires_grad = true;
  out.impl().grad_fn = std::move(node);
}

template class Tensor<float>;
template class Tensor<double>;
template Tensor<double> Tensor<float>::cast<double>() const;
template Tensor<float> Tensor<double>::cast<float>() const;
template Tensor<float> Tensor<float>::cast<float>() const;
template Tensor<double> Tensor<double>::cast<double>() const;
template void attach_grad_fn<float>(Tensor<float>&, std::vector<Tensor<float>>,
                                    std::function<void(const detail::TensorImpl<float>&)>);
template void attach_grad_fn<double>(Tensor<double>&, std::vector<Tensor<double>>,
                                     std::function<void(const detail::TensorImpl<double>&)>);

}  // namespace seqaug
