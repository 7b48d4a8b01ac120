#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "seqaug/core/rng.hpp"

namespace seqaug {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
class Tensor;

// 64-byte aligned storage. Eigen's vectorised kernels pick their peeling by
// pointer alignment, so fixed alignment keeps results bitwise reproducible.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

namespace detail {

template <typename T>
struct TensorImpl;

// One recorded operation in the reverse-mode tape. `backward` reads the
// gradient of the op's output and accumulates into the inputs' gradients.
template <typename T>
struct Node {
  std::vector<Tensor<T>> inputs;
  std::function<void(const TensorImpl<T>& out)> backward;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  Buffer<T> data;
  Buffer<T> grad;
  bool requires_grad = false;
  std::shared_ptr<Node<T>> grad_fn;
};

}  // namespace detail

// Thread-local switch for graph recording. Inference paths wrap themselves
// in a NoGradGuard so no tape is built.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Dense row-major tensor with shared ownership. Copies are handles onto the
// same storage; use clone() for a deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor();
  Tensor(Shape shape, const std::vector<T>& data, bool requires_grad = false);
  static Tensor from_buffer(Shape shape, Buffer<T> data, bool requires_grad = false);

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, T value, bool requires_grad = false);
  static Tensor randn(const Shape& shape, Rng& rng, T stddev = T(1), bool requires_grad = false);
  static Tensor uniform(const Shape& shape, Rng& rng, T lo, T hi, bool requires_grad = false);
  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  std::vector<T> vec() const { return {impl_->data.begin(), impl_->data.end()}; }
  T item() const;
  T at(std::initializer_list<std::int64_t> index) const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<T> grad();
  std::span<const T> grad() const;
  void zero_grad();

  // Accumulates d(this)/d(leaf) into every reachable leaf. Must be a scalar.
  void backward() const;

  Tensor detach() const;
  Tensor clone() const;
  template <typename U>
  Tensor<U> cast() const;

  // True when any value is NaN or infinite.
  bool has_non_finite() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  // Op-implementation hooks.
  detail::TensorImpl<T>& impl() const { return *impl_; }
  Buffer<T>& grad_buffer() const;

 private:
  std::shared_ptr<detail::TensorImpl<T>> impl_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// Records `backward` as the producer of `out` when grad mode is on and any
// input requires a gradient.
template <typename T>
void attach_grad_fn(Tensor<T>& out, std::vector<Tensor<T>> inputs,
                    std::function<void(const detail::TensorImpl<T>&)> backward);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace seqaug
