#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace giv::ag {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Vectorized reductions peel a different number of leading elements
// depending on the buffer address, so storage sits on 64-byte boundaries
// to keep results independent of where the allocator put it.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <class T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;
using Buffer = AlignedVector<float>;

namespace detail {
struct TensorImpl {
  Shape shape;
  Buffer data;
  Buffer grad;  // empty until first accumulation
  bool requires_grad = false;
  bool is_leaf = true;
  // Double-precision evaluation of the same value, filled only inside a
  // WideScope.
  AlignedVector<double> wide;

  Buffer& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0f);
    return grad;
  }
};
}  // namespace detail

// Shared handle to a dense row-major f32 array. Copies alias the same
// storage; values produced by ops are never mutated afterwards.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<float> data, bool requires_grad = false);

  // Takes ownership of already aligned storage.
  static Tensor from_buffer(Shape shape, Buffer data, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor scalar(float value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  std::int64_t dim(int axis) const;
  std::int64_t numel() const {
    return static_cast<std::int64_t>(impl_->data.size());
  }

  std::span<const float> data() const { return impl_->data; }
  // Direct write access, meant for parameters and optimizers only.
  std::span<float> mutable_data() { return impl_->data; }
  float item() const;
  // item() from the double evaluation when one was made.
  double wide_item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool value) { impl_->requires_grad = value; }
  bool is_leaf() const { return impl_->is_leaf; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const float> grad() const { return impl_->grad; }
  std::span<float> mutable_grad() { return impl_->ensure_grad(); }
  void zero_grad();

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl)
      : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Define-by-run record of differentiable operations. Ops append to the tape
// installed on the calling thread (see TapeScope); backward() replays the
// recorded rules in reverse order.
class Tape {
 public:
  using BackwardRule = std::function<void(const Buffer& grad_out)>;

  void record(std::shared_ptr<detail::TensorImpl> output,
              std::vector<std::shared_ptr<detail::TensorImpl>> inputs,
              BackwardRule rule);

  // Seeds d(loss)/d(loss) = 1 and propagates. Intermediate gradients are
  // reset first, so repeated calls accumulate only into leaves.
  void backward(const Tensor& loss);

  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

 private:
  struct Entry {
    std::shared_ptr<detail::TensorImpl> output;
    std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
    BackwardRule rule;
  };
  std::vector<Entry> entries_;
};

// Installs `tape` as the recording tape for this thread for the scope's
// lifetime. Without an installed tape, ops run in inference mode.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Disables recording for the scope's lifetime (inference mode).
class NoTapeScope {
 public:
  NoTapeScope();
  ~NoTapeScope();
  NoTapeScope(const NoTapeScope&) = delete;
  NoTapeScope& operator=(const NoTapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* current_tape();

// While alive, every op also evaluates its result in double from its
// inputs' double values (or their f32 data for leaves). The f32 results and
// all gradients are unaffected. grad_check runs its finite differences this
// way so the reference is not limited by f32 rounding.
class WideScope {
 public:
  WideScope();
  ~WideScope();
  WideScope(const WideScope&) = delete;
  WideScope& operator=(const WideScope&) = delete;

 private:
  bool previous_;
};

bool wide_enabled();

// Backward through the currently installed tape.
void backward(const Tensor& loss);

}  // namespace giv::ag
