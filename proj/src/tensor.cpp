#include "giv/tensor.hpp"

#include <sstream>

#include "giv/error.hpp"

namespace giv::ag {

namespace {
thread_local Tape* g_current_tape = nullptr;
thread_local bool g_wide = false;
}  // namespace

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<float> data, bool requires_grad)
    : Tensor(from_buffer(std::move(shape), Buffer(data.begin(), data.end()), requires_grad)) {}

Tensor Tensor::from_buffer(Shape shape, Buffer data, bool requires_grad) {
  Tensor t(std::make_shared<detail::TensorImpl>());
  for (auto d : shape) {
    if (d <= 0) throw ShapeError("tensor dims must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(data);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0f, requires_grad);
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  auto n = static_cast<std::size_t>(shape_numel(shape));
  return from_buffer(std::move(shape), Buffer(n, value), requires_grad);
}

Tensor Tensor::scalar(float value) { return Tensor({1}, {value}); }

std::int64_t Tensor::dim(int axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     shape_str(shape()));
  }
  return impl_->shape[static_cast<std::size_t>(axis)];
}

float Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
  }
  return impl_->data[0];
}

double Tensor::wide_item() const {
  const float v = item();
  return impl_->wide.empty() ? static_cast<double>(v) : impl_->wide[0];
}

void Tensor::zero_grad() { impl_->grad.clear(); }

void Tape::record(std::shared_ptr<detail::TensorImpl> output,
                  std::vector<std::shared_ptr<detail::TensorImpl>> inputs,
                  BackwardRule rule) {
  entries_.push_back({std::move(output), std::move(inputs), std::move(rule)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward: loss is not connected to the tape");
  }
  for (auto& e : entries_) e.output->grad.clear();
  loss.impl()->ensure_grad()[0] += 1.0f;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->rule(it->output->grad);
  }
}

TapeScope::TapeScope(Tape& tape) : previous_(g_current_tape) {
  g_current_tape = &tape;
}

TapeScope::~TapeScope() { g_current_tape = previous_; }

NoTapeScope::NoTapeScope() : previous_(g_current_tape) { g_current_tape = nullptr; }

NoTapeScope::~NoTapeScope() { g_current_tape = previous_; }

WideScope::WideScope() : previous_(g_wide) { g_wide = true; }

WideScope::~WideScope() { g_wide = previous_; }

bool wide_enabled() { return g_wide; }

Tape* current_tape() { return g_current_tape; }

void backward(const Tensor& loss) {
  Tape* tape = current_tape();
  if (tape == nullptr) throw ContractError("backward: no tape installed");
  tape->backward(loss);
}

}  // namespace giv::ag
