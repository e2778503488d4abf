#include "htgnn/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace htgnn {

namespace {
long shape_product(const std::vector<int>& shape) {
  long n = 1;
  for (int d : shape) {
    if (d <= 0) throw DimensionError("tensor dimensions must be positive");
    n *= d;
  }
  return n;
}
thread_local Tape* g_active_tape = nullptr;
}  // namespace

Tensor::Tensor(std::vector<int> shape, double fill, bool requires_grad)
    : shape_(std::move(shape)) {
  const long n = shape_product(shape_);
  data_ = std::make_shared<std::vector<double>>(static_cast<size_t>(n), fill);
  set_requires_grad(requires_grad);
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
  const long n = shape_product(shape);
  if (n != static_cast<long>(values.size()))
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not match shape product " + std::to_string(n));
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::make_shared<std::vector<double>>(std::move(values));
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

long Tensor::size() const { return data_ ? static_cast<long>(data_->size()) : 0; }

int Tensor::rows() const {
  if (shape_.empty()) return 0;
  if (shape_.size() == 1) return 1;
  long r = 1;
  for (size_t i = 0; i + 1 < shape_.size(); ++i) r *= shape_[i];
  return static_cast<int>(r);
}

int Tensor::cols() const { return shape_.empty() ? 0 : shape_.back(); }

void Tensor::set_requires_grad(bool rg) {
  requires_grad_ = rg;
  if (rg && !grad_) grad_ = std::make_shared<std::vector<double>>(data_->size(), 0.0);
}

void Tensor::zero_grad() {
  if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0);
}

double Tensor::value() const {
  if (size() != 1) throw ContractError("value() expects a scalar tensor");
  return (*data_)[0];
}

Tensor Tensor::reshaped(std::vector<int> new_shape) const {
  if (shape_product(new_shape) != size())
    throw DimensionError("reshape changes element count");
  Tensor t;
  t.shape_ = std::move(new_shape);
  t.data_ = data_;
  t.grad_ = grad_;
  t.requires_grad_ = requires_grad_;
  return t;
}

void Tape::record(const Tensor& out, std::function<void()> pull) {
  nodes_.push_back(Node{out.grad_ptr(), std::move(pull)});
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) throw ContractError("backward expects a scalar loss");
  if (nodes_.empty()) throw ContractError("backward on an empty tape");
  if (!loss.has_grad())
    throw ContractError("loss does not participate in gradient computation");
  for (auto& node : nodes_) {
    if (node.out_grad) std::fill(node.out_grad->begin(), node.out_grad->end(), 0.0);
  }
  (*loss.grad_ptr())[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->pull();
}

void Tape::clear() { nodes_.clear(); }

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape* tape) : prev_(g_active_tape) { g_active_tape = tape; }
TapeScope::~TapeScope() { g_active_tape = prev_; }

}  // namespace htgnn
