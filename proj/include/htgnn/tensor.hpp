#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "htgnn/errors.hpp"

namespace htgnn {

// Dense row-major tensor of doubles with an optional gradient buffer.
// Copies are shallow: they alias the same value and gradient storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, double fill = 0.0, bool requires_grad = false);

  static Tensor from(std::vector<int> shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double v);

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  long size() const;
  bool defined() const { return static_cast<bool>(data_); }

  // Row/column view of the two trailing conventions used throughout:
  // rank-1 tensors behave as 1xN, rank-2 as MxN.
  int rows() const;
  int cols() const;

  double* data() { return data_->data(); }
  const double* data() const { return data_->data(); }
  double* grad() { return grad_ ? grad_->data() : nullptr; }
  const double* grad() const { return grad_ ? grad_->data() : nullptr; }
  bool has_grad() const { return static_cast<bool>(grad_); }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool rg);
  void zero_grad();

  double value() const;  // scalar convenience accessor
  double at(int r, int c) const { return (*data_)[static_cast<size_t>(r) * cols() + c]; }
  double& at(int r, int c) { return (*data_)[static_cast<size_t>(r) * cols() + c]; }

  std::shared_ptr<std::vector<double>> data_ptr() const { return data_; }
  std::shared_ptr<std::vector<double>> grad_ptr() const { return grad_; }

  // Alias the same buffers under a different shape (same element count).
  Tensor reshaped(std::vector<int> new_shape) const;

 private:
  std::vector<int> shape_;
  std::shared_ptr<std::vector<double>> data_;
  std::shared_ptr<std::vector<double>> grad_;
  bool requires_grad_ = false;
};

// Ordered record of executed primitive operations. backward() replays the
// pull closures in strict reverse execution order. Leaf gradients accumulate
// additively across backward calls; intermediate adjoints are reset per call.
class Tape {
 public:
  void record(const Tensor& out, std::function<void()> pull);
  void backward(const Tensor& loss);
  void clear();
  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    std::shared_ptr<std::vector<double>> out_grad;
    std::function<void()> pull;
  };
  std::vector<Node> nodes_;
};

// Define-by-run: ops record onto the thread-local active tape, if any.
Tape* active_tape();

class TapeScope {
 public:
  explicit TapeScope(Tape* tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

}  // namespace htgnn
