#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "htgnn/rng.hpp"
#include "htgnn/tensor.hpp"

namespace htgnn {

// Named model state. Parameters require gradients and are touched by the
// optimizer; state entries (running statistics and similar) are persisted in
// checkpoints but never differentiated. Iteration follows insertion order so
// that optimizer sweeps and checkpoints are reproducible.
class ParamStore {
 public:
  // uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)); fan_in defaults to shape[0].
  Tensor& create(const std::string& name, std::vector<int> shape, Rng& rng,
                 int fan_in = 0);
  Tensor& create_const(const std::string& name, std::vector<int> shape, double fill);
  Tensor& create_state(const std::string& name, std::vector<int> shape, double fill);

  bool has(const std::string& name) const;
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;

  struct Entry {
    std::string name;
    Tensor tensor;
    bool is_param;  // false for state
  };
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }

  long param_count() const;
  void zero_grads();

 private:
  Tensor& insert(const std::string& name, Tensor t, bool is_param);
  std::vector<Entry> entries_;
  std::unordered_map<std::string, size_t> index_;
};

// Adam with bias correction; moments keyed by parameter name.
class Adam {
 public:
  explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);
  void step(ParamStore& params);
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  long steps_taken() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::unordered_map<std::string, std::pair<std::vector<double>, std::vector<double>>>
      moments_;
};

}  // namespace htgnn
