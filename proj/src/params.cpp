#include "htgnn/params.hpp"

#include <cmath>

#include "htgnn/errors.hpp"

namespace htgnn {

Tensor& ParamStore::insert(const std::string& name, Tensor t, bool is_param) {
  if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
  index_[name] = entries_.size();
  entries_.push_back(Entry{name, std::move(t), is_param});
  return entries_.back().tensor;
}

Tensor& ParamStore::create(const std::string& name, std::vector<int> shape, Rng& rng,
                           int fan_in) {
  if (fan_in <= 0) fan_in = shape.empty() ? 1 : shape[0];
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t(shape, 0.0, true);
  for (long i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(-bound, bound);
  return insert(name, std::move(t), true);
}

Tensor& ParamStore::create_const(const std::string& name, std::vector<int> shape,
                                 double fill) {
  return insert(name, Tensor(std::move(shape), fill, true), true);
}

Tensor& ParamStore::create_state(const std::string& name, std::vector<int> shape,
                                 double fill) {
  return insert(name, Tensor(std::move(shape), fill, false), false);
}

bool ParamStore::has(const std::string& name) const { return index_.count(name) > 0; }

Tensor& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + name);
  return entries_[it->second].tensor;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + name);
  return entries_[it->second].tensor;
}

long ParamStore::param_count() const {
  long n = 0;
  for (const Entry& e : entries_)
    if (e.is_param) n += e.tensor.size();
  return n;
}

void ParamStore::zero_grads() {
  for (Entry& e : entries_)
    if (e.is_param) e.tensor.zero_grad();
}

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(ParamStore& params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& entry : params.entries()) {
    if (!entry.is_param) continue;
    Tensor& p = entry.tensor;
    if (!p.has_grad())
      throw ContractError("optimizer_step: parameter " + entry.name + " has no gradient");
    auto& mom = moments_[entry.name];
    if (mom.first.empty()) {
      mom.first.assign(p.size(), 0.0);
      mom.second.assign(p.size(), 0.0);
    }
    double* w = p.data();
    const double* g = p.grad();
    for (long i = 0; i < p.size(); ++i) {
      mom.first[i] = beta1_ * mom.first[i] + (1.0 - beta1_) * g[i];
      mom.second[i] = beta2_ * mom.second[i] + (1.0 - beta2_) * g[i] * g[i];
      const double mhat = mom.first[i] / bc1;
      const double vhat = mom.second[i] / bc2;
      w[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

}  // namespace htgnn
