#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "attmix/error.hpp"
#include "attmix/tensor.hpp"

namespace attmix {

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T>* tensor = nullptr;
};

struct AdamaxOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adamax: Adam with an infinity-norm second moment.
//   m <- b1 m + (1 - b1) g
//   u <- max(b2 u, |g|)
//   theta <- theta - lr / (1 - b1^t) * m / (u + eps)
template <typename T>
class Adamax {
 public:
  Adamax(std::vector<NamedParam<T>> params, AdamaxOptions opts = {})
      : params_(std::move(params)), opts_(opts) {
    for (const NamedParam<T>& p : params_) {
      m_.emplace_back(p.tensor->size(), T(0));
      u_.emplace_back(p.tensor->size(), T(0));
    }
  }

  // Parameters with requires_grad == false are left untouched.
  void step() {
    for (const NamedParam<T>& p : params_) {
      if (p.tensor->requires_grad() && !p.tensor->has_grad()) {
        throw ContractError("adamax step before backward: parameter '" + p.name +
                            "' has no gradient");
      }
    }
    ++t_;
    const double correction = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const T step = T(opts_.lr / correction);
    const T b1 = T(opts_.beta1), b2 = T(opts_.beta2), eps = T(opts_.eps);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor<T>& w = *params_[i].tensor;
      if (!w.requires_grad()) continue;
      const std::vector<T>& g = w.grad();
      std::vector<T>& m = m_[i];
      std::vector<T>& u = u_[i];
      if (m.size() != w.size()) {
        throw ContractError("adamax state does not match parameter '" + params_[i].name + "'");
      }
      for (std::size_t j = 0; j < w.size(); ++j) {
        m[j] = b1 * m[j] + (T(1) - b1) * g[j];
        u[j] = std::max(b2 * u[j], std::abs(g[j]));
        w[j] -= step * m[j] / (u[j] + eps);
      }
    }
  }

  void zero_grad() {
    for (const NamedParam<T>& p : params_) p.tensor->clear_grad();
  }

  std::uint64_t steps() const { return t_; }
  const std::vector<T>& first_moment(std::size_t i) const { return m_[i]; }
  const std::vector<T>& inf_norm(std::size_t i) const { return u_[i]; }
  const AdamaxOptions& options() const { return opts_; }

 private:
  std::vector<NamedParam<T>> params_;
  AdamaxOptions opts_;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> u_;
  std::uint64_t t_ = 0;
};

}  // namespace attmix
