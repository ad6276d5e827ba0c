#include "vardlab/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace vardlab {

void Adam::step(const std::vector<Param*>& params) {
  if (m_.empty()) {
    for (Param* p : params) {
      m_.push_back(Tensor::zeros(p->value.shape));
      v_.push_back(Tensor::zeros(p->value.shape));
    }
  }
  if (m_.size() != params.size())
    throw std::invalid_argument("Adam::step: parameter set changed");

  double norm2 = 0.0;
  for (Param* p : params) {
    for (double g : p->grad.data) {
      if (!std::isfinite(g))
        throw std::runtime_error("non-finite gradient in parameter " + p->name);
      norm2 += g * g;
    }
  }
  double scale = 1.0;
  if (cfg_.clip_norm > 0.0) {
    const double norm = std::sqrt(norm2);
    if (norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;
  }

  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = *params[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double g = p.grad.data[j] * scale;
      // decoupled weight decay
      p.value.data[j] -= cfg_.lr * cfg_.weight_decay * p.value.data[j];
      m_[i].data[j] = cfg_.beta1 * m_[i].data[j] + (1.0 - cfg_.beta1) * g;
      v_[i].data[j] = cfg_.beta2 * v_[i].data[j] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m_[i].data[j] / bc1;
      const double vhat = v_[i].data[j] / bc2;
      p.value.data[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
    p.zero_grad();
  }
}

}  // namespace vardlab
