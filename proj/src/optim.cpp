#include "optim.h"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mbf::diff {

Optimizer Optimizer::adam(double learning_rate) {
  return Optimizer(OptKind::Adam, learning_rate);
}

Optimizer Optimizer::adadelta(double learning_rate) {
  return Optimizer(OptKind::Adadelta, learning_rate);
}

void Optimizer::step(std::vector<Mat*> params, const std::vector<const Mat*>& grads) {
  if (params.size() != grads.size())
    throw std::invalid_argument("Optimizer::step: parameter/gradient count mismatch");
  if (slots_.empty()) {
    slots_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      slots_[i].first = Mat::Zero(params[i]->rows(), params[i]->cols());
      slots_[i].second = Mat::Zero(params[i]->rows(), params[i]->cols());
    }
  }
  if (slots_.size() != params.size())
    throw std::invalid_argument("Optimizer::step: parameter count changed");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->rows() != grads[i]->rows() || params[i]->cols() != grads[i]->cols() ||
        params[i]->rows() != slots_[i].first.rows() || params[i]->cols() != slots_[i].first.cols())
      throw std::invalid_argument("Optimizer::step: shape mismatch at parameter " +
                                  std::to_string(i));
  }
  ++step_count_;

  if (kind_ == OptKind::Adam) {
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Mat& g = *grads[i];
      Slot& s = slots_[i];
      s.first = beta1 * s.first + (1.0 - beta1) * g;
      s.second = (beta2 * s.second.array() + (1.0 - beta2) * g.array().square()).matrix();
      Mat m_hat = s.first / bc1;
      Mat v_hat = s.second / bc2;
      params[i]->array() -= lr_ * m_hat.array() / (v_hat.array().sqrt() + eps);
    }
  } else {
    const double rho = 0.9, eps = 1e-6;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Mat& g = *grads[i];
      Slot& s = slots_[i];
      s.first = (rho * s.first.array() + (1.0 - rho) * g.array().square()).matrix();
      Mat dx = (-(s.second.array() + eps).sqrt() / (s.first.array() + eps).sqrt() * g.array())
                   .matrix();
      s.second = (rho * s.second.array() + (1.0 - rho) * dx.array().square()).matrix();
      *params[i] += lr_ * dx;
    }
  }
}

}  // namespace mbf::diff
