#pragma once

#include <vector>

#include "tensor.h"

namespace mbf::diff {

enum class OptKind { Adam, Adadelta };

// Adam (beta1=0.9, beta2=0.999, eps=1e-8) and Adadelta (rho=0.9, eps=1e-6)
// with per-parameter moment accumulators. Updates are pure functions of
// (params, grads, state), so identical runs produce bit-identical results.
class Optimizer {
 public:
  static Optimizer adam(double learning_rate);
  static Optimizer adadelta(double learning_rate);

  OptKind kind() const { return kind_; }
  double learning_rate() const { return lr_; }
  long step_count() const { return step_count_; }

  // Applies one update. Accumulators are allocated (zeros) on first use and
  // must keep matching shapes afterwards.
  void step(std::vector<Mat*> params, const std::vector<const Mat*>& grads);

 private:
  Optimizer(OptKind kind, double lr) : kind_(kind), lr_(lr) {}

  struct Slot {
    Mat first;   // Adam: first moment;  Adadelta: E[g^2]
    Mat second;  // Adam: second moment; Adadelta: E[dx^2]
  };

  OptKind kind_;
  double lr_;
  long step_count_ = 0;
  std::vector<Slot> slots_;
};

}  // namespace mbf::diff
