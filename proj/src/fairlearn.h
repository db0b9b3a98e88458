#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

#include "data.h"
#include "estimators.h"
#include "evaluation.h"
#include "fairmodel.h"
#include "optim.h"
#include "rng.h"

namespace mbf::fairlearn {

using diff::Tape;
using diff::Tensor;
using estimators::PowerConfig;

// Equal-size paired sample sets drawn conditionally on an attribute.
struct GroupBatch {
  Mat p, q;
};

// One optimization step's data. `sensitive` holds one pair in DP mode and
// one pair per target class in EO mode.
struct StepBatch {
  std::vector<GroupBatch> sensitive;
  GroupBatch target;
  Mat cls_x;
  std::vector<int> cls_y;
  std::uint64_t perm_seed = 0;  // permutation-power objectives
};

// Power term: block-test estimate (default) or the permutation-threshold
// power, kept as an ablation since it optimizes poorly.
enum class TrainLoss { BlockPower, PermPower };

struct TrainConfig {
  FairnessWeights weights;
  double alpha = 0.05;
  int test_m = 0;            // 0: size of the smallest conditional group
  double power_lambda = -1;  // <0: (batch_size/2)^(2/3)
  TrainLoss loss = TrainLoss::BlockPower;
  bool perm_split = false;  // halve batches: threshold from one half, ratio from the other
  int n_permutations = 100;
  diff::OptKind optimizer = diff::OptKind::Adam;
  double learning_rate = 1e-4;
  int max_epochs = 100;
  int patience = 20;
  int batch_size = 64;
  int grid_size = 6;
  std::vector<int> widths = {8, 8, 8};
  int head_hidden = 0;  // 0: featurizer output dim
};

// Draws StepBatches from a split; conditional cells smaller than the batch
// side are sampled with replacement. DP mode reads each row's s label or t
// label, never the joint.
class BatchSampler {
 public:
  BatchSampler(const data::DatasetSplit& split, FairMode mode, int batch_size);
  StepBatch draw(Rng& rng) const;
  int smallest_group() const { return smallest_group_; }
  int steps_per_epoch() const;

 private:
  const data::DatasetSplit* split_;
  FairMode mode_;
  int half_;
  std::array<std::vector<int>, 2> t_groups_;
  std::array<std::vector<int>, 2> s_groups_;              // DP
  std::array<std::array<std::vector<int>, 2>, 2> cells_;  // EO, [t][s]
  int smallest_group_ = 0;
};

struct BoundModel {
  kernels::Featurizer::Bound phi;
  kernels::Featurizer::Bound head;
  Tensor log_sigma;
  const FairModel* model = nullptr;
};

BoundModel bind_model(Tape& tape, const FairModel& model);

// Objective value with per-term components recorded for history. `total`
// is a handle into the tape it was built on and must not outlive it.
struct ObjectiveParts {
  Tensor total;
  double rho_s = 0.0;
  double rho_t = 0.0;
  double cls_loss = 0.0;
};

// Difference of single-deep-kernel block powers, sensitive minus target.
Tensor fair_kernel_objective(Tape& tape, const GroupBatch& sensitive, const GroupBatch& target,
                             const kernels::Featurizer::Bound& phi, const Tensor& log_sigma,
                             const PowerConfig& cfg);

// Full training objective:
//   lambda_s * (max-over-grid sensitive power, summed over target classes in
//   EO mode) - lambda_t * max-over-grid target power + lambda_cls * CE.
// DP mode scores the classifier on the target-pair points only; EO mode on
// all drawn samples. Zero-weight terms are skipped on the tape but their
// values are still reported.
ObjectiveParts training_objective(Tape& tape, const StepBatch& batch, const BoundModel& bound,
                                  const PowerConfig& cfg, const FairnessWeights& weights,
                                  TrainLoss loss, int n_permutations, bool perm_split);

// Value-only evaluation of the same quantities (no tape).
struct ObjectiveValue {
  double total = 0.0;
  double rho_s = 0.0;
  double rho_t = 0.0;
  double cls_loss = 0.0;
};
ObjectiveValue eval_objective(const StepBatch& batch, const FairModel& model,
                              const PowerConfig& cfg, const FairnessWeights& weights,
                              TrainLoss loss, int n_permutations, bool perm_split);

// Differentiable permutation-threshold power of the U-statistic test: the
// threshold is the empirical quantile over relabelings of the pooled
// threshold features (its permutation is selected by value; the gradient
// flows through that statistic), the ratio comes from the ratio features.
// Pass the same tensors twice for the no-split variant.
Tensor perm_power_hat(Tape& tape, const Tensor& fp_threshold, const Tensor& fq_threshold,
                      const Tensor& fp_ratio, const Tensor& fq_ratio, const Tensor& log_sigma,
                      double alpha, int n_permutations, double m, double lambda,
                      std::uint64_t seed);

struct EpochStats {
  int epoch = 0;
  double cls_loss = 0.0;
  double rho_s = 0.0;
  double rho_t = 0.0;
  double val_objective = 0.0;
};

struct TrainResult {
  FairModel model;
  std::vector<EpochStats> history;
  int best_epoch = 0;
  PowerConfig power;  // resolved configuration used during training
};

// Up to max_epochs epochs of minibatch training with early stopping on the
// validation objective (patience in epochs); returns the best-validation
// parameters. Deterministic given the seed.
TrainResult train(const data::DatasetSplit& train_split, const data::DatasetSplit& val_split,
                  const TrainConfig& cfg, std::uint64_t seed);

struct SweepRow {
  double lambda_s = 0.0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double dp = 0.0;
  double eo = 0.0;
  double sensitive_audit_acc = 0.0;
  double mmd_audit_power = 0.0;
};

struct SweepAggregate {
  double lambda_s = 0.0;
  int runs = 0;
  double accuracy_mean = 0.0, accuracy_std = 0.0;
  double dp_mean = 0.0, dp_std = 0.0;
  double eo_mean = 0.0, eo_std = 0.0;
  double sensitive_audit_acc_mean = 0.0, sensitive_audit_acc_std = 0.0;
  double mmd_audit_power_mean = 0.0, mmd_audit_power_std = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;            // sweep order: lambda outer, seed inner
  std::vector<SweepAggregate> aggregates;
};

// Invoked from the worker that ran the job (distinct jobs, distinct indexes).
using SweepCallback = std::function<void(std::size_t index, const SweepRow&, const TrainResult&)>;

// Trains per (lambda_s, seed), evaluates on the test split (metrics plus the
// two sensitive audits), and aggregates mean/std per lambda. Runs are
// independent and may execute on `workers` threads; outputs do not depend on
// the worker count.
SweepResult sweep(const data::Dataset& dataset, const std::vector<double>& lambda_s_values,
                  const std::vector<std::uint64_t>& seeds, const TrainConfig& cfg,
                  const eval::AuditConfig& audit_cfg, int workers = 1,
                  const SweepCallback& on_run = nullptr);

}  // namespace mbf::fairlearn
