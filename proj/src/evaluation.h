#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "data.h"
#include "fairmodel.h"

namespace mbf::eval {

using diff::Mat;
using fairlearn::FairModel;

// 1 - |P(pred=1 | s=0) - P(pred=1 | s=1)|; empirical frequencies.
double demographic_parity(const std::vector<int>& predictions,
                          const std::vector<std::int8_t>& s);

struct EqualizedOdds {
  double mean = 1.0;                               // over classes present
  std::array<std::optional<double>, 2> per_class;  // absent cells stay empty
};

// Per target class c: 1 - |P(pred=c | t=c, s=0) - P(pred=c | t=c, s=1)|.
EqualizedOdds equalized_odds(const std::vector<int>& predictions,
                             const std::vector<std::int8_t>& t,
                             const std::vector<std::int8_t>& s);

struct FairnessReport {
  double accuracy = 0.0;
  double dp = 1.0;
  double eo = 1.0;
  std::array<std::optional<double>, 2> eo_components;
};

// Accuracy of the model head plus DP/EO of its predictions on a split.
FairnessReport evaluate_model(const FairModel& model, const data::DatasetSplit& split);

struct AuditConfig {
  double alpha = 0.05;
  int trials = 100;
  int per_group = 32;        // samples per group per test repetition
  int n_permutations = 200;
  int epochs = 50;
  double learning_rate = 1e-3;      // audit kernel trainer
  double cls_learning_rate = 3e-3;  // audit/transfer classifier trainer
  int hidden = 16;                  // audit kernel MLP width
  double train_fraction = 0.6;
  int batch_size = 64;
};

// Seeded train/eval row partition used by the audits and transfer
// evaluation; audit training only ever reads the train side.
struct AuditPartition {
  std::vector<int> train;
  std::vector<int> eval;
};
AuditPartition audit_partition(const std::vector<std::int8_t>& labels, double train_fraction,
                               std::uint64_t seed);

struct ClassifierAudit {
  double accuracy = 0.0;
  double majority_baseline = 0.0;
};

// Trains a fresh MLP (one hidden layer as wide as the representation) to
// predict s from frozen representations; reports held-out accuracy next to
// the majority-class baseline.
ClassifierAudit sensitive_classifier_audit(const Mat& representations,
                                           const std::vector<std::int8_t>& s,
                                           const AuditConfig& cfg, std::uint64_t seed);

// Learns a deep kernel maximizing the sensitive block power on a training
// portion of the representations, then reports the rejection fraction of
// repeated permutation tests on the held-out portion.
double mmd_power_audit(const Mat& representations, const std::vector<std::int8_t>& s,
                       const AuditConfig& cfg, std::uint64_t seed);

// Unconstrained downstream classifier on frozen representations: accuracy on
// the transfer labels, fairness w.r.t. the original sensitive attribute.
FairnessReport transfer_eval(const Mat& representations,
                             const std::vector<std::int8_t>& transfer_labels,
                             const std::vector<std::int8_t>& s, const AuditConfig& cfg,
                             std::uint64_t seed);

// CSV with header: row,t,s,z0..z{d-1}; floats exact to 17 significant digits.
void export_embeddings(const FairModel& model, const data::DatasetSplit& split,
                       const std::string& path);

}  // namespace mbf::eval
