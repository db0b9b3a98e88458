#include "fairlearn.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "evaluation.h"
#include "special.h"

namespace mbf::fairlearn {

namespace {

Mat sample_rows(const data::DatasetSplit& split, const std::vector<int>& idx, int k, Rng& rng) {
  Mat out(k, split.features.cols());
  const std::size_t n = idx.size();
  if (static_cast<std::size_t>(k) <= n) {
    const std::vector<std::size_t> pick = rng.sample_without_replacement(n, static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i)
      out.row(i) = split.features.row(idx[pick[static_cast<std::size_t>(i)]]);
  } else {
    // cell smaller than the batch side: sample with replacement
    for (int i = 0; i < k; ++i)
      out.row(i) = split.features.row(idx[rng.below(n)]);
  }
  return out;
}

double plain_cross_entropy(const Mat& logits, const std::vector<int>& labels) {
  const Eigen::Index n = logits.rows();
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double zmax = logits.row(i).maxCoeff();
    double lse = 0.0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) lse += std::exp(logits(i, c) - zmax);
    lse = std::log(lse);
    loss -= logits(i, labels[static_cast<std::size_t>(i)]) - zmax - lse;
  }
  return loss / static_cast<double>(n);
}

}  // namespace

BatchSampler::BatchSampler(const data::DatasetSplit& split, FairMode mode, int batch_size)
    : split_(&split), mode_(mode), half_(batch_size / 2) {
  if (batch_size < 4 || batch_size % 2 != 0)
    throw std::invalid_argument("BatchSampler: batch size must be even and >= 4");
  t_groups_ = data::group_indices(split, 't');
  std::vector<std::size_t> sizes = {t_groups_[0].size(), t_groups_[1].size()};
  if (mode == FairMode::DP) {
    s_groups_ = data::group_indices(split, 's');
    sizes.push_back(s_groups_[0].size());
    sizes.push_back(s_groups_[1].size());
  } else {
    cells_ = data::conditional_group_indices(split);
    for (int t = 0; t < 2; ++t)
      for (int s = 0; s < 2; ++s) sizes.push_back(cells_[t][s].size());
  }
  smallest_group_ = static_cast<int>(*std::min_element(sizes.begin(), sizes.end()));
}

int BatchSampler::steps_per_epoch() const {
  return std::max(1, split_->n() / (2 * half_));
}

StepBatch BatchSampler::draw(Rng& rng) const {
  StepBatch batch;
  if (mode_ == FairMode::DP) {
    batch.sensitive.push_back(
        {sample_rows(*split_, s_groups_[0], half_, rng), sample_rows(*split_, s_groups_[1], half_, rng)});
    batch.target = {sample_rows(*split_, t_groups_[0], half_, rng),
                    sample_rows(*split_, t_groups_[1], half_, rng)};
    // classifier sees only the target-labeled points
    batch.cls_x.resize(2 * half_, split_->features.cols());
    batch.cls_x << batch.target.p, batch.target.q;
    batch.cls_y.assign(static_cast<std::size_t>(half_), 0);
    batch.cls_y.insert(batch.cls_y.end(), static_cast<std::size_t>(half_), 1);
  } else {
    for (int t = 0; t < 2; ++t)
      batch.sensitive.push_back({sample_rows(*split_, cells_[t][0], half_, rng),
                                 sample_rows(*split_, cells_[t][1], half_, rng)});
    batch.target = {sample_rows(*split_, t_groups_[0], half_, rng),
                    sample_rows(*split_, t_groups_[1], half_, rng)};
    // classifier sees all drawn samples; conditional pairs carry their t
    batch.cls_x.resize(6 * half_, split_->features.cols());
    batch.cls_x << batch.target.p, batch.target.q, batch.sensitive[0].p, batch.sensitive[0].q,
        batch.sensitive[1].p, batch.sensitive[1].q;
    batch.cls_y.assign(static_cast<std::size_t>(half_), 0);
    batch.cls_y.insert(batch.cls_y.end(), static_cast<std::size_t>(half_), 1);
    batch.cls_y.insert(batch.cls_y.end(), static_cast<std::size_t>(2 * half_), 0);
    batch.cls_y.insert(batch.cls_y.end(), static_cast<std::size_t>(2 * half_), 1);
  }
  batch.perm_seed = rng.raw();
  return batch;
}

BoundModel bind_model(Tape& tape, const FairModel& model) {
  BoundModel b;
  b.phi = model.phi.bind(tape);
  b.head = model.head.bind(tape);
  Mat ls(1, 1);
  ls(0, 0) = model.log_sigma;
  b.log_sigma = tape.leaf(ls);
  b.model = &model;
  return b;
}

Tensor fair_kernel_objective(Tape& tape, const GroupBatch& sensitive, const GroupBatch& target,
                             const kernels::Featurizer::Bound& phi, const Tensor& log_sigma,
                             const PowerConfig& cfg) {
  if (sensitive.p.rows() == 0 || sensitive.q.rows() == 0 || target.p.rows() == 0 ||
      target.q.rows() == 0)
    throw std::invalid_argument("fair_kernel_objective: empty group batch");
  Tensor fps = phi.forward(tape, sensitive.p);
  Tensor fqs = phi.forward(tape, sensitive.q);
  Tensor fpt = phi.forward(tape, target.p);
  Tensor fqt = phi.forward(tape, target.q);
  Tensor hs = kernels::h_from_features(tape, fps, fqs, log_sigma);
  Tensor ht = kernels::h_from_features(tape, fpt, fqt, log_sigma);
  return diff::sub(estimators::block_power_hat(hs, cfg), estimators::block_power_hat(ht, cfg));
}

namespace {

Tensor grid_power_max(Tape& tape, const Tensor& fp, const Tensor& fq,
                      const std::vector<double>& grid, const PowerConfig& cfg) {
  if (grid.empty()) throw std::invalid_argument("training objective: empty kernel grid");
  const std::vector<Tensor> hs = kernels::grid_h(tape, fp, fq, grid);
  std::vector<Tensor> rhos;
  rhos.reserve(hs.size());
  for (const Tensor& h : hs) rhos.push_back(estimators::block_power_hat(h, cfg));
  return diff::max_of(rhos);
}

double grid_power_max_value(const Mat& fp, const Mat& fq, const std::vector<double>& grid,
                            const PowerConfig& cfg) {
  if (grid.empty()) throw std::invalid_argument("training objective: empty kernel grid");
  double best = -1.0;
  for (double s : grid) {
    kernels::KernelSpec k = kernels::GaussianKernel{s};
    best = std::max(best, estimators::block_power_hat(kernels::h_matrix(fp, fq, k), cfg));
  }
  return best;
}

// Splits a group batch in half for the split-permutation variant.
void split_halves(const Mat& x, Mat& first, Mat& second) {
  const Eigen::Index half = x.rows() / 2;
  first = x.topRows(half);
  second = x.bottomRows(x.rows() - half);
}

}  // namespace

Tensor perm_power_hat(Tape& tape, const Tensor& fp_threshold, const Tensor& fq_threshold,
                      const Tensor& fp_ratio, const Tensor& fq_ratio, const Tensor& log_sigma,
                      double alpha, int n_permutations, double m, double lambda,
                      std::uint64_t seed) {
  if (n_permutations < 20)
    throw std::invalid_argument("perm_power_hat: need at least 20 permutations");
  const Eigen::Index nt = fp_threshold.rows();
  if (nt < 2 || nt != fq_threshold.rows())
    throw std::invalid_argument("perm_power_hat: threshold groups must be equal and >= 2");
  Tensor pooled = diff::vstack(fp_threshold, fq_threshold);
  Tensor k = kernels::gaussian_gram(tape, pooled, pooled, log_sigma);
  Rng rng(seed);
  std::vector<std::size_t> idx(static_cast<std::size_t>(2 * nt));
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<Tensor> stats;
  stats.reserve(static_cast<std::size_t>(n_permutations));
  const double inv_pairs = 1.0 / (static_cast<double>(nt) * (nt - 1));
  for (int p = 0; p < n_permutations; ++p) {
    rng.shuffle(idx);
    Mat sel_a = Mat::Zero(2 * nt, nt), sel_b = Mat::Zero(2 * nt, nt);
    for (Eigen::Index i = 0; i < nt; ++i) {
      sel_a(static_cast<Eigen::Index>(idx[static_cast<std::size_t>(i)]), i) = 1.0;
      sel_b(static_cast<Eigen::Index>(idx[static_cast<std::size_t>(nt + i)]), i) = 1.0;
    }
    Tensor sa = tape.constant(sel_a);
    Tensor sb = tape.constant(sel_b);
    Tensor ta = diff::matmul(diff::transpose(sa), k);
    Tensor tb = diff::matmul(diff::transpose(sb), k);
    Tensor kaa = diff::matmul(ta, sa);
    Tensor kbb = diff::matmul(tb, sb);
    Tensor kab = diff::matmul(ta, sb);
    auto offdiag = [](const Tensor& t) { return diff::sub(diff::sum(t), diff::trace(t)); };
    Tensor u = diff::sub(diff::add(offdiag(kaa), offdiag(kbb)), diff::affine(offdiag(kab), 2.0));
    // statistic on the n * MMD^2 scale
    stats.push_back(diff::affine(u, inv_pairs * static_cast<double>(nt)));
  }
  // empirical (1-alpha) quantile, matching estimators::permutation_threshold
  std::vector<int> order(stats.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return stats[static_cast<std::size_t>(a)].scalar() < stats[static_cast<std::size_t>(b)].scalar();
  });
  const std::size_t rank = static_cast<std::size_t>(
      std::ceil((1.0 - alpha) * static_cast<double>(n_permutations)));
  const std::size_t pos = std::min(stats.size() - 1, std::max<std::size_t>(rank, 1) - 1);
  Tensor c_hat = stats[static_cast<std::size_t>(order[pos])];

  Tensor h = kernels::h_from_features(tape, fp_ratio, fq_ratio, log_sigma);
  Tensor j = estimators::mmd_u_sq(h);
  Tensor v = estimators::variance_hat(h, m, lambda);
  Tensor arg = diff::div_scalar(diff::sub(j, diff::affine(c_hat, 1.0 / m)), diff::sqrt(v));
  return diff::normal_cdf(arg);
}

namespace {

double perm_power_value(const Mat& fp_thr, const Mat& fq_thr, const Mat& fp_ratio,
                        const Mat& fq_ratio, double sigma, double alpha, int n_permutations,
                        double m, double lambda, std::uint64_t seed) {
  kernels::KernelSpec k = kernels::GaussianKernel{sigma};
  const double c_hat =
      estimators::permutation_threshold(fp_thr, fq_thr, k, alpha, n_permutations, seed);
  const Mat h = kernels::h_matrix(fp_ratio, fq_ratio, k);
  return estimators::asymptotic_u_power(estimators::mmd_u_sq(h), c_hat, m,
                                        estimators::variance_hat(h, m, lambda));
}

struct TermPlan {
  bool tape_s, tape_t, tape_cls;
};

}  // namespace

ObjectiveParts training_objective(Tape& tape, const StepBatch& batch, const BoundModel& bound,
                                  const PowerConfig& cfg, const FairnessWeights& weights,
                                  TrainLoss loss, int n_permutations, bool perm_split) {
  if (batch.sensitive.empty() || batch.sensitive[0].p.rows() == 0 || batch.target.p.rows() == 0)
    throw std::invalid_argument("training_objective: empty group batch");
  const FairModel& model = *bound.model;
  const TermPlan plan{weights.lambda_s != 0.0, weights.lambda_t != 0.0,
                      weights.lambda_cls != 0.0};
  if (!plan.tape_s && !plan.tape_t && !plan.tape_cls)
    throw std::invalid_argument("training_objective: all loss weights are zero");

  ObjectiveParts parts;
  std::vector<Tensor> terms;

  auto pair_power = [&](const GroupBatch& gb, const std::vector<double>& grid,
                        std::uint64_t perm_seed) -> Tensor {
    if (loss == TrainLoss::BlockPower) {
      Tensor fp = bound.phi.forward(tape, gb.p);
      Tensor fq = bound.phi.forward(tape, gb.q);
      return grid_power_max(tape, fp, fq, grid, cfg);
    }
    // single deep kernel with trainable length-scale
    if (perm_split) {
      Mat p1, p2, q1, q2;
      split_halves(gb.p, p1, p2);
      split_halves(gb.q, q1, q2);
      Tensor fp1 = bound.phi.forward(tape, p1);
      Tensor fq1 = bound.phi.forward(tape, q1);
      Tensor fp2 = bound.phi.forward(tape, p2);
      Tensor fq2 = bound.phi.forward(tape, q2);
      return perm_power_hat(tape, fp1, fq1, fp2, fq2, bound.log_sigma, cfg.alpha, n_permutations,
                            static_cast<double>(cfg.m), cfg.lambda, perm_seed);
    }
    Tensor fp = bound.phi.forward(tape, gb.p);
    Tensor fq = bound.phi.forward(tape, gb.q);
    return perm_power_hat(tape, fp, fq, fp, fq, bound.log_sigma, cfg.alpha, n_permutations,
                          static_cast<double>(cfg.m), cfg.lambda, perm_seed);
  };

  auto pair_power_value = [&](const GroupBatch& gb, const std::vector<double>& grid,
                              std::uint64_t perm_seed) -> double {
    const Mat fp = model.phi.forward(gb.p);
    const Mat fq = model.phi.forward(gb.q);
    if (loss == TrainLoss::BlockPower) return grid_power_max_value(fp, fq, grid, cfg);
    const double sigma = std::exp(model.log_sigma);
    if (perm_split) {
      Mat p1, p2, q1, q2;
      split_halves(fp, p1, p2);
      split_halves(fq, q1, q2);
      return perm_power_value(p1, q1, p2, q2, sigma, cfg.alpha, n_permutations,
                              static_cast<double>(cfg.m), cfg.lambda, perm_seed);
    }
    return perm_power_value(fp, fq, fp, fq, sigma, cfg.alpha, n_permutations,
                            static_cast<double>(cfg.m), cfg.lambda, perm_seed);
  };

  Rng seed_stream(batch.perm_seed);
  std::vector<std::uint64_t> pair_seeds;
  for (std::size_t i = 0; i < batch.sensitive.size() + 1; ++i)
    pair_seeds.push_back(seed_stream.stream(i).seed());

  // sensitive power (summed over target classes in EO mode)
  if (plan.tape_s) {
    Tensor rho_s = pair_power(batch.sensitive[0], model.sensitive_grid, pair_seeds[0]);
    for (std::size_t i = 1; i < batch.sensitive.size(); ++i)
      rho_s = diff::add(rho_s, pair_power(batch.sensitive[i], model.sensitive_grid, pair_seeds[i]));
    parts.rho_s = rho_s.scalar();
    terms.push_back(diff::affine(rho_s, weights.lambda_s));
  } else {
    parts.rho_s = 0.0;
    for (std::size_t i = 0; i < batch.sensitive.size(); ++i)
      parts.rho_s += pair_power_value(batch.sensitive[i], model.sensitive_grid, pair_seeds[i]);
  }

  // target power
  const std::uint64_t target_seed = pair_seeds.back();
  if (plan.tape_t) {
    Tensor rho_t = pair_power(batch.target, model.target_grid, target_seed);
    parts.rho_t = rho_t.scalar();
    terms.push_back(diff::affine(rho_t, -weights.lambda_t));
  } else {
    parts.rho_t = pair_power_value(batch.target, model.target_grid, target_seed);
  }

  // classification loss
  if (plan.tape_cls) {
    Tensor logits = bound.head.forward(bound.phi.forward(tape, batch.cls_x));
    Tensor ce = diff::cross_entropy(logits, batch.cls_y);
    parts.cls_loss = ce.scalar();
    terms.push_back(diff::affine(ce, weights.lambda_cls));
  } else {
    parts.cls_loss = plain_cross_entropy(model.logits(batch.cls_x), batch.cls_y);
  }

  parts.total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) parts.total = diff::add(parts.total, terms[i]);
  return parts;
}

ObjectiveValue eval_objective(const StepBatch& batch, const FairModel& model,
                              const PowerConfig& cfg, const FairnessWeights& weights,
                              TrainLoss loss, int n_permutations, bool perm_split) {
  ObjectiveValue v;
  Rng seed_stream(batch.perm_seed);
  std::vector<std::uint64_t> pair_seeds;
  for (std::size_t i = 0; i < batch.sensitive.size() + 1; ++i)
    pair_seeds.push_back(seed_stream.stream(i).seed());

  auto power_value = [&](const GroupBatch& gb, const std::vector<double>& grid,
                         std::uint64_t perm_seed) -> double {
    const Mat fp = model.phi.forward(gb.p);
    const Mat fq = model.phi.forward(gb.q);
    if (loss == TrainLoss::BlockPower) {
      double best = -1.0;
      for (double s : grid) {
        kernels::KernelSpec k = kernels::GaussianKernel{s};
        best = std::max(best, estimators::block_power_hat(kernels::h_matrix(fp, fq, k), cfg));
      }
      return best;
    }
    const double sigma = std::exp(model.log_sigma);
    if (perm_split) {
      Mat p1, p2, q1, q2;
      split_halves(fp, p1, p2);
      split_halves(fq, q1, q2);
      return perm_power_value(p1, q1, p2, q2, sigma, cfg.alpha, n_permutations,
                              static_cast<double>(cfg.m), cfg.lambda, perm_seed);
    }
    return perm_power_value(fp, fq, fp, fq, sigma, cfg.alpha, n_permutations,
                            static_cast<double>(cfg.m), cfg.lambda, perm_seed);
  };

  for (std::size_t i = 0; i < batch.sensitive.size(); ++i)
    v.rho_s += power_value(batch.sensitive[i], model.sensitive_grid, pair_seeds[i]);
  v.rho_t = power_value(batch.target, model.target_grid, pair_seeds.back());
  v.cls_loss = plain_cross_entropy(model.logits(batch.cls_x), batch.cls_y);
  v.total = weights.lambda_s * v.rho_s - weights.lambda_t * v.rho_t +
            weights.lambda_cls * v.cls_loss;
  return v;
}

namespace {

struct Snapshot {
  std::vector<Mat> phi_w, phi_b, head_w, head_b;
  double log_sigma = 0.0;

  static Snapshot of(const FairModel& m) {
    return {m.phi.weights(), m.phi.biases(), m.head.weights(), m.head.biases(), m.log_sigma};
  }
  void restore(FairModel& m) const {
    m.phi.weights() = phi_w;
    m.phi.biases() = phi_b;
    m.head.weights() = head_w;
    m.head.biases() = head_b;
    m.log_sigma = log_sigma;
  }
};

}  // namespace

TrainResult train(const data::DatasetSplit& train_split, const data::DatasetSplit& val_split,
                  const TrainConfig& cfg, std::uint64_t seed) {
  if (cfg.max_epochs < 0) throw std::invalid_argument("train: max_epochs must be >= 0");
  if (cfg.patience < 1) throw std::invalid_argument("train: patience must be >= 1");
  const FairMode mode = cfg.weights.mode;

  Rng root(seed);
  Rng init_rng = root.stream(0);
  Rng batch_rng = root.stream(1);
  Rng val_rng = root.stream(2);

  FairModel model;
  model.mode = mode;
  model.phi = kernels::Featurizer::init(train_split.dim(), cfg.widths, init_rng);
  const int head_hidden = cfg.head_hidden > 0 ? cfg.head_hidden : model.phi.output_dim();
  model.head = kernels::Featurizer::init(model.phi.output_dim(), {head_hidden, 2}, init_rng);

  // Length-scale grid centered on the median heuristic of initial features.
  const int probe_n = std::min(train_split.n(), 256);
  std::vector<std::size_t> probe =
      init_rng.sample_without_replacement(static_cast<std::size_t>(train_split.n()),
                                          static_cast<std::size_t>(probe_n));
  Mat probe_rows(probe_n, train_split.dim());
  for (int i = 0; i < probe_n; ++i)
    probe_rows.row(i) = train_split.features.row(static_cast<Eigen::Index>(probe[static_cast<std::size_t>(i)]));
  const double sigma_med = kernels::median_heuristic(model.phi.forward(probe_rows));
  model.target_grid = kernels::default_grid(sigma_med, cfg.grid_size);
  model.sensitive_grid = model.target_grid;
  model.log_sigma = std::log(sigma_med);

  BatchSampler sampler(train_split, mode, cfg.batch_size);
  PowerConfig power;
  power.alpha = cfg.alpha;
  power.m = cfg.test_m > 0 ? cfg.test_m : std::max(4, sampler.smallest_group());
  power.b = power.B = std::max(2, static_cast<int>(std::floor(std::sqrt(static_cast<double>(power.m)))));
  power.lambda = cfg.power_lambda >= 0.0
                     ? cfg.power_lambda
                     : std::pow(static_cast<double>(cfg.batch_size / 2), 2.0 / 3.0);
  power.n_permutations = std::max(20, cfg.n_permutations);
  power.validate();

  TrainResult result;
  result.power = power;

  // Fixed validation batches so epochs are compared on identical data.
  BatchSampler val_sampler(val_split, mode, cfg.batch_size);
  const int n_val_batches = std::max(1, std::min(8, val_split.n() / cfg.batch_size));
  std::vector<StepBatch> val_batches;
  for (int i = 0; i < n_val_batches; ++i) val_batches.push_back(val_sampler.draw(val_rng));

  auto validation_objective = [&]() {
    double acc = 0.0;
    for (const StepBatch& vb : val_batches)
      acc += eval_objective(vb, model, power, cfg.weights, cfg.loss, cfg.n_permutations,
                            cfg.perm_split)
                 .total;
    return acc / static_cast<double>(val_batches.size());
  };

  diff::Optimizer opt = cfg.optimizer == diff::OptKind::Adam
                            ? diff::Optimizer::adam(cfg.learning_rate)
                            : diff::Optimizer::adadelta(cfg.learning_rate);
  const bool train_log_sigma = cfg.loss == TrainLoss::PermPower;

  Snapshot best = Snapshot::of(model);
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  int since_improvement = 0;
  const int steps = sampler.steps_per_epoch();

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    EpochStats stats;
    stats.epoch = epoch;
    for (int step = 0; step < steps; ++step) {
      const StepBatch batch = sampler.draw(batch_rng);
      Tape tape;
      BoundModel bound = bind_model(tape, model);
      ObjectiveParts parts = training_objective(tape, batch, bound, power, cfg.weights, cfg.loss,
                                                cfg.n_permutations, cfg.perm_split);
      tape.backward(parts.total);

      std::vector<Mat*> params = model.phi.parameters();
      std::vector<Mat*> head_params = model.head.parameters();
      params.insert(params.end(), head_params.begin(), head_params.end());
      std::vector<Mat> grad_storage;
      grad_storage.reserve(params.size() + 1);
      for (std::size_t l = 0; l < bound.phi.weights.size(); ++l) {
        grad_storage.push_back(bound.phi.weights[l].grad());
        grad_storage.push_back(bound.phi.biases[l].grad());
      }
      for (std::size_t l = 0; l < bound.head.weights.size(); ++l) {
        grad_storage.push_back(bound.head.weights[l].grad());
        grad_storage.push_back(bound.head.biases[l].grad());
      }
      Mat ls_param(1, 1);
      if (train_log_sigma) {
        ls_param(0, 0) = model.log_sigma;
        params.push_back(&ls_param);
        grad_storage.push_back(bound.log_sigma.grad());
      }
      std::vector<const Mat*> grads;
      grads.reserve(grad_storage.size());
      for (const Mat& g : grad_storage) grads.push_back(&g);
      opt.step(params, grads);
      if (train_log_sigma) model.log_sigma = ls_param(0, 0);

      stats.cls_loss += parts.cls_loss;
      stats.rho_s += parts.rho_s;
      stats.rho_t += parts.rho_t;
    }
    stats.cls_loss /= steps;
    stats.rho_s /= steps;
    stats.rho_t /= steps;
    stats.val_objective = validation_objective();
    result.history.push_back(stats);

    if (stats.val_objective < best_val) {
      best_val = stats.val_objective;
      best = Snapshot::of(model);
      best_epoch = epoch;
      since_improvement = 0;
    } else {
      ++since_improvement;
      if (since_improvement >= cfg.patience) break;
    }
  }

  if (best_epoch > 0) best.restore(model);
  result.model = std::move(model);
  result.best_epoch = best_epoch;
  return result;
}

SweepResult sweep(const data::Dataset& dataset, const std::vector<double>& lambda_s_values,
                  const std::vector<std::uint64_t>& seeds, const TrainConfig& cfg,
                  const eval::AuditConfig& audit_cfg, int workers, const SweepCallback& on_run) {
  if (lambda_s_values.empty()) throw std::invalid_argument("sweep: no lambda_s values");
  if (seeds.empty()) throw std::invalid_argument("sweep: no seeds");
  struct Job {
    double lambda_s;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (double l : lambda_s_values)
    for (std::uint64_t s : seeds) jobs.push_back({l, s});

  std::vector<SweepRow> rows(jobs.size());
  std::exception_ptr first_error = nullptr;
  std::mutex error_mutex;
  std::atomic<std::size_t> next{0};

  auto run_job = [&](std::size_t i) {
    const Job& job = jobs[i];
    TrainConfig run_cfg = cfg;
    run_cfg.weights.lambda_s = job.lambda_s;
    TrainResult tr = train(dataset.train, dataset.val, run_cfg, job.seed);
    eval::FairnessReport report = eval::evaluate_model(tr.model, dataset.test);
    const Mat reps = tr.model.representations(dataset.test.features);
    Rng audit_seeds(job.seed);
    const eval::ClassifierAudit cls_audit = eval::sensitive_classifier_audit(
        reps, dataset.test.s, audit_cfg, audit_seeds.stream(17).seed());
    const double power = eval::mmd_power_audit(reps, dataset.test.s, audit_cfg,
                                               audit_seeds.stream(18).seed());
    rows[i] = {job.lambda_s, job.seed,        report.accuracy,  report.dp,
               report.eo,    cls_audit.accuracy, power};
    if (on_run) on_run(i, rows[i], tr);
  };

  auto worker_fn = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      try {
        run_job(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };

  const int n_threads = std::max(1, std::min<int>(workers, static_cast<int>(jobs.size())));
  if (n_threads == 1) {
    worker_fn();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker_fn);
    for (std::thread& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  SweepResult result;
  result.rows = std::move(rows);
  for (double l : lambda_s_values) {
    std::vector<const SweepRow*> group;
    for (const SweepRow& r : result.rows)
      if (r.lambda_s == l) group.push_back(&r);
    auto stat = [&](auto field) {
      double mean = 0.0;
      for (const SweepRow* r : group) mean += field(*r);
      mean /= static_cast<double>(group.size());
      double var = 0.0;
      for (const SweepRow* r : group) var += (field(*r) - mean) * (field(*r) - mean);
      const double sd = group.size() > 1 ? std::sqrt(var / static_cast<double>(group.size() - 1))
                                         : 0.0;
      return std::pair<double, double>(mean, sd);
    };
    SweepAggregate agg;
    agg.lambda_s = l;
    agg.runs = static_cast<int>(group.size());
    std::tie(agg.accuracy_mean, agg.accuracy_std) = stat([](const SweepRow& r) { return r.accuracy; });
    std::tie(agg.dp_mean, agg.dp_std) = stat([](const SweepRow& r) { return r.dp; });
    std::tie(agg.eo_mean, agg.eo_std) = stat([](const SweepRow& r) { return r.eo; });
    std::tie(agg.sensitive_audit_acc_mean, agg.sensitive_audit_acc_std) =
        stat([](const SweepRow& r) { return r.sensitive_audit_acc; });
    std::tie(agg.mmd_audit_power_mean, agg.mmd_audit_power_std) =
        stat([](const SweepRow& r) { return r.mmd_audit_power; });
    result.aggregates.push_back(agg);
  }
  return result;
}

}  // namespace mbf::fairlearn
