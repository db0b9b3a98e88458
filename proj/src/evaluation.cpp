#include "evaluation.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "estimators.h"
#include "io.h"
#include "optim.h"
#include "rng.h"

namespace mbf::eval {

using diff::Tape;
using diff::Tensor;

double demographic_parity(const std::vector<int>& predictions,
                          const std::vector<std::int8_t>& s) {
  if (predictions.size() != s.size())
    throw std::invalid_argument("demographic_parity: size mismatch");
  double count[2] = {0.0, 0.0}, positive[2] = {0.0, 0.0};
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] < 0) continue;
    count[s[i]] += 1.0;
    if (predictions[i] == 1) positive[s[i]] += 1.0;
  }
  if (count[0] == 0.0 || count[1] == 0.0)
    throw std::runtime_error("demographic_parity: a sensitive group is empty");
  return 1.0 - std::fabs(positive[0] / count[0] - positive[1] / count[1]);
}

EqualizedOdds equalized_odds(const std::vector<int>& predictions,
                             const std::vector<std::int8_t>& t,
                             const std::vector<std::int8_t>& s) {
  if (predictions.size() != t.size() || t.size() != s.size())
    throw std::invalid_argument("equalized_odds: size mismatch");
  EqualizedOdds result;
  double acc = 0.0;
  int present = 0;
  for (int cls = 0; cls < 2; ++cls) {
    double count[2] = {0.0, 0.0}, correct[2] = {0.0, 0.0};
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (t[i] != cls || s[i] < 0) continue;
      count[s[i]] += 1.0;
      if (predictions[i] == cls) correct[s[i]] += 1.0;
    }
    if (count[0] == 0.0 || count[1] == 0.0) continue;  // class absent in a group
    const double v = 1.0 - std::fabs(correct[0] / count[0] - correct[1] / count[1]);
    result.per_class[static_cast<std::size_t>(cls)] = v;
    acc += v;
    ++present;
  }
  if (present == 0)
    throw std::runtime_error("equalized_odds: no target class has both sensitive groups");
  result.mean = acc / present;
  return result;
}

FairnessReport evaluate_model(const FairModel& model, const data::DatasetSplit& split) {
  const std::vector<int> pred = model.predict(split.features);
  FairnessReport report;
  double labeled = 0.0, correct = 0.0;
  for (std::size_t i = 0; i < split.t.size(); ++i) {
    if (split.t[i] < 0) continue;
    labeled += 1.0;
    if (pred[i] == split.t[i]) correct += 1.0;
  }
  if (labeled == 0.0) throw std::runtime_error("evaluate_model: no target labels in split");
  report.accuracy = correct / labeled;
  report.dp = demographic_parity(pred, split.s);
  const EqualizedOdds eo = equalized_odds(pred, split.t, split.s);
  report.eo = eo.mean;
  report.eo_components = eo.per_class;
  return report;
}

namespace {

// Small classifier trained with Adam + cross-entropy on frozen inputs.
kernels::Featurizer train_classifier(const Mat& x, const std::vector<int>& y, int hidden,
                                     const AuditConfig& cfg, Rng& rng) {
  kernels::Featurizer net =
      kernels::Featurizer::init(static_cast<int>(x.cols()), {hidden, 2}, rng);
  diff::Optimizer opt = diff::Optimizer::adam(cfg.cls_learning_rate);
  const int n = static_cast<int>(x.rows());
  const int steps = std::max(1, n / cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int step = 0; step < steps; ++step) {
      const int bs = std::min(cfg.batch_size, n);
      Mat bx(bs, x.cols());
      std::vector<int> by(static_cast<std::size_t>(bs));
      for (int i = 0; i < bs; ++i) {
        const auto r = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
        bx.row(i) = x.row(r);
        by[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(r)];
      }
      Tape tape;
      kernels::Featurizer::Bound bound = net.bind(tape);
      Tensor loss = diff::cross_entropy(bound.forward(tape, bx), by);
      tape.backward(loss);
      std::vector<Mat> grad_storage;
      std::vector<const Mat*> grads = kernels::Featurizer::gradients(bound, grad_storage);
      std::vector<Mat*> params = net.parameters();
      opt.step(params, grads);
    }
  }
  return net;
}

std::vector<int> predict_with(const kernels::Featurizer& net, const Mat& x) {
  const Mat z = net.forward(x);
  std::vector<int> out(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    Eigen::Index best;
    z.row(i).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

}  // namespace

AuditPartition audit_partition(const std::vector<std::int8_t>& labels, double train_fraction,
                               std::uint64_t seed) {
  Rng rng(seed);
  std::vector<int> labeled;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] >= 0) labeled.push_back(static_cast<int>(i));
  if (labeled.size() < 4) throw std::runtime_error("audit: too few labeled rows");
  rng.shuffle(labeled);
  const std::size_t n_train = static_cast<std::size_t>(train_fraction * labeled.size());
  AuditPartition p;
  p.train.assign(labeled.begin(), labeled.begin() + static_cast<std::ptrdiff_t>(n_train));
  p.eval.assign(labeled.begin() + static_cast<std::ptrdiff_t>(n_train), labeled.end());
  return p;
}

ClassifierAudit sensitive_classifier_audit(const Mat& representations,
                                           const std::vector<std::int8_t>& s,
                                           const AuditConfig& cfg, std::uint64_t seed) {
  if (static_cast<std::size_t>(representations.rows()) != s.size())
    throw std::invalid_argument("sensitive_classifier_audit: size mismatch");
  Rng rng(Rng(seed).stream(1).seed());
  const AuditPartition part = audit_partition(s, cfg.train_fraction, seed);
  std::array<double, 2> train_class_count = {0.0, 0.0};
  for (int i : part.train) train_class_count[s[static_cast<std::size_t>(i)]] += 1.0;
  if (train_class_count[0] == 0.0 || train_class_count[1] == 0.0)
    throw std::runtime_error("sensitive_classifier_audit: single-class sensitive attribute");

  Mat x = data::take_rows(representations, part.train);
  std::vector<int> y;
  y.reserve(part.train.size());
  for (int i : part.train) y.push_back(s[static_cast<std::size_t>(i)]);
  // hidden layer as wide as the representation
  kernels::Featurizer net =
      train_classifier(x, y, static_cast<int>(representations.cols()), cfg, rng);

  const std::vector<int> pred = predict_with(net, data::take_rows(representations, part.eval));
  double correct = 0.0;
  std::array<double, 2> eval_class_count = {0.0, 0.0};
  for (std::size_t i = 0; i < part.eval.size(); ++i) {
    const int truth = s[static_cast<std::size_t>(part.eval[i])];
    eval_class_count[static_cast<std::size_t>(truth)] += 1.0;
    if (pred[i] == truth) correct += 1.0;
  }
  ClassifierAudit audit;
  audit.accuracy = correct / static_cast<double>(part.eval.size());
  audit.majority_baseline = std::max(eval_class_count[0], eval_class_count[1]) /
                            static_cast<double>(part.eval.size());
  return audit;
}

double mmd_power_audit(const Mat& representations, const std::vector<std::int8_t>& s,
                       const AuditConfig& cfg, std::uint64_t seed) {
  if (static_cast<std::size_t>(representations.rows()) != s.size())
    throw std::invalid_argument("mmd_power_audit: size mismatch");
  Rng rng(Rng(seed).stream(1).seed());
  const AuditPartition part = audit_partition(s, cfg.train_fraction, seed);
  std::array<std::vector<int>, 2> train_groups, eval_groups;
  for (int i : part.train) train_groups[s[static_cast<std::size_t>(i)]].push_back(i);
  for (int i : part.eval) eval_groups[s[static_cast<std::size_t>(i)]].push_back(i);
  for (int g = 0; g < 2; ++g) {
    if (static_cast<int>(eval_groups[g].size()) < 2 * cfg.per_group)
      throw std::runtime_error("mmd_power_audit: need at least " +
                               std::to_string(2 * cfg.per_group) +
                               " evaluation samples per sensitive group");
    if (train_groups[g].size() < 2)
      throw std::runtime_error("mmd_power_audit: empty sensitive training group");
  }

  // Audit kernel: Gaussian over a one-hidden-layer MLP, trained to maximize
  // the sensitive block power on the training portion only.
  const int rep_dim = static_cast<int>(representations.cols());
  kernels::Featurizer phi =
      kernels::Featurizer::init(rep_dim, {cfg.hidden, cfg.hidden}, rng);
  const int probe = static_cast<int>(std::min<std::size_t>(part.train.size(), 256));
  std::vector<int> probe_rows(part.train.begin(), part.train.begin() + probe);
  double log_sigma =
      std::log(kernels::median_heuristic(phi.forward(data::take_rows(representations, probe_rows))));

  const int min_group = static_cast<int>(std::min(train_groups[0].size(), train_groups[1].size()));
  estimators::PowerConfig power;
  power.alpha = cfg.alpha;
  power.m = std::max(4, min_group);
  power.b = power.B =
      std::max(2, static_cast<int>(std::floor(std::sqrt(static_cast<double>(power.m)))));
  power.lambda = std::pow(static_cast<double>(cfg.per_group), 2.0 / 3.0);

  diff::Optimizer opt = diff::Optimizer::adam(cfg.learning_rate);
  const int steps = std::max(1, static_cast<int>(part.train.size()) / cfg.batch_size);
  auto draw_group = [&](const std::vector<int>& group, int k) {
    Mat out(k, representations.cols());
    if (static_cast<std::size_t>(k) <= group.size()) {
      const auto pick = rng.sample_without_replacement(group.size(), static_cast<std::size_t>(k));
      for (int i = 0; i < k; ++i)
        out.row(i) = representations.row(group[pick[static_cast<std::size_t>(i)]]);
    } else {
      for (int i = 0; i < k; ++i)
        out.row(i) = representations.row(group[rng.below(group.size())]);
    }
    return out;
  };
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int step = 0; step < steps; ++step) {
      Mat bp = draw_group(train_groups[0], cfg.per_group);
      Mat bq = draw_group(train_groups[1], cfg.per_group);
      Tape tape;
      kernels::Featurizer::Bound bound = phi.bind(tape);
      Mat ls(1, 1);
      ls(0, 0) = log_sigma;
      Tensor ls_t = tape.leaf(ls);
      Tensor fp = bound.forward(tape, bp);
      Tensor fq = bound.forward(tape, bq);
      Tensor h = kernels::h_from_features(tape, fp, fq, ls_t);
      // maximize power = minimize its negation
      Tensor loss = diff::affine(estimators::block_power_hat(h, power), -1.0);
      tape.backward(loss);
      std::vector<Mat> grad_storage;
      for (std::size_t l = 0; l < bound.weights.size(); ++l) {
        grad_storage.push_back(bound.weights[l].grad());
        grad_storage.push_back(bound.biases[l].grad());
      }
      grad_storage.push_back(ls_t.grad());
      std::vector<const Mat*> grads;
      grads.reserve(grad_storage.size());
      for (const Mat& g : grad_storage) grads.push_back(&g);
      std::vector<Mat*> params = phi.parameters();
      Mat ls_param(1, 1);
      ls_param(0, 0) = log_sigma;
      params.push_back(&ls_param);
      opt.step(params, grads);
      log_sigma = ls_param(0, 0);
    }
  }

  // Repeated permutation tests on the held-out portion.
  kernels::DeepKernel audit_kernel{phi, log_sigma};
  kernels::KernelSpec spec = audit_kernel;
  int rejections = 0;
  for (int trial = 0; trial < cfg.trials; ++trial) {
    Rng trial_rng = Rng(seed).stream(1000 + static_cast<std::uint64_t>(trial));
    auto pick_eval = [&](const std::vector<int>& group) {
      const auto pick =
          trial_rng.sample_without_replacement(group.size(), static_cast<std::size_t>(cfg.per_group));
      Mat out(cfg.per_group, representations.cols());
      for (int i = 0; i < cfg.per_group; ++i)
        out.row(i) = representations.row(group[pick[static_cast<std::size_t>(i)]]);
      return out;
    };
    Mat sp = pick_eval(eval_groups[0]);
    Mat sq = pick_eval(eval_groups[1]);
    const double stat = static_cast<double>(cfg.per_group) *
                        estimators::mmd_u_sq(kernels::h_matrix(sp, sq, spec));
    const double threshold = estimators::permutation_threshold(
        sp, sq, spec, cfg.alpha, cfg.n_permutations, trial_rng.raw());
    if (stat > threshold) ++rejections;
  }
  return static_cast<double>(rejections) / static_cast<double>(cfg.trials);
}

FairnessReport transfer_eval(const Mat& representations,
                             const std::vector<std::int8_t>& transfer_labels,
                             const std::vector<std::int8_t>& s, const AuditConfig& cfg,
                             std::uint64_t seed) {
  if (static_cast<std::size_t>(representations.rows()) != transfer_labels.size() ||
      transfer_labels.size() != s.size())
    throw std::invalid_argument("transfer_eval: size mismatch");
  Rng rng(Rng(seed).stream(1).seed());
  const AuditPartition part = audit_partition(transfer_labels, cfg.train_fraction, seed);
  Mat x = data::take_rows(representations, part.train);
  std::vector<int> y;
  for (int i : part.train) y.push_back(transfer_labels[static_cast<std::size_t>(i)]);
  kernels::Featurizer net =
      train_classifier(x, y, static_cast<int>(representations.cols()), cfg, rng);

  const std::vector<int> pred = predict_with(net, data::take_rows(representations, part.eval));
  FairnessReport report;
  double correct = 0.0;
  std::vector<std::int8_t> eval_t, eval_s;
  for (std::size_t i = 0; i < part.eval.size(); ++i) {
    const std::size_t row = static_cast<std::size_t>(part.eval[i]);
    eval_t.push_back(transfer_labels[row]);
    eval_s.push_back(s[row]);
    if (pred[i] == transfer_labels[row]) correct += 1.0;
  }
  report.accuracy = correct / static_cast<double>(part.eval.size());
  report.dp = demographic_parity(pred, eval_s);
  const EqualizedOdds eo = equalized_odds(pred, eval_t, eval_s);
  report.eo = eo.mean;
  report.eo_components = eo.per_class;
  return report;
}

void export_embeddings(const FairModel& model, const data::DatasetSplit& split,
                       const std::string& path) {
  const Mat z = model.representations(split.features);
  std::string out;
  std::vector<std::string> header = {"row", "t", "s"};
  for (Eigen::Index j = 0; j < z.cols(); ++j) header.push_back("z" + std::to_string(j));
  out += io::csv_line(header);
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    std::vector<std::string> cells = {std::to_string(i),
                                      std::to_string(static_cast<int>(split.t[static_cast<std::size_t>(i)])),
                                      std::to_string(static_cast<int>(split.s[static_cast<std::size_t>(i)]))};
    for (Eigen::Index j = 0; j < z.cols(); ++j) cells.push_back(io::format_double(z(i, j)));
    out += io::csv_line(cells);
  }
  io::write_file(path, out);
}

}  // namespace mbf::eval
