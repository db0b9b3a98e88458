#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kernels.h"

namespace mbf::fairlearn {

using diff::Mat;

enum class FairMode { DP, EO };

FairMode parse_mode(const std::string& text);
std::string mode_name(FairMode mode);

// Relative strengths of the three loss terms.
struct FairnessWeights {
  double lambda_s = 1.0;
  double lambda_t = 1.0;
  double lambda_cls = 1.0;
  FairMode mode = FairMode::DP;
};

// Shared featurizer, classifier head, and the fixed Gaussian length-scale
// grids used by the inner maximization. log_sigma is the trainable
// length-scale of the single-kernel objectives.
struct FairModel {
  kernels::Featurizer phi;
  kernels::Featurizer head;  // hidden layer + linear 2-logit output
  std::vector<double> sensitive_grid;
  std::vector<double> target_grid;
  double log_sigma = 0.0;
  FairMode mode = FairMode::DP;

  Mat representations(const Mat& x) const { return phi.forward(x); }
  Mat logits(const Mat& x) const { return head.forward(phi.forward(x)); }
  std::vector<int> predict(const Mat& x) const;
};

// Versioned binary model file (magic "MBFM"): layer widths, grids, then all
// parameters as little-endian f64.
void save_model(const FairModel& model, const std::string& path);
FairModel load_model(const std::string& path);

}  // namespace mbf::fairlearn
