#pragma once

#include <string>
#include <vector>

#include "mtfad/model.hpp"

namespace mtfad {

// Whole-pipeline configuration; a JSON document with the same field names can
// override any default, and CLI flags override the file.
struct RunConfig {
  Eigen::Index window = 30;
  Eigen::Index stride = 1;
  double alpha = 0.9;
  double omega = 0.6;
  double lambda = 0.5;  // modality weighting in the gradient-combination diagnostic
  std::vector<int> bin_candidates{4, 6, 8, 10, 12, 16};
  std::string weight_policy = "uniform";  // or "correlation"
  model::ModelConfig net;
  int anomaly_types = 3;
  Eigen::Index shapley_cap = 15;
  int shapley_samples = 512;
  int gradient_baselines = 8;
  unsigned long seed = 42;
  int threads = 1;

  void validate() const;
  std::string to_json() const;
  static RunConfig from_json(const std::string& text);
  static RunConfig load(const std::string& path);  // empty path -> defaults
};

}  // namespace mtfad
