#pragma once

#include <Eigen/Dense>
#include <set>
#include <string>
#include <vector>

#include "mtfad/core.hpp"
#include "mtfad/errors.hpp"
#include "mtfad/mvmtf.hpp"

namespace mtfad::eval {

// Marks every maximal ground-truth anomalous segment fully positive once any
// of its points is predicted positive; other predictions are untouched.
std::vector<int> point_adjust(const std::vector<int>& pred, const std::vector<int>& label);

struct DetectionMetrics {
  long tp = 0, fp = 0, fn = 0, tn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double f1_pa = 0.0;  // from point-adjusted predictions
};

DetectionMetrics detection_metrics(const std::vector<int>& pred, const std::vector<int>& label);

// Overlap of the ground-truth set with the top round(percent/100 * |GT|)
// ranked variables, as a fraction of |GT|.
double hit_at(const std::vector<Eigen::Index>& ranking, const std::set<Eigen::Index>& gt,
              double percent);

// Binary-relevance NDCG over the same cutoff with log2(rank + 1) discounts.
double ndcg_at(const std::vector<Eigen::Index>& ranking, const std::set<Eigen::Index>& gt,
               double percent);

enum class Representation { kRaw, kMvmtf };

struct KlResult {
  Eigen::VectorXd per_variable;  // KL(abnormal || normal) per channel
  double aggregate = 0.0;        // mean over variables
};

// Histogram KL between values at abnormal and normal timestamps: 32 shared
// bins, additive smoothing 1e-6. The MV-MTF representation converts the
// whole frame through the sparse path before binning.
KlResult kl_separability(const core::SeriesFrame& frame, Representation rep, double alpha = 0.9);

struct BenchResult {
  std::vector<Eigen::Index> sizes;
  std::vector<double> sparse_seconds;  // median over repetitions
  std::vector<double> dense_seconds;
  double sparse_slope = 0.0;  // log-log least squares
  double dense_slope = 0.0;
  double ratio_at_max = 0.0;  // dense / sparse at the largest size

  std::string table() const;  // aligned text
  std::string to_json() const;
};

// Times the sparse and dense conversion paths on seeded synthetic data of c
// variables at each requested series length.
BenchResult bench_conversion(const std::vector<Eigen::Index>& sizes, Eigen::Index c,
                             int repetitions, unsigned long seed);

// Least-squares slope of log(y) on log(x).
double loglog_slope(const std::vector<Eigen::Index>& x, const std::vector<double>& y);

}  // namespace mtfad::eval
