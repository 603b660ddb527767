#pragma once

#include <Eigen/Dense>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "mtfad/errors.hpp"

namespace mtfad::core {

// A length-n, c-variable numeric series. Row = timestamp, column = variable.
// Labels and per-timestamp contributing-variable sets are optional.
struct SeriesFrame {
  Eigen::MatrixXd values;
  std::vector<int> labels;  // empty, or length n with entries in {0,1}
  std::map<Eigen::Index, std::set<Eigen::Index>> gt_vars;
  std::vector<std::string> var_names;

  Eigen::Index length() const { return values.rows(); }
  Eigen::Index variables() const { return values.cols(); }
  bool has_labels() const { return !labels.empty(); }

  // Throws data_error when any structural invariant is violated.
  void validate() const;
};

// CSV: one header row, comma-separated, '.'-decimal numerals.
// Label file: one 0/1 per line. GT file: "t,v1;v2;..." per line, 0-based.
SeriesFrame load_csv(const std::string& path, const std::string& label_path = {},
                     const std::string& gt_path = {});
void save_csv(const SeriesFrame& frame, const std::string& path,
              const std::string& label_path = {}, const std::string& gt_path = {});

struct MinMaxScaler {
  Eigen::VectorXd lo;
  Eigen::VectorXd span;  // zero span marks a constant column (mapped to 0)

  Eigen::MatrixXd apply(const Eigen::MatrixXd& values) const;
  Eigen::MatrixXd invert(const Eigen::MatrixXd& normalized) const;
};

// Per-variable affine map onto [0,1]; labels/gt are carried through unchanged.
std::pair<SeriesFrame, MinMaxScaler> min_max_normalize(const SeriesFrame& frame);

// One variable's discretization: sorted interior cut points. Value x lands in
// bin i iff edges[i-1] <= x < edges[i]; everything at or above the last edge
// falls into the final bin, so assignment is total on finite input.
struct BinRow {
  int requested = 0;           // candidate bin count the edges were built for
  std::vector<double> edges;   // strictly increasing, size = effective bins - 1
  double entropy = 0.0;        // nats, measured on the fitting series

  int bin_count() const { return static_cast<int>(edges.size()) + 1; }
};

struct BinModel {
  std::vector<BinRow> rows;  // one per variable
};

// Builds a row from explicit interior edges (deduplicated, sorted).
BinRow bins_from_edges(std::vector<double> edges);

// Quantile cut points at i/q, i = 1..q-1; duplicate edges collapse so the
// effective bin count can shrink on low-cardinality data.
BinRow quantile_bins(const Eigen::VectorXd& series, int q);

Eigen::VectorXi discretize(const Eigen::VectorXd& series, const BinRow& bins);

// Empirical bin-frequency entropy, -sum p_i log p_i in nats.
double discretization_entropy(const Eigen::VectorXi& assignment, int bin_count);

// Evaluates every candidate and keeps the entropy maximiser; ties within
// 1e-9 go to the smallest candidate.
std::pair<int, BinRow> select_bin_count(const Eigen::VectorXd& series,
                                        const std::vector<int>& candidates);

BinModel fit_bins(const SeriesFrame& frame, const std::vector<int>& candidates);

struct Window {
  Eigen::Index start = 0;
  Eigen::MatrixXd numeric;  // c x w, channel-major slice of the frame
  int label = 0;            // 1 iff any contained point label is 1

  Eigen::Index width() const { return numeric.cols(); }
};

std::vector<Window> windows(const SeriesFrame& frame, Eigen::Index w, Eigen::Index stride);

}  // namespace mtfad::core
