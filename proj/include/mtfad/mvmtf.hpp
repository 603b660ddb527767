#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "mtfad/core.hpp"
#include "mtfad/errors.hpp"

namespace mtfad::mvmtf {

// Pairwise bin-transition probabilities. For the ordered pair (u, v),
// W(i, j) is the empirical probability that variable v sits in bin j at t
// given variable u sat in bin i at t-1; rows with no observations stay zero.
struct TransitionModel {
  Eigen::Index variable_count = 0;
  std::vector<int> bin_counts;              // Q_u per variable
  std::vector<Eigen::MatrixXd> pair_w;      // indexed u * c + v, Q_u x Q_v
  std::vector<Eigen::VectorXi> row_counts;  // source-bin occurrences, same index

  const Eigen::MatrixXd& w(Eigen::Index u, Eigen::Index v) const {
    return pair_w[static_cast<std::size_t>(u * variable_count + v)];
  }
};

struct PairTransitions {
  Eigen::MatrixXd w;
  Eigen::VectorXi row_counts;
};

PairTransitions fit_pair_transitions(const Eigen::VectorXi& seq_u, const Eigen::VectorXi& seq_v,
                                     int q_u, int q_v);

TransitionModel fit_transition_model(const core::SeriesFrame& train, const core::BinModel& bins);

// Dense field: M(i, j) = W(seq_u[i], seq_v[j]) for all timestamp pairs.
Eigen::MatrixXd mtf_field_dense(const Eigen::VectorXi& seq_u, const Eigen::VectorXi& seq_v,
                                const Eigen::MatrixXd& w);

// Consecutive-timestamp band of the dense field: out[t] = W(seq_u[t], seq_v[t+1]).
// Linear in window length, no field materialisation.
Eigen::VectorXd mtf_field_sparse(const Eigen::VectorXi& seq_u, const Eigen::VectorXi& seq_v,
                                 const Eigen::MatrixXd& w);

enum class FieldMode { kDense, kSparse };

// Per-window multivariate field. In dense mode each per_var entry is a w x w
// matrix; in sparse mode it is the length-(w-1) band stored as a column.
struct MtfImage {
  Eigen::Index start = 0;
  Eigen::Index width = 0;
  FieldMode mode = FieldMode::kSparse;
  std::vector<Eigen::MatrixXd> per_var;  // M_u for every variable
  Eigen::MatrixXd combined;              // sum over variables, divided by c
};

// Cross-variable weights: row u holds the blend weights over the other
// variables; each row (excluding the diagonal) must sum to 1.
Eigen::MatrixXd uniform_cross_weights(Eigen::Index c);
Eigen::MatrixXd correlation_cross_weights(const core::SeriesFrame& train);

MtfImage compose_mvmtf(const core::Window& window, const core::BinModel& bins,
                       const TransitionModel& trans, double alpha,
                       const Eigen::MatrixXd& cross_weights, FieldMode mode);

// Adapts a sparse image to the 1-D convolutional pathway: channel u is the
// band of M_u right-padded with its last entry to the window width.
Eigen::MatrixXd image_channels(const MtfImage& img);

// Combined field only, accumulated cell by cell without per-pair temporaries.
// The float instantiation keeps the benchmark footprint at n^2 * 4 bytes.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> compose_dense_combined(
    const std::vector<Eigen::VectorXi>& seqs, const TransitionModel& trans, double alpha,
    const Eigen::MatrixXd& cross_weights) {
  const auto c = static_cast<Eigen::Index>(seqs.size());
  const Eigen::Index n = seqs.front().size();
  if (c == 1) alpha = 1.0;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> field(n, n);
  const double inv_c = 1.0 / static_cast<double>(c);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      double acc = 0.0;
      for (Eigen::Index u = 0; u < c; ++u) {
        double cell = alpha * trans.w(u, u)(seqs[static_cast<std::size_t>(u)](i),
                                            seqs[static_cast<std::size_t>(u)](j));
        if (alpha < 1.0) {
          for (Eigen::Index k = 0; k < c; ++k) {
            if (k == u) continue;
            cell += (1.0 - alpha) * cross_weights(u, k) *
                    trans.w(u, k)(seqs[static_cast<std::size_t>(u)](i),
                                  seqs[static_cast<std::size_t>(k)](j));
          }
        }
        acc += cell;
      }
      field(i, j) = static_cast<Scalar>(acc * inv_c);
    }
  }
  return field;
}

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> compose_sparse_combined(
    const std::vector<Eigen::VectorXi>& seqs, const TransitionModel& trans, double alpha,
    const Eigen::MatrixXd& cross_weights) {
  const auto c = static_cast<Eigen::Index>(seqs.size());
  const Eigen::Index n = seqs.front().size();
  if (c == 1) alpha = 1.0;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> band(n - 1);
  const double inv_c = 1.0 / static_cast<double>(c);
  for (Eigen::Index t = 0; t + 1 < n; ++t) {
    double acc = 0.0;
    for (Eigen::Index u = 0; u < c; ++u) {
      double cell = alpha * trans.w(u, u)(seqs[static_cast<std::size_t>(u)](t),
                                          seqs[static_cast<std::size_t>(u)](t + 1));
      if (alpha < 1.0) {
        for (Eigen::Index k = 0; k < c; ++k) {
          if (k == u) continue;
          cell += (1.0 - alpha) * cross_weights(u, k) *
                  trans.w(u, k)(seqs[static_cast<std::size_t>(u)](t),
                                seqs[static_cast<std::size_t>(k)](t + 1));
        }
      }
      acc += cell;
    }
    band(t) = static_cast<Scalar>(acc * inv_c);
  }
  return band;
}

// Convenience: discretize a window's channels with the fitted bins.
std::vector<Eigen::VectorXi> discretize_window(const core::Window& window,
                                               const core::BinModel& bins);

// Persistence: JSON manifest (bin edges, Q_u, alpha, weight policy) next to a
// flat little-endian float32 blob holding every W keyed by "(u,v)". extra_key
// stores one caller-owned JSON document alongside the model.
void save_transition_model(const TransitionModel& trans, const core::BinModel& bins, double alpha,
                           const std::string& weight_policy, const std::string& manifest_path,
                           const std::string& blob_path, const std::string& extra_key = {},
                           const std::string& extra_json = {});

std::string load_transition_extra(const std::string& manifest_path, const std::string& extra_key);

struct LoadedTransitionModel {
  TransitionModel trans;
  core::BinModel bins;
  double alpha = 0.9;
  std::string weight_policy = "uniform";
};

LoadedTransitionModel load_transition_model(const std::string& manifest_path,
                                            const std::string& blob_path);

}  // namespace mtfad::mvmtf
