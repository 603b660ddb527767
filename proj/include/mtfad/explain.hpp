#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mtfad/core.hpp"
#include "mtfad/errors.hpp"
#include "mtfad/model.hpp"

namespace mtfad::explain {

// Model output for a coalition; present[v] == false means variable v's
// numeric channels are replaced by the baseline.
using CoalitionFn = std::function<double(const std::vector<bool>& present)>;

// Full subset enumeration with the Shapley factorial weights. The model is
// evaluated once per coalition (2^c calls); c is capped by the caller.
Eigen::VectorXd exact_shapley(const CoalitionFn& f, Eigen::Index c);

struct SampledShapley {
  Eigen::VectorXd phi;
  Eigen::VectorXd stderr_;
  int samples = 0;
};

// Monte-Carlo permutation sampling, seeded; samples must be >= 16.
SampledShapley sampled_shapley(const CoalitionFn& f, Eigen::Index c, int samples,
                               unsigned long seed);

// Dispatches to exact enumeration while c <= cap, sampling beyond it.
Eigen::VectorXd shapley_attribution(const CoalitionFn& f, Eigen::Index c, Eigen::Index cap,
                                    int samples, unsigned long seed);

// Differentiable scalar score of a (c, w) image input, built on the caller's
// tape so its input gradient can be pulled.
using ImageScoreFn =
    std::function<tensor::DiffArray(tensor::Tape&, tensor::DiffArray image)>;

// Binds a network and a fixed numeric window into an anomaly-probability
// score over the image channels.
ImageScoreFn anomaly_image_score(model::MultimodalNet& net, const Eigen::MatrixXd& numeric_cw);

// Baseline-relative input gradients on the image modality: grad of the score
// w.r.t. channel v dotted with the channel displacement, summed over time,
// averaged over baselines.
Eigen::VectorXd gradient_attribution(const ImageScoreFn& score, const Eigen::MatrixXd& image_cw,
                                     const std::vector<Eigen::MatrixXd>& baselines);

struct AttributionSet {
  Eigen::VectorXd s_kernel;    // numeric-modality Shapley values
  Eigen::VectorXd s_gradient;  // image-modality attributions (normalized)
  double gamma = 0.0;          // mean of s_kernel
  Eigen::VectorXd slope;       // a_v = s_K[v] - gamma * s_G[v]
  Eigen::VectorXd intercept;   // b_v = gamma * s_G[v]
  Eigen::VectorXd fused;       // s_v = omega * a_v + b_v
  double omega = 0.6;
  double lipschitz = 0.0;      // max |a_v|
  std::vector<Eigen::Index> ranking;  // descending fused, ties to lower index

  Eigen::VectorXd fused_at(double omega_prime) const;
  std::vector<Eigen::Index> ranking_at(double omega_prime) const;
};

AttributionSet fuse_attributions(const Eigen::VectorXd& s_kernel,
                                 const Eigen::VectorXd& s_gradient, double omega);

// Scales to unit max-absolute-value so both modalities are commensurate.
Eigen::VectorXd normalize_max_abs(const Eigen::VectorXd& values);

// Largest violation of |s_v(w') - s_v(w)| <= L |w' - w| over an omega grid;
// exact linearity makes this zero up to roundoff.
double lipschitz_check(const AttributionSet& attr, int grid_points = 11);

// Ranking-stability radius for the top-k set; infinity when all slopes agree.
double plateau_radius(const AttributionSet& attr, Eigen::Index k);

// resolves(m) reports whether replacing the top-m ranked variables with
// normal data flips the prediction to normal.
using ReplaceProbe = std::function<bool(Eigen::Index prefix_len)>;

// Binary search for the smallest flipping prefix; returns c when even a full
// replacement leaves the prediction anomalous.
Eigen::Index find_critical_point(const ReplaceProbe& resolves, Eigen::Index c);

// Exhaustive audit used to validate the search on small instances.
Eigen::Index find_critical_point_linear(const ReplaceProbe& resolves, Eigen::Index c);

struct AnomalyTypeModel {
  Eigen::MatrixXd centroids;  // K x d
  std::vector<std::string> type_names;
  std::vector<std::vector<std::string>> recommendations;
};

// Seeded k-means (50 iterations, best of 5 restarts by inertia) on fused
// embeddings of anomalous windows.
AnomalyTypeModel fit_anomaly_types(const Eigen::MatrixXd& embeddings, int k,
                                   std::vector<std::string> type_names,
                                   std::vector<std::vector<std::string>> recommendations,
                                   unsigned long seed);

int classify_anomaly_type(const AnomalyTypeModel& types, const Eigen::VectorXd& embedding);

AnomalyTypeModel default_type_labels();

struct ReportInput {
  std::string dataset;
  Eigen::Index timestamp = 0;
  Eigen::Index window_start = 0;
  double score = 0.0;
  AttributionSet attribution;
  Eigen::Index critical_k = 0;
  double plateau = 0.0;
  std::string type_name;
  std::vector<std::string> recommendations;
};

struct Report {
  std::string text;
  std::string record_json;  // structured record, round-trippable
};

Report render_report(const ReportInput& input);

}  // namespace mtfad::explain
