#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "mtfad/core.hpp"
#include "mtfad/mvmtf.hpp"
#include "mtfad/tensor.hpp"

namespace mtfad::model {

struct ModelConfig {
  Eigen::Index window = 30;
  Eigen::Index channels = 0;  // variable count, fixed by the training data
  std::vector<int> layer1_kernels{2, 3, 5, 7};
  std::vector<int> layer2_kernels{2, 3, 5, 7};
  std::vector<int> layer3_kernels{1, 2};
  int out_channels = 8;   // per kernel branch
  int embed_dim = 64;
  int fusion_hidden = 64; // gated half width; the expansion is twice this
  int receptive_budget = 16;
  Eigen::Index batch = 32;
  int epochs = 20;
  double lr = 0.001;
  unsigned long seed = 42;
  std::vector<double> class_weights;  // empty = inverse class frequency
  bool use_image_modality = true;     // false feeds raw channels to both branches

  // Throws config_error on non-prime layer-1/2 kernels, a layer-3 list other
  // than {1,2}, or a receptive-field coverage gap.
  void validate() const;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

struct CoverReport {
  bool ok = false;
  std::vector<int> missing;  // uncovered even sizes in [4, budget)
};

// True iff {p1 + p2} over the two kernel lists covers every even integer in
// [4, budget).
CoverReport verify_receptive_cover(const std::vector<int>& layer1, const std::vector<int>& layer2,
                                   int budget);

inline int receptive_field(int p1, int p2, int p3) { return p1 + p2 + p3 - 2; }

bool is_prime(int n);

struct MultimodalBatch {
  Eigen::ArrayXd numeric;  // flat (B, c, w)
  Eigen::ArrayXd image;    // flat (B, c, w), entries in [0, 1]
  std::vector<int> targets;
  Eigen::Index batch = 0;
};

class MultimodalNet {
 public:
  explicit MultimodalNet(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  tensor::ParamStore& params() { return params_; }
  const tensor::ParamStore& params() const { return params_; }

  struct Forward {
    tensor::DiffArray f_num;   // (B, d) numeric embedding after shared blocks
    tensor::DiffArray f_img;   // (B, d) image embedding, same parameters
    tensor::DiffArray attn_ni; // (B, B) row-stochastic weights, numeric -> image
    tensor::DiffArray attn_in; // (B, B) image -> numeric
    tensor::DiffArray fused;   // (B, d) output of the fusion stack
    tensor::DiffArray logits;  // (B, 2)
    Eigen::VectorXd prob1;     // anomaly probability per sample
  };

  // detach_* cuts the gradient path of one modality's embedding, isolating
  // the other modality's contribution to the shared-parameter gradients.
  Forward forward(tensor::Tape& tape, tensor::DiffArray numeric, tensor::DiffArray image,
                  bool detach_numeric = false, bool detach_image = false);

  Forward forward_batch(tensor::Tape& tape, const MultimodalBatch& batch,
                        bool detach_numeric = false, bool detach_image = false);

  // One Adam step per batch; both modality passes contribute gradients to
  // that step. Returns per-batch losses; NaN raises divergence_error.
  std::vector<double> train_epoch(const std::vector<MultimodalBatch>& batches,
                                  const Eigen::VectorXd& class_weights);

  // Anomaly probability for a batch, inference only.
  Eigen::VectorXd predict_batch(const MultimodalBatch& batch);

  // Stages exposed for structural tests and the explainers.
  tensor::DiffArray shared_blocks(tensor::Tape& tape, tensor::DiffArray x);
  tensor::DiffArray embed(tensor::Tape& tape, tensor::DiffArray blocks_out);
  tensor::DiffArray fuse(tensor::Tape& tape, tensor::DiffArray f_ni, tensor::DiffArray f_in);

 private:
  ModelConfig cfg_;
  tensor::ParamStore params_;
  std::vector<std::vector<Eigen::ArrayXd>> masks_;  // per layer, per kernel branch
  std::vector<std::vector<int>> layer_kernels_;
  std::vector<Eigen::Index> layer_in_channels_;
};

Eigen::VectorXd inverse_frequency_weights(const std::vector<int>& targets);

// Deterministic batch assembly: windows are shuffled with the given seed and
// packed into fixed-size batches (last one smaller).
std::vector<MultimodalBatch> make_batches(const std::vector<Eigen::ArrayXd>& numeric,
                                          const std::vector<Eigen::ArrayXd>& image,
                                          const std::vector<int>& targets, Eigen::Index c,
                                          Eigen::Index w, Eigen::Index batch_size,
                                          unsigned long seed);

struct AlignmentDiagnostic {
  double g_num_norm = 0.0;
  double g_img_norm = 0.0;
  std::optional<double> cosine;     // absent when either gradient is zero
  double lambda = 0.5;
  double delta_norm_direct = 0.0;   // || lambda g_n + (1-lambda) g_i ||
  double delta_norm_closed = 0.0;   // closed form from norms and cosine
};

// Combined-update magnitude || lambda g_n + (1-lambda) g_i ||, evaluated
// directly and through the norms-and-cosine closed form.
AlignmentDiagnostic combine_gradients(const Eigen::VectorXd& g_num, const Eigen::VectorXd& g_img,
                                      double lambda);

// Two separate backward passes split the shared-parameter gradient into its
// per-modality parts, then cross-checks the combined-step magnitude.
AlignmentDiagnostic gradient_alignment_diagnostic(MultimodalNet& net, const MultimodalBatch& batch,
                                                  const Eigen::VectorXd& class_weights,
                                                  double lambda);

// Everything needed to score unseen data.
struct Detector {
  core::BinModel bins;
  mvmtf::TransitionModel trans;
  core::MinMaxScaler scaler;
  double alpha = 0.9;
  Eigen::MatrixXd cross_weights;
  ModelConfig cfg;
};

// Converts one normalized window into its image channels.
Eigen::MatrixXd window_image_channels(const Detector& det, const core::Window& window);

struct Detection {
  std::vector<Eigen::Index> window_starts;
  std::vector<double> window_scores;
  std::vector<int> window_labels;
  std::vector<double> point_scores;  // max over covering windows
  std::vector<int> point_labels;     // score > 0.5
};

// Slides stride-spaced windows over an unnormalized frame, converts, and
// classifies. Requires the frame to match the training variable count.
Detection predict(const Detector& det, MultimodalNet& net, const core::SeriesFrame& frame,
                  Eigen::Index stride, int threads = 1);

}  // namespace mtfad::model
