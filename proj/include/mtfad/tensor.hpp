#pragma once

#include <Eigen/Dense>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mtfad/errors.hpp"

namespace mtfad::tensor {

using Shape = std::vector<Eigen::Index>;

Eigen::Index shape_size(const Shape& shape);
bool same_shape(const Shape& a, const Shape& b);
std::string shape_str(const Shape& shape);

// Named parameter arrays plus Adam state. Values are doubles in memory;
// checkpoints are serialised as little-endian float32 blobs.
class ParamStore {
 public:
  void create(const std::string& name, Shape shape, Eigen::ArrayXd init);
  bool has(const std::string& name) const { return entries_.count(name) > 0; }

  Eigen::ArrayXd& value(const std::string& name);
  const Eigen::ArrayXd& value(const std::string& name) const;
  Eigen::ArrayXd& grad(const std::string& name);
  const Shape& shape(const std::string& name) const;

  std::vector<std::string> names() const;  // sorted
  Eigen::Index total_size() const;
  void zero_grads();
  long step_count() const { return step_; }

  // Concatenation of grads over names() order, for whole-model diagnostics.
  Eigen::VectorXd packed_grads() const;

  friend void adam_step(ParamStore& store, double lr, double beta1, double beta2, double eps);
  friend void save_checkpoint(const ParamStore& store, const std::string& manifest_path,
                              const std::string& blob_path, const std::string& extra_key,
                              const std::string& extra_json);
  friend void load_checkpoint(ParamStore& store, const std::string& manifest_path,
                              const std::string& blob_path);

 private:
  struct Entry {
    Shape shape;
    Eigen::ArrayXd value;
    Eigen::ArrayXd grad;
    Eigen::ArrayXd m;
    Eigen::ArrayXd v;
  };
  std::map<std::string, Entry> entries_;
  long step_ = 0;
};

// Standard Adam with bias correction; zeroes gradients afterwards.
void adam_step(ParamStore& store, double lr, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8);

void save_checkpoint(const ParamStore& store, const std::string& manifest_path,
                     const std::string& blob_path, const std::string& extra_key = {},
                     const std::string& extra_json = {});
// Loads into an existing store; unknown names or shape mismatches are rejected.
void load_checkpoint(ParamStore& store, const std::string& manifest_path,
                     const std::string& blob_path);
std::string load_checkpoint_extra(const std::string& manifest_path, const std::string& extra_key);

class Tape;

// Handle into a tape node. Values are flat row-major; a (B, C, w) array is
// indexed as (b * C + c) * w + t.
struct DiffArray {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Shape& shape() const;
  const Eigen::ArrayXd& value() const;
  const Eigen::ArrayXd& grad() const;
  Eigen::Index size() const;
};

class Tape {
 public:
  // Tracked leaf; its gradient is retrievable after backward().
  DiffArray input(Shape shape, Eigen::ArrayXd data);
  // Leaf bound to a named parameter; repeated requests return the same node,
  // and backward() accumulates into the store's gradient.
  DiffArray param(ParamStore& store, const std::string& name);

  // Reverse traversal from a scalar loss. Gradients accumulate additively
  // into node and parameter-store buffers; calling twice doubles them.
  void backward(const DiffArray& loss);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  friend struct DiffArray;
  friend class OpBuilder;

  struct Node {
    Shape shape;
    Eigen::ArrayXd value;
    Eigen::ArrayXd grad;
    // Adds this node's contribution into its parents' entries of the
    // per-backward gradient buffer.
    std::function<void(Tape&, std::vector<Eigen::ArrayXd>&, const Eigen::ArrayXd&)> pull;
    ParamStore* store = nullptr;
    std::string param_name;
  };

  std::vector<Node> nodes_;
  std::map<std::pair<const ParamStore*, std::string>, std::size_t> param_nodes_;

  std::size_t add_node(Shape shape, Eigen::ArrayXd value,
                       std::function<void(Tape&, std::vector<Eigen::ArrayXd>&,
                                          const Eigen::ArrayXd&)> pull);
  Node& node(std::size_t id) { return nodes_[id]; }
};

// ---- differentiable primitives -------------------------------------------

DiffArray add(DiffArray a, DiffArray b);
DiffArray sub(DiffArray a, DiffArray b);
DiffArray elementwise_mul(DiffArray a, DiffArray b);
DiffArray scale(DiffArray a, double factor);
DiffArray relu(DiffArray x);
DiffArray gelu(DiffArray x);
DiffArray stop_gradient(DiffArray x);

// 2-D matrix product with optional transposes.
DiffArray matmul(DiffArray a, DiffArray b, bool transpose_a = false, bool transpose_b = false);

// x: (B, n), w: (n, m), bias: (m) -> (B, m)
DiffArray dense(DiffArray x, DiffArray w, DiffArray bias);

// Per-column scale and shift of a 2-D array; realises a width-one depthwise
// convolution over channel vectors.
DiffArray channel_affine(DiffArray x, DiffArray scale, DiffArray shift);

// Row-stochastic softmax of a 2-D array.
DiffArray softmax_rows(DiffArray x);

// Per-row standardisation of a 2-D array (population variance, eps 1e-8).
DiffArray layer_norm(DiffArray x);

// Mean over the last axis: (B, C, w) -> (B, C), (C, w) -> (C).
DiffArray global_avg_pool(DiffArray x);

// Concatenation along axis 1 (channels for 3-D, features for 2-D).
DiffArray concat_channels(const std::vector<DiffArray>& xs);
DiffArray slice_channels(DiffArray x, Eigen::Index from, Eigen::Index to);

// 'Same'-padded 1-D cross-correlation. x: (B, Cin, w) or (Cin, w); kernels:
// (Cout, Cin, k); bias: (Cout). The fixed binary mask multiplies the kernels
// elementwise, realising variable kernel sizes inside a max-size buffer.
DiffArray conv1d(DiffArray x, DiffArray kernels, DiffArray bias, const Eigen::ArrayXd& mask);

DiffArray sum(DiffArray x);
DiffArray mean(DiffArray x);
DiffArray pick(DiffArray x, Eigen::Index flat_index);

// Class-weighted cross entropy over logits (B, K), mean over the batch.
DiffArray cross_entropy(DiffArray logits, const std::vector<int>& targets,
                        const Eigen::VectorXd& class_weights);

}  // namespace mtfad::tensor
