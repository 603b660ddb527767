#include "mtfad/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace mtfad::tensor {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using GradBuf = std::vector<Eigen::ArrayXd>;

constexpr double kLayerNormEps = 1e-8;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

void require(bool cond, const std::string& message) {
  if (!cond) throw data_error(message);
}

}  // namespace

Eigen::Index shape_size(const Shape& shape) {
  Eigen::Index n = 1;
  for (Eigen::Index d : shape) n *= d;
  return n;
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

// ---- ParamStore ------------------------------------------------------------

void ParamStore::create(const std::string& name, Shape shape, Eigen::ArrayXd init) {
  if (entries_.count(name)) throw config_error("duplicate parameter name: " + name);
  if (init.size() != shape_size(shape)) {
    throw config_error("init for " + name + " has " + std::to_string(init.size()) +
                       " entries, shape " + shape_str(shape));
  }
  Entry e;
  e.shape = std::move(shape);
  e.grad = Eigen::ArrayXd::Zero(init.size());
  e.m = Eigen::ArrayXd::Zero(init.size());
  e.v = Eigen::ArrayXd::Zero(init.size());
  e.value = std::move(init);
  entries_.emplace(name, std::move(e));
}

Eigen::ArrayXd& ParamStore::value(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw config_error("unknown parameter: " + name);
  return it->second.value;
}

const Eigen::ArrayXd& ParamStore::value(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw config_error("unknown parameter: " + name);
  return it->second.value;
}

Eigen::ArrayXd& ParamStore::grad(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw config_error("unknown parameter: " + name);
  return it->second.grad;
}

const Shape& ParamStore::shape(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw config_error("unknown parameter: " + name);
  return it->second.shape;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, entry] : entries_) out.push_back(name);
  return out;
}

Eigen::Index ParamStore::total_size() const {
  Eigen::Index n = 0;
  for (const auto& [name, entry] : entries_) n += entry.value.size();
  return n;
}

void ParamStore::zero_grads() {
  for (auto& [name, entry] : entries_) entry.grad.setZero();
}

Eigen::VectorXd ParamStore::packed_grads() const {
  Eigen::VectorXd out(total_size());
  Eigen::Index at = 0;
  for (const auto& [name, entry] : entries_) {
    out.segment(at, entry.grad.size()) = entry.grad.matrix();
    at += entry.grad.size();
  }
  return out;
}

void adam_step(ParamStore& store, double lr, double beta1, double beta2, double eps) {
  store.step_ += 1;
  const double t = static_cast<double>(store.step_);
  const double bc1 = 1.0 - std::pow(beta1, t);
  const double bc2 = 1.0 - std::pow(beta2, t);
  for (auto& [name, e] : store.entries_) {
    e.m = beta1 * e.m + (1.0 - beta1) * e.grad;
    e.v = beta2 * e.v + (1.0 - beta2) * e.grad.square();
    e.value -= lr * (e.m / bc1) / ((e.v / bc2).sqrt() + eps);
    e.grad.setZero();
  }
}

void save_checkpoint(const ParamStore& store, const std::string& manifest_path,
                     const std::string& blob_path, const std::string& extra_key,
                     const std::string& extra_json) {
  std::ofstream blob(blob_path, std::ios::binary);
  if (!blob) throw data_error("cannot write " + blob_path);

  nlohmann::json params = nlohmann::json::array();
  std::int64_t offset = 0;
  for (const auto& [name, e] : store.entries_) {
    params.push_back({{"name", name},
                      {"shape", e.shape},
                      {"offset", offset},
                      {"count", e.value.size()}});
    for (Eigen::Index i = 0; i < e.value.size(); ++i) {
      const float f = static_cast<float>(e.value(i));
      blob.write(reinterpret_cast<const char*>(&f), sizeof(float));
    }
    offset += e.value.size() * static_cast<std::int64_t>(sizeof(float));
  }

  nlohmann::json manifest;
  manifest["params"] = params;
  manifest["blob_bytes"] = offset;
  if (!extra_key.empty()) manifest[extra_key] = nlohmann::json::parse(extra_json);

  std::ofstream out(manifest_path);
  if (!out) throw data_error("cannot write " + manifest_path);
  out << manifest.dump(2) << '\n';
}

void load_checkpoint(ParamStore& store, const std::string& manifest_path,
                     const std::string& blob_path) {
  std::ifstream in(manifest_path);
  if (!in) throw pipeline_error("missing checkpoint manifest: " + manifest_path);
  nlohmann::json manifest;
  in >> manifest;
  std::ifstream blob(blob_path, std::ios::binary);
  if (!blob) throw pipeline_error("missing checkpoint blob: " + blob_path);

  for (const auto& p : manifest.at("params")) {
    const auto name = p.at("name").get<std::string>();
    const auto shape = p.at("shape").get<Shape>();
    auto it = store.entries_.find(name);
    if (it == store.entries_.end()) {
      throw data_error("checkpoint parameter not expected by the model: " + name);
    }
    if (!same_shape(it->second.shape, shape)) {
      throw data_error("shape mismatch for " + name + ": checkpoint " + shape_str(shape) +
                       ", model " + shape_str(it->second.shape));
    }
    blob.seekg(p.at("offset").get<std::int64_t>());
    for (Eigen::Index i = 0; i < it->second.value.size(); ++i) {
      float f = 0.0f;
      blob.read(reinterpret_cast<char*>(&f), sizeof(float));
      it->second.value(i) = static_cast<double>(f);
    }
    if (!blob) throw data_error("truncated checkpoint blob: " + blob_path);
  }
}

std::string load_checkpoint_extra(const std::string& manifest_path, const std::string& extra_key) {
  std::ifstream in(manifest_path);
  if (!in) throw pipeline_error("missing checkpoint manifest: " + manifest_path);
  nlohmann::json manifest;
  in >> manifest;
  if (!manifest.contains(extra_key)) {
    throw pipeline_error("checkpoint manifest lacks key: " + extra_key);
  }
  return manifest.at(extra_key).dump();
}

// ---- Tape ------------------------------------------------------------------

const Shape& DiffArray::shape() const { return tape->nodes_[id].shape; }
const Eigen::ArrayXd& DiffArray::value() const { return tape->nodes_[id].value; }
const Eigen::ArrayXd& DiffArray::grad() const { return tape->nodes_[id].grad; }
Eigen::Index DiffArray::size() const { return value().size(); }

std::size_t Tape::add_node(Shape shape, Eigen::ArrayXd value,
                           std::function<void(Tape&, GradBuf&, const Eigen::ArrayXd&)> pull) {
  Node node;
  if (value.size() != shape_size(shape)) {
    throw data_error("node data does not match shape " + shape_str(shape));
  }
  node.shape = std::move(shape);
  node.grad = Eigen::ArrayXd::Zero(value.size());
  node.value = std::move(value);
  node.pull = std::move(pull);
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

DiffArray Tape::input(Shape shape, Eigen::ArrayXd data) {
  return {this, add_node(std::move(shape), std::move(data), nullptr)};
}

DiffArray Tape::param(ParamStore& store, const std::string& name) {
  const auto key = std::make_pair(static_cast<const ParamStore*>(&store), name);
  auto it = param_nodes_.find(key);
  if (it != param_nodes_.end()) return {this, it->second};
  const std::size_t id = add_node(store.shape(name), store.value(name), nullptr);
  nodes_[id].store = &store;
  nodes_[id].param_name = name;
  param_nodes_.emplace(key, id);
  return {this, id};
}

void Tape::backward(const DiffArray& loss) {
  if (loss.tape != this) throw config_error("loss belongs to a different tape");
  if (loss.size() != 1) throw config_error("backward requires a scalar loss");

  GradBuf grads(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    grads[i] = Eigen::ArrayXd::Zero(nodes_[i].value.size());
  }
  grads[loss.id](0) = 1.0;

  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (n.pull) n.pull(*this, grads, grads[i]);
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    nodes_[i].grad += grads[i];
    if (nodes_[i].store) nodes_[i].store->grad(nodes_[i].param_name) += grads[i];
  }
}

// ---- op helpers ------------------------------------------------------------

class OpBuilder {
 public:
  static DiffArray make(Tape* tape, Shape shape, Eigen::ArrayXd value,
                        std::function<void(Tape&, GradBuf&, const Eigen::ArrayXd&)> pull) {
    return {tape, tape->add_node(std::move(shape), std::move(value), std::move(pull))};
  }
  static const Eigen::ArrayXd& val(Tape& t, std::size_t id) { return t.nodes_[id].value; }
};

namespace {

DiffArray make(Tape* tape, Shape shape, Eigen::ArrayXd value,
               std::function<void(Tape&, GradBuf&, const Eigen::ArrayXd&)> pull) {
  return OpBuilder::make(tape, std::move(shape), std::move(value), std::move(pull));
}

const Eigen::ArrayXd& val(Tape& t, std::size_t id) { return OpBuilder::val(t, id); }

void check_same_tape(DiffArray a, DiffArray b) {
  if (a.tape != b.tape) throw config_error("operands belong to different tapes");
}

}  // namespace

// ---- elementwise -----------------------------------------------------------

DiffArray add(DiffArray a, DiffArray b) {
  check_same_tape(a, b);
  require(same_shape(a.shape(), b.shape()),
          "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t ia = a.id, ib = b.id;
  return make(a.tape, a.shape(), a.value() + b.value(),
              [ia, ib](Tape&, GradBuf& g, const Eigen::ArrayXd& gout) {
                g[ia] += gout;
                g[ib] += gout;
              });
}

DiffArray sub(DiffArray a, DiffArray b) {
  check_same_tape(a, b);
  require(same_shape(a.shape(), b.shape()),
          "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t ia = a.id, ib = b.id;
  return make(a.tape, a.shape(), a.value() - b.value(),
              [ia, ib](Tape&, GradBuf& g, const Eigen::ArrayXd& gout) {
                g[ia] += gout;
                g[ib] -= gout;
              });
}

DiffArray elementwise_mul(DiffArray a, DiffArray b) {
  check_same_tape(a, b);
  require(same_shape(a.shape(), b.shape()),
          "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t ia = a.id, ib = b.id;
  return make(a.tape, a.shape(), a.value() * b.value(),
              [ia, ib](Tape& t, GradBuf& g, const Eigen::ArrayXd& gout) {
                g[ia] += gout * val(t, ib);
                g[ib] += gout * val(t, ia);
              });
}

DiffArray scale(DiffArray a, double factor) {
  const std::size_t ia = a.id;
  return make(a.tape, a.shape(), a.value() * factor,
              [ia, factor](Tape&, GradBuf& g, const Eigen::ArrayXd& gout) {
                g[ia] += gout * factor;
              });
}

DiffArray relu(DiffArray x) {
  const std::size_t ix = x.id;
  return make(x.tape, x.shape(), x.value().max(0.0),
              [ix](Tape& t, GradBuf& g, const Eigen::ArrayXd& gout) {
                g[ix] += gout * (val(t, ix) > 0.0).cast<double>();
              });
}

DiffArray gelu(DiffArray x) {
  const std::size_t ix = x.id;
  Eigen::ArrayXd y(x.size());
  const Eigen::ArrayXd& v = x.value();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    y(i) = 0.5 * v(i) * (1.0 + std::erf(v(i) * kInvSqrt2));
  }
  return make(x.tape, x.shape(), std::move(y),
              [ix](Tape& t, GradBuf& g, const Eigen::ArrayXd& gout) {
                const Eigen::ArrayXd& v = val(t, ix);
                for (Eigen::Index i = 0; i < v.size(); ++i) {
                  const double cdf = 0.5 * (1.0 + std::erf(v(i) * kInvSqrt2));
                  const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v(i) * v(i));
                  g[ix](i) += gout(i) * (cdf + v(i) * pdf);
                }
              });
}

DiffArray stop_gradient(DiffArray x) {
  return make(x.tape, x.shape(), x.value(), nullptr);
}

// ---- linear algebra ---------------------------------------------------------

DiffArray matmul(DiffArray a, DiffArray b, bool transpose_a, bool transpose_b) {
  check_same_tape(a, b);
  require(a.shape().size() == 2 && b.shape().size() == 2, "matmul expects 2-D operands");
  const Eigen::Index ar = a.shape()[0], ac = a.shape()[1];
  const Eigen::Index br = b.shape()[0], bc = b.shape()[1];
  const Eigen::Index rows = transpose_a ? ac : ar;
  const Eigen::Index inner = transpose_a ? ar : ac;
  const Eigen::Index inner_b = transpose_b ? bc : br;
  const Eigen::Index cols = transpose_b ? br : bc;
  require(inner == inner_b, "matmul: inner dimensions disagree");

  CMapMat ma(a.value().data(), ar, ac);
  CMapMat mb(b.value().data(), br, bc);
  Eigen::ArrayXd out(rows * cols);
  MapMat mo(out.data(), rows, cols);
  if (!transpose_a && !transpose_b) mo.noalias() = ma * mb;
  if (!transpose_a && transpose_b) mo.noalias() = ma * mb.transpose();
  if (transpose_a && !transpose_b) mo.noalias() = ma.transpose() * mb;
  if (transpose_a && transpose_b) mo.noalias() = ma.transpose() * mb.transpose();

  const std::size_t ia = a.id, ib = b.id;
  return make(a.tape, {rows, cols}, std::move(out),
              [ia, ib, ar, ac, br, bc, rows, cols, transpose_a, transpose_b](
                  Tape& t, GradBuf& g, const Eigen::ArrayXd& gout) {
                CMapMat mg(gout.data(), rows, cols);
                CMapMat ma(val(t, ia).data(), ar, ac);
                CMapMat mb(val(t, ib).data(), br, bc);
                MapMat ga(g[ia].data(), ar, ac);
                MapMat gb(g[ib].data(), br, bc);
                if (!transpose_a) {
                  if (!transpose_b) {
                    ga.noalias() += mg * mb.transpose();
                    gb.noalias() += ma.transpose() * mg;
                  } else {
                    ga.noalias() += mg * mb;
                    gb.noalias() += mg.transpose() * ma;
                  }
                } else {
                  if (!transpose_b) {
                    ga.noalias() += mb * mg.transpose();
                    gb.noalias() += ma * mg;
                  } else {
                    ga.noalias() += mb.transpose() * mg.transpose();
                    gb.noalias() += mg.transpose() * ma.transpose();
                  }
                }
              });
}

DiffArray dense(DiffArray x, DiffArray w, DiffArray bias) {
  check_same_tape(x, w);
  check_same_tape(x, bias);
  require(x.shape().size() == 2 && w.shape().size() == 2 && bias.shape().size() == 1,
          "dense expects x (B,n), w (n,m), bias (m)");
  const Eigen::Index batch = x.shape()[0], n = x.shape()[1];
  const Eigen::Index wn = w.shape()[0], m = w.shape()[1];
  require(n == wn && bias.shape()[0] == m, "dense: dimension mismatch");

  CMapMat mx(x.value().data(), batch, n);
  CMapMat mw(w.value().data(), wn, m);
  Eigen::ArrayXd out(batch * m);
  MapMat mo(out.data(), batch, m);
  mo.noalias() = mx * mw;
  mo.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.value().data(), m);

  const std::size_t ix = x.id, iw = w.id, ib = bias.id;
  return make(x.tape, {batch, m}, std::move(out),
              [ix, iw, ib, batch, n, m](Tape& t, GradBuf& g, const Eigen::ArrayXd& gout) {
                CMapMat mg(gout.data(), batch, m);
                CMapMat mx(val(t, ix).data(), batch, n);
                CMapMat mw(val(t, iw).data(), n, m);
                MapMat gx(g[ix].data(), batch, n);
                MapMat gw(g[iw].data(), n, m);
                gx.noalias() += mg * mw.transpose();
                gw.noalias() += mx.transpose() * mg;
                Eigen::Map<Eigen::RowVectorXd>(g[ib].data(), m) += mg.colwise().sum();
              });
}

DiffArray channel_affine(DiffArray x, DiffArray scale_arr, DiffArray shift) {
  check_same_tape(x, scale_arr);
  check_same_tape(x, shift);
  require(x.shape().size() == 2, "channel_affine expects a 2-D array");
  const Eigen::Index rows = x.shape()[0], cols = x.shape()[1];
  require(scale_arr.size() == cols && shift.size() == cols,
          "channel_affine: per-channel parameter size mismatch");

  Eigen::ArrayXd out(rows * cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    out.segment(r * cols, cols) =
        x.value().segment(r * cols, cols) * scale_arr.value() + shift.value();
  }
  const std::size_t ix = x.id, is = scale_arr.id, ib = shift.id;
  return make(x.tape, x.shape(), std::move(out),
              [ix, is, ib, rows, cols](Tape& t, GradBuf& g, const Eigen::ArrayXd& gout) {
                const Eigen::ArrayXd& xv = val(t, ix);
                const Eigen::ArrayXd& sv = val(t, is);
                for (Eigen::Index r = 0; r < rows; ++r) {
                  const auto gseg = gout.segment(r * cols, cols);
                  g[ix].segment(r * cols, cols) += gseg * sv;
                  g[is] += gseg * xv.segment(r * cols, cols);
                  g[ib] += gseg;
                }
              });
}

DiffArray softmax_rows(DiffArray x) {
  require(x.shape().size() == 2, "softmax_rows expects a 2-D array");
  const Eigen::Index rows = x.shape()[0], cols = x.shape()[1];
  Eigen::ArrayXd out(rows * cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    auto row = x.value().segment(r * cols, cols);
    Eigen::ArrayXd e = (row - row.maxCoeff()).exp();
    out.segment(r * cols, cols) = e / e.sum();
  }
  const std::size_t ix = x.id;
  Eigen::ArrayXd y = out;  // dx = y * (g - <g, y>) per row
  return make(x.tape, x.shape(), std::move(out),
              [ix, rows, cols, y](Tape&, GradBuf& g, const Eigen::ArrayXd& gout) {
                for (Eigen::Index r = 0; r < rows; ++r) {
                  const auto gseg = gout.segment(r * cols, cols);
                  const auto yseg = y.segment(r * cols, cols);
                  const double dot = (gseg * yseg).sum();
                  g[ix].segment(r * cols, cols) += yseg * (gseg - dot);
                }
              });
}

DiffArray layer_norm(DiffArray x) {
  require(x.shape().size() == 2, "layer_norm expects a 2-D array");
  const Eigen::Index rows = x.shape()[0], cols = x.shape()[1];
  Eigen::ArrayXd out(rows * cols);
  Eigen::ArrayXd inv_std(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    auto row = x.value().segment(r * cols, cols);
    const double mu = row.mean();
    const double var = (row - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + kLayerNormEps);
    out.segment(r * cols, cols) = (row - mu) * inv_std(r);
  }
  const std::size_t ix = x.id;
  Eigen::ArrayXd y = out;  // captured copy for the backward pass
  return make(x.tape, x.shape(), std::move(out),
              [ix, rows, cols, inv_std, y](Tape&, GradBuf& g, const Eigen::ArrayXd& gout) {
                for (Eigen::Index r = 0; r < rows; ++r) {
                  const auto gseg = gout.segment(r * cols, cols);
                  const auto yseg = y.segment(r * cols, cols);
                  const double gm = gseg.mean();
                  const double gym = (gseg * yseg).mean();
                  g[ix].segment(r * cols, cols) += inv_std(r) * (gseg - gm - yseg * gym);
                }
              });
}

DiffArray global_avg_pool(DiffArray x) {
  require(x.shape().size() >= 2, "global_avg_pool expects a 2-D or 3-D array");
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  const Eigen::Index width = x.shape().back();
  const Eigen::Index groups = shape_size(out_shape);
  Eigen::ArrayXd out(groups);
  for (Eigen::Index i = 0; i < groups; ++i) {
    out(i) = x.value().segment(i * width, width).mean();
  }
  const std::size_t ix = x.id;
  return make(x.tape, std::move(out_shape), std::move(out),
              [ix, groups, width](Tape&, GradBuf& g, const Eigen::ArrayXd& gout) {
                for (Eigen::Index i = 0; i < groups; ++i) {
                  g[ix].segment(i * width, width) += gout(i) / static_cast<double>(width);
                }
              });
}

DiffArray concat_channels(const std::vector<DiffArray>& xs) {
  require(!xs.empty(), "concat_channels needs at least one input");
  Tape* tape = xs.front().tape;
  const Shape& first = xs.front().shape();
  require(first.size() == 2 || first.size() == 3, "concat_channels expects 2-D or 3-D inputs");
  const Eigen::Index batch = first[0];
  const Eigen::Index width = first.size() == 3 ? first[2] : 1;

  Eigen::Index total_c = 0;
  for (const auto& x : xs) {
    require(x.tape == tape, "concat_channels: operands on different tapes");
    require(x.shape().size() == first.size() && x.shape()[0] == batch &&
                (first.size() == 2 || x.shape()[2] == width),
            "concat_channels: incompatible shapes");
    total_c += x.shape()[1];
  }

  Shape out_shape = first;
  out_shape[1] = total_c;
  Eigen::ArrayXd out(shape_size(out_shape));
  std::vector<std::size_t> ids;
  std::vector<Eigen::Index> channels;
  for (const auto& x : xs) {
    ids.push_back(x.id);
    channels.push_back(x.shape()[1]);
  }
  for (Eigen::Index b = 0; b < batch; ++b) {
    Eigen::Index at = 0;
    for (std::size_t s = 0; s < xs.size(); ++s) {
      const Eigen::Index len = channels[s] * width;
      out.segment((b * total_c + at) * width, len) = xs[s].value().segment(b * len, len);
      at += channels[s];
    }
  }
  return make(tape, std::move(out_shape), std::move(out),
              [ids, channels, batch, width, total_c](Tape&, GradBuf& g,
                                                     const Eigen::ArrayXd& gout) {
                for (Eigen::Index b = 0; b < batch; ++b) {
                  Eigen::Index at = 0;
                  for (std::size_t s = 0; s < ids.size(); ++s) {
                    const Eigen::Index len = channels[s] * width;
                    g[ids[s]].segment(b * len, len) +=
                        gout.segment((b * total_c + at) * width, len);
                    at += channels[s];
                  }
                }
              });
}

DiffArray slice_channels(DiffArray x, Eigen::Index from, Eigen::Index to) {
  require(x.shape().size() == 2 || x.shape().size() == 3,
          "slice_channels expects 2-D or 3-D input");
  const Eigen::Index batch = x.shape()[0];
  const Eigen::Index c = x.shape()[1];
  const Eigen::Index width = x.shape().size() == 3 ? x.shape()[2] : 1;
  require(from >= 0 && from < to && to <= c, "slice_channels: bad range");

  Shape out_shape = x.shape();
  out_shape[1] = to - from;
  Eigen::ArrayXd out(shape_size(out_shape));
  const Eigen::Index len = (to - from) * width;
  for (Eigen::Index b = 0; b < batch; ++b) {
    out.segment(b * len, len) = x.value().segment((b * c + from) * width, len);
  }
  const std::size_t ix = x.id;
  return make(x.tape, std::move(out_shape), std::move(out),
              [ix, batch, c, width, from, len](Tape&, GradBuf& g, const Eigen::ArrayXd& gout) {
                for (Eigen::Index b = 0; b < batch; ++b) {
                  g[ix].segment((b * c + from) * width, len) += gout.segment(b * len, len);
                }
              });
}

// ---- convolution -------------------------------------------------------------

DiffArray conv1d(DiffArray x, DiffArray kernels, DiffArray bias, const Eigen::ArrayXd& mask) {
  check_same_tape(x, kernels);
  check_same_tape(x, bias);
  const bool batched = x.shape().size() == 3;
  require(batched || x.shape().size() == 2, "conv1d expects (B,Cin,w) or (Cin,w) input");
  require(kernels.shape().size() == 3, "conv1d kernels must be (Cout,Cin,k)");
  const Eigen::Index batch = batched ? x.shape()[0] : 1;
  const Eigen::Index cin = batched ? x.shape()[1] : x.shape()[0];
  const Eigen::Index width = batched ? x.shape()[2] : x.shape()[1];
  const Eigen::Index cout = kernels.shape()[0];
  const Eigen::Index kin = kernels.shape()[1];
  const Eigen::Index k = kernels.shape()[2];
  require(kin == cin, "conv1d: kernel input channels " + std::to_string(kin) +
                          " mismatch input channels " + std::to_string(cin));
  require(bias.size() == cout, "conv1d: bias size mismatch");
  require(mask.size() == kernels.size(), "conv1d: mask shape mismatch");
  const Eigen::Index off = (k - 1) / 2;  // 'same' padding, left-biased for even k

  const Eigen::ArrayXd masked = kernels.value() * mask;
  Eigen::ArrayXd out = Eigen::ArrayXd::Zero(batch * cout * width);
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (Eigen::Index o = 0; o < cout; ++o) {
      auto orow = out.segment((b * cout + o) * width, width);
      orow += bias.value()(o);
      for (Eigen::Index i = 0; i < cin; ++i) {
        const auto xrow = x.value().segment((b * cin + i) * width, width);
        for (Eigen::Index tap = 0; tap < k; ++tap) {
          const double km = masked((o * cin + i) * k + tap);
          if (km == 0.0) continue;
          const Eigen::Index shift = tap - off;
          const Eigen::Index t0 = std::max<Eigen::Index>(0, -shift);
          const Eigen::Index t1 = std::min<Eigen::Index>(width, width - shift);
          if (t0 >= t1) continue;
          orow.segment(t0, t1 - t0) += km * xrow.segment(t0 + shift, t1 - t0);
        }
      }
    }
  }

  Shape out_shape = batched ? Shape{batch, cout, width} : Shape{cout, width};
  const std::size_t ix = x.id, ik = kernels.id, ib = bias.id;
  return make(
      x.tape, std::move(out_shape), std::move(out),
      [ix, ik, ib, mask, batch, cin, cout, width, k, off](Tape& t, GradBuf& g,
                                                          const Eigen::ArrayXd& gout) {
        const Eigen::ArrayXd& xv = val(t, ix);
        const Eigen::ArrayXd masked = val(t, ik) * mask;
        for (Eigen::Index b = 0; b < batch; ++b) {
          for (Eigen::Index o = 0; o < cout; ++o) {
            const auto grow = gout.segment((b * cout + o) * width, width);
            g[ib](o) += grow.sum();
            for (Eigen::Index i = 0; i < cin; ++i) {
              const auto xrow = xv.segment((b * cin + i) * width, width);
              auto gx = g[ix].segment((b * cin + i) * width, width);
              for (Eigen::Index tap = 0; tap < k; ++tap) {
                const Eigen::Index shift = tap - off;
                const Eigen::Index t0 = std::max<Eigen::Index>(0, -shift);
                const Eigen::Index t1 = std::min<Eigen::Index>(width, width - shift);
                if (t0 >= t1) continue;
                const Eigen::Index idx = (o * cin + i) * k + tap;
                if (mask(idx) != 0.0) {
                  g[ik](idx) +=
                      mask(idx) *
                      (grow.segment(t0, t1 - t0) * xrow.segment(t0 + shift, t1 - t0)).sum();
                }
                const double km = masked(idx);
                if (km != 0.0) {
                  gx.segment(t0 + shift, t1 - t0) += km * grow.segment(t0, t1 - t0);
                }
              }
            }
          }
        }
      });
}

// ---- reductions & losses ------------------------------------------------------

DiffArray sum(DiffArray x) {
  const std::size_t ix = x.id;
  Eigen::ArrayXd out(1);
  out(0) = x.value().sum();
  return make(x.tape, {1}, std::move(out),
              [ix](Tape&, GradBuf& g, const Eigen::ArrayXd& gout) { g[ix] += gout(0); });
}

DiffArray mean(DiffArray x) {
  const std::size_t ix = x.id;
  const double n = static_cast<double>(x.size());
  Eigen::ArrayXd out(1);
  out(0) = x.value().mean();
  return make(x.tape, {1}, std::move(out),
              [ix, n](Tape&, GradBuf& g, const Eigen::ArrayXd& gout) { g[ix] += gout(0) / n; });
}

DiffArray pick(DiffArray x, Eigen::Index flat_index) {
  require(flat_index >= 0 && flat_index < x.size(), "pick: index out of range");
  const std::size_t ix = x.id;
  Eigen::ArrayXd out(1);
  out(0) = x.value()(flat_index);
  return make(x.tape, {1}, std::move(out),
              [ix, flat_index](Tape&, GradBuf& g, const Eigen::ArrayXd& gout) {
                g[ix](flat_index) += gout(0);
              });
}

DiffArray cross_entropy(DiffArray logits, const std::vector<int>& targets,
                        const Eigen::VectorXd& class_weights) {
  require(logits.shape().size() == 2, "cross_entropy expects (B,K) logits");
  const Eigen::Index batch = logits.shape()[0], classes = logits.shape()[1];
  require(static_cast<Eigen::Index>(targets.size()) == batch,
          "cross_entropy: target count mismatch");
  require(class_weights.size() == classes, "cross_entropy: class weight count mismatch");

  Eigen::ArrayXd probs(batch * classes);
  double loss = 0.0;
  for (Eigen::Index b = 0; b < batch; ++b) {
    const int y = targets[static_cast<std::size_t>(b)];
    require(y >= 0 && y < classes, "cross_entropy: target out of range");
    auto row = logits.value().segment(b * classes, classes);
    const double m = row.maxCoeff();
    Eigen::ArrayXd e = (row - m).exp();
    const double z = e.sum();
    probs.segment(b * classes, classes) = e / z;
    loss += class_weights(y) * (std::log(z) + m - row(y));
  }
  loss /= static_cast<double>(batch);

  const std::size_t il = logits.id;
  Eigen::ArrayXd out(1);
  out(0) = loss;
  return make(logits.tape, {1}, std::move(out),
              [il, probs, targets, class_weights, batch, classes](Tape&, GradBuf& g,
                                                                  const Eigen::ArrayXd& gout) {
                const double s = gout(0) / static_cast<double>(batch);
                for (Eigen::Index b = 0; b < batch; ++b) {
                  const int y = targets[static_cast<std::size_t>(b)];
                  const double w = class_weights(y);
                  for (Eigen::Index j = 0; j < classes; ++j) {
                    const double p = probs(b * classes + j);
                    g[il](b * classes + j) += s * w * (p - (j == y ? 1.0 : 0.0));
                  }
                }
              });
}

}  // namespace mtfad::tensor
