#include "mtfad/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <thread>

#include "json.hpp"

namespace mtfad::model {

namespace ts = mtfad::tensor;

bool is_prime(int n) {
  if (n < 2) return false;
  for (int d = 2; d * d <= n; ++d) {
    if (n % d == 0) return false;
  }
  return true;
}

CoverReport verify_receptive_cover(const std::vector<int>& layer1, const std::vector<int>& layer2,
                                   int budget) {
  CoverReport report;
  for (int even = 4; even < budget; even += 2) {
    bool covered = false;
    for (int p1 : layer1) {
      for (int p2 : layer2) {
        if (p1 + p2 == even) {
          covered = true;
          break;
        }
      }
      if (covered) break;
    }
    if (!covered) report.missing.push_back(even);
  }
  report.ok = report.missing.empty();
  return report;
}

void ModelConfig::validate() const {
  if (window < 2) throw config_error("window must be >= 2");
  if (channels < 1) throw config_error("model channel count not set");
  if (out_channels < 1 || embed_dim < 1 || fusion_hidden < 1) {
    throw config_error("layer widths must be positive");
  }
  if (batch < 1) throw config_error("batch size must be >= 1");
  if (lr <= 0.0) throw config_error("learning rate must be positive");
  for (const auto* list : {&layer1_kernels, &layer2_kernels}) {
    if (list->empty()) throw config_error("kernel lists must be nonempty");
    for (int k : *list) {
      if (!is_prime(k)) {
        throw config_error("kernel size " + std::to_string(k) + " is not prime");
      }
    }
  }
  std::vector<int> l3 = layer3_kernels;
  std::sort(l3.begin(), l3.end());
  if (l3 != std::vector<int>{1, 2}) throw config_error("final layer kernel sizes must be {1, 2}");
  if (receptive_budget < 4) throw config_error("receptive budget must be >= 4");
  const auto cover = verify_receptive_cover(layer1_kernels, layer2_kernels, receptive_budget);
  if (!cover.ok) {
    std::string gaps;
    for (int e : cover.missing) gaps += ' ' + std::to_string(e);
    throw config_error("kernel lists leave receptive-field gaps:" + gaps);
  }
  if (2 * fusion_hidden % 2 != 0) throw config_error("fusion expansion width must be even");
}

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["window"] = window;
  j["channels"] = channels;
  j["layer1_kernels"] = layer1_kernels;
  j["layer2_kernels"] = layer2_kernels;
  j["layer3_kernels"] = layer3_kernels;
  j["out_channels"] = out_channels;
  j["embed_dim"] = embed_dim;
  j["fusion_hidden"] = fusion_hidden;
  j["receptive_budget"] = receptive_budget;
  j["batch"] = batch;
  j["epochs"] = epochs;
  j["lr"] = lr;
  j["seed"] = seed;
  j["class_weights"] = class_weights;
  j["use_image_modality"] = use_image_modality;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  ModelConfig cfg;
  cfg.window = j.value("window", cfg.window);
  cfg.channels = j.value("channels", cfg.channels);
  cfg.layer1_kernels = j.value("layer1_kernels", cfg.layer1_kernels);
  cfg.layer2_kernels = j.value("layer2_kernels", cfg.layer2_kernels);
  cfg.layer3_kernels = j.value("layer3_kernels", cfg.layer3_kernels);
  cfg.out_channels = j.value("out_channels", cfg.out_channels);
  cfg.embed_dim = j.value("embed_dim", cfg.embed_dim);
  cfg.fusion_hidden = j.value("fusion_hidden", cfg.fusion_hidden);
  cfg.receptive_budget = j.value("receptive_budget", cfg.receptive_budget);
  cfg.batch = j.value("batch", cfg.batch);
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.lr = j.value("lr", cfg.lr);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.class_weights = j.value("class_weights", cfg.class_weights);
  cfg.use_image_modality = j.value("use_image_modality", cfg.use_image_modality);
  return cfg;
}

namespace {

Eigen::ArrayXd glorot(std::mt19937_64& rng, Eigen::Index count, Eigen::Index fan_in,
                      Eigen::Index fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Eigen::ArrayXd out(count);
  for (Eigen::Index i = 0; i < count; ++i) out(i) = dist(rng);
  return out;
}

std::string block_name(std::size_t layer) { return "block" + std::to_string(layer + 1); }

}  // namespace

MultimodalNet::MultimodalNet(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  layer_kernels_ = {cfg_.layer1_kernels, cfg_.layer2_kernels, cfg_.layer3_kernels};
  std::mt19937_64 rng(cfg_.seed);

  const Eigen::Index h = cfg_.out_channels;
  Eigen::Index in_c = cfg_.channels;
  masks_.resize(layer_kernels_.size());
  for (std::size_t layer = 0; layer < layer_kernels_.size(); ++layer) {
    layer_in_channels_.push_back(in_c);
    const auto& kernels = layer_kernels_[layer];
    const int kmax = *std::max_element(kernels.begin(), kernels.end());
    const Eigen::Index out_c = h * static_cast<Eigen::Index>(kernels.size());
    for (int k : kernels) {
      const std::string base = block_name(layer) + ".k" + std::to_string(k);
      params_.create(base + ".weight", {h, in_c, kmax},
                     glorot(rng, h * in_c * kmax, in_c * k, h * k));
      params_.create(base + ".bias", {h}, Eigen::ArrayXd::Zero(h));
      // mask keeps the first k taps of the max-size buffer
      Eigen::ArrayXd mask = Eigen::ArrayXd::Zero(h * in_c * kmax);
      for (Eigen::Index o = 0; o < h; ++o) {
        for (Eigen::Index i = 0; i < in_c; ++i) {
          for (int tap = 0; tap < k; ++tap) {
            mask((o * in_c + i) * kmax + tap) = 1.0;
          }
        }
      }
      masks_[layer].push_back(std::move(mask));
    }
    const std::string res = block_name(layer) + ".residual";
    params_.create(res + ".weight", {out_c, in_c, 1}, glorot(rng, out_c * in_c, in_c, out_c));
    params_.create(res + ".bias", {out_c}, Eigen::ArrayXd::Zero(out_c));
    in_c = out_c;
  }

  const Eigen::Index d = cfg_.embed_dim;
  params_.create("embed.weight", {in_c, d}, glorot(rng, in_c * d, in_c, d));
  params_.create("embed.bias", {d}, Eigen::ArrayXd::Zero(d));

  params_.create("attn.query", {d, d}, glorot(rng, d * d, d, d));
  params_.create("attn.key", {d, d}, glorot(rng, d * d, d, d));
  params_.create("attn.value", {d, d}, glorot(rng, d * d, d, d));

  const Eigen::Index hf = cfg_.fusion_hidden;
  params_.create("fusion.depthwise1.scale", {2 * d}, Eigen::ArrayXd::Ones(2 * d));
  params_.create("fusion.depthwise1.shift", {2 * d}, Eigen::ArrayXd::Zero(2 * d));
  params_.create("fusion.pointwise1.weight", {2 * d, d}, glorot(rng, 2 * d * d, 2 * d, d));
  params_.create("fusion.pointwise1.bias", {d}, Eigen::ArrayXd::Zero(d));
  params_.create("fusion.expand.weight", {d, 2 * hf}, glorot(rng, d * 2 * hf, d, 2 * hf));
  params_.create("fusion.expand.bias", {2 * hf}, Eigen::ArrayXd::Zero(2 * hf));
  params_.create("fusion.depthwise2.scale", {2 * hf}, Eigen::ArrayXd::Ones(2 * hf));
  params_.create("fusion.depthwise2.shift", {2 * hf}, Eigen::ArrayXd::Zero(2 * hf));
  params_.create("fusion.reduce.weight", {hf, d}, glorot(rng, hf * d, hf, d));
  params_.create("fusion.reduce.bias", {d}, Eigen::ArrayXd::Zero(d));

  params_.create("classifier.weight", {d, 2}, glorot(rng, d * 2, d, 2));
  params_.create("classifier.bias", {2}, Eigen::ArrayXd::Zero(2));
}

ts::DiffArray MultimodalNet::shared_blocks(ts::Tape& tape, ts::DiffArray x) {
  for (std::size_t layer = 0; layer < layer_kernels_.size(); ++layer) {
    std::vector<ts::DiffArray> branches;
    for (std::size_t p = 0; p < layer_kernels_[layer].size(); ++p) {
      const int k = layer_kernels_[layer][p];
      const std::string base = block_name(layer) + ".k" + std::to_string(k);
      branches.push_back(ts::conv1d(x, tape.param(params_, base + ".weight"),
                                    tape.param(params_, base + ".bias"), masks_[layer][p]));
    }
    ts::DiffArray cat = ts::concat_channels(branches);
    const std::string res = block_name(layer) + ".residual";
    const Eigen::Index out_c = cat.shape()[1];
    const Eigen::Index in_c = layer_in_channels_[layer];
    ts::DiffArray projected =
        ts::conv1d(x, tape.param(params_, res + ".weight"), tape.param(params_, res + ".bias"),
                   Eigen::ArrayXd::Ones(out_c * in_c));
    x = ts::add(cat, projected);
    if (layer + 1 == layer_kernels_.size()) x = ts::relu(x);
  }
  return x;
}

ts::DiffArray MultimodalNet::embed(ts::Tape& tape, ts::DiffArray blocks_out) {
  ts::DiffArray pooled = ts::global_avg_pool(blocks_out);
  return ts::dense(pooled, tape.param(params_, "embed.weight"),
                   tape.param(params_, "embed.bias"));
}

ts::DiffArray MultimodalNet::fuse(ts::Tape& tape, ts::DiffArray f_ni, ts::DiffArray f_in) {
  ts::DiffArray cat = ts::concat_channels({f_ni, f_in});
  ts::DiffArray dw1 = ts::channel_affine(cat, tape.param(params_, "fusion.depthwise1.scale"),
                                         tape.param(params_, "fusion.depthwise1.shift"));
  ts::DiffArray pw1 = ts::dense(dw1, tape.param(params_, "fusion.pointwise1.weight"),
                                tape.param(params_, "fusion.pointwise1.bias"));
  ts::DiffArray normed = ts::layer_norm(pw1);
  ts::DiffArray expanded = ts::dense(normed, tape.param(params_, "fusion.expand.weight"),
                                     tape.param(params_, "fusion.expand.bias"));
  ts::DiffArray dw2 = ts::channel_affine(expanded, tape.param(params_, "fusion.depthwise2.scale"),
                                         tape.param(params_, "fusion.depthwise2.shift"));
  const Eigen::Index hf = cfg_.fusion_hidden;
  ts::DiffArray gate_in = ts::slice_channels(dw2, 0, hf);
  ts::DiffArray carry = ts::slice_channels(dw2, hf, 2 * hf);
  ts::DiffArray gated = ts::elementwise_mul(ts::gelu(gate_in), carry);
  return ts::dense(gated, tape.param(params_, "fusion.reduce.weight"),
                   tape.param(params_, "fusion.reduce.bias"));
}

MultimodalNet::Forward MultimodalNet::forward(ts::Tape& tape, ts::DiffArray numeric,
                                              ts::DiffArray image, bool detach_numeric,
                                              bool detach_image) {
  Forward fwd{};
  fwd.f_num = embed(tape, shared_blocks(tape, numeric));
  fwd.f_img = embed(tape, shared_blocks(tape, image));
  if (detach_numeric) fwd.f_num = ts::stop_gradient(fwd.f_num);
  if (detach_image) fwd.f_img = ts::stop_gradient(fwd.f_img);

  ts::DiffArray wq = tape.param(params_, "attn.query");
  ts::DiffArray wk = tape.param(params_, "attn.key");
  ts::DiffArray wv = tape.param(params_, "attn.value");
  ts::DiffArray q_num = ts::matmul(fwd.f_num, wq);
  ts::DiffArray k_num = ts::matmul(fwd.f_num, wk);
  ts::DiffArray v_num = ts::matmul(fwd.f_num, wv);
  ts::DiffArray q_img = ts::matmul(fwd.f_img, wq);
  ts::DiffArray k_img = ts::matmul(fwd.f_img, wk);
  ts::DiffArray v_img = ts::matmul(fwd.f_img, wv);

  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg_.embed_dim));
  fwd.attn_ni = ts::softmax_rows(ts::scale(ts::matmul(q_num, k_img, false, true), inv_sqrt_d));
  ts::DiffArray f_ni = ts::matmul(fwd.attn_ni, v_img);
  fwd.attn_in = ts::softmax_rows(ts::scale(ts::matmul(q_img, k_num, false, true), inv_sqrt_d));
  ts::DiffArray f_in = ts::matmul(fwd.attn_in, v_num);

  fwd.fused = fuse(tape, f_ni, f_in);
  fwd.logits = ts::dense(fwd.fused, tape.param(params_, "classifier.weight"),
                         tape.param(params_, "classifier.bias"));

  const Eigen::Index batch = fwd.logits.shape()[0];
  fwd.prob1.resize(batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    const double l0 = fwd.logits.value()(b * 2);
    const double l1 = fwd.logits.value()(b * 2 + 1);
    const double m = std::max(l0, l1);
    const double e0 = std::exp(l0 - m), e1 = std::exp(l1 - m);
    fwd.prob1(b) = e1 / (e0 + e1);
  }
  return fwd;
}

MultimodalNet::Forward MultimodalNet::forward_batch(ts::Tape& tape, const MultimodalBatch& batch,
                                                    bool detach_numeric, bool detach_image) {
  const Eigen::Index c = cfg_.channels;
  const Eigen::Index w = cfg_.window;
  ts::DiffArray numeric = tape.input({batch.batch, c, w}, batch.numeric);
  ts::DiffArray image = tape.input({batch.batch, c, w}, batch.image);
  return forward(tape, numeric, image, detach_numeric, detach_image);
}

std::vector<double> MultimodalNet::train_epoch(const std::vector<MultimodalBatch>& batches,
                                               const Eigen::VectorXd& class_weights) {
  if (batches.empty()) throw config_error("train_epoch needs at least one batch");
  std::vector<double> losses;
  losses.reserve(batches.size());
  for (std::size_t i = 0; i < batches.size(); ++i) {
    ts::Tape tape;
    Forward fwd = forward_batch(tape, batches[i]);
    ts::DiffArray loss = ts::cross_entropy(fwd.logits, batches[i].targets, class_weights);
    const double value = loss.value()(0);
    if (!std::isfinite(value)) {
      throw divergence_error("non-finite loss at batch " + std::to_string(i));
    }
    tape.backward(loss);
    ts::adam_step(params_, cfg_.lr);
    losses.push_back(value);
  }
  return losses;
}

Eigen::VectorXd MultimodalNet::predict_batch(const MultimodalBatch& batch) {
  ts::Tape tape;
  return forward_batch(tape, batch).prob1;
}

Eigen::VectorXd inverse_frequency_weights(const std::vector<int>& targets) {
  double counts[2] = {0.0, 0.0};
  for (int y : targets) counts[y == 1 ? 1 : 0] += 1.0;
  const double n = static_cast<double>(targets.size());
  Eigen::VectorXd weights(2);
  for (int c = 0; c < 2; ++c) {
    weights(c) = counts[c] > 0.0 ? n / (2.0 * counts[c]) : 1.0;
  }
  return weights;
}

std::vector<MultimodalBatch> make_batches(const std::vector<Eigen::ArrayXd>& numeric,
                                          const std::vector<Eigen::ArrayXd>& image,
                                          const std::vector<int>& targets, Eigen::Index c,
                                          Eigen::Index w, Eigen::Index batch_size,
                                          unsigned long seed) {
  const std::size_t n = numeric.size();
  if (image.size() != n || targets.size() != n) {
    throw data_error("batch assembly: modality or target counts differ");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<MultimodalBatch> batches;
  for (std::size_t at = 0; at < n; at += static_cast<std::size_t>(batch_size)) {
    const auto take = std::min(static_cast<std::size_t>(batch_size), n - at);
    MultimodalBatch b;
    b.batch = static_cast<Eigen::Index>(take);
    b.numeric.resize(static_cast<Eigen::Index>(take) * c * w);
    b.image.resize(static_cast<Eigen::Index>(take) * c * w);
    for (std::size_t s = 0; s < take; ++s) {
      const std::size_t src = order[at + s];
      b.numeric.segment(static_cast<Eigen::Index>(s) * c * w, c * w) = numeric[src];
      b.image.segment(static_cast<Eigen::Index>(s) * c * w, c * w) = image[src];
      b.targets.push_back(targets[src]);
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

AlignmentDiagnostic combine_gradients(const Eigen::VectorXd& g_num, const Eigen::VectorXd& g_img,
                                      double lambda) {
  AlignmentDiagnostic diag;
  diag.lambda = lambda;
  diag.g_num_norm = g_num.norm();
  diag.g_img_norm = g_img.norm();
  double cos_term = 0.0;
  if (diag.g_num_norm > 0.0 && diag.g_img_norm > 0.0) {
    diag.cosine = g_num.dot(g_img) / (diag.g_num_norm * diag.g_img_norm);
    cos_term = *diag.cosine;
  }
  diag.delta_norm_direct = (lambda * g_num + (1.0 - lambda) * g_img).norm();
  diag.delta_norm_closed = std::sqrt(
      lambda * lambda * diag.g_num_norm * diag.g_num_norm +
      (1.0 - lambda) * (1.0 - lambda) * diag.g_img_norm * diag.g_img_norm +
      2.0 * lambda * (1.0 - lambda) * diag.g_num_norm * diag.g_img_norm * cos_term);
  return diag;
}

AlignmentDiagnostic gradient_alignment_diagnostic(MultimodalNet& net, const MultimodalBatch& batch,
                                                  const Eigen::VectorXd& class_weights,
                                                  double lambda) {
  auto& store = net.params();
  store.zero_grads();
  {
    ts::Tape tape;
    auto fwd = net.forward_batch(tape, batch, /*detach_numeric=*/false, /*detach_image=*/true);
    tape.backward(ts::cross_entropy(fwd.logits, batch.targets, class_weights));
  }
  const Eigen::VectorXd g_num = store.packed_grads();
  store.zero_grads();
  {
    ts::Tape tape;
    auto fwd = net.forward_batch(tape, batch, /*detach_numeric=*/true, /*detach_image=*/false);
    tape.backward(ts::cross_entropy(fwd.logits, batch.targets, class_weights));
  }
  const Eigen::VectorXd g_img = store.packed_grads();
  store.zero_grads();
  return combine_gradients(g_num, g_img, lambda);
}

Eigen::MatrixXd window_image_channels(const Detector& det, const core::Window& window) {
  const auto img = mvmtf::compose_mvmtf(window, det.bins, det.trans, det.alpha, det.cross_weights,
                                        mvmtf::FieldMode::kSparse);
  return mvmtf::image_channels(img);
}

Detection predict(const Detector& det, MultimodalNet& net, const core::SeriesFrame& frame,
                  Eigen::Index stride, int threads) {
  frame.validate();
  if (frame.variables() != det.cfg.channels) {
    throw data_error("frame has " + std::to_string(frame.variables()) +
                     " variables, detector expects " + std::to_string(det.cfg.channels));
  }
  core::SeriesFrame normalized = frame;
  normalized.values = det.scaler.apply(frame.values);

  const Eigen::Index w = det.cfg.window;
  const auto wins = core::windows(normalized, w, stride);
  const Eigen::Index c = det.cfg.channels;

  std::vector<Eigen::ArrayXd> numeric(wins.size()), image(wins.size());
  auto convert_range = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      Eigen::MatrixXd num = wins[i].numeric;
      Eigen::MatrixXd img =
          det.cfg.use_image_modality ? window_image_channels(det, wins[i]) : num;
      numeric[i] = Eigen::Map<const Eigen::ArrayXd>(
          Eigen::MatrixXd(num.transpose()).data(), c * w);
      image[i] = Eigen::Map<const Eigen::ArrayXd>(
          Eigen::MatrixXd(img.transpose()).data(), c * w);
    }
  };
  if (threads > 1 && wins.size() > 1) {
    std::vector<std::thread> pool;
    const std::size_t chunk = (wins.size() + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      const std::size_t lo = std::min(wins.size(), static_cast<std::size_t>(t) * chunk);
      const std::size_t hi = std::min(wins.size(), lo + chunk);
      if (lo < hi) pool.emplace_back(convert_range, lo, hi);
    }
    for (auto& th : pool) th.join();
  } else {
    convert_range(0, wins.size());
  }

  Detection out;
  out.point_scores.assign(static_cast<std::size_t>(frame.length()), 0.0);
  out.point_labels.assign(static_cast<std::size_t>(frame.length()), 0);

  for (std::size_t at = 0; at < wins.size(); at += static_cast<std::size_t>(det.cfg.batch)) {
    const auto take = std::min(static_cast<std::size_t>(det.cfg.batch), wins.size() - at);
    MultimodalBatch batch;
    batch.batch = static_cast<Eigen::Index>(take);
    batch.numeric.resize(batch.batch * c * w);
    batch.image.resize(batch.batch * c * w);
    for (std::size_t s = 0; s < take; ++s) {
      batch.numeric.segment(static_cast<Eigen::Index>(s) * c * w, c * w) = numeric[at + s];
      batch.image.segment(static_cast<Eigen::Index>(s) * c * w, c * w) = image[at + s];
      batch.targets.push_back(0);
    }
    const Eigen::VectorXd probs = net.predict_batch(batch);
    for (std::size_t s = 0; s < take; ++s) {
      const double p = probs(static_cast<Eigen::Index>(s));
      const Eigen::Index start = wins[at + s].start;
      out.window_starts.push_back(start);
      out.window_scores.push_back(p);
      out.window_labels.push_back(p > 0.5 ? 1 : 0);
      for (Eigen::Index t = start; t < start + w; ++t) {
        auto& score = out.point_scores[static_cast<std::size_t>(t)];
        score = std::max(score, p);
      }
    }
  }
  for (std::size_t t = 0; t < out.point_scores.size(); ++t) {
    out.point_labels[t] = out.point_scores[t] > 0.5 ? 1 : 0;
  }
  return out;
}

}  // namespace mtfad::model
