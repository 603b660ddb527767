#include "mtfad/mvmtf.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>

#include "json.hpp"

namespace mtfad::mvmtf {

PairTransitions fit_pair_transitions(const Eigen::VectorXi& seq_u, const Eigen::VectorXi& seq_v,
                                     int q_u, int q_v) {
  if (seq_u.size() != seq_v.size()) {
    throw data_error("bin sequences differ in length: " + std::to_string(seq_u.size()) + " vs " +
                     std::to_string(seq_v.size()));
  }
  if (seq_u.size() < 2) throw data_error("need at least two timestamps to fit transitions");

  PairTransitions out;
  out.w = Eigen::MatrixXd::Zero(q_u, q_v);
  out.row_counts = Eigen::VectorXi::Zero(q_u);
  for (Eigen::Index t = 1; t < seq_u.size(); ++t) {
    const int i = seq_u(t - 1);
    const int j = seq_v(t);
    if (i < 0 || i >= q_u || j < 0 || j >= q_v) {
      throw data_error("bin index out of range while fitting transitions");
    }
    out.w(i, j) += 1.0;
    out.row_counts(i) += 1;
  }
  for (int i = 0; i < q_u; ++i) {
    if (out.row_counts(i) > 0) out.w.row(i) /= static_cast<double>(out.row_counts(i));
  }
  return out;
}

TransitionModel fit_transition_model(const core::SeriesFrame& train, const core::BinModel& bins) {
  if (train.length() < 2) throw data_error("training frame shorter than two timestamps");
  const Eigen::Index c = train.variables();
  if (static_cast<Eigen::Index>(bins.rows.size()) != c) {
    throw data_error("bin model covers " + std::to_string(bins.rows.size()) + " variables, frame has " +
                     std::to_string(c));
  }

  std::vector<Eigen::VectorXi> seqs;
  seqs.reserve(static_cast<std::size_t>(c));
  for (Eigen::Index v = 0; v < c; ++v) {
    seqs.push_back(core::discretize(train.values.col(v), bins.rows[static_cast<std::size_t>(v)]));
  }

  TransitionModel model;
  model.variable_count = c;
  for (const auto& row : bins.rows) model.bin_counts.push_back(row.bin_count());
  model.pair_w.resize(static_cast<std::size_t>(c * c));
  model.row_counts.resize(static_cast<std::size_t>(c * c));
  for (Eigen::Index u = 0; u < c; ++u) {
    for (Eigen::Index v = 0; v < c; ++v) {
      auto pt = fit_pair_transitions(seqs[static_cast<std::size_t>(u)],
                                     seqs[static_cast<std::size_t>(v)],
                                     model.bin_counts[static_cast<std::size_t>(u)],
                                     model.bin_counts[static_cast<std::size_t>(v)]);
      model.pair_w[static_cast<std::size_t>(u * c + v)] = std::move(pt.w);
      model.row_counts[static_cast<std::size_t>(u * c + v)] = std::move(pt.row_counts);
    }
  }
  return model;
}

namespace {

void check_indices(const Eigen::VectorXi& seq, Eigen::Index bound, const char* side) {
  for (Eigen::Index t = 0; t < seq.size(); ++t) {
    if (seq(t) < 0 || seq(t) >= bound) {
      throw data_error(std::string("bin index out of transition-matrix range on ") + side);
    }
  }
}

}  // namespace

Eigen::MatrixXd mtf_field_dense(const Eigen::VectorXi& seq_u, const Eigen::VectorXi& seq_v,
                                const Eigen::MatrixXd& w) {
  check_indices(seq_u, w.rows(), "rows");
  check_indices(seq_v, w.cols(), "columns");
  Eigen::MatrixXd field(seq_u.size(), seq_v.size());
  for (Eigen::Index i = 0; i < seq_u.size(); ++i) {
    for (Eigen::Index j = 0; j < seq_v.size(); ++j) {
      field(i, j) = w(seq_u(i), seq_v(j));
    }
  }
  return field;
}

Eigen::VectorXd mtf_field_sparse(const Eigen::VectorXi& seq_u, const Eigen::VectorXi& seq_v,
                                 const Eigen::MatrixXd& w) {
  if (seq_u.size() != seq_v.size()) throw data_error("bin sequences differ in length");
  check_indices(seq_u, w.rows(), "rows");
  check_indices(seq_v, w.cols(), "columns");
  Eigen::VectorXd band(seq_u.size() - 1);
  for (Eigen::Index t = 0; t + 1 < seq_u.size(); ++t) {
    band(t) = w(seq_u(t), seq_v(t + 1));
  }
  return band;
}

Eigen::MatrixXd uniform_cross_weights(Eigen::Index c) {
  if (c == 1) return Eigen::MatrixXd::Zero(1, 1);
  Eigen::MatrixXd weights =
      Eigen::MatrixXd::Constant(c, c, 1.0 / static_cast<double>(c - 1));
  weights.diagonal().setZero();
  return weights;
}

Eigen::MatrixXd correlation_cross_weights(const core::SeriesFrame& train) {
  const Eigen::Index c = train.variables();
  if (c == 1) return Eigen::MatrixXd::Zero(1, 1);

  Eigen::MatrixXd centered = train.values.rowwise() - train.values.colwise().mean();
  Eigen::VectorXd norms = centered.colwise().norm();
  Eigen::MatrixXd weights = Eigen::MatrixXd::Zero(c, c);
  for (Eigen::Index u = 0; u < c; ++u) {
    double total = 0.0;
    for (Eigen::Index k = 0; k < c; ++k) {
      if (k == u) continue;
      double corr = 0.0;
      if (norms(u) > 0.0 && norms(k) > 0.0) {
        corr = std::abs(centered.col(u).dot(centered.col(k)) / (norms(u) * norms(k)));
      }
      weights(u, k) = corr;
      total += corr;
    }
    if (total > 0.0) {
      weights.row(u) /= total;
    } else {  // uncorrelated fallback keeps the row a distribution
      weights.row(u).setConstant(1.0 / static_cast<double>(c - 1));
      weights(u, u) = 0.0;
      weights.row(u) /= weights.row(u).sum();
    }
  }
  return weights;
}

std::vector<Eigen::VectorXi> discretize_window(const core::Window& window,
                                               const core::BinModel& bins) {
  const Eigen::Index c = window.numeric.rows();
  std::vector<Eigen::VectorXi> seqs;
  seqs.reserve(static_cast<std::size_t>(c));
  for (Eigen::Index v = 0; v < c; ++v) {
    seqs.push_back(
        core::discretize(window.numeric.row(v).transpose(), bins.rows[static_cast<std::size_t>(v)]));
  }
  return seqs;
}

MtfImage compose_mvmtf(const core::Window& window, const core::BinModel& bins,
                       const TransitionModel& trans, double alpha,
                       const Eigen::MatrixXd& cross_weights, FieldMode mode) {
  const Eigen::Index c = window.numeric.rows();
  if (alpha < 0.0 || alpha > 1.0) throw config_error("alpha must lie in [0, 1]");
  if (c != trans.variable_count) {
    throw data_error("window has " + std::to_string(c) + " variables, transition model has " +
                     std::to_string(trans.variable_count));
  }
  if (c == 1) alpha = 1.0;  // no cross term exists
  constexpr double kWeightTol = 1e-9;
  for (Eigen::Index u = 0; u < c && c > 1; ++u) {
    const double sum = cross_weights.row(u).sum() - cross_weights(u, u);
    if (std::abs(sum - 1.0) > kWeightTol) {
      throw config_error("cross weights for variable " + std::to_string(u) +
                         " sum to " + std::to_string(sum) + ", expected 1");
    }
  }

  const auto seqs = discretize_window(window, bins);

  MtfImage img;
  img.start = window.start;
  img.width = window.width();
  img.mode = mode;
  img.per_var.reserve(static_cast<std::size_t>(c));

  auto pair_field = [&](Eigen::Index u, Eigen::Index v) -> Eigen::MatrixXd {
    const auto& su = seqs[static_cast<std::size_t>(u)];
    const auto& sv = seqs[static_cast<std::size_t>(v)];
    if (mode == FieldMode::kDense) return mtf_field_dense(su, sv, trans.w(u, v));
    return mtf_field_sparse(su, sv, trans.w(u, v));
  };

  for (Eigen::Index u = 0; u < c; ++u) {
    Eigen::MatrixXd m_u = alpha * pair_field(u, u);
    if (alpha < 1.0) {
      for (Eigen::Index k = 0; k < c; ++k) {
        if (k == u) continue;
        m_u += (1.0 - alpha) * cross_weights(u, k) * pair_field(u, k);
      }
    }
    if (u == 0) {
      img.combined = m_u;
    } else {
      img.combined += m_u;
    }
    img.per_var.push_back(std::move(m_u));
  }
  img.combined /= static_cast<double>(c);  // keep the sum inside [0, 1]
  return img;
}

Eigen::MatrixXd image_channels(const MtfImage& img) {
  if (img.mode != FieldMode::kSparse) throw config_error("image channels need a sparse-mode field");
  const auto c = static_cast<Eigen::Index>(img.per_var.size());
  Eigen::MatrixXd channels(c, img.width);
  for (Eigen::Index u = 0; u < c; ++u) {
    const auto& band = img.per_var[static_cast<std::size_t>(u)];
    channels.row(u).head(band.rows()) = band.col(0).transpose();
    channels(u, img.width - 1) = band(band.rows() - 1, 0);
  }
  return channels;
}

void save_transition_model(const TransitionModel& trans, const core::BinModel& bins, double alpha,
                           const std::string& weight_policy, const std::string& manifest_path,
                           const std::string& blob_path, const std::string& extra_key,
                           const std::string& extra_json) {
  nlohmann::json manifest;
  manifest["alpha"] = alpha;
  manifest["weight_policy"] = weight_policy;
  manifest["variables"] = trans.variable_count;
  if (!extra_key.empty()) manifest[extra_key] = nlohmann::json::parse(extra_json);

  nlohmann::json bin_json = nlohmann::json::array();
  for (const auto& row : bins.rows) {
    bin_json.push_back({{"requested", row.requested},
                        {"edges", row.edges},
                        {"entropy", row.entropy}});
  }
  manifest["bins"] = bin_json;

  std::ofstream blob(blob_path, std::ios::binary);
  if (!blob) throw data_error("cannot write " + blob_path);
  nlohmann::json pairs = nlohmann::json::array();
  std::int64_t offset = 0;
  const Eigen::Index c = trans.variable_count;
  for (Eigen::Index u = 0; u < c; ++u) {
    for (Eigen::Index v = 0; v < c; ++v) {
      const Eigen::MatrixXd& w = trans.w(u, v);
      pairs.push_back({{"key", "(" + std::to_string(u) + "," + std::to_string(v) + ")"},
                       {"rows", w.rows()},
                       {"cols", w.cols()},
                       {"offset", offset}});
      for (Eigen::Index i = 0; i < w.rows(); ++i) {
        for (Eigen::Index j = 0; j < w.cols(); ++j) {
          const float f = static_cast<float>(w(i, j));
          blob.write(reinterpret_cast<const char*>(&f), sizeof(float));
        }
      }
      offset += w.size() * static_cast<std::int64_t>(sizeof(float));
    }
  }
  manifest["pairs"] = pairs;
  manifest["blob_bytes"] = offset;

  std::ofstream out(manifest_path);
  if (!out) throw data_error("cannot write " + manifest_path);
  out << manifest.dump(2) << '\n';
}

std::string load_transition_extra(const std::string& manifest_path, const std::string& extra_key) {
  std::ifstream in(manifest_path);
  if (!in) throw pipeline_error("missing transition manifest: " + manifest_path);
  nlohmann::json manifest;
  in >> manifest;
  if (!manifest.contains(extra_key)) {
    throw pipeline_error("transition manifest lacks key: " + extra_key);
  }
  return manifest.at(extra_key).dump();
}

LoadedTransitionModel load_transition_model(const std::string& manifest_path,
                                            const std::string& blob_path) {
  std::ifstream in(manifest_path);
  if (!in) throw pipeline_error("missing transition manifest: " + manifest_path);
  nlohmann::json manifest;
  in >> manifest;

  LoadedTransitionModel loaded;
  loaded.alpha = manifest.at("alpha").get<double>();
  loaded.weight_policy = manifest.at("weight_policy").get<std::string>();
  const auto c = manifest.at("variables").get<Eigen::Index>();

  for (const auto& row : manifest.at("bins")) {
    core::BinRow bin;
    bin.requested = row.at("requested").get<int>();
    bin.edges = row.at("edges").get<std::vector<double>>();
    bin.entropy = row.at("entropy").get<double>();
    loaded.bins.rows.push_back(std::move(bin));
  }

  std::ifstream blob(blob_path, std::ios::binary);
  if (!blob) throw pipeline_error("missing transition blob: " + blob_path);

  loaded.trans.variable_count = c;
  for (const auto& row : loaded.bins.rows) loaded.trans.bin_counts.push_back(row.bin_count());
  loaded.trans.pair_w.resize(static_cast<std::size_t>(c * c));
  loaded.trans.row_counts.resize(static_cast<std::size_t>(c * c));

  for (const auto& pair : manifest.at("pairs")) {
    const auto key = pair.at("key").get<std::string>();
    const auto comma = key.find(',');
    const Eigen::Index u = std::stol(key.substr(1, comma - 1));
    const Eigen::Index v = std::stol(key.substr(comma + 1, key.size() - comma - 2));
    const auto rows = pair.at("rows").get<Eigen::Index>();
    const auto cols = pair.at("cols").get<Eigen::Index>();
    blob.seekg(pair.at("offset").get<std::int64_t>());
    Eigen::MatrixXd w(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) {
        float f = 0.0f;
        blob.read(reinterpret_cast<char*>(&f), sizeof(float));
        w(i, j) = static_cast<double>(f);
      }
    }
    if (!blob) throw data_error("truncated transition blob: " + blob_path);
    loaded.trans.pair_w[static_cast<std::size_t>(u * c + v)] = std::move(w);
    loaded.trans.row_counts[static_cast<std::size_t>(u * c + v)] =
        Eigen::VectorXi::Zero(loaded.trans.bin_counts[static_cast<std::size_t>(u)]);
  }
  return loaded;
}

}  // namespace mtfad::mvmtf
