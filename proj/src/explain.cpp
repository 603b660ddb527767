#include "mtfad/explain.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"

namespace mtfad::explain {

Eigen::VectorXd exact_shapley(const CoalitionFn& f, Eigen::Index c) {
  if (c < 1) throw config_error("need at least one variable");
  if (c > 25) throw config_error("subset enumeration infeasible for c = " + std::to_string(c));

  const std::size_t total = std::size_t{1} << c;
  std::vector<double> value(total);
  std::vector<bool> present(static_cast<std::size_t>(c));
  for (std::size_t mask = 0; mask < total; ++mask) {
    for (Eigen::Index v = 0; v < c; ++v) {
      present[static_cast<std::size_t>(v)] = (mask >> v) & 1U;
    }
    value[mask] = f(present);
  }

  std::vector<double> factorial(static_cast<std::size_t>(c) + 1, 1.0);
  for (std::size_t i = 1; i < factorial.size(); ++i) {
    factorial[i] = factorial[i - 1] * static_cast<double>(i);
  }
  // weight of a coalition of size s: s! (c - s - 1)! / c!
  std::vector<double> weight(static_cast<std::size_t>(c));
  for (std::size_t s = 0; s < weight.size(); ++s) {
    weight[s] = factorial[s] * factorial[static_cast<std::size_t>(c) - s - 1] /
                factorial[static_cast<std::size_t>(c)];
  }

  Eigen::VectorXd phi = Eigen::VectorXd::Zero(c);
  for (Eigen::Index i = 0; i < c; ++i) {
    const std::size_t bit = std::size_t{1} << i;
    for (std::size_t mask = 0; mask < total; ++mask) {
      if (mask & bit) continue;
      const auto size = static_cast<std::size_t>(__builtin_popcountll(mask));
      phi(i) += weight[size] * (value[mask | bit] - value[mask]);
    }
  }
  return phi;
}

SampledShapley sampled_shapley(const CoalitionFn& f, Eigen::Index c, int samples,
                               unsigned long seed) {
  if (samples < 16) throw config_error("sampled estimator needs at least 16 samples");
  std::mt19937_64 rng(seed);
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(c));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});

  Eigen::MatrixXd draws(samples, c);
  std::vector<bool> present(static_cast<std::size_t>(c));
  for (int s = 0; s < samples; ++s) {
    std::shuffle(perm.begin(), perm.end(), rng);
    std::fill(present.begin(), present.end(), false);
    double prev = f(present);
    for (Eigen::Index pos = 0; pos < c; ++pos) {
      const Eigen::Index v = perm[static_cast<std::size_t>(pos)];
      present[static_cast<std::size_t>(v)] = true;
      const double cur = f(present);
      draws(s, v) = cur - prev;
      prev = cur;
    }
  }

  SampledShapley out;
  out.samples = samples;
  out.phi = draws.colwise().mean();
  out.stderr_.resize(c);
  for (Eigen::Index v = 0; v < c; ++v) {
    const double mu = out.phi(v);
    const double var = (draws.col(v).array() - mu).square().sum() /
                       std::max(1.0, static_cast<double>(samples - 1));
    out.stderr_(v) = std::sqrt(var / static_cast<double>(samples));
  }
  return out;
}

Eigen::VectorXd shapley_attribution(const CoalitionFn& f, Eigen::Index c, Eigen::Index cap,
                                    int samples, unsigned long seed) {
  if (c <= cap) return exact_shapley(f, c);
  return sampled_shapley(f, c, samples, seed).phi;
}

namespace {

Eigen::ArrayXd flatten_rowmajor(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd t = m.transpose();  // channel-major flat layout
  return Eigen::Map<const Eigen::ArrayXd>(t.data(), m.size());
}

}  // namespace

ImageScoreFn anomaly_image_score(model::MultimodalNet& net, const Eigen::MatrixXd& numeric_cw) {
  const Eigen::ArrayXd numeric_flat = flatten_rowmajor(numeric_cw);
  const Eigen::Index c = numeric_cw.rows();
  const Eigen::Index w = numeric_cw.cols();
  return [&net, numeric_flat, c, w](tensor::Tape& tape, tensor::DiffArray image) {
    tensor::DiffArray numeric = tape.input({1, c, w}, numeric_flat);
    auto fwd = net.forward(tape, numeric, image);
    return tensor::pick(tensor::softmax_rows(fwd.logits), 1);
  };
}

Eigen::VectorXd gradient_attribution(const ImageScoreFn& score, const Eigen::MatrixXd& image_cw,
                                     const std::vector<Eigen::MatrixXd>& baselines) {
  if (baselines.empty()) throw config_error("gradient attribution needs at least one baseline");
  const Eigen::Index c = image_cw.rows();
  const Eigen::Index w = image_cw.cols();

  tensor::Tape tape;
  tensor::DiffArray image = tape.input({1, c, w}, flatten_rowmajor(image_cw));
  tape.backward(score(tape, image));
  const Eigen::ArrayXd& g = image.grad();  // flat (c, w)

  Eigen::VectorXd attribution = Eigen::VectorXd::Zero(c);
  for (const auto& baseline : baselines) {
    if (baseline.rows() != c || baseline.cols() != w) {
      throw data_error("baseline shape mismatch in gradient attribution");
    }
    for (Eigen::Index v = 0; v < c; ++v) {
      double acc = 0.0;
      for (Eigen::Index t = 0; t < w; ++t) {
        acc += g(v * w + t) * (image_cw(v, t) - baseline(v, t));
      }
      attribution(v) += acc;
    }
  }
  attribution /= static_cast<double>(baselines.size());
  return attribution;
}

Eigen::VectorXd normalize_max_abs(const Eigen::VectorXd& values) {
  const double peak = values.cwiseAbs().maxCoeff();
  if (peak == 0.0) return values;
  return values / peak;
}

namespace {

std::vector<Eigen::Index> descending_ranking(const Eigen::VectorXd& scores) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(scores.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return scores(a) > scores(b); });
  return order;
}

}  // namespace

Eigen::VectorXd AttributionSet::fused_at(double omega_prime) const {
  return slope * omega_prime + intercept;
}

std::vector<Eigen::Index> AttributionSet::ranking_at(double omega_prime) const {
  return descending_ranking(fused_at(omega_prime));
}

AttributionSet fuse_attributions(const Eigen::VectorXd& s_kernel,
                                 const Eigen::VectorXd& s_gradient, double omega) {
  if (omega < 0.0 || omega > 1.0) throw config_error("omega must lie in [0, 1]");
  if (s_kernel.size() != s_gradient.size()) {
    throw data_error("attribution vectors differ in length");
  }
  AttributionSet attr;
  attr.s_kernel = s_kernel;
  attr.s_gradient = s_gradient;
  attr.omega = omega;
  attr.gamma = s_kernel.mean();
  attr.intercept = attr.gamma * s_gradient;
  attr.slope = s_kernel - attr.intercept;
  attr.fused = attr.slope * omega + attr.intercept;
  attr.lipschitz = attr.slope.cwiseAbs().maxCoeff();
  attr.ranking = descending_ranking(attr.fused);
  return attr;
}

double lipschitz_check(const AttributionSet& attr, int grid_points) {
  if (grid_points < 2) throw config_error("lipschitz check needs at least two grid points");
  double worst = 0.0;
  for (int gi = 0; gi < grid_points; ++gi) {
    for (int gj = gi + 1; gj < grid_points; ++gj) {
      const double w0 = static_cast<double>(gi) / (grid_points - 1);
      const double w1 = static_cast<double>(gj) / (grid_points - 1);
      const Eigen::VectorXd s0 = attr.fused_at(w0);
      const Eigen::VectorXd s1 = attr.fused_at(w1);
      for (Eigen::Index v = 0; v < s0.size(); ++v) {
        const double observed = std::abs(s1(v) - s0(v));
        const double linear = std::abs(attr.slope(v)) * std::abs(w1 - w0);
        worst = std::max(worst, std::abs(observed - linear));
        if (observed > attr.lipschitz * std::abs(w1 - w0) + 1e-12) {
          worst = std::max(worst, observed - attr.lipschitz * std::abs(w1 - w0));
        }
      }
    }
  }
  return worst;
}

double plateau_radius(const AttributionSet& attr, Eigen::Index k) {
  const Eigen::Index c = attr.fused.size();
  if (k < 1 || k >= c) throw config_error("plateau radius needs 1 <= k < c");
  const double spread = attr.slope.maxCoeff() - attr.slope.minCoeff();
  const double margin = attr.fused(attr.ranking[static_cast<std::size_t>(k - 1)]) -
                        attr.fused(attr.ranking[static_cast<std::size_t>(k)]);
  if (spread == 0.0) return std::numeric_limits<double>::infinity();
  return margin / spread;
}

Eigen::Index find_critical_point(const ReplaceProbe& resolves, Eigen::Index c) {
  if (c < 1) throw config_error("need at least one variable");
  if (!resolves(c)) return c;
  Eigen::Index lo = 1, hi = c;
  while (lo < hi) {
    const Eigen::Index mid = (lo + hi) / 2;
    if (resolves(mid)) {
      hi = mid;
    } else {
      lo = mid + 1;
    }
  }
  return hi;
}

Eigen::Index find_critical_point_linear(const ReplaceProbe& resolves, Eigen::Index c) {
  for (Eigen::Index m = 1; m <= c; ++m) {
    if (resolves(m)) return m;
  }
  return c;
}

AnomalyTypeModel fit_anomaly_types(const Eigen::MatrixXd& embeddings, int k,
                                   std::vector<std::string> type_names,
                                   std::vector<std::vector<std::string>> recommendations,
                                   unsigned long seed) {
  const Eigen::Index n = embeddings.rows();
  const Eigen::Index d = embeddings.cols();
  if (k < 1) throw config_error("cluster count must be >= 1");
  if (n < k) {
    throw config_error("only " + std::to_string(n) + " anomalies for " + std::to_string(k) +
                       " types");
  }
  if (static_cast<int>(type_names.size()) != k || static_cast<int>(recommendations.size()) != k) {
    throw config_error("type labels must match the cluster count");
  }

  std::mt19937_64 rng(seed);
  constexpr int kRestarts = 5;
  constexpr int kIterations = 50;

  Eigen::MatrixXd best_centroids;
  double best_inertia = std::numeric_limits<double>::infinity();
  std::vector<Eigen::Index> indices(static_cast<std::size_t>(n));
  std::iota(indices.begin(), indices.end(), Eigen::Index{0});

  for (int restart = 0; restart < kRestarts; ++restart) {
    std::shuffle(indices.begin(), indices.end(), rng);
    Eigen::MatrixXd centroids(k, d);
    for (int j = 0; j < k; ++j) centroids.row(j) = embeddings.row(indices[static_cast<std::size_t>(j)]);

    std::vector<int> assign(static_cast<std::size_t>(n), 0);
    for (int iter = 0; iter < kIterations; ++iter) {
      bool changed = false;
      for (Eigen::Index i = 0; i < n; ++i) {
        int arg = 0;
        double best = (embeddings.row(i) - centroids.row(0)).squaredNorm();
        for (int j = 1; j < k; ++j) {
          const double dist = (embeddings.row(i) - centroids.row(j)).squaredNorm();
          if (dist < best) {
            best = dist;
            arg = j;
          }
        }
        if (assign[static_cast<std::size_t>(i)] != arg) {
          assign[static_cast<std::size_t>(i)] = arg;
          changed = true;
        }
      }
      Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, d);
      Eigen::VectorXd counts = Eigen::VectorXd::Zero(k);
      for (Eigen::Index i = 0; i < n; ++i) {
        sums.row(assign[static_cast<std::size_t>(i)]) += embeddings.row(i);
        counts(assign[static_cast<std::size_t>(i)]) += 1.0;
      }
      for (int j = 0; j < k; ++j) {
        if (counts(j) > 0.0) {
          centroids.row(j) = sums.row(j) / counts(j);
        } else {  // revive an empty cluster on the farthest point
          Eigen::Index far = 0;
          double far_dist = -1.0;
          for (Eigen::Index i = 0; i < n; ++i) {
            const double dist =
                (embeddings.row(i) - centroids.row(assign[static_cast<std::size_t>(i)]))
                    .squaredNorm();
            if (dist > far_dist) {
              far_dist = dist;
              far = i;
            }
          }
          centroids.row(j) = embeddings.row(far);
          changed = true;
        }
      }
      if (!changed && iter > 0) break;
    }

    double inertia = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      inertia += (embeddings.row(i) - centroids.row(assign[static_cast<std::size_t>(i)])).squaredNorm();
    }
    if (inertia < best_inertia) {
      best_inertia = inertia;
      best_centroids = centroids;
    }
  }

  AnomalyTypeModel model;
  model.centroids = best_centroids;
  model.type_names = std::move(type_names);
  model.recommendations = std::move(recommendations);
  return model;
}

int classify_anomaly_type(const AnomalyTypeModel& types, const Eigen::VectorXd& embedding) {
  int arg = 0;
  double best = (embedding.transpose() - types.centroids.row(0)).squaredNorm();
  for (Eigen::Index j = 1; j < types.centroids.rows(); ++j) {
    const double dist = (embedding.transpose() - types.centroids.row(j)).squaredNorm();
    if (dist < best) {
      best = dist;
      arg = static_cast<int>(j);
    }
  }
  return arg;
}

AnomalyTypeModel default_type_labels() {
  AnomalyTypeModel model;
  model.type_names = {"network failure", "hardware damage", "software service anomaly"};
  model.recommendations = {
      {"verify configuration settings", "run network diagnostics"},
      {"inspect disk and memory health", "schedule a hardware replacement"},
      {"check the service logs", "restart the affected service"},
  };
  return model;
}

Report render_report(const ReportInput& input) {
  const auto& attr = input.attribution;
  const Eigen::Index c = attr.fused.size();
  const Eigen::Index k = std::min<Eigen::Index>(input.critical_k, c);

  std::ostringstream text;
  text << "=== anomaly report ===\n";
  text << "dataset:      " << input.dataset << '\n';
  text << "timestamp:    " << input.timestamp << '\n';
  text << "window start: " << input.window_start << '\n';
  text << "score:        " << input.score << '\n';
  text << "type:         " << input.type_name << '\n';
  if (k == 0) {
    text << "contributing variables: none (no variable isolated)\n";
  } else {
    text << "contributing variables (top " << k << " of " << c << "):\n";
    for (Eigen::Index i = 0; i < k; ++i) {
      const Eigen::Index v = attr.ranking[static_cast<std::size_t>(i)];
      text << "  variable " << v << "  s = " << attr.fused(v) << '\n';
    }
  }
  if (!input.recommendations.empty()) {
    text << "recommendations:\n";
    for (const auto& r : input.recommendations) text << "  - " << r << '\n';
  }
  text << "diagnostics:  L = " << attr.lipschitz << ", delta = ";
  if (std::isinf(input.plateau)) {
    text << "unbounded";
  } else {
    text << input.plateau;
  }
  text << ", omega = " << attr.omega << '\n';

  nlohmann::json record;
  record["dataset"] = input.dataset;
  record["timestamp"] = input.timestamp;
  record["window_start"] = input.window_start;
  record["score"] = input.score;
  record["type"] = input.type_name;
  record["no_variable_isolated"] = (k == 0);
  nlohmann::json vars = nlohmann::json::array();
  nlohmann::json scores = nlohmann::json::array();
  for (Eigen::Index i = 0; i < k; ++i) {
    const Eigen::Index v = attr.ranking[static_cast<std::size_t>(i)];
    vars.push_back(v);
    scores.push_back(attr.fused(v));
  }
  record["variables"] = vars;
  record["scores"] = scores;
  record["recommendations"] = input.recommendations;
  record["diagnostics"] = {
      {"L", attr.lipschitz},
      {"delta", std::isinf(input.plateau) ? nlohmann::json() : nlohmann::json(input.plateau)},
      {"omega", attr.omega}};

  Report report;
  report.text = text.str();
  report.record_json = record.dump(2);
  return report;
}

}  // namespace mtfad::explain
