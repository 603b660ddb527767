#include "mtfad/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>

#include "json.hpp"

namespace mtfad::eval {

std::vector<int> point_adjust(const std::vector<int>& pred, const std::vector<int>& label) {
  if (pred.size() != label.size()) {
    throw data_error("prediction and label lengths differ: " + std::to_string(pred.size()) +
                     " vs " + std::to_string(label.size()));
  }
  std::vector<int> adjusted = pred;
  const std::size_t n = label.size();
  std::size_t t = 0;
  while (t < n) {
    if (label[t] == 1) {
      std::size_t end = t;
      while (end < n && label[end] == 1) ++end;
      bool hit = false;
      for (std::size_t i = t; i < end && !hit; ++i) hit = pred[i] == 1;
      if (hit) {
        for (std::size_t i = t; i < end; ++i) adjusted[i] = 1;
      }
      t = end;
    } else {
      ++t;
    }
  }
  return adjusted;
}

namespace {

DetectionMetrics confusion(const std::vector<int>& pred, const std::vector<int>& label) {
  DetectionMetrics m;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == 1 && label[i] == 1) ++m.tp;
    if (pred[i] == 1 && label[i] == 0) ++m.fp;
    if (pred[i] == 0 && label[i] == 1) ++m.fn;
    if (pred[i] == 0 && label[i] == 0) ++m.tn;
  }
  m.precision = m.tp + m.fp > 0 ? static_cast<double>(m.tp) / (m.tp + m.fp) : 0.0;
  m.recall = m.tp + m.fn > 0 ? static_cast<double>(m.tp) / (m.tp + m.fn) : 0.0;
  m.f1 = m.precision + m.recall > 0.0
             ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
             : 0.0;
  return m;
}

}  // namespace

DetectionMetrics detection_metrics(const std::vector<int>& pred, const std::vector<int>& label) {
  DetectionMetrics m = confusion(pred, label);
  const DetectionMetrics pa = confusion(point_adjust(pred, label), label);
  m.f1_pa = pa.f1;
  return m;
}

namespace {

std::size_t cutoff_count(std::size_t gt_size, double percent) {
  return static_cast<std::size_t>(std::floor(percent / 100.0 * static_cast<double>(gt_size) + 0.5));
}

}  // namespace

double hit_at(const std::vector<Eigen::Index>& ranking, const std::set<Eigen::Index>& gt,
              double percent) {
  if (gt.empty()) throw data_error("empty ground-truth set");
  const std::size_t cutoff = std::min(ranking.size(), cutoff_count(gt.size(), percent));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < cutoff; ++i) {
    if (gt.count(ranking[i])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(gt.size());
}

double ndcg_at(const std::vector<Eigen::Index>& ranking, const std::set<Eigen::Index>& gt,
               double percent) {
  if (gt.empty()) throw data_error("empty ground-truth set");
  const std::size_t cutoff = std::min(ranking.size(), cutoff_count(gt.size(), percent));
  double dcg = 0.0;
  for (std::size_t i = 0; i < cutoff; ++i) {
    if (gt.count(ranking[i])) dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  }
  double ideal = 0.0;
  const std::size_t ideal_hits = std::min(cutoff, gt.size());
  for (std::size_t i = 0; i < ideal_hits; ++i) {
    ideal += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  }
  return ideal > 0.0 ? dcg / ideal : 0.0;
}

namespace {

double histogram_kl(const Eigen::VectorXd& abnormal, const Eigen::VectorXd& normal) {
  constexpr int kBins = 32;
  constexpr double kSmooth = 1e-6;
  const double lo = std::min(abnormal.minCoeff(), normal.minCoeff());
  const double hi = std::max(abnormal.maxCoeff(), normal.maxCoeff());
  const double width = hi > lo ? (hi - lo) / kBins : 1.0;

  auto histogram = [&](const Eigen::VectorXd& values) {
    Eigen::VectorXd h = Eigen::VectorXd::Constant(kBins, kSmooth);
    for (Eigen::Index i = 0; i < values.size(); ++i) {
      auto bin = static_cast<Eigen::Index>((values(i) - lo) / width);
      bin = std::clamp<Eigen::Index>(bin, 0, kBins - 1);
      h(bin) += 1.0;
    }
    return Eigen::VectorXd(h / h.sum());
  };

  const Eigen::VectorXd pa = histogram(abnormal);
  const Eigen::VectorXd pn = histogram(normal);
  double kl = 0.0;
  for (int b = 0; b < kBins; ++b) kl += pa(b) * std::log(pa(b) / pn(b));
  return kl;
}

}  // namespace

KlResult kl_separability(const core::SeriesFrame& frame, Representation rep, double alpha) {
  if (!frame.has_labels()) throw data_error("KL separability needs labels");
  const Eigen::Index n = frame.length();
  const Eigen::Index c = frame.variables();
  Eigen::Index abnormal_count = 0;
  for (int y : frame.labels) abnormal_count += y;
  if (abnormal_count == 0 || abnormal_count == n) {
    throw data_error("KL separability needs both classes present");
  }

  Eigen::MatrixXd channels;  // n x c representation values
  if (rep == Representation::kRaw) {
    channels = frame.values;
  } else {
    auto [normalized, scaler] = core::min_max_normalize(frame);
    const core::BinModel bins = core::fit_bins(normalized, {4, 6, 8, 10, 12, 16});
    const auto trans = mvmtf::fit_transition_model(normalized, bins);
    core::Window whole;
    whole.start = 0;
    whole.numeric = normalized.values.transpose();
    const auto img = mvmtf::compose_mvmtf(whole, bins, trans, alpha,
                                          mvmtf::uniform_cross_weights(c),
                                          mvmtf::FieldMode::kSparse);
    channels = mvmtf::image_channels(img).transpose();
  }

  KlResult result;
  result.per_variable.resize(c);
  for (Eigen::Index v = 0; v < c; ++v) {
    Eigen::VectorXd abnormal(abnormal_count), normal(n - abnormal_count);
    Eigen::Index ia = 0, in = 0;
    for (Eigen::Index t = 0; t < n; ++t) {
      if (frame.labels[static_cast<std::size_t>(t)]) {
        abnormal(ia++) = channels(t, v);
      } else {
        normal(in++) = channels(t, v);
      }
    }
    result.per_variable(v) = histogram_kl(abnormal, normal);
  }
  result.aggregate = result.per_variable.mean();
  return result;
}

double loglog_slope(const std::vector<Eigen::Index>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw config_error("slope fit needs >= 2 points");
  const auto n = static_cast<double>(x.size());
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lx = std::log(static_cast<double>(x[i]));
    const double ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

namespace {

// Repeats fn until the measured span exceeds 20 ms, then returns seconds/call.
template <typename Fn>
double time_call(Fn&& fn) {
  using clock = std::chrono::steady_clock;
  long runs = 1;
  while (true) {
    const auto begin = clock::now();
    for (long r = 0; r < runs; ++r) fn();
    const std::chrono::duration<double> span = clock::now() - begin;
    if (span.count() >= 0.02 || runs >= (1L << 20)) {
      return span.count() / static_cast<double>(runs);
    }
    runs *= 4;
  }
}

double median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace

BenchResult bench_conversion(const std::vector<Eigen::Index>& sizes, Eigen::Index c,
                             int repetitions, unsigned long seed) {
  std::vector<Eigen::Index> distinct = sizes;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 3) {
    throw config_error("benchmark needs at least three distinct sizes");
  }
  if (repetitions < 1) throw config_error("repetitions must be >= 1");

  const Eigen::Index n_max = distinct.back();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.05);
  core::SeriesFrame frame;
  frame.values.resize(n_max, c);
  for (Eigen::Index v = 0; v < c; ++v) {
    const double period = 40.0 + 13.0 * static_cast<double>(v);
    for (Eigen::Index t = 0; t < n_max; ++t) {
      frame.values(t, v) =
          std::sin(2.0 * M_PI * static_cast<double>(t) / period + 0.3 * static_cast<double>(v)) +
          noise(rng);
    }
  }
  auto [normalized, scaler] = core::min_max_normalize(frame);

  core::BinModel bins;
  for (Eigen::Index v = 0; v < c; ++v) {
    bins.rows.push_back(core::quantile_bins(normalized.values.col(v), 8));
  }
  const auto trans = mvmtf::fit_transition_model(normalized, bins);
  const Eigen::MatrixXd weights = mvmtf::uniform_cross_weights(c);
  const double alpha = 0.9;

  BenchResult result;
  result.sizes = distinct;
  for (Eigen::Index n : distinct) {
    std::vector<Eigen::VectorXi> seqs;
    for (Eigen::Index v = 0; v < c; ++v) {
      seqs.push_back(
          core::discretize(normalized.values.col(v).head(n), bins.rows[static_cast<std::size_t>(v)]));
    }
    std::vector<double> sparse_runs, dense_runs;
    for (int rep = 0; rep < repetitions; ++rep) {
      sparse_runs.push_back(time_call([&] {
        volatile double sink =
            mvmtf::compose_sparse_combined<float>(seqs, trans, alpha, weights).sum();
        (void)sink;
      }));
      dense_runs.push_back(time_call([&] {
        volatile double sink =
            static_cast<double>(mvmtf::compose_dense_combined<float>(seqs, trans, alpha, weights)
                                    .diagonal()
                                    .sum());
        (void)sink;
      }));
    }
    result.sparse_seconds.push_back(median(sparse_runs));
    result.dense_seconds.push_back(median(dense_runs));
  }

  result.sparse_slope = loglog_slope(result.sizes, result.sparse_seconds);
  result.dense_slope = loglog_slope(result.sizes, result.dense_seconds);
  result.ratio_at_max = result.dense_seconds.back() / result.sparse_seconds.back();
  return result;
}

std::string BenchResult::table() const {
  std::ostringstream os;
  os << std::left << std::setw(10) << "size" << std::setw(16) << "sparse (s)" << std::setw(16)
     << "dense (s)" << std::setw(12) << "ratio" << '\n';
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    os << std::left << std::setw(10) << sizes[i] << std::setw(16) << std::setprecision(6)
       << sparse_seconds[i] << std::setw(16) << dense_seconds[i] << std::setw(12)
       << dense_seconds[i] / sparse_seconds[i] << '\n';
  }
  os << "sparse log-log slope: " << std::setprecision(4) << sparse_slope << '\n';
  os << "dense  log-log slope: " << dense_slope << '\n';
  os << "dense/sparse at n=" << sizes.back() << ": " << std::setprecision(6) << ratio_at_max
     << '\n';
  return os.str();
}

std::string BenchResult::to_json() const {
  nlohmann::json j;
  j["sizes"] = sizes;
  j["sparse_seconds"] = sparse_seconds;
  j["dense_seconds"] = dense_seconds;
  j["sparse_slope"] = sparse_slope;
  j["dense_slope"] = dense_slope;
  j["ratio_at_max"] = ratio_at_max;
  return j.dump(2);
}

}  // namespace mtfad::eval
