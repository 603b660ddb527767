#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <random>

#include "doctest.h"
#include "mtfad/eval.hpp"
#include "mtfad/synth.hpp"

using namespace mtfad;
using namespace mtfad::eval;

TEST_CASE("point adjustment fills detected segments") {
  const std::vector<int> label{0, 1, 1, 1, 0};
  const std::vector<int> pred{0, 0, 1, 0, 0};
  CHECK(point_adjust(pred, label) == std::vector<int>{0, 1, 1, 1, 0});

  const std::vector<int> nothing{0, 0, 0, 0, 0};
  CHECK(point_adjust(nothing, label) == nothing);

  const std::vector<int> no_segments{0, 0, 0, 0, 0};
  CHECK(point_adjust(pred, no_segments) == pred);

  CHECK_THROWS_AS(point_adjust({0, 1}, {0, 1, 0}), data_error);
}

TEST_CASE("point adjustment is idempotent and monotone") {
  std::mt19937_64 rng(3);
  std::bernoulli_distribution coin(0.3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> label(60), pred(60);
    for (int i = 0; i < 60; ++i) {
      label[i] = coin(rng) ? 1 : 0;
      pred[i] = coin(rng) ? 1 : 0;
    }
    const auto once = point_adjust(pred, label);
    CHECK(point_adjust(once, label) == once);
    for (int i = 0; i < 60; ++i) CHECK(once[i] >= pred[i]);
  }
}

TEST_CASE("detection metrics reproduce the hand confusion table") {
  const std::vector<int> label{0, 1, 1, 1, 0};
  const std::vector<int> pred{0, 0, 1, 0, 0};
  const DetectionMetrics m = detection_metrics(pred, label);
  CHECK(m.tp == 1);
  CHECK(m.fp == 0);
  CHECK(m.fn == 2);
  CHECK(m.tn == 2);
  CHECK(m.precision == doctest::Approx(1.0));
  CHECK(m.recall == doctest::Approx(1.0 / 3.0));
  CHECK(m.f1 == doctest::Approx(0.5));
  CHECK(m.f1_pa == doctest::Approx(1.0));
}

TEST_CASE("detection metrics handle the degenerate corners") {
  const std::vector<int> label{0, 1, 1, 0};
  const DetectionMetrics perfect = detection_metrics(label, label);
  CHECK(perfect.precision == 1.0);
  CHECK(perfect.recall == 1.0);
  CHECK(perfect.f1 == 1.0);
  CHECK(perfect.f1_pa == 1.0);

  const DetectionMetrics silent = detection_metrics({0, 0, 0, 0}, label);
  CHECK(silent.f1 == 0.0);
  CHECK(silent.recall == 0.0);
}

TEST_CASE("point adjustment never lowers the F1 score") {
  std::mt19937_64 rng(11);
  std::bernoulli_distribution coin(0.25);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<int> label(40), pred(40);
    for (int i = 0; i < 40; ++i) {
      label[i] = coin(rng) ? 1 : 0;
      pred[i] = coin(rng) ? 1 : 0;
    }
    const DetectionMetrics m = detection_metrics(pred, label);
    CHECK(m.f1_pa >= m.f1 - 1e-12);
  }
}

TEST_CASE("hit rate counts ground truth inside the scaled cutoff") {
  const std::vector<Eigen::Index> ranking{2, 1, 3, 5, 4};
  const std::set<Eigen::Index> gt{2, 3};
  CHECK(hit_at(ranking, gt, 100.0) == doctest::Approx(0.5));
  CHECK(hit_at(ranking, gt, 150.0) == doctest::Approx(1.0));

  const std::set<Eigen::Index> top{2, 1};
  CHECK(hit_at(ranking, top, 100.0) == doctest::Approx(1.0));

  const std::set<Eigen::Index> disjoint{5, 4};
  CHECK(hit_at(ranking, disjoint, 100.0) == doctest::Approx(0.0));

  CHECK_THROWS_AS(hit_at(ranking, {}, 100.0), data_error);
}

TEST_CASE("ndcg discounts positions logarithmically") {
  const std::vector<Eigen::Index> ranking{2, 1, 3, 5, 4};
  const std::set<Eigen::Index> gt{2, 3};
  const double dcg = 1.0 / std::log2(2.0) + 1.0 / std::log2(4.0);
  const double idcg = 1.0 / std::log2(2.0) + 1.0 / std::log2(3.0);
  CHECK(ndcg_at(ranking, gt, 150.0) == doctest::Approx(dcg / idcg));
  CHECK(ndcg_at(ranking, gt, 150.0) == doctest::Approx(0.9197).epsilon(1e-4));

  const std::vector<Eigen::Index> ideal{2, 3, 1, 5, 4};
  CHECK(ndcg_at(ideal, gt, 100.0) == doctest::Approx(1.0));

  const std::set<Eigen::Index> disjoint{0, 4};
  CHECK(ndcg_at(ranking, disjoint, 100.0) == doctest::Approx(0.0));
}

TEST_CASE("rank metrics ignore order below the cutoff") {
  const std::set<Eigen::Index> gt{0, 1};
  const std::vector<Eigen::Index> a{0, 1, 2, 3, 4};
  const std::vector<Eigen::Index> b{0, 1, 4, 3, 2};
  for (double p : {100.0, 150.0}) {
    CHECK(hit_at(a, gt, p) == hit_at(b, gt, p));
    CHECK(ndcg_at(a, gt, p) == ndcg_at(b, gt, p));
  }
}

namespace {

core::SeriesFrame labeled_frame(Eigen::Index n, Eigen::Index c,
                                const std::function<double(Eigen::Index, Eigen::Index, bool)>& gen,
                                Eigen::Index anomaly_start, Eigen::Index anomaly_end) {
  core::SeriesFrame frame;
  frame.values.resize(n, c);
  frame.labels.assign(static_cast<std::size_t>(n), 0);
  for (Eigen::Index t = anomaly_start; t < anomaly_end; ++t) {
    frame.labels[static_cast<std::size_t>(t)] = 1;
  }
  for (Eigen::Index t = 0; t < n; ++t) {
    const bool abnormal = t >= anomaly_start && t < anomaly_end;
    for (Eigen::Index v = 0; v < c; ++v) frame.values(t, v) = gen(t, v, abnormal);
  }
  return frame;
}

}  // namespace

TEST_CASE("identical class histograms give near-zero KL") {
  // both classes sweep the same 32 values equally often
  core::SeriesFrame frame;
  const Eigen::Index n = 640;
  frame.values.resize(n, 2);
  frame.labels.assign(static_cast<std::size_t>(n), 0);
  for (Eigen::Index t = 0; t < n; ++t) {
    frame.values(t, 0) = static_cast<double>(t % 32) / 32.0;
    frame.values(t, 1) = static_cast<double>((t * 7) % 32) / 32.0;
    frame.labels[static_cast<std::size_t>(t)] = static_cast<int>((t / 32) % 2);
  }
  const KlResult kl = kl_separability(frame, Representation::kRaw);
  CHECK(kl.aggregate >= 0.0);
  CHECK(kl.aggregate <= 1e-3);
}

TEST_CASE("disjoint supports give a large smoothed KL") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  const auto frame = labeled_frame(
      400, 2,
      [&](Eigen::Index, Eigen::Index, bool abnormal) {
        return abnormal ? 10.0 + dist(rng) : dist(rng);
      },
      100, 200);
  const KlResult kl = kl_separability(frame, Representation::kRaw);
  CHECK(kl.aggregate > 1.0);
}

TEST_CASE("KL requires both classes") {
  core::SeriesFrame frame;
  frame.values = Eigen::MatrixXd::Random(50, 2);
  frame.labels.assign(50, 0);
  CHECK_THROWS_AS(kl_separability(frame, Representation::kRaw), data_error);
}

TEST_CASE("mvmtf representation is computable on a labeled corpus") {
  const auto spec = synth::correlation_break_spec(600, 3, 5);
  const auto frame = synth::generate(spec);
  const KlResult raw = kl_separability(frame, Representation::kRaw, 0.9);
  const KlResult converted = kl_separability(frame, Representation::kMvmtf, 0.9);
  CHECK(raw.aggregate >= 0.0);
  CHECK(converted.aggregate >= 0.0);
  CHECK(converted.per_variable.size() == 3);
}

TEST_CASE("log-log slope recovers polynomial exponents") {
  std::vector<Eigen::Index> x{100, 200, 400, 800};
  std::vector<double> linear, quadratic;
  for (Eigen::Index n : x) {
    linear.push_back(2.5e-6 * static_cast<double>(n));
    quadratic.push_back(1e-9 * static_cast<double>(n) * static_cast<double>(n));
  }
  CHECK(loglog_slope(x, linear) == doctest::Approx(1.0));
  CHECK(loglog_slope(x, quadratic) == doctest::Approx(2.0));
}

TEST_CASE("benchmark rejects a degenerate size list") {
  CHECK_THROWS_AS(bench_conversion({1000}, 4, 3, 1), config_error);
  CHECK_THROWS_AS(bench_conversion({1000, 1000, 1000}, 4, 3, 1), config_error);
}

TEST_CASE("benchmark smoke test emits a well-formed table") {
  const BenchResult r = bench_conversion({128, 256, 512}, 2, 1, 11);
  REQUIRE(r.sizes.size() == 3);
  for (double t : r.sparse_seconds) CHECK(t > 0.0);
  for (double t : r.dense_seconds) CHECK(t > 0.0);
  CHECK(r.dense_seconds.back() > r.sparse_seconds.back());
  CHECK(r.table().find("slope") != std::string::npos);
  CHECK(r.to_json().find("\"sizes\"") != std::string::npos);
}
