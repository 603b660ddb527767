#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "mtfad/core.hpp"

using namespace mtfad;
using namespace mtfad::core;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

SeriesFrame random_frame(Eigen::Index n, Eigen::Index c, unsigned long seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 2.0);
  SeriesFrame frame;
  frame.values.resize(n, c);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) frame.values(i, j) = dist(rng);
  }
  return frame;
}

}  // namespace

TEST_CASE("load_csv reads the three-sensor fixture") {
  const auto path = temp_file("mtfad_core_fixture.csv");
  {
    std::ofstream out(path);
    out << "temperature,pressure,humidity\n";
    out << "30,101325,20\n";
    out << "32,101300,21\n";
    out << "50,101310,20\n";
  }
  const SeriesFrame frame = load_csv(path.string());
  CHECK(frame.length() == 3);
  CHECK(frame.variables() == 3);
  CHECK(frame.values(0, 0) == 30.0);
  CHECK(frame.values(2, 0) == 50.0);
  CHECK(frame.values(1, 1) == 101300.0);
  CHECK(frame.values(2, 2) == 20.0);
  CHECK(frame.var_names[1] == "pressure");
  std::filesystem::remove(path);
}

TEST_CASE("load_csv rejects degenerate input") {
  const auto empty = temp_file("mtfad_core_empty.csv");
  { std::ofstream out(empty); }
  CHECK_THROWS_AS(load_csv(empty.string()), data_error);
  std::filesystem::remove(empty);

  const auto ragged = temp_file("mtfad_core_ragged.csv");
  {
    std::ofstream out(ragged);
    out << "a,b\n1,2\n3\n";
  }
  CHECK_THROWS_AS(load_csv(ragged.string()), data_error);
  std::filesystem::remove(ragged);

  const auto bad_cell = temp_file("mtfad_core_badcell.csv");
  {
    std::ofstream out(bad_cell);
    out << "a,b\n1,2\n3,oops\n";
  }
  CHECK_THROWS_WITH_AS(load_csv(bad_cell.string()),
                       doctest::Contains("row 2, column 1"), data_error);
  std::filesystem::remove(bad_cell);
}

TEST_CASE("load_csv validates label length") {
  const auto path = temp_file("mtfad_core_lab.csv");
  const auto labels = temp_file("mtfad_core_lab.txt");
  {
    std::ofstream out(path);
    out << "a\n1\n2\n3\n";
    std::ofstream lab(labels);
    lab << "0\n1\n";
  }
  CHECK_THROWS_AS(load_csv(path.string(), labels.string()), data_error);
  std::filesystem::remove(path);
  std::filesystem::remove(labels);
}

TEST_CASE("csv round-trip is bit exact on values") {
  SeriesFrame frame = random_frame(64, 4, 11);
  frame.labels.assign(64, 0);
  frame.labels[10] = 1;
  frame.gt_vars[10] = {1, 3};
  const auto data = temp_file("mtfad_core_rt.csv");
  const auto labels = temp_file("mtfad_core_rt_labels.txt");
  const auto gt = temp_file("mtfad_core_rt_gt.txt");
  save_csv(frame, data.string(), labels.string(), gt.string());
  const SeriesFrame back = load_csv(data.string(), labels.string(), gt.string());
  REQUIRE(back.length() == frame.length());
  REQUIRE(back.variables() == frame.variables());
  for (Eigen::Index i = 0; i < frame.length(); ++i) {
    for (Eigen::Index j = 0; j < frame.variables(); ++j) {
      CHECK(back.values(i, j) == frame.values(i, j));  // exact, not approximate
    }
  }
  CHECK(back.labels == frame.labels);
  CHECK(back.gt_vars.at(10) == frame.gt_vars.at(10));
  std::filesystem::remove(data);
  std::filesystem::remove(labels);
  std::filesystem::remove(gt);
}

TEST_CASE("min-max normalization maps endpoints and constants") {
  SeriesFrame frame;
  frame.values.resize(3, 2);
  frame.values.col(0) << 30.0, 32.0, 50.0;
  frame.values.col(1) << 5.0, 5.0, 5.0;
  const auto [normalized, scaler] = min_max_normalize(frame);
  CHECK(normalized.values(0, 0) == doctest::Approx(0.0));
  CHECK(normalized.values(1, 0) == doctest::Approx(0.1));
  CHECK(normalized.values(2, 0) == doctest::Approx(1.0));
  CHECK(normalized.values.col(1).cwiseAbs().maxCoeff() == 0.0);
  // constant columns invert to their original level
  const Eigen::MatrixXd back = scaler.invert(normalized.values);
  CHECK(back(1, 1) == doctest::Approx(5.0));
}

TEST_CASE("normalization round-trip inverts within 1e-12") {
  const SeriesFrame frame = random_frame(100, 4, 3);
  const auto [normalized, scaler] = min_max_normalize(frame);
  const Eigen::MatrixXd back = scaler.invert(normalized.values);
  CHECK((back - frame.values).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("discretize reproduces the explicit-edge fixture") {
  // bins [0,0.2), [0.2,0.3), [0.3,0.4]; indices here are 0-based
  const BinRow bins = bins_from_edges({0.2, 0.3});
  Eigen::VectorXd series(6);
  series << 0.1, 0.3, 0.05, 0.4, 0.15, 0.2;
  const Eigen::VectorXi idx = discretize(series, bins);
  Eigen::VectorXi expected(6);
  expected << 0, 2, 0, 2, 0, 1;
  CHECK(idx == expected);
}

TEST_CASE("discretize handles boundaries and NaN") {
  const BinRow bins = bins_from_edges({1.0, 2.0});
  Eigen::VectorXd below(3);
  below << -5.0, 0.0, 0.999;
  CHECK(discretize(below, bins).maxCoeff() == 0);

  Eigen::VectorXd top(1);
  top << 99.0;  // beyond the last edge still lands in the final bin
  CHECK(discretize(top, bins)(0) == 2);

  Eigen::VectorXd bad(1);
  bad << std::nan("");
  CHECK_THROWS_AS(discretize(bad, bins), data_error);
}

TEST_CASE("discretize agrees with a linear-scan oracle") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> dist(-1.0, 2.0);
  const BinRow bins = bins_from_edges({-0.5, 0.0, 0.25, 0.5, 1.0, 1.5});
  Eigen::VectorXd series(1000);
  for (Eigen::Index i = 0; i < series.size(); ++i) series(i) = dist(rng);
  const Eigen::VectorXi idx = discretize(series, bins);
  for (Eigen::Index i = 0; i < series.size(); ++i) {
    int expected = 0;
    for (double edge : bins.edges) {
      if (series(i) >= edge) ++expected;
    }
    CHECK(idx(i) == expected);
  }
}

TEST_CASE("discretization is idempotent on representative values") {
  const BinRow bins = bins_from_edges({0.2, 0.5, 0.8});
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  Eigen::VectorXd series(200);
  for (Eigen::Index i = 0; i < series.size(); ++i) series(i) = dist(rng);
  const Eigen::VectorXi idx = discretize(series, bins);

  Eigen::VectorXd representative(series.size());
  for (Eigen::Index i = 0; i < series.size(); ++i) {
    const int b = idx(i);
    representative(i) = b == 0 ? bins.edges.front() - 1.0 : bins.edges[b - 1];
  }
  CHECK(discretize(representative, bins) == idx);
}

TEST_CASE("entropy selection prefers more occupied bins") {
  Eigen::VectorXd series(100);
  for (Eigen::Index i = 0; i < 100; ++i) series(i) = static_cast<double>(i);
  const auto [q, row] = select_bin_count(series, {4, 8});
  CHECK(q == 8);
  CHECK(row.entropy > std::log(4.0));
}

TEST_CASE("entropy selection ties break toward the smallest candidate") {
  SUBCASE("constant series") {
    Eigen::VectorXd series = Eigen::VectorXd::Constant(50, 3.14);
    const auto [q, row] = select_bin_count(series, {6, 2, 4});
    CHECK(q == 2);
    CHECK(row.entropy == doctest::Approx(0.0));
  }
  SUBCASE("three distinct values saturate at three bins") {
    Eigen::VectorXd series(30);
    for (Eigen::Index i = 0; i < 30; ++i) series(i) = static_cast<double>(i % 3);
    const auto [q, row] = select_bin_count(series, {2, 3, 5, 10});
    CHECK(q == 3);
    CHECK(row.entropy == doctest::Approx(std::log(3.0)));
  }
}

TEST_CASE("entropy selection never returns a dominated candidate") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  const std::vector<int> candidates{2, 4, 6, 8, 12};
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::VectorXd series(80);
    for (Eigen::Index i = 0; i < series.size(); ++i) series(i) = dist(rng);
    const auto [q, row] = select_bin_count(series, candidates);
    for (int candidate : candidates) {
      BinRow other = quantile_bins(series, candidate);
      const double h = discretization_entropy(discretize(series, other), other.bin_count());
      CHECK(row.entropy >= h - 1e-9);
    }
  }
}

TEST_CASE("select_bin_count rejects an empty candidate set") {
  Eigen::VectorXd series(10);
  series.setRandom();
  CHECK_THROWS_AS(select_bin_count(series, {}), config_error);
}

TEST_CASE("windows enumerate starts and aggregate labels") {
  SeriesFrame frame = random_frame(10, 2, 1);

  SUBCASE("single full-length window") {
    SeriesFrame six = random_frame(6, 2, 2);
    const auto wins = windows(six, 6, 1);
    REQUIRE(wins.size() == 1);
    CHECK(wins[0].start == 0);
    CHECK(wins[0].numeric.cols() == 6);
    CHECK(wins[0].numeric.rows() == 2);
  }
  SUBCASE("stride enumeration") {
    const auto wins = windows(frame, 4, 2);
    REQUIRE(wins.size() == 4);
    CHECK(wins[0].start == 0);
    CHECK(wins[1].start == 2);
    CHECK(wins[2].start == 4);
    CHECK(wins[3].start == 6);
  }
  SUBCASE("any anomalous point marks the window") {
    frame.labels.assign(10, 0);
    frame.labels[2] = 1;
    const auto wins = windows(frame, 4, 4);
    CHECK(wins[0].label == 1);  // covers 0..3
    CHECK(wins[1].label == 0);  // covers 4..7
  }
  SUBCASE("oversized window is a configuration error") {
    CHECK_THROWS_AS(windows(frame, 11, 1), config_error);
  }
}

TEST_CASE("window slices match the frame content") {
  const SeriesFrame frame = random_frame(25, 3, 9);
  const auto wins = windows(frame, 5, 3);
  for (const auto& win : wins) {
    for (Eigen::Index v = 0; v < 3; ++v) {
      for (Eigen::Index t = 0; t < 5; ++t) {
        CHECK(win.numeric(v, t) == frame.values(win.start + t, v));
      }
    }
  }
  // coverage: consecutive windows never skip past stride
  for (std::size_t i = 1; i < wins.size(); ++i) {
    CHECK(wins[i].start - wins[i - 1].start == 3);
  }
  CHECK(wins.back().start + 5 <= frame.length());
}
