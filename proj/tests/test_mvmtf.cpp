#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <random>

#include "doctest.h"
#include "mtfad/mvmtf.hpp"

using namespace mtfad;
using namespace mtfad::core;
using namespace mtfad::mvmtf;

namespace {

// The worked two-series fixture (bin indices 0-based here):
// series u discretizes to (0,2,0,2,0,1), series u' to (0,1,2,1,1,2).
Eigen::VectorXi seq_u() {
  Eigen::VectorXi s(6);
  s << 0, 2, 0, 2, 0, 1;
  return s;
}

Eigen::VectorXi seq_v() {
  Eigen::VectorXi s(6);
  s << 0, 1, 2, 1, 1, 2;
  return s;
}

Eigen::VectorXi random_seq(std::mt19937_64& rng, Eigen::Index n, int q) {
  std::uniform_int_distribution<int> dist(0, q - 1);
  Eigen::VectorXi s(n);
  for (Eigen::Index i = 0; i < n; ++i) s(i) = dist(rng);
  return s;
}

SeriesFrame pair_frame() {
  SeriesFrame frame;
  frame.values.resize(6, 2);
  frame.values.col(0) << 0.1, 0.3, 0.05, 0.4, 0.15, 0.2;
  frame.values.col(1) << 0.2, 0.3, 0.45, 0.3, 0.35, 0.4;
  return frame;
}

BinModel pair_bins() {
  BinModel bins;
  bins.rows.push_back(bins_from_edges({0.2, 0.3}));  // u: [0,.2) [.2,.3) [.3,.4]
  bins.rows.push_back(bins_from_edges({0.3, 0.4}));  // u': [.2,.3) [.3,.4) [.4,.5]
  return bins;
}

}  // namespace

TEST_CASE("pair transitions reproduce the worked fixture exactly") {
  const auto pt = fit_pair_transitions(seq_u(), seq_v(), 3, 3);
  CHECK(pt.w(0, 0) == 0.0);
  CHECK(pt.w(0, 1) == 2.0 / 3.0);
  CHECK(pt.w(0, 2) == 1.0 / 3.0);
  CHECK(pt.w.row(1).cwiseAbs().maxCoeff() == 0.0);  // unseen source bin
  CHECK(pt.w(2, 0) == 0.0);
  CHECK(pt.w(2, 1) == 0.5);
  CHECK(pt.w(2, 2) == 0.5);
  CHECK(pt.row_counts(0) == 3);
  CHECK(pt.row_counts(1) == 0);
  CHECK(pt.row_counts(2) == 2);
}

TEST_CASE("self transitions reproduce the univariate fixture") {
  const auto pt = fit_pair_transitions(seq_u(), seq_u(), 3, 3);
  CHECK(pt.w(0, 2) == 2.0 / 3.0);  // two of three moves out of the first bin
}

TEST_CASE("constant sequence concentrates on one transition") {
  Eigen::VectorXi constant(4);
  constant << 1, 1, 1, 1;
  const auto pt = fit_pair_transitions(constant, constant, 3, 3);
  CHECK(pt.w(1, 1) == 1.0);
  CHECK(pt.w.row(0).cwiseAbs().maxCoeff() == 0.0);
  CHECK(pt.w.row(2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("pair transitions reject mismatched lengths") {
  Eigen::VectorXi a(3), b(4);
  a.setZero();
  b.setZero();
  CHECK_THROWS_AS(fit_pair_transitions(a, b, 2, 2), data_error);
}

TEST_CASE("nonzero transition rows sum to one") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const int q = 2 + static_cast<int>(rng() % 6);
    const auto s1 = random_seq(rng, 40, q);
    const auto s2 = random_seq(rng, 40, q);
    const auto pt = fit_pair_transitions(s1, s2, q, q);
    for (int i = 0; i < q; ++i) {
      const double sum = pt.w.row(i).sum();
      if (pt.row_counts(i) > 0) {
        CHECK(std::abs(sum - 1.0) <= 1e-12);
      } else {
        CHECK(sum == 0.0);
      }
      CHECK(pt.w.row(i).minCoeff() >= 0.0);
      CHECK(pt.w.row(i).maxCoeff() <= 1.0);
    }
  }
}

TEST_CASE("dense field reproduces the printed 6x6 fixture") {
  const auto pt = fit_pair_transitions(seq_u(), seq_v(), 3, 3);
  const Eigen::MatrixXd field = mtf_field_dense(seq_u(), seq_v(), pt.w);
  Eigen::MatrixXd expected(6, 6);
  expected << 0, 2.0 / 3, 1.0 / 3, 2.0 / 3, 2.0 / 3, 1.0 / 3,
              0, 0.5, 0.5, 0.5, 0.5, 0.5,
              0, 2.0 / 3, 1.0 / 3, 2.0 / 3, 2.0 / 3, 1.0 / 3,
              0, 0.5, 0.5, 0.5, 0.5, 0.5,
              0, 2.0 / 3, 1.0 / 3, 2.0 / 3, 2.0 / 3, 1.0 / 3,
              0, 0, 0, 0, 0, 0;
  REQUIRE(field.rows() == 6);
  for (Eigen::Index i = 0; i < 6; ++i) {
    for (Eigen::Index j = 0; j < 6; ++j) {
      CHECK(field(i, j) == expected(i, j));  // exact rational arithmetic
    }
  }
}

TEST_CASE("univariate field entries look up self transitions") {
  const auto pt = fit_pair_transitions(seq_u(), seq_u(), 3, 3);
  const Eigen::MatrixXd field = mtf_field_dense(seq_u(), seq_u(), pt.w);
  CHECK(field(0, 1) == pt.w(0, 2));
  CHECK(field(1, 2) == pt.w(2, 0));
  CHECK(field(2, 3) == pt.w(0, 2));
}

TEST_CASE("constant series yields an all-ones field") {
  Eigen::VectorXi constant(5);
  constant.setConstant(1);
  const auto pt = fit_pair_transitions(constant, constant, 2, 2);
  const Eigen::MatrixXd field = mtf_field_dense(constant, constant, pt.w);
  CHECK(field.minCoeff() == 1.0);
  CHECK(field.maxCoeff() == 1.0);
}

TEST_CASE("dense field rejects out-of-range bins") {
  const auto pt = fit_pair_transitions(seq_u(), seq_v(), 3, 3);
  Eigen::VectorXi bad(6);
  bad << 0, 1, 2, 3, 0, 1;  // 3 exceeds the 3-bin matrix
  CHECK_THROWS_AS(mtf_field_dense(bad, seq_v(), pt.w), data_error);
}

TEST_CASE("sparse band matches the fixture and the dense superdiagonal") {
  const auto pt = fit_pair_transitions(seq_u(), seq_v(), 3, 3);
  const Eigen::VectorXd band = mtf_field_sparse(seq_u(), seq_v(), pt.w);
  Eigen::VectorXd expected(5);
  expected << 2.0 / 3, 0.5, 2.0 / 3, 0.5, 1.0 / 3;
  REQUIRE(band.size() == 5);
  for (Eigen::Index t = 0; t < 5; ++t) CHECK(band(t) == expected(t));
}

TEST_CASE("sparse equals dense superdiagonal on random instances") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const int q = 2 + static_cast<int>(rng() % 5);
    const Eigen::Index w = 2 + static_cast<Eigen::Index>(rng() % 11);
    const auto su = random_seq(rng, std::max<Eigen::Index>(w, 8), q);
    const auto sv = random_seq(rng, su.size(), q);
    const auto pt = fit_pair_transitions(su, sv, q, q);
    const auto wu = random_seq(rng, w, q);
    const auto wv = random_seq(rng, w, q);
    const Eigen::MatrixXd dense = mtf_field_dense(wu, wv, pt.w);
    const Eigen::VectorXd sparse = mtf_field_sparse(wu, wv, pt.w);
    REQUIRE(sparse.size() == w - 1);
    for (Eigen::Index t = 0; t + 1 < w; ++t) CHECK(sparse(t) == dense(t, t + 1));
  }
}

TEST_CASE("two-entry window gives a single-entry band") {
  Eigen::VectorXi a(2), b(2);
  a << 0, 1;
  b << 1, 0;
  const auto pt = fit_pair_transitions(a, b, 2, 2);
  CHECK(mtf_field_sparse(a, b, pt.w).size() == 1);
}

TEST_CASE("transition model fit contains the worked pair") {
  const SeriesFrame frame = pair_frame();
  const BinModel bins = pair_bins();
  const auto model = fit_transition_model(frame, bins);
  REQUIRE(model.variable_count == 2);
  CHECK(model.w(0, 1)(0, 1) == 2.0 / 3.0);
  CHECK(model.w(0, 1)(2, 1) == 0.5);
  CHECK(model.w(0, 0)(0, 2) == 2.0 / 3.0);  // univariate path as the self pair
}

TEST_CASE("single-variable model reduces to the univariate field") {
  SeriesFrame frame;
  frame.values.resize(6, 1);
  frame.values.col(0) << 0.1, 0.3, 0.05, 0.4, 0.15, 0.2;
  BinModel bins;
  bins.rows.push_back(bins_from_edges({0.2, 0.3}));
  const auto model = fit_transition_model(frame, bins);
  const auto direct = fit_pair_transitions(seq_u(), seq_u(), 3, 3);
  CHECK(model.w(0, 0) == direct.w);
}

TEST_CASE("shuffled training rows change the transition counts") {
  SeriesFrame frame = pair_frame();
  SeriesFrame shuffled = frame;
  shuffled.values.row(0).swap(shuffled.values.row(3));
  shuffled.values.row(1).swap(shuffled.values.row(4));
  const BinModel bins = pair_bins();
  const auto a = fit_transition_model(frame, bins);
  const auto b = fit_transition_model(shuffled, bins);

  // oracle recount on the shuffled data
  const auto su = discretize(shuffled.values.col(0), bins.rows[0]);
  const auto sv = discretize(shuffled.values.col(1), bins.rows[1]);
  const auto recount = fit_pair_transitions(su, sv, 3, 3);
  CHECK(b.w(0, 1) == recount.w);
  CHECK(a.w(0, 1) != b.w(0, 1));
}

namespace {

Window frame_window(const SeriesFrame& frame) {
  Window win;
  win.start = 0;
  win.numeric = frame.values.transpose();
  return win;
}

}  // namespace

TEST_CASE("alpha = 1 keeps only self transitions") {
  const SeriesFrame frame = pair_frame();
  const BinModel bins = pair_bins();
  const auto trans = fit_transition_model(frame, bins);
  const auto img = compose_mvmtf(frame_window(frame), bins, trans, 1.0,
                                 uniform_cross_weights(2), FieldMode::kDense);
  const auto su = discretize(frame.values.col(0), bins.rows[0]);
  CHECK(img.per_var[0] == mtf_field_dense(su, su, trans.w(0, 0)));
}

TEST_CASE("blended field matches a straight-line recomputation") {
  const SeriesFrame frame = pair_frame();
  const BinModel bins = pair_bins();
  const auto trans = fit_transition_model(frame, bins);
  const double alpha = 0.5;
  const auto img = compose_mvmtf(frame_window(frame), bins, trans, alpha,
                                 uniform_cross_weights(2), FieldMode::kDense);

  const auto su = discretize(frame.values.col(0), bins.rows[0]);
  const auto sv = discretize(frame.values.col(1), bins.rows[1]);
  const Eigen::MatrixXd m00 = mtf_field_dense(su, su, trans.w(0, 0));
  const Eigen::MatrixXd m01 = mtf_field_dense(su, sv, trans.w(0, 1));
  const Eigen::MatrixXd m10 = mtf_field_dense(sv, su, trans.w(1, 0));
  const Eigen::MatrixXd m11 = mtf_field_dense(sv, sv, trans.w(1, 1));

  const Eigen::MatrixXd expected0 = 0.5 * m00 + 0.5 * m01;
  const Eigen::MatrixXd expected1 = 0.5 * m11 + 0.5 * m10;
  CHECK((img.per_var[0] - expected0).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((img.per_var[1] - expected1).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((img.combined - 0.5 * (expected0 + expected1)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("weight rows must sum to one") {
  const SeriesFrame frame = pair_frame();
  const BinModel bins = pair_bins();
  const auto trans = fit_transition_model(frame, bins);
  Eigen::MatrixXd bad = uniform_cross_weights(2);
  bad(0, 1) = 0.7;
  CHECK_THROWS_AS(
      compose_mvmtf(frame_window(frame), bins, trans, 0.5, bad, FieldMode::kDense),
      config_error);
}

TEST_CASE("composed entries stay inside the unit interval") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::Index c = 2 + static_cast<Eigen::Index>(rng() % 3);
    SeriesFrame frame;
    frame.values.resize(60, c);
    for (Eigen::Index i = 0; i < 60; ++i) {
      for (Eigen::Index j = 0; j < c; ++j) frame.values(i, j) = dist(rng);
    }
    const BinModel bins = fit_bins(frame, {4, 6});
    const auto trans = fit_transition_model(frame, bins);
    const double alpha = dist(rng);
    const auto img = compose_mvmtf(frame_window(frame), bins, trans, alpha,
                                   uniform_cross_weights(c), FieldMode::kSparse);
    for (const auto& band : img.per_var) {
      CHECK(band.minCoeff() >= 0.0);
      CHECK(band.maxCoeff() <= 1.0);
    }
    CHECK(img.combined.minCoeff() >= 0.0);
    CHECK(img.combined.maxCoeff() <= 1.0);
  }
}

TEST_CASE("relabeling variables permutes the composition") {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  SeriesFrame frame;
  frame.values.resize(40, 3);
  for (Eigen::Index i = 0; i < 40; ++i) {
    for (Eigen::Index j = 0; j < 3; ++j) frame.values(i, j) = dist(rng);
  }
  SeriesFrame permuted;
  permuted.values.resize(40, 3);
  const std::array<Eigen::Index, 3> perm{2, 0, 1};  // permuted col j = original col perm[j]
  for (Eigen::Index j = 0; j < 3; ++j) permuted.values.col(j) = frame.values.col(perm[j]);

  const BinModel bins = fit_bins(frame, {4, 6});
  BinModel bins_p;
  for (Eigen::Index j = 0; j < 3; ++j) bins_p.rows.push_back(bins.rows[perm[j]]);

  const auto trans = fit_transition_model(frame, bins);
  const auto trans_p = fit_transition_model(permuted, bins_p);
  const auto img = compose_mvmtf(frame_window(frame), bins, trans, 0.7,
                                 uniform_cross_weights(3), FieldMode::kSparse);
  const auto img_p = compose_mvmtf(frame_window(permuted), bins_p, trans_p, 0.7,
                                   uniform_cross_weights(3), FieldMode::kSparse);
  for (Eigen::Index j = 0; j < 3; ++j) {
    CHECK((img_p.per_var[j] - img.per_var[perm[j]]).cwiseAbs().maxCoeff() < 1e-15);
  }
  CHECK((img_p.combined - img.combined).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("image channels pad the band to window width") {
  MtfImage img;
  img.width = 6;
  img.mode = FieldMode::kSparse;
  Eigen::MatrixXd band(5, 1);
  band << 0.1, 0.2, 0.3, 0.4, 0.5;
  img.per_var.push_back(band);
  const Eigen::MatrixXd channels = image_channels(img);
  REQUIRE(channels.cols() == 6);
  CHECK(channels(0, 4) == 0.5);
  CHECK(channels(0, 5) == 0.5);  // repeated last entry
}

TEST_CASE("channels under alpha = 1 equal the univariate bands") {
  const SeriesFrame frame = pair_frame();
  const BinModel bins = pair_bins();
  const auto trans = fit_transition_model(frame, bins);
  const auto img = compose_mvmtf(frame_window(frame), bins, trans, 1.0,
                                 uniform_cross_weights(2), FieldMode::kSparse);
  const Eigen::MatrixXd channels = image_channels(img);
  const auto su = discretize(frame.values.col(0), bins.rows[0]);
  const Eigen::VectorXd self_band = mtf_field_sparse(su, su, trans.w(0, 0));
  for (Eigen::Index t = 0; t + 1 < 6; ++t) CHECK(channels(0, t) == self_band(t));
  CHECK(channels.minCoeff() >= 0.0);
  CHECK(channels.maxCoeff() <= 1.0);
}

TEST_CASE("combined helpers agree with the full composition") {
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  SeriesFrame frame;
  frame.values.resize(50, 3);
  for (Eigen::Index i = 0; i < 50; ++i) {
    for (Eigen::Index j = 0; j < 3; ++j) frame.values(i, j) = dist(rng);
  }
  const BinModel bins = fit_bins(frame, {4, 6});
  const auto trans = fit_transition_model(frame, bins);
  const Eigen::MatrixXd weights = uniform_cross_weights(3);

  std::vector<Eigen::VectorXi> seqs;
  for (Eigen::Index v = 0; v < 3; ++v) {
    seqs.push_back(discretize(frame.values.col(v), bins.rows[static_cast<std::size_t>(v)]));
  }
  const auto dense_img = compose_mvmtf(frame_window(frame), bins, trans, 0.8, weights,
                                       FieldMode::kDense);
  const Eigen::MatrixXd combined = compose_dense_combined<double>(seqs, trans, 0.8, weights);
  CHECK((combined - dense_img.combined).cwiseAbs().maxCoeff() < 1e-14);

  const auto sparse_img = compose_mvmtf(frame_window(frame), bins, trans, 0.8, weights,
                                        FieldMode::kSparse);
  const Eigen::VectorXd band = compose_sparse_combined<double>(seqs, trans, 0.8, weights);
  CHECK((band - sparse_img.combined.col(0)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("persistence round-trips the model at float precision") {
  const SeriesFrame frame = pair_frame();
  const BinModel bins = pair_bins();
  const auto trans = fit_transition_model(frame, bins);
  const auto dir = std::filesystem::temp_directory_path();
  const auto manifest = (dir / "mtfad_trans.json").string();
  const auto blob = (dir / "mtfad_trans.bin").string();
  save_transition_model(trans, bins, 0.9, "uniform", manifest, blob);

  const auto loaded = load_transition_model(manifest, blob);
  CHECK(loaded.alpha == 0.9);
  CHECK(loaded.weight_policy == "uniform");
  REQUIRE(loaded.trans.variable_count == 2);
  REQUIRE(loaded.bins.rows.size() == 2);
  CHECK(loaded.bins.rows[0].edges == bins.rows[0].edges);
  for (Eigen::Index u = 0; u < 2; ++u) {
    for (Eigen::Index v = 0; v < 2; ++v) {
      CHECK((loaded.trans.w(u, v) - trans.w(u, v)).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
  std::filesystem::remove(manifest);
  std::filesystem::remove(blob);
}
