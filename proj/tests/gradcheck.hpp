#pragma once

// Test-only central-difference oracle for the reverse-mode engine. Rebuilds
// the forward pass from scratch for every probe, so it stays independent of
// the tape's backward implementation.

#include <functional>
#include <random>
#include <vector>

#include "mtfad/tensor.hpp"

namespace gradcheck {

using Builder = std::function<mtfad::tensor::DiffArray(mtfad::tensor::Tape&,
                                                       std::vector<mtfad::tensor::DiffArray>&)>;

struct Result {
  double max_abs_err = 0.0;  // |ad - fd|
  double max_rel_err = 0.0;  // |ad - fd| / max(1, |ad|, |fd|)
  bool within_spec = true;   // per-element max(1e-4, 1e-2 |ad|) bound
};

inline std::vector<Eigen::ArrayXd> random_inputs(const std::vector<mtfad::tensor::Shape>& shapes,
                                                 unsigned long seed, double lo = -1.0,
                                                 double hi = 1.0, double keep_away = 0.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<Eigen::ArrayXd> data;
  for (const auto& shape : shapes) {
    Eigen::ArrayXd arr(mtfad::tensor::shape_size(shape));
    for (Eigen::Index i = 0; i < arr.size(); ++i) {
      double x = dist(rng);
      if (keep_away > 0.0 && std::abs(x) < keep_away) x += x >= 0.0 ? keep_away : -keep_away;
      arr(i) = x;
    }
    data.push_back(std::move(arr));
  }
  return data;
}

inline double evaluate(const Builder& build, const std::vector<mtfad::tensor::Shape>& shapes,
                       const std::vector<Eigen::ArrayXd>& data) {
  mtfad::tensor::Tape tape;
  std::vector<mtfad::tensor::DiffArray> inputs;
  for (std::size_t i = 0; i < shapes.size(); ++i) inputs.push_back(tape.input(shapes[i], data[i]));
  return build(tape, inputs).value()(0);
}

inline Result check(const Builder& build, const std::vector<mtfad::tensor::Shape>& shapes,
                    unsigned long seed, double keep_away = 0.0) {
  auto data = random_inputs(shapes, seed, -1.0, 1.0, keep_away);

  mtfad::tensor::Tape tape;
  std::vector<mtfad::tensor::DiffArray> inputs;
  for (std::size_t i = 0; i < shapes.size(); ++i) inputs.push_back(tape.input(shapes[i], data[i]));
  mtfad::tensor::DiffArray loss = build(tape, inputs);
  tape.backward(loss);

  Result result;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const Eigen::ArrayXd grad = inputs[i].grad();
    for (Eigen::Index e = 0; e < grad.size(); ++e) {
      const double h = 1e-5 * std::max(1.0, std::abs(data[i](e)));
      const double saved = data[i](e);
      data[i](e) = saved + h;
      const double up = evaluate(build, shapes, data);
      data[i](e) = saved - h;
      const double down = evaluate(build, shapes, data);
      data[i](e) = saved;
      const double fd = (up - down) / (2.0 * h);
      const double err = std::abs(grad(e) - fd);
      result.max_abs_err = std::max(result.max_abs_err, err);
      result.max_rel_err =
          std::max(result.max_rel_err, err / std::max({1.0, std::abs(grad(e)), std::abs(fd)}));
      if (err > std::max(1e-4, 1e-2 * std::abs(grad(e)))) result.within_spec = false;
    }
  }
  return result;
}

}  // namespace gradcheck
