#pragma once

#include <Eigen/Dense>
#include <set>
#include <string>
#include <vector>

#include "mtfad/core.hpp"
#include "mtfad/errors.hpp"

namespace mtfad::synth {

enum class AnomalyKind { kSpike, kLevelShift, kCorrelationBreak };

AnomalyKind kind_from_string(const std::string& name);
std::string kind_to_string(AnomalyKind kind);

struct Injection {
  Eigen::Index start = 0;
  Eigen::Index end = 0;  // exclusive
  std::set<Eigen::Index> vars;
  AnomalyKind kind = AnomalyKind::kSpike;
  double magnitude = 3.0;
};

struct SyntheticSpec {
  Eigen::Index n = 2000;
  Eigen::Index c = 5;
  std::string base = "sinusoid";  // or "random-walk"
  std::vector<Injection> injections;
  unsigned long seed = 7;

  void validate() const;
  std::string to_json() const;
  static SyntheticSpec from_json(const std::string& text);
};

// Deterministic per seed. Variables share a slow latent oscillation so that
// correlation-break segments decouple the joint structure while keeping each
// variable's marginal distribution close to normal.
core::SeriesFrame generate(const SyntheticSpec& spec);

// Corpus used by the end-to-end checks: six spread-out segments mixing
// spikes, level shifts, and correlation breaks over one or two variables.
SyntheticSpec demo_spec(Eigen::Index n, Eigen::Index c, unsigned long seed);

// Variant with correlation breaks only, for the separability diagnostic.
SyntheticSpec correlation_break_spec(Eigen::Index n, Eigen::Index c, unsigned long seed);

}  // namespace mtfad::synth
