#include "mtfad/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "json.hpp"

namespace mtfad::synth {

AnomalyKind kind_from_string(const std::string& name) {
  if (name == "spike") return AnomalyKind::kSpike;
  if (name == "level-shift") return AnomalyKind::kLevelShift;
  if (name == "correlation-break") return AnomalyKind::kCorrelationBreak;
  throw config_error("unknown anomaly kind: " + name);
}

std::string kind_to_string(AnomalyKind kind) {
  switch (kind) {
    case AnomalyKind::kSpike:
      return "spike";
    case AnomalyKind::kLevelShift:
      return "level-shift";
    case AnomalyKind::kCorrelationBreak:
      return "correlation-break";
  }
  throw config_error("unhandled anomaly kind");
}

void SyntheticSpec::validate() const {
  if (n < 2 || c < 1) throw config_error("synthetic spec needs n >= 2, c >= 1");
  if (base != "sinusoid" && base != "random-walk") {
    throw config_error("unknown base signal: " + base);
  }
  for (const auto& inj : injections) {
    if (inj.start < 0 || inj.end <= inj.start || inj.end > n) {
      throw config_error("injection segment [" + std::to_string(inj.start) + ", " +
                         std::to_string(inj.end) + ") outside [0, " + std::to_string(n) + ")");
    }
    if (inj.vars.empty()) throw config_error("injection affects no variables");
    for (Eigen::Index v : inj.vars) {
      if (v < 0 || v >= c) throw config_error("injection variable out of range");
    }
  }
  for (std::size_t i = 0; i < injections.size(); ++i) {
    for (std::size_t j = i + 1; j < injections.size(); ++j) {
      const auto& a = injections[i];
      const auto& b = injections[j];
      const bool overlap_time = a.start < b.end && b.start < a.end;
      if (!overlap_time || a.kind == b.kind) continue;
      for (Eigen::Index v : a.vars) {
        if (b.vars.count(v)) {
          throw config_error("conflicting anomaly kinds overlap on variable " +
                             std::to_string(v));
        }
      }
    }
  }
}

std::string SyntheticSpec::to_json() const {
  nlohmann::json j;
  j["n"] = n;
  j["c"] = c;
  j["base"] = base;
  j["seed"] = seed;
  nlohmann::json list = nlohmann::json::array();
  for (const auto& inj : injections) {
    list.push_back({{"start", inj.start},
                    {"end", inj.end},
                    {"vars", std::vector<Eigen::Index>(inj.vars.begin(), inj.vars.end())},
                    {"kind", kind_to_string(inj.kind)},
                    {"magnitude", inj.magnitude}});
  }
  j["injections"] = list;
  return j.dump(2);
}

SyntheticSpec SyntheticSpec::from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  SyntheticSpec spec;
  spec.n = j.value("n", spec.n);
  spec.c = j.value("c", spec.c);
  spec.base = j.value("base", spec.base);
  spec.seed = j.value("seed", spec.seed);
  if (j.contains("injections")) {
    for (const auto& item : j.at("injections")) {
      Injection inj;
      inj.start = item.at("start").get<Eigen::Index>();
      inj.end = item.at("end").get<Eigen::Index>();
      for (auto v : item.at("vars").get<std::vector<Eigen::Index>>()) inj.vars.insert(v);
      inj.kind = kind_from_string(item.at("kind").get<std::string>());
      inj.magnitude = item.value("magnitude", inj.magnitude);
      spec.injections.push_back(std::move(inj));
    }
  }
  return spec;
}

core::SeriesFrame generate(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const Eigen::Index n = spec.n, c = spec.c;
  core::SeriesFrame frame;
  frame.values.resize(n, c);
  frame.labels.assign(static_cast<std::size_t>(n), 0);
  for (Eigen::Index v = 0; v < c; ++v) frame.var_names.push_back("v" + std::to_string(v));

  constexpr double kNoise = 0.08;
  const double latent_period = 97.0;
  std::vector<double> phase(static_cast<std::size_t>(c));
  std::vector<double> amp(static_cast<std::size_t>(c));
  for (Eigen::Index v = 0; v < c; ++v) {
    phase[static_cast<std::size_t>(v)] = unit(rng) * 2.0 * M_PI;
    amp[static_cast<std::size_t>(v)] = 0.8 + 0.4 * unit(rng);
  }

  // all variables ride one latent oscillation; a variable's value only makes
  // sense jointly with the others
  auto base_value = [&](Eigen::Index t, Eigen::Index v, double latent_shift, double noise) {
    const double latent =
        std::sin(2.0 * M_PI * static_cast<double>(t) / latent_period + latent_shift);
    return amp[static_cast<std::size_t>(v)] *
               (latent + 0.35 * std::sin(2.0 * M_PI * static_cast<double>(t) / 29.0 +
                                         phase[static_cast<std::size_t>(v)])) +
           noise;
  };

  if (spec.base == "sinusoid") {
    for (Eigen::Index t = 0; t < n; ++t) {
      for (Eigen::Index v = 0; v < c; ++v) {
        frame.values(t, v) = base_value(t, v, 0.0, kNoise * gauss(rng));
      }
    }
  } else {  // random walk around a shared drift
    Eigen::VectorXd level = Eigen::VectorXd::Zero(c);
    for (Eigen::Index t = 0; t < n; ++t) {
      const double drift = 0.02 * gauss(rng);
      for (Eigen::Index v = 0; v < c; ++v) {
        level(v) += drift + 0.01 * gauss(rng);
        level(v) *= 0.999;  // keep the walk bounded
        frame.values(t, v) = level(v) + kNoise * gauss(rng);
      }
    }
  }

  for (const auto& inj : spec.injections) {
    for (Eigen::Index t = inj.start; t < inj.end; ++t) {
      frame.labels[static_cast<std::size_t>(t)] = 1;
      auto& gt = frame.gt_vars[t];
      for (Eigen::Index v : inj.vars) gt.insert(v);
    }
    switch (inj.kind) {
      case AnomalyKind::kSpike: {
        // high-frequency burst riding on the base signal
        for (Eigen::Index t = inj.start; t < inj.end; ++t) {
          for (Eigen::Index v : inj.vars) {
            const double sign = (t - inj.start) % 2 == 0 ? 1.0 : -1.0;
            frame.values(t, v) += sign * inj.magnitude * kNoise * (4.0 + 2.0 * unit(rng));
          }
        }
        break;
      }
      case AnomalyKind::kLevelShift: {
        for (Eigen::Index t = inj.start; t < inj.end; ++t) {
          for (Eigen::Index v : inj.vars) {
            frame.values(t, v) += inj.magnitude * 0.4;
          }
        }
        break;
      }
      case AnomalyKind::kCorrelationBreak: {
        // shift the variable's latent phase: its marginal shape is unchanged,
        // only the joint relationship with the other variables breaks
        for (Eigen::Index v : inj.vars) {
          const double shift = M_PI * (0.5 + 0.5 * unit(rng));
          for (Eigen::Index t = inj.start; t < inj.end; ++t) {
            frame.values(t, v) = base_value(t, v, shift, kNoise * gauss(rng));
          }
        }
        break;
      }
    }
  }

  frame.validate();
  return frame;
}

namespace {

SyntheticSpec spread_segments(Eigen::Index n, Eigen::Index c, unsigned long seed,
                              const std::vector<AnomalyKind>& kinds) {
  SyntheticSpec spec;
  spec.n = n;
  spec.c = c;
  spec.seed = seed;
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  // segment lengths scale with the series so the anomaly fraction stays put
  const Eigen::Index len_lo = std::max<Eigen::Index>(6, n / 31);
  const Eigen::Index len_hi = std::max<Eigen::Index>(len_lo + 2, n / 25);
  std::uniform_int_distribution<Eigen::Index> length_dist(len_lo, len_hi);
  std::uniform_int_distribution<Eigen::Index> var_dist(0, c - 1);

  const auto segments = static_cast<Eigen::Index>(kinds.size());
  const Eigen::Index slot = n / (segments + 1);
  for (Eigen::Index i = 0; i < segments; ++i) {
    Injection inj;
    inj.kind = kinds[static_cast<std::size_t>(i)];
    inj.start = slot * (i + 1) - len_hi / 3;
    inj.end = std::min(n, inj.start + length_dist(rng));
    inj.vars.insert(var_dist(rng));
    if (c > 1 && i % 2 == 1) {
      Eigen::Index second = var_dist(rng);
      while (inj.vars.count(second)) second = (second + 1) % c;
      inj.vars.insert(second);
    }
    inj.magnitude = inj.kind == AnomalyKind::kSpike ? 3.0 : 2.0;
    spec.injections.push_back(std::move(inj));
  }
  return spec;
}

}  // namespace

SyntheticSpec demo_spec(Eigen::Index n, Eigen::Index c, unsigned long seed) {
  return spread_segments(n, c, seed,
                         {AnomalyKind::kSpike, AnomalyKind::kLevelShift,
                          AnomalyKind::kCorrelationBreak, AnomalyKind::kCorrelationBreak,
                          AnomalyKind::kSpike, AnomalyKind::kLevelShift});
}

SyntheticSpec correlation_break_spec(Eigen::Index n, Eigen::Index c, unsigned long seed) {
  return spread_segments(n, c, seed,
                         {AnomalyKind::kCorrelationBreak, AnomalyKind::kCorrelationBreak,
                          AnomalyKind::kCorrelationBreak, AnomalyKind::kCorrelationBreak,
                          AnomalyKind::kCorrelationBreak, AnomalyKind::kCorrelationBreak});
}

}  // namespace mtfad::synth
