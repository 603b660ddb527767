#include "mtfad/run_config.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace mtfad {

void RunConfig::validate() const {
  if (window < 2) throw config_error("window must be >= 2");
  if (stride < 1) throw config_error("stride must be >= 1");
  if (alpha < 0.0 || alpha > 1.0) throw config_error("alpha must lie in [0, 1]");
  if (omega < 0.0 || omega > 1.0) throw config_error("omega must lie in [0, 1]");
  if (lambda < 0.0 || lambda > 1.0) throw config_error("lambda must lie in [0, 1]");
  if (bin_candidates.empty()) throw config_error("bin candidate set is empty");
  for (int q : bin_candidates) {
    if (q < 2) throw config_error("bin candidates must be >= 2");
  }
  if (weight_policy != "uniform" && weight_policy != "correlation") {
    throw config_error("unknown cross-weight policy: " + weight_policy);
  }
  if (anomaly_types < 1) throw config_error("anomaly type count must be >= 1");
  if (shapley_samples < 16) throw config_error("shapley samples must be >= 16");
  if (gradient_baselines < 1) throw config_error("gradient baselines must be >= 1");
  if (threads < 1) throw config_error("threads must be >= 1");
}

std::string RunConfig::to_json() const {
  nlohmann::json j;
  j["window"] = window;
  j["stride"] = stride;
  j["alpha"] = alpha;
  j["omega"] = omega;
  j["lambda"] = lambda;
  j["bin_candidates"] = bin_candidates;
  j["weight_policy"] = weight_policy;
  j["net"] = nlohmann::json::parse(net.to_json());
  j["anomaly_types"] = anomaly_types;
  j["shapley_cap"] = shapley_cap;
  j["shapley_samples"] = shapley_samples;
  j["gradient_baselines"] = gradient_baselines;
  j["seed"] = seed;
  j["threads"] = threads;
  return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("bad config JSON: ") + e.what());
  }
  RunConfig cfg;
  cfg.window = j.value("window", cfg.window);
  cfg.stride = j.value("stride", cfg.stride);
  cfg.alpha = j.value("alpha", cfg.alpha);
  cfg.omega = j.value("omega", cfg.omega);
  cfg.lambda = j.value("lambda", cfg.lambda);
  cfg.bin_candidates = j.value("bin_candidates", cfg.bin_candidates);
  cfg.weight_policy = j.value("weight_policy", cfg.weight_policy);
  if (j.contains("net")) cfg.net = model::ModelConfig::from_json(j.at("net").dump());
  cfg.anomaly_types = j.value("anomaly_types", cfg.anomaly_types);
  cfg.shapley_cap = j.value("shapley_cap", cfg.shapley_cap);
  cfg.shapley_samples = j.value("shapley_samples", cfg.shapley_samples);
  cfg.gradient_baselines = j.value("gradient_baselines", cfg.gradient_baselines);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.threads = j.value("threads", cfg.threads);
  cfg.net.window = cfg.window;
  cfg.net.seed = j.contains("net") && j.at("net").contains("seed") ? cfg.net.seed : cfg.seed;
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  if (path.empty()) return RunConfig{};
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  RunConfig cfg = from_json(buffer.str());
  cfg.validate();
  return cfg;
}

}  // namespace mtfad
