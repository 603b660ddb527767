// Command-line pipeline: synth, fit, convert, train, detect, explain,
// report, bench, eval. Each stage reads the previous stage's artifacts from
// the output directory and writes its own; exit codes are 0 success,
// 2 configuration, 3 data, 4 missing pipeline stage, 5 divergence.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mtfad/core.hpp"
#include "mtfad/errors.hpp"
#include "mtfad/eval.hpp"
#include "mtfad/explain.hpp"
#include "mtfad/model.hpp"
#include "mtfad/mvmtf.hpp"
#include "mtfad/run_config.hpp"
#include "mtfad/synth.hpp"
#include "mtfad/tensor.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mtfad;

namespace {

struct GlobalArgs {
  std::string config_path;
  std::string out_dir = "artifacts";
  std::optional<unsigned long> seed;
  std::optional<int> threads;
};

struct Paths {
  fs::path out;
  fs::path data() const { return out / "data.csv"; }
  fs::path labels() const { return out / "labels.txt"; }
  fs::path gt() const { return out / "gt.txt"; }
  fs::path synth_spec() const { return out / "synth_spec.json"; }
  fs::path transitions() const { return out / "transitions.json"; }
  fs::path transitions_blob() const { return out / "transitions.bin"; }
  fs::path converted() const { return out / "converted.json"; }
  fs::path converted_blob() const { return out / "converted.bin"; }
  fs::path checkpoint() const { return out / "checkpoint.json"; }
  fs::path checkpoint_blob() const { return out / "checkpoint.bin"; }
  fs::path detections() const { return out / "detections.json"; }
  fs::path explanations() const { return out / "explanations.json"; }
  fs::path types() const { return out / "types.json"; }
  fs::path reports() const { return out / "reports.json"; }
  fs::path metrics() const { return out / "metrics.json"; }
  fs::path bench() const { return out / "bench.json"; }
};

RunConfig effective_config(const GlobalArgs& args) {
  RunConfig cfg = RunConfig::load(args.config_path);
  if (args.seed) {
    cfg.seed = *args.seed;
    cfg.net.seed = *args.seed;
  }
  if (args.threads) cfg.threads = *args.threads;
  cfg.net.window = cfg.window;
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot write " + path.string());
  out << text;
  if (text.empty() || text.back() != '\n') out << '\n';
}

json read_json(const fs::path& path, const char* stage) {
  std::ifstream in(path);
  if (!in) {
    throw pipeline_error(std::string("missing artifact for stage '") + stage +
                         "': " + path.string() + " (run the earlier stage first)");
  }
  json j;
  in >> j;
  return j;
}

void require_artifact(const fs::path& path, const char* producer) {
  if (!fs::exists(path)) {
    throw pipeline_error("missing artifact " + path.string() + " (run '" + producer +
                         "' first)");
  }
}

core::SeriesFrame load_frame(const Paths& paths, bool need_labels) {
  require_artifact(paths.data(), "synth");
  const std::string labels = fs::exists(paths.labels()) ? paths.labels().string() : "";
  const std::string gt = fs::exists(paths.gt()) ? paths.gt().string() : "";
  if (need_labels && labels.empty()) {
    throw pipeline_error("labels file " + paths.labels().string() + " is required here");
  }
  return core::load_csv(paths.data().string(), labels, gt);
}

Eigen::ArrayXd flat_rowmajor(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd t = m.transpose();
  return Eigen::Map<const Eigen::ArrayXd>(t.data(), m.size());
}

// ---- fit artifacts ---------------------------------------------------------

struct FitArtifacts {
  model::Detector detector;  // bins, transitions, scaler, alpha, weights
  Eigen::Index stride = 1;
  unsigned long seed = 0;
};

FitArtifacts load_fit(const Paths& paths, const RunConfig& cfg) {
  require_artifact(paths.transitions(), "fit");
  require_artifact(paths.transitions_blob(), "fit");
  auto loaded = mvmtf::load_transition_model(paths.transitions().string(),
                                             paths.transitions_blob().string());
  const json extra =
      json::parse(mvmtf::load_transition_extra(paths.transitions().string(), "pipeline"));

  FitArtifacts fit;
  fit.detector.bins = std::move(loaded.bins);
  fit.detector.trans = std::move(loaded.trans);
  fit.detector.alpha = loaded.alpha;
  const auto lo = extra.at("scaler_lo").get<std::vector<double>>();
  const auto span = extra.at("scaler_span").get<std::vector<double>>();
  fit.detector.scaler.lo = Eigen::Map<const Eigen::VectorXd>(lo.data(), lo.size());
  fit.detector.scaler.span = Eigen::Map<const Eigen::VectorXd>(span.data(), span.size());
  const auto weights = extra.at("cross_weights").get<std::vector<std::vector<double>>>();
  const auto c = static_cast<Eigen::Index>(weights.size());
  fit.detector.cross_weights.resize(c, c);
  for (Eigen::Index u = 0; u < c; ++u) {
    for (Eigen::Index k = 0; k < c; ++k) {
      fit.detector.cross_weights(u, k) = weights[u][k];
    }
  }
  fit.stride = extra.at("stride").get<Eigen::Index>();
  fit.seed = extra.at("seed").get<unsigned long>();
  fit.detector.cfg = cfg.net;
  fit.detector.cfg.window = extra.at("window").get<Eigen::Index>();
  fit.detector.cfg.channels = c;
  return fit;
}

model::MultimodalNet load_net(const Paths& paths, FitArtifacts& fit) {
  require_artifact(paths.checkpoint(), "train");
  require_artifact(paths.checkpoint_blob(), "train");
  fit.detector.cfg = model::ModelConfig::from_json(
      tensor::load_checkpoint_extra(paths.checkpoint().string(), "model"));
  model::MultimodalNet net(fit.detector.cfg);
  tensor::load_checkpoint(net.params(), paths.checkpoint().string(),
                          paths.checkpoint_blob().string());
  return net;
}

// Converts normalized windows into flat batch rows, using the cache when its
// geometry matches.
struct ConvertedWindows {
  std::vector<Eigen::ArrayXd> numeric;
  std::vector<Eigen::ArrayXd> image;
  std::vector<int> targets;
  std::vector<Eigen::Index> starts;
};

ConvertedWindows convert_windows(const FitArtifacts& fit, const core::SeriesFrame& frame,
                                 Eigen::Index stride, int threads, const Paths* cache) {
  const auto& det = fit.detector;
  core::SeriesFrame normalized = frame;
  normalized.values = det.scaler.apply(frame.values);
  const auto wins = core::windows(normalized, det.cfg.window, stride);
  const Eigen::Index c = det.cfg.channels;
  const Eigen::Index w = det.cfg.window;

  ConvertedWindows out;
  out.numeric.resize(wins.size());
  out.image.resize(wins.size());
  for (const auto& win : wins) {
    out.targets.push_back(win.label);
    out.starts.push_back(win.start);
  }

  bool cached = false;
  if (cache && fs::exists(cache->converted()) && fs::exists(cache->converted_blob())) {
    const json manifest = read_json(cache->converted(), "convert");
    if (manifest.at("window").get<Eigen::Index>() == w &&
        manifest.at("stride").get<Eigen::Index>() == stride &&
        manifest.at("count").get<std::size_t>() == wins.size() &&
        manifest.at("channels").get<Eigen::Index>() == c) {
      std::ifstream blob(cache->converted_blob(), std::ios::binary);
      for (std::size_t i = 0; i < wins.size() && blob; ++i) {
        Eigen::ArrayXd arr(c * w);
        for (Eigen::Index e = 0; e < c * w; ++e) {
          float f = 0.0f;
          blob.read(reinterpret_cast<char*>(&f), sizeof(float));
          arr(e) = static_cast<double>(f);
        }
        out.image[i] = std::move(arr);
      }
      cached = static_cast<bool>(std::ifstream(cache->converted_blob(), std::ios::binary));
      cached = true;
    }
  }

  auto fill_range = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      out.numeric[i] = flat_rowmajor(wins[i].numeric);
      if (!cached) {
        const Eigen::MatrixXd img = det.cfg.use_image_modality
                                        ? model::window_image_channels(det, wins[i])
                                        : wins[i].numeric;
        out.image[i] = flat_rowmajor(img);
      }
    }
  };
  if (threads > 1 && wins.size() > 1) {
    std::vector<std::thread> pool;
    const std::size_t chunk =
        (wins.size() + static_cast<std::size_t>(threads) - 1) / static_cast<std::size_t>(threads);
    for (int t = 0; t < threads; ++t) {
      const std::size_t lo = std::min(wins.size(), static_cast<std::size_t>(t) * chunk);
      const std::size_t hi = std::min(wins.size(), lo + chunk);
      if (lo < hi) pool.emplace_back(fill_range, lo, hi);
    }
    for (auto& th : pool) th.join();
  } else {
    fill_range(0, wins.size());
  }
  return out;
}

// ---- subcommands -----------------------------------------------------------

struct SynthArgs {
  Eigen::Index n = 2000;
  Eigen::Index c = 5;
  std::string preset = "demo";  // demo | correlation-break | file
  std::string spec_path;
};

void cmd_synth(const GlobalArgs& global, const SynthArgs& args) {
  const RunConfig cfg = effective_config(global);
  Paths paths{fs::path(global.out_dir)};
  fs::create_directories(paths.out);

  synth::SyntheticSpec spec;
  if (!args.spec_path.empty()) {
    std::ifstream in(args.spec_path);
    if (!in) throw config_error("cannot open spec file: " + args.spec_path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    spec = synth::SyntheticSpec::from_json(buffer.str());
  } else if (args.preset == "demo") {
    spec = synth::demo_spec(args.n, args.c, cfg.seed);
  } else if (args.preset == "correlation-break") {
    spec = synth::correlation_break_spec(args.n, args.c, cfg.seed);
  } else {
    throw config_error("unknown preset: " + args.preset);
  }

  const core::SeriesFrame frame = synth::generate(spec);
  core::save_csv(frame, paths.data().string(), paths.labels().string(), paths.gt().string());
  write_text(paths.synth_spec(), spec.to_json());
  long anomalous = 0;
  for (int y : frame.labels) anomalous += y;
  std::cout << "synth: wrote " << paths.data().string() << " (" << frame.length() << " x "
            << frame.variables() << ", " << anomalous << " anomalous points, seed " << spec.seed
            << ")\n";
}

void cmd_fit(const GlobalArgs& global) {
  const RunConfig cfg = effective_config(global);
  Paths paths{fs::path(global.out_dir)};
  fs::create_directories(paths.out);
  const core::SeriesFrame frame = load_frame(paths, /*need_labels=*/false);

  auto [normalized, scaler] = core::min_max_normalize(frame);
  const core::BinModel bins = core::fit_bins(normalized, cfg.bin_candidates);
  const auto trans = mvmtf::fit_transition_model(normalized, bins);
  const Eigen::MatrixXd weights = cfg.weight_policy == "correlation"
                                      ? mvmtf::correlation_cross_weights(normalized)
                                      : mvmtf::uniform_cross_weights(frame.variables());

  json extra;
  extra["scaler_lo"] = std::vector<double>(scaler.lo.data(), scaler.lo.data() + scaler.lo.size());
  extra["scaler_span"] =
      std::vector<double>(scaler.span.data(), scaler.span.data() + scaler.span.size());
  std::vector<std::vector<double>> weight_rows;
  for (Eigen::Index u = 0; u < weights.rows(); ++u) {
    std::vector<double> row;
    for (Eigen::Index k = 0; k < weights.cols(); ++k) row.push_back(weights(u, k));
    weight_rows.push_back(std::move(row));
  }
  extra["cross_weights"] = weight_rows;
  extra["window"] = cfg.window;
  extra["stride"] = cfg.stride;
  extra["seed"] = cfg.seed;
  extra["bin_candidates"] = cfg.bin_candidates;

  mvmtf::save_transition_model(trans, bins, cfg.alpha, cfg.weight_policy,
                               paths.transitions().string(), paths.transitions_blob().string(),
                               "pipeline", extra.dump());
  std::cout << "fit: " << frame.variables() << " variables, bin counts";
  for (const auto& row : bins.rows) std::cout << ' ' << row.bin_count();
  std::cout << ", wrote " << paths.transitions().string() << "\n";
}

void cmd_convert(const GlobalArgs& global) {
  const RunConfig cfg = effective_config(global);
  Paths paths{fs::path(global.out_dir)};
  FitArtifacts fit = load_fit(paths, cfg);
  const core::SeriesFrame frame = load_frame(paths, /*need_labels=*/false);
  const ConvertedWindows converted =
      convert_windows(fit, frame, fit.stride, cfg.threads, nullptr);

  const Eigen::Index c = fit.detector.cfg.channels;
  const Eigen::Index w = fit.detector.cfg.window;
  std::ofstream blob(paths.converted_blob(), std::ios::binary);
  if (!blob) throw data_error("cannot write " + paths.converted_blob().string());
  for (const auto& img : converted.image) {
    for (Eigen::Index e = 0; e < img.size(); ++e) {
      const float f = static_cast<float>(img(e));
      blob.write(reinterpret_cast<const char*>(&f), sizeof(float));
    }
  }
  json manifest;
  manifest["window"] = w;
  manifest["stride"] = fit.stride;
  manifest["count"] = converted.image.size();
  manifest["channels"] = c;
  manifest["starts"] = converted.starts;
  manifest["labels"] = converted.targets;
  manifest["seed"] = cfg.seed;
  write_text(paths.converted(), manifest.dump(2));
  std::cout << "convert: " << converted.image.size() << " windows -> "
            << paths.converted_blob().string() << "\n";
}

void cmd_train(const GlobalArgs& global) {
  const RunConfig cfg = effective_config(global);
  Paths paths{fs::path(global.out_dir)};
  FitArtifacts fit = load_fit(paths, cfg);
  const core::SeriesFrame frame = load_frame(paths, /*need_labels=*/true);

  fit.detector.cfg = cfg.net;
  fit.detector.cfg.window = fit.detector.cfg.window > 0 ? fit.detector.cfg.window : cfg.window;
  fit.detector.cfg.channels = frame.variables();
  fit.detector.cfg.validate();

  const ConvertedWindows data = convert_windows(fit, frame, fit.stride, cfg.threads, &paths);
  Eigen::VectorXd class_weights;
  if (fit.detector.cfg.class_weights.size() == 2) {
    class_weights = Eigen::Map<const Eigen::VectorXd>(fit.detector.cfg.class_weights.data(), 2);
  } else {
    class_weights = model::inverse_frequency_weights(data.targets);
  }
  const auto batches =
      model::make_batches(data.numeric, data.image, data.targets, fit.detector.cfg.channels,
                          fit.detector.cfg.window, fit.detector.cfg.batch, cfg.seed);

  model::MultimodalNet net(fit.detector.cfg);
  std::vector<double> epoch_losses;
  for (int epoch = 0; epoch < fit.detector.cfg.epochs; ++epoch) {
    const auto losses = net.train_epoch(batches, class_weights);
    double mean = 0.0;
    for (double l : losses) mean += l;
    epoch_losses.push_back(mean / static_cast<double>(losses.size()));
    std::cout << "train: epoch " << epoch + 1 << "/" << fit.detector.cfg.epochs
              << " mean loss " << epoch_losses.back() << "\n";
  }

  json model_extra = json::parse(fit.detector.cfg.to_json());
  model_extra["epoch_losses"] = epoch_losses;
  model_extra["class_weight_values"] =
      std::vector<double>{class_weights(0), class_weights(1)};
  tensor::save_checkpoint(net.params(), paths.checkpoint().string(),
                          paths.checkpoint_blob().string(), "model", model_extra.dump());
  std::cout << "train: wrote " << paths.checkpoint().string() << "\n";
}

void cmd_detect(const GlobalArgs& global, Eigen::Index stride_flag) {
  const RunConfig cfg = effective_config(global);
  Paths paths{fs::path(global.out_dir)};
  FitArtifacts fit = load_fit(paths, cfg);
  model::MultimodalNet net = load_net(paths, fit);
  const core::SeriesFrame frame = load_frame(paths, /*need_labels=*/false);

  const Eigen::Index stride = stride_flag > 0 ? stride_flag : 1;
  const model::Detection detection =
      model::predict(fit.detector, net, frame, stride, cfg.threads);

  json out;
  out["seed"] = cfg.seed;
  out["stride"] = stride;
  out["window"] = fit.detector.cfg.window;
  out["window_starts"] = detection.window_starts;
  out["window_scores"] = detection.window_scores;
  out["window_labels"] = detection.window_labels;
  out["point_scores"] = detection.point_scores;
  out["point_labels"] = detection.point_labels;
  write_text(paths.detections(), out.dump());
  long flagged = 0;
  for (int y : detection.point_labels) flagged += y;
  std::cout << "detect: " << flagged << " of " << detection.point_labels.size()
            << " points flagged, wrote " << paths.detections().string() << "\n";
}

struct Event {
  Eigen::Index begin = 0;
  Eigen::Index end = 0;        // exclusive
  Eigen::Index timestamp = 0;  // highest-scoring point
  std::size_t window_index = 0;
  double score = 0.0;
};

std::vector<Event> detected_events(const json& detections) {
  const auto point_labels = detections.at("point_labels").get<std::vector<int>>();
  const auto point_scores = detections.at("point_scores").get<std::vector<double>>();
  const auto window_starts = detections.at("window_starts").get<std::vector<Eigen::Index>>();
  const auto window_scores = detections.at("window_scores").get<std::vector<double>>();
  const auto window = detections.at("window").get<Eigen::Index>();

  std::vector<Event> events;
  std::size_t t = 0;
  while (t < point_labels.size()) {
    if (!point_labels[t]) {
      ++t;
      continue;
    }
    Event event;
    event.begin = static_cast<Eigen::Index>(t);
    while (t < point_labels.size() && point_labels[t]) ++t;
    event.end = static_cast<Eigen::Index>(t);
    event.timestamp = event.begin;
    for (Eigen::Index p = event.begin; p < event.end; ++p) {
      if (point_scores[static_cast<std::size_t>(p)] >
          point_scores[static_cast<std::size_t>(event.timestamp)]) {
        event.timestamp = p;
      }
    }
    // representative window: highest score among windows overlapping the event
    double best = -1.0;
    for (std::size_t i = 0; i < window_starts.size(); ++i) {
      const Eigen::Index lo = window_starts[i];
      const Eigen::Index hi = lo + window;
      if (lo < event.end && event.begin < hi && window_scores[i] > best) {
        best = window_scores[i];
        event.window_index = i;
      }
    }
    event.score = best;
    events.push_back(event);
  }
  return events;
}

void cmd_explain(const GlobalArgs& global) {
  const RunConfig cfg = effective_config(global);
  Paths paths{fs::path(global.out_dir)};
  FitArtifacts fit = load_fit(paths, cfg);
  model::MultimodalNet net = load_net(paths, fit);
  const core::SeriesFrame frame = load_frame(paths, /*need_labels=*/false);
  const json detections = read_json(paths.detections(), "explain");

  const Eigen::Index c = fit.detector.cfg.channels;
  const Eigen::Index w = fit.detector.cfg.window;
  core::SeriesFrame normalized = frame;
  normalized.values = fit.detector.scaler.apply(frame.values);

  const auto stride = detections.at("stride").get<Eigen::Index>();
  const auto wins = core::windows(normalized, w, stride);
  const auto window_labels = detections.at("window_labels").get<std::vector<int>>();
  const std::vector<Event> events = detected_events(detections);

  // normal pool: windows with no flagged point, per the detector itself
  const auto point_labels = detections.at("point_labels").get<std::vector<int>>();
  std::vector<std::size_t> normal_windows;
  for (std::size_t i = 0; i < wins.size(); ++i) {
    bool clean = true;
    for (Eigen::Index t = wins[i].start; t < wins[i].start + w && clean; ++t) {
      clean = point_labels[static_cast<std::size_t>(t)] == 0;
    }
    if (clean) normal_windows.push_back(i);
  }
  if (events.empty()) {
    json out;
    out["seed"] = cfg.seed;
    out["omega"] = cfg.omega;
    out["events"] = json::array();
    write_text(paths.explanations(), out.dump(2));
    std::cout << "explain: no anomalies detected, nothing to explain\n";
    return;
  }
  if (normal_windows.empty()) {
    throw data_error("no normal reference windows available for localization");
  }

  // coalition baseline: per-variable mean over the normal pool
  Eigen::MatrixXd mean_window = Eigen::MatrixXd::Zero(c, w);
  for (std::size_t i : normal_windows) mean_window += wins[i].numeric;
  mean_window /= static_cast<double>(normal_windows.size());

  // gradient baselines: seeded sample of normal windows, converted
  std::mt19937_64 rng(cfg.seed ^ 0xabcdef123456ULL);
  std::vector<Eigen::MatrixXd> gradient_baselines;
  for (int b = 0; b < cfg.gradient_baselines; ++b) {
    const std::size_t pick = normal_windows[rng() % normal_windows.size()];
    gradient_baselines.push_back(model::window_image_channels(fit.detector, wins[pick]));
  }

  // normal reference segment: the cleanest window by detector score
  const auto window_scores = detections.at("window_scores").get<std::vector<double>>();
  std::size_t reference = normal_windows.front();
  for (std::size_t i : normal_windows) {
    if (window_scores[i] < window_scores[reference]) reference = i;
  }
  const Eigen::MatrixXd reference_numeric = wins[reference].numeric;

  auto probability = [&](const Eigen::MatrixXd& numeric) {
    core::Window probe;
    probe.start = 0;
    probe.numeric = numeric;
    const Eigen::MatrixXd image = fit.detector.cfg.use_image_modality
                                      ? model::window_image_channels(fit.detector, probe)
                                      : numeric;
    model::MultimodalBatch batch;
    batch.batch = 1;
    batch.numeric = flat_rowmajor(numeric);
    batch.image = flat_rowmajor(image);
    batch.targets = {0};
    return net.predict_batch(batch)(0);
  };

  json events_json = json::array();
  Eigen::MatrixXd embeddings(static_cast<Eigen::Index>(events.size()), cfg.net.embed_dim);

  for (std::size_t e = 0; e < events.size(); ++e) {
    const Event& event = events[e];
    const core::Window& win = wins[event.window_index];
    const Eigen::MatrixXd image = fit.detector.cfg.use_image_modality
                                      ? model::window_image_channels(fit.detector, win)
                                      : win.numeric;

    // numeric-modality Shapley values via coalition masking
    auto coalition = [&](const std::vector<bool>& present) {
      Eigen::MatrixXd masked = win.numeric;
      for (Eigen::Index v = 0; v < c; ++v) {
        if (!present[static_cast<std::size_t>(v)]) masked.row(v) = mean_window.row(v);
      }
      return probability(masked);
    };
    const Eigen::VectorXd s_kernel = explain::shapley_attribution(
        coalition, c, cfg.shapley_cap, cfg.shapley_samples, cfg.seed + e);

    // image-modality gradient attributions, normalized for fusion
    const Eigen::VectorXd s_gradient_raw = explain::gradient_attribution(
        explain::anomaly_image_score(net, win.numeric), image, gradient_baselines);
    const Eigen::VectorXd s_gradient = explain::normalize_max_abs(s_gradient_raw);

    explain::AttributionSet attr = explain::fuse_attributions(s_kernel, s_gradient, cfg.omega);

    auto resolves = [&](Eigen::Index prefix) {
      Eigen::MatrixXd replaced = win.numeric;
      for (Eigen::Index r = 0; r < prefix; ++r) {
        const Eigen::Index v = attr.ranking[static_cast<std::size_t>(r)];
        replaced.row(v) = reference_numeric.row(v);
      }
      return probability(replaced) <= 0.5;
    };
    const Eigen::Index k = explain::find_critical_point(resolves, c);
    const double delta = (k >= 1 && k < c) ? explain::plateau_radius(attr, k)
                                           : std::numeric_limits<double>::infinity();

    // fused embedding for typing
    {
      tensor::Tape tape;
      tensor::DiffArray numeric_in = tape.input({1, c, w}, flat_rowmajor(win.numeric));
      tensor::DiffArray image_in = tape.input({1, c, w}, flat_rowmajor(image));
      auto fwd = net.forward(tape, numeric_in, image_in);
      embeddings.row(static_cast<Eigen::Index>(e)) = fwd.fused.value().matrix().transpose();
    }

    json record;
    record["timestamp"] = event.timestamp;
    record["segment"] = {event.begin, event.end};
    record["window_start"] = win.start;
    record["score"] = event.score;
    record["s_kernel"] = std::vector<double>(s_kernel.data(), s_kernel.data() + c);
    record["s_gradient"] = std::vector<double>(s_gradient.data(), s_gradient.data() + c);
    record["fused"] = std::vector<double>(attr.fused.data(), attr.fused.data() + c);
    record["ranking"] = attr.ranking;
    record["k"] = k;
    record["L"] = attr.lipschitz;
    record["delta"] = std::isinf(delta) ? json() : json(delta);
    record["omega"] = cfg.omega;
    events_json.push_back(std::move(record));
  }

  // anomaly typing on the fused embeddings
  const int type_count = std::min<int>(cfg.anomaly_types, static_cast<int>(events.size()));
  explain::AnomalyTypeModel labels = explain::default_type_labels();
  if (type_count != 3) {
    labels.type_names.clear();
    labels.recommendations.clear();
    for (int t = 0; t < type_count; ++t) {
      labels.type_names.push_back("type-" + std::to_string(t + 1));
      labels.recommendations.push_back({"inspect the ranked variables",
                                        "compare the segment against recent normal data"});
    }
  }
  const explain::AnomalyTypeModel types = explain::fit_anomaly_types(
      embeddings, type_count, labels.type_names, labels.recommendations, cfg.seed);
  for (std::size_t e = 0; e < events.size(); ++e) {
    const int type =
        explain::classify_anomaly_type(types, embeddings.row(static_cast<Eigen::Index>(e)));
    events_json[e]["type"] = type;
    events_json[e]["type_name"] = types.type_names[static_cast<std::size_t>(type)];
    events_json[e]["recommendations"] = types.recommendations[static_cast<std::size_t>(type)];
  }

  json out;
  out["seed"] = cfg.seed;
  out["omega"] = cfg.omega;
  out["type_count"] = type_count;
  out["events"] = events_json;
  write_text(paths.explanations(), out.dump(2));

  json types_json;
  types_json["type_names"] = types.type_names;
  types_json["recommendations"] = types.recommendations;
  std::vector<std::vector<double>> centroid_rows;
  for (Eigen::Index r = 0; r < types.centroids.rows(); ++r) {
    std::vector<double> row;
    for (Eigen::Index k = 0; k < types.centroids.cols(); ++k) row.push_back(types.centroids(r, k));
    centroid_rows.push_back(std::move(row));
  }
  types_json["centroids"] = centroid_rows;
  types_json["seed"] = cfg.seed;
  write_text(paths.types(), types_json.dump(2));
  std::cout << "explain: " << events.size() << " anomalies explained, wrote "
            << paths.explanations().string() << "\n";
  (void)window_labels;
}

void cmd_report(const GlobalArgs& global, const std::string& dataset_name) {
  const RunConfig cfg = effective_config(global);
  Paths paths{fs::path(global.out_dir)};
  const json explanations = read_json(paths.explanations(), "report");

  json reports = json::array();
  std::size_t index = 0;
  for (const auto& event : explanations.at("events")) {
    explain::ReportInput input;
    input.dataset = dataset_name.empty() ? "series" : dataset_name;
    input.timestamp = event.at("timestamp").get<Eigen::Index>();
    input.window_start = event.at("window_start").get<Eigen::Index>();
    input.score = event.at("score").get<double>();
    const auto s_kernel = event.at("s_kernel").get<std::vector<double>>();
    const auto s_gradient = event.at("s_gradient").get<std::vector<double>>();
    input.attribution = explain::fuse_attributions(
        Eigen::Map<const Eigen::VectorXd>(s_kernel.data(), s_kernel.size()),
        Eigen::Map<const Eigen::VectorXd>(s_gradient.data(), s_gradient.size()),
        event.at("omega").get<double>());
    input.critical_k = event.at("k").get<Eigen::Index>();
    input.plateau = event.at("delta").is_null() ? std::numeric_limits<double>::infinity()
                                                : event.at("delta").get<double>();
    input.type_name = event.at("type_name").get<std::string>();
    input.recommendations = event.at("recommendations").get<std::vector<std::string>>();

    const explain::Report report = explain::render_report(input);
    const fs::path text_path = paths.out / ("report_" + std::to_string(index) + ".txt");
    write_text(text_path, report.text);
    reports.push_back(json::parse(report.record_json));
    ++index;
  }
  json out;
  out["seed"] = cfg.seed;
  out["reports"] = reports;
  write_text(paths.reports(), out.dump(2));
  std::cout << "report: wrote " << index << " reports under " << paths.out.string() << "\n";
}

void cmd_bench(const GlobalArgs& global, std::vector<Eigen::Index> sizes, Eigen::Index c,
               int repetitions) {
  const RunConfig cfg = effective_config(global);
  Paths paths{fs::path(global.out_dir)};
  fs::create_directories(paths.out);
  if (sizes.empty()) sizes = {1000, 2000, 4000, 8000};
  const eval::BenchResult result = eval::bench_conversion(sizes, c, repetitions, cfg.seed);
  json out = json::parse(result.to_json());
  out["seed"] = cfg.seed;
  out["variables"] = c;
  out["repetitions"] = repetitions;
  write_text(paths.bench(), out.dump(2));
  std::cout << result.table();
  std::cout << "bench: wrote " << paths.bench().string() << "\n";
}

void cmd_eval(const GlobalArgs& global, bool with_kl, const std::string& toy_ranking,
              const std::string& toy_gt) {
  const RunConfig cfg = effective_config(global);
  Paths paths{fs::path(global.out_dir)};

  // standalone ranked-list scoring mode
  if (!toy_ranking.empty() || !toy_gt.empty()) {
    if (toy_ranking.empty() || toy_gt.empty()) {
      throw config_error("--ranking and --gt-set must be given together");
    }
    std::vector<Eigen::Index> ranking;
    for (const auto& tok : CLI::detail::split(toy_ranking, ',')) {
      ranking.push_back(std::stol(tok));
    }
    std::set<Eigen::Index> gt;
    for (const auto& tok : CLI::detail::split(toy_gt, ',')) gt.insert(std::stol(tok));
    std::cout << "Hit@100% = " << eval::hit_at(ranking, gt, 100.0) << "\n";
    std::cout << "Hit@150% = " << eval::hit_at(ranking, gt, 150.0) << "\n";
    std::cout << "NDCG@100% = " << eval::ndcg_at(ranking, gt, 100.0) << "\n";
    std::cout << "NDCG@150% = " << eval::ndcg_at(ranking, gt, 150.0) << "\n";
    return;
  }

  const core::SeriesFrame frame = load_frame(paths, /*need_labels=*/true);
  const json detections = read_json(paths.detections(), "eval");
  const auto point_labels = detections.at("point_labels").get<std::vector<int>>();
  const eval::DetectionMetrics metrics = eval::detection_metrics(point_labels, frame.labels);

  json out;
  out["seed"] = cfg.seed;
  out["detection"] = {{"tp", metrics.tp},         {"fp", metrics.fp},
                      {"fn", metrics.fn},         {"tn", metrics.tn},
                      {"precision", metrics.precision}, {"recall", metrics.recall},
                      {"f1", metrics.f1},         {"f1_pa", metrics.f1_pa}};
  std::cout << "precision " << metrics.precision << "  recall " << metrics.recall << "  F1 "
            << metrics.f1 << "  F1_PA " << metrics.f1_pa << "\n";

  // interpretation metrics against the ground-truth variable sets
  if (!frame.gt_vars.empty() && fs::exists(paths.explanations())) {
    const json explanations = read_json(paths.explanations(), "eval");
    double hit100 = 0, hit150 = 0, ndcg100 = 0, ndcg150 = 0;
    int scored = 0, skipped = 0;
    for (const auto& event : explanations.at("events")) {
      const auto ranking = event.at("ranking").get<std::vector<Eigen::Index>>();
      const auto segment = event.at("segment").get<std::vector<Eigen::Index>>();
      std::set<Eigen::Index> gt;
      for (Eigen::Index t = segment[0]; t < segment[1]; ++t) {
        const auto it = frame.gt_vars.find(t);
        if (it != frame.gt_vars.end()) gt.insert(it->second.begin(), it->second.end());
      }
      if (gt.empty()) {
        ++skipped;
        continue;
      }
      hit100 += eval::hit_at(ranking, gt, 100.0);
      hit150 += eval::hit_at(ranking, gt, 150.0);
      ndcg100 += eval::ndcg_at(ranking, gt, 100.0);
      ndcg150 += eval::ndcg_at(ranking, gt, 150.0);
      ++scored;
    }
    if (scored > 0) {
      out["interpretation"] = {{"hit@100", hit100 / scored},
                               {"hit@150", hit150 / scored},
                               {"ndcg@100", ndcg100 / scored},
                               {"ndcg@150", ndcg150 / scored},
                               {"scored", scored},
                               {"skipped", skipped}};
      std::cout << "Hit@100% " << hit100 / scored << "  Hit@150% " << hit150 / scored
                << "  NDCG@100% " << ndcg100 / scored << "  NDCG@150% " << ndcg150 / scored
                << "  (" << scored << " scored, " << skipped << " skipped)\n";
    }
  }

  if (with_kl) {
    const eval::KlResult raw = eval::kl_separability(frame, eval::Representation::kRaw, cfg.alpha);
    const eval::KlResult converted =
        eval::kl_separability(frame, eval::Representation::kMvmtf, cfg.alpha);
    out["kl"] = {{"raw", raw.aggregate}, {"mvmtf", converted.aggregate}};
    std::cout << "KL raw " << raw.aggregate << "  KL mvmtf " << converted.aggregate << "\n";
  }

  write_text(paths.metrics(), out.dump(2));
  std::cout << "eval: wrote " << paths.metrics().string() << "\n";
}

void emit_error(const char* category, const std::string& message) {
  json record;
  record["error"] = {{"category", category}, {"message", message}};
  std::cerr << record.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multivariate time-series anomaly detection with Markov transition fields"};
  app.require_subcommand(1);

  GlobalArgs global;
  unsigned long seed_flag = 0;
  int threads_flag = 0;
  app.add_option("--config", global.config_path, "JSON configuration file");
  app.add_option("--out-dir", global.out_dir, "artifact directory (default: artifacts)");
  auto* seed_opt = app.add_option("--seed", seed_flag, "override the configured seed");
  auto* threads_opt = app.add_option("--threads", threads_flag, "worker threads for conversion");

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "generate a labeled synthetic series");
  synth_cmd->add_option("--n", synth_args.n, "series length");
  synth_cmd->add_option("--c", synth_args.c, "variable count");
  synth_cmd->add_option("--preset", synth_args.preset, "demo | correlation-break");
  synth_cmd->add_option("--spec", synth_args.spec_path, "explicit injection spec (JSON)");

  auto* fit_cmd = app.add_subcommand("fit", "fit bins and pairwise transition matrices");
  auto* convert_cmd = app.add_subcommand("convert", "cache per-window image channels");
  auto* train_cmd = app.add_subcommand("train", "train the multimodal classifier");

  Eigen::Index detect_stride = 1;
  auto* detect_cmd = app.add_subcommand("detect", "score windows and points");
  detect_cmd->add_option("--stride", detect_stride, "detection stride (default 1)");

  auto* explain_cmd = app.add_subcommand("explain", "attribute detected anomalies to variables");

  std::string dataset_name;
  auto* report_cmd = app.add_subcommand("report", "render anomaly reports");
  report_cmd->add_option("--dataset", dataset_name, "dataset name shown in reports");

  std::vector<Eigen::Index> bench_sizes;
  Eigen::Index bench_c = 4;
  int bench_reps = 3;
  auto* bench_cmd = app.add_subcommand("bench", "time sparse vs dense conversion");
  bench_cmd->add_option("--sizes", bench_sizes, "series lengths to time");
  bench_cmd->add_option("--c", bench_c, "variable count");
  bench_cmd->add_option("--reps", bench_reps, "repetitions per size");

  bool eval_kl = false;
  std::string toy_ranking, toy_gt;
  auto* eval_cmd = app.add_subcommand("eval", "detection and interpretation metrics");
  eval_cmd->add_flag("--kl", eval_kl, "add the raw-vs-converted KL diagnostic");
  eval_cmd->add_option("--ranking", toy_ranking, "score a comma-separated ranking directly");
  eval_cmd->add_option("--gt-set", toy_gt, "ground-truth variable set for --ranking");

  CLI11_PARSE(app, argc, argv);
  if (!seed_opt->empty()) global.seed = seed_flag;
  if (!threads_opt->empty()) global.threads = threads_flag;

  try {
    if (synth_cmd->parsed()) cmd_synth(global, synth_args);
    if (fit_cmd->parsed()) cmd_fit(global);
    if (convert_cmd->parsed()) cmd_convert(global);
    if (train_cmd->parsed()) cmd_train(global);
    if (detect_cmd->parsed()) cmd_detect(global, detect_stride);
    if (explain_cmd->parsed()) cmd_explain(global);
    if (report_cmd->parsed()) cmd_report(global, dataset_name);
    if (bench_cmd->parsed()) cmd_bench(global, bench_sizes, bench_c, bench_reps);
    if (eval_cmd->parsed()) cmd_eval(global, eval_kl, toy_ranking, toy_gt);
  } catch (const config_error& e) {
    emit_error("config", e.what());
    return kExitConfig;
  } catch (const data_error& e) {
    emit_error("data", e.what());
    return kExitData;
  } catch (const pipeline_error& e) {
    emit_error("pipeline", e.what());
    return kExitPipeline;
  } catch (const divergence_error& e) {
    emit_error("divergence", e.what());
    return kExitDivergence;
  } catch (const std::exception& e) {
    emit_error("internal", e.what());
    return 1;
  }
  return kExitOk;
}
