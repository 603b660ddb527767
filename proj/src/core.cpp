#include "mtfad/core.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace mtfad::core {

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    std::size_t next = line.find(sep, pos);
    if (next == std::string::npos) {
      out.push_back(line.substr(pos));
      break;
    }
    out.push_back(line.substr(pos, next - pos));
    pos = next + 1;
  }
  return out;
}

double parse_cell(const std::string& cell, Eigen::Index row, Eigen::Index col) {
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
  while (end > begin && (end[-1] == ' ' || end[-1] == '\t' || end[-1] == '\r')) --end;
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc{} || ptr != end) {
    throw data_error("non-numeric cell at row " + std::to_string(row) + ", column " +
                     std::to_string(col));
  }
  return value;
}

std::string chomp(std::string line) {
  while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
  return line;
}

}  // namespace

void SeriesFrame::validate() const {
  if (length() < 2 || variables() < 1) {
    throw data_error("series must have n >= 2 rows and c >= 1 columns");
  }
  if (!values.allFinite()) throw data_error("series contains non-finite values");
  if (!labels.empty()) {
    if (static_cast<Eigen::Index>(labels.size()) != length()) {
      throw data_error("label length " + std::to_string(labels.size()) +
                       " does not match series length " + std::to_string(length()));
    }
    for (int y : labels) {
      if (y != 0 && y != 1) throw data_error("labels must be 0 or 1");
    }
  }
  for (const auto& [t, vars] : gt_vars) {
    if (t < 0 || t >= length()) throw data_error("gt timestamp out of range");
    for (Eigen::Index v : vars) {
      if (v < 0 || v >= variables()) throw data_error("gt variable index out of range");
    }
  }
}

SeriesFrame load_csv(const std::string& path, const std::string& label_path,
                     const std::string& gt_path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) throw data_error("empty file: " + path);
  SeriesFrame frame;
  for (auto& name : split(chomp(line), ',')) frame.var_names.push_back(name);
  const std::size_t cols = frame.var_names.size();

  std::vector<double> data;
  Eigen::Index rows = 0;
  while (std::getline(in, line)) {
    line = chomp(line);
    if (line.empty()) continue;
    auto cells = split(line, ',');
    if (cells.size() != cols) {
      throw data_error("ragged row " + std::to_string(rows + 1) + " in " + path + ": expected " +
                       std::to_string(cols) + " cells, got " + std::to_string(cells.size()));
    }
    for (std::size_t j = 0; j < cols; ++j) {
      data.push_back(parse_cell(cells[j], rows + 1, static_cast<Eigen::Index>(j)));
    }
    ++rows;
  }
  if (rows == 0) throw data_error("no data rows in " + path);

  frame.values.resize(rows, static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(cols); ++j) {
      frame.values(i, j) = data[static_cast<std::size_t>(i) * cols + static_cast<std::size_t>(j)];
    }
  }

  if (!label_path.empty()) {
    std::ifstream lin(label_path);
    if (!lin) throw data_error("cannot open " + label_path);
    while (std::getline(lin, line)) {
      line = chomp(line);
      if (line.empty()) continue;
      frame.labels.push_back(std::stoi(line));
    }
    if (static_cast<Eigen::Index>(frame.labels.size()) != rows) {
      throw data_error("label length " + std::to_string(frame.labels.size()) +
                       " does not match series length " + std::to_string(rows));
    }
  }

  if (!gt_path.empty()) {
    std::ifstream gin(gt_path);
    if (!gin) throw data_error("cannot open " + gt_path);
    while (std::getline(gin, line)) {
      line = chomp(line);
      if (line.empty()) continue;
      auto head = split(line, ',');
      if (head.size() != 2) throw data_error("bad gt line: " + line);
      Eigen::Index t = std::stol(head[0]);
      std::set<Eigen::Index> vars;
      for (const auto& tok : split(head[1], ';')) {
        if (!tok.empty()) vars.insert(std::stol(tok));
      }
      frame.gt_vars[t] = std::move(vars);
    }
  }

  frame.validate();
  return frame;
}

void save_csv(const SeriesFrame& frame, const std::string& path, const std::string& label_path,
              const std::string& gt_path) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot write " + path);
  out << std::setprecision(17);
  for (Eigen::Index j = 0; j < frame.variables(); ++j) {
    if (j) out << ',';
    if (j < static_cast<Eigen::Index>(frame.var_names.size()) &&
        !frame.var_names[static_cast<std::size_t>(j)].empty()) {
      out << frame.var_names[static_cast<std::size_t>(j)];
    } else {
      out << 'v' << j;
    }
  }
  out << '\n';
  for (Eigen::Index i = 0; i < frame.length(); ++i) {
    for (Eigen::Index j = 0; j < frame.variables(); ++j) {
      if (j) out << ',';
      out << frame.values(i, j);
    }
    out << '\n';
  }

  if (!label_path.empty()) {
    std::ofstream lout(label_path);
    if (!lout) throw data_error("cannot write " + label_path);
    for (Eigen::Index i = 0; i < frame.length(); ++i) {
      lout << (frame.has_labels() ? frame.labels[static_cast<std::size_t>(i)] : 0) << '\n';
    }
  }
  if (!gt_path.empty()) {
    std::ofstream gout(gt_path);
    if (!gout) throw data_error("cannot write " + gt_path);
    for (const auto& [t, vars] : frame.gt_vars) {
      gout << t << ',';
      bool first = true;
      for (Eigen::Index v : vars) {
        if (!first) gout << ';';
        gout << v;
        first = false;
      }
      gout << '\n';
    }
  }
}

Eigen::MatrixXd MinMaxScaler::apply(const Eigen::MatrixXd& values) const {
  Eigen::MatrixXd out(values.rows(), values.cols());
  for (Eigen::Index j = 0; j < values.cols(); ++j) {
    if (span(j) == 0.0) {
      out.col(j).setZero();
    } else {
      out.col(j) = (values.col(j).array() - lo(j)) / span(j);
    }
  }
  return out;
}

Eigen::MatrixXd MinMaxScaler::invert(const Eigen::MatrixXd& normalized) const {
  Eigen::MatrixXd out(normalized.rows(), normalized.cols());
  for (Eigen::Index j = 0; j < normalized.cols(); ++j) {
    if (span(j) == 0.0) {
      out.col(j).setConstant(lo(j));
    } else {
      out.col(j) = normalized.col(j).array() * span(j) + lo(j);
    }
  }
  return out;
}

std::pair<SeriesFrame, MinMaxScaler> min_max_normalize(const SeriesFrame& frame) {
  MinMaxScaler scaler;
  scaler.lo = frame.values.colwise().minCoeff();
  Eigen::VectorXd hi = frame.values.colwise().maxCoeff();
  scaler.span = hi - scaler.lo;
  SeriesFrame out = frame;
  out.values = scaler.apply(frame.values);
  return {std::move(out), std::move(scaler)};
}

BinRow bins_from_edges(std::vector<double> edges) {
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  BinRow row;
  row.requested = static_cast<int>(edges.size()) + 1;
  row.edges = std::move(edges);
  return row;
}

BinRow quantile_bins(const Eigen::VectorXd& series, int q) {
  if (q < 2) throw config_error("bin count must be >= 2");
  std::vector<double> sorted(series.data(), series.data() + series.size());
  std::sort(sorted.begin(), sorted.end());
  const double n1 = static_cast<double>(sorted.size()) - 1.0;

  std::vector<double> edges;
  for (int i = 1; i < q; ++i) {
    const double pos = n1 * static_cast<double>(i) / static_cast<double>(q);
    const auto k = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - std::floor(pos);
    double e = sorted[k];
    if (frac > 0.0 && k + 1 < sorted.size()) e += frac * (sorted[k + 1] - sorted[k]);
    edges.push_back(e);
  }
  BinRow row = bins_from_edges(std::move(edges));
  row.requested = q;
  return row;
}

Eigen::VectorXi discretize(const Eigen::VectorXd& series, const BinRow& bins) {
  Eigen::VectorXi out(series.size());
  for (Eigen::Index t = 0; t < series.size(); ++t) {
    const double x = series(t);
    if (std::isnan(x)) throw data_error("NaN value at index " + std::to_string(t));
    const auto it = std::upper_bound(bins.edges.begin(), bins.edges.end(), x);
    out(t) = static_cast<int>(it - bins.edges.begin());
  }
  return out;
}

double discretization_entropy(const Eigen::VectorXi& assignment, int bin_count) {
  std::vector<double> counts(static_cast<std::size_t>(bin_count), 0.0);
  for (Eigen::Index t = 0; t < assignment.size(); ++t) {
    counts[static_cast<std::size_t>(assignment(t))] += 1.0;
  }
  const double n = static_cast<double>(assignment.size());
  double h = 0.0;
  for (double cnt : counts) {
    if (cnt > 0.0) {
      const double p = cnt / n;
      h -= p * std::log(p);
    }
  }
  return h;
}

std::pair<int, BinRow> select_bin_count(const Eigen::VectorXd& series,
                                        const std::vector<int>& candidates) {
  if (candidates.empty()) throw config_error("empty bin-count candidate set");
  if (series.size() < 2) throw data_error("need at least two samples to fit bins");

  std::vector<int> sorted = candidates;
  std::sort(sorted.begin(), sorted.end());

  constexpr double kTieTol = 1e-9;
  int best_q = 0;
  BinRow best;
  double best_h = -1.0;
  for (int q : sorted) {
    BinRow row = quantile_bins(series, q);
    row.entropy = discretization_entropy(discretize(series, row), row.bin_count());
    if (row.entropy > best_h + kTieTol) {  // ties keep the smaller candidate
      best_h = row.entropy;
      best_q = q;
      best = std::move(row);
    }
  }
  return {best_q, std::move(best)};
}

BinModel fit_bins(const SeriesFrame& frame, const std::vector<int>& candidates) {
  BinModel model;
  model.rows.reserve(static_cast<std::size_t>(frame.variables()));
  for (Eigen::Index v = 0; v < frame.variables(); ++v) {
    model.rows.push_back(select_bin_count(frame.values.col(v), candidates).second);
  }
  return model;
}

std::vector<Window> windows(const SeriesFrame& frame, Eigen::Index w, Eigen::Index stride) {
  if (w < 2 || w > frame.length()) {
    throw config_error("window length " + std::to_string(w) + " not in [2, n=" +
                       std::to_string(frame.length()) + "]");
  }
  if (stride < 1) throw config_error("stride must be >= 1");

  std::vector<Window> out;
  for (Eigen::Index start = 0; start + w <= frame.length(); start += stride) {
    Window win;
    win.start = start;
    win.numeric = frame.values.middleRows(start, w).transpose();
    if (frame.has_labels()) {
      for (Eigen::Index t = start; t < start + w; ++t) {
        if (frame.labels[static_cast<std::size_t>(t)]) {
          win.label = 1;
          break;
        }
      }
    }
    out.push_back(std::move(win));
  }
  return out;
}

}  // namespace mtfad::core
