#include "rtify/objectives.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <cmath>
#include <fstream>
#include <sstream>

#include "rtify/hash.hpp"

namespace rtify::objectives {

double signed_rt(const stopping::Decision& decision, int label) {
  return decision.choice == label ? decision.rt_ms : -decision.rt_ms;
}

void HistogramSpec::validate() const {
  if (!(t_max_ms > 0.0)) throw ConfigError("histogram: t_max_ms must be > 0");
  if (bins < 1) throw ConfigError("histogram: bins must be >= 1");
  if (!(bandwidth_ms > 0.0)) throw ConfigError("histogram: bandwidth must be > 0");
}

std::vector<double> HistogramSpec::centers() const {
  std::vector<double> c(static_cast<std::size_t>(bins));
  const double w = bin_width();
  for (int b = 0; b < bins; ++b) c[b] = -t_max_ms + (b + 0.5) * w;
  return c;
}

bool HistogramSpec::same_edges(const HistogramSpec& other) const {
  return bins == other.bins && t_max_ms == other.t_max_ms;
}

Histogram soft_histogram(std::span<const double> rts, const HistogramSpec& spec) {
  spec.validate();
  if (rts.empty()) throw ShapeError("soft_histogram: empty batch");
  const auto c = spec.centers();
  Histogram h{spec, std::vector<double>(c.size(), 0.0)};
  const double k = -1.0 / (2.0 * spec.bandwidth_ms * spec.bandwidth_ms);
  std::vector<double> row(c.size());
  for (double r : rts) {
    double mx = -INFINITY;
    for (std::size_t b = 0; b < c.size(); ++b) mx = std::max(mx, row[b] = k * (r - c[b]) * (r - c[b]));
    double total = 0.0;
    for (auto& v : row) total += (v = std::exp(v - mx));
    for (std::size_t b = 0; b < c.size(); ++b) h.mass[b] += row[b] / total;
  }
  for (auto& m : h.mass) m /= static_cast<double>(rts.size());
  return h;
}

double histogram_mse(const Histogram& model, const Histogram& reference) {
  if (!model.spec.same_edges(reference.spec) || model.mass.size() != reference.mass.size()) {
    throw ShapeError("histogram_mse: edge mismatch");
  }
  double acc = 0.0;
  for (std::size_t b = 0; b < model.mass.size(); ++b) {
    const double d = model.mass[b] - reference.mass[b];
    acc += d * d;
  }
  return acc / static_cast<double>(model.mass.size());
}

std::vector<double> positive_part(std::span<const double> rts) {
  std::vector<double> out;
  std::copy_if(rts.begin(), rts.end(), std::back_inserter(out), [](double r) { return r > 0.0; });
  return out;
}

double correct_only_histogram_mse(std::span<const double> model_rts, std::span<const double> reference_rts,
                                  const HistogramSpec& spec) {
  const auto m = positive_part(model_rts);
  const auto r = positive_part(reference_rts);
  if (m.empty()) throw NumericError("correct_only_histogram_mse: no positive samples in model batch");
  if (r.empty()) throw NumericError("correct_only_histogram_mse: no positive samples in reference");
  return histogram_mse(soft_histogram(m, spec), soft_histogram(r, spec));
}

double neg_correlation(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("neg_correlation: length mismatch");
  if (x.size() < 3) throw ShapeError("neg_correlation: needs at least 3 pairs");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
  mx /= n, my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) throw NumericError("neg_correlation: zero variance (collapsed RTs?)");
  return -sxy / std::sqrt(sxx * syy);
}

FitMode parse_fit_mode(const std::string& token) {
  if (token == "full") return FitMode::kFull;
  if (token == "correct-only") return FitMode::kCorrectOnly;
  throw ConfigError("unknown fit mode '" + token + "' (full, correct-only)");
}

std::string to_string(FitMode mode) { return mode == FitMode::kFull ? "full" : "correct-only"; }

double annealed_bandwidth(double start, double end, int epochs, int epoch) {
  if (epochs <= 0 || epoch >= epochs || start <= end) return end;
  const double frac = static_cast<double>(epoch) / epochs;
  return end * std::pow(start / end, 1.0 - frac);
}

std::string provenance_line(const std::string& config_hash) {
  return std::string("# rtify ") + kToolVersion + " config_hash=" + config_hash;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.precision(10);
  return out;
}

// Returns data lines with comments stripped; the header must match exactly.
std::vector<std::string> data_lines(const std::filesystem::path& path, const std::string& header,
                                    std::string* config_hash) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path.string());
  std::vector<std::string> lines;
  std::string line;
  bool seen_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto pos = line.find("config_hash=");
      if (config_hash && pos != std::string::npos) *config_hash = line.substr(pos + 12);
      continue;
    }
    if (!seen_header) {
      if (line != header) throw IoError(path.string() + ": expected header '" + header + "', got '" + line + "'");
      seen_header = true;
      continue;
    }
    lines.push_back(line);
  }
  if (!seen_header) throw IoError(path.string() + ": missing header '" + header + "'");
  return lines;
}

std::vector<double> split_numbers(const std::string& line, std::size_t expected, const std::filesystem::path& path) {
  std::vector<double> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    // strtod rather than stod: underflow to a subnormal is a valid density, not an error.
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(cell.c_str(), &end);
    const bool overflow = errno == ERANGE && std::abs(v) > 1.0;
    if (cell.empty() || end != cell.c_str() + cell.size() || overflow) {
      throw IoError(path.string() + ": not a number: '" + cell + "'");
    }
    out.push_back(v);
  }
  if (out.size() != expected) throw IoError(path.string() + ": wrong column count in '" + line + "'");
  return out;
}

}  // namespace

void write_reference_csv(const std::filesystem::path& path, const std::vector<std::vector<double>>& rts,
                         const std::string& config_hash) {
  auto out = open_out(path);
  out << provenance_line(config_hash) << "\ncondition_id,rt_ms_signed\n";
  for (std::size_t c = 0; c < rts.size(); ++c)
    for (double r : rts[c]) out << c << ',' << r << '\n';
  if (!out) throw IoError("failed writing: " + path.string());
}

ReferenceRts read_reference_csv(const std::filesystem::path& path) {
  ReferenceRts ref;
  for (const auto& line : data_lines(path, "condition_id,rt_ms_signed", &ref.config_hash)) {
    const auto v = split_numbers(line, 2, path);
    if (v[0] < 0 || v[0] != std::floor(v[0])) throw IoError(path.string() + ": bad condition_id in '" + line + "'");
    const auto c = static_cast<std::size_t>(v[0]);
    if (c >= ref.by_condition.size()) ref.by_condition.resize(c + 1);
    ref.by_condition[c].push_back(v[1]);
  }
  for (std::size_t c = 0; c < ref.by_condition.size(); ++c) {
    if (ref.by_condition[c].empty()) throw IoError(path.string() + ": condition " + std::to_string(c) + " has no rows");
  }
  return ref;
}

void write_histogram_csv(const std::filesystem::path& path, const std::vector<Histogram>& model,
                         const std::vector<Histogram>& reference, const std::string& config_hash) {
  if (model.size() != reference.size()) throw ShapeError("write_histogram_csv: condition count mismatch");
  auto out = open_out(path);
  out << provenance_line(config_hash) << "\ncondition_id,bin_center_ms,density_model,density_reference\n";
  for (std::size_t c = 0; c < model.size(); ++c) {
    if (!model[c].spec.same_edges(reference[c].spec)) throw ShapeError("write_histogram_csv: edge mismatch");
    const auto centers = model[c].spec.centers();
    for (std::size_t b = 0; b < centers.size(); ++b) {
      out << c << ',' << centers[b] << ',' << model[c].mass[b] << ',' << reference[c].mass[b] << '\n';
    }
  }
  if (!out) throw IoError("failed writing: " + path.string());
}

std::vector<HistogramRow> read_histogram_csv(const std::filesystem::path& path) {
  std::vector<HistogramRow> rows;
  for (const auto& line : data_lines(path, "condition_id,bin_center_ms,density_model,density_reference", nullptr)) {
    const auto v = split_numbers(line, 4, path);
    rows.push_back({static_cast<int>(v[0]), v[1], v[2], v[3]});
  }
  return rows;
}

}  // namespace rtify::objectives
