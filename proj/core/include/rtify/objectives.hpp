#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rtify/diff/ops.hpp"
#include "rtify/stopping.hpp"

namespace rtify::objectives {

/// Signed RT in ms: positive when the choice matches the label.
double signed_rt(const stopping::Decision& decision, int label);

/// Uniform bins over [-t_max, t_max]; samples are spread over bin centers by a
/// normalized Gaussian kernel of the given bandwidth.
struct HistogramSpec {
  double t_max_ms = 2000.0;
  int bins = 50;
  double bandwidth_ms = 40.0;

  void validate() const;
  double bin_width() const { return 2.0 * t_max_ms / bins; }
  std::vector<double> centers() const;
  bool same_edges(const HistogramSpec& other) const;
};

struct Histogram {
  HistogramSpec spec;
  std::vector<double> mass;  // sums to 1
};

Histogram soft_histogram(std::span<const double> rts, const HistogramSpec& spec);

double histogram_mse(const Histogram& model, const Histogram& reference);

/// Both sides restricted to positive samples and renormalized.
double correct_only_histogram_mse(std::span<const double> model_rts, std::span<const double> reference_rts,
                                  const HistogramSpec& spec);

std::vector<double> positive_part(std::span<const double> rts);

/// -Pearson r.
double neg_correlation(std::span<const double> x, std::span<const double> y);

/// Per-sample kernel rows (n x B); each row sums to 1.
template <class T>
diff::Var<T> kernel_rows(const diff::Var<T>& rts, const HistogramSpec& spec) {
  spec.validate();
  if (rts.value().size() == 0) throw ShapeError("soft_histogram: empty batch");
  if (rts.value().cols() != 1) throw ShapeError("soft_histogram: expects an n x 1 column of RTs");
  const auto c = spec.centers();
  auto centers = diff::BasicArray<T>::matrix(1, c.size());
  for (std::size_t b = 0; b < c.size(); ++b) centers[b] = static_cast<T>(c[b]);
  auto d = rts - rts.tape().constant(std::move(centers));
  const T k = static_cast<T>(-1.0 / (2.0 * spec.bandwidth_ms * spec.bandwidth_ms));
  return diff::softmax(diff::scale(diff::square(d), k));
}

/// One histogram per group (G x B). group[i] in [0, G) assigns sample i;
/// -1 drops it. Every group needs at least one sample.
template <class T>
diff::Var<T> soft_histograms(const diff::Var<T>& rts, const std::vector<int>& group, int n_groups,
                             const HistogramSpec& spec) {
  const std::size_t n = rts.value().size();
  if (group.size() != n) throw ShapeError("soft_histograms: group vector does not match batch");
  std::vector<double> count(static_cast<std::size_t>(n_groups), 0.0);
  for (int g : group) {
    if (g >= n_groups) throw ShapeError("soft_histograms: group index out of range");
    if (g >= 0) count[g] += 1.0;
  }
  for (int g = 0; g < n_groups; ++g) {
    if (count[g] == 0.0) throw ShapeError("soft_histograms: group " + std::to_string(g) + " has no samples");
  }
  auto w = diff::BasicArray<T>::matrix(static_cast<std::size_t>(n_groups), n);
  for (std::size_t i = 0; i < n; ++i)
    if (group[i] >= 0) w(group[i], i) = static_cast<T>(1.0 / count[group[i]]);
  return diff::matmul(rts.tape().constant(std::move(w)), kernel_rows(rts, spec));
}

/// Mean over groups of the per-bin MSE against constant reference rows.
template <class T>
diff::Var<T> histogram_mse(const diff::Var<T>& model, const std::vector<Histogram>& reference) {
  if (model.value().rows() != reference.size()) throw ShapeError("histogram_mse: group count mismatch");
  auto ref = diff::BasicArray<T>::matrix(model.value().rows(), model.value().cols());
  for (std::size_t g = 0; g < reference.size(); ++g) {
    if (reference[g].mass.size() != model.value().cols()) throw ShapeError("histogram_mse: edge mismatch");
    for (std::size_t b = 0; b < reference[g].mass.size(); ++b) ref(g, b) = static_cast<T>(reference[g].mass[b]);
  }
  return diff::mean(diff::square(model - model.tape().constant(std::move(ref))));
}

/// -Pearson r between a model column (n x 1) and fixed reference values.
template <class T>
diff::Var<T> neg_correlation(const diff::Var<T>& x, std::span<const double> y) {
  const std::size_t n = x.value().size();
  if (n != y.size()) throw ShapeError("neg_correlation: length mismatch");
  std::vector<double> xs(n);
  for (std::size_t i = 0; i < n; ++i) xs[i] = static_cast<double>(x.value()[i]);
  const double r = -neg_correlation(xs, y);
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) mx += xs[i], my += y[i];
  mx /= n, my /= n;
  double sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) sxx += (xs[i] - mx) * (xs[i] - mx), syy += (y[i] - my) * (y[i] - my);
  const double sx = std::sqrt(sxx), sy = std::sqrt(syy);
  // d(-r)/dx_i = -(yc_i / (sx sy) - r xc_i / sx^2); the mean terms cancel.
  auto grad = diff::BasicArray<T>(x.value().shape(), T{0});
  for (std::size_t i = 0; i < n; ++i)
    grad[i] = static_cast<T>(-((y[i] - my) / (sx * sy) - r * (xs[i] - mx) / sxx));
  return diff::custom_op<T>("neg_correlation", diff::BasicArray<T>::scalar(static_cast<T>(-r)), {x},
                            [grad](const diff::BasicArray<T>& g) {
                              auto out = grad;
                              for (auto& v : out.values()) v *= g[0];
                              return std::vector<diff::BasicArray<T>>{std::move(out)};
                            });
}

/// Mean over the batch of CE(y, softmax(z)) + lambda * z_y * tau.
template <class T>
diff::Var<T> self_penalty_loss(const diff::Var<T>& logits, const std::vector<int>& labels, const diff::Var<T>& tau,
                               double lambda) {
  if (lambda < 0.0) throw ConfigError("self_penalty_loss: lambda must be >= 0");
  auto ce = diff::cross_entropy(logits, labels);
  if (lambda == 0.0) return ce;
  const std::size_t n = labels.size();
  if (tau.value().size() != n) throw ShapeError("self_penalty_loss: tau batch mismatch");
  auto onehot = diff::BasicArray<T>::matrix(n, logits.value().cols());
  for (std::size_t i = 0; i < n; ++i) onehot(i, static_cast<std::size_t>(labels[i])) = T{1};
  auto ly = diff::sum(diff::mul(logits, logits.tape().constant(std::move(onehot))), 1);
  return ce + diff::scale(diff::mean(diff::mul(ly, tau)), static_cast<T>(lambda));
}

enum class FitMode { kFull, kCorrectOnly };
FitMode parse_fit_mode(const std::string& token);
std::string to_string(FitMode mode);

/// Signed RT column (n x 1) from a tau node: +/-(t0 + tau * step_ms), sign
/// fixed by whether each decision's choice matches its label.
template <class T>
diff::Var<T> signed_rt_node(const diff::Var<T>& tau, const std::vector<stopping::Decision>& decisions,
                            const std::vector<int>& labels, double step_ms, double t0_ms) {
  const std::size_t n = decisions.size();
  if (labels.size() != n || tau.value().size() != n) throw ShapeError("signed_rt_node: batch mismatch");
  auto sign = diff::BasicArray<T>::matrix(n, 1);
  for (std::size_t i = 0; i < n; ++i) sign[i] = decisions[i].choice == labels[i] ? T{1} : T{-1};
  auto rt = diff::affine(tau, static_cast<T>(step_ms), static_cast<T>(t0_ms));
  return diff::mul(rt, tau.tape().constant(std::move(sign)));
}

/// Condition-averaged histogram MSE of a signed-RT column. In correct-only
/// mode negative samples are dropped and `reference` must already hold
/// positive-part histograms.
template <class T>
diff::Var<T> rt_fit_loss(const diff::Var<T>& rts, const std::vector<int>& conditions,
                         const std::vector<Histogram>& reference, const HistogramSpec& spec, FitMode mode) {
  std::vector<int> group = conditions;
  const int n_cond = static_cast<int>(reference.size());
  if (mode == FitMode::kCorrectOnly) {
    std::vector<int> positives(static_cast<std::size_t>(n_cond), 0);
    for (std::size_t i = 0; i < group.size(); ++i) {
      if (rts.value()[i] <= T{0}) group[i] = -1;
      else if (group[i] >= 0 && group[i] < n_cond) ++positives[group[i]];
    }
    for (int c = 0; c < n_cond; ++c) {
      if (positives[c] == 0) {
        throw NumericError("correct_only_histogram_mse: no positive samples in condition " + std::to_string(c));
      }
    }
  }
  return histogram_mse(soft_histograms(rts, group, n_cond, spec), reference);
}

/// Mean of (theta - phi_final)_+ over censored rows; pulls an unreachable
/// threshold back into range.
template <class T>
diff::Var<T> censor_penalty(const diff::Var<T>& phi_final, const diff::Var<T>& theta,
                            const std::vector<stopping::Decision>& decisions) {
  const std::size_t n = decisions.size();
  auto mask = diff::BasicArray<T>::matrix(n, 1);
  for (std::size_t i = 0; i < n; ++i) mask[i] = decisions[i].crossed ? T{0} : T{1};
  auto gap = diff::relu(diff::sub(theta, phi_final));
  return diff::scale(diff::sum(diff::mul(gap, phi_final.tape().constant(std::move(mask)))), T{1} / static_cast<T>(n));
}

/// Bandwidth for `epoch` when annealing from `start` down to `end` over
/// `epochs` epochs (geometric).
double annealed_bandwidth(double start, double end, int epochs, int epoch);

/// Reference RT files: '#' comment lines, header "condition_id,rt_ms_signed".
struct ReferenceRts {
  std::vector<std::vector<double>> by_condition;
  std::string config_hash;
};

void write_reference_csv(const std::filesystem::path& path, const std::vector<std::vector<double>>& rts,
                         const std::string& config_hash);
ReferenceRts read_reference_csv(const std::filesystem::path& path);

struct HistogramRow {
  int condition_id = 0;
  double bin_center_ms = 0.0;
  double density_model = 0.0;
  double density_reference = 0.0;
};

void write_histogram_csv(const std::filesystem::path& path, const std::vector<Histogram>& model,
                         const std::vector<Histogram>& reference, const std::string& config_hash);
std::vector<HistogramRow> read_histogram_csv(const std::filesystem::path& path);

/// "# rtify <version> config_hash=<hash>"
std::string provenance_line(const std::string& config_hash);

}  // namespace rtify::objectives
