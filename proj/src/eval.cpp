#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/special_functions/gamma.hpp>
#include <spdlog/spdlog.h>

#include "topicsurv/csv.hpp"
#include "topicsurv/eval.hpp"

namespace topicsurv::eval {

namespace {

class Fenwick {
 public:
  explicit Fenwick(std::size_t n) : tree_(n + 1, 0) {}
  void add(std::size_t i) {
    for (++i; i < tree_.size(); i += i & (~i + 1)) ++tree_[i];
  }
  // Number of inserted ranks < i.
  std::int64_t below(std::size_t i) const {
    std::int64_t s = 0;
    for (; i > 0; i -= i & (~i + 1)) s += tree_[i];
    return s;
  }

 private:
  std::vector<std::int64_t> tree_;
};

}  // namespace

Concordance concordance(const std::vector<double>& risks, const std::vector<SurvivalLabel>& labels) {
  const auto n = labels.size();
  if (risks.size() != n) throw input_error("concordance: " + std::to_string(risks.size()) + " risks for " +
                                           std::to_string(n) + " labels");
  for (double r : risks)
    if (std::isnan(r)) throw input_error("concordance: NaN risk");

  // Dense ranks of risks.
  std::vector<double> sorted = risks;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<std::size_t> rank(n);
  for (std::size_t i = 0; i < n; ++i)
    rank[i] = static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), risks[i]) - sorted.begin());

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return labels[a].time > labels[b].time; });

  Fenwick tree(sorted.size());
  std::int64_t inserted = 0;
  Concordance c;
  for (std::size_t a = 0; a < n;) {
    std::size_t b = a;
    while (b < n && labels[order[b]].time == labels[order[a]].time) ++b;
    // Patients censored at this time outlive deaths at the same time.
    for (std::size_t k = a; k < b; ++k)
      if (!labels[order[k]].event()) {
        tree.add(rank[order[k]]);
        ++inserted;
      }
    for (std::size_t k = a; k < b; ++k) {
      std::size_t i = order[k];
      if (!labels[i].event()) continue;
      std::int64_t lower = tree.below(rank[i]);
      std::int64_t equal = tree.below(rank[i] + 1) - lower;
      c.comparable += inserted;
      c.tied += equal;
      c.concordant_halves += 2 * lower + equal;
    }
    for (std::size_t k = a; k < b; ++k)
      if (labels[order[k]].event()) {
        tree.add(rank[order[k]]);
        ++inserted;
      }
    a = b;
  }
  if (c.comparable == 0) throw numerical_error("concordance: no comparable pairs");
  c.value = static_cast<double>(c.concordant_halves) / (2.0 * static_cast<double>(c.comparable));
  return c;
}

Concordance concordance(const Eigen::VectorXd& risks, const std::vector<SurvivalLabel>& labels) {
  return concordance(std::vector<double>(risks.data(), risks.data() + risks.size()), labels);
}

double chi_square_upper_tail(double statistic, int df) {
  if (df <= 0) throw input_error("chi-square needs positive degrees of freedom");
  if (!(statistic > 0.0)) return 1.0;
  return boost::math::gamma_q(0.5 * df, 0.5 * statistic);
}

DCalibration d_calibration_from_probabilities(const std::vector<double>& probabilities, int bins) {
  if (bins < 3) throw input_error("D-calibration needs at least 3 bins");
  if (probabilities.empty()) throw input_error("D-calibration needs at least one uncensored patient");
  const auto g = static_cast<std::size_t>(bins);
  if (probabilities.size() < g) spdlog::warn("D-calibration with {} uncensored patients and {} bins", probabilities.size(), bins);

  std::vector<double> counts(g, 0.0);
  for (double p : probabilities) {
    if (!(p >= 0.0 && p <= 1.0)) throw input_error("D-calibration probability outside [0,1]");
    auto k = static_cast<std::size_t>(std::floor(p * bins));
    ++counts[std::min(k, g - 1)];
  }
  DCalibration out;
  const double n = static_cast<double>(probabilities.size());
  const double pi = 1.0 / bins;
  const double predicted = n / bins;
  const double denom = n * pi * (1.0 - pi);
  out.table.n = static_cast<int>(probabilities.size());
  for (std::size_t k = 0; k < g; ++k) {
    out.hl += (counts[k] - predicted) * (counts[k] - predicted) / denom;
    out.table.bins.push_back({static_cast<double>(k) / bins, static_cast<double>(k + 1) / bins, counts[k], predicted});
  }
  out.df = bins - 2;
  out.p_value = chi_square_upper_tail(out.hl, out.df);
  return out;
}

DCalibration d_calibration(const std::vector<survival::SurvivalCurve>& curves, const std::vector<SurvivalLabel>& labels,
                           int bins) {
  if (curves.size() != labels.size()) throw input_error("D-calibration: curve/label count mismatch");
  std::vector<double> p;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i].event()) p.push_back(std::clamp(curves[i](labels[i].time), 0.0, 1.0));
  if (p.empty()) throw numerical_error("D-calibration: no uncensored patients");
  return d_calibration_from_probabilities(p, bins);
}

std::string calibration_to_csv(const CalibrationTable& table) {
  std::string out = "bin_low,bin_high,expected,predicted\n";
  for (const auto& b : table.bins)
    out += csv::format_double(b.low) + "," + csv::format_double(b.high) + "," + csv::format_double(b.expected) + "," +
           csv::format_double(b.predicted) + "\n";
  return out;
}

}  // namespace topicsurv::eval
