#include <algorithm>
#include <cmath>
#include <map>

#include "topicsurv/csv.hpp"
#include "topicsurv/survival.hpp"

namespace topicsurv::survival {

double SurvivalCurve::operator()(double t) const {
  if (times.empty() || t <= times.front()) return values.empty() ? 1.0 : values.front();
  if (t >= times.back()) return t > std::max(horizon, times.back()) ? 0.0 : values.back();
  auto hi = static_cast<std::size_t>(std::upper_bound(times.begin(), times.end(), t) - times.begin());
  auto lo = hi - 1;
  double span = times[hi] - times[lo];
  double f = span > 0.0 ? (t - times[lo]) / span : 1.0;
  return values[lo] + f * (values[hi] - values[lo]);
}

double SurvivalCurve::area() const {
  double a = 0.0;
  for (std::size_t k = 1; k < times.size(); ++k) a += 0.5 * (values[k - 1] + values[k]) * (times[k] - times[k - 1]);
  if (!times.empty() && horizon > times.back()) a += values.back() * (horizon - times.back());
  return a;
}

void validate(const SurvivalCurve& c) {
  if (c.times.empty() || c.times.size() != c.values.size()) throw input_error("curve needs matching, non-empty knots");
  if (c.times.front() != 0.0 || c.values.front() != 1.0) throw input_error("curve must start at (0, 1)");
  for (std::size_t k = 1; k < c.times.size(); ++k) {
    if (!(c.times[k] > c.times[k - 1])) throw input_error("curve knots must be strictly increasing");
    if (c.values[k] > c.values[k - 1]) throw input_error("curve must be non-increasing");
  }
  if (c.values.back() < 0.0) throw input_error("curve values must lie in [0,1]");
}

double risk_from_curve(const SurvivalCurve& curve) { return -curve.area(); }

std::string curve_to_csv(const SurvivalCurve& curve) {
  std::string out = "time,survival\n";
  for (std::size_t k = 0; k < curve.times.size(); ++k)
    out += csv::format_double(curve.times[k]) + "," + csv::format_double(curve.values[k]) + "\n";
  if (!curve.times.empty() && curve.horizon > curve.times.back())
    out += csv::format_double(curve.horizon) + "," + csv::format_double(curve.values.back()) + "\n";
  return out;
}

SurvivalCurve curve_from_csv(std::string_view text, const std::string& where) {
  SurvivalCurve c;
  bool header = true;
  std::size_t line = 0;
  while (!text.empty()) {
    auto nl = text.find('\n');
    std::string_view raw = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line;
    if (!raw.empty() && raw.back() == '\r') raw.remove_suffix(1);
    if (raw.empty()) continue;
    auto f = csv::split_line(raw);
    const std::string at = where + ":" + std::to_string(line);
    if (header) {
      if (f.size() != 2 || f[0] != "time" || f[1] != "survival") throw input_error("curve header must be time,survival at " + at);
      header = false;
      continue;
    }
    if (f.size() != 2) throw input_error("expected 2 fields at " + at);
    c.times.push_back(csv::parse_double(f[0], at));
    c.values.push_back(csv::parse_double(f[1], at));
  }
  if (c.times.empty()) throw input_error("curve has no rows: " + where);
  c.horizon = c.times.back();
  validate(c);
  return c;
}

double integration_horizon(const std::vector<SurvivalLabel>& labels) {
  double t = 0.0;
  for (const auto& l : labels) t = std::max(t, l.time);
  return 1.5 * t;
}

double KmCurve::operator()(double t) const {
  auto it = std::upper_bound(times.begin(), times.end(), t);
  if (it == times.begin()) return 1.0;
  return values[static_cast<std::size_t>(it - times.begin()) - 1];
}

double KmCurve::inverse(double p) const {
  for (std::size_t k = 0; k < times.size(); ++k)
    if (values[k] <= p) return times[k];
  return std::numeric_limits<double>::infinity();
}

KmCurve kaplan_meier(const std::vector<SurvivalLabel>& labels) {
  std::map<double, std::pair<int, int>> at;  // time -> (deaths, leaving)
  for (const auto& l : labels) {
    auto& slot = at[l.time];
    slot.first += l.status;
    slot.second += 1;
  }
  KmCurve km;
  const auto n = static_cast<double>(labels.size());
  double at_risk = n;
  double s = 1.0;
  bool censored_so_far = false;
  for (const auto& [time, counts] : at) {
    if (counts.first > 0) {
      // Until the first censoring the product telescopes to remaining / n.
      s = censored_so_far ? s * (1.0 - counts.first / at_risk) : (at_risk - counts.first) / n;
      km.times.push_back(time);
      km.values.push_back(s);
    }
    if (counts.second > counts.first) censored_so_far = true;
    at_risk -= counts.second;
  }
  if (km.times.empty()) throw input_error("Kaplan-Meier needs at least one event");
  return km;
}

}  // namespace topicsurv::survival
