#include <algorithm>
#include <cmath>

#include <ceres/gradient_problem.h>
#include <ceres/gradient_problem_solver.h>
#include <spdlog/spdlog.h>

#include "topicsurv/survival.hpp"
#include "survival_detail.hpp"

namespace topicsurv::survival {

namespace {

// f(k) = sum_{l>k} a_l for k = 0..m, with a holding a_1..a_m.
Eigen::VectorXd sequence_scores(const Eigen::Ref<const Eigen::VectorXd>& a) {
  const auto m = a.size();
  Eigen::VectorXd f(m + 1);
  f[m] = 0.0;
  for (Eigen::Index k = m - 1; k >= 0; --k) f[k] = f[k + 1] + a[k];
  return f;
}

double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& v) {
  const double hi = v.maxCoeff();
  return hi + std::log((v.array() - hi).exp().sum());
}

class CeresObjective final : public ceres::FirstOrderFunction {
 public:
  explicit CeresObjective(const MtlrObjective& objective) : objective_(objective) {}

  bool Evaluate(const double* parameters, double* cost, double* gradient) const override {
    Eigen::Map<const Eigen::VectorXd> p(parameters, objective_.num_parameters());
    Eigen::VectorXd params = p;
    if (gradient) {
      Eigen::VectorXd g;
      *cost = objective_.value_and_gradient(params, &g);
      Eigen::Map<Eigen::VectorXd>(gradient, g.size()) = g;
    } else {
      *cost = objective_.value(params);
    }
    return std::isfinite(*cost);
  }
  int NumParameters() const override { return objective_.num_parameters(); }

 private:
  const MtlrObjective& objective_;
};

}  // namespace

std::vector<double> mtlr_time_grid(const std::vector<SurvivalLabel>& labels, int m) {
  if (m <= 0) throw input_error("MTLR needs at least one time point");
  std::vector<double> deaths;
  for (const auto& l : labels)
    if (l.event()) deaths.push_back(l.time);
  if (deaths.empty()) throw input_error("MTLR time grid needs at least one uncensored time");
  std::sort(deaths.begin(), deaths.end());
  std::vector<double> grid;
  const double last = static_cast<double>(deaths.size() - 1);
  for (int k = 1; k <= m; ++k) {
    double pos = last * k / (m + 1.0);
    auto lo = static_cast<std::size_t>(std::floor(pos));
    auto hi = std::min(lo + 1, deaths.size() - 1);
    double q = deaths[lo] + (pos - static_cast<double>(lo)) * (deaths[hi] - deaths[lo]);
    if (grid.empty() || q > grid.back()) grid.push_back(q);
  }
  return grid;
}

int mtlr_interval(const SurvivalLabel& label, const std::vector<double>& tp) {
  auto it = label.event() ? std::lower_bound(tp.begin(), tp.end(), label.time)
                          : std::upper_bound(tp.begin(), tp.end(), label.time);
  return static_cast<int>(it - tp.begin());
}

MtlrObjective::MtlrObjective(const Eigen::MatrixXd& x, const std::vector<SurvivalLabel>& labels,
                             std::vector<double> time_points, double c)
    : x_(x), time_points_(std::move(time_points)), c_(c),
      m_(static_cast<int>(time_points_.size())), r_(static_cast<int>(x.cols())) {
  if (static_cast<std::size_t>(x.rows()) != labels.size()) throw input_error("MTLR: row/label count mismatch");
  if (m_ == 0) throw input_error("MTLR: empty time grid");
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    if (!x.col(j).allFinite()) throw numerical_error("MTLR: feature " + std::to_string(j) + " has non-finite values");
  for (const auto& l : labels) {
    interval_.push_back(mtlr_interval(l, time_points_));
    event_.push_back(l.event());
  }
}

Eigen::VectorXd MtlrObjective::pack(const Eigen::MatrixXd& weights, const Eigen::VectorXd& biases) const {
  Eigen::VectorXd p(num_parameters());
  for (int l = 0; l < m_; ++l) p.segment(static_cast<Eigen::Index>(l) * r_, r_) = weights.row(l).transpose();
  p.tail(m_) = biases;
  return p;
}

void MtlrObjective::unpack(const Eigen::VectorXd& p, Eigen::MatrixXd& weights, Eigen::VectorXd& biases) const {
  weights.resize(m_, r_);
  for (int l = 0; l < m_; ++l) weights.row(l) = p.segment(static_cast<Eigen::Index>(l) * r_, r_).transpose();
  biases = p.tail(m_);
}

double MtlrObjective::value(const Eigen::VectorXd& params) const { return value_and_gradient(params, nullptr); }

double MtlrObjective::value_and_gradient(const Eigen::VectorXd& params, Eigen::VectorXd* gradient) const {
  if (params.size() != num_parameters()) throw input_error("MTLR: wrong parameter count");
  Eigen::MatrixXd w;
  Eigen::VectorXd b;
  unpack(params, w, b);
  Eigen::MatrixXd a = x_ * w.transpose();
  a.rowwise() += b.transpose();

  double nll = 0.0;
  Eigen::MatrixXd da(gradient ? a.rows() : 0, m_);  // d(-loglik)/da
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    Eigen::VectorXd f = sequence_scores(a.row(i).transpose());
    const double log_z = log_sum_exp(f);
    const int k = interval_[static_cast<std::size_t>(i)];
    const double log_num = event_[static_cast<std::size_t>(i)] ? f[k] : log_sum_exp(f.tail(m_ + 1 - k));
    nll -= log_num - log_z;
    if (!gradient) continue;
    // d f(j) / d a_l = [l > j]; expectations of that indicator under the full
    // and the observation-restricted interval distributions.
    Eigen::ArrayXd p = (f.array() - log_z).exp();
    Eigen::ArrayXd q = Eigen::ArrayXd::Zero(m_ + 1);
    if (event_[static_cast<std::size_t>(i)]) {
      q[k] = 1.0;
    } else {
      q.tail(m_ + 1 - k) = (f.tail(m_ + 1 - k).array() - log_num).exp();
    }
    double cum_p = 0.0, cum_q = 0.0;
    for (int l = 1; l <= m_; ++l) {
      cum_p += p[l - 1];
      cum_q += q[l - 1];
      da(i, l - 1) = cum_p - cum_q;
    }
  }
  const double penalty = 0.5 * c_ * w.squaredNorm();
  if (gradient) {
    Eigen::MatrixXd gw = da.transpose() * x_ + c_ * w;
    Eigen::VectorXd gb = da.colwise().sum().transpose();
    *gradient = pack(gw, gb);
  }
  return nll + penalty;
}

MtlrModel fit_mtlr(const Eigen::MatrixXd& x, const std::vector<SurvivalLabel>& labels, const MtlrOptions& opt) {
  const auto n = labels.size();
  if (n < 4) throw input_error("MTLR needs at least 4 training instances");
  if (!(opt.c > 0.0)) throw input_error("MTLR regularization C must be positive");
  Eigen::MatrixXd xs;
  std::vector<SurvivalLabel> ls;
  detail::reorder(x, labels, detail::canonical_order(x, labels), xs, ls);

  const int m = opt.m > 0 ? opt.m : static_cast<int>(std::floor(std::sqrt(static_cast<double>(n))));
  MtlrObjective objective(xs, ls, mtlr_time_grid(ls, m), opt.c);
  Eigen::VectorXd params = Eigen::VectorXd::Zero(objective.num_parameters());

  ceres::GradientProblemSolver::Options so;
  so.line_search_direction_type = ceres::LBFGS;
  so.max_num_iterations = opt.max_iterations;
  so.gradient_tolerance = opt.gradient_tolerance;
  so.function_tolerance = 1e-15;
  so.parameter_tolerance = 1e-15;
  so.logging_type = ceres::SILENT;
  ceres::GradientProblem problem(new CeresObjective(objective));
  ceres::GradientProblemSolver::Summary summary;
  ceres::Solve(so, problem, params.data(), &summary);

  Eigen::VectorXd g;
  const double final_value = objective.value_and_gradient(params, &g);
  if (!std::isfinite(final_value)) {
    Eigen::Index worst = 0;
    xs.cwiseAbs().colwise().maxCoeff().maxCoeff(&worst);
    throw numerical_error("MTLR objective is not finite; check scaling of feature " + std::to_string(worst));
  }
  if (g.lpNorm<Eigen::Infinity>() > opt.gradient_tolerance)
    spdlog::debug("MTLR stopped with gradient norm {} ({})", g.lpNorm<Eigen::Infinity>(), summary.message);

  MtlrModel model;
  model.time_points = mtlr_time_grid(ls, m);
  objective.unpack(params, model.weights, model.biases);
  model.c = opt.c;
  model.horizon = integration_horizon(ls);
  return model;
}

Eigen::VectorXd mtlr_interval_probabilities(const MtlrModel& model, const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (x.size() != model.weights.cols())
    throw input_error("MTLR: expected " + std::to_string(model.weights.cols()) + " features, got " +
                      std::to_string(x.size()));
  Eigen::VectorXd a = model.weights * x + model.biases;
  Eigen::VectorXd f = sequence_scores(a);
  return (f.array() - log_sum_exp(f)).exp().matrix();
}

SurvivalCurve mtlr_curve(const MtlrModel& model, const Eigen::Ref<const Eigen::VectorXd>& x) {
  Eigen::VectorXd p = mtlr_interval_probabilities(model, x);
  SurvivalCurve c;
  c.horizon = model.horizon;
  c.times.push_back(0.0);
  c.values.push_back(1.0);
  // S(t_k) = P(interval >= k), summed from the last interval backwards.
  std::vector<double> tail(p.size());
  double s = 0.0;
  for (Eigen::Index k = p.size() - 1; k >= 1; --k) tail[static_cast<std::size_t>(k)] = (s += p[k]);
  for (int k = 1; k <= model.m(); ++k) {
    c.times.push_back(model.time_points[static_cast<std::size_t>(k - 1)]);
    c.values.push_back(std::min(c.values.back(), tail[static_cast<std::size_t>(k)]));
  }
  return c;
}

void to_json(Json& j, const MtlrModel& m) {
  j = Json{{"time_points", m.time_points},
           {"weights", matrix_to_json(m.weights)},
           {"biases", vector_to_json(m.biases)},
           {"c", m.c},
           {"horizon", m.horizon}};
}

void from_json(const Json& j, MtlrModel& m) {
  m.time_points = j.at("time_points").get<std::vector<double>>();
  m.weights = matrix_from_json(j.at("weights"));
  m.biases = vector_from_json(j.at("biases"));
  m.c = j.at("c").get<double>();
  m.horizon = j.at("horizon").get<double>();
}

}  // namespace topicsurv::survival
