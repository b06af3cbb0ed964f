#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Eigenvalues>
#include <spdlog/spdlog.h>

#include "topicsurv/survival.hpp"
#include "survival_detail.hpp"

namespace topicsurv::survival {

namespace {

struct Derivatives {
  double loglik = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;
};

// Indices sorted by decreasing time; ties keep input order.
std::vector<std::size_t> by_time_desc(const std::vector<SurvivalLabel>& labels) {
  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return labels[a].time > labels[b].time; });
  return order;
}

// Breslow log partial likelihood and, when `second_order`, its gradient and Hessian.
Derivatives breslow(const Eigen::MatrixXd& x, const std::vector<SurvivalLabel>& labels, const Eigen::VectorXd& w,
                    bool second_order) {
  const auto n = static_cast<std::size_t>(x.rows());
  const auto p = x.cols();
  Eigen::VectorXd eta = x * w;
  const double shift = n ? eta.maxCoeff() : 0.0;
  Eigen::VectorXd r = (eta.array() - shift).exp();

  Derivatives d;
  d.gradient = Eigen::VectorXd::Zero(p);
  d.hessian = Eigen::MatrixXd::Zero(p, p);
  double s0 = 0.0;
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
  Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(p, p);

  auto order = by_time_desc(labels);
  for (std::size_t a = 0; a < n;) {
    std::size_t b = a;
    const double t = labels[order[a]].time;
    while (b < n && labels[order[b]].time == t) {
      auto i = static_cast<Eigen::Index>(order[b]);
      s0 += r[i];
      if (second_order) {
        s1.noalias() += r[i] * x.row(i).transpose();
        s2.noalias() += r[i] * x.row(i).transpose() * x.row(i);
      }
      ++b;
    }
    int deaths = 0;
    for (std::size_t k = a; k < b; ++k) {
      auto i = static_cast<Eigen::Index>(order[k]);
      if (labels[order[k]].event()) {
        ++deaths;
        d.loglik += eta[i] - shift - std::log(s0);
        if (second_order) d.gradient += x.row(i).transpose();
      }
    }
    if (deaths > 0 && second_order) {
      Eigen::VectorXd mean = s1 / s0;
      d.gradient -= deaths * mean;
      d.hessian -= deaths * (s2 / s0 - mean * mean.transpose());
    }
    a = b;
  }
  return d;
}

// Solves A s = g for symmetric PSD A, with a minimum-norm answer when A is
// singular.
Eigen::VectorXd psd_solve(const Eigen::MatrixXd& a, const Eigen::VectorXd& g) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
    const auto diag = ldlt.vectorD();
    if (diag.minCoeff() > 1e-10 * std::max(1.0, diag.maxCoeff())) return ldlt.solve(g);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a);
  const auto& values = eig.eigenvalues();
  const double cutoff = 1e-10 * std::max(1e-300, values.cwiseAbs().maxCoeff());
  Eigen::VectorXd proj = eig.eigenvectors().transpose() * g;
  for (Eigen::Index k = 0; k < proj.size(); ++k) proj[k] = values[k] > cutoff ? proj[k] / values[k] : 0.0;
  return eig.eigenvectors() * proj;
}

}  // namespace

double cox_log_partial_likelihood(const Eigen::MatrixXd& x, const std::vector<SurvivalLabel>& labels,
                                  const Eigen::VectorXd& w) {
  if (static_cast<std::size_t>(x.rows()) != labels.size() || x.cols() != w.size())
    throw input_error("cox_log_partial_likelihood: dimension mismatch");
  return breslow(x, labels, w, false).loglik;
}

CoxModel fit_cox(const Eigen::MatrixXd& x, const std::vector<SurvivalLabel>& labels, const CoxOptions& opt) {
  if (static_cast<std::size_t>(x.rows()) != labels.size())
    throw input_error("fit_cox: " + std::to_string(x.rows()) + " rows but " + std::to_string(labels.size()) + " labels");
  if (std::none_of(labels.begin(), labels.end(), [](const SurvivalLabel& l) { return l.event(); }))
    throw input_error("fit_cox: no uncensored instance");
  if (!x.allFinite()) throw input_error("fit_cox: design matrix has non-finite entries");
  if (opt.ridge < 0.0) throw input_error("fit_cox: ridge must be non-negative");

  const auto p = x.cols();
  Eigen::MatrixXd xs;
  std::vector<SurvivalLabel> ls;
  detail::reorder(x, labels, detail::canonical_order(x, labels), xs, ls);

  CoxModel model;
  model.ridge = opt.ridge;
  model.centers = xs.colwise().mean().transpose();
  Eigen::MatrixXd xc = xs.rowwise() - model.centers.transpose();

  std::vector<Eigen::Index> active;
  for (Eigen::Index j = 0; j < p; ++j)
    if (x.col(j).maxCoeff() > x.col(j).minCoeff()) active.push_back(j);
  const auto q = static_cast<Eigen::Index>(active.size());
  Eigen::MatrixXd xa(x.rows(), q);
  for (Eigen::Index k = 0; k < q; ++k) xa.col(k) = xc.col(active[static_cast<std::size_t>(k)]);

  Eigen::VectorXd w = Eigen::VectorXd::Zero(q);
  auto objective = [&](const Eigen::VectorXd& v) {
    return breslow(xa, ls, v, false).loglik - opt.ridge * v.squaredNorm();
  };
  bool converged = false;
  int it = 0;
  Derivatives d = breslow(xa, ls, w, true);
  for (; it < opt.max_iterations; ++it) {
    Eigen::VectorXd g = d.gradient - 2.0 * opt.ridge * w;
    if (q == 0 || g.lpNorm<Eigen::Infinity>() < opt.gradient_tolerance) {
      converged = true;
      break;
    }
    Eigen::MatrixXd info = -d.hessian;
    info.diagonal().array() += 2.0 * opt.ridge;
    Eigen::VectorXd step = psd_solve(info, g);
    const double current = d.loglik - opt.ridge * w.squaredNorm();
    // Near the optimum the gain falls below rounding of the objective itself.
    const double slack = 1e-13 * std::max(1.0, std::abs(current));
    double scale = 1.0;
    bool improved = false;
    for (int h = 0; h < 40; ++h, scale *= 0.5) {
      Eigen::VectorXd trial = w + scale * step;
      if (objective(trial) >= current - slack) {
        w = trial;
        improved = true;
        break;
      }
    }
    d = breslow(xa, ls, w, true);
    if (!improved) {
      // Objective is flat to machine precision along the Newton direction.
      converged = (d.gradient - 2.0 * opt.ridge * w).lpNorm<Eigen::Infinity>() < 1e3 * opt.gradient_tolerance;
      break;
    }
  }
  if (!converged)
    throw numerical_error("Cox Newton iterations did not converge in " + std::to_string(opt.max_iterations) +
                          " steps; set a ridge penalty > 0");
  if (opt.ridge == 0.0) {
    for (Eigen::Index k = 0; k < q; ++k) {
      double sd = std::sqrt(xa.col(k).squaredNorm() / std::max<Eigen::Index>(1, x.rows() - 1));
      if (std::abs(w[k]) * sd > opt.max_scaled_coefficient)
        throw numerical_error("Cox fit diverges (separable data in column " +
                              std::to_string(active[static_cast<std::size_t>(k)]) + "); set a ridge penalty > 0");
    }
  }

  model.coefficients = Eigen::VectorXd::Zero(p);
  for (Eigen::Index k = 0; k < q; ++k) model.coefficients[active[static_cast<std::size_t>(k)]] = w[k];
  model.iterations = it;
  model.log_partial_likelihood = d.loglik;
  if (opt.with_baseline) attach_baseline(model, xs, ls);
  return model;
}

CoxModel fit_cox_or_ridge(const Eigen::MatrixXd& x, const std::vector<SurvivalLabel>& labels, const CoxOptions& options,
                          double fallback_ridge) {
  try {
    return fit_cox(x, labels, options);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kNumerical || options.ridge >= fallback_ridge) throw;
    spdlog::warn("{}; refitting with ridge {}", e.message(), fallback_ridge);
    CoxOptions retry = options;
    retry.ridge = fallback_ridge;
    return fit_cox(x, labels, retry);
  }
}

void attach_baseline(CoxModel& model, const Eigen::MatrixXd& x, const std::vector<SurvivalLabel>& labels) {
  if (x.cols() != model.coefficients.size()) throw input_error("attach_baseline: dimension mismatch");
  if (model.centers.size() != x.cols()) model.centers = x.colwise().mean().transpose();
  Eigen::VectorXd eta = (x.rowwise() - model.centers.transpose()) * model.coefficients;
  Eigen::VectorXd r = eta.array().exp();

  auto order = by_time_desc(labels);
  const auto n = labels.size();
  // Walk times in decreasing order accumulating the risk-set sum; record per
  // distinct event time the risk sum and the risks of those who die there.
  struct EventTime {
    double time;
    double risk_sum;
    std::vector<double> dying;
  };
  std::vector<EventTime> events;
  double risk_sum = 0.0;
  for (std::size_t a = 0; a < n;) {
    std::size_t b = a;
    const double t = labels[order[a]].time;
    std::vector<double> dying;
    while (b < n && labels[order[b]].time == t) {
      risk_sum += r[static_cast<Eigen::Index>(order[b])];
      if (labels[order[b]].event()) dying.push_back(r[static_cast<Eigen::Index>(order[b])]);
      ++b;
    }
    if (!dying.empty()) events.push_back({t, risk_sum, std::move(dying)});
    a = b;
  }
  std::reverse(events.begin(), events.end());

  model.baseline_times.clear();
  model.baseline_survival.clear();
  double s = 1.0;
  for (const auto& e : events) {
    double dying_sum = std::accumulate(e.dying.begin(), e.dying.end(), 0.0);
    double alpha;
    if (dying_sum >= e.risk_sum * (1.0 - 1e-15)) {
      alpha = 0.0;  // everyone still at risk dies here
    } else if (e.dying.size() == 1) {
      alpha = std::pow(1.0 - e.dying[0] / e.risk_sum, 1.0 / e.dying[0]);
    } else {
      // sum_D r_i / (1 - alpha^r_i) = risk_sum is increasing in alpha on (0,1).
      double lo = 0.0, hi = 1.0;
      for (int k = 0; k < 200 && hi - lo > 1e-17; ++k) {
        double mid = 0.5 * (lo + hi);
        double f = -e.risk_sum;
        for (double ri : e.dying) f += ri / (1.0 - std::pow(mid, ri));
        (f > 0.0 ? hi : lo) = mid;
      }
      alpha = 0.5 * (lo + hi);
    }
    s *= alpha;
    model.baseline_times.push_back(e.time);
    model.baseline_survival.push_back(s);
  }
  model.horizon = integration_horizon(labels);
}

double cox_risk(const CoxModel& model, const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (x.size() != model.coefficients.size())
    throw input_error("cox_risk: expected " + std::to_string(model.coefficients.size()) + " features, got " +
                      std::to_string(x.size()));
  return x.dot(model.coefficients);
}

Eigen::VectorXd cox_risks(const CoxModel& model, const Eigen::MatrixXd& x) {
  if (x.cols() != model.coefficients.size()) throw input_error("cox_risks: dimension mismatch");
  return x * model.coefficients;
}

SurvivalCurve cox_curve(const CoxModel& model, const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (!model.has_baseline()) throw input_error("cox_curve: model has no baseline survival");
  if (x.size() != model.coefficients.size()) throw input_error("cox_curve: dimension mismatch");
  const double r = std::exp((x - model.centers).dot(model.coefficients));
  SurvivalCurve c;
  c.horizon = model.horizon;
  c.times.push_back(0.0);
  c.values.push_back(1.0);
  for (std::size_t k = 0; k < model.baseline_times.size(); ++k) {
    c.times.push_back(model.baseline_times[k]);
    c.values.push_back(std::min(c.values.back(), std::pow(model.baseline_survival[k], r)));
  }
  return c;
}

WaldTest univariate_cox_wald(const Eigen::Ref<const Eigen::VectorXd>& covariate, const std::vector<SurvivalLabel>& labels) {
  Eigen::MatrixXd x = covariate;
  WaldTest t;
  if (!(x.maxCoeff() > x.minCoeff())) return t;
  CoxOptions opt;
  opt.with_baseline = false;
  opt.max_scaled_coefficient = std::numeric_limits<double>::infinity();
  CoxModel m = fit_cox(x, labels, opt);
  Eigen::MatrixXd xc = x.rowwise() - m.centers.transpose();
  Derivatives d = breslow(xc, labels, m.coefficients, true);
  double information = -d.hessian(0, 0);
  t.coefficient = m.coefficients[0];
  if (!(information > 0.0)) return t;
  t.standard_error = 1.0 / std::sqrt(information);
  t.p_value = std::erfc(std::abs(t.coefficient / t.standard_error) / std::sqrt(2.0));
  return t;
}

void to_json(Json& j, const CoxModel& m) {
  j = Json{{"coefficients", vector_to_json(m.coefficients)},
           {"ridge", m.ridge},
           {"centers", vector_to_json(m.centers)},
           {"baseline_times", m.baseline_times},
           {"baseline_survival", m.baseline_survival},
           {"horizon", m.horizon},
           {"iterations", m.iterations},
           {"log_partial_likelihood", m.log_partial_likelihood}};
}

void from_json(const Json& j, CoxModel& m) {
  m.coefficients = vector_from_json(j.at("coefficients"));
  m.ridge = j.at("ridge").get<double>();
  m.centers = vector_from_json(j.at("centers"));
  m.baseline_times = j.at("baseline_times").get<std::vector<double>>();
  m.baseline_survival = j.at("baseline_survival").get<std::vector<double>>();
  m.horizon = j.at("horizon").get<double>();
  m.iterations = j.at("iterations").get<int>();
  m.log_partial_likelihood = j.at("log_partial_likelihood").get<double>();
}

}  // namespace topicsurv::survival
