#pragma once

#include <limits>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "topicsurv/core.hpp"
#include "topicsurv/persist.hpp"

namespace topicsurv::survival {

// ---------------------------------------------------------------------------
// Survival curves
//
// A curve is a list of knots (times[0] == 0, values[0] == 1). Between knots it
// is linear, after the last knot it stays at the last value until `horizon`,
// where the remaining mass is placed. Both the evaluation and the area used for
// risk scores follow this convention, for Cox and MTLR curves alike.

struct SurvivalCurve {
  std::vector<double> times;
  std::vector<double> values;
  double horizon = 0.0;

  double operator()(double t) const;
  /// Integral of the curve over [0, horizon], i.e. the predicted mean time.
  double area() const;
};

void validate(const SurvivalCurve& curve);

/// Negative expected survival time.
double risk_from_curve(const SurvivalCurve& curve);

/// Two-column CSV "time,survival". The last row sits at the horizon, so the
/// file alone determines the curve.
std::string curve_to_csv(const SurvivalCurve& curve);
/// Inverse of curve_to_csv; `where` names the source in error messages.
SurvivalCurve curve_from_csv(std::string_view text, const std::string& where);

/// Horizon used for curve integration: 1.5 x the largest observed time.
double integration_horizon(const std::vector<SurvivalLabel>& labels);

struct KmCurve {
  std::vector<double> times;   // distinct event times
  std::vector<double> values;  // S just after each event time

  double operator()(double t) const;
  /// Earliest event time at which the curve is <= p; +inf if it never is.
  double inverse(double p) const;
};

KmCurve kaplan_meier(const std::vector<SurvivalLabel>& labels);

// ---------------------------------------------------------------------------
// Cox proportional hazards

struct CoxModel {
  static constexpr std::string_view kArtifactKind = "CoxModel";

  Eigen::VectorXd coefficients;
  double ridge = 0.0;
  // Kalbfleisch-Prentice baseline for a patient at `centers`; empty if absent.
  Eigen::VectorXd centers;
  std::vector<double> baseline_times;
  std::vector<double> baseline_survival;
  double horizon = 0.0;

  int iterations = 0;
  double log_partial_likelihood = 0.0;

  bool has_baseline() const noexcept { return !baseline_times.empty(); }
  bool operator==(const CoxModel&) const = default;
};

void to_json(Json& j, const CoxModel& m);
void from_json(const Json& j, CoxModel& m);

/// Breslow log partial likelihood at coefficients w.
double cox_log_partial_likelihood(const Eigen::MatrixXd& x, const std::vector<SurvivalLabel>& labels,
                                  const Eigen::VectorXd& w);

struct CoxOptions {
  double ridge = 0.0;              // maximizes log PL - ridge * ||w||^2
  int max_iterations = 100;
  double gradient_tolerance = 1e-8;
  bool with_baseline = true;
  double max_scaled_coefficient = 25.0;  // |w_j| * sd(x_j) beyond this at ridge 0 counts as divergence
};

/// Newton-Raphson with step halving. Columns with zero variance keep a zero
/// coefficient; aliased columns are resolved by a minimum-norm step.
CoxModel fit_cox(const Eigen::MatrixXd& x, const std::vector<SurvivalLabel>& labels, const CoxOptions& options = {});

/// fit_cox at the requested ridge; if that diverges, refits with
/// `fallback_ridge` and logs a warning.
CoxModel fit_cox_or_ridge(const Eigen::MatrixXd& x, const std::vector<SurvivalLabel>& labels,
                          const CoxOptions& options = {}, double fallback_ridge = 1e-4);

/// Adds the Kalbfleisch-Prentice baseline computed on the training data.
void attach_baseline(CoxModel& model, const Eigen::MatrixXd& x, const std::vector<SurvivalLabel>& labels);

double cox_risk(const CoxModel& model, const Eigen::Ref<const Eigen::VectorXd>& x);
/// Risks of every row.
Eigen::VectorXd cox_risks(const CoxModel& model, const Eigen::MatrixXd& x);

/// S(t|x) = S0(t)^exp(x'w), evaluated at the baseline's event times.
SurvivalCurve cox_curve(const CoxModel& model, const Eigen::Ref<const Eigen::VectorXd>& x);

struct WaldTest {
  double coefficient = 0.0;
  double standard_error = 0.0;
  double p_value = 1.0;  // two-sided
};

/// Univariate Cox fit of survival on one covariate.
WaldTest univariate_cox_wald(const Eigen::Ref<const Eigen::VectorXd>& covariate, const std::vector<SurvivalLabel>& labels);

// ---------------------------------------------------------------------------
// Multi-task logistic regression

struct MtlrModel {
  static constexpr std::string_view kArtifactKind = "MtlrModel";

  std::vector<double> time_points;  // t_1 < ... < t_m
  Eigen::MatrixXd weights;          // m x r
  Eigen::VectorXd biases;           // m
  double c = 1.0;
  double horizon = 0.0;

  int m() const noexcept { return static_cast<int>(time_points.size()); }
  bool operator==(const MtlrModel&) const = default;
};

void to_json(Json& j, const MtlrModel& m);
void from_json(const Json& j, MtlrModel& m);

/// m time points at equally spaced quantiles (k / (m+1), k = 1..m) of the
/// uncensored event times, duplicates removed.
std::vector<double> mtlr_time_grid(const std::vector<SurvivalLabel>& labels, int m);

/// Interval index of an observation: deaths land in #{t_j < d}, censored
/// patients in #{t_j <= c}.
int mtlr_interval(const SurvivalLabel& label, const std::vector<double>& time_points);

/// Regularized negative log-likelihood over a fixed grid. Parameters are laid
/// out as m rows of r weights followed by the m biases.
class MtlrObjective {
 public:
  MtlrObjective(const Eigen::MatrixXd& x, const std::vector<SurvivalLabel>& labels, std::vector<double> time_points,
                double c);

  int num_parameters() const noexcept { return m_ * (r_ + 1); }
  double value(const Eigen::VectorXd& params) const;
  double value_and_gradient(const Eigen::VectorXd& params, Eigen::VectorXd* gradient) const;

  Eigen::VectorXd pack(const Eigen::MatrixXd& weights, const Eigen::VectorXd& biases) const;
  void unpack(const Eigen::VectorXd& params, Eigen::MatrixXd& weights, Eigen::VectorXd& biases) const;

 private:
  const Eigen::MatrixXd& x_;
  std::vector<int> interval_;
  std::vector<bool> event_;
  std::vector<double> time_points_;
  double c_;
  int m_;
  int r_;
};

struct MtlrOptions {
  double c = 1.0;
  int m = 0;  // 0 = floor(sqrt(n))
  double gradient_tolerance = 1e-6;
  int max_iterations = 5000;
};

MtlrModel fit_mtlr(const Eigen::MatrixXd& x, const std::vector<SurvivalLabel>& labels, const MtlrOptions& options = {});

/// Probabilities of the m+1 intervals [0,t_1), [t_1,t_2), ..., [t_m, inf).
Eigen::VectorXd mtlr_interval_probabilities(const MtlrModel& model, const Eigen::Ref<const Eigen::VectorXd>& x);

SurvivalCurve mtlr_curve(const MtlrModel& model, const Eigen::Ref<const Eigen::VectorXd>& x);

}  // namespace topicsurv::survival
