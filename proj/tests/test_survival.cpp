#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "topicsurv/eval.hpp"
#include "topicsurv/rng.hpp"
#include "topicsurv/survival.hpp"
#include "topicsurv/synthetic.hpp"

using namespace topicsurv;
using namespace topicsurv::survival;

namespace {

// Breslow partial likelihood by direct enumeration of risk sets.
double brute_partial_likelihood(const Eigen::MatrixXd& x, const std::vector<SurvivalLabel>& l, const Eigen::VectorXd& w) {
  double out = 0.0;
  for (std::size_t i = 0; i < l.size(); ++i) {
    if (!l[i].event()) continue;
    double denom = 0.0;
    for (std::size_t j = 0; j < l.size(); ++j)
      if (l[j].time >= l[i].time) denom += std::exp(x.row(Eigen::Index(j)).dot(w));
    out += x.row(Eigen::Index(i)).dot(w) - std::log(denom);
  }
  return out;
}

double grid_argmax(const Eigen::MatrixXd& x, const std::vector<SurvivalLabel>& l, double lo, double hi, double step) {
  double best = lo, best_v = -1e300;
  Eigen::VectorXd w(1);
  for (double b = lo; b <= hi + 1e-12; b += step) {
    w[0] = b;
    double v = brute_partial_likelihood(x, l, w);
    if (v > best_v) {
      best_v = v;
      best = b;
    }
  }
  return best;
}

// Product-limit estimate at each distinct death time.
std::map<double, double> brute_km(const std::vector<SurvivalLabel>& l) {
  std::map<double, double> out;
  std::vector<double> deaths;
  for (const auto& x : l)
    if (x.event()) deaths.push_back(x.time);
  std::sort(deaths.begin(), deaths.end());
  deaths.erase(std::unique(deaths.begin(), deaths.end()), deaths.end());
  double s = 1.0;
  for (double t : deaths) {
    double at_risk = 0, d = 0;
    for (const auto& x : l) {
      at_risk += x.time >= t;
      d += x.time == t && x.event();
    }
    s *= 1.0 - d / at_risk;
    out[t] = s;
  }
  return out;
}

Eigen::MatrixXd random_matrix(int r, int c, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> n;
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

std::vector<SurvivalLabel> random_labels(int n, std::uint64_t seed, double censored = 0.3) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u;
  std::vector<SurvivalLabel> l;
  for (int i = 0; i < n; ++i) l.push_back({1.0 + std::floor(100.0 * u(rng)), u(rng) < censored ? 0 : 1});
  return l;
}

}  // namespace

TEST_SUITE("survival") {

// ---------------------------------------------------------------- Cox

TEST_CASE("partial likelihood at zero is minus the sum of log risk-set sizes") {
  auto l = random_labels(40, 1);
  Eigen::MatrixXd x = random_matrix(40, 2, 2);
  double expected = 0.0;
  for (const auto& a : l)
    if (a.event()) {
      double size = 0;
      for (const auto& b : l) size += b.time >= a.time;
      expected -= std::log(size);
    }
  CHECK(cox_log_partial_likelihood(x, l, Eigen::VectorXd::Zero(2)) == doctest::Approx(expected).epsilon(1e-12));
  Eigen::VectorXd w(2);
  w << 0.3, -0.8;
  CHECK(cox_log_partial_likelihood(x, l, w) == doctest::Approx(brute_partial_likelihood(x, l, w)).epsilon(1e-12));
}

TEST_CASE("binary covariate estimate matches a grid search") {
  auto ph = synthetic::proportional_hazards(200, 0.7, 0.3, 17, true);
  auto m = fit_cox(ph.x, ph.labels);
  double grid = grid_argmax(ph.x, ph.labels, -1.0, 2.5, 1e-3);
  CHECK(std::abs(m.coefficients[0] - grid) <= 1e-3);
}

TEST_CASE("tied times use Breslow and still match the grid search") {
  auto ph = synthetic::proportional_hazards(150, -0.4, 0.2, 5);
  for (auto& l : ph.labels) l.time = std::ceil(l.time / 200.0);
  auto m = fit_cox(ph.x, ph.labels);
  CHECK(std::abs(m.coefficients[0] - grid_argmax(ph.x, ph.labels, -2.0, 1.0, 1e-3)) <= 1e-3);
}

TEST_CASE("constant covariate under ridge gets exactly zero") {
  auto ph = synthetic::proportional_hazards(50, 0.7, 0.3, 3);
  Eigen::MatrixXd x(50, 2);
  x.col(0) = ph.x.col(0);
  x.col(1).setConstant(4.2);
  CoxOptions opt;
  opt.ridge = 0.1;
  auto m = fit_cox(x, ph.labels, opt);
  CHECK(m.coefficients[1] == 0.0);
}

TEST_CASE("ridge shrinks toward zero") {
  auto ph = synthetic::proportional_hazards(100, 1.0, 0.3, 4);
  CoxOptions opt;
  double last = std::abs(fit_cox(ph.x, ph.labels).coefficients[0]);
  for (double lambda : {0.1, 1.0, 10.0, 100.0}) {
    opt.ridge = lambda;
    double b = std::abs(fit_cox(ph.x, ph.labels, opt).coefficients[0]);
    CHECK(b < last);
    last = b;
  }
}

TEST_CASE("risk is linear and hazard ratios follow") {
  auto ph = synthetic::proportional_hazards(80, 0.7, 0.3, 6);
  Eigen::MatrixXd x(80, 2);
  x << ph.x, random_matrix(80, 1, 9);
  auto m = fit_cox(x, ph.labels);
  Eigen::VectorXd zero = Eigen::VectorXd::Zero(2), a(2), b(2);
  a << 1.0, -0.5;
  b << -0.3, 2.0;
  CHECK(cox_risk(m, zero) == 0.0);
  CHECK(cox_risk(m, a) - cox_risk(m, b) == doctest::Approx((a - b).dot(m.coefficients)));
  Eigen::MatrixXd shifted = x.array() + 3.0;
  CHECK(eval::concordance(cox_risks(m, x), ph.labels).value == eval::concordance(cox_risks(m, shifted), ph.labels).value);
  Eigen::VectorXd bad(3);
  CHECK_THROWS_AS(cox_risk(m, bad), Error);
}

TEST_CASE("fit depends on event times only through their ranks") {
  auto ph = synthetic::proportional_hazards(120, 0.7, 0.3, 8);
  auto cubed = ph.labels;
  for (auto& l : cubed) l.time = std::pow(l.time, 3.0);
  CHECK(std::abs(fit_cox(ph.x, ph.labels).coefficients[0] - fit_cox(ph.x, cubed).coefficients[0]) < 1e-6);
}

TEST_CASE("permuting patients leaves Cox and MTLR fits unchanged") {
  auto ph = synthetic::proportional_hazards(90, 0.7, 0.3, 12);
  Eigen::MatrixXd x(90, 2);
  x << ph.x, random_matrix(90, 1, 1);
  std::vector<Eigen::Index> perm(90);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), Rng(2));
  Eigen::MatrixXd px(90, 2);
  std::vector<SurvivalLabel> pl;
  for (Eigen::Index i = 0; i < 90; ++i) {
    px.row(i) = x.row(perm[std::size_t(i)]);
    pl.push_back(ph.labels[std::size_t(perm[std::size_t(i)])]);
  }
  auto a = fit_cox(x, ph.labels), b = fit_cox(px, pl);
  CHECK((a.coefficients - b.coefficients).lpNorm<Eigen::Infinity>() <= 1e-6);
  auto ma = fit_mtlr(x, ph.labels), mb = fit_mtlr(px, pl);
  CHECK((ma.weights - mb.weights).lpNorm<Eigen::Infinity>() <= 1e-6);
  CHECK((ma.biases - mb.biases).lpNorm<Eigen::Infinity>() <= 1e-6);
}

TEST_CASE("separable data without ridge is reported as divergence") {
  std::vector<SurvivalLabel> l;
  Eigen::MatrixXd x(20, 1);
  for (int i = 0; i < 20; ++i) {
    l.push_back({double(i + 1), 1});
    x(i, 0) = -double(i);  // earlier death always has the larger covariate
  }
  try {
    fit_cox(x, l);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kNumerical);
    CHECK(std::string(e.what()).find("ridge") != std::string::npos);
  }
  CoxOptions opt;
  opt.ridge = 0.1;
  CHECK(std::isfinite(fit_cox(x, l, opt).coefficients[0]));
  CHECK(std::isfinite(fit_cox_or_ridge(x, l).coefficients[0]));
}

TEST_CASE("no uncensored instance is an input error") {
  std::vector<SurvivalLabel> l(5, SurvivalLabel{3.0, 0});
  CHECK_THROWS_AS(fit_cox(random_matrix(5, 1, 1), l), Error);
}

TEST_CASE("with zero coefficients the Cox curve is the Kaplan-Meier curve") {
  auto l = random_labels(60, 21);  // integer times with ties
  Eigen::MatrixXd x = Eigen::MatrixXd::Constant(60, 1, 1.0);
  auto m = fit_cox(x, l);
  REQUIRE(m.coefficients[0] == 0.0);
  auto curve = cox_curve(m, x.row(0).transpose());
  auto km = brute_km(l);
  REQUIRE(curve.times.size() == km.size() + 1);
  std::size_t k = 1;
  for (const auto& [t, s] : km) {
    CHECK(curve.times[k] == t);
    CHECK(std::abs(curve.values[k] - s) < 1e-6);
    ++k;
  }
}

TEST_CASE("Cox curves start at one, decrease, and order by risk") {
  auto ph = synthetic::proportional_hazards(100, 0.8, 0.3, 31);
  auto m = fit_cox(ph.x, ph.labels);
  Eigen::VectorXd lo(1), hi(1);
  lo << -1.0;
  hi << 1.5;
  auto a = cox_curve(m, lo), b = cox_curve(m, hi);
  validate(a);
  validate(b);
  for (std::size_t k = 0; k < a.times.size(); ++k) CHECK(b.values[k] <= a.values[k]);
}

TEST_CASE("Cox risk and curve-area risk agree in ordering") {
  auto ph = synthetic::proportional_hazards(80, 0.8, 0.3, 32);
  Eigen::MatrixXd x(80, 2);
  x << ph.x, random_matrix(80, 1, 3);
  auto m = fit_cox(x, ph.labels);
  std::vector<double> linear, area;
  for (Eigen::Index i = 0; i < 80; ++i) {
    linear.push_back(cox_risk(m, Eigen::VectorXd(x.row(i).transpose())));
    area.push_back(risk_from_curve(cox_curve(m, x.row(i).transpose())));
  }
  // Treat the area ranking as survival times: perfect agreement gives 1.
  std::vector<SurvivalLabel> pseudo;
  for (double a : area) pseudo.push_back({-a, 1});
  CHECK(eval::concordance(linear, pseudo).value == 1.0);
}

TEST_CASE("Cox model JSON round trip") {
  auto ph = synthetic::proportional_hazards(40, 0.5, 0.3, 2);
  auto m = fit_cox(ph.x, ph.labels);
  Json j = m;
  CHECK(j.get<CoxModel>() == m);
}

TEST_CASE("univariate Wald test flags a strong covariate") {
  auto ph = synthetic::proportional_hazards(500, 1.0, 0.3, 41);
  auto t = univariate_cox_wald(ph.x.col(0), ph.labels);
  CHECK(t.p_value < 1e-4);
  // Against the definition: coefficient over sqrt(1 / observed information).
  double h = 1e-4;
  Eigen::VectorXd w(1);
  auto pl = [&](double b) {
    w[0] = b;
    return brute_partial_likelihood(ph.x, ph.labels, w);
  };
  double info = -(pl(t.coefficient + h) - 2 * pl(t.coefficient) + pl(t.coefficient - h)) / (h * h);
  CHECK(t.standard_error == doctest::Approx(1.0 / std::sqrt(info)).epsilon(1e-3));
  Eigen::VectorXd constant = Eigen::VectorXd::Constant(500, 2.0);
  CHECK(univariate_cox_wald(constant, ph.labels).p_value == 1.0);
}

// ---------------------------------------------------------------- Kaplan-Meier

TEST_CASE("Kaplan-Meier examples") {
  auto km = kaplan_meier({{1, 1}, {2, 1}, {3, 1}, {4, 1}});
  CHECK(km.values == std::vector<double>{0.75, 0.5, 0.25, 0.0});
  CHECK(km.inverse(0.5) == 2.0);
  auto b = kaplan_meier({{1, 1}, {2, 0}, {3, 1}});
  CHECK(b(1.0) == doctest::Approx(2.0 / 3.0));
  CHECK(b(3.0) == 0.0);
  auto c = kaplan_meier({{5, 1}, {6, 0}, {7, 0}, {9, 0}});
  CHECK(c(5.0) == 0.75);
  CHECK(c(0.0) == 1.0);
  CHECK_THROWS_AS(kaplan_meier({{1, 0}}), Error);
}

TEST_CASE("Kaplan-Meier without censoring equals the empirical survival function") {
  auto l = random_labels(73, 5, 0.0);
  auto km = kaplan_meier(l);
  for (std::size_t k = 0; k < km.times.size(); ++k) {
    double alive = 0;
    for (const auto& x : l) alive += x.time > km.times[k];
    CHECK(km.values[k] == alive / 73.0);
  }
  auto cens = random_labels(73, 6, 0.4);
  auto kc = kaplan_meier(cens);
  auto oracle = brute_km(cens);
  for (std::size_t k = 0; k < kc.times.size(); ++k) CHECK(kc.values[k] == doctest::Approx(oracle.at(kc.times[k])).epsilon(1e-12));
}

// ---------------------------------------------------------------- curves

TEST_CASE("unit rectangle curve has risk minus ten") {
  SurvivalCurve c{{0.0, 10.0}, {1.0, 1.0}, 10.0};
  CHECK(risk_from_curve(c) == -10.0);
  CHECK(c(10.5) == 0.0);
  SurvivalCurve d{{0.0, 4.0, 10.0}, {1.0, 0.5, 0.5}, 10.0};
  CHECK(risk_from_curve(d) >= risk_from_curve(c));
  CHECK(curve_to_csv(d) == "time,survival\n0,1\n4,0.5\n10,0.5\n");
  SurvivalCurve e{{0.0, 4.0}, {1.0, 0.5}, 10.0};
  CHECK(curve_to_csv(e) == curve_to_csv(d));
  auto back = curve_from_csv(curve_to_csv(e), "e");
  CHECK(back.horizon == 10.0);
  CHECK(back.area() == e.area());
  for (double t : {0.0, 2.0, 4.0, 7.0, 10.0, 11.0}) CHECK(back(t) == e(t));
  CHECK_THROWS_AS(curve_from_csv("t,s\n0,1\n", "bad"), Error);
}

TEST_CASE("zero-weight MTLR curve on grid 1..4 integrates by hand") {
  MtlrModel m;
  m.time_points = {1, 2, 3, 4};
  m.weights = Eigen::MatrixXd::Zero(4, 1);
  m.biases = Eigen::VectorXd::Zero(4);
  m.horizon = 6.0;
  Eigen::VectorXd x = Eigen::VectorXd::Zero(1);
  auto c = mtlr_curve(m, x);
  for (int k = 0; k <= 4; ++k) CHECK(c.values[std::size_t(k)] == doctest::Approx(1.0 - k / 5.0).epsilon(1e-12));
  // Each interval holds 1/5: midpoints 0.5, 1.5, 2.5, 3.5, and the last mass sits at the horizon.
  double mean = 0.2 * (0.5 + 1.5 + 2.5 + 3.5) + 0.2 * 6.0;
  CHECK(-risk_from_curve(c) == doctest::Approx(mean).epsilon(1e-12));
}

// ---------------------------------------------------------------- MTLR

TEST_CASE("MTLR analytic gradient matches central differences") {
  Eigen::MatrixXd x = random_matrix(20, 3, 4);
  auto l = random_labels(20, 8, 0.4);
  auto grid = mtlr_time_grid(l, 4);
  MtlrObjective obj(x, l, grid, 0.7);
  Rng rng(10);
  std::normal_distribution<double> n;
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::VectorXd p(obj.num_parameters());
    for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = n(rng);
    Eigen::VectorXd g;
    obj.value_and_gradient(p, &g);
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      Eigen::VectorXd a = p, b = p;
      a[i] += 1e-5;
      b[i] -= 1e-5;
      double fd = (obj.value(a) - obj.value(b)) / 2e-5;
      worst = std::max(worst, std::abs(fd - g[i]) / std::max(1.0, std::abs(fd)));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("MTLR zero weights give uniform intervals") {
  MtlrModel m;
  m.time_points = {3, 5, 8, 13, 21, 34};
  m.weights = Eigen::MatrixXd::Zero(6, 2);
  m.biases = Eigen::VectorXd::Zero(6);
  Eigen::VectorXd x(2);
  x << 4.0, -9.0;
  auto p = mtlr_interval_probabilities(m, x);
  REQUIRE(p.size() == 7);
  for (Eigen::Index k = 0; k < 7; ++k) CHECK(std::abs(p[k] - 1.0 / 7.0) <= 1e-12);
}

TEST_CASE("MTLR probabilities normalize and curves decrease for random weights") {
  Rng rng(3);
  std::normal_distribution<double> n(0.0, 3.0);
  MtlrModel m;
  m.time_points = {1, 2, 4, 8, 16};
  m.horizon = 30;
  for (int draw = 0; draw < 1000; ++draw) {
    m.weights = Eigen::MatrixXd(5, 2);
    m.biases = Eigen::VectorXd(5);
    for (Eigen::Index i = 0; i < 10; ++i) m.weights.data()[i] = n(rng);
    for (Eigen::Index i = 0; i < 5; ++i) m.biases[i] = n(rng);
    Eigen::VectorXd x(2);
    x << n(rng), n(rng);
    REQUIRE(std::abs(mtlr_interval_probabilities(m, x).sum() - 1.0) <= 1e-12);
    auto c = mtlr_curve(m, x);
    REQUIRE(c.values.front() == 1.0);
    for (std::size_t k = 1; k < c.values.size(); ++k) REQUIRE(c.values[k] <= c.values[k - 1]);
  }
}

TEST_CASE("MTLR objective is convex along random chords") {
  Eigen::MatrixXd x = random_matrix(30, 2, 5);
  auto l = random_labels(30, 9);
  MtlrObjective obj(x, l, mtlr_time_grid(l, 5), 1.0);
  Rng rng(6);
  std::normal_distribution<double> n(0.0, 2.0);
  for (int t = 0; t < 200; ++t) {
    Eigen::VectorXd a(obj.num_parameters()), b(obj.num_parameters());
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      a[i] = n(rng);
      b[i] = n(rng);
    }
    REQUIRE(obj.value(0.5 * (a + b)) <= 0.5 * (obj.value(a) + obj.value(b)) + 1e-9);
  }
}

TEST_CASE("MTLR time grid and intervals") {
  std::vector<SurvivalLabel> l{{10, 1}, {20, 1}, {30, 1}, {40, 1}, {50, 0}};
  auto g = mtlr_time_grid(l, 3);
  CHECK(g == std::vector<double>{17.5, 25.0, 32.5});
  CHECK(mtlr_interval({25.0, 1}, g) == 1);   // deaths: #{t_j < d}
  CHECK(mtlr_interval({25.0, 0}, g) == 2);   // censored: #{t_j <= c}
  CHECK(mtlr_interval({5.0, 1}, g) == 0);
  CHECK(mtlr_interval({99.0, 0}, g) == 3);
  CHECK_THROWS_AS(mtlr_time_grid({{1, 0}}, 2), Error);
}

TEST_CASE("very strong regularization flattens MTLR") {
  auto ph = synthetic::proportional_hazards(100, 1.0, 0.3, 14);
  MtlrOptions opt;
  opt.c = 1e6;
  auto m = fit_mtlr(ph.x, ph.labels, opt);
  CHECK(m.weights.lpNorm<Eigen::Infinity>() < 1e-3);
  Eigen::VectorXd a(1), b(1);
  a << -2.0;
  b << 2.0;
  auto ca = mtlr_curve(m, a), cb = mtlr_curve(m, b);
  for (std::size_t k = 0; k < ca.values.size(); ++k) CHECK(std::abs(ca.values[k] - cb.values[k]) < 1e-2);
}

TEST_CASE("MTLR separates an early and a late group perfectly") {
  std::vector<SurvivalLabel> l;
  Eigen::MatrixXd x(40, 1);
  for (int i = 0; i < 40; ++i) {
    bool early = i % 2 == 0;
    x(i, 0) = early ? 1.0 : -1.0;
    l.push_back({early ? 1.0 + 0.01 * i : 100.0 + i, 1});
  }
  auto m = fit_mtlr(x, l);
  std::vector<double> risk;
  for (Eigen::Index i = 0; i < 40; ++i) risk.push_back(risk_from_curve(mtlr_curve(m, x.row(i).transpose())));
  // Pairs within a group are tied at 0.5; across groups ordering is right.
  int concordant = 0, pairs = 0;
  for (int i = 0; i < 40; ++i)
    for (int j = 0; j < 40; ++j)
      if (x(i, 0) > 0 && x(j, 0) < 0) {
        ++pairs;
        concordant += risk[std::size_t(i)] > risk[std::size_t(j)];
      }
  CHECK(concordant == pairs);
}

TEST_CASE("MTLR input checks") {
  auto ph = synthetic::proportional_hazards(10, 0.5, 0.3, 1);
  MtlrOptions opt;
  opt.c = 0.0;
  CHECK_THROWS_AS(fit_mtlr(ph.x, ph.labels, opt), Error);
  auto three = std::vector<SurvivalLabel>(ph.labels.begin(), ph.labels.begin() + 3);
  CHECK_THROWS_AS(fit_mtlr(ph.x.topRows(3), three), Error);
  Eigen::MatrixXd bad = ph.x;
  bad(2, 0) = std::nan("");
  try {
    fit_mtlr(bad, ph.labels);
    FAIL("expected failure");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("feature 0") != std::string::npos);
  }
}

TEST_CASE("default MTLR grid has floor(sqrt(n)) points") {
  auto ph = synthetic::proportional_hazards(50, 0.5, 0.0, 1);
  CHECK(fit_mtlr(ph.x, ph.labels).m() == 7);
}

}  // TEST_SUITE
