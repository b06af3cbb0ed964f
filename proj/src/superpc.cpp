#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Eigenvalues>
#include <spdlog/spdlog.h>

#include "topicsurv/csv.hpp"
#include "topicsurv/eval.hpp"
#include "topicsurv/parallel.hpp"
#include "topicsurv/rng.hpp"
#include "topicsurv/superpc.hpp"
#include "topicsurv/survival.hpp"

namespace topicsurv::superpc {

namespace {

Eigen::MatrixXd select_rows(const Eigen::MatrixXd& m, const std::vector<std::size_t>& idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(static_cast<Eigen::Index>(idx[r]));
  return out;
}

std::vector<double> wald_p_values(const Eigen::MatrixXd& scores, const std::vector<SurvivalLabel>& labels,
                                  unsigned workers) {
  std::vector<double> p(static_cast<std::size_t>(scores.cols()), 1.0);
  parallel_for(p.size(), workers, [&](std::size_t k) {
    p[k] = survival::univariate_cox_wald(scores.col(static_cast<Eigen::Index>(k)), labels).p_value;
  });
  return p;
}

std::vector<int> passing(const std::vector<double>& p, double eta) {
  std::vector<int> out;
  for (std::size_t k = 0; k < p.size(); ++k)
    if (p[k] < eta) out.push_back(static_cast<int>(k));
  return out;
}

Eigen::MatrixXd design(const Eigen::MatrixXd& scores, const std::vector<int>& keep, const Eigen::MatrixXd& clinical) {
  Eigen::MatrixXd x(scores.rows(), static_cast<Eigen::Index>(keep.size()) + clinical.cols());
  for (std::size_t c = 0; c < keep.size(); ++c) x.col(static_cast<Eigen::Index>(c)) = scores.col(keep[c]);
  if (clinical.cols() > 0) x.rightCols(clinical.cols()) = clinical;
  return x;
}

}  // namespace

PcaBasis fit_pca(const Eigen::MatrixXd& z) {
  if (z.rows() < 2 || z.cols() < 1) throw input_error("PCA needs at least 2 rows and 1 column");
  PcaBasis b;
  b.column_means = z.colwise().mean().transpose();
  Eigen::MatrixXd xc = z.rowwise() - b.column_means.transpose();
  if (xc.cwiseAbs().maxCoeff() == 0.0) throw input_error("PCA input has zero variance");
  const double denom = static_cast<double>(z.rows() - 1);

  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;  // p x r
  if (z.cols() > z.rows()) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(xc * xc.transpose());
    values = eig.eigenvalues();
    vectors = xc.transpose() * eig.eigenvectors();
    for (Eigen::Index k = 0; k < values.size(); ++k)
      vectors.col(k) /= std::sqrt(std::max(values[k], std::numeric_limits<double>::min()));
  } else {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(xc.transpose() * xc);
    values = eig.eigenvalues();
    vectors = eig.eigenvectors();
  }
  // Eigen returns ascending order.
  const double cutoff = 1e-10 * values.maxCoeff();
  std::vector<Eigen::Index> keep;
  for (Eigen::Index k = values.size() - 1; k >= 0; --k)
    if (values[k] > cutoff) keep.push_back(k);

  b.components.resize(static_cast<Eigen::Index>(keep.size()), z.cols());
  b.variances.resize(static_cast<Eigen::Index>(keep.size()));
  for (std::size_t r = 0; r < keep.size(); ++r) {
    Eigen::VectorXd v = vectors.col(keep[r]);
    // Re-orthogonalize against earlier components; the Gram route loses a little.
    for (std::size_t q = 0; q < r; ++q) v -= b.components.row(static_cast<Eigen::Index>(q)).dot(v) * b.components.row(static_cast<Eigen::Index>(q)).transpose();
    v.normalize();
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;
    b.components.row(static_cast<Eigen::Index>(r)) = v.transpose();
    b.variances[static_cast<Eigen::Index>(r)] = values[keep[r]] / denom;
  }
  return b;
}

Eigen::MatrixXd project_all(const Eigen::MatrixXd& z, const PcaBasis& b) {
  if (z.cols() != b.column_means.size())
    throw input_error("PCA: expected " + std::to_string(b.column_means.size()) + " columns, got " + std::to_string(z.cols()));
  return (z.rowwise() - b.column_means.transpose()) * b.components.transpose();
}

ScreenResult screen_components(const PcaBasis& basis, const Eigen::MatrixXd& z, const Eigen::MatrixXd& clinical_in,
                               const std::vector<SurvivalLabel>& labels, const ScreenOptions& opt) {
  if (opt.eta_grid.empty()) throw input_error("eta grid is empty");
  for (double e : opt.eta_grid)
    if (!(e > 0.0 && e < 1.0)) throw input_error("eta values must lie in (0,1)");
  if (static_cast<std::size_t>(z.rows()) != labels.size()) throw input_error("screen_components: row/label mismatch");
  const Eigen::MatrixXd clinical = clinical_in.cols() > 0 ? clinical_in : Eigen::MatrixXd(z.rows(), 0);
  std::vector<double> grid = opt.eta_grid;
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  const Eigen::MatrixXd scores = project_all(z, basis);
  const auto fold_of = stratified_folds(labels, opt.folds, derive_seed(opt.seed, {0x7063}));

  // In-fold p-values, computed once per fold and shared across eta.
  std::vector<std::vector<double>> fold_p(static_cast<std::size_t>(opt.folds));
  std::vector<std::vector<std::size_t>> train(static_cast<std::size_t>(opt.folds)), test(static_cast<std::size_t>(opt.folds));
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (int f = 0; f < opt.folds; ++f) (fold_of[i] == f ? test : train)[static_cast<std::size_t>(f)].push_back(i);
  auto pick = [&](const std::vector<std::size_t>& idx) {
    std::vector<SurvivalLabel> out;
    for (auto i : idx) out.push_back(labels[i]);
    return out;
  };
  for (int f = 0; f < opt.folds; ++f) {
    auto& tr = train[static_cast<std::size_t>(f)];
    fold_p[static_cast<std::size_t>(f)] = wald_p_values(select_rows(scores, tr), pick(tr), opt.workers);
  }

  ScreenResult result;
  result.cells.resize(grid.size() * static_cast<std::size_t>(opt.folds));
  parallel_for(result.cells.size(), opt.workers, [&](std::size_t idx) {
    const auto f = static_cast<std::size_t>(idx % static_cast<std::size_t>(opt.folds));
    const double eta = grid[idx / static_cast<std::size_t>(opt.folds)];
    auto keep = passing(fold_p[f], eta);
    Eigen::MatrixXd x = design(scores, keep, clinical);
    survival::CoxOptions cox;
    cox.with_baseline = false;
    auto model = survival::fit_cox_or_ridge(select_rows(x, train[f]), pick(train[f]), cox);
    double ci = eval::concordance(survival::cox_risks(model, select_rows(x, test[f])), pick(test[f])).value;
    result.cells[idx] = {eta, static_cast<int>(f), ci, static_cast<int>(keep.size())};
  });

  // Smallest eta wins ties: the retained sets are nested, so it is the smaller model.
  double best = -1.0;
  double best_eta = grid.front();
  for (std::size_t e = 0; e < grid.size(); ++e) {
    double mean = 0.0;
    for (int f = 0; f < opt.folds; ++f) mean += result.cells[e * static_cast<std::size_t>(opt.folds) + static_cast<std::size_t>(f)].concordance;
    mean /= opt.folds;
    if (mean > best) {
      best = mean;
      best_eta = grid[e];
    }
  }

  result.basis = basis;
  result.basis.p_values = wald_p_values(scores, labels, opt.workers);
  result.basis.eta = best_eta;
  result.basis.retained = passing(result.basis.p_values, best_eta);
  if (result.basis.retained.empty()) spdlog::warn("no principal component passes eta = {}", best_eta);
  return result;
}

Eigen::VectorXd use_basis_pca(const Eigen::Ref<const Eigen::VectorXd>& x, const PcaBasis& b) {
  if (x.size() != b.column_means.size())
    throw input_error("PCA: expected " + std::to_string(b.column_means.size()) + " genes, got " + std::to_string(x.size()));
  Eigen::VectorXd centered = x - b.column_means;
  Eigen::VectorXd out(static_cast<Eigen::Index>(b.retained.size()));
  for (std::size_t k = 0; k < b.retained.size(); ++k)
    out[static_cast<Eigen::Index>(k)] = b.components.row(b.retained[k]).dot(centered);
  return out;
}

Eigen::MatrixXd retained_scores(const Eigen::MatrixXd& z, const PcaBasis& b) {
  Eigen::MatrixXd all = project_all(z, b);
  Eigen::MatrixXd out(z.rows(), static_cast<Eigen::Index>(b.retained.size()));
  for (std::size_t k = 0; k < b.retained.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = all.col(b.retained[k]);
  return out;
}

std::string screening_report_csv(const PcaBasis& b) {
  std::string out = "component,variance_share,p_value,retained\n";
  const double total = b.variances.sum();
  for (Eigen::Index k = 0; k < b.rank(); ++k) {
    bool kept = std::find(b.retained.begin(), b.retained.end(), static_cast<int>(k)) != b.retained.end();
    double p = static_cast<std::size_t>(k) < b.p_values.size() ? b.p_values[static_cast<std::size_t>(k)] : 1.0;
    out += std::to_string(k + 1) + "," + csv::format_double(b.variances[k] / total) + "," + csv::format_double(p) + "," +
           (kept ? "1" : "0") + "\n";
  }
  return out;
}

void to_json(Json& j, const PcaBasis& b) {
  j = Json{{"components", matrix_to_json(b.components)},
           {"column_means", vector_to_json(b.column_means)},
           {"variances", vector_to_json(b.variances)},
           {"p_values", b.p_values},
           {"retained", b.retained},
           {"eta", b.eta}};
}

void from_json(const Json& j, PcaBasis& b) {
  b.components = matrix_from_json(j.at("components"));
  b.column_means = vector_from_json(j.at("column_means"));
  b.variances = vector_from_json(j.at("variances"));
  b.p_values = j.at("p_values").get<std::vector<double>>();
  b.retained = j.at("retained").get<std::vector<int>>();
  b.eta = j.at("eta").get<double>();
  for (int k : b.retained)
    if (k < 0 || k >= b.components.rows()) throw input_error("PcaBasis: retained index out of range");
}

}  // namespace topicsurv::superpc
