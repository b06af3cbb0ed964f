#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <spdlog/spdlog.h>

#include "topicsurv/csv.hpp"
#include "topicsurv/dlda.hpp"
#include "topicsurv/eval.hpp"
#include "topicsurv/parallel.hpp"
#include "topicsurv/rng.hpp"
#include "topicsurv/survival.hpp"

namespace topicsurv::dlda {

namespace {

struct Summary {
  double concordance = 0.0;
  double likelihood = 0.0;
  double likelihood_sd = 0.0;
};

// Per (scheme, K) means over folds, plus the fold sd of the likelihood.
std::map<std::pair<EncodingScheme, int>, Summary> summarize(const std::vector<CellScore>& cells) {
  std::map<std::pair<EncodingScheme, int>, std::vector<const CellScore*>> groups;
  for (const auto& c : cells) groups[{c.scheme, c.k}].push_back(&c);
  std::map<std::pair<EncodingScheme, int>, Summary> out;
  for (auto& [key, group] : groups) {
    std::sort(group.begin(), group.end(), [](const CellScore* a, const CellScore* b) { return a->fold < b->fold; });
    Summary s;
    const double n = static_cast<double>(group.size());
    for (const auto* c : group) {
      s.concordance += c->concordance / n;
      s.likelihood += c->likelihood / n;
    }
    if (group.size() > 1) {
      double ss = 0.0;
      for (const auto* c : group) ss += (c->likelihood - s.likelihood) * (c->likelihood - s.likelihood);
      s.likelihood_sd = std::sqrt(ss / (n - 1.0));
    }
    out[key] = s;
  }
  return out;
}

std::vector<int> checked_grid(std::vector<int> grid) {
  if (grid.empty()) throw input_error("topic-count grid is empty");
  for (int k : grid)
    if (k <= 0) throw input_error("topic-count grid contains K = " + std::to_string(k) + "; K must be positive");
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

}  // namespace

std::vector<int> BasisSearchOptions::default_k_grid() {
  std::vector<int> g;
  for (int k = 5; k <= 150; k += 5) g.push_back(k);
  return g;
}

Selection select_scheme_and_k(const std::vector<CellScore>& cells, const std::vector<int>& k_grid_in) {
  const auto k_grid = checked_grid(k_grid_in);
  auto summary = summarize(cells);
  std::vector<EncodingScheme> schemes;
  for (const auto& [key, s] : summary)
    if (std::find(schemes.begin(), schemes.end(), key.first) == schemes.end()) schemes.push_back(key.first);
  if (schemes.empty()) throw input_error("no cross-validation cells to select from");

  auto get = [&](EncodingScheme t, int k) -> const Summary& {
    auto it = summary.find({t, k});
    if (it == summary.end())
      throw input_error("missing cells for scheme " + std::string(to_string(t)) + ", K = " + std::to_string(k));
    return it->second;
  };

  // Scheme with the highest best-over-K mean concordance; ties keep the earlier scheme (A before B).
  Selection sel;
  double best_scheme = -1.0;
  for (EncodingScheme t : schemes) {
    double best = -1.0;
    for (int k : k_grid) best = std::max(best, get(t, k).concordance);
    if (best > best_scheme) {
      best_scheme = best;
      sel.scheme = t;
    }
  }

  double best_l = -std::numeric_limits<double>::infinity();
  for (int k : k_grid)
    if (get(sel.scheme, k).likelihood > best_l) {
      best_l = get(sel.scheme, k).likelihood;
      sel.k_hat = k;
    }
  const double floor_l = best_l - get(sel.scheme, sel.k_hat).likelihood_sd;
  for (int k : k_grid)
    if (k <= sel.k_hat && get(sel.scheme, k).likelihood >= floor_l) sel.candidates.push_back(k);

  double best_c = -1.0;
  for (int k : sel.candidates)
    if (get(sel.scheme, k).concordance > best_c) {
      best_c = get(sel.scheme, k).concordance;
      sel.k = k;
    }
  return sel;
}

BasisSearchResult compute_basis_dlda(const std::vector<std::string>& patient_ids, const Eigen::MatrixXd& z_in,
                                     const Eigen::MatrixXd& clinical_in, const std::vector<SurvivalLabel>& labels_in,
                                     const BasisSearchOptions& opt, const CellEvaluator& evaluator) {
  const auto k_grid = checked_grid(opt.k_grid);
  const auto n = patient_ids.size();
  if (static_cast<std::size_t>(z_in.rows()) != n || labels_in.size() != n ||
      (clinical_in.size() > 0 && static_cast<std::size_t>(clinical_in.rows()) != n))
    throw input_error("compute_basis_dlda: row counts of ids, expression, clinical and labels differ");
  if (opt.folds < 2) throw input_error("compute_basis_dlda needs at least 2 folds");
  if (n < static_cast<std::size_t>(opt.folds)) throw input_error("compute_basis_dlda: fewer patients than folds");
  if (opt.schemes.empty()) throw input_error("compute_basis_dlda: no encoding schemes");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return patient_ids[a] < patient_ids[b]; });
  Eigen::MatrixXd z(z_in.rows(), z_in.cols());
  Eigen::MatrixXd clinical(static_cast<Eigen::Index>(n), clinical_in.cols());
  std::vector<SurvivalLabel> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    z.row(static_cast<Eigen::Index>(i)) = z_in.row(static_cast<Eigen::Index>(order[i]));
    if (clinical_in.cols() > 0) clinical.row(static_cast<Eigen::Index>(i)) = clinical_in.row(static_cast<Eigen::Index>(order[i]));
    labels[i] = labels_in[order[i]];
  }

  const std::vector<int> fold_of = stratified_folds(labels, opt.folds, derive_seed(opt.seed, {0x666f6c64}));

  auto run_cell = [&](EncodingScheme t, int k, int fold) {
    std::vector<std::size_t> train, test;
    for (std::size_t i = 0; i < n; ++i) (fold_of[i] == fold ? test : train).push_back(i);
    auto rows = [&](const Eigen::MatrixXd& m, const std::vector<std::size_t>& idx) {
      Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), m.cols());
      for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(static_cast<Eigen::Index>(idx[r]));
      return out;
    };
    auto pick = [&](const std::vector<std::size_t>& idx) {
      std::vector<SurvivalLabel> out;
      for (auto i : idx) out.push_back(labels[i]);
      return out;
    };
    Eigen::MatrixXd z_train = rows(z, train), z_test = rows(z, test);
    auto train_labels = pick(train), test_labels = pick(test);

    Discretized d = discretize(z_train);
    CountMatrix train_counts = encode(d.bins, t);
    CountMatrix test_counts = encode(discretize_with(z_test, d.stats), t);

    LdaOptions lda = opt.lda;
    lda.k = k;
    lda.alpha = opt.alpha;
    lda.seed = derive_seed(opt.seed, {static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(k),
                                      static_cast<std::uint64_t>(fold)});
    TopicBasis basis = fit_lda(train_counts, lda).basis;
    basis.stats = d.stats;

    CellScore cell{t, k, fold, 0.0, 0.0};
    Eigen::MatrixXd test_mix(test_counts.counts.rows(), k);
    for (Eigen::Index i = 0; i < test_counts.counts.rows(); ++i) {
      TopicMixture mix = infer_mixture(test_counts.counts.row(i).transpose(), basis);
      test_mix.row(i) = mix.proportions.transpose();
      cell.likelihood += document_bound(test_counts.counts.row(i).transpose(), basis, mix);
    }
    cell.likelihood /= static_cast<double>(std::max<Eigen::Index>(1, test_counts.counts.rows()));

    Eigen::MatrixXd train_mix = infer_proportions(train_counts.counts, basis);
    Eigen::MatrixXd x_train(train_mix.rows(), k + clinical.cols());
    Eigen::MatrixXd x_test(test_mix.rows(), k + clinical.cols());
    x_train << train_mix, rows(clinical, train);
    x_test << test_mix, rows(clinical, test);
    survival::CoxOptions cox;
    cox.with_baseline = false;
    auto model = survival::fit_cox_or_ridge(x_train, train_labels, cox);
    try {
      cell.concordance = eval::concordance(survival::cox_risks(model, x_test), test_labels).value;
    } catch (const Error& e) {
      throw e.with_stage("dLDA fold " + std::to_string(fold));
    }
    return cell;
  };

  std::vector<CellScore> cells(opt.schemes.size() * k_grid.size() * static_cast<std::size_t>(opt.folds));
  parallel_for(cells.size(), opt.workers, [&](std::size_t idx) {
    const auto fold = static_cast<int>(idx % static_cast<std::size_t>(opt.folds));
    const auto rest = idx / static_cast<std::size_t>(opt.folds);
    const int k = k_grid[rest % k_grid.size()];
    const EncodingScheme t = opt.schemes[rest / k_grid.size()];
    cells[idx] = evaluator ? evaluator(t, k, fold) : run_cell(t, k, fold);
    spdlog::debug("dLDA cell t={} K={} fold={} ci={} l={}", to_string(t), k, fold, cells[idx].concordance,
                  cells[idx].likelihood);
  });

  BasisSearchResult result;
  result.cells = cells;
  result.selection = select_scheme_and_k(cells, k_grid);

  Discretized d = discretize(z);
  LdaOptions lda = opt.lda;
  lda.k = result.selection.k;
  lda.alpha = opt.alpha;
  lda.seed = derive_seed(opt.seed, {static_cast<std::uint64_t>(result.selection.scheme),
                                    static_cast<std::uint64_t>(result.selection.k), 0x616c6c});
  result.basis = fit_lda(encode(d.bins, result.selection.scheme), lda).basis;
  result.basis.stats = d.stats;
  return result;
}

std::string cells_to_csv(const std::vector<CellScore>& cells) {
  std::string out = "scheme,k,fold,concordance,likelihood\n";
  for (const auto& c : cells)
    out += std::string(to_string(c.scheme)) + "," + std::to_string(c.k) + "," + std::to_string(c.fold) + "," +
           csv::format_double(c.concordance) + "," + csv::format_double(c.likelihood) + "\n";
  return out;
}

}  // namespace topicsurv::dlda
