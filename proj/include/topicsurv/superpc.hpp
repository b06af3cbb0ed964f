#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "topicsurv/core.hpp"
#include "topicsurv/persist.hpp"

namespace topicsurv::superpc {

struct PcaBasis {
  static constexpr std::string_view kArtifactKind = "PcaBasis";

  Eigen::MatrixXd components;    // r x p, orthonormal rows, decreasing variance
  Eigen::VectorXd column_means;  // p
  Eigen::VectorXd variances;     // r, sample variance of each component's scores
  std::vector<double> p_values;  // r, univariate Cox Wald p-values (empty before screening)
  std::vector<int> retained;     // 0-based component indices, increasing
  double eta = 0.0;

  Eigen::Index rank() const noexcept { return components.rows(); }
  bool operator==(const PcaBasis&) const = default;
};

void to_json(Json& j, const PcaBasis& b);
void from_json(const Json& j, PcaBasis& b);

/// All components of the column-centered matrix with non-negligible variance.
/// Uses the n x n Gram matrix when there are more columns than rows.
PcaBasis fit_pca(const Eigen::MatrixXd& z);

/// Scores on every component, rows x r.
Eigen::MatrixXd project_all(const Eigen::MatrixXd& z, const PcaBasis& basis);

struct ScreenOptions {
  std::vector<double> eta_grid{5e-4, 5e-3, 5e-2};
  int folds = 5;
  std::uint64_t seed = 0;
  unsigned workers = 0;
};

struct EtaScore {
  double eta = 0.0;
  int fold = 0;
  double concordance = 0.0;
  int retained = 0;
};

struct ScreenResult {
  PcaBasis basis;
  std::vector<EtaScore> cells;
};

/// Univariate Cox screen of every component, with eta chosen by internal CV
/// concordance of a Cox model on the retained scores plus `clinical`. In each
/// fold the screen is redone on the training rows only.
ScreenResult screen_components(const PcaBasis& basis, const Eigen::MatrixXd& z, const Eigen::MatrixXd& clinical,
                               const std::vector<SurvivalLabel>& labels, const ScreenOptions& options = {});

/// Scores on the retained components only.
Eigen::VectorXd use_basis_pca(const Eigen::Ref<const Eigen::VectorXd>& x, const PcaBasis& basis);
/// Batch form: rows x retained components.
Eigen::MatrixXd retained_scores(const Eigen::MatrixXd& z, const PcaBasis& basis);

/// "component,variance_share,p_value,retained".
std::string screening_report_csv(const PcaBasis& basis);

}  // namespace topicsurv::superpc
