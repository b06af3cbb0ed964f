#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "topicsurv/core.hpp"
#include "topicsurv/persist.hpp"

namespace topicsurv::dlda {

inline constexpr int kBinsPerSide = 10;

// ---------------------------------------------------------------------------
// Discretization

/// Bin geometry of one gene. The positive side covers z >= 1 starting at
/// `min_pos` with total span `delta_pos`; the negative side covers z <= -1
/// counting downward from `max_neg` over `delta_neg`.
struct GeneBins {
  bool has_pos = false;
  double min_pos = 0.0;
  double delta_pos = 0.0;
  bool has_neg = false;
  double max_neg = 0.0;
  double delta_neg = 0.0;

  bool operator==(const GeneBins&) const = default;
};

struct DiscretizationStats {
  std::vector<GeneBins> genes;

  bool operator==(const DiscretizationStats&) const = default;
};

/// Integer bins b in {-10..10}, patients x genes.
using DgevMatrix = Eigen::MatrixXi;

struct Discretized {
  DgevMatrix bins;
  DiscretizationStats stats;
};

/// Learns per-gene bin geometry from `z` and bins every entry.
Discretized discretize(const Eigen::MatrixXd& z);

/// Bin of a single value under learned geometry. Values beyond the training
/// range clamp to +-10 (outer side) or +-1 (inner side); a side that had no
/// training values maps to 0.
int discretize_value(double z, const GeneBins& gene);

Eigen::VectorXi discretize_row(const Eigen::VectorXd& z_row, const DiscretizationStats& stats);
DgevMatrix discretize_with(const Eigen::MatrixXd& z, const DiscretizationStats& stats);

// ---------------------------------------------------------------------------
// Encoding to non-negative counts

enum class EncodingScheme {
  kA,  // one feature per gene: |b|
  kB,  // OVER-gene = max(b, 0) and UNDER-gene = max(-b, 0)
};

std::string_view to_string(EncodingScheme s);
EncodingScheme scheme_from_string(std::string_view s);

/// Non-negative word counts. Scheme B lays out all OVER features first, then
/// all UNDER features, so feature 2p has width 2 * genes.
struct CountMatrix {
  Eigen::MatrixXi counts;
  EncodingScheme scheme = EncodingScheme::kA;
};

/// Encoded features of one bin: one value for scheme A, (OVER, UNDER) for B.
std::vector<int> encode_bin(int bin, EncodingScheme scheme);

CountMatrix encode(const DgevMatrix& dgev, EncodingScheme scheme);

std::vector<std::string> vocabulary(const std::vector<std::string>& gene_ids, EncodingScheme scheme);

// ---------------------------------------------------------------------------
// Topic model

/// K topic-word probability rows plus what is needed to encode new patients.
struct TopicBasis {
  static constexpr std::string_view kArtifactKind = "TopicBasis";

  Eigen::MatrixXd topics;  // K x V, rows sum to 1
  double alpha = 0.1;
  EncodingScheme scheme = EncodingScheme::kA;
  DiscretizationStats stats;

  int k() const noexcept { return static_cast<int>(topics.rows()); }
  Eigen::Index vocabulary_size() const noexcept { return topics.cols(); }

  bool operator==(const TopicBasis&) const = default;
};

void to_json(Json& j, const TopicBasis& b);
void from_json(const Json& j, TopicBasis& b);

struct TopicMixture {
  Eigen::VectorXd gamma;        // variational Dirichlet parameters, all > 0
  Eigen::VectorXd proportions;  // gamma / sum(gamma)
};

struct LdaOptions {
  int k = 10;
  double alpha = 0.1;
  std::uint64_t seed = 0;
  int max_em_iterations = 100;
  double em_tolerance = 1e-4;       // relative change of the evidence bound
  int max_estep_iterations = 100;
  double estep_tolerance = 1e-6;    // relative change of gamma per document
  int restarts = 5;                 // independent seedings; the best final bound is kept
};

struct LdaFit {
  TopicBasis basis;
  std::vector<double> bound_trace;  // evidence bound after every EM iteration
  std::vector<std::size_t> dropped_documents;
  int iterations = 0;
};

/// Variational EM for LDA with a Dirichlet prior on each topic row
/// (1/V + U[0, 1/V^2] per entry) and a fixed symmetric document prior alpha.
LdaFit fit_lda(const CountMatrix& counts, const LdaOptions& options);

/// Mixture of one document with topics held fixed at their expected
/// probabilities. Stops when gamma's relative change drops below 1e-6 or
/// after 1000 iterations.
TopicMixture infer_mixture(const Eigen::Ref<const Eigen::VectorXi>& count_row, const TopicBasis& basis);

/// Evidence lower bound of one document under fixed topics, evaluated at the
/// mixture returned by infer_mixture.
double document_bound(const Eigen::Ref<const Eigen::VectorXi>& count_row, const TopicBasis& basis,
                      const TopicMixture& mixture);

/// Topic proportions of every row of `counts`, patients x K.
Eigen::MatrixXd infer_proportions(const Eigen::MatrixXi& counts, const TopicBasis& basis);

/// Discretize + encode + infer for already standardized, filtered rows.
Eigen::MatrixXd use_basis(const Eigen::MatrixXd& z, const TopicBasis& basis);

// ---------------------------------------------------------------------------
// Cross-validated choice of encoding scheme and topic count

struct CellScore {
  EncodingScheme scheme = EncodingScheme::kA;
  int k = 0;
  int fold = 0;
  double concordance = 0.0;
  double likelihood = 0.0;  // mean held-out per-document bound
};

struct Selection {
  EncodingScheme scheme = EncodingScheme::kA;
  int k_hat = 0;                 // likelihood argmax for the chosen scheme
  std::vector<int> candidates;   // K <= k_hat within one fold-sd of the best likelihood
  int k = 0;                     // final choice
};

/// Pure selection rule over a complete (scheme, K, fold) table.
Selection select_scheme_and_k(const std::vector<CellScore>& cells, const std::vector<int>& k_grid);

struct BasisSearchOptions {
  std::vector<int> k_grid = default_k_grid();
  std::vector<EncodingScheme> schemes{EncodingScheme::kA, EncodingScheme::kB};
  int folds = 5;
  double alpha = 0.1;
  std::uint64_t seed = 0;
  unsigned workers = 0;  // 0 = available parallelism
  LdaOptions lda;        // k, alpha and seed fields are overridden per cell

  static std::vector<int> default_k_grid();
};

struct BasisSearchResult {
  Selection selection;
  TopicBasis basis;  // refit on all rows with the selected scheme and K
  std::vector<CellScore> cells;
};

/// Replaces the per-cell model fitting; used to test the selection rule.
using CellEvaluator = std::function<CellScore(EncodingScheme, int k, int fold)>;

/// `z` are standardized, filtered expression rows; `clinical` encoded clinical
/// features (may have zero columns). Rows are processed in patient-id order so
/// the result does not depend on input row order.
BasisSearchResult compute_basis_dlda(const std::vector<std::string>& patient_ids, const Eigen::MatrixXd& z,
                                     const Eigen::MatrixXd& clinical, const std::vector<SurvivalLabel>& labels,
                                     const BasisSearchOptions& options, const CellEvaluator& evaluator = {});

std::string cells_to_csv(const std::vector<CellScore>& cells);

}  // namespace topicsurv::dlda
