#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "topicsurv/core.hpp"
#include "topicsurv/persist.hpp"

namespace topicsurv::preprocess {

/// Replay information for one clinical column.
struct ClinicalColumnInfo {
  std::string name;
  ColumnKind kind = ColumnKind::kReal;
  double impute_real = 0.0;          // mean of observed values (real columns)
  std::string impute_level;          // mode of observed levels (categorical columns)
  std::vector<std::string> levels;   // one-hot column order

  bool operator==(const ClinicalColumnInfo&) const = default;
};

enum class UnseenLevelPolicy { kError, kZeros };

/// Everything needed to replay training-time preprocessing on a new patient.
struct PreprocessInfo {
  static constexpr std::string_view kArtifactKind = "PreprocessInfo";

  std::vector<ClinicalColumnInfo> clinical;
  std::vector<std::string> gene_ids;             // all genes seen at fit time, in order
  double global_mean = 0.0;
  double global_sd = 1.0;
  std::vector<std::size_t> retained_gene_indices;  // ascending, into gene_ids

  std::vector<std::string> clinical_feature_names() const;
  std::vector<std::string> retained_gene_ids() const;

  bool operator==(const PreprocessInfo&) const = default;
};

void to_json(Json& j, const PreprocessInfo& info);
void from_json(const Json& j, PreprocessInfo& info);

struct ClinicalFit {
  Eigen::MatrixXd features;  // patients x encoded features, no missing cells
  std::vector<ClinicalColumnInfo> columns;
};

/// Mean / mode imputation followed by one-hot expansion of categorical columns.
ClinicalFit fit_clinical(const ClinicalTable& clinical);

struct Standardized {
  Eigen::MatrixXd z;
  double mean = 0.0;
  double sd = 1.0;
};

/// Global z-scoring: one mean and one (n-1)-denominator standard deviation over
/// every entry of the matrix.
Standardized standardize_expression(const Eigen::MatrixXd& values);

/// Indices of genes (columns) with at least one |z| > 1; order preserved.
std::vector<std::size_t> filter_genes(const Eigen::MatrixXd& z);

struct PreprocessResult {
  PreprocessInfo info;
  Eigen::MatrixXd z;         // standardized expression restricted to retained genes
  Eigen::MatrixXd clinical;  // encoded clinical features
};

PreprocessResult fit(const ExpressionMatrix& expression, const ClinicalTable& clinical);

/// Scoring-time replay for one patient: z row over retained genes and the
/// encoded clinical vector.
struct PatientFeatures {
  Eigen::VectorXd z;
  Eigen::VectorXd clinical;
};

PatientFeatures apply(const PreprocessInfo& info, const Eigen::VectorXd& expression_row,
                      const std::vector<std::optional<std::string>>& clinical_cells,
                      UnseenLevelPolicy policy = UnseenLevelPolicy::kError);

/// Batch replay. Expression columns are matched to the training genes by id.
Eigen::MatrixXd apply_expression(const PreprocessInfo& info, const ExpressionMatrix& expression);
Eigen::MatrixXd apply_clinical(const PreprocessInfo& info, const ClinicalTable& clinical,
                               UnseenLevelPolicy policy = UnseenLevelPolicy::kError);

}  // namespace topicsurv::preprocess
