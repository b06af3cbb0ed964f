#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "topicsurv/core.hpp"
#include "topicsurv/dlda.hpp"
#include "topicsurv/eval.hpp"
#include "topicsurv/persist.hpp"
#include "topicsurv/preprocess.hpp"
#include "topicsurv/superpc.hpp"
#include "topicsurv/survival.hpp"

namespace topicsurv::pipeline {

enum class Learner { kCox, kRCox, kMtlr };

std::string_view to_string(Learner l);
Learner learner_from_string(std::string_view s);

struct FeatureGroups {
  bool clinical = true;
  bool pca = false;
  bool dlda = false;
  bool extra_columns = false;

  bool any() const noexcept { return clinical || pca || dlda || extra_columns; }
  bool operator==(const FeatureGroups&) const = default;
};

struct PipelineConfig {
  std::string id = "default";
  FeatureGroups features;
  Learner learner = Learner::kCox;
  // Clinical columns that form the "extra" group instead of the clinical one.
  std::vector<std::string> extra_columns;

  std::vector<int> k_grid = dlda::BasisSearchOptions::default_k_grid();
  std::vector<dlda::EncodingScheme> schemes{dlda::EncodingScheme::kA, dlda::EncodingScheme::kB};
  int dlda_folds = 5;
  double alpha = 0.1;
  int lda_max_iterations = 100;
  double lda_tolerance = 1e-4;

  std::vector<double> eta_grid{5e-4, 5e-3, 5e-2};
  int pca_folds = 5;

  std::vector<double> ridge_grid{0.01, 0.1, 1.0, 10.0, 100.0};
  std::vector<double> mtlr_c_grid{0.01, 0.1, 1.0, 10.0};
  int learner_folds = 5;
  int mtlr_intervals = 0;  // 0 = floor(sqrt(n))

  double train_fraction = 0.8;
  std::uint64_t seed = 0;

  /// Throws an input error naming the offending key.
  void validate() const;
  bool operator==(const PipelineConfig&) const = default;
};

void to_json(Json& j, const PipelineConfig& c);
void from_json(const Json& j, PipelineConfig& c);

// Config files: one `key = value` per line, `#` starts a comment. A line
// `[name]` opens a section; each section is one configuration whose id is the
// section name, and keys above the first section apply to every section.

/// Single configuration; section headers are rejected.
PipelineConfig parse_config(std::string_view text, const PipelineConfig& base = {});
/// Matrix file: every section becomes one configuration, in file order.
std::vector<PipelineConfig> parse_matrix_config(std::string_view text, const PipelineConfig& base = {});
PipelineConfig read_config(const std::filesystem::path& path);
std::vector<PipelineConfig> read_matrix_config(const std::filesystem::path& path);
/// Every key with its value, in the config grammar; parse_config inverts it.
std::string format_config(const PipelineConfig& c);

/// Column standardization fitted on training rows; zero-spread columns get sd 1.
struct FeatureScaler {
  Eigen::VectorXd means;
  Eigen::VectorXd sds;

  static FeatureScaler fit(const Eigen::MatrixXd& x);
  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const;
  bool operator==(const FeatureScaler&) const = default;
};

struct HyperScore {
  double value = 0.0;  // ridge or C
  int fold = 0;
  double concordance = 0.0;
};

/// Everything chosen by internal cross-validation, kept for auditing.
struct Diagnostics {
  std::vector<dlda::CellScore> dlda_cells;
  std::optional<dlda::Selection> dlda_selection;
  std::vector<superpc::EtaScore> pca_cells;
  std::vector<HyperScore> learner_cells;
  double learner_hyperparameter = 0.0;  // chosen ridge (RCox) or C (MTLR); 0 for Cox
  bool cox_fallback_ridge = false;      // unpenalized Cox diverged and was refit with a tiny ridge
  std::vector<std::string> training_ids;
  std::vector<double> training_risks;
};

void to_json(Json& j, const Diagnostics& d);
void from_json(const Json& j, Diagnostics& d);

/// Writes diagnostics.json plus per-stage CSV tables into `dir`.
void write_diagnostics(const Diagnostics& d, const std::filesystem::path& dir);

struct FittedPipeline {
  static constexpr std::string_view kArtifactKind = "FittedPipeline";

  PipelineConfig config;
  preprocess::PreprocessInfo preprocess;
  std::optional<dlda::TopicBasis> topics;
  std::optional<superpc::PcaBasis> pca;
  FeatureScaler scaler;
  std::optional<survival::CoxModel> cox;
  std::optional<survival::MtlrModel> mtlr;
  std::vector<std::string> feature_names;

  bool operator==(const FittedPipeline&) const = default;
};

void to_json(Json& j, const FittedPipeline& f);
void from_json(const Json& j, FittedPipeline& f);

struct TrainResult {
  FittedPipeline model;
  Diagnostics diagnostics;
};

struct RunOptions {
  unsigned workers = 0;  // 0 = available parallelism
};

TrainResult learn_survival_model(const Dataset& train, const PipelineConfig& config, const RunOptions& run = {});

struct Prediction {
  survival::SurvivalCurve curve;
  double risk = 0.0;  // negative area under `curve`
};

/// One patient: raw expression in training gene order and raw clinical cells
/// in the order of `fitted.preprocess.clinical`.
Prediction use_survival_model(const FittedPipeline& fitted, const Eigen::VectorXd& expression_row,
                              const std::vector<std::optional<std::string>>& clinical_cells,
                              preprocess::UnseenLevelPolicy policy = preprocess::UnseenLevelPolicy::kError);

/// Every patient of `expression` / `clinical` (same row order).
std::vector<Prediction> predict(const FittedPipeline& fitted, const ExpressionMatrix& expression,
                                const ClinicalTable& clinical,
                                preprocess::UnseenLevelPolicy policy = preprocess::UnseenLevelPolicy::kError);

struct MatrixRow {
  PipelineConfig config;
  double test_ci = 0.0;
  eval::DCalibration calibration;
};

struct MatrixResult {
  std::vector<MatrixRow> rows;
  std::vector<std::size_t> train_rows, test_rows;
};

/// Fits every configuration on one shared split and scores the held-out part.
MatrixResult run_experiment_matrix(const Dataset& data, const std::vector<PipelineConfig>& configs,
                                   const SplitSpec& split, const RunOptions& run = {});

/// config_id,features_clinical,features_pca,features_dlda,learner,test_ci,hl_stat,hl_pvalue
std::string results_csv(const MatrixResult& r);
/// config_id,features_clinical,features_pca,features_dlda,learner,hl_stat,hl_pvalue,df,uncensored
std::string calibration_csv(const MatrixResult& r);
/// Per-bin counts of every row: config_id,bin_low,bin_high,expected,predicted
std::string calibration_bins_csv(const MatrixResult& r);

}  // namespace topicsurv::pipeline
