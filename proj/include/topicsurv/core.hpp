#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "topicsurv/error.hpp"

namespace topicsurv {

/// Observed (time, status) pair. status 1 = death observed, 0 = right-censored.
struct SurvivalLabel {
  double time = 1.0;
  int status = 0;

  bool event() const noexcept { return status == 1; }
};

void validate(const SurvivalLabel& label);

/// Patients x genes matrix of (log2) expression values.
struct ExpressionMatrix {
  std::vector<std::string> patient_ids;
  std::vector<std::string> gene_ids;
  Eigen::MatrixXd values;  // rows = patients, cols = genes

  std::size_t patients() const noexcept { return patient_ids.size(); }
  std::size_t genes() const noexcept { return gene_ids.size(); }
};

void validate(const ExpressionMatrix& m);

enum class ColumnKind { kReal, kCategorical };

struct ColumnSchema {
  std::string name;
  ColumnKind kind = ColumnKind::kReal;
  std::vector<std::string> levels;  // categorical only, declaration order

  bool operator==(const ColumnSchema&) const = default;
};

/// One clinical column. Only the vector matching `schema.kind` is populated;
/// std::nullopt marks a missing (`NA`) cell.
struct ClinicalColumn {
  ColumnSchema schema;
  std::vector<std::optional<double>> reals;
  std::vector<std::optional<std::string>> levels;

  bool operator==(const ClinicalColumn&) const = default;
};

struct ClinicalTable {
  std::vector<std::string> patient_ids;
  std::vector<ClinicalColumn> columns;

  std::size_t patients() const noexcept { return patient_ids.size(); }
  std::vector<ColumnSchema> schema() const;

  bool operator==(const ClinicalTable&) const = default;
};

/// Expression, clinical features and labels for one cohort. All three parts
/// share `patient_ids` row order, which is sorted lexicographically at ingest.
struct Dataset {
  std::vector<std::string> patient_ids;
  ExpressionMatrix expression;
  ClinicalTable clinical;
  std::vector<SurvivalLabel> labels;

  std::size_t size() const noexcept { return patient_ids.size(); }
  const SurvivalLabel& label_of(const std::string& patient_id) const;
};

struct IngestOptions {
  bool log2_transform = false;               // apply log2(x + 1) to expression cells
  std::vector<std::string> exclude_columns;  // clinical columns dropped at ingest
  bool allow_unknown_levels = false;         // scoring-time tables may carry unseen levels
};

std::vector<ColumnSchema> read_schema(const std::filesystem::path& path);
ExpressionMatrix read_expression(const std::filesystem::path& path, bool log2_transform = false);
ClinicalTable read_clinical(const std::filesystem::path& path, const std::vector<ColumnSchema>& schema,
                            const IngestOptions& options = {});
std::vector<std::pair<std::string, SurvivalLabel>> read_labels(const std::filesystem::path& path);

/// Reads and joins the three CSV inputs by patient id.
Dataset ingest(const std::filesystem::path& expression_path, const std::filesystem::path& clinical_path,
               const std::filesystem::path& labels_path, const std::filesystem::path& schema_path,
               const IngestOptions& options = {});

/// Joins already-parsed parts; throws when the patient sets differ.
Dataset join(ExpressionMatrix expression, ClinicalTable clinical,
             std::vector<std::pair<std::string, SurvivalLabel>> labels);

void write_expression(const ExpressionMatrix& m, const std::filesystem::path& path);
void write_schema(const std::vector<ColumnSchema>& schema, const std::filesystem::path& path);
void write_clinical(const ClinicalTable& t, const std::filesystem::path& path);
void write_labels(const std::vector<std::string>& ids, const std::vector<SurvivalLabel>& labels,
                  const std::filesystem::path& path);

/// Paths of a dataset written by write_dataset.
struct DatasetFiles {
  std::filesystem::path expression, clinical, labels, schema;
};
DatasetFiles write_dataset(const Dataset& d, const std::filesystem::path& dir);

Dataset subset(const Dataset& d, const std::vector<std::size_t>& rows);
ClinicalTable subset(const ClinicalTable& t, const std::vector<std::size_t>& rows);

struct SplitSpec {
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
  bool stratified = true;
};

/// Row indices of the train and test parts, both ascending.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    const std::vector<SurvivalLabel>& labels, const SplitSpec& spec);

std::pair<Dataset, Dataset> split(const Dataset& d, const SplitSpec& spec);

/// Assigns each row to one of `folds` cross-validation folds, balancing the
/// censored and uncensored rows separately.
std::vector<int> stratified_folds(const std::vector<SurvivalLabel>& labels, int folds, std::uint64_t seed);

}  // namespace topicsurv
