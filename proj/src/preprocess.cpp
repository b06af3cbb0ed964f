#include "topicsurv/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <unordered_map>

#include <spdlog/spdlog.h>

#include "topicsurv/csv.hpp"

namespace topicsurv::preprocess {

std::vector<std::string> PreprocessInfo::clinical_feature_names() const {
  std::vector<std::string> names;
  for (const auto& c : clinical) {
    if (c.kind == ColumnKind::kReal)
      names.push_back(c.name);
    else
      for (const auto& l : c.levels) names.push_back(c.name + "=" + l);
  }
  return names;
}

std::vector<std::string> PreprocessInfo::retained_gene_ids() const {
  std::vector<std::string> out;
  for (auto i : retained_gene_indices) out.push_back(gene_ids[i]);
  return out;
}

void to_json(Json& j, const PreprocessInfo& info) {
  Json cols = Json::array();
  for (const auto& c : info.clinical) {
    cols.push_back({{"name", c.name},
                    {"kind", c.kind == ColumnKind::kReal ? "real" : "categorical"},
                    {"impute_real", c.impute_real},
                    {"impute_level", c.impute_level},
                    {"levels", c.levels}});
  }
  j = Json{{"clinical", cols},
           {"gene_ids", info.gene_ids},
           {"global_mean", info.global_mean},
           {"global_sd", info.global_sd},
           {"retained_gene_indices", info.retained_gene_indices}};
}

void from_json(const Json& j, PreprocessInfo& info) {
  info.clinical.clear();
  for (const auto& c : j.at("clinical")) {
    ClinicalColumnInfo col;
    col.name = c.at("name").get<std::string>();
    col.kind = c.at("kind").get<std::string>() == "real" ? ColumnKind::kReal : ColumnKind::kCategorical;
    col.impute_real = c.at("impute_real").get<double>();
    col.impute_level = c.at("impute_level").get<std::string>();
    col.levels = c.at("levels").get<std::vector<std::string>>();
    info.clinical.push_back(std::move(col));
  }
  info.gene_ids = j.at("gene_ids").get<std::vector<std::string>>();
  info.global_mean = j.at("global_mean").get<double>();
  info.global_sd = j.at("global_sd").get<double>();
  info.retained_gene_indices = j.at("retained_gene_indices").get<std::vector<std::size_t>>();
}

static std::size_t encoded_width(const std::vector<ClinicalColumnInfo>& cols) {
  std::size_t w = 0;
  for (const auto& c : cols) w += c.kind == ColumnKind::kReal ? 1 : c.levels.size();
  return w;
}

ClinicalFit fit_clinical(const ClinicalTable& clinical) {
  ClinicalFit fit;
  for (const auto& col : clinical.columns) {
    ClinicalColumnInfo info;
    info.name = col.schema.name;
    info.kind = col.schema.kind;
    if (col.schema.kind == ColumnKind::kReal) {
      double sum = 0.0;
      std::size_t count = 0;
      for (const auto& v : col.reals)
        if (v) {
          sum += *v;
          ++count;
        }
      if (count == 0) throw input_error("clinical column '" + info.name + "' is entirely missing");
      info.impute_real = sum / static_cast<double>(count);
    } else {
      info.levels = col.schema.levels;
      std::map<std::string, std::size_t> counts;  // ordered: ties resolve to the lexicographically smallest level
      for (const auto& v : col.levels)
        if (v) ++counts[*v];
      if (counts.empty()) throw input_error("clinical column '" + info.name + "' is entirely missing");
      std::size_t best = 0;
      for (const auto& [level, n] : counts)
        if (n > best) {
          best = n;
          info.impute_level = level;
        }
    }
    fit.columns.push_back(std::move(info));
  }
  fit.features = apply_clinical(PreprocessInfo{fit.columns, {}, 0.0, 1.0, {}}, clinical, UnseenLevelPolicy::kError);
  return fit;
}

Standardized standardize_expression(const Eigen::MatrixXd& values) {
  const auto count = static_cast<double>(values.size());
  if (values.size() < 2) throw input_error("standardization needs at least two entries");
  Standardized s;
  s.mean = values.mean();
  double ss = (values.array() - s.mean).square().sum();
  s.sd = std::sqrt(ss / (count - 1.0));
  if (!(s.sd > 0.0) || !std::isfinite(s.sd))
    throw input_error("expression matrix is constant (global standard deviation is 0)");
  s.z = (values.array() - s.mean) / s.sd;
  return s;
}

std::vector<std::size_t> filter_genes(const Eigen::MatrixXd& z) {
  std::vector<std::size_t> keep;
  for (Eigen::Index j = 0; j < z.cols(); ++j)
    if ((z.col(j).array().abs() > 1.0).any()) keep.push_back(static_cast<std::size_t>(j));
  if (keep.empty()) spdlog::warn("gene filter removed every gene (all |z| <= 1)");
  return keep;
}

PreprocessResult fit(const ExpressionMatrix& expression, const ClinicalTable& clinical) {
  PreprocessResult out;
  auto cf = fit_clinical(clinical);
  auto st = standardize_expression(expression.values);
  out.info.clinical = std::move(cf.columns);
  out.info.gene_ids = expression.gene_ids;
  out.info.global_mean = st.mean;
  out.info.global_sd = st.sd;
  out.info.retained_gene_indices = filter_genes(st.z);
  out.z.resize(st.z.rows(), static_cast<Eigen::Index>(out.info.retained_gene_indices.size()));
  for (std::size_t k = 0; k < out.info.retained_gene_indices.size(); ++k)
    out.z.col(static_cast<Eigen::Index>(k)) = st.z.col(static_cast<Eigen::Index>(out.info.retained_gene_indices[k]));
  out.clinical = std::move(cf.features);
  return out;
}

namespace {

// Writes the encoded block of one column starting at `offset`; returns the
// new offset. `real_cell` / `level_cell` supply the raw (possibly missing) cell.
std::size_t encode_column(const ClinicalColumnInfo& col, const std::optional<double>& real_cell,
                          const std::optional<std::string>& level_cell, UnseenLevelPolicy policy,
                          Eigen::Ref<Eigen::VectorXd> out, std::size_t offset) {
  if (col.kind == ColumnKind::kReal) {
    out[static_cast<Eigen::Index>(offset)] = real_cell ? *real_cell : col.impute_real;
    return offset + 1;
  }
  const std::string& level = level_cell ? *level_cell : col.impute_level;
  auto it = std::find(col.levels.begin(), col.levels.end(), level);
  for (std::size_t k = 0; k < col.levels.size(); ++k) out[static_cast<Eigen::Index>(offset + k)] = 0.0;
  if (it == col.levels.end()) {
    if (policy == UnseenLevelPolicy::kError)
      throw input_error("unseen level '" + level + "' in clinical column '" + col.name + "'");
    spdlog::warn("unseen level '{}' in clinical column '{}' encoded as all zeros", level, col.name);
  } else {
    out[static_cast<Eigen::Index>(offset + static_cast<std::size_t>(it - col.levels.begin()))] = 1.0;
  }
  return offset + col.levels.size();
}

}  // namespace

PatientFeatures apply(const PreprocessInfo& info, const Eigen::VectorXd& expression_row,
                      const std::vector<std::optional<std::string>>& clinical_cells, UnseenLevelPolicy policy) {
  if (static_cast<std::size_t>(expression_row.size()) != info.gene_ids.size())
    throw input_error("expression row has " + std::to_string(expression_row.size()) + " genes, expected " +
                      std::to_string(info.gene_ids.size()));
  if (clinical_cells.size() != info.clinical.size())
    throw input_error("clinical row has " + std::to_string(clinical_cells.size()) + " cells, expected " +
                      std::to_string(info.clinical.size()));
  PatientFeatures f;
  f.z.resize(static_cast<Eigen::Index>(info.retained_gene_indices.size()));
  for (std::size_t k = 0; k < info.retained_gene_indices.size(); ++k)
    f.z[static_cast<Eigen::Index>(k)] =
        (expression_row[static_cast<Eigen::Index>(info.retained_gene_indices[k])] - info.global_mean) / info.global_sd;
  f.clinical.resize(static_cast<Eigen::Index>(encoded_width(info.clinical)));
  std::size_t offset = 0;
  for (std::size_t c = 0; c < info.clinical.size(); ++c) {
    const auto& col = info.clinical[c];
    std::optional<double> real;
    if (col.kind == ColumnKind::kReal && clinical_cells[c])
      real = csv::parse_double(*clinical_cells[c], "clinical column '" + col.name + "'");
    offset = encode_column(col, real, col.kind == ColumnKind::kReal ? std::nullopt : clinical_cells[c], policy,
                           f.clinical, offset);
  }
  return f;
}

Eigen::MatrixXd apply_expression(const PreprocessInfo& info, const ExpressionMatrix& expression) {
  std::unordered_map<std::string, Eigen::Index> column;
  for (std::size_t j = 0; j < expression.gene_ids.size(); ++j) column[expression.gene_ids[j]] = static_cast<Eigen::Index>(j);
  if (column.size() != info.gene_ids.size())
    throw input_error("expression has " + std::to_string(column.size()) + " genes, model expects " +
                      std::to_string(info.gene_ids.size()));
  Eigen::MatrixXd z(expression.values.rows(), static_cast<Eigen::Index>(info.retained_gene_indices.size()));
  for (std::size_t k = 0; k < info.retained_gene_indices.size(); ++k) {
    const auto& gene = info.gene_ids[info.retained_gene_indices[k]];
    auto it = column.find(gene);
    if (it == column.end()) throw input_error("expression is missing gene '" + gene + "'");
    z.col(static_cast<Eigen::Index>(k)) = (expression.values.col(it->second).array() - info.global_mean) / info.global_sd;
  }
  return z;
}

Eigen::MatrixXd apply_clinical(const PreprocessInfo& info, const ClinicalTable& clinical, UnseenLevelPolicy policy) {
  std::vector<const ClinicalColumn*> source;
  for (const auto& col : info.clinical) {
    auto it = std::find_if(clinical.columns.begin(), clinical.columns.end(),
                           [&](const ClinicalColumn& c) { return c.schema.name == col.name; });
    if (it == clinical.columns.end()) throw input_error("clinical table lacks column '" + col.name + "'");
    if (it->schema.kind != col.kind) throw input_error("clinical column '" + col.name + "' changed kind");
    source.push_back(&*it);
  }
  Eigen::MatrixXd out(static_cast<Eigen::Index>(clinical.patients()), static_cast<Eigen::Index>(encoded_width(info.clinical)));
  Eigen::VectorXd row(out.cols());
  for (std::size_t i = 0; i < clinical.patients(); ++i) {
    std::size_t offset = 0;
    for (std::size_t c = 0; c < info.clinical.size(); ++c) {
      const auto& col = info.clinical[c];
      if (col.kind == ColumnKind::kReal)
        offset = encode_column(col, source[c]->reals[i], std::nullopt, policy, row, offset);
      else
        offset = encode_column(col, std::nullopt, source[c]->levels[i], policy, row, offset);
    }
    out.row(static_cast<Eigen::Index>(i)) = row.transpose();
  }
  return out;
}

}  // namespace topicsurv::preprocess
