#include "topicsurv/core.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "topicsurv/csv.hpp"
#include "topicsurv/rng.hpp"

namespace topicsurv {

namespace fs = std::filesystem;

void validate(const SurvivalLabel& label) {
  if (!(std::isfinite(label.time) && label.time > 0.0))
    throw input_error("survival time must be positive, got " + csv::format_double(label.time));
  if (label.status != 0 && label.status != 1)
    throw input_error("status must be 0 or 1, got " + std::to_string(label.status));
}

static void require_unique(const std::vector<std::string>& ids, const std::string& what) {
  std::set<std::string> seen;
  for (const auto& id : ids)
    if (!seen.insert(id).second) throw input_error("duplicate " + what + " '" + id + "'");
}

void validate(const ExpressionMatrix& m) {
  if (static_cast<std::size_t>(m.values.rows()) != m.patient_ids.size() ||
      static_cast<std::size_t>(m.values.cols()) != m.gene_ids.size())
    throw input_error("expression matrix shape does not match its identifiers");
  require_unique(m.patient_ids, "patient id");
  require_unique(m.gene_ids, "gene id");
  if (!m.values.allFinite()) throw input_error("expression matrix contains non-finite values");
}

std::vector<ColumnSchema> ClinicalTable::schema() const {
  std::vector<ColumnSchema> out;
  for (const auto& c : columns) out.push_back(c.schema);
  return out;
}

const SurvivalLabel& Dataset::label_of(const std::string& patient_id) const {
  auto it = std::lower_bound(patient_ids.begin(), patient_ids.end(), patient_id);
  if (it == patient_ids.end() || *it != patient_id) throw input_error("unknown patient id '" + patient_id + "'");
  return labels[static_cast<std::size_t>(it - patient_ids.begin())];
}

// ---------------------------------------------------------------------------
// Readers

std::vector<ColumnSchema> read_schema(const fs::path& path) {
  std::vector<ColumnSchema> out;
  std::set<std::string> names;
  for (const auto& row : csv::read(path)) {
    const auto& f = row.fields;
    std::string where = path.string() + ":" + std::to_string(row.line);
    if (f.size() < 2) throw input_error("schema row needs name and kind at " + where);
    ColumnSchema col;
    col.name = f[0];
    if (f[1] == "real") {
      col.kind = ColumnKind::kReal;
      if (f.size() > 2) throw input_error("real column '" + col.name + "' declares levels at " + where);
    } else if (f[1] == "categorical") {
      col.kind = ColumnKind::kCategorical;
      col.levels.assign(f.begin() + 2, f.end());
      if (col.levels.empty()) throw input_error("categorical column '" + col.name + "' has no levels at " + where);
      std::set<std::string> uniq(col.levels.begin(), col.levels.end());
      if (uniq.size() != col.levels.size()) throw input_error("duplicate level in column '" + col.name + "'");
      if (uniq.count("NA")) throw input_error("level 'NA' is reserved for missing cells");
    } else {
      throw input_error("unknown column kind '" + f[1] + "' at " + where);
    }
    if (!names.insert(col.name).second) throw input_error("duplicate schema column '" + col.name + "'");
    out.push_back(std::move(col));
  }
  return out;
}

ExpressionMatrix read_expression(const fs::path& path, bool log2_transform) {
  auto rows = csv::read(path);
  if (rows.empty()) throw input_error("empty expression file: " + path.string());
  ExpressionMatrix m;
  const auto& header = rows.front().fields;
  if (header.empty() || header[0] != "patient_id")
    throw input_error("expression header must start with patient_id: " + path.string());
  m.gene_ids.assign(header.begin() + 1, header.end());
  const std::size_t p = m.gene_ids.size();
  if (p == 0) throw input_error("expression file has no gene columns: " + path.string());
  m.values.resize(static_cast<Eigen::Index>(rows.size() - 1), static_cast<Eigen::Index>(p));
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& f = rows[r].fields;
    std::string where = path.string() + ":" + std::to_string(rows[r].line);
    if (f.size() != p + 1) throw input_error("expected " + std::to_string(p + 1) + " fields at " + where);
    m.patient_ids.push_back(f[0]);
    for (std::size_t j = 0; j < p; ++j) {
      if (f[j + 1] == "NA" || f[j + 1].empty())
        throw input_error("missing expression cell (gene " + m.gene_ids[j] + ") at " + where);
      double v = csv::parse_double(f[j + 1], where);
      if (log2_transform) {
        if (v <= -1.0) throw input_error("log2(x+1) undefined for " + f[j + 1] + " at " + where);
        v = std::log2(v + 1.0);
      }
      m.values(static_cast<Eigen::Index>(r - 1), static_cast<Eigen::Index>(j)) = v;
    }
  }
  validate(m);
  return m;
}

ClinicalTable read_clinical(const fs::path& path, const std::vector<ColumnSchema>& schema,
                            const IngestOptions& options) {
  auto rows = csv::read(path);
  if (rows.empty()) throw input_error("empty clinical file: " + path.string());
  const auto& header = rows.front().fields;
  if (header.empty() || header[0] != "patient_id")
    throw input_error("clinical header must start with patient_id: " + path.string());

  std::map<std::string, const ColumnSchema*> by_name;
  for (const auto& c : schema) by_name[c.name] = &c;
  auto excluded = [&](const std::string& name) {
    return std::find(options.exclude_columns.begin(), options.exclude_columns.end(), name) !=
           options.exclude_columns.end();
  };

  ClinicalTable t;
  std::vector<std::ptrdiff_t> source_column;  // per kept column: index into fields
  std::set<std::string> seen_header;
  for (std::size_t j = 1; j < header.size(); ++j) {
    if (!seen_header.insert(header[j]).second) throw input_error("duplicate clinical column '" + header[j] + "'");
    auto it = by_name.find(header[j]);
    if (it == by_name.end()) throw input_error("clinical column '" + header[j] + "' is not declared in the schema");
    if (excluded(header[j])) continue;
    t.columns.push_back({*it->second, {}, {}});
    source_column.push_back(static_cast<std::ptrdiff_t>(j));
  }
  for (const auto& c : schema)
    if (!seen_header.count(c.name) && !excluded(c.name))
      throw input_error("schema column '" + c.name + "' is missing from " + path.string());

  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& f = rows[r].fields;
    std::string where = path.string() + ":" + std::to_string(rows[r].line);
    if (f.size() != header.size())
      throw input_error("expected " + std::to_string(header.size()) + " fields at " + where);
    t.patient_ids.push_back(f[0]);
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
      auto& col = t.columns[c];
      const std::string& cell = f[static_cast<std::size_t>(source_column[c])];
      bool missing = cell == "NA" || cell.empty();
      if (col.schema.kind == ColumnKind::kReal) {
        col.reals.push_back(missing ? std::nullopt : std::optional<double>(csv::parse_double(cell, where)));
      } else {
        if (!missing && !options.allow_unknown_levels &&
            std::find(col.schema.levels.begin(), col.schema.levels.end(), cell) == col.schema.levels.end())
          throw input_error("unknown level '" + cell + "' in column '" + col.schema.name + "' at " + where);
        col.levels.push_back(missing ? std::nullopt : std::optional<std::string>(cell));
      }
    }
  }
  require_unique(t.patient_ids, "patient id");
  return t;
}

std::vector<std::pair<std::string, SurvivalLabel>> read_labels(const fs::path& path) {
  auto rows = csv::read(path);
  if (rows.empty()) throw input_error("empty labels file: " + path.string());
  const auto& header = rows.front().fields;
  if (header.size() != 3 || header[0] != "patient_id" || header[1] != "time" || header[2] != "status")
    throw input_error("labels header must be patient_id,time,status: " + path.string());
  std::vector<std::pair<std::string, SurvivalLabel>> out;
  std::set<std::string> seen;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& f = rows[r].fields;
    std::string where = path.string() + ":" + std::to_string(rows[r].line);
    if (f.size() != 3) throw input_error("expected 3 fields at " + where);
    SurvivalLabel l{csv::parse_double(f[1], where), static_cast<int>(csv::parse_int(f[2], where))};
    try {
      validate(l);
    } catch (const Error& e) {
      throw input_error(e.message() + " (patient '" + f[0] + "') at " + where);
    }
    if (!seen.insert(f[0]).second) throw input_error("duplicate patient id '" + f[0] + "' at " + where);
    out.emplace_back(f[0], l);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Join

static std::string join_ids(const std::vector<std::string>& ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) s += (i ? ", " : "") + ids[i];
  return s;
}

Dataset join(ExpressionMatrix expression, ClinicalTable clinical,
             std::vector<std::pair<std::string, SurvivalLabel>> labels) {
  validate(expression);
  require_unique(clinical.patient_ids, "patient id");
  std::set<std::string> e(expression.patient_ids.begin(), expression.patient_ids.end());
  std::set<std::string> c(clinical.patient_ids.begin(), clinical.patient_ids.end());
  std::set<std::string> l;
  for (const auto& [id, lab] : labels) {
    validate(lab);
    if (!l.insert(id).second) throw input_error("duplicate patient id '" + id + "' in labels");
  }
  std::set<std::string> all;
  all.insert(e.begin(), e.end());
  all.insert(c.begin(), c.end());
  all.insert(l.begin(), l.end());
  std::ostringstream report;
  for (const auto& [name, part] : {std::pair{"expression", &e}, std::pair{"clinical", &c}, std::pair{"labels", &l}}) {
    std::vector<std::string> missing;
    for (const auto& id : all)
      if (!part->count(id)) missing.push_back(id);
    if (!missing.empty()) report << " " << name << " is missing: " << join_ids(missing) << ";";
  }
  if (!report.str().empty()) throw input_error("patient sets differ across inputs:" + report.str());

  Dataset d;
  d.patient_ids.assign(all.begin(), all.end());
  const auto n = d.patient_ids.size();
  std::unordered_map<std::string, std::size_t> pos_e, pos_c;
  for (std::size_t i = 0; i < n; ++i) pos_e[expression.patient_ids[i]] = i;
  for (std::size_t i = 0; i < n; ++i) pos_c[clinical.patient_ids[i]] = i;
  std::unordered_map<std::string, SurvivalLabel> lab(labels.begin(), labels.end());

  std::vector<std::size_t> erows(n), crows(n);
  for (std::size_t i = 0; i < n; ++i) {
    erows[i] = pos_e.at(d.patient_ids[i]);
    crows[i] = pos_c.at(d.patient_ids[i]);
    d.labels.push_back(lab.at(d.patient_ids[i]));
  }
  d.expression.patient_ids = d.patient_ids;
  d.expression.gene_ids = std::move(expression.gene_ids);
  d.expression.values.resize(static_cast<Eigen::Index>(n), expression.values.cols());
  for (std::size_t i = 0; i < n; ++i)
    d.expression.values.row(static_cast<Eigen::Index>(i)) = expression.values.row(static_cast<Eigen::Index>(erows[i]));
  d.clinical = subset(clinical, crows);
  return d;
}

Dataset ingest(const fs::path& expression_path, const fs::path& clinical_path, const fs::path& labels_path,
               const fs::path& schema_path, const IngestOptions& options) {
  auto schema = read_schema(schema_path);
  auto expression = read_expression(expression_path, options.log2_transform);
  auto clinical = read_clinical(clinical_path, schema, options);
  auto labels = read_labels(labels_path);
  return join(std::move(expression), std::move(clinical), std::move(labels));
}

// ---------------------------------------------------------------------------
// Writers

void write_expression(const ExpressionMatrix& m, const fs::path& path) {
  std::string out = "patient_id";
  for (const auto& g : m.gene_ids) out += "," + csv::quote_if_needed(g);
  out += "\n";
  for (Eigen::Index i = 0; i < m.values.rows(); ++i) {
    out += csv::quote_if_needed(m.patient_ids[static_cast<std::size_t>(i)]);
    for (Eigen::Index j = 0; j < m.values.cols(); ++j) out += "," + csv::format_double(m.values(i, j));
    out += "\n";
  }
  csv::write_atomic(path, out);
}

void write_schema(const std::vector<ColumnSchema>& schema, const fs::path& path) {
  std::string out;
  for (const auto& c : schema) {
    out += csv::quote_if_needed(c.name) + (c.kind == ColumnKind::kReal ? ",real" : ",categorical");
    for (const auto& l : c.levels) out += "," + csv::quote_if_needed(l);
    out += "\n";
  }
  csv::write_atomic(path, out);
}

void write_clinical(const ClinicalTable& t, const fs::path& path) {
  std::string out = "patient_id";
  for (const auto& c : t.columns) out += "," + csv::quote_if_needed(c.schema.name);
  out += "\n";
  for (std::size_t i = 0; i < t.patients(); ++i) {
    out += csv::quote_if_needed(t.patient_ids[i]);
    for (const auto& c : t.columns) {
      out += ",";
      if (c.schema.kind == ColumnKind::kReal)
        out += c.reals[i] ? csv::format_double(*c.reals[i]) : "NA";
      else
        out += c.levels[i] ? csv::quote_if_needed(*c.levels[i]) : "NA";
    }
    out += "\n";
  }
  csv::write_atomic(path, out);
}

void write_labels(const std::vector<std::string>& ids, const std::vector<SurvivalLabel>& labels,
                  const fs::path& path) {
  std::string out = "patient_id,time,status\n";
  for (std::size_t i = 0; i < ids.size(); ++i)
    out += csv::quote_if_needed(ids[i]) + "," + csv::format_double(labels[i].time) + "," +
           std::to_string(labels[i].status) + "\n";
  csv::write_atomic(path, out);
}

DatasetFiles write_dataset(const Dataset& d, const fs::path& dir) {
  fs::create_directories(dir);
  DatasetFiles files{dir / "expression.csv", dir / "clinical.csv", dir / "labels.csv", dir / "schema.csv"};
  write_expression(d.expression, files.expression);
  write_clinical(d.clinical, files.clinical);
  write_labels(d.patient_ids, d.labels, files.labels);
  write_schema(d.clinical.schema(), files.schema);
  return files;
}

// ---------------------------------------------------------------------------
// Subsetting and splitting

ClinicalTable subset(const ClinicalTable& t, const std::vector<std::size_t>& rows) {
  ClinicalTable out;
  for (auto r : rows) out.patient_ids.push_back(t.patient_ids[r]);
  for (const auto& c : t.columns) {
    ClinicalColumn col{c.schema, {}, {}};
    for (auto r : rows) {
      if (c.schema.kind == ColumnKind::kReal)
        col.reals.push_back(c.reals[r]);
      else
        col.levels.push_back(c.levels[r]);
    }
    out.columns.push_back(std::move(col));
  }
  return out;
}

Dataset subset(const Dataset& d, const std::vector<std::size_t>& rows) {
  Dataset out;
  for (auto r : rows) {
    out.patient_ids.push_back(d.patient_ids[r]);
    out.labels.push_back(d.labels[r]);
  }
  out.expression.patient_ids = out.patient_ids;
  out.expression.gene_ids = d.expression.gene_ids;
  out.expression.values.resize(static_cast<Eigen::Index>(rows.size()), d.expression.values.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.expression.values.row(static_cast<Eigen::Index>(i)) = d.expression.values.row(static_cast<Eigen::Index>(rows[i]));
  out.clinical = subset(d.clinical, rows);
  return out;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(const std::vector<SurvivalLabel>& labels,
                                                                            const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
    throw input_error("train_fraction must lie in (0,1), got " + csv::format_double(spec.train_fraction));
  const std::size_t n = labels.size();
  if (n < 5) throw input_error("split needs at least 5 patients, got " + std::to_string(n));

  std::vector<std::vector<std::size_t>> strata(spec.stratified ? 2 : 1);
  for (std::size_t i = 0; i < n; ++i) strata[spec.stratified ? static_cast<std::size_t>(labels[i].status) : 0].push_back(i);

  auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);

  // Largest-remainder allocation of the training quota across strata.
  std::vector<std::size_t> quota(strata.size());
  std::vector<std::pair<double, std::size_t>> remainder;
  std::size_t assigned = 0;
  for (std::size_t s = 0; s < strata.size(); ++s) {
    double exact = spec.train_fraction * static_cast<double>(strata[s].size());
    quota[s] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[s];
    remainder.emplace_back(exact - std::floor(exact), s);
  }
  std::stable_sort(remainder.begin(), remainder.end(), [](auto a, auto b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < n_train && k < remainder.size(); ++k) {
    auto s = remainder[k].second;
    if (quota[s] < strata[s].size()) {
      ++quota[s];
      ++assigned;
    }
  }

  Rng rng(mix64(spec.seed));
  std::vector<std::size_t> train, test;
  for (std::size_t s = 0; s < strata.size(); ++s) {
    auto idx = strata[s];
    std::shuffle(idx.begin(), idx.end(), rng);
    train.insert(train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(quota[s]));
    test.insert(test.end(), idx.begin() + static_cast<std::ptrdiff_t>(quota[s]), idx.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {train, test};
}

std::pair<Dataset, Dataset> split(const Dataset& d, const SplitSpec& spec) {
  auto [train, test] = split_indices(d.labels, spec);
  return {subset(d, train), subset(d, test)};
}

std::vector<int> stratified_folds(const std::vector<SurvivalLabel>& labels, int folds, std::uint64_t seed) {
  if (folds < 2) throw input_error("need at least 2 folds");
  std::vector<int> fold(labels.size());
  Rng rng(mix64(seed ^ 0x5f0d1a5ULL));
  int offset = 0;
  for (int status : {1, 0}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i].status == status) idx.push_back(i);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t k = 0; k < idx.size(); ++k) fold[idx[k]] = static_cast<int>((k + static_cast<std::size_t>(offset)) % static_cast<std::size_t>(folds));
    offset += static_cast<int>(idx.size() % static_cast<std::size_t>(folds));
  }
  return fold;
}

}  // namespace topicsurv
