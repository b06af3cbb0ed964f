#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include <spdlog/spdlog.h>

#include "topicsurv/csv.hpp"
#include "topicsurv/parallel.hpp"
#include "topicsurv/pipeline.hpp"
#include "topicsurv/rng.hpp"

namespace topicsurv::pipeline {

namespace {

constexpr std::uint64_t kLearnerFolds = 0x6c6561726e;
constexpr std::uint64_t kDldaStage = 0x646c6461;
constexpr std::uint64_t kPcaStage = 0x706361;

template <class F>
auto staged(const std::string& stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    throw e.with_stage(stage);
  }
}

Eigen::MatrixXd select_rows(const Eigen::MatrixXd& m, const std::vector<std::size_t>& idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(static_cast<Eigen::Index>(idx[r]));
  return out;
}

std::vector<SurvivalLabel> select_labels(const std::vector<SurvivalLabel>& l, const std::vector<std::size_t>& idx) {
  std::vector<SurvivalLabel> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(l[i]);
  return out;
}

// Clinical columns the config uses: the clinical group first, then the extras.
ClinicalTable used_clinical(const ClinicalTable& t, const PipelineConfig& c) {
  for (const auto& name : c.extra_columns)
    if (std::none_of(t.columns.begin(), t.columns.end(), [&](const ClinicalColumn& col) { return col.schema.name == name; }))
      throw input_error("extra column '" + name + "' is not in the clinical table");
  auto is_extra = [&](const ClinicalColumn& col) {
    return std::find(c.extra_columns.begin(), c.extra_columns.end(), col.schema.name) != c.extra_columns.end();
  };
  ClinicalTable out;
  out.patient_ids = t.patient_ids;
  if (c.features.clinical)
    for (const auto& col : t.columns)
      if (!is_extra(col)) out.columns.push_back(col);
  if (c.features.extra_columns)
    for (const auto& col : t.columns)
      if (is_extra(col)) out.columns.push_back(col);
  return out;
}

std::vector<std::optional<std::string>> clinical_cells(const preprocess::PreprocessInfo& info,
                                                       const std::vector<const ClinicalColumn*>& source, std::size_t row) {
  std::vector<std::optional<std::string>> cells;
  cells.reserve(info.clinical.size());
  for (const auto* col : source) {
    if (col->schema.kind == ColumnKind::kReal) {
      const auto& v = col->reals[row];
      cells.push_back(v ? std::optional<std::string>(csv::format_double(*v)) : std::nullopt);
    } else {
      cells.push_back(col->levels[row]);
    }
  }
  return cells;
}

std::vector<const ClinicalColumn*> match_columns(const preprocess::PreprocessInfo& info, const ClinicalTable& t) {
  std::vector<const ClinicalColumn*> out;
  for (const auto& ci : info.clinical) {
    auto it = std::find_if(t.columns.begin(), t.columns.end(),
                           [&](const ClinicalColumn& c) { return c.schema.name == ci.name; });
    if (it == t.columns.end()) throw input_error("clinical table lacks column '" + ci.name + "'");
    if (it->schema.kind != ci.kind) throw input_error("clinical column '" + ci.name + "' changed kind");
    out.push_back(&*it);
  }
  return out;
}

struct LearnerFit {
  std::optional<survival::CoxModel> cox;
  std::optional<survival::MtlrModel> mtlr;
  std::vector<HyperScore> cells;
  double hyper = 0.0;
};

Eigen::VectorXd mtlr_risks(const survival::MtlrModel& m, const Eigen::MatrixXd& x) {
  Eigen::VectorXd r(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) r[i] = survival::risk_from_curve(survival::mtlr_curve(m, x.row(i).transpose()));
  return r;
}

LearnerFit fit_learner(const Eigen::MatrixXd& x, const std::vector<SurvivalLabel>& labels, const PipelineConfig& c,
                       unsigned workers) {
  LearnerFit out;
  if (c.learner == Learner::kCox) {
    out.cox = survival::fit_cox_or_ridge(x, labels);
    return out;
  }
  const auto& grid = c.learner == Learner::kRCox ? c.ridge_grid : c.mtlr_c_grid;
  const auto fold_of = stratified_folds(labels, c.learner_folds, derive_seed(c.seed, {kLearnerFolds}));
  const auto folds = static_cast<std::size_t>(c.learner_folds);
  out.cells.resize(grid.size() * folds);
  parallel_for(out.cells.size(), workers, [&](std::size_t idx) {
    const auto f = static_cast<int>(idx % folds);
    const double value = grid[idx / folds];
    std::vector<std::size_t> train, test;
    for (std::size_t i = 0; i < labels.size(); ++i) (fold_of[i] == f ? test : train).push_back(i);
    Eigen::MatrixXd xtr = select_rows(x, train), xte = select_rows(x, test);
    auto ltr = select_labels(labels, train), lte = select_labels(labels, test);
    Eigen::VectorXd risks;
    if (c.learner == Learner::kRCox) {
      survival::CoxOptions opt;
      opt.ridge = value;
      opt.with_baseline = false;
      risks = survival::cox_risks(survival::fit_cox(xtr, ltr, opt), xte);
    } else {
      survival::MtlrOptions opt;
      opt.c = value;
      opt.m = c.mtlr_intervals;
      risks = mtlr_risks(survival::fit_mtlr(xtr, ltr, opt), xte);
    }
    double ci = staged("learner fold " + std::to_string(f), [&] { return eval::concordance(risks, lte).value; });
    out.cells[idx] = {value, f, ci};
  });

  // Ties go to the stronger penalty.
  double best = -1.0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double mean = 0.0;
    for (std::size_t f = 0; f < folds; ++f) mean += out.cells[g * folds + f].concordance;
    mean /= static_cast<double>(folds);
    if (mean > best || (mean == best && grid[g] > out.hyper)) {
      best = mean;
      out.hyper = grid[g];
    }
  }
  if (c.learner == Learner::kRCox) {
    survival::CoxOptions opt;
    opt.ridge = out.hyper;
    out.cox = survival::fit_cox(x, labels, opt);
  } else {
    survival::MtlrOptions opt;
    opt.c = out.hyper;
    opt.m = c.mtlr_intervals;
    out.mtlr = survival::fit_mtlr(x, labels, opt);
  }
  return out;
}

Json selection_json(const dlda::Selection& s) {
  return Json{{"scheme", std::string(dlda::to_string(s.scheme))},
              {"k_hat", s.k_hat},
              {"candidates", s.candidates},
              {"k", s.k}};
}

}  // namespace

FeatureScaler FeatureScaler::fit(const Eigen::MatrixXd& x) {
  FeatureScaler s;
  s.means = x.rows() > 0 ? Eigen::VectorXd(x.colwise().mean().transpose()) : Eigen::VectorXd::Zero(x.cols());
  s.sds = Eigen::VectorXd::Ones(x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    if (x.rows() < 2) break;
    double sd = std::sqrt((x.col(j).array() - s.means[j]).square().sum() / static_cast<double>(x.rows() - 1));
    if (sd > 0.0 && std::isfinite(sd)) s.sds[j] = sd;
  }
  return s;
}

Eigen::MatrixXd FeatureScaler::apply(const Eigen::MatrixXd& x) const {
  if (x.cols() != means.size())
    throw input_error("feature scaler expects " + std::to_string(means.size()) + " columns, got " + std::to_string(x.cols()));
  return (x.rowwise() - means.transpose()).array().rowwise() / sds.transpose().array();
}

TrainResult learn_survival_model(const Dataset& train, const PipelineConfig& config, const RunOptions& run) {
  config.validate();
  if (train.size() == 0) throw input_error("training set is empty");

  TrainResult result;
  FittedPipeline& fp = result.model;
  Diagnostics& diag = result.diagnostics;
  fp.config = config;

  const ClinicalTable clinical = staged("preprocess", [&] { return used_clinical(train.clinical, config); });
  auto pre = staged("preprocess", [&] { return preprocess::fit(train.expression, clinical); });
  fp.preprocess = pre.info;

  std::vector<Eigen::MatrixXd> blocks;
  if (config.features.dlda) {
    auto search = staged("dLDA", [&] {
      if (pre.z.cols() == 0) throw input_error("no gene survives the variance filter");
      dlda::BasisSearchOptions opt;
      opt.k_grid = config.k_grid;
      opt.schemes = config.schemes;
      opt.folds = config.dlda_folds;
      opt.alpha = config.alpha;
      opt.seed = derive_seed(config.seed, {kDldaStage});
      opt.workers = run.workers;
      opt.lda.max_em_iterations = config.lda_max_iterations;
      opt.lda.em_tolerance = config.lda_tolerance;
      return dlda::compute_basis_dlda(train.patient_ids, pre.z, pre.clinical, train.labels, opt);
    });
    diag.dlda_cells = search.cells;
    diag.dlda_selection = search.selection;
    blocks.push_back(staged("dLDA", [&] { return dlda::use_basis(pre.z, search.basis); }));
    for (int k = 0; k < search.basis.k(); ++k) fp.feature_names.push_back("topic" + std::to_string(k + 1));
    fp.topics = std::move(search.basis);
  }
  if (config.features.pca) {
    auto screen = staged("SuperPC", [&] {
      if (pre.z.cols() == 0) throw input_error("no gene survives the variance filter");
      superpc::ScreenOptions opt;
      opt.eta_grid = config.eta_grid;
      opt.folds = config.pca_folds;
      opt.seed = derive_seed(config.seed, {kPcaStage});
      opt.workers = run.workers;
      return superpc::screen_components(superpc::fit_pca(pre.z), pre.z, pre.clinical, train.labels, opt);
    });
    diag.pca_cells = screen.cells;
    blocks.push_back(superpc::retained_scores(pre.z, screen.basis));
    for (int k : screen.basis.retained) fp.feature_names.push_back("pc" + std::to_string(k + 1));
    fp.pca = std::move(screen.basis);
  }
  blocks.push_back(pre.clinical);
  for (const auto& name : fp.preprocess.clinical_feature_names()) fp.feature_names.push_back(name);

  Eigen::Index width = 0;
  for (const auto& b : blocks) width += b.cols();
  Eigen::MatrixXd x(static_cast<Eigen::Index>(train.size()), width);
  Eigen::Index at = 0;
  for (const auto& b : blocks) {
    if (b.cols() > 0) x.middleCols(at, b.cols()) = b;
    at += b.cols();
  }
  fp.scaler = FeatureScaler::fit(x);
  const Eigen::MatrixXd xs = fp.scaler.apply(x);

  auto learned = staged(std::string(to_string(config.learner)), [&] {
    return fit_learner(xs, train.labels, config, run.workers);
  });
  fp.cox = std::move(learned.cox);
  fp.mtlr = std::move(learned.mtlr);
  diag.learner_cells = std::move(learned.cells);
  diag.learner_hyperparameter = learned.hyper;
  diag.cox_fallback_ridge = config.learner == Learner::kCox && fp.cox && fp.cox->ridge > 0.0;

  // In-sample predictions through the scoring path, for replay checks.
  auto preds = predict(fp, train.expression, train.clinical);
  diag.training_ids = train.patient_ids;
  for (const auto& p : preds) diag.training_risks.push_back(p.risk);
  return result;
}

Prediction use_survival_model(const FittedPipeline& fp, const Eigen::VectorXd& expression_row,
                              const std::vector<std::optional<std::string>>& cells,
                              preprocess::UnseenLevelPolicy policy) {
  auto f = staged("preprocess", [&] { return preprocess::apply(fp.preprocess, expression_row, cells, policy); });
  std::vector<Eigen::VectorXd> parts;
  if (fp.topics)
    parts.push_back(staged("dLDA", [&] {
      Eigen::MatrixXd z = f.z.transpose();
      return Eigen::VectorXd(dlda::use_basis(z, *fp.topics).row(0).transpose());
    }));
  if (fp.pca) parts.push_back(staged("SuperPC", [&] { return superpc::use_basis_pca(f.z, *fp.pca); }));
  parts.push_back(f.clinical);

  Eigen::Index width = 0;
  for (const auto& p : parts) width += p.size();
  if (width != fp.scaler.means.size())
    throw Error(ErrorKind::kInput, "patient has " + std::to_string(width) + " features, model expects " +
                                       std::to_string(fp.scaler.means.size()), "predict");
  Eigen::VectorXd x(width);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    x.segment(at, p.size()) = p;
    at += p.size();
  }
  x = (x - fp.scaler.means).cwiseQuotient(fp.scaler.sds);

  Prediction out;
  if (fp.cox)
    out.curve = survival::cox_curve(*fp.cox, x);
  else if (fp.mtlr)
    out.curve = survival::mtlr_curve(*fp.mtlr, x);
  else
    throw input_error("fitted pipeline has no survival model");
  out.risk = survival::risk_from_curve(out.curve);
  return out;
}

std::vector<Prediction> predict(const FittedPipeline& fp, const ExpressionMatrix& expression, const ClinicalTable& clinical,
                                preprocess::UnseenLevelPolicy policy) {
  if (expression.patient_ids != clinical.patient_ids)
    throw Error(ErrorKind::kInput, "expression and clinical tables list different patients", "predict");
  std::vector<Eigen::Index> gene_column;
  std::unordered_map<std::string, Eigen::Index> where;
  for (std::size_t j = 0; j < expression.gene_ids.size(); ++j) where[expression.gene_ids[j]] = static_cast<Eigen::Index>(j);
  for (const auto& g : fp.preprocess.gene_ids) {
    auto it = where.find(g);
    if (it == where.end()) throw Error(ErrorKind::kInput, "expression lacks gene '" + g + "'", "predict");
    gene_column.push_back(it->second);
  }
  const auto source = staged("predict", [&] { return match_columns(fp.preprocess, clinical); });

  std::vector<Prediction> out(expression.patients());
  for (std::size_t i = 0; i < expression.patients(); ++i) {
    Eigen::VectorXd row(static_cast<Eigen::Index>(gene_column.size()));
    for (std::size_t j = 0; j < gene_column.size(); ++j)
      row[static_cast<Eigen::Index>(j)] = expression.values(static_cast<Eigen::Index>(i), gene_column[j]);
    try {
      out[i] = use_survival_model(fp, row, clinical_cells(fp.preprocess, source, i), policy);
    } catch (const Error& e) {
      throw Error(e.kind(), "patient " + expression.patient_ids[i] + ": " + e.message(), e.stage());
    }
  }
  return out;
}

MatrixResult run_experiment_matrix(const Dataset& data, const std::vector<PipelineConfig>& configs, const SplitSpec& split,
                                   const RunOptions& run) {
  if (configs.size() < 2) throw input_error("experiment matrix needs at least 2 configurations");
  for (const auto& c : configs) {
    try {
      c.validate();
    } catch (const Error& e) {
      throw input_error("config [" + c.id + "]: " + e.message());
    }
  }
  MatrixResult result;
  std::tie(result.train_rows, result.test_rows) = split_indices(data.labels, split);
  const Dataset train = subset(data, result.train_rows);
  const Dataset test = subset(data, result.test_rows);

  const unsigned total = run.workers == 0 ? default_workers() : run.workers;
  const unsigned outer = std::max(1u, std::min<unsigned>(total, static_cast<unsigned>(configs.size())));
  RunOptions inner{std::max(1u, total / outer)};

  result.rows.resize(configs.size());
  parallel_for(configs.size(), outer, [&](std::size_t i) {
    const auto& c = configs[i];
    try {
      auto fit = learn_survival_model(train, c, inner);
      auto preds = predict(fit.model, test.expression, test.clinical, preprocess::UnseenLevelPolicy::kZeros);
      std::vector<double> risks;
      std::vector<survival::SurvivalCurve> curves;
      for (auto& p : preds) {
        risks.push_back(p.risk);
        curves.push_back(std::move(p.curve));
      }
      MatrixRow row;
      row.config = c;
      row.test_ci = staged("test concordance", [&] { return eval::concordance(risks, test.labels).value; });
      row.calibration = staged("D-calibration", [&] { return eval::d_calibration(curves, test.labels); });
      result.rows[i] = std::move(row);
    } catch (const Error& e) {
      throw e.with_stage("config " + c.id);
    }
  });
  return result;
}

std::string results_csv(const MatrixResult& r) {
  std::string out = "config_id,features_clinical,features_pca,features_dlda,learner,test_ci,hl_stat,hl_pvalue\n";
  for (const auto& row : r.rows) {
    const auto& f = row.config.features;
    out += csv::quote_if_needed(row.config.id) + "," + (f.clinical ? "1" : "0") + "," + (f.pca ? "1" : "0") + "," +
           (f.dlda ? "1" : "0") + "," + std::string(to_string(row.config.learner)) + "," +
           csv::format_double(row.test_ci) + "," + csv::format_double(row.calibration.hl) + "," +
           csv::format_double(row.calibration.p_value) + "\n";
  }
  return out;
}

std::string calibration_csv(const MatrixResult& r) {
  std::string out = "config_id,features_clinical,features_pca,features_dlda,learner,hl_stat,hl_pvalue,df,uncensored\n";
  for (const auto& row : r.rows) {
    const auto& f = row.config.features;
    out += csv::quote_if_needed(row.config.id) + "," + (f.clinical ? "1" : "0") + "," + (f.pca ? "1" : "0") + "," +
           (f.dlda ? "1" : "0") + "," + std::string(to_string(row.config.learner)) + "," +
           csv::format_double(row.calibration.hl) + "," + csv::format_double(row.calibration.p_value) + "," +
           std::to_string(row.calibration.df) + "," + std::to_string(row.calibration.table.n) + "\n";
  }
  return out;
}

std::string calibration_bins_csv(const MatrixResult& r) {
  std::string out = "config_id,bin_low,bin_high,expected,predicted\n";
  for (const auto& row : r.rows)
    for (const auto& b : row.calibration.table.bins)
      out += csv::quote_if_needed(row.config.id) + "," + csv::format_double(b.low) + "," + csv::format_double(b.high) +
             "," + csv::format_double(b.expected) + "," + csv::format_double(b.predicted) + "\n";
  return out;
}

void to_json(Json& j, const Diagnostics& d) {
  Json dl = Json::array();
  for (const auto& c : d.dlda_cells)
    dl.push_back({std::string(dlda::to_string(c.scheme)), c.k, c.fold, c.concordance, c.likelihood});
  Json pc = Json::array();
  for (const auto& c : d.pca_cells) pc.push_back({c.eta, c.fold, c.concordance, c.retained});
  Json lc = Json::array();
  for (const auto& c : d.learner_cells) lc.push_back({c.value, c.fold, c.concordance});
  j = Json{{"dlda_cells", dl},
           {"dlda_selection", d.dlda_selection ? selection_json(*d.dlda_selection) : Json(nullptr)},
           {"pca_cells", pc},
           {"learner_cells", lc},
           {"learner_hyperparameter", d.learner_hyperparameter},
           {"cox_fallback_ridge", d.cox_fallback_ridge},
           {"training_ids", d.training_ids},
           {"training_risks", d.training_risks}};
}

void from_json(const Json& j, Diagnostics& d) {
  d = Diagnostics{};
  for (const auto& c : j.at("dlda_cells"))
    d.dlda_cells.push_back({dlda::scheme_from_string(c.at(0).get<std::string>()), c.at(1).get<int>(), c.at(2).get<int>(),
                            c.at(3).get<double>(), c.at(4).get<double>()});
  if (const auto& s = j.at("dlda_selection"); !s.is_null()) {
    dlda::Selection sel;
    sel.scheme = dlda::scheme_from_string(s.at("scheme").get<std::string>());
    sel.k_hat = s.at("k_hat").get<int>();
    sel.candidates = s.at("candidates").get<std::vector<int>>();
    sel.k = s.at("k").get<int>();
    d.dlda_selection = sel;
  }
  for (const auto& c : j.at("pca_cells"))
    d.pca_cells.push_back({c.at(0).get<double>(), c.at(1).get<int>(), c.at(2).get<double>(), c.at(3).get<int>()});
  for (const auto& c : j.at("learner_cells"))
    d.learner_cells.push_back({c.at(0).get<double>(), c.at(1).get<int>(), c.at(2).get<double>()});
  d.learner_hyperparameter = j.at("learner_hyperparameter").get<double>();
  d.cox_fallback_ridge = j.at("cox_fallback_ridge").get<bool>();
  d.training_ids = j.at("training_ids").get<std::vector<std::string>>();
  d.training_risks = j.at("training_risks").get<std::vector<double>>();
}

void write_diagnostics(const Diagnostics& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  csv::write_atomic(dir / "diagnostics.json", Json(d).dump(2) + "\n");
  if (!d.dlda_cells.empty()) csv::write_atomic(dir / "dlda_cells.csv", dlda::cells_to_csv(d.dlda_cells));
  if (!d.pca_cells.empty()) {
    std::string s = "eta,fold,concordance,retained\n";
    for (const auto& c : d.pca_cells)
      s += csv::format_double(c.eta) + "," + std::to_string(c.fold) + "," + csv::format_double(c.concordance) + "," +
           std::to_string(c.retained) + "\n";
    csv::write_atomic(dir / "pca_cells.csv", s);
  }
  if (!d.learner_cells.empty()) {
    std::string s = "value,fold,concordance\n";
    for (const auto& c : d.learner_cells)
      s += csv::format_double(c.value) + "," + std::to_string(c.fold) + "," + csv::format_double(c.concordance) + "\n";
    csv::write_atomic(dir / "learner_cells.csv", s);
  }
  std::string s = "patient_id,risk\n";
  for (std::size_t i = 0; i < d.training_ids.size(); ++i)
    s += csv::quote_if_needed(d.training_ids[i]) + "," + csv::format_double(d.training_risks[i]) + "\n";
  csv::write_atomic(dir / "training_risks.csv", s);
}

void to_json(Json& j, const FittedPipeline& f) {
  j = Json{{"config", Json(f.config)},
           {"preprocess", Json(f.preprocess)},
           {"topics", f.topics ? Json(*f.topics) : Json(nullptr)},
           {"pca", f.pca ? Json(*f.pca) : Json(nullptr)},
           {"scaler", {{"means", vector_to_json(f.scaler.means)}, {"sds", vector_to_json(f.scaler.sds)}}},
           {"cox", f.cox ? Json(*f.cox) : Json(nullptr)},
           {"mtlr", f.mtlr ? Json(*f.mtlr) : Json(nullptr)},
           {"feature_names", f.feature_names}};
}

void from_json(const Json& j, FittedPipeline& f) {
  f = FittedPipeline{};
  f.config = j.at("config").get<PipelineConfig>();
  f.preprocess = j.at("preprocess").get<preprocess::PreprocessInfo>();
  if (!j.at("topics").is_null()) f.topics = j.at("topics").get<dlda::TopicBasis>();
  if (!j.at("pca").is_null()) f.pca = j.at("pca").get<superpc::PcaBasis>();
  f.scaler.means = vector_from_json(j.at("scaler").at("means"));
  f.scaler.sds = vector_from_json(j.at("scaler").at("sds"));
  if (!j.at("cox").is_null()) f.cox = j.at("cox").get<survival::CoxModel>();
  if (!j.at("mtlr").is_null()) f.mtlr = j.at("mtlr").get<survival::MtlrModel>();
  f.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  if (f.cox.has_value() == f.mtlr.has_value()) throw input_error("FittedPipeline must hold exactly one survival model");
  if (f.topics.has_value() != f.config.features.dlda || f.pca.has_value() != f.config.features.pca)
    throw input_error("FittedPipeline bases do not match its configuration");
}

}  // namespace topicsurv::pipeline
