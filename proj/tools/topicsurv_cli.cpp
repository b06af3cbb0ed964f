// topicsurv: command-line front end.
//
// Exit codes: 0 success, 1 unexpected failure, 2 bad input (including bad
// command lines, model files and configs), 3 numerical failure.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "topicsurv/core.hpp"
#include "topicsurv/csv.hpp"
#include "topicsurv/eval.hpp"
#include "topicsurv/persist.hpp"
#include "topicsurv/pipeline.hpp"
#include "topicsurv/synthetic.hpp"

namespace fs = std::filesystem;
using namespace topicsurv;
using pipeline::PipelineConfig;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  unsigned workers = 0;
  bool log2 = false;
  bool strict_levels = false;
  bool verbose = false;
  bool quiet = false;
};

struct DataPaths {
  std::string expression, clinical, labels, schema;
};

void add_data_options(CLI::App* cmd, DataPaths& p, bool labels = true) {
  cmd->add_option("--expression", p.expression, "expression CSV (patient_id,<gene>...)")->required();
  cmd->add_option("--clinical", p.clinical, "clinical CSV (patient_id,<column>...)")->required();
  if (labels) cmd->add_option("--labels", p.labels, "labels CSV (patient_id,time,status)")->required();
  cmd->add_option("--schema", p.schema, "clinical schema CSV (column,kind,levels...)")->required();
}

std::string utc_now() {
  std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Collects what one invocation read and wrote; written as manifest.json at the end.
class Manifest {
 public:
  Manifest(std::string command, std::vector<std::string> argv, fs::path out)
      : out_(std::move(out)), start_(std::chrono::steady_clock::now()) {
    doc_["command"] = std::move(command);
    doc_["arguments"] = std::move(argv);
    doc_["tool_version"] = TOPICSURV_VERSION;
    doc_["format_version"] = kFormatVersion;
    doc_["started_at"] = utc_now();
    doc_["inputs"] = Json::object();
    doc_["outputs"] = Json::array();
    doc_["config_hash"] = nullptr;
    doc_["seed"] = nullptr;
  }

  void input(const std::string& role, const fs::path& path) {
    // A missing file is left to the reader, whose error names it.
    Json entry{{"path", path.string()}};
    if (fs::is_regular_file(path)) entry["crc32"] = file_crc32_hex(path);
    doc_["inputs"][role] = entry;
  }
  void config_text(const std::string& text) { doc_["config_hash"] = crc32_hex(text); }
  void seed(std::uint64_t s) { doc_["seed"] = s; }

  void output(const fs::path& path) { doc_["outputs"].push_back(path.string()); }
  void write(const fs::path& path, const std::string& content) {
    csv::write_atomic(path, content);
    output(path);
  }

  void finish(int exit_code, const std::string& error = {}) {
    doc_["exit_code"] = exit_code;
    if (!error.empty()) doc_["error"] = error;
    doc_["wall_clock_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    std::error_code ec;
    fs::create_directories(out_, ec);
    csv::write_atomic(out_ / "manifest.json", doc_.dump(2) + "\n");
  }

  const fs::path& out() const { return out_; }

 private:
  fs::path out_;
  std::chrono::steady_clock::time_point start_;
  Json doc_;
};

void record_data(Manifest& m, const DataPaths& p) {
  m.input("expression", p.expression);
  m.input("clinical", p.clinical);
  if (!p.labels.empty()) m.input("labels", p.labels);
  m.input("schema", p.schema);
}

Dataset load_dataset(const DataPaths& p, const Globals& g) {
  IngestOptions opt;
  opt.log2_transform = g.log2;
  return ingest(p.expression, p.clinical, p.labels, p.schema, opt);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw input_error("cannot open file: " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string curve_file_name(const std::string& id, std::set<std::string>& used) {
  std::string s;
  for (char c : id) s += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.') ? c : '_';
  if (s.empty() || s.front() == '.') s = "_" + s;
  std::string name = s;
  for (int n = 2; !used.insert(name).second; ++n) name = s + "_" + std::to_string(n);
  return name + ".csv";
}

// ---------------------------------------------------------------- commands

struct IngestArgs {
  DataPaths data;
};

int cmd_ingest_check(const IngestArgs& a, const Globals& g, Manifest& m) {
  record_data(m, a.data);
  Dataset d = load_dataset(a.data, g);
  int events = 0;
  for (const auto& l : d.labels) events += l.event();
  std::size_t missing = 0;
  for (const auto& c : d.clinical.columns)
    for (std::size_t i = 0; i < d.size(); ++i)
      missing += c.schema.kind == ColumnKind::kReal ? !c.reals[i].has_value() : !c.levels[i].has_value();

  Json summary{{"patients", d.size()},
               {"genes", d.expression.genes()},
               {"clinical_columns", d.clinical.columns.size()},
               {"events", events},
               {"censored", static_cast<int>(d.size()) - events},
               {"missing_clinical_cells", missing}};
  std::cout << "patients " << d.size() << "\n"
            << "genes " << d.expression.genes() << "\n"
            << "clinical_columns " << d.clinical.columns.size() << "\n"
            << "events " << events << "\n"
            << "censored " << d.size() - static_cast<std::size_t>(events) << "\n"
            << "missing_clinical_cells " << missing << "\n";
  m.write(m.out() / "ingest_summary.json", summary.dump(2) + "\n");
  return 0;
}

struct TrainArgs {
  std::string config;
  DataPaths data;
};

int cmd_train(const TrainArgs& a, const Globals& g, Manifest& m) {
  if (!a.config.empty()) m.input("config", a.config);
  record_data(m, a.data);
  PipelineConfig c = a.config.empty() ? PipelineConfig{} : pipeline::read_config(a.config);
  if (g.seed) c.seed = *g.seed;
  c.validate();
  m.config_text(pipeline::format_config(c));
  m.seed(c.seed);

  Dataset d = load_dataset(a.data, g);
  spdlog::info("training {} on {} patients x {} genes", c.id, d.size(), d.expression.genes());
  auto r = pipeline::learn_survival_model(d, c, {g.workers});

  fs::create_directories(m.out() / "diagnostics");
  save_model(r.model, m.out() / "model.json");
  m.output(m.out() / "model.json");
  m.write(m.out() / "config.cfg", pipeline::format_config(c));
  pipeline::write_diagnostics(r.diagnostics, m.out() / "diagnostics");
  m.output(m.out() / "diagnostics");
  if (r.model.pca) m.write(m.out() / "diagnostics" / "pca_screening.csv", superpc::screening_report_csv(*r.model.pca));
  spdlog::info("model written to {}", (m.out() / "model.json").string());
  return 0;
}

struct PredictArgs {
  std::string model;
  DataPaths data;
};

int cmd_predict(const PredictArgs& a, const Globals& g, Manifest& m) {
  m.input("model", a.model);
  record_data(m, a.data);
  auto model = load_model<pipeline::FittedPipeline>(a.model);
  m.config_text(pipeline::format_config(model.config));
  m.seed(model.config.seed);

  auto expression = read_expression(a.data.expression, g.log2);
  IngestOptions opt;
  opt.allow_unknown_levels = true;  // the policy below decides
  auto clinical = read_clinical(a.data.clinical, read_schema(a.data.schema), opt);

  // Clinical rows follow the expression file.
  std::map<std::string, std::size_t> row_of;
  for (std::size_t i = 0; i < clinical.patient_ids.size(); ++i) row_of[clinical.patient_ids[i]] = i;
  if (row_of.size() != expression.patients())
    throw input_error("clinical file lists " + std::to_string(row_of.size()) + " patients, expression lists " +
                      std::to_string(expression.patients()));
  std::vector<std::size_t> order;
  for (const auto& id : expression.patient_ids) {
    auto it = row_of.find(id);
    if (it == row_of.end()) throw input_error("patient '" + id + "' has no clinical row");
    order.push_back(it->second);
  }
  clinical = subset(clinical, order);

  auto policy = g.strict_levels ? preprocess::UnseenLevelPolicy::kError : preprocess::UnseenLevelPolicy::kZeros;
  auto preds = pipeline::predict(model, expression, clinical, policy);

  fs::create_directories(m.out() / "curves");
  std::set<std::string> used;
  std::string table = "patient_id,risk,curve_file\n";
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto& id = expression.patient_ids[i];
    fs::path rel = fs::path("curves") / curve_file_name(id, used);
    m.write(m.out() / rel, survival::curve_to_csv(preds[i].curve));
    table += csv::quote_if_needed(id) + "," + csv::format_double(preds[i].risk) + "," + rel.generic_string() + "\n";
  }
  m.write(m.out() / "predictions.csv", table);
  spdlog::info("scored {} patients", preds.size());
  return 0;
}

struct EvaluateArgs {
  std::string predictions, labels;
  int bins = 20;
};

int cmd_evaluate(const EvaluateArgs& a, const Globals&, Manifest& m) {
  m.input("predictions", a.predictions);
  m.input("labels", a.labels);
  auto rows = csv::read(a.predictions);
  if (rows.empty()) throw input_error("empty predictions file: " + a.predictions);
  const auto& header = rows.front().fields;
  auto column = [&](const std::string& name) -> std::optional<std::size_t> {
    for (std::size_t j = 0; j < header.size(); ++j)
      if (header[j] == name) return j;
    return std::nullopt;
  };
  auto id_col = column("patient_id"), risk_col = column("risk"), curve_col = column("curve_file");
  if (!id_col || !risk_col) throw input_error("predictions header needs patient_id and risk: " + a.predictions);

  std::map<std::string, SurvivalLabel> label_of;
  for (auto& [id, l] : read_labels(a.labels)) label_of[id] = l;

  std::vector<double> risks;
  std::vector<SurvivalLabel> labels;
  std::vector<survival::SurvivalCurve> curves;
  const fs::path base = fs::path(a.predictions).parent_path();
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& f = rows[r].fields;
    const std::string where = a.predictions + ":" + std::to_string(rows[r].line);
    if (f.size() != header.size()) throw input_error("expected " + std::to_string(header.size()) + " fields at " + where);
    auto it = label_of.find(f[*id_col]);
    if (it == label_of.end()) throw input_error("no label for patient '" + f[*id_col] + "' at " + where);
    risks.push_back(csv::parse_double(f[*risk_col], where));
    labels.push_back(it->second);
    if (curve_col) {
      fs::path p = base / f[*curve_col];
      curves.push_back(survival::curve_from_csv(slurp(p), p.string()));
    }
  }

  auto ci = eval::concordance(risks, labels);
  std::cout << "CI " << fixed4(ci.value) << "\n";
  std::cout << "comparable_pairs " << ci.comparable << "\n";
  Json report{{"patients", risks.size()},
              {"concordance", ci.value},
              {"comparable_pairs", ci.comparable},
              {"tied_risk_pairs", ci.tied}};
  if (curve_col) {
    auto cal = eval::d_calibration(curves, labels, a.bins);
    std::cout << "HL " << fixed4(cal.hl) << " df " << cal.df << " p "
              << fixed4(cal.p_value) << "\n";
    report["hl_stat"] = cal.hl;
    report["hl_pvalue"] = cal.p_value;
    report["hl_df"] = cal.df;
    report["uncensored"] = cal.table.n;
    m.write(m.out() / "calibration_bins.csv", eval::calibration_to_csv(cal.table));
  } else {
    spdlog::warn("no curve_file column; D-calibration skipped");
  }
  m.write(m.out() / "evaluation.json", report.dump(2) + "\n");
  return 0;
}

struct MatrixArgs {
  std::string config;
  DataPaths data;
};

int cmd_matrix(const MatrixArgs& a, const Globals& g, Manifest& m) {
  m.input("config", a.config);
  record_data(m, a.data);
  auto configs = pipeline::read_matrix_config(a.config);
  std::string all;
  for (auto& c : configs) {
    if (g.seed) c.seed = *g.seed;
    if (c.train_fraction != configs.front().train_fraction)
      throw input_error(a.config + ": config [" + c.id + "] sets a different train_fraction; the split is shared");
    all += "[" + c.id + "]\n" + pipeline::format_config(c);
  }
  m.config_text(all);
  SplitSpec split{configs.front().train_fraction, configs.front().seed, true};
  m.seed(split.seed);

  Dataset d = load_dataset(a.data, g);
  spdlog::info("matrix of {} configs on {} patients", configs.size(), d.size());
  auto r = pipeline::run_experiment_matrix(d, configs, split, {g.workers});

  std::string parts = "patient_id,part\n";
  std::vector<std::string> part(d.size());
  for (auto i : r.train_rows) part[i] = "train";
  for (auto i : r.test_rows) part[i] = "test";
  for (std::size_t i = 0; i < d.size(); ++i) parts += csv::quote_if_needed(d.patient_ids[i]) + "," + part[i] + "\n";

  m.write(m.out() / "results.csv", pipeline::results_csv(r));
  m.write(m.out() / "calibration.csv", pipeline::calibration_csv(r));
  m.write(m.out() / "calibration_bins.csv", pipeline::calibration_bins_csv(r));
  m.write(m.out() / "split.csv", parts);
  std::cout << pipeline::results_csv(r);
  return 0;
}

struct SimulateArgs {
  synthetic::TopicCohortSpec spec;
  bool block_membership = false;
};

int cmd_simulate(SimulateArgs a, const Globals& g, Manifest& m) {
  if (g.seed) a.spec.seed = *g.seed;
  if (a.block_membership) {
    a.spec.concentration = 0.02;
    a.spec.gene_offset_sd = 0.05;
    a.spec.noise_sd = 0.15;
  }
  m.seed(a.spec.seed);
  auto cohort = synthetic::topic_cohort(a.spec);
  auto files = write_dataset(cohort.data, m.out());
  for (const auto& p : {files.expression, files.clinical, files.labels, files.schema}) m.output(p);
  std::string theta = "patient_id";
  for (Eigen::Index k = 0; k < cohort.theta.cols(); ++k) theta += ",topic" + std::to_string(k + 1);
  theta += "\n";
  for (Eigen::Index i = 0; i < cohort.theta.rows(); ++i) {
    theta += cohort.data.patient_ids[static_cast<std::size_t>(i)];
    for (Eigen::Index k = 0; k < cohort.theta.cols(); ++k) theta += "," + csv::format_double(cohort.theta(i, k));
    theta += "\n";
  }
  m.write(m.out() / "theta.csv", theta);
  return 0;
}

int exit_code_for(const Error& e) { return e.kind() == ErrorKind::kNumerical ? 3 : 2; }

}  // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_color_mt("topicsurv");
  spdlog::set_default_logger(logger);

  CLI::App app{"topicsurv: survival prediction from expression topics, principal components and clinical features"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(TOPICSURV_VERSION));

  Globals g;
  app.add_option("--seed", g.seed, "master seed; overrides the config");
  app.add_option("--workers", g.workers, "worker threads (0 = available parallelism)");
  app.add_flag("--log2", g.log2, "apply log2(x+1) to expression at ingest");
  app.add_flag("--strict-levels", g.strict_levels, "reject unseen categorical levels at prediction time");
  app.add_flag("-v,--verbose", g.verbose, "debug logging");
  app.add_flag("-q,--quiet", g.quiet, "warnings and errors only");

  std::string out;
  auto out_option = [&](CLI::App* cmd) {
    cmd->add_option("--out", out, "output directory (created; receives manifest.json)")->required();
  };

  IngestArgs ingest_args;
  auto* ingest_cmd = app.add_subcommand("ingest-check", "validate and summarize a dataset");
  add_data_options(ingest_cmd, ingest_args.data);
  out_option(ingest_cmd);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "fit a pipeline on a whole dataset");
  train_cmd->add_option("--config", train_args.config, "config file (defaults when omitted)");
  add_data_options(train_cmd, train_args.data);
  out_option(train_cmd);

  PredictArgs predict_args;
  auto* predict_cmd = app.add_subcommand("predict", "score patients with a saved model");
  predict_cmd->add_option("--model", predict_args.model, "model.json written by train")->required();
  add_data_options(predict_cmd, predict_args.data, false);
  out_option(predict_cmd);

  EvaluateArgs evaluate_args;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "concordance and D-calibration of saved predictions");
  evaluate_cmd->add_option("--predictions", evaluate_args.predictions, "predictions.csv written by predict")->required();
  evaluate_cmd->add_option("--labels", evaluate_args.labels, "labels CSV")->required();
  evaluate_cmd->add_option("--bins", evaluate_args.bins, "D-calibration bins")->capture_default_str();
  out_option(evaluate_cmd);

  MatrixArgs matrix_args;
  auto* matrix_cmd = app.add_subcommand("matrix", "fit every [section] of a matrix config on one shared split");
  matrix_cmd->add_option("--config", matrix_args.config, "matrix config file")->required();
  add_data_options(matrix_cmd, matrix_args.data);
  out_option(matrix_cmd);

  std::string defaults_out;
  auto* defaults_cmd = app.add_subcommand("defaults", "print every config key with its default");
  defaults_cmd->add_option("--out", defaults_out, "also write defaults.cfg and a manifest here");

  SimulateArgs sim;
  auto* simulate_cmd = app.add_subcommand("simulate", "write a synthetic topic-driven cohort");
  simulate_cmd->add_option("--patients", sim.spec.patients)->capture_default_str();
  simulate_cmd->add_option("--genes", sim.spec.genes)->capture_default_str();
  simulate_cmd->add_option("--genes-per-block", sim.spec.genes_per_block)->capture_default_str();
  simulate_cmd->add_option("--censored", sim.spec.censored_fraction, "censored fraction")->capture_default_str();
  simulate_cmd->add_flag("--block-membership", sim.block_membership, "near-pure mixtures and quiet background");
  out_option(simulate_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (g.verbose) spdlog::set_level(spdlog::level::debug);
  if (g.quiet) spdlog::set_level(spdlog::level::warn);

  CLI::App* cmd = app.get_subcommands().front();
  if (cmd == defaults_cmd) {
    const std::string text = pipeline::format_config(PipelineConfig{});
    std::cout << text;
    if (defaults_out.empty()) return 0;
    Manifest m("defaults", std::vector<std::string>(argv, argv + argc), defaults_out);
    fs::create_directories(defaults_out);
    m.config_text(text);
    m.write(fs::path(defaults_out) / "defaults.cfg", text);
    m.finish(0);
    return 0;
  }

  Manifest m(cmd->get_name(), std::vector<std::string>(argv, argv + argc), out);
  int code = 0;
  std::string message;
  try {
    fs::create_directories(out);
    if (cmd == ingest_cmd) code = cmd_ingest_check(ingest_args, g, m);
    else if (cmd == train_cmd) code = cmd_train(train_args, g, m);
    else if (cmd == predict_cmd) code = cmd_predict(predict_args, g, m);
    else if (cmd == evaluate_cmd) code = cmd_evaluate(evaluate_args, g, m);
    else if (cmd == matrix_cmd) code = cmd_matrix(matrix_args, g, m);
    else if (cmd == simulate_cmd) code = cmd_simulate(sim, g, m);
  } catch (const Error& e) {
    code = exit_code_for(e);
    message = e.what();
  } catch (const fs::filesystem_error& e) {
    code = 2;
    message = e.what();
  } catch (const std::exception& e) {
    code = 1;
    message = e.what();
  }
  if (!message.empty()) spdlog::error("{}: {}", cmd->get_name(), message);
  try {
    m.finish(code, message);
  } catch (const std::exception& e) {
    spdlog::error("could not write manifest: {}", e.what());
    if (code == 0) code = 1;
  }
  return code;
}
