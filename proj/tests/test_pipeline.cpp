#include <doctest.h>

#include <cmath>

#include "test_support.hpp"
#include "topicsurv/pipeline.hpp"
#include "topicsurv/synthetic.hpp"

using namespace topicsurv;
using namespace topicsurv::pipeline;

namespace {

synthetic::TopicCohort cohort(int patients, int genes, std::uint64_t seed) {
  synthetic::TopicCohortSpec s;
  s.patients = patients;
  s.genes = genes;
  s.genes_per_block = 20;
  s.seed = seed;
  return synthetic::topic_cohort(s);
}

// Small grids so a full fit takes well under a second.
PipelineConfig quick(FeatureGroups f, Learner l) {
  PipelineConfig c;
  c.features = f;
  c.learner = l;
  c.k_grid = {2, 3};
  c.dlda_folds = 3;
  c.pca_folds = 3;
  c.learner_folds = 3;
  c.ridge_grid = {0.1, 10.0};
  c.mtlr_c_grid = {0.1, 1.0};
  c.seed = 11;
  return c;
}

constexpr FeatureGroups kClinical{true, false, false, false};
constexpr FeatureGroups kClinicalPca{true, true, false, false};
constexpr FeatureGroups kClinicalDlda{true, false, true, false};

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("printed defaults parse back to the defaults") {
  PipelineConfig d;
  CHECK(parse_config(format_config(d)) == d);

  PipelineConfig c = quick(kClinicalDlda, Learner::kMtlr);
  c.id = "C-MTLR";
  c.features.extra_columns = true;
  c.extra_columns = {"subtype"};
  c.eta_grid = {0.01};
  c.schemes = {dlda::EncodingScheme::kB};
  c.mtlr_intervals = 7;
  c.train_fraction = 0.75;
  CHECK(parse_config(format_config(c)) == c);
  CHECK(Json(c).get<PipelineConfig>() == c);
}

TEST_CASE("config grammar") {
  auto c = parse_config("# comment\nlearner = rcox\n\nfeatures.pca = true  # trailing\ndlda.k_grid = 2, 4\nseed = 9\n");
  CHECK(c.learner == Learner::kRCox);
  CHECK(c.features.pca);
  CHECK(c.k_grid == std::vector<int>{2, 4});
  CHECK(c.seed == 9);

  try {
    parse_config("seed = 1\nbogus = 3\n");
    FAIL("unknown key accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kInput);
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    CHECK(std::string(e.what()).find("bogus") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config("[A]\nseed = 1\n"), Error);
  CHECK_THROWS_AS(parse_config("seed = minus one\n"), Error);
  CHECK_THROWS_AS(parse_config("learner = forest\n"), Error);

  auto m = parse_matrix_config("seed = 4\n[A-Cox]\n[A-MTLR]\nlearner = mtlr\n[D]\nfeatures.pca = true\nseed = 5\n");
  REQUIRE(m.size() == 3);
  CHECK(m[0].id == "A-Cox");
  CHECK(m[0].learner == Learner::kCox);
  CHECK(m[1].learner == Learner::kMtlr);
  CHECK(m[1].seed == 4);
  CHECK(m[2].seed == 5);
  CHECK(m[2].features.pca);
  CHECK_THROWS_AS(parse_matrix_config("[only]\n"), Error);
  CHECK_THROWS_AS(parse_matrix_config("[A]\n[A]\n"), Error);
}

TEST_CASE("validation fails before any work") {
  auto data = cohort(40, 200, 1).data;
  PipelineConfig none;
  none.features = {false, false, false, false};
  try {
    learn_survival_model(data, none);
    FAIL("accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kInput);
    CHECK(std::string(e.what()).find("feature group") != std::string::npos);
  }
  PipelineConfig k0;
  k0.features.dlda = true;
  k0.k_grid = {0};
  try {
    k0.validate();
    FAIL("accepted");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("K = 0") != std::string::npos);
  }
  PipelineConfig extra;
  extra.features.extra_columns = true;
  CHECK_THROWS_AS(extra.validate(), Error);
  PipelineConfig folds;
  folds.learner_folds = 1;
  CHECK_THROWS_AS(folds.validate(), Error);
}

TEST_CASE("group A Cox: no bases, finite coefficients, replayable") {
  auto data = cohort(100, 200, 2).data;
  auto r = learn_survival_model(data, quick(kClinical, Learner::kCox));
  CHECK_FALSE(r.model.topics.has_value());
  CHECK_FALSE(r.model.pca.has_value());
  REQUIRE(r.model.cox.has_value());
  CHECK_FALSE(r.model.mtlr.has_value());
  CHECK(r.model.cox->coefficients.allFinite());
  CHECK(r.model.cox->coefficients.size() == static_cast<Eigen::Index>(r.model.feature_names.size()));
  CHECK(r.model.feature_names.front() == "age");

  // A training patient replays to the in-sample risk.
  REQUIRE(r.diagnostics.training_ids == data.patient_ids);
  auto preds = predict(r.model, data.expression, data.clinical);
  for (std::size_t i = 0; i < preds.size(); ++i) CHECK(same_bits(preds[i].risk, r.diagnostics.training_risks[i]));
}

TEST_CASE("curves are valid and risk is minus the area") {
  auto data = cohort(80, 200, 3).data;
  for (Learner l : {Learner::kCox, Learner::kRCox, Learner::kMtlr}) {
    auto r = learn_survival_model(data, quick(kClinicalPca, l));
    for (const auto& p : predict(r.model, data.expression, data.clinical)) {
      CHECK_NOTHROW(survival::validate(p.curve));
      CHECK(p.curve.values.front() == 1.0);
      CHECK(p.risk == -p.curve.area());
    }
    if (l != Learner::kCox) {
      CHECK(r.diagnostics.learner_hyperparameter > 0.0);
      CHECK(r.diagnostics.learner_cells.size() == 2 * 3);
    }
  }
}

TEST_CASE("save and load keep predictions bit-identical") {
  auto data = cohort(80, 200, 4).data;
  TempDir dir;
  for (auto [f, l] : {std::pair{kClinicalPca, Learner::kMtlr}, std::pair{kClinicalDlda, Learner::kCox}}) {
    auto r = learn_survival_model(data, quick(f, l));
    save_model(r.model, dir / "model.json");
    auto back = load_model<FittedPipeline>(dir / "model.json");
    CHECK(Json(back) == Json(r.model));
    auto a = predict(r.model, data.expression, data.clinical);
    auto b = predict(back, data.expression, data.clinical);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(same_bits(a[i].risk, b[i].risk));
      CHECK(a[i].curve.values == b[i].curve.values);
    }
    write_diagnostics(r.diagnostics, dir.path);
    CHECK(std::filesystem::exists(dir / "diagnostics.json"));
    CHECK(read_text(dir / "training_risks.csv").rfind("patient_id,risk\n", 0) == 0);
  }
}

TEST_CASE("unseen level: strict rejects with a stage, lenient scores") {
  auto data = cohort(60, 200, 5).data;
  auto r = learn_survival_model(data, quick(kClinical, Learner::kCox));
  ClinicalTable odd = data.clinical;
  for (auto& col : odd.columns)
    if (col.schema.name == "grade") {
      col.schema.levels.push_back("4");
      col.levels[0] = "4";
    }
  try {
    predict(r.model, data.expression, odd);
    FAIL("unseen level accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kInput);
    CHECK_FALSE(e.stage().empty());
  }
  auto p = predict(r.model, data.expression, odd, preprocess::UnseenLevelPolicy::kZeros);
  CHECK(std::isfinite(p[0].risk));
}

TEST_CASE("worker count does not change the fit") {
  auto data = cohort(80, 200, 6).data;
  auto c = quick(FeatureGroups{true, true, true, false}, Learner::kRCox);
  auto a = learn_survival_model(data, c, {1});
  auto b = learn_survival_model(data, c, {3});
  CHECK(Json(a.model) == Json(b.model));
  CHECK(Json(a.diagnostics) == Json(b.diagnostics));
}

TEST_CASE("stage isolation: each basis ignores the other group") {
  auto data = cohort(80, 200, 7).data;
  auto pca = learn_survival_model(data, quick(kClinicalPca, Learner::kCox));
  auto dl = learn_survival_model(data, quick(kClinicalDlda, Learner::kCox));
  auto both = learn_survival_model(data, quick(FeatureGroups{true, true, true, false}, Learner::kCox));
  REQUIRE(both.model.pca.has_value());
  REQUIRE(both.model.topics.has_value());
  CHECK(Json(*both.model.pca) == Json(*pca.model.pca));
  CHECK(Json(*both.model.topics) == Json(*dl.model.topics));
  CHECK(both.model.feature_names.size() ==
        dl.model.feature_names.size() + pca.model.feature_names.size() - 4);  // age + 3 grade levels, counted once
}

TEST_CASE("over-expressing the high-risk topic raises risk") {
  // Topic 0 carries log hazard +2.5 and owns genes G0001..G0020.
  auto tc = cohort(150, 300, 8);
  auto r = learn_survival_model(tc.data, quick(kClinicalDlda, Learner::kCox));
  int tried = 0, higher = 0;
  for (Eigen::Index i = 0; i < tc.theta.rows() && tried < 10; ++i) {
    if (tc.theta(i, 1) < 0.8) continue;  // neutral patients only
    ++tried;
    Eigen::VectorXd base = tc.data.expression.values.row(i).transpose();
    Eigen::VectorXd sig = base;
    sig.head(20).array() += 3.0;
    std::vector<std::optional<std::string>> cells{std::string("60"), std::string("2")};
    auto a = use_survival_model(r.model, base, cells);
    auto b = use_survival_model(r.model, sig, cells);
    higher += b.risk > a.risk;
  }
  REQUIRE(tried > 0);
  CHECK(higher == tried);
}

TEST_CASE("experiment matrix: shape, range and seeded determinism") {
  auto data = cohort(100, 200, 9).data;
  auto a_cox = quick(kClinical, Learner::kCox);
  a_cox.id = "A-Cox";
  auto a_mtlr = quick(kClinical, Learner::kMtlr);
  a_mtlr.id = "A-MTLR";
  SplitSpec split{0.8, 3};
  auto r = run_experiment_matrix(data, {a_cox, a_mtlr}, split);
  REQUIRE(r.rows.size() == 2);
  for (const auto& row : r.rows) {
    CHECK(row.test_ci >= 0.0);
    CHECK(row.test_ci <= 1.0);
    CHECK(row.calibration.table.bins.size() == 20);
  }
  CHECK(r.test_rows.size() + r.train_rows.size() == data.size());
  auto csv = results_csv(r);
  CHECK(csv.rfind("config_id,features_clinical,features_pca,features_dlda,learner,test_ci,hl_stat,hl_pvalue\nA-Cox,", 0) == 0);

  auto dup = a_cox;
  dup.id = "A-Cox-again";
  auto d = run_experiment_matrix(data, {a_cox, dup, a_mtlr}, split, {2});
  CHECK(same_bits(d.rows[0].test_ci, d.rows[1].test_ci));
  CHECK(same_bits(d.rows[0].calibration.hl, d.rows[1].calibration.hl));
  CHECK(same_bits(d.rows[2].test_ci, r.rows[1].test_ci));
  CHECK(results_csv(run_experiment_matrix(data, {a_cox, a_mtlr}, split)) == csv);
  CHECK_THROWS_AS(run_experiment_matrix(data, {a_cox}, split), Error);
}

TEST_CASE("expression-augmented rows beat the clinical baseline") {
  auto data = cohort(300, 400, 10).data;
  auto base = quick(kClinical, Learner::kCox);
  base.id = "A-Cox";
  auto pca_cox = quick(kClinicalPca, Learner::kCox);
  pca_cox.id = "B-Cox";
  auto pca_rcox = quick(kClinicalPca, Learner::kRCox);
  pca_rcox.id = "B-RCox";
  auto r = run_experiment_matrix(data, {base, pca_cox, pca_rcox}, SplitSpec{0.8, 10});
  CHECK(r.rows[1].test_ci >= r.rows[0].test_ci);
  CHECK(r.rows[2].test_ci >= r.rows[0].test_ci);
}

TEST_CASE("failures carry the config and stage") {
  auto data = cohort(60, 200, 12).data;
  auto a = quick(kClinical, Learner::kCox);
  a.id = "ok";
  auto bad = quick(FeatureGroups{true, false, false, true}, Learner::kCox);
  bad.id = "bad";
  bad.extra_columns = {"subtype"};
  try {
    run_experiment_matrix(data, {a, bad}, SplitSpec{});
    FAIL("missing extra column accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kInput);
    CHECK(std::string(e.what()).find("bad") != std::string::npos);
    CHECK(std::string(e.what()).find("subtype") != std::string::npos);
  }
}

}  // TEST_SUITE
