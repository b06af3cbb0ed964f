#include <doctest.h>

#include <algorithm>
#include <set>

#include "test_support.hpp"
#include "topicsurv/core.hpp"
#include "topicsurv/dlda.hpp"
#include "topicsurv/persist.hpp"
#include "topicsurv/rng.hpp"
#include "topicsurv/survival.hpp"
#include "topicsurv/synthetic.hpp"

using namespace topicsurv;

namespace {

struct Fixture {
  TempDir dir;
  std::filesystem::path expr = dir / "expr.csv", clin = dir / "clin.csv", labels = dir / "labels.csv",
                        schema = dir / "schema.csv";

  Fixture() {
    write_text(expr, "patient_id,g1,g2,g3\nP3,1,2,3\nP1,4,5,6\nP2,7,8,9\nP5,1.5,2.5,3.5\nP4,0,0,1\n");
    write_text(schema, "age,real\nstage,categorical,I,II,III\n");
    write_text(clin, "patient_id,age,stage\nP1,50,I\nP2,NA,II\nP3,61.5,NA\nP4,70,III\nP5,44,I\n");
    write_text(labels, "patient_id,time,status\nP1,100,1\nP2,200,0\nP3,50.5,1\nP4,10,1\nP5,300,0\n");
  }
};

int error_kind(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return static_cast<int>(e.kind());
  }
  return -1;
}

std::string error_text(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_SUITE("core") {

TEST_CASE("ingest joins three consistent files by id") {
  Fixture f;
  Dataset d = ingest(f.expr, f.clin, f.labels, f.schema);
  CHECK(d.size() == 5);
  CHECK(d.patient_ids == std::vector<std::string>{"P1", "P2", "P3", "P4", "P5"});
  CHECK(d.expression.values(0, 0) == 4.0);
  CHECK(d.label_of("P3").time == 50.5);
  CHECK(d.labels[2].time == 50.5);
  CHECK(!d.clinical.columns[0].reals[1].has_value());
  CHECK(*d.clinical.columns[1].levels[3] == "III");
}

TEST_CASE("time of zero is rejected with the row") {
  Fixture f;
  write_text(f.labels, "patient_id,time,status\nP1,100,1\nP2,0,0\nP3,50.5,1\nP4,10,1\nP5,300,0\n");
  auto msg = error_text([&] { ingest(f.expr, f.clin, f.labels, f.schema); });
  CHECK(msg.find("P2") != std::string::npos);
  CHECK(msg.find(":3") != std::string::npos);
}

TEST_CASE("patient missing from expression is listed") {
  Fixture f;
  write_text(f.expr, "patient_id,g1,g2,g3\nP3,1,2,3\nP1,4,5,6\nP2,7,8,9\nP4,0,0,1\n");
  auto msg = error_text([&] { ingest(f.expr, f.clin, f.labels, f.schema); });
  CHECK(msg.find("expression is missing: P5") != std::string::npos);
}

TEST_CASE("ingest rejects malformed inputs") {
  Fixture f;
  SUBCASE("duplicate id") {
    write_text(f.labels, "patient_id,time,status\nP1,100,1\nP1,200,0\nP3,50.5,1\nP4,10,1\nP5,300,0\n");
    CHECK(error_kind([&] { ingest(f.expr, f.clin, f.labels, f.schema); }) == int(ErrorKind::kInput));
  }
  SUBCASE("non-numeric expression") {
    write_text(f.expr, "patient_id,g1,g2,g3\nP3,1,x,3\nP1,4,5,6\nP2,7,8,9\nP5,1,2,3\nP4,0,0,1\n");
    CHECK(error_kind([&] { ingest(f.expr, f.clin, f.labels, f.schema); }) == int(ErrorKind::kInput));
  }
  SUBCASE("unknown level") {
    write_text(f.clin, "patient_id,age,stage\nP1,50,I\nP2,NA,IV\nP3,61.5,NA\nP4,70,III\nP5,44,I\n");
    auto msg = error_text([&] { ingest(f.expr, f.clin, f.labels, f.schema); });
    CHECK(msg.find("IV") != std::string::npos);
  }
  SUBCASE("missing expression cell") {
    write_text(f.expr, "patient_id,g1,g2,g3\nP3,1,,3\nP1,4,5,6\nP2,7,8,9\nP5,1,2,3\nP4,0,0,1\n");
    CHECK(error_kind([&] { ingest(f.expr, f.clin, f.labels, f.schema); }) == int(ErrorKind::kInput));
  }
  SUBCASE("missing file names the path") {
    auto msg = error_text([&] { ingest(f.expr, f.clin, f.dir / "nope.csv", f.schema); });
    CHECK(msg.find("nope.csv") != std::string::npos);
  }
}

TEST_CASE("log2 flag transforms expression cells") {
  Fixture f;
  IngestOptions opt;
  opt.log2_transform = true;
  Dataset d = ingest(f.expr, f.clin, f.labels, f.schema, opt);
  CHECK(d.expression.values(0, 0) == doctest::Approx(std::log2(5.0)));
}

TEST_CASE("ingest of a re-serialized dataset is identical") {
  Fixture f;
  Dataset d = ingest(f.expr, f.clin, f.labels, f.schema);
  TempDir out;
  auto files = write_dataset(d, out.path);
  Dataset e = ingest(files.expression, files.clinical, files.labels, files.schema);
  CHECK(e.patient_ids == d.patient_ids);
  CHECK(e.expression.values == d.expression.values);
  CHECK(e.clinical == d.clinical);
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(e.labels[i].time == d.labels[i].time);
    CHECK(e.labels[i].status == d.labels[i].status);
  }
}

TEST_CASE("split of ten rows is 8/2 and repeatable") {
  std::vector<SurvivalLabel> labels;
  for (int i = 0; i < 10; ++i) labels.push_back({double(i + 1), i % 3 == 0 ? 0 : 1});
  SplitSpec spec{0.8, 7, true};
  auto [a, b] = split_indices(labels, spec);
  CHECK(a.size() == 8);
  CHECK(b.size() == 2);
  auto [c, d] = split_indices(labels, spec);
  CHECK(a == c);
  CHECK(b == d);
}

TEST_CASE("stratified split keeps the censored fraction") {
  std::vector<SurvivalLabel> labels;
  Rng rng(3);
  for (int i = 0; i < 200; ++i) labels.push_back({double(i + 1), i < 140 ? 0 : 1});
  std::shuffle(labels.begin(), labels.end(), rng);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto [train, test] = split_indices(labels, {0.8, seed, true});
    auto frac = [&](const std::vector<std::size_t>& idx) {
      double c = 0;
      for (auto i : idx) c += labels[i].status == 0;
      return c / double(idx.size());
    };
    CHECK(frac(train) >= 0.65);
    CHECK(frac(train) <= 0.75);
    CHECK(frac(test) >= 0.65);
    CHECK(frac(test) <= 0.75);
    std::set<std::size_t> all(train.begin(), train.end());
    for (auto i : test) CHECK(all.insert(i).second);
    CHECK(all.size() == 200);
  }
}

TEST_CASE("split rejects bad fractions and tiny cohorts") {
  std::vector<SurvivalLabel> labels(10, SurvivalLabel{1.0, 1});
  CHECK_THROWS_AS(split_indices(labels, {1.0, 0, true}), Error);
  CHECK_THROWS_AS(split_indices(labels, {0.0, 0, true}), Error);
  std::vector<SurvivalLabel> four(4, SurvivalLabel{1.0, 1});
  CHECK_THROWS_AS(split_indices(four, {0.5, 0, true}), Error);
}

TEST_CASE("stratified folds cover every row once with balanced sizes") {
  auto ph = synthetic::proportional_hazards(103, 0.5, 0.3, 11);
  auto folds = stratified_folds(ph.labels, 5, 1);
  std::vector<int> size(5, 0);
  for (int f : folds) {
    REQUIRE(f >= 0);
    REQUIRE(f < 5);
    ++size[std::size_t(f)];
  }
  CHECK(*std::max_element(size.begin(), size.end()) - *std::min_element(size.begin(), size.end()) <= 2);
}

TEST_CASE("derived seeds depend on every coordinate") {
  CHECK(derive_seed(1, {2, 3}) == derive_seed(1, {2, 3}));
  CHECK(derive_seed(1, {2, 3}) != derive_seed(1, {3, 2}));
  CHECK(derive_seed(1, {2, 3}) != derive_seed(2, {2, 3}));
}

TEST_CASE("model round trip preserves predictions bit for bit") {
  auto ph = synthetic::proportional_hazards(60, 0.7, 0.3, 5);
  auto model = survival::fit_mtlr(ph.x, ph.labels);
  TempDir dir;
  save_model(model, dir / "m.json");
  auto back = load_model<survival::MtlrModel>(dir / "m.json");
  CHECK(back == model);
  Eigen::VectorXd probe(1);
  probe << 0.37;
  auto a = survival::mtlr_curve(model, probe), b = survival::mtlr_curve(back, probe);
  CHECK(a.values == b.values);
  CHECK(a.times == b.times);
}

TEST_CASE("bumped version and truncated file are rejected explicitly") {
  auto ph = synthetic::proportional_hazards(30, 0.7, 0.3, 5);
  auto model = survival::fit_cox(ph.x, ph.labels);
  TempDir dir;
  save_model(model, dir / "m.json");
  Json doc = load_json(dir / "m.json");
  doc["format_version"] = kFormatVersion + 1;
  save_json(doc, dir / "v.json");
  CHECK(error_kind([&] { load_model<survival::CoxModel>(dir / "v.json"); }) == int(ErrorKind::kVersion));

  std::string text = read_text(dir / "m.json");
  write_text(dir / "t.json", text.substr(0, text.size() / 2));
  CHECK(error_kind([&] { load_model<survival::CoxModel>(dir / "t.json"); }) == int(ErrorKind::kChecksum));

  // Same length, one digit changed inside the payload.
  auto pos = text.find("\"horizon\"");
  REQUIRE(pos != std::string::npos);
  auto digit = text.find_first_of("123456789", pos);
  text[digit] = text[digit] == '9' ? '8' : char(text[digit] + 1);
  write_text(dir / "c.json", text);
  CHECK(error_kind([&] { load_model<survival::CoxModel>(dir / "c.json"); }) == int(ErrorKind::kChecksum));
}

TEST_CASE("loading the wrong artifact kind fails") {
  auto ph = synthetic::proportional_hazards(30, 0.7, 0.3, 5);
  TempDir dir;
  save_model(survival::fit_cox(ph.x, ph.labels), dir / "m.json");
  CHECK_THROWS_AS(load_model<survival::MtlrModel>(dir / "m.json"), Error);
}

}  // TEST_SUITE
