#include <cmath>
#include <cstdio>
#include <random>

#include "topicsurv/rng.hpp"
#include "topicsurv/synthetic.hpp"

namespace topicsurv::synthetic {

namespace {

std::string padded(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%04d", prefix, i);
  return buf;
}

constexpr double kBaseRate = 0.000693;  // median survival near 1000 days

}  // namespace

BlockCorpus block_corpus(int documents, int blocks, int words_per_block, int tokens, std::uint64_t seed) {
  Rng rng(seed);
  BlockCorpus out;
  out.counts.scheme = dlda::EncodingScheme::kA;
  out.counts.counts = Eigen::MatrixXi::Zero(documents, blocks * words_per_block);
  std::uniform_int_distribution<int> word(0, words_per_block - 1);
  for (int d = 0; d < documents; ++d) {
    int b = d % blocks;
    out.block_of_document.push_back(b);
    for (int t = 0; t < tokens; ++t) ++out.counts.counts(d, b * words_per_block + word(rng));
  }
  return out;
}

double censoring_rate_for(const std::vector<double>& rates, double fraction) {
  if (fraction <= 0.0) return 0.0;
  // P(C < T) = mean(c / (c + rate_i)) is increasing in c.
  auto censored = [&](double c) {
    double s = 0.0;
    for (double r : rates) s += c / (c + r);
    return s / static_cast<double>(rates.size());
  };
  double lo = 0.0, hi = 1.0;
  while (censored(hi) < fraction) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    (censored(mid) < fraction ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

PhData proportional_hazards(int n, double beta, double censored_fraction, std::uint64_t seed, bool binary) {
  Rng rng(seed);
  std::normal_distribution<double> normal;
  std::bernoulli_distribution coin(0.5);
  std::exponential_distribution<double> unit;
  PhData out;
  out.x.resize(n, 1);
  std::vector<double> rates(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    out.x(i, 0) = binary ? (coin(rng) ? 1.0 : 0.0) : normal(rng);
    rates[static_cast<std::size_t>(i)] = kBaseRate * std::exp(beta * out.x(i, 0));
  }
  const double c = censoring_rate_for(rates, censored_fraction);
  for (int i = 0; i < n; ++i) {
    double t = std::max(unit(rng), 1e-12) / rates[static_cast<std::size_t>(i)];
    double cens = c > 0.0 ? unit(rng) / c : std::numeric_limits<double>::infinity();
    out.labels.push_back(t <= cens ? SurvivalLabel{t, 1} : SurvivalLabel{cens, 0});
  }
  return out;
}

TopicCohort topic_cohort(const TopicCohortSpec& s) {
  if (s.topics * 2 * s.genes_per_block > s.genes) throw input_error("topic blocks do not fit in the gene count");
  if (static_cast<int>(s.topic_log_hazard.size()) != s.topics) throw input_error("one log hazard per topic expected");
  Rng rng(s.seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif;
  std::gamma_distribution<double> gamma(s.concentration, 1.0);
  std::exponential_distribution<double> unit;

  const int n = s.patients;
  TopicCohort out;
  out.theta.resize(n, s.topics);
  for (int i = 0; i < n; ++i) {
    double sum = 0.0;
    for (int k = 0; k < s.topics; ++k) sum += out.theta(i, k) = gamma(rng) + 1e-12;
    out.theta.row(i) /= sum;
  }

  ExpressionMatrix& e = out.data.expression;
  for (int i = 0; i < n; ++i) e.patient_ids.push_back(padded("P", i + 1));
  for (int j = 0; j < s.genes; ++j) e.gene_ids.push_back(padded("G", j + 1));
  e.values.resize(n, s.genes);
  for (int j = 0; j < s.genes; ++j) {
    const double offset = s.gene_offset_sd * normal(rng);
    const int block = j / s.genes_per_block;  // even blocks over-, odd blocks under-expressed
    const int topic = block / 2;
    const double sign = block % 2 == 0 ? 1.0 : -1.0;
    for (int i = 0; i < n; ++i) {
      double v = 8.0 + offset + s.noise_sd * normal(rng);
      if (topic < s.topics) v += sign * s.signal * out.theta(i, topic) * (0.75 + 0.5 * unif(rng));
      e.values(i, j) = v;
    }
  }

  ClinicalTable& c = out.data.clinical;
  c.patient_ids = e.patient_ids;
  ClinicalColumn age{{"age", ColumnKind::kReal, {}}, {}, {}};
  ClinicalColumn grade{{"grade", ColumnKind::kCategorical, {"1", "2", "3"}}, {}, {}};
  std::vector<double> rates(static_cast<std::size_t>(n));
  std::uniform_int_distribution<int> grade_draw(1, 3);
  for (int i = 0; i < n; ++i) {
    double a = std::round(60.0 + 10.0 * normal(rng));
    int g = grade_draw(rng);
    double eta = s.age_log_hazard * (a - 60.0) / 10.0 + s.grade_log_hazard * (g - 2);
    for (int k = 0; k < s.topics; ++k) eta += s.topic_log_hazard[static_cast<std::size_t>(k)] * out.theta(i, k);
    rates[static_cast<std::size_t>(i)] = kBaseRate * std::exp(eta);
    age.reals.push_back(unif(rng) < s.missing_fraction ? std::nullopt : std::optional<double>(a));
    grade.levels.push_back(unif(rng) < s.missing_fraction ? std::nullopt : std::optional<std::string>(std::to_string(g)));
  }
  c.columns = {age, grade};

  const double cr = censoring_rate_for(rates, s.censored_fraction);
  for (int i = 0; i < n; ++i) {
    double t = std::max(unit(rng), 1e-12) / rates[static_cast<std::size_t>(i)];
    double cens = cr > 0.0 ? unit(rng) / cr : std::numeric_limits<double>::infinity();
    out.data.labels.push_back(t <= cens ? SurvivalLabel{t, 1} : SurvivalLabel{cens, 0});
  }
  out.data.patient_ids = e.patient_ids;
  return out;
}

}  // namespace topicsurv::synthetic
