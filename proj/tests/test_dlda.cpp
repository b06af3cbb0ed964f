#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "topicsurv/dlda.hpp"
#include "topicsurv/rng.hpp"
#include "topicsurv/synthetic.hpp"

using namespace topicsurv;
using namespace topicsurv::dlda;

namespace {

Eigen::MatrixXd column(std::initializer_list<double> v) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(v.size()), 1);
  Eigen::Index i = 0;
  for (double x : v) m(i++, 0) = x;
  return m;
}

// Best assignment of fitted topics to generating blocks by exhaustive search.
double worst_block_mass(const Eigen::MatrixXd& topics, int blocks, int width) {
  std::vector<int> perm(static_cast<std::size_t>(blocks));
  std::iota(perm.begin(), perm.end(), 0);
  double best = 0.0;
  do {
    double worst = 1.0;
    for (int k = 0; k < blocks; ++k)
      worst = std::min(worst, topics.row(k).segment(perm[std::size_t(k)] * width, width).sum());
    best = std::max(best, worst);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace

TEST_SUITE("dlda") {

TEST_CASE("values inside (-1, 1) map to 0") {
  auto d = discretize(column({0.5, -0.99, 2.0}));
  CHECK(d.bins(0, 0) == 0);
  CHECK(d.bins(1, 0) == 0);
}

TEST_CASE("positive side bins follow the width rule") {
  auto d = discretize(column({1.0, 1.5, 3.0, 0.2}));
  CHECK(d.stats.genes[0].delta_pos == 2.0);
  CHECK(d.bins(0, 0) == 1);
  CHECK(d.bins(1, 0) == 3);
  CHECK(d.bins(2, 0) == 10);
  CHECK(d.bins(3, 0) == 0);
}

TEST_CASE("negative side bins mirror the positive rule") {
  auto d = discretize(column({-1.2, -2.0}));
  CHECK(d.stats.genes[0].delta_neg == doctest::Approx(0.8));
  CHECK(d.bins(0, 0) == -1);
  CHECK(d.bins(1, 0) == -10);
}

TEST_CASE("single value on a side maps to bin 1") {
  auto d = discretize(column({1.7, 0.0}));
  CHECK(d.bins(0, 0) == 1);
}

TEST_CASE("replay clamps and respects empty sides") {
  auto d = discretize(column({1.0, 1.5, 3.0}));
  Eigen::VectorXd row(1);
  row << 5.0;
  CHECK(discretize_row(row, d.stats)[0] == 10);
  row << -1.05;
  CHECK(discretize_row(row, d.stats)[0] == 0);
  auto n = discretize(column({-1.5, -3.0}));
  row << -1.1;  // inside the training range's inner edge
  CHECK(discretize_row(row, n.stats)[0] == -1);
}

TEST_CASE("training rows replay to the same bins and signs are preserved") {
  Rng rng(4);
  std::normal_distribution<double> nd(0.0, 1.5);
  Eigen::MatrixXd z(40, 25);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = nd(rng);
  auto d = discretize(z);
  CHECK(discretize_with(z, d.stats) == d.bins);
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      int b = d.bins(i, j);
      CHECK(b >= -10);
      CHECK(b <= 10);
      if (z(i, j) >= 1.0) CHECK(b > 0);
      else if (z(i, j) <= -1.0) CHECK(b < 0);
      else CHECK(b == 0);
    }
}

TEST_CASE("encodings of single bins") {
  CHECK(encode_bin(2, EncodingScheme::kB) == std::vector<int>{2, 0});
  CHECK(encode_bin(-3, EncodingScheme::kB) == std::vector<int>{0, 3});
  CHECK(encode_bin(4, EncodingScheme::kA) == std::vector<int>{4});
  CHECK(encode_bin(-4, EncodingScheme::kA) == std::vector<int>{4});
}

TEST_CASE("scheme B is sign-split and scheme A is its sum") {
  DgevMatrix m(2, 3);
  m << 2, -3, 0, -10, 7, 1;
  auto a = encode(m, EncodingScheme::kA);
  auto b = encode(m, EncodingScheme::kB);
  REQUIRE(b.counts.cols() == 6);
  for (Eigen::Index i = 0; i < 2; ++i)
    for (Eigen::Index j = 0; j < 3; ++j) {
      CHECK(b.counts(i, j) * b.counts(i, j + 3) == 0);
      CHECK(a.counts(i, j) == b.counts(i, j) + b.counts(i, j + 3));
    }
  CHECK(vocabulary({"g1", "g2"}, EncodingScheme::kB) == std::vector<std::string>{"OVER-g1", "OVER-g2", "UNDER-g1", "UNDER-g2"});
}

TEST_CASE("K = 1 recovers corpus word frequencies") {
  auto corpus = synthetic::block_corpus(30, 3, 5, 40, 9);
  LdaOptions opt;
  opt.k = 1;
  auto fit = fit_lda(corpus.counts, opt);
  Eigen::VectorXd freq = corpus.counts.counts.cast<double>().colwise().sum().transpose();
  freq /= freq.sum();
  CHECK((fit.basis.topics.row(0).transpose() - freq).lpNorm<1>() < 1e-3);
}

TEST_CASE("three disjoint blocks are recovered") {
  auto corpus = synthetic::block_corpus(60, 3, 10, 100, 21);
  LdaOptions opt;
  opt.k = 3;
  opt.seed = 5;
  auto fit = fit_lda(corpus.counts, opt);
  CHECK(worst_block_mass(fit.basis.topics, 3, 10) >= 0.97);
  for (Eigen::Index k = 0; k < 3; ++k) CHECK(fit.basis.topics.row(k).sum() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("the evidence bound never decreases") {
  auto corpus = synthetic::block_corpus(40, 4, 8, 50, 2);
  LdaOptions opt;
  opt.k = 6;
  opt.seed = 1;
  opt.em_tolerance = 0.0;
  opt.max_em_iterations = 40;
  auto fit = fit_lda(corpus.counts, opt);
  REQUIRE(fit.bound_trace.size() >= 2);
  for (std::size_t i = 1; i < fit.bound_trace.size(); ++i)
    CHECK(fit.bound_trace[i] >= fit.bound_trace[i - 1] - 1e-8 * std::abs(fit.bound_trace[i - 1]));
}

TEST_CASE("fit is deterministic given the seed") {
  auto corpus = synthetic::block_corpus(30, 3, 6, 30, 8);
  LdaOptions opt;
  opt.k = 4;
  opt.seed = 77;
  CHECK(fit_lda(corpus.counts, opt).basis.topics == fit_lda(corpus.counts, opt).basis.topics);
}

TEST_CASE("K = 0 and empty vocabulary are errors; empty documents are dropped") {
  auto corpus = synthetic::block_corpus(10, 2, 3, 10, 1);
  LdaOptions opt;
  opt.k = 0;
  CHECK_THROWS_AS(fit_lda(corpus.counts, opt), Error);
  CountMatrix empty;
  empty.counts.resize(3, 0);
  opt.k = 2;
  CHECK_THROWS_AS(fit_lda(empty, opt), Error);
  corpus.counts.counts.row(4).setZero();
  auto fit = fit_lda(corpus.counts, opt);
  CHECK(fit.dropped_documents == std::vector<std::size_t>{4});
}

TEST_CASE("inference on empty, pure and wide inputs") {
  auto corpus = synthetic::block_corpus(60, 3, 10, 100, 21);
  LdaOptions opt;
  opt.k = 3;
  opt.seed = 5;
  auto basis = fit_lda(corpus.counts, opt).basis;

  Eigen::VectorXi zero = Eigen::VectorXi::Zero(30);
  auto m0 = infer_mixture(zero, basis);
  for (Eigen::Index k = 0; k < 3; ++k) {
    CHECK(m0.gamma[k] == doctest::Approx(basis.alpha).epsilon(1e-12));
    CHECK(m0.proportions[k] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  }

  // A row drawn only from block 1 should load on the topic owning block 1.
  Eigen::Index owner;
  basis.topics.middleCols(10, 10).rowwise().sum().maxCoeff(&owner);
  Eigen::VectorXi row = Eigen::VectorXi::Zero(30);
  row.segment(10, 10).setConstant(3);
  auto m1 = infer_mixture(row, basis);
  CHECK(m1.proportions[owner] >= 0.95);
  CHECK(m1.proportions.sum() == doctest::Approx(1.0).epsilon(1e-9));

  // Scaling the counts concentrates the mixture further.
  double last = m1.proportions[owner];
  for (int c = 2; c <= 5; ++c) {
    double p = infer_mixture(row * c, basis).proportions[owner];
    CHECK(p >= last - 1e-12);
    last = p;
  }

  Eigen::VectorXi wrong = Eigen::VectorXi::Zero(29);
  CHECK_THROWS_AS(infer_mixture(wrong, basis), Error);

  auto big = synthetic::block_corpus(40, 4, 10, 30, 3);
  LdaOptions o30;
  o30.k = 30;
  o30.max_em_iterations = 5;
  auto wide = fit_lda(big.counts, o30).basis;
  auto m = infer_mixture(big.counts.counts.row(0).transpose(), wide);
  CHECK(m.proportions.size() == 30);
  CHECK((m.proportions.array() > 0).all());
}

TEST_CASE("TopicBasis JSON round trip is exact") {
  auto corpus = synthetic::block_corpus(20, 2, 4, 20, 3);
  LdaOptions opt;
  opt.k = 2;
  auto basis = fit_lda(corpus.counts, opt).basis;
  basis.stats.genes.push_back({true, 1.25, 0.5, false, 0.0, 0.0});
  Json j = basis;
  auto back = j.get<TopicBasis>();
  CHECK(back == basis);
}

}  // TEST_SUITE
