#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <boost/math/special_functions/digamma.hpp>
#include <spdlog/spdlog.h>

#include "topicsurv/dlda.hpp"
#include "topicsurv/rng.hpp"

namespace topicsurv::dlda {

using boost::math::digamma;

namespace {

struct Document {
  std::vector<Eigen::Index> words;
  std::vector<double> counts;
  double total = 0.0;
};

Document make_document(const Eigen::Ref<const Eigen::VectorXi>& row) {
  Document d;
  for (Eigen::Index w = 0; w < row.size(); ++w) {
    if (row[w] < 0) throw input_error("count matrix holds a negative entry");
    if (row[w] > 0) {
      d.words.push_back(w);
      d.counts.push_back(row[w]);
      d.total += row[w];
    }
  }
  return d;
}

// exp(E[log theta]) up to a common factor.
Eigen::VectorXd scaled_exp_elog_theta(const Eigen::VectorXd& gamma) {
  Eigen::VectorXd e(gamma.size());
  const double psi_sum = digamma(gamma.sum());
  for (Eigen::Index k = 0; k < gamma.size(); ++k) e[k] = digamma(gamma[k]) - psi_sum;
  return (e.array() - e.maxCoeff()).exp();
}

Eigen::VectorXd elog_theta(const Eigen::VectorXd& gamma) {
  Eigen::VectorXd e(gamma.size());
  const double psi_sum = digamma(gamma.sum());
  for (Eigen::Index k = 0; k < gamma.size(); ++k) e[k] = digamma(gamma[k]) - psi_sum;
  return e;
}

// Word weights with each column rescaled by its maximum so nothing underflows;
// the per-word factor cancels in the topic responsibilities.
struct WordWeights {
  Eigen::MatrixXd scaled;     // K x V
  Eigen::VectorXd log_scale;  // V, log of the removed factor
};

WordWeights weights_from_log(const Eigen::MatrixXd& log_beta) {
  WordWeights w;
  w.log_scale = log_beta.colwise().maxCoeff().transpose();
  w.scaled = (log_beta.rowwise() - w.log_scale.transpose()).array().exp();
  return w;
}

Eigen::MatrixXd expected_log_beta(const Eigen::MatrixXd& lambda) {
  Eigen::MatrixXd e(lambda.rows(), lambda.cols());
  for (Eigen::Index k = 0; k < lambda.rows(); ++k) {
    const double psi_sum = digamma(lambda.row(k).sum());
    for (Eigen::Index v = 0; v < lambda.cols(); ++v) e(k, v) = digamma(lambda(k, v)) - psi_sum;
  }
  return e;
}

// Coordinate ascent on one document's gamma with word weights fixed.
// Returns the number of iterations used.
int update_gamma(const Document& doc, const WordWeights& w, double alpha, int max_iter, double tol,
                 Eigen::VectorXd& gamma) {
  const auto K = gamma.size();
  Eigen::VectorXd next(K);
  int it = 0;
  for (; it < max_iter; ++it) {
    Eigen::VectorXd et = scaled_exp_elog_theta(gamma);
    next.setConstant(0.0);
    for (std::size_t n = 0; n < doc.words.size(); ++n) {
      auto col = w.scaled.col(doc.words[n]);
      double norm = et.dot(col);
      next += (doc.counts[n] / norm) * col;
    }
    next = (alpha + et.array() * next.array()).matrix();
    double change = ((next - gamma).array().abs() / gamma.array()).maxCoeff();
    gamma = next;
    if (change < tol) {
      ++it;
      break;
    }
  }
  return it;
}

// Dirichlet part of a document's bound: E[log p(theta|alpha)] - E[log q(theta|gamma)].
double dirichlet_terms(const Eigen::VectorXd& gamma, const Eigen::VectorXd& elog, double alpha) {
  const auto K = static_cast<double>(gamma.size());
  double s = std::lgamma(K * alpha) - K * std::lgamma(alpha) - std::lgamma(gamma.sum());
  for (Eigen::Index k = 0; k < gamma.size(); ++k) s += std::lgamma(gamma[k]) + (alpha - gamma[k]) * elog[k];
  return s;
}

// Document bound with optimal responsibilities:
// sum_w n_w log sum_k exp(Elog theta_k + log_beta_kw) + Dirichlet terms.
double document_bound_impl(const Document& doc, const WordWeights& w, const Eigen::VectorXd& gamma, double alpha) {
  Eigen::VectorXd elog = elog_theta(gamma);
  const double shift = elog.maxCoeff();
  Eigen::VectorXd et = (elog.array() - shift).exp();
  double s = 0.0;
  for (std::size_t n = 0; n < doc.words.size(); ++n) {
    auto v = doc.words[n];
    s += doc.counts[n] * (std::log(et.dot(w.scaled.col(v))) + shift + w.log_scale[v]);
  }
  return s + dirichlet_terms(gamma, elog, alpha);
}

double topic_terms(const Eigen::MatrixXd& eta, const Eigen::MatrixXd& lambda, const Eigen::MatrixXd& elog_beta) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < lambda.rows(); ++k) {
    s += std::lgamma(eta.row(k).sum()) - std::lgamma(lambda.row(k).sum());
    for (Eigen::Index v = 0; v < lambda.cols(); ++v)
      s += std::lgamma(lambda(k, v)) - std::lgamma(eta(k, v)) + (eta(k, v) - lambda(k, v)) * elog_beta(k, v);
  }
  return s;
}

// k-means++ seeding over document word-frequency vectors: each topic starts
// from one document, later seeds favour documents far from earlier ones.
std::vector<std::size_t> seed_documents(const std::vector<Document>& docs, Eigen::Index vocab, int k, Rng& rng) {
  const auto D = docs.size();
  Eigen::MatrixXd freq = Eigen::MatrixXd::Zero(vocab, static_cast<Eigen::Index>(D));
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t n = 0; n < docs[d].words.size(); ++n)
      freq(docs[d].words[n], static_cast<Eigen::Index>(d)) = docs[d].counts[n] / docs[d].total;

  std::vector<std::size_t> chosen;
  std::uniform_int_distribution<std::size_t> pick(0, D - 1);
  chosen.push_back(pick(rng));
  std::vector<double> dist(D, std::numeric_limits<double>::infinity());
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  while (chosen.size() < static_cast<std::size_t>(k)) {
    auto last = static_cast<Eigen::Index>(chosen.back());
    double total = 0.0;
    for (std::size_t d = 0; d < D; ++d) {
      dist[d] = std::min(dist[d], (freq.col(static_cast<Eigen::Index>(d)) - freq.col(last)).squaredNorm());
      total += dist[d];
    }
    if (!(total > 0.0)) {
      chosen.push_back(pick(rng));
      continue;
    }
    double target = unif(rng) * total;
    std::size_t d = 0;
    for (double acc = 0.0; d + 1 < D; ++d) {
      acc += dist[d];
      if (acc >= target && dist[d] > 0.0) break;
    }
    chosen.push_back(d);
  }
  return chosen;
}

}  // namespace

LdaFit fit_lda(const CountMatrix& counts, const LdaOptions& opt) {
  if (opt.k <= 0) throw input_error("number of topics must be positive, got " + std::to_string(opt.k));
  if (!(opt.alpha > 0.0)) throw input_error("alpha must be positive");
  const Eigen::Index V = counts.counts.cols();
  if (V == 0) throw input_error("empty vocabulary");
  const int K = opt.k;

  LdaFit fit;
  std::vector<Document> docs;
  for (Eigen::Index d = 0; d < counts.counts.rows(); ++d) {
    Document doc = make_document(counts.counts.row(d).transpose());
    if (doc.words.empty())
      fit.dropped_documents.push_back(static_cast<std::size_t>(d));
    else
      docs.push_back(std::move(doc));
  }
  if (!fit.dropped_documents.empty())
    spdlog::warn("fit_lda: dropped {} all-zero documents", fit.dropped_documents.size());
  if (docs.empty()) throw input_error("every document is empty");

  const double inv_v = 1.0 / static_cast<double>(V);
  struct Run {
    Eigen::MatrixXd lambda;
    std::vector<double> trace;
    int iterations = 0;
  };
  auto run_em = [&](std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Eigen::MatrixXd eta(K, V);
    for (Eigen::Index k = 0; k < K; ++k)
      for (Eigen::Index v = 0; v < V; ++v) eta(k, v) = inv_v + unif(rng) * inv_v * inv_v;

    Run run;
    run.lambda = eta;
    auto seeds = seed_documents(docs, V, K, rng);
    for (Eigen::Index k = 0; k < K; ++k) {
      const auto& doc = docs[seeds[static_cast<std::size_t>(k)]];
      for (std::size_t n = 0; n < doc.words.size(); ++n) run.lambda(k, doc.words[n]) += doc.counts[n];
      for (Eigen::Index v = 0; v < V; ++v) run.lambda(k, v) += 0.1 * unif(rng);
    }

    std::vector<Eigen::VectorXd> gamma(docs.size());
    for (std::size_t d = 0; d < docs.size(); ++d)
      gamma[d] = Eigen::VectorXd::Constant(K, opt.alpha + docs[d].total / K);

    Eigen::MatrixXd sstats(K, V);
    double previous = -std::numeric_limits<double>::infinity();
    for (int it = 0; it < opt.max_em_iterations; ++it) {
      WordWeights w = weights_from_log(expected_log_beta(run.lambda));
      sstats.setZero();
      for (std::size_t d = 0; d < docs.size(); ++d) {
        const auto& doc = docs[d];
        update_gamma(doc, w, opt.alpha, opt.max_estep_iterations, opt.estep_tolerance, gamma[d]);
        Eigen::VectorXd et = scaled_exp_elog_theta(gamma[d]);
        for (std::size_t n = 0; n < doc.words.size(); ++n) {
          auto col = w.scaled.col(doc.words[n]);
          sstats.col(doc.words[n]) += (doc.counts[n] / et.dot(col)) * et;
        }
      }
      run.lambda = eta + sstats.cwiseProduct(w.scaled);

      Eigen::MatrixXd elog_beta = expected_log_beta(run.lambda);
      WordWeights wn = weights_from_log(elog_beta);
      double bound = topic_terms(eta, run.lambda, elog_beta);
      for (std::size_t d = 0; d < docs.size(); ++d) bound += document_bound_impl(docs[d], wn, gamma[d], opt.alpha);
      run.trace.push_back(bound);
      run.iterations = it + 1;
      double rel = std::abs(bound - previous) / std::abs(bound);
      spdlog::debug("fit_lda K={} iteration {} bound {:.10g} relative change {:.3g}", K, it + 1, bound, rel);
      if (rel < opt.em_tolerance) break;
      previous = bound;
    }
    return run;
  };

  // Restarts from different seedings; the highest final bound wins.
  Run best;
  for (int r = 0; r < std::max(1, opt.restarts); ++r) {
    Run run = run_em(r == 0 ? opt.seed : derive_seed(opt.seed, {static_cast<std::uint64_t>(r)}));
    if (best.trace.empty() || run.trace.back() > best.trace.back()) best = std::move(run);
  }
  fit.bound_trace = std::move(best.trace);
  fit.iterations = best.iterations;
  const Eigen::MatrixXd& lambda = best.lambda;

  fit.basis.alpha = opt.alpha;
  fit.basis.scheme = counts.scheme;
  fit.basis.topics = lambda.array().colwise() / lambda.rowwise().sum().array();
  return fit;
}

namespace {

WordWeights weights_from_topics(const TopicBasis& basis) {
  WordWeights w;
  w.log_scale = basis.topics.colwise().maxCoeff().transpose().array().log();
  w.scaled = basis.topics.array().rowwise() / basis.topics.colwise().maxCoeff().array();
  return w;
}

TopicMixture infer_with(const Document& doc, const WordWeights& w, double alpha, Eigen::Index K) {
  TopicMixture m;
  m.gamma = Eigen::VectorXd::Constant(K, alpha + doc.total / static_cast<double>(K));
  if (!doc.words.empty()) update_gamma(doc, w, alpha, 1000, 1e-6, m.gamma);
  m.proportions = m.gamma / m.gamma.sum();
  return m;
}

}  // namespace

TopicMixture infer_mixture(const Eigen::Ref<const Eigen::VectorXi>& count_row, const TopicBasis& basis) {
  if (count_row.size() != basis.vocabulary_size())
    throw input_error("count row has " + std::to_string(count_row.size()) + " features, basis vocabulary has " +
                      std::to_string(basis.vocabulary_size()));
  return infer_with(make_document(count_row), weights_from_topics(basis), basis.alpha, basis.topics.rows());
}

double document_bound(const Eigen::Ref<const Eigen::VectorXi>& count_row, const TopicBasis& basis,
                      const TopicMixture& mixture) {
  if (count_row.size() != basis.vocabulary_size()) throw input_error("count row does not match basis vocabulary");
  return document_bound_impl(make_document(count_row), weights_from_topics(basis), mixture.gamma, basis.alpha);
}

Eigen::MatrixXd infer_proportions(const Eigen::MatrixXi& counts, const TopicBasis& basis) {
  if (counts.cols() != basis.vocabulary_size())
    throw input_error("count matrix has " + std::to_string(counts.cols()) + " features, basis vocabulary has " +
                      std::to_string(basis.vocabulary_size()));
  WordWeights w = weights_from_topics(basis);
  Eigen::MatrixXd out(counts.rows(), basis.topics.rows());
  for (Eigen::Index d = 0; d < counts.rows(); ++d)
    out.row(d) = infer_with(make_document(counts.row(d).transpose()), w, basis.alpha, basis.topics.rows())
                     .proportions.transpose();
  return out;
}

Eigen::MatrixXd use_basis(const Eigen::MatrixXd& z, const TopicBasis& basis) {
  return infer_proportions(encode(discretize_with(z, basis.stats), basis.scheme).counts, basis);
}

void to_json(Json& j, const TopicBasis& b) {
  Json genes = Json::array();
  for (const auto& g : b.stats.genes)
    genes.push_back({g.has_pos, g.min_pos, g.delta_pos, g.has_neg, g.max_neg, g.delta_neg});
  j = Json{{"topics", matrix_to_json(b.topics)},
           {"alpha", b.alpha},
           {"scheme", std::string(to_string(b.scheme))},
           {"genes", genes}};
}

void from_json(const Json& j, TopicBasis& b) {
  b.topics = matrix_from_json(j.at("topics"));
  b.alpha = j.at("alpha").get<double>();
  b.scheme = scheme_from_string(j.at("scheme").get<std::string>());
  b.stats.genes.clear();
  for (const auto& g : j.at("genes"))
    b.stats.genes.push_back({g.at(0).get<bool>(), g.at(1).get<double>(), g.at(2).get<double>(), g.at(3).get<bool>(),
                             g.at(4).get<double>(), g.at(5).get<double>()});
}

}  // namespace topicsurv::dlda
