#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "topicsurv/core.hpp"
#include "topicsurv/dlda.hpp"

// Seeded generators for tests, the acceptance suite and the `simulate` command.
namespace topicsurv::synthetic {

struct BlockCorpus {
  dlda::CountMatrix counts;
  std::vector<int> block_of_document;
};

/// Documents drawn from one of `blocks` disjoint word blocks each, tokens
/// uniform within the block.
BlockCorpus block_corpus(int documents, int blocks, int words_per_block, int tokens, std::uint64_t seed);

struct PhData {
  Eigen::MatrixXd x;  // n x 1
  std::vector<SurvivalLabel> labels;
};

/// One covariate (standard normal, or Bernoulli(0.5) when `binary`), exponential
/// baseline hazard, independent exponential censoring tuned to the requested
/// censored fraction.
PhData proportional_hazards(int n, double log_hazard_ratio, double censored_fraction, std::uint64_t seed,
                            bool binary = false);

/// Exponential censoring rate giving roughly `fraction` censored when event
/// rates are `rates`.
double censoring_rate_for(const std::vector<double>& rates, double fraction);

struct TopicCohortSpec {
  int patients = 300;
  int genes = 1000;
  int topics = 3;
  int genes_per_block = 40;        // each topic owns an over- and an under-expressed block
  double concentration = 0.3;      // symmetric Dirichlet for patient mixtures
  double signal = 3.0;             // block shift at full topic weight
  double noise_sd = 0.5;
  double gene_offset_sd = 0.5;     // per-gene baseline shift
  std::vector<double> topic_log_hazard{2.5, 0.0, -2.5};
  double age_log_hazard = 0.25;    // per standard deviation
  double grade_log_hazard = 0.15;  // per grade step
  double censored_fraction = 0.3;
  double missing_fraction = 0.02;  // NA cells in the clinical table
  std::uint64_t seed = 0;
};

struct TopicCohort {
  Dataset data;
  Eigen::MatrixXd theta;  // true mixtures, patients x topics
};

/// Expression driven by a latent topic mixture; the hazard depends on the
/// mixture plus age and grade.
TopicCohort topic_cohort(const TopicCohortSpec& spec);

}  // namespace topicsurv::synthetic
