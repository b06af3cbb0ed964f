#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "topicsurv/core.hpp"
#include "topicsurv/survival.hpp"

namespace topicsurv::eval {

struct Concordance {
  double value = 0.0;
  // Counts in half-pairs so that ties (worth 0.5) stay integral.
  std::int64_t concordant_halves = 0;
  std::int64_t comparable = 0;
  std::int64_t tied = 0;
};

/// Higher risk should mean earlier death. A pair is comparable when the
/// earlier observed time is a death; two deaths at the same time are not
/// comparable, a censoring at another's death time is. Risk ties score 0.5.
Concordance concordance(const std::vector<double>& risks, const std::vector<SurvivalLabel>& labels);
Concordance concordance(const Eigen::VectorXd& risks, const std::vector<SurvivalLabel>& labels);

struct CalibrationBin {
  double low = 0.0;
  double high = 0.0;
  double expected = 0.0;   // observed count in the bin
  double predicted = 0.0;  // N / G under uniformity
};

struct CalibrationTable {
  std::vector<CalibrationBin> bins;
  int n = 0;
};

struct DCalibration {
  double hl = 0.0;
  double p_value = 1.0;
  int df = 0;
  CalibrationTable table;
};

/// Hosmer-Lemeshow test that S_i(d_i) over uncensored patients is uniform.
DCalibration d_calibration_from_probabilities(const std::vector<double>& probabilities, int bins = 20);
DCalibration d_calibration(const std::vector<survival::SurvivalCurve>& curves,
                           const std::vector<SurvivalLabel>& labels, int bins = 20);

/// Upper tail of the chi-square distribution.
double chi_square_upper_tail(double statistic, int df);

/// "bin_low,bin_high,expected,predicted".
std::string calibration_to_csv(const CalibrationTable& table);

}  // namespace topicsurv::eval
