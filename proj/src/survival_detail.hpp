#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "topicsurv/core.hpp"

namespace topicsurv::survival::detail {

// Row order that depends only on the rows' contents, so fits do not change
// when the training patients are shuffled.
inline std::vector<Eigen::Index> canonical_order(const Eigen::MatrixXd& x, const std::vector<SurvivalLabel>& labels) {
  std::vector<Eigen::Index> order(labels.size());
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    const auto& la = labels[static_cast<std::size_t>(a)];
    const auto& lb = labels[static_cast<std::size_t>(b)];
    if (la.time != lb.time) return la.time < lb.time;
    if (la.status != lb.status) return la.status < lb.status;
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      if (x(a, j) != x(b, j)) return x(a, j) < x(b, j);
    return false;
  });
  return order;
}

inline void reorder(const Eigen::MatrixXd& x, const std::vector<SurvivalLabel>& labels,
                    const std::vector<Eigen::Index>& order, Eigen::MatrixXd& x_out,
                    std::vector<SurvivalLabel>& labels_out) {
  x_out.resize(x.rows(), x.cols());
  labels_out.resize(labels.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    x_out.row(static_cast<Eigen::Index>(k)) = x.row(order[k]);
    labels_out[k] = labels[static_cast<std::size_t>(order[k])];
  }
}

}  // namespace topicsurv::survival::detail
