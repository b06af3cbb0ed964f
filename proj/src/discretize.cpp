#include <algorithm>
#include <cmath>
#include <cstdlib>

#include "topicsurv/dlda.hpp"

namespace topicsurv::dlda {

namespace {

// Bin index in 1..10 of a non-negative distance from the inner edge of a side.
int side_bin(double distance, double delta) {
  if (!(delta > 0.0)) return 1;
  double width = delta / kBinsPerSide;
  double raw = std::floor(distance / width) + 1.0;
  return static_cast<int>(std::clamp(raw, 1.0, static_cast<double>(kBinsPerSide)));
}

}  // namespace

int discretize_value(double z, const GeneBins& g) {
  if (z >= 1.0) return g.has_pos ? side_bin(z - g.min_pos, g.delta_pos) : 0;
  if (z <= -1.0) return g.has_neg ? -side_bin(g.max_neg - z, g.delta_neg) : 0;
  return 0;
}

Discretized discretize(const Eigen::MatrixXd& z) {
  Discretized out;
  out.stats.genes.resize(static_cast<std::size_t>(z.cols()));
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    GeneBins& g = out.stats.genes[static_cast<std::size_t>(j)];
    double pos_lo = 0, pos_hi = 0, neg_lo = 0, neg_hi = 0;
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      double v = z(i, j);
      if (v >= 1.0) {
        if (!g.has_pos) pos_lo = pos_hi = v;
        pos_lo = std::min(pos_lo, v);
        pos_hi = std::max(pos_hi, v);
        g.has_pos = true;
      } else if (v <= -1.0) {
        if (!g.has_neg) neg_lo = neg_hi = v;
        neg_lo = std::min(neg_lo, v);
        neg_hi = std::max(neg_hi, v);
        g.has_neg = true;
      }
    }
    if (g.has_pos) {
      g.min_pos = pos_lo;
      g.delta_pos = pos_hi - pos_lo;
    }
    if (g.has_neg) {
      g.max_neg = neg_hi;
      g.delta_neg = neg_hi - neg_lo;
    }
  }
  out.bins = discretize_with(z, out.stats);
  return out;
}

Eigen::VectorXi discretize_row(const Eigen::VectorXd& z_row, const DiscretizationStats& stats) {
  if (static_cast<std::size_t>(z_row.size()) != stats.genes.size())
    throw input_error("row has " + std::to_string(z_row.size()) + " genes, discretization expects " +
                      std::to_string(stats.genes.size()));
  Eigen::VectorXi out(z_row.size());
  for (Eigen::Index j = 0; j < z_row.size(); ++j) out[j] = discretize_value(z_row[j], stats.genes[static_cast<std::size_t>(j)]);
  return out;
}

DgevMatrix discretize_with(const Eigen::MatrixXd& z, const DiscretizationStats& stats) {
  if (static_cast<std::size_t>(z.cols()) != stats.genes.size())
    throw input_error("matrix has " + std::to_string(z.cols()) + " genes, discretization expects " +
                      std::to_string(stats.genes.size()));
  DgevMatrix out(z.rows(), z.cols());
  for (Eigen::Index j = 0; j < z.cols(); ++j)
    for (Eigen::Index i = 0; i < z.rows(); ++i) out(i, j) = discretize_value(z(i, j), stats.genes[static_cast<std::size_t>(j)]);
  return out;
}

std::string_view to_string(EncodingScheme s) { return s == EncodingScheme::kA ? "A" : "B"; }

EncodingScheme scheme_from_string(std::string_view s) {
  if (s == "A") return EncodingScheme::kA;
  if (s == "B") return EncodingScheme::kB;
  throw input_error("unknown encoding scheme '" + std::string(s) + "'");
}

std::vector<int> encode_bin(int bin, EncodingScheme scheme) {
  if (scheme == EncodingScheme::kA) return {std::abs(bin)};
  return {std::max(bin, 0), std::max(-bin, 0)};
}

CountMatrix encode(const DgevMatrix& dgev, EncodingScheme scheme) {
  CountMatrix out;
  out.scheme = scheme;
  if (scheme == EncodingScheme::kA) {
    out.counts = dgev.cwiseAbs();
  } else {
    const auto p = dgev.cols();
    out.counts.resize(dgev.rows(), 2 * p);
    out.counts.leftCols(p) = dgev.cwiseMax(0);
    out.counts.rightCols(p) = (-dgev).cwiseMax(0);
  }
  return out;
}

std::vector<std::string> vocabulary(const std::vector<std::string>& gene_ids, EncodingScheme scheme) {
  if (scheme == EncodingScheme::kA) return gene_ids;
  std::vector<std::string> out;
  for (const auto& g : gene_ids) out.push_back("OVER-" + g);
  for (const auto& g : gene_ids) out.push_back("UNDER-" + g);
  return out;
}

}  // namespace topicsurv::dlda
