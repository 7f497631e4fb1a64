#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace wmqre {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// One sampled level-2 unit. The random-effect design Z_j is the all-ones
// vector of length n_j and is never stored.
struct ClusterBlock {
  Matrix X;            // n_j x p
  Vector y;            // n_j
  double w2 = 1.0;     // cluster weight w_j
  Vector w1;           // unit weights w_{i|j}, n_j entries
  std::string id;

  std::size_t size() const { return static_cast<std::size_t>(y.size()); }
};

struct GroupedDesign {
  std::vector<ClusterBlock> clusters;
  std::size_t p = 0;

  std::size_t total_units() const {
    std::size_t n = 0;
    for (const auto& c : clusters) n += c.size();
    return n;
  }

  void validate() const {
    if (clusters.size() < 2) throw std::invalid_argument("a grouped design needs at least 2 clusters");
    if (p == 0) throw std::invalid_argument("design has no fixed-effect columns");
    for (const auto& c : clusters) {
      const auto ctx = " (cluster '" + c.id + "')";
      if (c.y.size() == 0) throw std::invalid_argument("empty cluster" + ctx);
      if (static_cast<std::size_t>(c.X.cols()) != p) {
        throw std::invalid_argument("inconsistent number of covariate columns" + ctx);
      }
      if (c.X.rows() != c.y.size() || c.w1.size() != c.y.size()) {
        throw std::invalid_argument("row count mismatch between X, y and unit weights" + ctx);
      }
      if (!std::isfinite(c.w2) || c.w2 <= 0.0) {
        throw std::invalid_argument("cluster weight must be finite and positive" + ctx);
      }
      if (!c.w1.allFinite() || (c.w1.array() <= 0.0).any()) {
        throw std::invalid_argument("unit weights must be finite and positive" + ctx);
      }
      if (!c.X.allFinite() || !c.y.allFinite()) {
        throw std::invalid_argument("non-finite covariate or response" + ctx);
      }
    }
    if (p >= total_units()) throw std::invalid_argument("need more observations than fixed effects");
  }

  // Stacked design, responses and per-row products w_j * w_{i|j}.
  Matrix stacked_X() const {
    Matrix out(static_cast<Eigen::Index>(total_units()), static_cast<Eigen::Index>(p));
    Eigen::Index row = 0;
    for (const auto& c : clusters) {
      out.middleRows(row, c.X.rows()) = c.X;
      row += c.X.rows();
    }
    return out;
  }

  Vector stacked_y() const {
    Vector out(static_cast<Eigen::Index>(total_units()));
    Eigen::Index row = 0;
    for (const auto& c : clusters) {
      out.segment(row, c.y.size()) = c.y;
      row += c.y.size();
    }
    return out;
  }

  Vector stacked_row_weights() const {
    Vector out(static_cast<Eigen::Index>(total_units()));
    Eigen::Index row = 0;
    for (const auto& c : clusters) {
      out.segment(row, c.y.size()) = c.w2 * c.w1;
      row += c.y.size();
    }
    return out;
  }

  // Unweighted sample variance of all responses.
  double response_variance() const {
    const Vector y = stacked_y();
    if (y.size() < 2) return 0.0;
    const double mean = y.mean();
    return (y.array() - mean).square().sum() / static_cast<double>(y.size() - 1);
  }

  // Copy with every weight set to 1.
  GroupedDesign unweighted() const {
    GroupedDesign out = *this;
    for (auto& c : out.clusters) {
      c.w2 = 1.0;
      c.w1.setOnes();
    }
    return out;
  }
};

struct VarianceComponents {
  double sigma2_gamma = 0.0;
  double sigma2_eps = 1.0;
};

}  // namespace wmqre
