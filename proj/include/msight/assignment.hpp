#pragma once

#include <Eigen/Dense>

#include <limits>
#include <utility>
#include <vector>

namespace msight {

/// Rows are tracks, columns are detections.
struct Assignment {
  std::vector<std::pair<int, int>> matches;
  std::vector<int> unmatched_rows;
  std::vector<int> unmatched_cols;
};

/// Marks a pair that may not be matched.
inline constexpr double kForbiddenCost = std::numeric_limits<double>::infinity();

/// Minimum-cost assignment over the allowed pairs of a rectangular cost
/// matrix: as many allowed pairs as possible, then least total cost.
/// O(n^3) shortest augmenting paths with potentials.
Assignment hungarian(const Eigen::MatrixXd& cost);

/// Sum of cost over the matches.
double assignment_cost(const Eigen::MatrixXd& cost, const Assignment& a);

}  // namespace msight
