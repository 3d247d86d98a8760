#include "msight/assignment.hpp"

#include "msight/error.hpp"

#include <algorithm>
#include <cmath>

namespace msight {

Assignment hungarian(const Eigen::MatrixXd& cost) {
  const int rows = static_cast<int>(cost.rows());
  const int cols = static_cast<int>(cost.cols());
  Assignment out;
  if (rows == 0 || cols == 0) {
    for (int i = 0; i < rows; ++i) out.unmatched_rows.push_back(i);
    for (int j = 0; j < cols; ++j) out.unmatched_cols.push_back(j);
    return out;
  }

  // Forbidden pairs become a cost larger than any complete allowed assignment,
  // so the optimum uses as few of them as possible.
  double finite_sum = 0.0;
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) {
      const double c = cost(i, j);
      if (std::isnan(c)) throw Error(Errc::InvalidArgument, "NaN in cost matrix");
      if (std::isfinite(c)) finite_sum += std::abs(c);
    }
  const double big = 2.0 * finite_sum + 1.0;

  const int n = std::max(rows, cols);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) a(i, j) = std::isfinite(cost(i, j)) ? cost(i, j) : big;

  // 1-based potentials formulation; p[j] is the row matched to column j.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0);
  std::vector<double> v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0);
  std::vector<int> way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<int> row_match(rows, -1);
  std::vector<int> col_match(cols, -1);
  for (int j = 1; j <= n; ++j) {
    const int i = p[j] - 1;
    const int c = j - 1;
    if (i < 0 || i >= rows || c >= cols) continue;
    if (!std::isfinite(cost(i, c))) continue;
    row_match[i] = c;
    col_match[c] = i;
  }
  for (int i = 0; i < rows; ++i) {
    if (row_match[i] >= 0)
      out.matches.emplace_back(i, row_match[i]);
    else
      out.unmatched_rows.push_back(i);
  }
  for (int j = 0; j < cols; ++j)
    if (col_match[j] < 0) out.unmatched_cols.push_back(j);
  return out;
}

double assignment_cost(const Eigen::MatrixXd& cost, const Assignment& a) {
  double total = 0.0;
  for (const auto& [i, j] : a.matches) total += cost(i, j);
  return total;
}

}  // namespace msight
