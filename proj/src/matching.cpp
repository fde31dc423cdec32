#include "ovsg/matching.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace ovsg {

PairCost pairwise_cost(double category_similarity, const BBox& gt_box,
                       const BBox& pred_box, const MatchCost& c) {
  if (c.category_only) return pairwise_cost_category_only(category_similarity, c);
  PairCost pc;
  pc.category = c.w_category * (1.0 - category_similarity);
  auto a = gt_box.center_vec(), b = pred_box.center_vec();
  double l1 = 0.0;
  for (int k = 0; k < 4; ++k) l1 += std::fabs(a[k] - b[k]);
  pc.box_l1 = c.w_l1 * l1;
  pc.box_giou = c.w_giou * (1.0 - giou(gt_box, pred_box));
  pc.total = pc.category + pc.box_l1 + pc.box_giou;
  return pc;
}

PairCost pairwise_cost_category_only(double category_similarity,
                                     const MatchCost& c) {
  PairCost pc;
  pc.category = c.w_category * (1.0 - category_similarity);
  pc.total = pc.category;
  return pc;
}

namespace {

constexpr double kSentinel = 1e6;

void check_instance(const std::vector<std::vector<double>>& cost) {
  if (cost.empty()) throw std::invalid_argument("empty cost matrix");
  const std::size_t k = cost[0].size();
  if (cost.size() > k)
    throw std::invalid_argument("match requires N <= K (more predictions than ground truths)");
  for (const auto& r : cost)
    if (r.size() != k) throw std::invalid_argument("ragged cost matrix");
}

// Kuhn-Munkres with potentials on a square matrix padded with a sentinel.
// Returns assignment[row] = col and the optimal total (via the cost matrix).
std::vector<std::size_t> kuhn_munkres(const std::vector<std::vector<double>>& cost) {
  const std::size_t n = cost.size(), m = cost[0].size();
  auto a = [&](std::size_t i, std::size_t j) {
    return i < n ? cost[i][j] : kSentinel;
  };
  const std::size_t rows = m;  // padded square
  std::vector<double> u(rows + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  const double inf = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i <= rows; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<bool> used(m + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
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
      for (std::size_t j = 0; j <= m; ++j) {
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
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> assignment(n, 0);
  for (std::size_t j = 1; j <= m; ++j)
    if (p[j] >= 1 && p[j] <= n) assignment[p[j] - 1] = j - 1;
  return assignment;
}

double assignment_total(const std::vector<std::vector<double>>& cost,
                        const std::vector<std::size_t>& assignment) {
  double total = 0.0;
  for (std::size_t i = 0; i < assignment.size(); ++i) total += cost[i][assignment[i]];
  return total;
}

// Optimal total over rows [row0, N) restricted to unblocked columns.
double optimal_tail(const std::vector<std::vector<double>>& cost, std::size_t row0,
                    const std::vector<bool>& blocked) {
  const std::size_t n = cost.size();
  if (row0 >= n) return 0.0;
  std::vector<std::size_t> cols;
  for (std::size_t j = 0; j < cost[0].size(); ++j)
    if (!blocked[j]) cols.push_back(j);
  std::vector<std::vector<double>> sub(n - row0, std::vector<double>(cols.size()));
  for (std::size_t i = row0; i < n; ++i)
    for (std::size_t j = 0; j < cols.size(); ++j) sub[i - row0][j] = cost[i][cols[j]];
  auto asg = kuhn_munkres(sub);
  return assignment_total(sub, asg);
}

}  // namespace

MatchResult match_bipartite(const std::vector<std::vector<double>>& cost) {
  check_instance(cost);
  const std::size_t n = cost.size(), m = cost[0].size();
  const double optimal = assignment_total(cost, kuhn_munkres(cost));
  const double tol = 1e-9 * (1.0 + std::fabs(optimal));

  // Lexicographically smallest assignment among the optima: fix rows in
  // order, picking the smallest column that still admits an optimal tail.
  MatchResult res;
  std::vector<bool> blocked(m, false);
  double fixed = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    bool placed = false;
    for (std::size_t j = 0; j < m && !placed; ++j) {
      if (blocked[j]) continue;
      blocked[j] = true;
      const double tail = optimal_tail(cost, i + 1, blocked);
      if (fixed + cost[i][j] + tail <= optimal + tol) {
        res.assignment.push_back(j);
        fixed += cost[i][j];
        placed = true;
      } else {
        blocked[j] = false;
      }
    }
    if (!placed) throw std::runtime_error("assignment refinement failed");
  }
  res.total_cost = assignment_total(cost, res.assignment);
  return res;
}

MatchResult match_bruteforce(const std::vector<std::vector<double>>& cost) {
  check_instance(cost);
  const std::size_t n = cost.size(), m = cost[0].size();
  if (m > 8) throw std::invalid_argument("match_bruteforce limited to K <= 8");
  MatchResult best;
  double best_total = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> pick(n, 0);
  std::vector<bool> used(m, false);
  // lexicographic enumeration; strict < keeps the first (smallest) optimum
  std::function<void(std::size_t, double)> rec = [&](std::size_t i, double acc) {
    if (i == n) {
      if (acc < best_total) {
        best_total = acc;
        best.assignment = pick;
      }
      return;
    }
    for (std::size_t j = 0; j < m; ++j) {
      if (used[j]) continue;
      used[j] = true;
      pick[i] = j;
      rec(i + 1, acc + cost[i][j]);
      used[j] = false;
    }
  };
  rec(0, 0.0);
  best.total_cost = assignment_total(cost, best.assignment);
  return best;
}

MatchResult match_nodes(const std::vector<Node>& gts,
                        const std::vector<BBox>& pred_boxes,
                        const std::vector<std::vector<double>>& category_similarity,
                        const MatchCost& c) {
  if (gts.size() > pred_boxes.size())
    throw std::invalid_argument("match requires N <= K (more predictions than ground truths)");
  std::vector<std::vector<double>> cost(gts.size(),
                                        std::vector<double>(pred_boxes.size()));
  for (std::size_t i = 0; i < gts.size(); ++i)
    for (std::size_t j = 0; j < pred_boxes.size(); ++j)
      cost[i][j] = c.category_only
                       ? pairwise_cost_category_only(category_similarity[i][j], c).total
                       : pairwise_cost(category_similarity[i][j], gts[i].box,
                                       pred_boxes[j], c)
                             .total;
  MatchResult res = match_bipartite(cost);
  for (std::size_t i = 0; i < gts.size(); ++i) {
    const std::size_t j = res.assignment[i];
    res.pair_costs.push_back(
        c.category_only
            ? pairwise_cost_category_only(category_similarity[i][j], c)
            : pairwise_cost(category_similarity[i][j], gts[i].box, pred_boxes[j], c));
  }
  return res;
}

}  // namespace ovsg
