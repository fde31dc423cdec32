#pragma once

// Bipartite assignment between ground-truth and predicted nodes, with the
// composite category/box cost and an exhaustive oracle for small instances.

#include <cstddef>
#include <vector>

#include "ovsg/core_types.hpp"

namespace ovsg {

struct MatchCost {
  double w_category = 2.0;
  double w_l1 = 5.0;
  double w_giou = 2.0;
  bool category_only = false;  // drops box terms (caption pseudo-labeling)
};

struct PairCost {
  double category = 0.0;
  double box_l1 = 0.0;
  double box_giou = 0.0;
  double total = 0.0;
};

struct MatchResult {
  // assignment[i] = prediction column matched to ground-truth row i;
  // equivalent to the binary mask M with M[i][assignment[i]] = 1.
  std::vector<std::size_t> assignment;
  double total_cost = 0.0;
  std::vector<PairCost> pair_costs;  // per ground-truth row, for its match
};

// cost = w_cat*(1 - sim) + w_l1*||b_gt - b_pred||_1 + w_giou*(1 - giou);
// category-only mode keeps just the first term.
PairCost pairwise_cost(double category_similarity, const BBox& gt_box,
                       const BBox& pred_box, const MatchCost& c);
PairCost pairwise_cost_category_only(double category_similarity,
                                     const MatchCost& c);

// Exact minimum-cost assignment of N rows onto K columns, N <= K
// (Kuhn-Munkres). Ties broken toward the lexicographically smallest
// assignment vector.
MatchResult match_bipartite(const std::vector<std::vector<double>>& cost);

// Exhaustive oracle over all injections, N <= K <= 8. Same tie-break rule.
MatchResult match_bruteforce(const std::vector<std::vector<double>>& cost);

// Node-level entry point: one ground truth per row, one prediction per
// column. category_similarity[i][j] = sigmoid(<w_gt_i, v_pred_j>).
MatchResult match_nodes(const std::vector<Node>& gts,
                        const std::vector<BBox>& pred_boxes,
                        const std::vector<std::vector<double>>& category_similarity,
                        const MatchCost& c);

}  // namespace ovsg
