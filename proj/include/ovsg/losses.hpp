#pragma once

// Training objectives: focal classification loss, box regression losses,
// relation BCE over positive/negative sample sets, feature distillation,
// and the total objective.

#include <cstdint>
#include <random>
#include <vector>

#include "ovsg/core_types.hpp"
#include "ovsg/numerics.hpp"

namespace ovsg {

struct TrainConfig {
  double lambda = 0.1;  // distillation weight
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double box_l1_weight = 5.0;
  double box_giou_weight = 2.0;
  double node_focal_weight = 1.0;
  std::size_t negative_cap_ratio = 8;  // |N| <= ratio * max(1, |P|)
  double lr = 0.05;
  double lr_final_ratio = 0.01;  // cosine-anneal lr down to lr * ratio
  double momentum = 0.9;
  double grad_clip = 5.0;
  std::size_t steps = 1000;
  std::size_t batch_size = 8;  // images whose gradients are averaged per step
  // Localization warmup: box losses only, so spatial structure settles before
  // the classification gradient starts reshaping the shared query features.
  std::size_t box_warmup_steps = 0;
  double box_warmup_lr = 0.05;  // warmup phase peak lr; `lr` drives the rest
  std::size_t node_warmup_steps = 0;
  std::size_t log_every = 50;
  std::uint64_t seed = 0;

  void validate() const;
};

// A relation sample: one (edge, predicate) pair; edge_index refers into the
// caller's ordered pair list.
struct RelationSample {
  std::size_t edge_index = 0;
  std::size_t relation = 0;
};

struct SampleSets {
  std::vector<RelationSample> positives;
  std::vector<RelationSample> negatives;
};

// positive_relations[i] lists the ground-truth predicate indices of pair i
// (empty for pairs with no annotated edge). Negatives are drawn uniformly
// from the complement, capped at cap_ratio * max(1, |P|).
SampleSets build_sample_sets(const std::vector<std::vector<std::size_t>>& positive_relations,
                             std::size_t num_relations, std::size_t cap_ratio,
                             std::mt19937_64& rng);

// ---- plain scalar forms (closed-form reference path) ----
double focal_loss(double logit, int target, double alpha, double gamma);

// ---- differentiable forms ----

// Elementwise binary focal loss on sigmoid(logits); same shape as logits.
nn::Var focal_loss_elem_ad(const nn::Var& logits, const nn::Tensor& targets,
                           double alpha, double gamma);

// Differentiable GIoU per row of two n x 4 center-format box matrices.
nn::Var giou_ad(const nn::Var& pred_boxes, const nn::Var& gt_boxes);

struct BoxLossTerms {
  nn::Var l1;    // scalar, weighted
  nn::Var giou;  // scalar, weighted (1 - giou)
};
// Mean over rows of weighted L1 and (1 - GIoU) terms.
BoxLossTerms box_losses_ad(const nn::Var& pred_boxes, const nn::Tensor& gt_boxes,
                           double w_l1, double w_giou);

// Eq-style mean BCE over P union N; logits is n_edges x n_relations.
nn::Var relation_bce_ad(const nn::Var& logits, const SampleSets& sets);

// Mean L1 between aligned student and teacher edge-feature rows.
nn::Var distill_loss_ad(const nn::Var& student_edges, const nn::Tensor& teacher_edges);

struct LossBreakdown {
  double total = 0.0;
  double node_focal = 0.0;
  double box_l1 = 0.0;
  double box_giou = 0.0;
  double rel_bce = 0.0;
  double distill = 0.0;
};

// total = node losses + relation bce + lambda * distill. Empty Vars are
// treated as absent terms.
nn::Var total_loss_ad(const nn::Var& node_focal, const nn::Var& box_l1,
                      const nn::Var& box_giou, const nn::Var& rel_bce,
                      const nn::Var& distill, const TrainConfig& cfg,
                      LossBreakdown* breakdown = nullptr);

}  // namespace ovsg
