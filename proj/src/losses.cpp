#include "ovsg/losses.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <stdexcept>

namespace ovsg {

using nn::Tensor;
using nn::Var;

void TrainConfig::validate() const {
  if (lambda < 0.0) throw std::invalid_argument("lambda must be >= 0");
  if (focal_gamma < 0.0) throw std::invalid_argument("focal gamma must be >= 0");
  if (lr <= 0.0) throw std::invalid_argument("learning rate must be positive");
  if (lr_final_ratio < 0.0 || lr_final_ratio > 1.0)
    throw std::invalid_argument("lr_final_ratio must be in [0, 1]");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (box_warmup_lr <= 0.0)
    throw std::invalid_argument("box warmup learning rate must be positive");
}

SampleSets build_sample_sets(
    const std::vector<std::vector<std::size_t>>& positive_relations,
    std::size_t num_relations, std::size_t cap_ratio, std::mt19937_64& rng) {
  SampleSets sets;
  std::set<std::pair<std::size_t, std::size_t>> pos_keys;
  for (std::size_t e = 0; e < positive_relations.size(); ++e)
    for (std::size_t r : positive_relations[e]) {
      if (r >= num_relations)
        throw std::invalid_argument("relation target index out of range");
      sets.positives.push_back({e, r});
      pos_keys.insert({e, r});
    }
  std::vector<RelationSample> pool;
  for (std::size_t e = 0; e < positive_relations.size(); ++e)
    for (std::size_t r = 0; r < num_relations; ++r)
      if (!pos_keys.count({e, r})) pool.push_back({e, r});
  const std::size_t cap = cap_ratio * std::max<std::size_t>(1, sets.positives.size());
  if (pool.size() > cap) {
    // partial Fisher-Yates draw of `cap` elements
    for (std::size_t i = 0; i < cap; ++i) {
      std::uniform_int_distribution<std::size_t> dist(i, pool.size() - 1);
      std::swap(pool[i], pool[dist(rng)]);
    }
    pool.resize(cap);
  }
  sets.negatives = std::move(pool);
  return sets;
}

double focal_loss(double logit, int target, double alpha, double gamma) {
  if (!std::isfinite(logit)) throw std::invalid_argument("non-finite logit");
  const double p = 1.0 / (1.0 + std::exp(-logit));
  if (target == 1) return -alpha * std::pow(1.0 - p, gamma) * std::log(std::max(p, 1e-300));
  return -(1.0 - alpha) * std::pow(p, gamma) * std::log(std::max(1.0 - p, 1e-300));
}

namespace {

constexpr double kProbClamp = 1e-12;

// sigmoid clamped away from {0,1} so log stays finite
Var clamped_sigmoid(const Var& logits) {
  Var p = nn::sigmoid(logits);
  Var lo = nn::constant(Tensor(p.rows(), p.cols(), kProbClamp));
  Var hi = nn::constant(Tensor(p.rows(), p.cols(), 1.0 - kProbClamp));
  return nn::vmin(nn::vmax(p, lo), hi);
}

}  // namespace

Var focal_loss_elem_ad(const Var& logits, const Tensor& targets, double alpha,
                       double gamma) {
  if (!logits.val().same_shape(targets))
    throw std::invalid_argument("focal loss target shape mismatch");
  Var p = clamped_sigmoid(logits);
  Var y = nn::constant(targets);
  Var one = nn::constant(Tensor(p.rows(), p.cols(), 1.0));
  Var one_minus_p = nn::sub(one, p);
  Var one_minus_y = nn::sub(one, y);
  // -alpha*y*(1-p)^g*log p - (1-alpha)*(1-y)*p^g*log(1-p)
  Var pos = nn::mul(y, nn::mul(nn::vpow(one_minus_p, gamma), nn::vlog(p)));
  Var neg = nn::mul(one_minus_y, nn::mul(nn::vpow(p, gamma), nn::vlog(one_minus_p)));
  return nn::sub(nn::scale(pos, -alpha), nn::scale(neg, 1.0 - alpha));
}

Var giou_ad(const Var& pred_boxes, const Var& gt_boxes) {
  if (pred_boxes.cols() != 4 || gt_boxes.cols() != 4 ||
      pred_boxes.rows() != gt_boxes.rows())
    throw std::invalid_argument("giou_ad expects aligned n x 4 box matrices");
  auto corners = [](const Var& b) {
    Var cx = nn::slice_cols(b, 0, 1), cy = nn::slice_cols(b, 1, 2);
    Var w = nn::slice_cols(b, 2, 3), h = nn::slice_cols(b, 3, 4);
    Var hw = nn::scale(w, 0.5), hh = nn::scale(h, 0.5);
    return std::array<Var, 6>{nn::sub(cx, hw), nn::sub(cy, hh), nn::add(cx, hw),
                              nn::add(cy, hh), w, h};
  };
  auto a = corners(pred_boxes);
  auto b = corners(gt_boxes);
  Var zero = nn::constant(Tensor(pred_boxes.rows(), 1, 0.0));
  Var iw = nn::vmax(nn::sub(nn::vmin(a[2], b[2]), nn::vmax(a[0], b[0])), zero);
  Var ih = nn::vmax(nn::sub(nn::vmin(a[3], b[3]), nn::vmax(a[1], b[1])), zero);
  Var inter = nn::mul(iw, ih);
  Var uni = nn::sub(nn::add(nn::mul(a[4], a[5]), nn::mul(b[4], b[5])), inter);
  Var ew = nn::sub(nn::vmax(a[2], b[2]), nn::vmin(a[0], b[0]));
  Var eh = nn::sub(nn::vmax(a[3], b[3]), nn::vmin(a[1], b[1]));
  Var enclose = nn::mul(ew, eh);
  return nn::sub(nn::vdiv(inter, uni), nn::vdiv(nn::sub(enclose, uni), enclose));
}

BoxLossTerms box_losses_ad(const Var& pred_boxes, const Tensor& gt_boxes,
                           double w_l1, double w_giou) {
  Var gt = nn::constant(gt_boxes);
  const double inv_n = 1.0 / static_cast<double>(pred_boxes.rows());
  BoxLossTerms terms;
  terms.l1 = nn::scale(nn::sum(nn::vabs(nn::sub(pred_boxes, gt))), w_l1 * inv_n);
  Var g = giou_ad(pred_boxes, gt);
  Var one = nn::constant(Tensor(g.rows(), 1, 1.0));
  terms.giou = nn::scale(nn::sum(nn::sub(one, g)), w_giou * inv_n);
  return terms;
}

Var relation_bce_ad(const Var& logits, const SampleSets& sets) {
  const std::size_t n = sets.positives.size() + sets.negatives.size();
  if (n == 0) throw std::invalid_argument("relation_bce: empty sample sets");
  Tensor mask(logits.rows(), logits.cols(), 0.0);
  Tensor targets(logits.rows(), logits.cols(), 0.0);
  for (const auto& s : sets.positives) {
    mask.at(s.edge_index, s.relation) = 1.0;
    targets.at(s.edge_index, s.relation) = 1.0;
  }
  for (const auto& s : sets.negatives) mask.at(s.edge_index, s.relation) = 1.0;
  Var p = clamped_sigmoid(logits);
  Var y = nn::constant(targets);
  Var one = nn::constant(Tensor(p.rows(), p.cols(), 1.0));
  Var bce = nn::sub(nn::scale(nn::mul(y, nn::vlog(p)), -1.0),
                    nn::mul(nn::sub(one, y), nn::vlog(nn::sub(one, p))));
  return nn::scale(nn::sum(nn::mul(nn::constant(mask), bce)),
                   1.0 / static_cast<double>(n));
}

Var distill_loss_ad(const Var& student_edges, const Tensor& teacher_edges) {
  if (!student_edges.val().same_shape(teacher_edges))
    throw std::invalid_argument("distill: student/teacher edge sets misaligned");
  return nn::scale(nn::l1_distance(student_edges, nn::constant(teacher_edges)),
                   1.0 / static_cast<double>(student_edges.rows()));
}

Var total_loss_ad(const Var& node_focal, const Var& box_l1, const Var& box_giou,
                  const Var& rel_bce, const Var& distill, const TrainConfig& cfg,
                  LossBreakdown* breakdown) {
  cfg.validate();
  Var total = nn::constant_scalar(0.0);
  LossBreakdown bd;
  if (!node_focal.empty()) {
    total = nn::add(total, nn::scale(node_focal, cfg.node_focal_weight));
    bd.node_focal = node_focal.scalar();
  }
  if (!box_l1.empty()) {
    total = nn::add(total, box_l1);
    bd.box_l1 = box_l1.scalar();
  }
  if (!box_giou.empty()) {
    total = nn::add(total, box_giou);
    bd.box_giou = box_giou.scalar();
  }
  if (!rel_bce.empty()) {
    total = nn::add(total, rel_bce);
    bd.rel_bce = rel_bce.scalar();
  }
  if (!distill.empty()) {
    total = nn::add(total, nn::scale(distill, cfg.lambda));
    bd.distill = distill.scalar();
  }
  bd.total = total.scalar();
  if (breakdown) *breakdown = bd;
  return total;
}

}  // namespace ovsg
