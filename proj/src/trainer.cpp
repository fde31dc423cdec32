#include "ovsg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "ovsg/matching.hpp"

namespace ovsg {

using json = nlohmann::json;
using nn::Tensor;
using nn::Var;

ConceptTable concepts_for(const Vocabulary& v, std::size_t dim) {
  std::vector<std::string> names = v.object_names;
  for (const auto& r : v.relation_names)
    if (std::find(names.begin(), names.end(), r) == names.end()) names.push_back(r);
  return embed_concepts_fixture(names, dim);
}

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

// cosine anneal from peak down to peak * lr_final_ratio over a phase
double cosine_lr(double peak, double final_ratio, std::size_t step,
                 std::size_t phase_steps) {
  if (phase_steps <= 1) return peak;
  const double t =
      static_cast<double>(step) / static_cast<double>(phase_steps - 1);
  const double floor = peak * final_ratio;
  return floor + 0.5 * (peak - floor) * (1.0 + std::cos(kPi * t));
}

// warmup phase anneals from box_warmup_lr, the main phase from lr
double annealed_lr(const TrainConfig& tcfg, std::size_t step) {
  const std::size_t warm = std::min(tcfg.box_warmup_steps, tcfg.steps);
  if (step < warm) return cosine_lr(tcfg.box_warmup_lr, tcfg.lr_final_ratio, step, warm);
  return cosine_lr(tcfg.lr, tcfg.lr_final_ratio, step - warm, tcfg.steps - warm);
}

std::vector<std::string> base_names(const std::vector<std::string>& names,
                                    const std::vector<bool>& mask) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < names.size(); ++i)
    if (mask[i]) out.push_back(names[i]);
  return out;
}

struct LoadedRecord {
  const DatasetRecord* rec;
  FeatureMap fm;
};

std::vector<LoadedRecord> load_features(const Dataset& ds) {
  std::vector<LoadedRecord> out;
  for (const auto& rec : ds.records)
    out.push_back({&rec, load_feature_map(ds.base_dir + "/" + rec.features)});
  return out;
}

void log_breakdown(std::ostream* log, std::size_t step, const LossBreakdown& bd) {
  if (!log) return;
  json j{{"step", step},       {"total", bd.total},     {"node_focal", bd.node_focal},
         {"box_l1", bd.box_l1}, {"box_giou", bd.box_giou}, {"rel_bce", bd.rel_bce},
         {"distill", bd.distill}};
  (*log) << j.dump() << "\n";
}

}  // namespace

TrainResult train_supervised(nn::ParamStore& params, const nn::ParamStore* teacher,
                             const Dataset& ds, const ConceptTable& concepts,
                             const ModelConfig& mcfg, const TrainConfig& tcfg,
                             std::ostream* log, bool nodes_only) {
  tcfg.validate();
  if (ds.records.empty()) throw std::invalid_argument("empty training dataset");
  if (teacher == nullptr && tcfg.lambda > 0.0 && !nodes_only)
    throw std::invalid_argument("distillation weight > 0 requires a teacher");

  const auto images = load_features(ds);
  const auto obj_names =
      base_names(ds.vocabulary.object_names, ds.vocabulary.base_object_mask);
  const auto rel_names =
      base_names(ds.vocabulary.relation_names, ds.vocabulary.base_relation_mask);
  if (obj_names.empty()) throw std::invalid_argument("no base object categories");
  const Tensor obj_embed = concepts.stack(obj_names);
  const Tensor rel_embed = rel_names.empty() ? Tensor() : concepts.stack(rel_names);
  Vocabulary base_vocab;
  base_vocab.object_names = obj_names;
  base_vocab.relation_names = rel_names;

  // frozen teacher copy for the distillation pathway
  nn::ParamStore teacher_frozen;
  if (teacher && tcfg.lambda > 0.0) {
    for (const auto& name : teacher->names())
      teacher_frozen.add(name, teacher->get(name).value, false);
  }
  const bool distilling = teacher && tcfg.lambda > 0.0 && !nodes_only;

  std::mt19937_64 rng(tcfg.seed);
  nn::Sgd opt({tcfg.lr, tcfg.momentum, tcfg.grad_clip});
  MatchCost match_cost;
  TrainResult result;
  TextProjection proj;

  const std::size_t batch = std::min<std::size_t>(tcfg.batch_size, images.size());
  for (std::size_t step = 0; step < tcfg.steps; ++step) {
    opt.set_lr(annealed_lr(tcfg, step));
    std::map<std::string, Tensor> grad_acc;
    LossBreakdown batch_bd;
    for (std::size_t bi = 0; bi < batch; ++bi) {
    const auto& img = images[(step * batch + bi) % images.size()];
    const SceneGraph& g = img.rec->graph;
    if (g.nodes.size() > mcfg.num_queries)
      throw std::runtime_error("scene has more ground-truth nodes than queries");

    nn::Session session(params);
    DecodeOut out = decode_nodes_ad(session, img.fm, mcfg, obj_embed);
    const Tensor& logits = out.cls_logits.val();
    const Tensor& boxes = out.boxes.val();

    // bipartite matching on current predictions (no gradient through it)
    std::vector<std::vector<double>> sim(g.nodes.size(),
                                         std::vector<double>(mcfg.num_queries, 0.5));
    std::vector<std::size_t> gt_concept_col(g.nodes.size());
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
      auto idx = base_vocab.object_index(g.nodes[i].concept_name);
      if (!idx)
        throw std::runtime_error("training graph contains non-base concept: " +
                                 g.nodes[i].concept_name);
      gt_concept_col[i] = *idx;
      for (std::size_t j = 0; j < mcfg.num_queries; ++j)
        sim[i][j] = 1.0 / (1.0 + std::exp(-logits.at(j, *idx)));
    }
    std::vector<BBox> pred_boxes;
    for (std::size_t j = 0; j < mcfg.num_queries; ++j)
      pred_boxes.push_back(BBox{boxes.at(j, 0), boxes.at(j, 1), boxes.at(j, 2),
                                boxes.at(j, 3)});
    const MatchResult match = match_nodes(g.nodes, pred_boxes, sim, match_cost);

    const bool warming = step < tcfg.box_warmup_steps;

    // node classification: matched queries positive for their concept,
    // everything else negative
    Var node_focal;
    if (!warming) {
      Tensor cls_targets(mcfg.num_queries, obj_names.size(), 0.0);
      for (std::size_t i = 0; i < g.nodes.size(); ++i)
        cls_targets.at(match.assignment[i], gt_concept_col[i]) = 1.0;
      node_focal = nn::scale(
          nn::sum(focal_loss_elem_ad(out.cls_logits, cls_targets,
                                     tcfg.focal_alpha, tcfg.focal_gamma)),
          1.0 / static_cast<double>(std::max<std::size_t>(1, g.nodes.size())));
    }

    // box regression on matched pairs
    std::vector<Var> matched_rows;
    Tensor gt_boxes(g.nodes.size(), 4);
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
      matched_rows.push_back(nn::row(out.boxes, match.assignment[i]));
      const auto cv = g.nodes[i].box.center_vec();
      for (int k = 0; k < 4; ++k) gt_boxes.at(i, k) = cv[k];
    }
    BoxLossTerms box_terms =
        box_losses_ad(nn::concat_rows(matched_rows), gt_boxes, tcfg.box_l1_weight,
                      tcfg.box_giou_weight);

    Var rel_bce, distill;
    if (!warming && !nodes_only && !rel_names.empty() && g.nodes.size() >= 2) {
      // ordered pairs of matched queries
      std::vector<std::pair<std::size_t, std::size_t>> pairs;
      std::map<std::pair<std::size_t, std::size_t>, std::size_t> pair_index;
      for (std::size_t a = 0; a < g.nodes.size(); ++a)
        for (std::size_t b = 0; b < g.nodes.size(); ++b) {
          if (a == b) continue;
          pair_index[{a, b}] = pairs.size();
          pairs.emplace_back(match.assignment[a], match.assignment[b]);
        }
      std::vector<std::vector<std::size_t>> positive(pairs.size());
      for (const auto& e : g.edges) {
        auto rel = base_vocab.relation_index(e.predicate);
        if (!rel) continue;  // non-base edges never supervise
        positive[pair_index.at({e.subject, e.object})].push_back(*rel);
      }
      SampleSets sets =
          build_sample_sets(positive, rel_names.size(), tcfg.negative_cap_ratio, rng);
      if (!sets.positives.empty() || !sets.negatives.empty()) {
        Var edges = edge_features_ad(session, out.node_features, pairs, mcfg);
        Var logits_rel = edge_alignment_scores_ad(session, edges, rel_embed, proj);
        rel_bce = relation_bce_ad(logits_rel, sets);

        if (distilling && !sets.negatives.empty()) {
          std::set<std::size_t> neg_edge_ids;
          for (const auto& s : sets.negatives) neg_edge_ids.insert(s.edge_index);
          std::vector<std::pair<std::size_t, std::size_t>> neg_pairs;
          std::vector<Var> student_rows;
          for (std::size_t e : neg_edge_ids) {
            neg_pairs.push_back(pairs[e]);
            student_rows.push_back(nn::row(edges, e));
          }
          nn::Session teacher_session(teacher_frozen);
          DecodeOut tout = decode_nodes_ad(teacher_session, img.fm, mcfg, obj_embed);
          Var teacher_edges =
              edge_features_ad(teacher_session, tout.node_features, neg_pairs, mcfg);
          distill = distill_loss_ad(nn::concat_rows(student_rows),
                                    teacher_edges.val());
        }
      }
    }

    LossBreakdown bd;
    Var total = total_loss_ad(node_focal, box_terms.l1, box_terms.giou, rel_bce,
                              distill, tcfg, &bd);
    for (auto& [name, grad] : session.gradients(total)) {
      auto it = grad_acc.find(name);
      if (it == grad_acc.end()) {
        grad_acc.emplace(name, std::move(grad));
      } else {
        for (std::size_t k = 0; k < grad.v.size(); ++k) it->second.v[k] += grad.v[k];
      }
    }
    batch_bd.total += bd.total;
    batch_bd.node_focal += bd.node_focal;
    batch_bd.box_l1 += bd.box_l1;
    batch_bd.box_giou += bd.box_giou;
    batch_bd.rel_bce += bd.rel_bce;
    batch_bd.distill += bd.distill;
    }  // batch
    const double inv_b = 1.0 / static_cast<double>(batch);
    for (auto& [name, grad] : grad_acc)
      for (double& x : grad.v) x *= inv_b;
    batch_bd.total *= inv_b;
    batch_bd.node_focal *= inv_b;
    batch_bd.box_l1 *= inv_b;
    batch_bd.box_giou *= inv_b;
    batch_bd.rel_bce *= inv_b;
    batch_bd.distill *= inv_b;
    opt.step(params, grad_acc);
    result.last = batch_bd;
    ++result.steps_run;
    if (tcfg.log_every && (step % tcfg.log_every == 0 || step + 1 == tcfg.steps))
      log_breakdown(log, step, batch_bd);
  }
  return result;
}

PretrainResult pretrain_relations_from_captions(
    nn::ParamStore& params, const Dataset& ds, const ParserRules& rules,
    const ModelConfig& mcfg, const TrainConfig& tcfg, double threshold,
    std::ostream* log) {
  tcfg.validate();
  const auto images = load_features(ds);
  const auto obj_names =
      base_names(ds.vocabulary.object_names, ds.vocabulary.base_object_mask);
  const ConceptTable obj_concepts = concepts_for(ds.vocabulary, mcfg.d);
  const Tensor obj_embed = obj_concepts.stack(obj_names);

  // Ground pseudo labels once: the node pathway is frozen for this stage,
  // so predictions do not move.
  struct ImagePseudo {
    std::size_t image = 0;
    std::vector<std::pair<std::size_t, std::size_t>> node_queries_pairs;
    std::vector<std::string> predicates;  // aligned with pairs
  };
  std::vector<ImagePseudo> pseudo;
  std::set<std::string> predicate_union;
  std::size_t pseudo_edges = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!images[i].rec->caption) continue;
    const auto triplets = parse_caption(*images[i].rec->caption, rules);
    if (triplets.empty()) continue;
    nn::Session session(params);
    DecodeOut out = decode_nodes_ad(session, images[i].fm, mcfg, obj_embed);
    const PredictionSet ps = extract_prediction_set(out);
    const PseudoLabel label = ground_triplets(triplets, ps, obj_concepts, threshold);
    if (label.edges.empty()) continue;
    ImagePseudo ip;
    ip.image = i;
    for (const auto& e : label.edges) {
      ip.node_queries_pairs.emplace_back(label.nodes[e.subject].query,
                                         label.nodes[e.object].query);
      ip.predicates.push_back(e.predicate);
      predicate_union.insert(e.predicate);
      ++pseudo_edges;
    }
    pseudo.push_back(std::move(ip));
  }
  if (pseudo.empty()) throw std::runtime_error("empty pseudo-label set");

  PretrainResult result;
  result.relation_vocabulary.assign(predicate_union.begin(), predicate_union.end());
  result.pseudo_edges = pseudo_edges;
  const ConceptTable rel_concepts =
      embed_concepts_fixture(result.relation_vocabulary, mcfg.d);
  const Tensor rel_embed = rel_concepts.stack(result.relation_vocabulary);
  Vocabulary rel_vocab;
  rel_vocab.relation_names = result.relation_vocabulary;

  // freeze the node pathway; only the relation pathway trains here
  std::vector<std::string> frozen;
  for (const auto& name : params.names()) {
    nn::Param& p = params.get(name);
    const bool relation_side = name.rfind("rel", 0) == 0 || name.rfind("text_proj", 0) == 0;
    if (!relation_side && p.trainable) {
      p.trainable = false;
      frozen.push_back(name);
    }
  }

  std::mt19937_64 rng(tcfg.seed);
  nn::Sgd opt({tcfg.lr, tcfg.momentum, tcfg.grad_clip});
  TextProjection proj;
  for (std::size_t step = 0; step < tcfg.steps; ++step) {
    opt.set_lr(annealed_lr(tcfg, step));
    const ImagePseudo& ip = pseudo[step % pseudo.size()];
    nn::Session session(params);
    DecodeOut out = decode_nodes_ad(session, images[ip.image].fm, mcfg, obj_embed);

    // all ordered pairs over the pseudo nodes of this image
    std::set<std::size_t> queries;
    for (const auto& [s, o] : ip.node_queries_pairs) {
      queries.insert(s);
      queries.insert(o);
    }
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> pair_index;
    for (std::size_t a : queries)
      for (std::size_t b : queries) {
        if (a == b) continue;
        pair_index[{a, b}] = pairs.size();
        pairs.emplace_back(a, b);
      }
    std::vector<std::vector<std::size_t>> positive(pairs.size());
    for (std::size_t e = 0; e < ip.node_queries_pairs.size(); ++e) {
      auto rel = rel_vocab.relation_index(ip.predicates[e]);
      positive[pair_index.at(ip.node_queries_pairs[e])].push_back(*rel);
    }
    SampleSets sets = build_sample_sets(positive, result.relation_vocabulary.size(),
                                        tcfg.negative_cap_ratio, rng);
    Var edges = edge_features_ad(session, out.node_features, pairs, mcfg);
    Var logits_rel = edge_alignment_scores_ad(session, edges, rel_embed, proj);
    Var rel_bce = relation_bce_ad(logits_rel, sets);

    TrainConfig stage = tcfg;
    stage.lambda = 0.0;  // no distillation during pretraining
    LossBreakdown bd;
    Var total = total_loss_ad(Var(), Var(), Var(), rel_bce, Var(), stage, &bd);
    opt.step(params, session.gradients(total));
    result.train.last = bd;
    ++result.train.steps_run;
    if (tcfg.log_every && (step % tcfg.log_every == 0 || step + 1 == tcfg.steps))
      log_breakdown(log, step, bd);
  }
  for (const auto& name : frozen) params.get(name).trainable = true;
  return result;
}

std::vector<ImagePrediction> predict_dataset(nn::ParamStore& params,
                                             const Dataset& ds,
                                             const ConceptTable& concepts,
                                             const ModelConfig& mcfg,
                                             bool graph_constraint) {
  std::vector<ImagePrediction> preds;
  for (const auto& rec : ds.records) {
    const FeatureMap fm = load_feature_map(ds.base_dir + "/" + rec.features);
    preds.push_back(predict_scene_graph(params, fm, ds.vocabulary, concepts, mcfg,
                                        rec.image_id, graph_constraint));
  }
  return preds;
}

}  // namespace ovsg
