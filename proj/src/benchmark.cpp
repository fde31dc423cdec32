#include "ovsg/benchmark.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "ovsg/concept_space.hpp"

namespace ovsg {

using json = nlohmann::json;

std::string setting_name(Setting s) {
  switch (s) {
    case Setting::Closed: return "closed";
    case Setting::OvD: return "ovd";
    case Setting::OvR: return "ovr";
    case Setting::OvDR: return "ovd_r";
  }
  return "closed";
}

Setting setting_from_name(const std::string& name) {
  if (name == "closed") return Setting::Closed;
  if (name == "ovd") return Setting::OvD;
  if (name == "ovr") return Setting::OvR;
  if (name == "ovd_r") return Setting::OvDR;
  throw std::invalid_argument("unknown setting: " + name);
}

namespace {

std::vector<std::string> pick_novel(const std::vector<std::string>& names,
                                    std::size_t novel_count, std::uint64_t seed) {
  std::vector<std::size_t> idx(names.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(novel_count);
  std::sort(idx.begin(), idx.end());
  std::vector<std::string> novel;
  for (std::size_t i : idx) novel.push_back(names[i]);
  return novel;
}

}  // namespace

SplitResult build_split(const Dataset& ds, const SplitSpec& spec) {
  if (spec.base_object_fraction <= 0.0 || spec.base_object_fraction > 1.0)
    throw std::invalid_argument("base object fraction must be in (0, 1]");
  const auto& vocab = ds.vocabulary;
  SplitResult out;

  const bool drop_objects = spec.setting == Setting::OvD || spec.setting == Setting::OvDR;
  const bool drop_relations = spec.setting == Setting::OvR || spec.setting == Setting::OvDR;

  if (drop_objects) {
    const std::size_t n_base = static_cast<std::size_t>(
        std::ceil(spec.base_object_fraction * static_cast<double>(vocab.object_names.size())));
    if (n_base == 0) throw std::invalid_argument("split selects zero base object categories");
    out.novel_objects =
        pick_novel(vocab.object_names, vocab.object_names.size() - n_base,
                   spec.selection_seed);
  }
  if (drop_relations) {
    std::size_t n_novel = spec.novel_relation_count >= 0
                              ? static_cast<std::size_t>(spec.novel_relation_count)
                              : static_cast<std::size_t>(std::llround(
                                    0.3 * static_cast<double>(vocab.relation_names.size())));
    if (n_novel >= vocab.relation_names.size())
      throw std::invalid_argument("split selects zero base relation categories");
    out.novel_relations =
        pick_novel(vocab.relation_names, n_novel, spec.selection_seed + 1);
  }

  auto is_novel_obj = [&](const std::string& n) {
    return std::find(out.novel_objects.begin(), out.novel_objects.end(), n) !=
           out.novel_objects.end();
  };
  auto is_novel_rel = [&](const std::string& n) {
    return std::find(out.novel_relations.begin(), out.novel_relations.end(), n) !=
           out.novel_relations.end();
  };

  Vocabulary masked = vocab;
  for (std::size_t i = 0; i < masked.object_names.size(); ++i)
    masked.base_object_mask[i] = !is_novel_obj(masked.object_names[i]);
  for (std::size_t i = 0; i < masked.relation_names.size(); ++i)
    masked.base_relation_mask[i] = !is_novel_rel(masked.relation_names[i]);

  out.train.vocabulary = masked;
  out.train.base_dir = ds.base_dir;
  out.eval.vocabulary = masked;
  out.eval.base_dir = ds.base_dir;
  out.eval.records = ds.records;  // evaluation keeps full annotations

  for (const auto& rec : ds.records) {
    DatasetRecord filtered = rec;
    if (drop_objects) {
      SceneGraph g;
      g.image_id = filtered.graph.image_id;
      std::vector<std::size_t> remap(filtered.graph.nodes.size(),
                                     static_cast<std::size_t>(-1));
      for (std::size_t i = 0; i < filtered.graph.nodes.size(); ++i) {
        if (is_novel_obj(filtered.graph.nodes[i].concept_name)) continue;
        remap[i] = g.nodes.size();
        g.nodes.push_back(filtered.graph.nodes[i]);
      }
      for (const auto& e : filtered.graph.edges) {
        if (remap[e.subject] == static_cast<std::size_t>(-1) ||
            remap[e.object] == static_cast<std::size_t>(-1))
          continue;  // incident edges go with their nodes
        g.edges.push_back({remap[e.subject], remap[e.object], e.predicate});
      }
      filtered.graph = std::move(g);
    }
    if (drop_relations) {
      auto& edges = filtered.graph.edges;
      edges.erase(std::remove_if(edges.begin(), edges.end(),
                                 [&](const Edge& e) { return is_novel_rel(e.predicate); }),
                  edges.end());
    }
    if (filtered.graph.nodes.empty()) continue;  // dropped from training
    out.train.records.push_back(std::move(filtered));
  }
  return out;
}

void save_split_manifest(const SplitResult& split, const SplitSpec& spec,
                         const std::string& path) {
  json j{{"setting", setting_name(spec.setting)},
         {"base_object_fraction", spec.base_object_fraction},
         {"novel_relation_count", spec.novel_relation_count},
         {"selection_seed", spec.selection_seed},
         {"novel_objects", split.novel_objects},
         {"novel_relations", split.novel_relations},
         {"train_images", split.train.records.size()},
         {"eval_images", split.eval.records.size()}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write split manifest: " + path);
  out << j.dump(2) << "\n";
}

EvalReport evaluate_sgdet(const std::vector<ImagePrediction>& preds,
                          const Dataset& gts, double iou_threshold,
                          bool graph_constraint_mode) {
  EvalReport report;
  report.iou_threshold = iou_threshold;
  report.graph_constraint_mode = graph_constraint_mode;

  std::map<std::string, const ImagePrediction*> by_id;
  for (const auto& p : preds) by_id[p.image_id] = &p;

  const std::vector<std::string> slice_names = {"all", "base", "novel_object",
                                                "novel_relation", "novel_both"};
  std::map<std::string, std::map<int, std::vector<double>>> per_slice_recalls;
  std::map<std::string, std::size_t> slice_gt_counts;

  const auto& vocab = gts.vocabulary;
  for (const auto& rec : gts.records) {
    const auto& g = rec.graph;
    if (g.edges.empty()) continue;
    const ImagePrediction* ip = nullptr;
    auto it = by_id.find(rec.image_id);
    if (it == by_id.end()) {
      std::cerr << "warning: no predictions for image " << rec.image_id
                << "; counted as zero recall\n";
    } else {
      ip = it->second;
    }

    auto slice_of = [&](const Edge& e) -> std::string {
      const bool nov_obj = !vocab.object_is_base(g.nodes[e.subject].concept_name) ||
                           !vocab.object_is_base(g.nodes[e.object].concept_name);
      const bool nov_rel = !vocab.relation_is_base(e.predicate);
      if (nov_obj && nov_rel) return "novel_both";
      if (nov_obj) return "novel_object";
      if (nov_rel) return "novel_relation";
      return "base";
    };

    std::map<int, double> image_all_recall;
    std::map<std::string, std::size_t> slice_total;
    for (const auto& e : g.edges) ++slice_total[slice_of(e)];
    for (const auto& [name, count] : slice_total) slice_gt_counts[name] += count;
    slice_gt_counts["all"] += g.edges.size();

    for (int K : kRecallKs) {
      std::vector<bool> gt_matched(g.edges.size(), false);
      if (ip) {
        const std::size_t top = std::min<std::size_t>(K, ip->triplets.size());
        for (std::size_t p = 0; p < top; ++p) {
          const auto& t = ip->triplets[p];
          for (std::size_t gi = 0; gi < g.edges.size(); ++gi) {
            if (gt_matched[gi]) continue;
            const Edge& e = g.edges[gi];
            if (g.nodes[e.subject].concept_name != t.s_name) continue;
            if (g.nodes[e.object].concept_name != t.o_name) continue;
            if (e.predicate != t.predicate) continue;
            if (iou(g.nodes[e.subject].box, t.s_box) < iou_threshold) continue;
            if (iou(g.nodes[e.object].box, t.o_box) < iou_threshold) continue;
            gt_matched[gi] = true;
            break;  // each predicted triplet credits at most one ground truth
          }
        }
      }
      std::map<std::string, std::size_t> slice_hit;
      std::size_t hits = 0;
      for (std::size_t gi = 0; gi < g.edges.size(); ++gi) {
        if (!gt_matched[gi]) continue;
        ++hits;
        ++slice_hit[slice_of(g.edges[gi])];
      }
      const double all_recall =
          static_cast<double>(hits) / static_cast<double>(g.edges.size());
      per_slice_recalls["all"][K].push_back(all_recall);
      image_all_recall[K] = all_recall;
      for (const auto& [name, total] : slice_total)
        per_slice_recalls[name][K].push_back(
            static_cast<double>(slice_hit[name]) / static_cast<double>(total));
    }
    report.per_image.push_back({rec.image_id, image_all_recall});
  }

  for (const auto& name : slice_names) {
    SliceRecall sr;
    sr.gt_triplets = slice_gt_counts.count(name) ? slice_gt_counts[name] : 0;
    auto it = per_slice_recalls.find(name);
    if (it != per_slice_recalls.end()) {
      for (int K : kRecallKs) {
        const auto& v = it->second[K];
        double sum = 0.0;
        for (double r : v) sum += r;
        sr.recall_at[K] = v.empty() ? 0.0 : sum / static_cast<double>(v.size());
        sr.images = v.size();
      }
    } else {
      for (int K : kRecallKs) sr.recall_at[K] = 0.0;
    }
    report.slices[name] = sr;
  }
  return report;
}

void save_eval_report(const EvalReport& report, const std::string& path) {
  json j;
  j["iou_threshold"] = report.iou_threshold;
  j["graph_constraint"] = report.graph_constraint_mode;
  for (const auto& [name, sr] : report.slices) {
    json sj{{"gt_triplets", sr.gt_triplets}, {"images", sr.images}};
    for (const auto& [K, r] : sr.recall_at) sj["recall@" + std::to_string(K)] = r;
    j["slices"][name] = sj;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write eval report: " + path);
  out << j.dump(2) << "\n";
}

void save_eval_report_csv(const EvalReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write eval csv: " + path);
  out << "image_id";
  for (int K : kRecallKs) out << ",recall@" << K;
  out << "\n";
  for (const auto& [id, recalls] : report.per_image) {
    out << id;
    for (int K : kRecallKs) out << "," << recalls.at(K);
    out << "\n";
  }
}

// ---- synthetic generation ----

const std::vector<std::string>& rule_predicates() {
  static const std::vector<std::string> preds = {"inside", "overlapping", "above",
                                                 "below",  "left of",     "near"};
  return preds;
}

namespace {

const std::vector<std::string>& object_name_pool() {
  static const std::vector<std::string> pool = {
      "man",  "woman",  "cat",   "dog",   "car",   "tree",  "chair", "table",
      "bird", "horse",  "cup",   "book",  "lamp",  "bed",   "boat",  "train",
      "bottle", "plate", "ball", "basket", "phone", "shoe",  "hat",   "clock"};
  return pool;
}

bool inside(const BBox& a, const BBox& b) {
  auto ca = a.corners(), cb = b.corners();
  return ca[0] > cb[0] && ca[1] > cb[1] && ca[2] < cb[2] && ca[3] < cb[3];
}

bool ranges_overlap(double a1, double a2, double b1, double b2) {
  return std::min(a2, b2) > std::max(a1, b1);
}

}  // namespace

Dataset generate_synthetic_dataset(const GenSpec& spec, const std::string& out_dir) {
  if (spec.num_objects < 2 || spec.num_relations < 2)
    throw std::invalid_argument("need at least 2 object and 2 relation categories");
  if (spec.num_relations > rule_predicates().size())
    throw std::invalid_argument("at most 6 rule predicates are available");
  if (spec.min_nodes < 1 || spec.max_nodes < spec.min_nodes)
    throw std::invalid_argument("bad node count range");
  if (spec.max_nodes > spec.num_objects)
    throw std::invalid_argument("scene node count exceeds object vocabulary");

  Dataset ds;
  for (std::size_t i = 0; i < spec.num_objects; ++i)
    ds.vocabulary.object_names.push_back(
        i < object_name_pool().size() ? object_name_pool()[i]
                                      : "object" + std::to_string(i));
  for (std::size_t i = 0; i < spec.num_relations; ++i)
    ds.vocabulary.relation_names.push_back(rule_predicates()[i]);
  ds.vocabulary.base_object_mask.assign(spec.num_objects, true);
  ds.vocabulary.base_relation_mask.assign(spec.num_relations, true);
  ds.base_dir = out_dir;

  const ConceptTable concepts =
      embed_concepts_fixture(ds.vocabulary.object_names, spec.embed_dim);
  auto has_rel = [&](const std::string& r) {
    return ds.vocabulary.relation_index(r).has_value();
  };

  std::mt19937_64 rng(spec.seed);
  // fixed linear map (concept embedding, box) -> feature space
  const nn::Tensor proj = nn::init_uniform(spec.feature_dim, spec.embed_dim + 4,
                                           spec.embed_dim + 4, spec.seed ^ 0x9e3779b97f4a7c15ull);

  std::filesystem::create_directories(out_dir + "/features");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  for (std::size_t scene = 0; scene < spec.scenes; ++scene) {
    SceneGraph g;
    g.image_id = "img" + std::to_string(scene);
    std::uniform_int_distribution<std::size_t> ncount(spec.min_nodes, spec.max_nodes);
    const std::size_t n = ncount(rng);

    // distinct concepts per scene keep caption grounding unambiguous
    std::vector<std::size_t> cids(spec.num_objects);
    for (std::size_t i = 0; i < cids.size(); ++i) cids[i] = i;
    std::shuffle(cids.begin(), cids.end(), rng);
    cids.resize(n);

    for (std::size_t i = 0; i < n; ++i) {
      Node node;
      node.concept_name = ds.vocabulary.object_names[cids[i]];
      node.concept_id = cids[i];
      bool placed = false;
      for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
        BBox b;
        const bool nest = has_rel("inside") && !g.nodes.empty() && unit(rng) < 0.3;
        if (nest) {
          std::uniform_int_distribution<std::size_t> pick(0, g.nodes.size() - 1);
          const BBox& parent = g.nodes[pick(rng)].box;
          b.w = parent.w * (0.3 + 0.3 * unit(rng));
          b.h = parent.h * (0.3 + 0.3 * unit(rng));
          b.cx = parent.cx + (unit(rng) - 0.5) * (parent.w - b.w) * 0.9;
          b.cy = parent.cy + (unit(rng) - 0.5) * (parent.h - b.h) * 0.9;
        } else {
          b.w = 0.10 + 0.25 * unit(rng);
          b.h = 0.10 + 0.25 * unit(rng);
          b.cx = b.w / 2.0 + unit(rng) * (1.0 - b.w);
          b.cy = b.h / 2.0 + unit(rng) * (1.0 - b.h);
        }
        if (b.w < 0.02 || b.h < 0.02 || !b.valid()) continue;
        if (spec.non_overlapping) {
          bool clash = false;
          for (const auto& other : g.nodes)
            if (iou(b, other.box) > 0.0) clash = true;
          if (clash) continue;
        }
        node.box = b;
        placed = true;
      }
      if (!placed)
        throw std::runtime_error(
            "infeasible geometry: could not place requested non-overlapping boxes");
      g.nodes.push_back(std::move(node));
    }

    // rule-based edges, canonical direction decided by geometry
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = a + 1; b < n; ++b) {
        const BBox& ba = g.nodes[a].box;
        const BBox& bb = g.nodes[b].box;
        auto lex_first = [&]() {
          if (ba.cx != bb.cx) return ba.cx < bb.cx ? a : b;
          return ba.cy <= bb.cy ? a : b;
        };
        if (has_rel("inside") && inside(ba, bb)) {
          g.edges.push_back({a, b, "inside"});
        } else if (has_rel("inside") && inside(bb, ba)) {
          g.edges.push_back({b, a, "inside"});
        } else if (has_rel("overlapping") && iou(ba, bb) > 0.05) {
          const std::size_t s = lex_first();
          g.edges.push_back({s, s == a ? b : a, "overlapping"});
        } else if (ranges_overlap(ba.corners()[0], ba.corners()[2], bb.corners()[0],
                                  bb.corners()[2]) &&
                   ba.cy != bb.cy && has_rel("above")) {
          const std::size_t top = ba.cy < bb.cy ? a : b;
          const std::size_t bot = top == a ? b : a;
          g.edges.push_back({top, bot, "above"});
          if (has_rel("below")) g.edges.push_back({bot, top, "below"});
        } else if (has_rel("left of") &&
                   ranges_overlap(ba.corners()[1], ba.corners()[3], bb.corners()[1],
                                  bb.corners()[3])) {
          const std::size_t left = ba.cx <= bb.cx ? a : b;
          g.edges.push_back({left, left == a ? b : a, "left of"});
        } else if (has_rel("near") &&
                   std::hypot(ba.cx - bb.cx, ba.cy - bb.cy) < 0.30) {
          const std::size_t s = lex_first();
          g.edges.push_back({s, s == a ? b : a, "near"});
        }
      }
    }

    // grid features: each cell is owned by the smallest box containing its
    // center; feature = proj * (concept embedding, box) + noise
    FeatureMap fm;
    fm.features = nn::Tensor(spec.grid * spec.grid, spec.feature_dim);
    fm.centers = nn::Tensor(spec.grid * spec.grid, 2);
    for (std::size_t gy = 0; gy < spec.grid; ++gy) {
      for (std::size_t gx = 0; gx < spec.grid; ++gx) {
        const std::size_t cell = gy * spec.grid + gx;
        const double cx = (static_cast<double>(gx) + 0.5) / static_cast<double>(spec.grid);
        const double cy = (static_cast<double>(gy) + 0.5) / static_cast<double>(spec.grid);
        fm.centers.at(cell, 0) = cx;
        fm.centers.at(cell, 1) = cy;
        int owner = -1;
        double best_area = 2.0;
        for (std::size_t i = 0; i < n; ++i) {
          const auto c = g.nodes[i].box.corners();
          if (cx >= c[0] && cx <= c[2] && cy >= c[1] && cy <= c[3]) {
            const double area = g.nodes[i].box.w * g.nodes[i].box.h;
            if (area < best_area) {
              best_area = area;
              owner = static_cast<int>(i);
            }
          }
        }
        std::vector<double> x(spec.embed_dim + 4, 0.0);
        if (owner >= 0) {
          const auto& emb = concepts.embedding(g.nodes[owner].concept_name);
          std::copy(emb.begin(), emb.end(), x.begin());
          const auto cv = g.nodes[owner].box.center_vec();
          for (int k = 0; k < 4; ++k) x[spec.embed_dim + k] = cv[k];
        }
        for (std::size_t r = 0; r < spec.feature_dim; ++r) {
          double acc = 0.0;
          for (std::size_t k = 0; k < x.size(); ++k)
            acc += proj.at(r, k) * x[k];
          fm.features.at(cell, r) = acc + spec.noise * gauss(rng);
        }
      }
    }
    const std::string feat_rel = "features/" + g.image_id + ".f64";
    save_feature_map(fm, out_dir + "/" + feat_rel);

    DatasetRecord rec;
    rec.image_id = g.image_id;
    rec.features = feat_rel;
    if (spec.captions) {
      std::string cap;
      for (const auto& e : g.edges) {
        cap += "a " + g.nodes[e.subject].concept_name + " " + e.predicate + " the " +
               g.nodes[e.object].concept_name + ". ";
      }
      if (!cap.empty()) cap.pop_back();
      rec.caption = cap;
    }
    rec.graph = std::move(g);
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

}  // namespace ovsg
