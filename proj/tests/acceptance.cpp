// Acceptance gate: ten end-to-end criteria, one PASS/FAIL line each.
// Run directly or through ctest; exits nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "ovsg/benchmark.hpp"
#include "ovsg/concept_space.hpp"
#include "ovsg/core_types.hpp"
#include "ovsg/losses.hpp"
#include "ovsg/matching.hpp"
#include "ovsg/numerics.hpp"
#include "ovsg/sg_model.hpp"
#include "ovsg/trainer.hpp"
#include "ovsg/weak_supervision.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace ovsg;

namespace {

std::string g_workspace;

double now_seconds() {
  using clock = std::chrono::steady_clock;
  static const clock::time_point start = clock::now();
  return std::chrono::duration<double>(clock::now() - start).count();
}

int run_cli(const std::string& args, const std::string& log_name) {
  const std::string log = g_workspace + "/" + log_name + ".log";
  const std::string cmd =
      std::string(OVSG_CLI_PATH) + " " + args + " >> " + log + " 2>&1";
  const int rc = std::system(cmd.c_str());
  return rc;
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  json j;
  in >> j;
  return j;
}

struct Criterion {
  std::string id;
  std::string name;
  std::function<bool(std::string&)> body;
};

// ---------------------------------------------------------------- A1

bool check_a1(std::string& detail) {
  const double t0 = now_seconds();
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> coin(0, 1);
    std::uniform_int_distribution<std::size_t> dim(2, 4);
    const std::size_t n = dim(rng), c = dim(rng);

    auto fd = [&](nn::ParamStore& store,
                  const std::function<nn::Var(nn::Session&)>& builder) {
      const auto rep = nn::finite_diff_check(builder, store, 1e-5);
      worst = std::max(worst, rep.max_rel_error);
    };

    {  // focal loss
      nn::ParamStore store;
      store.add("logits", nn::init_uniform(n, c, 1, seed * 11 + 1));
      nn::Tensor targets(n, c);
      for (double& x : targets.v) x = coin(rng);
      fd(store, [&](nn::Session& s) {
        return nn::mean(focal_loss_elem_ad(s.p("logits"), targets, 0.25, 2.0));
      });
    }
    {  // box losses; sigmoid keeps the parameterized boxes valid
      nn::ParamStore store;
      store.add("raw", nn::init_uniform(n, 4, 1, seed * 11 + 2));
      std::uniform_real_distribution<double> u(0.2, 0.7);
      nn::Tensor gt(n, 4);
      for (std::size_t i = 0; i < n; ++i) {
        gt.at(i, 0) = u(rng);
        gt.at(i, 1) = u(rng);
        gt.at(i, 2) = 0.1 + 0.2 * u(rng);
        gt.at(i, 3) = 0.1 + 0.2 * u(rng);
      }
      fd(store, [&](nn::Session& s) {
        BoxLossTerms t = box_losses_ad(nn::sigmoid(s.p("raw")), gt, 5.0, 2.0);
        return nn::add(t.l1, t.giou);
      });
    }
    SampleSets sets;  // shared by the bce and total checks
    {
      std::vector<std::vector<std::size_t>> pos(n);
      std::uniform_int_distribution<std::size_t> rel(0, c - 1);
      pos[0].push_back(rel(rng));
      std::mt19937_64 srng(seed);
      sets = build_sample_sets(pos, c, 3, srng);
    }
    {  // relation bce
      nn::ParamStore store;
      store.add("logits", nn::init_uniform(n, c, 1, seed * 11 + 3));
      fd(store,
         [&](nn::Session& s) { return relation_bce_ad(s.p("logits"), sets); });
    }
    const nn::Tensor teacher = nn::init_uniform(n, c, 1, seed * 11 + 4);
    {  // distillation
      nn::ParamStore store;
      store.add("student", nn::init_uniform(n, c, 1, seed * 11 + 5));
      fd(store, [&](nn::Session& s) {
        return distill_loss_ad(s.p("student"), teacher);
      });
    }
    {  // total objective combining all terms
      nn::ParamStore store;
      store.add("cls", nn::init_uniform(n, c, 1, seed * 11 + 6));
      store.add("raw", nn::init_uniform(n, 4, 1, seed * 11 + 7));
      store.add("rel", nn::init_uniform(n, c, 1, seed * 11 + 8));
      store.add("stu", nn::init_uniform(n, c, 1, seed * 11 + 9));
      nn::Tensor cls_t(n, c);
      for (double& x : cls_t.v) x = coin(rng);
      nn::Tensor gt(n, 4);
      std::uniform_real_distribution<double> u(0.2, 0.7);
      for (std::size_t i = 0; i < n; ++i) {
        gt.at(i, 0) = u(rng);
        gt.at(i, 1) = u(rng);
        gt.at(i, 2) = 0.1 + 0.2 * u(rng);
        gt.at(i, 3) = 0.1 + 0.2 * u(rng);
      }
      TrainConfig cfg;
      cfg.lambda = 0.3;
      fd(store, [&](nn::Session& s) {
        nn::Var focal = nn::mean(
            focal_loss_elem_ad(s.p("cls"), cls_t, cfg.focal_alpha, cfg.focal_gamma));
        BoxLossTerms bt = box_losses_ad(nn::sigmoid(s.p("raw")), gt,
                                        cfg.box_l1_weight, cfg.box_giou_weight);
        nn::Var bce = relation_bce_ad(s.p("rel"), sets);
        nn::Var dist = distill_loss_ad(s.p("stu"), teacher);
        return total_loss_ad(focal, bt.l1, bt.giou, bce, dist, cfg);
      });
    }
  }
  const double dt = now_seconds() - t0;
  std::ostringstream os;
  os << "max rel error " << worst << ", " << dt << "s";
  detail = os.str();
  return worst < 1e-4 && dt < 120.0;
}

// ---------------------------------------------------------------- A2

bool check_a2(std::string& detail) {
  const double t0 = now_seconds();
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::uniform_int_distribution<std::size_t> kd(1, 7);
    const std::size_t K = kd(rng);
    std::uniform_int_distribution<std::size_t> nd(1, K);
    const std::size_t N = nd(rng);
    std::vector<std::vector<double>> cost(N, std::vector<double>(K));
    for (auto& row : cost)
      for (double& x : row) {
        x = u(rng);
        if (trial % 3 == 0) x = std::round(x * 4.0) / 4.0;  // force ties
      }
    const MatchResult fast = match_bipartite(cost);
    const MatchResult slow = match_bruteforce(cost);
    if (fast.total_cost != slow.total_cost) ++mismatches;
  }
  const double dt = now_seconds() - t0;
  std::ostringstream os;
  os << mismatches << " mismatches / 200, " << dt << "s";
  detail = os.str();
  return mismatches == 0 && dt < 60.0;
}

// ---------------------------------------------------------------- A3

bool check_a3(std::string& detail) {
  const double t0 = now_seconds();
  const std::string w = g_workspace;
  if (run_cli("gen --out_dir " + w + "/a3/ds --seed 0 --gen.grid 12 --gen.max_nodes 6",
              "a3") != 0 ||
      run_cli("split --split.dataset " + w + "/a3/ds/dataset.json"
              " --split.setting closed --out_dir " + w + "/a3/sp", "a3") != 0 ||
      run_cli("finetune --finetune.dataset " + w + "/a3/sp/train_dataset.json"
              " --out_dir " + w + "/a3/ft --seed 0 --train.lambda 0"
              " --train.box_warmup_steps 1500 --train.box_warmup_lr 0.05"
              " --train.lr 0.015 --train.node_focal_weight 16"
              " --train.steps 7500 --train.log_every 2500", "a3") != 0 ||
      run_cli("eval --eval.dataset " + w + "/a3/sp/train_dataset.json"
              " --eval.checkpoint " + w + "/a3/ft/student --out_dir " + w + "/a3/ev",
              "a3") != 0) {
    detail = "pipeline command failed (see a3.log)";
    return false;
  }
  const json rep = read_json(w + "/a3/ev/eval_report.json");
  const double r50 = rep.at("slices").at("all").at("recall@50").get<double>();
  const double dt = now_seconds() - t0;
  std::ostringstream os;
  os << "train-set R@50 " << r50 << ", " << dt << "s";
  detail = os.str();
  return r50 >= 0.8 && dt < 600.0;
}

// ---------------------------------------------------------------- A4

bool check_a4(std::string& detail) {
  const Dataset ds = load_dataset(g_workspace + "/a3/ds/dataset.json");
  const ModelConfig mcfg;
  nn::ParamStore params;
  init_model_params(params, mcfg, 7);

  const std::string obj = ds.vocabulary.object_names[0];
  const std::string rel = ds.vocabulary.relation_names[0];
  const std::string obj_alias = "zz_object_alias";
  const std::string rel_alias = "zz_relation_alias";

  ConceptTable base = concepts_for(ds.vocabulary, mcfg.d);
  ConceptTable aliased = concepts_for(ds.vocabulary, mcfg.d);
  aliased.add_alias(obj_alias, obj);
  aliased.add_alias(rel_alias, rel);
  Vocabulary renamed = ds.vocabulary;
  renamed.object_names[0] = obj_alias;
  renamed.relation_names[0] = rel_alias;

  for (const auto& rec : ds.records) {
    const FeatureMap fm = load_feature_map(ds.base_dir + "/" + rec.features);
    const ImagePrediction a = predict_scene_graph(params, fm, ds.vocabulary, base,
                                                  mcfg, rec.image_id, true);
    const ImagePrediction b = predict_scene_graph(params, fm, renamed, aliased,
                                                  mcfg, rec.image_id, true);
    if (a.triplets.size() != b.triplets.size()) {
      detail = "triplet count changed on " + rec.image_id;
      return false;
    }
    auto mapped = [&](const std::string& name) {
      if (name == obj) return obj_alias;
      if (name == rel) return rel_alias;
      return name;
    };
    for (std::size_t i = 0; i < a.triplets.size(); ++i) {
      const auto& x = a.triplets[i];
      const auto& y = b.triplets[i];
      const bool same =
          x.score == y.score && x.s_query == y.s_query && x.o_query == y.o_query &&
          x.s_box.cx == y.s_box.cx && x.s_box.cy == y.s_box.cy &&
          x.s_box.w == y.s_box.w && x.s_box.h == y.s_box.h &&
          x.o_box.cx == y.o_box.cx && x.o_box.cy == y.o_box.cy &&
          x.o_box.w == y.o_box.w && x.o_box.h == y.o_box.h &&
          mapped(x.s_name) == y.s_name && mapped(x.o_name) == y.o_name &&
          mapped(x.predicate) == y.predicate;
      if (!same) {
        std::ostringstream os;
        os << "rank " << i << " of " << rec.image_id << " diverged";
        detail = os.str();
        return false;
      }
    }
  }
  detail = std::to_string(ds.records.size()) + " images, ranked lists identical";
  return true;
}

// ---------------------------------------------------------------- A5

bool check_a5(std::string& detail) {
  const double t0 = now_seconds();
  const std::string w = g_workspace;
  const std::string train_common =
      " --train.node_warmup_steps 7500 --train.box_warmup_steps 1500"
      " --train.box_warmup_lr 0.05 --train.lr 0.015 --train.node_focal_weight 16"
      " --train.steps 3000 --train.log_every 2500";
  if (run_cli("split --split.dataset " + w + "/a3/ds/dataset.json"
              " --split.setting ovr --out_dir " + w + "/a5/sp", "a5") != 0 ||
      run_cli("pretrain --pretrain.dataset " + w + "/a3/ds/dataset.json"
              " --out_dir " + w + "/a5/teacher --seed 0" + train_common, "a5") != 0 ||
      run_cli("eval --eval.dataset " + w + "/a5/sp/eval_dataset.json"
              " --eval.checkpoint " + w + "/a5/teacher/teacher"
              " --out_dir " + w + "/a5/ev_teacher", "a5") != 0) {
    detail = "teacher stage failed (see a5.log)";
    return false;
  }
  for (const std::string lambda : {"0", "0.1"}) {
    const std::string tag = lambda == "0" ? "l0" : "l1";
    if (run_cli("finetune --finetune.dataset " + w + "/a5/sp/train_dataset.json"
                " --finetune.teacher " + w + "/a5/teacher/teacher"
                " --out_dir " + w + "/a5/ft_" + tag + " --seed 0"
                " --train.lambda " + lambda +
                " --train.lr 0.025 --train.steps 4000 --train.log_every 2500",
                "a5") != 0 ||
        run_cli("eval --eval.dataset " + w + "/a5/sp/eval_dataset.json"
                " --eval.checkpoint " + w + "/a5/ft_" + tag + "/student"
                " --out_dir " + w + "/a5/ev_" + tag, "a5") != 0) {
      detail = "lambda " + lambda + " stage failed (see a5.log)";
      return false;
    }
  }
  auto novel_r50 = [&](const std::string& dir) {
    return read_json(w + "/a5/" + dir + "/eval_report.json")
        .at("slices").at("novel_relation").at("recall@50").get<double>();
  };
  const double teacher = novel_r50("ev_teacher");
  const double without = novel_r50("ev_l0");
  const double with = novel_r50("ev_l1");
  const double dt = now_seconds() - t0;
  std::ostringstream os;
  os << "novel R@50 teacher " << teacher << ", lambda0 " << without
     << ", lambda0.1 " << with << ", " << dt << "s";
  detail = os.str();
  return with >= 2.0 * without && without < 0.5 * teacher && dt < 1200.0;
}

// ---------------------------------------------------------------- A6

bool check_a6(std::string& detail) {
  const std::vector<std::string> pool = {"man",  "dog",   "car",  "tree",
                                         "bike", "chair", "lamp", "cup"};
  const std::vector<std::string> rels = {"on", "near", "holding"};
  const ConceptTable concepts = embed_concepts_fixture(pool, 32);
  const std::vector<double> thresholds = {0.0, 0.1, 0.25, 0.5};
  std::mt19937_64 rng(606);
  std::uniform_real_distribution<double> conf(0.05, 0.95), u(0.1, 0.8);
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1),
      rpick(0, rels.size() - 1);

  for (int run = 0; run < 20; ++run) {
    // queries carry controlled confidences: v = logit(c) * embedding
    const std::size_t K = 6;
    PredictionSet ps;
    ps.node_features = nn::Tensor(K, 32);
    std::vector<std::string> qname(K);
    for (std::size_t q = 0; q < K; ++q) {
      qname[q] = pool[(run + q) % pool.size()];
      const double c = conf(rng);
      const double logit = std::log(c / (1.0 - c));
      const auto& emb = concepts.embedding(qname[q]);
      for (std::size_t j = 0; j < 32; ++j)
        ps.node_features.at(q, j) = logit * emb[j];
      ps.boxes.push_back({u(rng), u(rng), 0.1 + 0.1 * u(rng), 0.1 + 0.1 * u(rng)});
    }
    std::vector<CaptionTriplet> triplets;
    std::set<std::tuple<std::string, std::string, std::string>> seen;
    while (triplets.size() < 5) {
      CaptionTriplet t;
      t.subject = pool[pick(rng)];
      t.object = pool[pick(rng)];
      t.relation = rels[rpick(rng)];
      if (t.subject == t.object) continue;
      if (!seen.insert({t.subject, t.relation, t.object}).second) continue;
      triplets.push_back(t);
    }
    std::vector<std::set<std::tuple<std::string, std::string, std::string>>> kept;
    for (double thr : thresholds) {
      const PseudoLabel label = ground_triplets(triplets, ps, concepts, thr);
      for (const auto& node : label.nodes)
        if (node.confidence <= thr) {
          std::ostringstream os;
          os << "run " << run << ": node confidence " << node.confidence
             << " not above gate " << thr;
          detail = os.str();
          return false;
        }
      std::set<std::tuple<std::string, std::string, std::string>> s;
      for (const auto& e : label.edges)
        s.insert({label.nodes[e.subject].phrase, e.predicate,
                  label.nodes[e.object].phrase});
      kept.push_back(std::move(s));
    }
    for (std::size_t i = 1; i < kept.size(); ++i)
      for (const auto& edge : kept[i])
        if (!kept[i - 1].count(edge)) {
          detail = "monotonicity violated between thresholds " +
                   std::to_string(thresholds[i - 1]) + " and " +
                   std::to_string(thresholds[i]);
          return false;
        }
  }
  detail = "20 randomized runs, 4-threshold scan monotone, gate strict";
  return true;
}

// ---------------------------------------------------------------- A7

// independent greedy-matching oracle, written against the stated contract
double oracle_recall(const ImagePrediction& pred, const SceneGraph& g, int K,
                     double thr) {
  if (g.edges.empty()) return 0.0;
  std::vector<bool> used(g.edges.size(), false);
  std::size_t hits = 0;
  for (std::size_t p = 0;
       p < pred.triplets.size() && p < static_cast<std::size_t>(K); ++p) {
    const auto& t = pred.triplets[p];
    for (std::size_t gi = 0; gi < g.edges.size(); ++gi) {
      const auto& e = g.edges[gi];
      if (used[gi] || g.nodes[e.subject].concept_name != t.s_name ||
          g.nodes[e.object].concept_name != t.o_name ||
          e.predicate != t.predicate ||
          iou(g.nodes[e.subject].box, t.s_box) < thr ||
          iou(g.nodes[e.object].box, t.o_box) < thr)
        continue;
      used[gi] = true;
      ++hits;
      break;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(g.edges.size());
}

bool check_a7(std::string& detail) {
  Vocabulary v;
  v.object_names = {"cat", "dog", "car", "tree", "cup"};
  v.relation_names = {"on", "near", "under"};
  v.base_object_mask.assign(5, true);
  v.base_relation_mask.assign(3, true);
  std::mt19937_64 rng(707);
  std::uniform_real_distribution<double> u(0.1, 0.9);

  for (int trial = 0; trial < 50; ++trial) {
    std::uniform_int_distribution<std::size_t> n_img(1, 4);
    Dataset gt;
    gt.vocabulary = v;
    std::vector<ImagePrediction> preds;
    const std::size_t images = n_img(rng);
    for (std::size_t im = 0; im < images; ++im) {
      DatasetRecord rec;
      rec.image_id = "img" + std::to_string(im);
      std::uniform_int_distribution<std::size_t> n_node(2, 5);
      const std::size_t nodes = n_node(rng);
      for (std::size_t i = 0; i < nodes; ++i)
        rec.graph.nodes.push_back(
            {{u(rng), u(rng), 0.15 + 0.2 * u(rng), 0.15 + 0.2 * u(rng)},
             v.object_names[i % v.object_names.size()], std::nullopt});
      std::set<std::tuple<std::size_t, std::size_t, std::string>> seen;
      std::uniform_int_distribution<std::size_t> np(0, nodes - 1), rp(0, 2);
      for (int e = 0; e < 5; ++e) {
        const std::size_t s = np(rng), o = np(rng);
        if (s == o) continue;
        const std::string p = v.relation_names[rp(rng)];
        if (seen.insert({s, o, p}).second) rec.graph.edges.push_back({s, o, p});
      }
      ImagePrediction pred;
      pred.image_id = rec.image_id;
      std::uniform_int_distribution<int> n_trip(0, 40);
      const int triplets = n_trip(rng);
      for (int t = 0; t < triplets; ++t) {
        const auto& n1 = rec.graph.nodes[np(rng)];
        const auto& n2 = rec.graph.nodes[np(rng)];
        TripletPrediction tp;
        tp.s_name = n1.concept_name;
        tp.o_name = n2.concept_name;
        tp.predicate = v.relation_names[rp(rng)];
        tp.s_box = n1.box;
        tp.o_box = n2.box;
        // jitter half the boxes to exercise the IoU threshold
        if (t % 2 == 0) tp.s_box.cx = std::min(0.95, tp.s_box.cx + 0.1 * u(rng));
        tp.score = 1.0 - 0.002 * t;
        pred.triplets.push_back(tp);
      }
      gt.records.push_back(rec);
      preds.push_back(pred);
    }
    const EvalReport rep = evaluate_sgdet(preds, gt, 0.5, true);
    for (int K : kRecallKs) {
      double mean = 0.0;
      std::size_t contributing = 0;
      for (std::size_t im = 0; im < images; ++im) {
        if (gt.records[im].graph.edges.empty()) continue;
        mean += oracle_recall(preds[im], gt.records[im].graph, K, 0.5);
        ++contributing;
      }
      if (contributing) mean /= static_cast<double>(contributing);
      if (rep.slices.at("all").recall_at.at(K) != mean) {
        std::ostringstream os;
        os << "trial " << trial << " K=" << K << ": evaluator "
           << rep.slices.at("all").recall_at.at(K) << " vs oracle " << mean;
        detail = os.str();
        return false;
      }
    }
    for (const auto& [id, recalls] : rep.per_image)
      if (recalls.at(20) > recalls.at(50) || recalls.at(50) > recalls.at(100)) {
        detail = "K-monotonicity violated on " + id;
        return false;
      }
  }
  detail = "50 random configurations, exact equality, K-monotone";
  return true;
}

// ---------------------------------------------------------------- A8

bool check_a8(std::string& detail) {
  if (ModelConfig().num_relation_queries != 1) {
    detail = "default relation-query count is not 1";
    return false;
  }
  const Dataset ds = load_dataset(g_workspace + "/a3/ds/dataset.json");
  const FeatureMap fm = load_feature_map(ds.base_dir + "/" + ds.records[0].features);
  for (std::size_t M : {std::size_t{1}, std::size_t{3}, std::size_t{5}}) {
    ModelConfig mcfg;
    mcfg.num_relation_queries = M;
    nn::ParamStore params;
    init_model_params(params, mcfg, 5);
    ConceptTable concepts = concepts_for(ds.vocabulary, mcfg.d);
    TrainConfig tcfg;
    tcfg.lambda = 0.0;  // no teacher in this run
    tcfg.steps = 25;
    tcfg.batch_size = 4;
    tcfg.log_every = 0;
    try {
      train_supervised(params, nullptr, ds, concepts, mcfg, tcfg, nullptr);
    } catch (const std::exception& e) {
      detail = "M=" + std::to_string(M) + " training threw: " + e.what();
      return false;
    }
    if (M == 1) continue;
    nn::Session session(params);
    const nn::Tensor obj_embed = concepts.stack(ds.vocabulary.object_names);
    DecodeOut out = decode_nodes_ad(session, fm, mcfg, obj_embed);
    const std::vector<std::pair<std::size_t, std::size_t>> pairs = {
        {0, 1}, {2, 3}, {1, 0}};
    const nn::Tensor avg = edge_features_ad(session, out.node_features, pairs, mcfg).val();
    nn::Tensor mean(avg.rows, avg.cols, 0.0);
    for (std::size_t q = 0; q < M; ++q) {
      const nn::Tensor one =
          edge_features_single_query_ad(session, out.node_features, pairs, mcfg, q)
              .val();
      for (std::size_t k = 0; k < one.v.size(); ++k) mean.v[k] += one.v[k];
    }
    for (double& x : mean.v) x /= static_cast<double>(M);
    for (std::size_t k = 0; k < avg.v.size(); ++k)
      if (std::abs(avg.v[k] - mean.v[k]) > 1e-12) {
        detail = "M=" + std::to_string(M) + " averaged head diverged from oracle";
        return false;
      }
  }
  detail = "M in {1,3,5} trained; averaging exact within 1e-12; default M=1";
  return true;
}

// ---------------------------------------------------------------- A9

bool check_a9(std::string& detail) {
  const json fixture = read_json(std::string(OVSG_DATA_DIR) + "/caption_fixtures.json");
  Vocabulary v;
  v.object_names = fixture.at("nouns").get<std::vector<std::string>>();
  v.relation_names = fixture.at("relations").get<std::vector<std::string>>();
  v.base_object_mask.assign(v.object_names.size(), true);
  v.base_relation_mask.assign(v.relation_names.size(), true);
  const ParserRules rules = ParserRules::from_vocabulary(v);

  std::size_t cases = 0, exact = 0;
  for (const auto& c : fixture.at("cases")) {
    ++cases;
    const auto triplets = parse_caption(c.at("caption").get<std::string>(), rules);
    std::vector<std::vector<std::string>> got;
    for (const auto& t : triplets) got.push_back({t.subject, t.relation, t.object});
    const auto want = c.at("triplets").get<std::vector<std::vector<std::string>>>();
    if (got == want) ++exact;
  }
  std::ostringstream os;
  os << exact << "/" << cases << " captions reproduced";
  detail = os.str();
  return cases == 30 && exact == cases;
}

// ---------------------------------------------------------------- A10

bool check_a10(std::string& detail) {
  const std::string w = g_workspace;
  if (run_cli("gen --out_dir " + w + "/a10/ds --seed 3 --gen.scenes 16", "a10") != 0) {
    detail = "gen failed";
    return false;
  }
  // the warmup must be long enough that grounded confidences clear the gate
  const std::string short_train =
      " --train.node_warmup_steps 2500 --train.box_warmup_steps 800"
      " --train.box_warmup_lr 0.05 --train.lr 0.015 --train.node_focal_weight 16"
      " --train.steps 200 --train.log_every 0";
  if (run_cli("pretrain --pretrain.dataset " + w + "/a10/ds/dataset.json"
              " --out_dir " + w + "/a10/teacher --seed 3" + short_train, "a10") != 0) {
    detail = "pretrain failed (see a10.log)";
    return false;
  }
  {  // checkpoint schema: fresh params must load it back
    ModelConfig mcfg;
    nn::ParamStore fresh;
    init_model_params(fresh, mcfg, 3);
    nn::load_checkpoint(fresh, w + "/a10/teacher/teacher");
  }
  for (const std::string setting : {"closed", "ovd", "ovr", "ovd_r"}) {
    const std::string dir = w + "/a10/" + setting;
    if (run_cli("split --split.dataset " + w + "/a10/ds/dataset.json"
                " --split.setting " + setting + " --out_dir " + dir, "a10") != 0 ||
        run_cli("finetune --finetune.dataset " + dir + "/train_dataset.json"
                " --finetune.teacher " + w + "/a10/teacher/teacher"
                " --out_dir " + dir + " --seed 3 --train.lambda 0.1"
                " --train.steps 150 --train.box_warmup_steps 50 --train.log_every 0",
                "a10") != 0 ||
        run_cli("eval --eval.dataset " + dir + "/eval_dataset.json"
                " --eval.checkpoint " + dir + "/student --out_dir " + dir,
                "a10") != 0) {
      detail = setting + " pipeline failed (see a10.log)";
      return false;
    }
    // split soundness: no novel name leaks into training graphs
    const json manifest = read_json(dir + "/split_manifest.json");
    const auto novel_obj = manifest.at("novel_objects").get<std::set<std::string>>();
    const auto novel_rel = manifest.at("novel_relations").get<std::set<std::string>>();
    if (setting == "closed" && (!novel_obj.empty() || !novel_rel.empty())) {
      detail = "closed split declared novel names";
      return false;
    }
    const Dataset train = load_dataset(dir + "/train_dataset.json");
    for (const auto& rec : train.records) {
      if (!validate_scene_graph(rec.graph, train.vocabulary).ok()) {
        detail = setting + " train graph failed validation";
        return false;
      }
      load_feature_map(train.base_dir + "/" + rec.features);
      for (const auto& node : rec.graph.nodes)
        if (novel_obj.count(node.concept_name)) {
          detail = setting + " leaked novel object " + node.concept_name;
          return false;
        }
      for (const auto& edge : rec.graph.edges)
        if (novel_rel.count(edge.predicate)) {
          detail = setting + " leaked novel predicate " + edge.predicate;
          return false;
        }
    }
    const Dataset eval_ds = load_dataset(dir + "/eval_dataset.json");
    if (eval_ds.records.size() != 16) {
      detail = setting + " eval split lost images";
      return false;
    }
    // emitted evaluation artifacts validate against their schemas
    const json rep = read_json(dir + "/eval_report.json");
    for (int K : kRecallKs)
      rep.at("slices").at("all").at("recall@" + std::to_string(K)).get<double>();
    const auto dump = read_prediction_dump(dir + "/predictions.jsonl");
    if (dump.size() != eval_ds.records.size()) {
      detail = setting + " prediction dump image count mismatch";
      return false;
    }
  }
  detail = "all four settings closed the loop; soundness and schemas hold";
  return true;
}

}  // namespace

int main() {
  g_workspace = (fs::temp_directory_path() / "ovsg_acceptance").string();
  fs::remove_all(g_workspace);
  fs::create_directories(g_workspace);

  const std::vector<Criterion> criteria = {
      {"A1", "gradient correctness vs central finite differences", check_a1},
      {"A2", "bipartite matching equals brute-force cost", check_a2},
      {"A3", "closed-set overfit reaches R@50 >= 0.8", check_a3},
      {"A4", "synonym zero-shot invariance", check_a4},
      {"A5", "distillation retention trend", check_a5},
      {"A6", "pseudo-label confidence gate and monotonicity", check_a6},
      {"A7", "evaluator equals independent greedy oracle", check_a7},
      {"A8", "relation-query ablation plumbing", check_a8},
      {"A9", "caption parser fixture reproduction", check_a9},
      {"A10", "four-setting pipeline closure", check_a10},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    std::string det;
    bool ok = false;
    try {
      ok = c.body(det);
    } catch (const std::exception& e) {
      det = std::string("exception: ") + e.what();
    }
    std::printf("%-4s %-48s %s%s%s\n", c.id.c_str(), c.name.c_str(),
                ok ? "PASS" : "FAIL", det.empty() ? "" : "  -- ", det.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
