#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "ovsg/benchmark.hpp"
#include "ovsg/weak_supervision.hpp"

using namespace ovsg;

namespace {

std::string fresh_dir(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() / ("ovsg_test_bench_" + tag);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

GenSpec small_spec(std::uint64_t seed) {
  GenSpec spec;
  spec.scenes = 6;
  spec.num_objects = 8;
  spec.num_relations = 6;
  spec.min_nodes = 3;
  spec.max_nodes = 5;
  spec.grid = 4;
  spec.feature_dim = 20;
  spec.embed_dim = 16;
  spec.seed = seed;
  return spec;
}

Vocabulary eval_vocab() {
  Vocabulary v;
  v.object_names = {"cat", "dog", "tree"};
  v.relation_names = {"on", "near"};
  v.base_object_mask = {true, true, false};  // tree is novel
  v.base_relation_mask = {true, false};      // near is novel
  return v;
}

TripletPrediction make_triplet(const std::string& s, const std::string& p,
                               const std::string& o, const BBox& sb, const BBox& ob,
                               double score) {
  TripletPrediction t;
  t.s_name = s;
  t.predicate = p;
  t.o_name = o;
  t.s_box = sb;
  t.o_box = ob;
  t.score = score;
  return t;
}

// independent greedy-recall reimplementation used as the oracle
double oracle_recall(const ImagePrediction& pred, const SceneGraph& g, int K,
                     double thr) {
  std::vector<bool> used(g.edges.size(), false);
  std::size_t hits = 0;
  for (std::size_t p = 0; p < pred.triplets.size() && p < static_cast<std::size_t>(K); ++p) {
    const auto& t = pred.triplets[p];
    for (std::size_t gi = 0; gi < g.edges.size(); ++gi) {
      const auto& e = g.edges[gi];
      if (used[gi] || g.nodes[e.subject].concept_name != t.s_name ||
          g.nodes[e.object].concept_name != t.o_name || e.predicate != t.predicate ||
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

}  // namespace

TEST_CASE("setting names round trip") {
  for (Setting s : {Setting::Closed, Setting::OvD, Setting::OvR, Setting::OvDR})
    CHECK(setting_from_name(setting_name(s)) == s);
  CHECK(setting_name(Setting::OvDR) == "ovd_r");
  CHECK_THROWS(setting_from_name("open_everything"));
}

TEST_CASE("synthetic generation is deterministic and seed-sensitive") {
  const std::string d1 = fresh_dir("gen1");
  const std::string d2 = fresh_dir("gen2");
  const std::string d3 = fresh_dir("gen3");
  const Dataset a = generate_synthetic_dataset(small_spec(7), d1);
  const Dataset b = generate_synthetic_dataset(small_spec(7), d2);
  const Dataset c = generate_synthetic_dataset(small_spec(8), d3);
  save_dataset(a, d1 + "/dataset.json");
  save_dataset(b, d2 + "/dataset.json");
  save_dataset(c, d3 + "/dataset.json");
  CHECK(slurp(d1 + "/dataset.json") == slurp(d2 + "/dataset.json"));
  CHECK(slurp(d1 + "/dataset.json") != slurp(d3 + "/dataset.json"));
  for (const auto& rec : a.records)
    CHECK(slurp(d1 + "/" + rec.features) == slurp(d2 + "/" + rec.features));
}

TEST_CASE("generated edges match an independent geometry-rule oracle") {
  const Dataset ds = generate_synthetic_dataset(small_spec(11), fresh_dir("rules"));
  auto strictly_inside = [](const BBox& a, const BBox& b) {
    const auto ca = a.corners(), cb = b.corners();
    return ca[0] > cb[0] && ca[1] > cb[1] && ca[2] < cb[2] && ca[3] < cb[3];
  };
  for (const auto& rec : ds.records) {
    const SceneGraph& g = rec.graph;
    std::vector<Edge> expect;
    for (std::size_t a = 0; a < g.nodes.size(); ++a) {
      for (std::size_t b = a + 1; b < g.nodes.size(); ++b) {
        const BBox& ba = g.nodes[a].box;
        const BBox& bb = g.nodes[b].box;
        const auto ca = ba.corners(), cb = bb.corners();
        const std::size_t first =
            ba.cx != bb.cx ? (ba.cx < bb.cx ? a : b) : (ba.cy <= bb.cy ? a : b);
        const std::size_t second = first == a ? b : a;
        if (strictly_inside(ba, bb)) {
          expect.push_back({a, b, "inside"});
        } else if (strictly_inside(bb, ba)) {
          expect.push_back({b, a, "inside"});
        } else if (iou(ba, bb) > 0.05) {
          expect.push_back({first, second, "overlapping"});
        } else if (std::min(ca[2], cb[2]) > std::max(ca[0], cb[0]) && ba.cy != bb.cy) {
          const std::size_t top = ba.cy < bb.cy ? a : b;
          expect.push_back({top, top == a ? b : a, "above"});
          expect.push_back({top == a ? b : a, top, "below"});
        } else if (std::min(ca[3], cb[3]) > std::max(ca[1], cb[1])) {
          const std::size_t left = ba.cx <= bb.cx ? a : b;
          expect.push_back({left, left == a ? b : a, "left of"});
        } else if (std::hypot(ba.cx - bb.cx, ba.cy - bb.cy) < 0.30) {
          expect.push_back({first, second, "near"});
        }
      }
    }
    REQUIRE(g.edges.size() == expect.size());
    for (std::size_t i = 0; i < expect.size(); ++i) {
      CHECK(g.edges[i].subject == expect[i].subject);
      CHECK(g.edges[i].object == expect[i].object);
      CHECK(g.edges[i].predicate == expect[i].predicate);
    }
    CHECK(validate_scene_graph(g, ds.vocabulary).ok());
  }
}

TEST_CASE("generated captions parse back to the annotated edges") {
  const Dataset ds = generate_synthetic_dataset(small_spec(13), fresh_dir("caps"));
  const ParserRules rules = ParserRules::from_vocabulary(ds.vocabulary);
  for (const auto& rec : ds.records) {
    REQUIRE(rec.caption.has_value());
    const auto parsed = parse_caption(*rec.caption, rules);
    REQUIRE(parsed.size() == rec.graph.edges.size());
    for (std::size_t i = 0; i < parsed.size(); ++i) {
      const Edge& e = rec.graph.edges[i];
      CHECK(parsed[i].subject == rec.graph.nodes[e.subject].concept_name);
      CHECK(parsed[i].relation == e.predicate);
      CHECK(parsed[i].object == rec.graph.nodes[e.object].concept_name);
    }
  }
}

TEST_CASE("non-overlapping generation produces disjoint boxes") {
  GenSpec spec = small_spec(17);
  spec.non_overlapping = true;
  spec.max_nodes = 4;
  const Dataset ds = generate_synthetic_dataset(spec, fresh_dir("disjoint"));
  for (const auto& rec : ds.records)
    for (std::size_t a = 0; a < rec.graph.nodes.size(); ++a)
      for (std::size_t b = a + 1; b < rec.graph.nodes.size(); ++b)
        CHECK(iou(rec.graph.nodes[a].box, rec.graph.nodes[b].box) == 0.0);
}

TEST_CASE("generator rejects inconsistent specs") {
  GenSpec spec = small_spec(1);
  spec.max_nodes = 50;  // exceeds the object vocabulary
  CHECK_THROWS(generate_synthetic_dataset(spec, fresh_dir("badspec")));
  spec = small_spec(1);
  spec.num_relations = 7;
  CHECK_THROWS(generate_synthetic_dataset(spec, fresh_dir("badspec2")));
}

TEST_CASE("split soundness for every setting") {
  const Dataset ds = generate_synthetic_dataset(small_spec(19), fresh_dir("split"));
  for (Setting setting : {Setting::Closed, Setting::OvD, Setting::OvR, Setting::OvDR}) {
    SplitSpec spec;
    spec.setting = setting;
    spec.selection_seed = 5;
    spec.novel_relation_count = 2;
    const SplitResult r = build_split(ds, spec);
    CAPTURE(setting_name(setting));

    // evaluation keeps the full annotations
    REQUIRE(r.eval.records.size() == ds.records.size());
    for (std::size_t i = 0; i < ds.records.size(); ++i)
      CHECK(r.eval.records[i].graph.edges.size() == ds.records[i].graph.edges.size());

    const bool drops_obj = setting == Setting::OvD || setting == Setting::OvDR;
    const bool drops_rel = setting == Setting::OvR || setting == Setting::OvDR;
    CHECK(r.novel_objects.empty() == !drops_obj);
    CHECK(r.novel_relations.empty() == !drops_rel);

    std::set<std::string> novel_obj(r.novel_objects.begin(), r.novel_objects.end());
    std::set<std::string> novel_rel(r.novel_relations.begin(), r.novel_relations.end());
    for (const auto& rec : r.train.records) {
      CHECK_FALSE(rec.graph.nodes.empty());
      for (const auto& n : rec.graph.nodes) CHECK_FALSE(novel_obj.count(n.concept_name));
      for (const auto& e : rec.graph.edges) {
        CHECK_FALSE(novel_rel.count(e.predicate));
        CHECK(e.subject < rec.graph.nodes.size());
        CHECK(e.object < rec.graph.nodes.size());
      }
      CHECK(validate_scene_graph(rec.graph, r.train.vocabulary).ok());
    }
    // masks mark exactly the novel names
    for (std::size_t i = 0; i < r.train.vocabulary.object_names.size(); ++i)
      CHECK(r.train.vocabulary.base_object_mask[i] ==
            !novel_obj.count(r.train.vocabulary.object_names[i]));
    for (std::size_t i = 0; i < r.train.vocabulary.relation_names.size(); ++i)
      CHECK(r.train.vocabulary.base_relation_mask[i] ==
            !novel_rel.count(r.train.vocabulary.relation_names[i]));

    if (setting == Setting::Closed) {
      CHECK(r.train.records.size() == ds.records.size());
      for (std::size_t i = 0; i < ds.records.size(); ++i)
        CHECK(r.train.records[i].graph.edges.size() == ds.records[i].graph.edges.size());
    }
    // determinism of the category selection
    const SplitResult again = build_split(ds, spec);
    CHECK(again.novel_objects == r.novel_objects);
    CHECK(again.novel_relations == r.novel_relations);
  }
}

TEST_CASE("split rejects bad fractions") {
  const Dataset ds = generate_synthetic_dataset(small_spec(23), fresh_dir("splitbad"));
  SplitSpec spec;
  spec.setting = Setting::OvD;
  spec.base_object_fraction = 0.0;
  CHECK_THROWS(build_split(ds, spec));
  spec.base_object_fraction = 0.7;
  spec.setting = Setting::OvR;
  spec.novel_relation_count = static_cast<int>(ds.vocabulary.relation_names.size());
  CHECK_THROWS(build_split(ds, spec));
}

TEST_CASE("sgdet recall on a hand-built image") {
  Dataset gt;
  gt.vocabulary = eval_vocab();
  DatasetRecord rec;
  rec.image_id = "img0";
  rec.graph.image_id = "img0";
  const BBox cat{0.2, 0.2, 0.2, 0.2};
  const BBox dog{0.7, 0.7, 0.2, 0.2};
  const BBox tree{0.5, 0.5, 0.4, 0.4};
  rec.graph.nodes = {{cat, "cat", 0}, {dog, "dog", 1}, {tree, "tree", 2}};
  rec.graph.edges = {{0, 2, "on"}, {1, 2, "near"}};
  gt.records.push_back(rec);

  ImagePrediction pred;
  pred.image_id = "img0";
  pred.triplets.push_back(make_triplet("cat", "on", "tree", cat, tree, 0.9));
  pred.triplets.push_back(make_triplet("dog", "on", "tree", dog, tree, 0.8));  // wrong predicate

  const EvalReport r = evaluate_sgdet({pred}, gt, 0.5, true);
  CHECK(r.slices.at("all").recall_at.at(20) == doctest::Approx(0.5));
  CHECK(r.slices.at("all").gt_triplets == 2);
  CHECK(r.slices.at("all").images == 1);
  // edge (cat on tree) has a novel object endpoint (tree)
  CHECK(r.slices.at("novel_object").recall_at.at(20) == doctest::Approx(1.0));
  CHECK(r.slices.at("novel_object").gt_triplets == 1);
  // edge (dog near tree) is novel on both axes and was missed
  CHECK(r.slices.at("novel_both").recall_at.at(20) == doctest::Approx(0.0));
  CHECK(r.slices.at("base").gt_triplets == 0);
  REQUIRE(r.per_image.size() == 1);
  CHECK(r.per_image[0].second.at(20) == doctest::Approx(0.5));
}

TEST_CASE("each predicted triplet credits at most one ground truth") {
  Dataset gt;
  gt.vocabulary = eval_vocab();
  DatasetRecord rec;
  rec.image_id = "img0";
  const BBox cat{0.2, 0.2, 0.2, 0.2};
  const BBox tree{0.5, 0.5, 0.4, 0.4};
  const BBox dog{0.7, 0.7, 0.2, 0.2};
  rec.graph.nodes = {{cat, "cat", 0}, {tree, "tree", 2}, {dog, "dog", 1}};
  rec.graph.edges = {{0, 1, "on"}, {2, 1, "near"}};
  gt.records.push_back(rec);

  ImagePrediction pred;
  pred.image_id = "img0";
  // the same correct triplet twice must not double-credit
  pred.triplets.push_back(make_triplet("cat", "on", "tree", cat, tree, 0.9));
  pred.triplets.push_back(make_triplet("cat", "on", "tree", cat, tree, 0.8));
  const EvalReport r = evaluate_sgdet({pred}, gt, 0.5, true);
  CHECK(r.slices.at("all").recall_at.at(20) == doctest::Approx(0.5));
}

TEST_CASE("recall@k honors the cutoff and the iou threshold") {
  Dataset gt;
  gt.vocabulary = eval_vocab();
  DatasetRecord rec;
  rec.image_id = "img0";
  const BBox cat{0.2, 0.2, 0.2, 0.2};
  const BBox tree{0.5, 0.5, 0.4, 0.4};
  rec.graph.nodes = {{cat, "cat", 0}, {tree, "tree", 2}};
  rec.graph.edges = {{0, 1, "on"}};
  gt.records.push_back(rec);

  ImagePrediction pred;
  pred.image_id = "img0";
  const BBox far{0.9, 0.1, 0.1, 0.1};
  for (int i = 0; i < 20; ++i)
    pred.triplets.push_back(make_triplet("dog", "on", "tree", far, tree, 1.0 - 0.01 * i));
  pred.triplets.push_back(make_triplet("cat", "on", "tree", cat, tree, 0.1));
  EvalReport r = evaluate_sgdet({pred}, gt, 0.5, true);
  CHECK(r.slices.at("all").recall_at.at(20) == doctest::Approx(0.0));
  CHECK(r.slices.at("all").recall_at.at(50) == doctest::Approx(1.0));

  // right names, box shifted below the iou threshold
  ImagePrediction off;
  off.image_id = "img0";
  off.triplets.push_back(
      make_triplet("cat", "on", "tree", {0.4, 0.4, 0.2, 0.2}, tree, 0.9));
  r = evaluate_sgdet({off}, gt, 0.5, true);
  CHECK(r.slices.at("all").recall_at.at(20) == doctest::Approx(0.0));
}

TEST_CASE("images without predictions count as zero recall") {
  Dataset gt;
  gt.vocabulary = eval_vocab();
  DatasetRecord rec;
  rec.image_id = "lonely";
  rec.graph.nodes = {{{0.2, 0.2, 0.2, 0.2}, "cat", 0}, {{0.5, 0.5, 0.4, 0.4}, "tree", 2}};
  rec.graph.edges = {{0, 1, "on"}};
  gt.records.push_back(rec);
  const EvalReport r = evaluate_sgdet({}, gt, 0.5, true);
  CHECK(r.slices.at("all").recall_at.at(100) == doctest::Approx(0.0));
  CHECK(r.slices.at("all").images == 1);
}

TEST_CASE("evaluator agrees with an independent oracle on random instances") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.1, 0.9);
  std::uniform_int_distribution<int> name_pick(0, 2), rel_pick(0, 1);
  const Vocabulary v = eval_vocab();

  for (int trial = 0; trial < 25; ++trial) {
    Dataset gt;
    gt.vocabulary = v;
    DatasetRecord rec;
    rec.image_id = "r";
    for (int i = 0; i < 4; ++i)
      rec.graph.nodes.push_back(
          {{u(rng), u(rng), 0.2 + 0.2 * u(rng), 0.2 + 0.2 * u(rng)},
           v.object_names[static_cast<std::size_t>(name_pick(rng))], std::nullopt});
    std::set<std::tuple<std::size_t, std::size_t, std::string>> seen;
    for (int e = 0; e < 4; ++e) {
      const std::size_t s = static_cast<std::size_t>(name_pick(rng));
      std::size_t o = static_cast<std::size_t>(name_pick(rng)) + 1;
      if (o == s) o = (o + 1) % 4;
      const std::string p = v.relation_names[static_cast<std::size_t>(rel_pick(rng))];
      if (seen.insert({s, o, p}).second) rec.graph.edges.push_back({s, o, p});
    }
    gt.records.push_back(rec);

    ImagePrediction pred;
    pred.image_id = "r";
    for (int t = 0; t < 30; ++t) {
      const auto& n1 = rec.graph.nodes[static_cast<std::size_t>(name_pick(rng))];
      const auto& n2 = rec.graph.nodes[static_cast<std::size_t>(name_pick(rng)) + 1];
      BBox sb = n1.box, ob = n2.box;
      sb.cx = std::min(0.95, sb.cx + 0.05 * u(rng));  // jitter
      pred.triplets.push_back(
          make_triplet(n1.concept_name,
                       v.relation_names[static_cast<std::size_t>(rel_pick(rng))],
                       n2.concept_name, sb, ob, 1.0 - 0.01 * t));
    }
    const EvalReport r = evaluate_sgdet({pred}, gt, 0.5, true);
    for (int K : kRecallKs)
      CHECK(r.slices.at("all").recall_at.at(K) ==
            doctest::Approx(oracle_recall(pred, rec.graph, K, 0.5)).epsilon(1e-12));
  }
}

TEST_CASE("eval report files are written") {
  Dataset gt;
  gt.vocabulary = eval_vocab();
  DatasetRecord rec;
  rec.image_id = "img0";
  rec.graph.nodes = {{{0.2, 0.2, 0.2, 0.2}, "cat", 0}, {{0.5, 0.5, 0.4, 0.4}, "tree", 2}};
  rec.graph.edges = {{0, 1, "on"}};
  gt.records.push_back(rec);
  const EvalReport r = evaluate_sgdet({}, gt, 0.5, true);
  const std::string dir = fresh_dir("report");
  save_eval_report(r, dir + "/report.json");
  save_eval_report_csv(r, dir + "/report.csv");
  const std::string body = slurp(dir + "/report.json");
  CHECK(body.find("recall@50") != std::string::npos);
  const std::string csv = slurp(dir + "/report.csv");
  CHECK(csv.find("image_id,recall@20,recall@50,recall@100") != std::string::npos);
  CHECK(csv.find("img0,0,0,0") != std::string::npos);
}
