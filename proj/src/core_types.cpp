#include "ovsg/core_types.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>
#include <unordered_set>

#include <json.hpp>

namespace ovsg {

using json = nlohmann::json;

BBox BBox::from_corners(double x1, double y1, double x2, double y2) {
  if (!(x1 < x2) || !(y1 < y2))
    throw std::invalid_argument("degenerate box: corners must satisfy x1<x2, y1<y2");
  return BBox{(x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1};
}

bool BBox::valid() const {
  return cx >= 0.0 && cx <= 1.0 && cy >= 0.0 && cy <= 1.0 && w > 0.0 && w <= 1.0 &&
         h > 0.0 && h <= 1.0 && std::isfinite(cx) && std::isfinite(cy) &&
         std::isfinite(w) && std::isfinite(h);
}

void validate_bbox(const BBox& b) {
  if (b.w <= 0.0 || b.h <= 0.0) throw std::invalid_argument("degenerate box: w,h must be > 0");
  if (!b.valid()) throw std::invalid_argument("box violates normalized-coordinate invariants");
}

namespace {
double inter_area(const BBox& a, const BBox& b) {
  auto ca = a.corners(), cb = b.corners();
  const double iw = std::min(ca[2], cb[2]) - std::max(ca[0], cb[0]);
  const double ih = std::min(ca[3], cb[3]) - std::max(ca[1], cb[1]);
  return (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
}
}  // namespace

double iou(const BBox& a, const BBox& b) {
  validate_bbox(a);
  validate_bbox(b);
  const double inter = inter_area(a, b);
  const double uni = a.w * a.h + b.w * b.h - inter;
  return inter / uni;
}

double giou(const BBox& a, const BBox& b) {
  validate_bbox(a);
  validate_bbox(b);
  const double inter = inter_area(a, b);
  const double uni = a.w * a.h + b.w * b.h - inter;
  auto ca = a.corners(), cb = b.corners();
  const double ew = std::max(ca[2], cb[2]) - std::min(ca[0], cb[0]);
  const double eh = std::max(ca[3], cb[3]) - std::min(ca[1], cb[1]);
  const double enclose = ew * eh;
  return inter / uni - (enclose - uni) / enclose;
}

std::optional<std::size_t> Vocabulary::object_index(const std::string& name) const {
  auto it = std::find(object_names.begin(), object_names.end(), name);
  if (it == object_names.end()) return std::nullopt;
  return static_cast<std::size_t>(it - object_names.begin());
}

std::optional<std::size_t> Vocabulary::relation_index(const std::string& name) const {
  auto it = std::find(relation_names.begin(), relation_names.end(), name);
  if (it == relation_names.end()) return std::nullopt;
  return static_cast<std::size_t>(it - relation_names.begin());
}

bool Vocabulary::object_is_base(const std::string& name) const {
  auto idx = object_index(name);
  return idx && base_object_mask[*idx];
}

bool Vocabulary::relation_is_base(const std::string& name) const {
  auto idx = relation_index(name);
  return idx && base_relation_mask[*idx];
}

void Vocabulary::validate() const {
  std::unordered_set<std::string> seen(object_names.begin(), object_names.end());
  if (seen.size() != object_names.size())
    throw std::invalid_argument("duplicate object names in vocabulary");
  std::unordered_set<std::string> rseen(relation_names.begin(), relation_names.end());
  if (rseen.size() != relation_names.size())
    throw std::invalid_argument("duplicate relation names in vocabulary");
  if (base_object_mask.size() != object_names.size() ||
      base_relation_mask.size() != relation_names.size())
    throw std::invalid_argument("vocabulary mask length mismatch");
}

ValidationReport validate_scene_graph(const SceneGraph& g, const Vocabulary& v) {
  ValidationReport report;
  auto flag = [&](std::string kind, std::string loc, std::string detail) {
    report.violations.push_back({std::move(kind), std::move(loc), std::move(detail)});
  };
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const Node& n = g.nodes[i];
    if (n.concept_name.empty()) flag("empty_concept", "node " + std::to_string(i), "");
    if (!n.box.valid())
      flag("invalid_box", "node " + std::to_string(i), "box violates invariants");
    if (!n.concept_name.empty() && !v.object_index(n.concept_name))
      flag("unknown_concept", "node " + std::to_string(i), n.concept_name);
    if (n.concept_id && *n.concept_id >= v.object_names.size())
      flag("bad_concept_id", "node " + std::to_string(i), std::to_string(*n.concept_id));
  }
  std::set<std::tuple<std::size_t, std::size_t, std::string>> triples;
  for (std::size_t i = 0; i < g.edges.size(); ++i) {
    const Edge& e = g.edges[i];
    const std::string loc = "edge " + std::to_string(i);
    if (e.subject >= g.nodes.size() || e.object >= g.nodes.size()) {
      flag("bad_index", loc,
           std::to_string(e.subject) + "->" + std::to_string(e.object));
      continue;
    }
    if (e.subject == e.object) flag("self_loop", loc, std::to_string(e.subject));
    if (e.predicate.empty()) flag("empty_predicate", loc, "");
    if (!e.predicate.empty() && !v.relation_index(e.predicate))
      flag("unknown_predicate", loc, e.predicate);
    if (!triples.insert({e.subject, e.object, e.predicate}).second)
      flag("duplicate_triple", loc, e.predicate);
  }
  return report;
}

namespace {

json vocab_to_json(const Vocabulary& v) {
  return json{{"object_names", v.object_names},
              {"relation_names", v.relation_names},
              {"base_object_mask", v.base_object_mask},
              {"base_relation_mask", v.base_relation_mask}};
}

Vocabulary vocab_from_json(const json& j) {
  Vocabulary v;
  v.object_names = j.at("object_names").get<std::vector<std::string>>();
  v.relation_names = j.at("relation_names").get<std::vector<std::string>>();
  v.base_object_mask = j.at("base_object_mask").get<std::vector<bool>>();
  v.base_relation_mask = j.at("base_relation_mask").get<std::vector<bool>>();
  v.validate();
  return v;
}

json graph_to_json(const SceneGraph& g) {
  json nodes = json::array();
  for (const auto& n : g.nodes)
    nodes.push_back({{"box", {n.box.cx, n.box.cy, n.box.w, n.box.h}},
                     {"concept", n.concept_name}});
  json edges = json::array();
  for (const auto& e : g.edges)
    edges.push_back({{"s", e.subject}, {"o", e.object}, {"p", e.predicate}});
  return json{{"nodes", nodes}, {"edges", edges}};
}

SceneGraph graph_from_json(const json& j, const std::string& image_id,
                           std::size_t* deduplicated) {
  SceneGraph g;
  g.image_id = image_id;
  for (const auto& nj : j.at("nodes")) {
    Node n;
    const auto& b = nj.at("box");
    n.box = BBox{b[0], b[1], b[2], b[3]};
    n.concept_name = nj.at("concept");
    g.nodes.push_back(std::move(n));
  }
  std::set<std::tuple<std::size_t, std::size_t, std::string>> seen;
  for (const auto& ej : j.at("edges")) {
    Edge e{ej.at("s"), ej.at("o"), ej.at("p")};
    if (!seen.insert({e.subject, e.object, e.predicate}).second) {
      if (deduplicated) ++(*deduplicated);
      continue;
    }
    g.edges.push_back(std::move(e));
  }
  return g;
}

}  // namespace

Dataset load_dataset(const std::string& path, std::size_t* deduplicated) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file: " + path);
  json j;
  in >> j;
  Dataset ds;
  ds.vocabulary = vocab_from_json(j.at("vocabulary"));
  ds.base_dir = std::filesystem::path(path).parent_path().string();
  std::unordered_set<std::string> ids;
  for (const auto& rj : j.at("records")) {
    DatasetRecord rec;
    rec.image_id = rj.at("image_id");
    if (!ids.insert(rec.image_id).second)
      throw std::runtime_error("duplicate image_id in dataset: " + rec.image_id);
    rec.features = rj.at("features");
    rec.graph = graph_from_json(rj.at("graph"), rec.image_id, deduplicated);
    if (rj.contains("caption")) rec.caption = rj.at("caption").get<std::string>();
    if (rj.contains("provenance")) rec.provenance = rj.at("provenance");
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  json j;
  j["vocabulary"] = vocab_to_json(ds.vocabulary);
  j["records"] = json::array();
  for (const auto& rec : ds.records) {
    json rj{{"image_id", rec.image_id},
            {"features", rec.features},
            {"graph", graph_to_json(rec.graph)}};
    if (rec.caption) rj["caption"] = *rec.caption;
    if (!rec.provenance.empty()) rj["provenance"] = rec.provenance;
    j["records"].push_back(std::move(rj));
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset file: " + path);
  out << j.dump(1) << "\n";
}

}  // namespace ovsg
