#pragma once

// Scene-graph data model, box geometry, and dataset containers.

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace ovsg {

// Normalized center-format box. Corner form is derived.
struct BBox {
  double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0;

  std::array<double, 4> center_vec() const { return {cx, cy, w, h}; }
  std::array<double, 4> corners() const {
    return {cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0};
  }
  static BBox from_corners(double x1, double y1, double x2, double y2);
  bool valid() const;
};

// Checks invariants and throws std::invalid_argument on violation.
void validate_bbox(const BBox& b);

double iou(const BBox& a, const BBox& b);
double giou(const BBox& a, const BBox& b);

struct Node {
  BBox box;
  std::string concept_name;
  std::optional<std::size_t> concept_id;
};

struct Edge {
  std::size_t subject = 0;
  std::size_t object = 0;
  std::string predicate;
};

struct SceneGraph {
  std::vector<Node> nodes;
  std::vector<Edge> edges;
  std::string image_id;
};

struct Vocabulary {
  std::vector<std::string> object_names;
  std::vector<std::string> relation_names;
  std::vector<bool> base_object_mask;    // aligned with object_names
  std::vector<bool> base_relation_mask;  // aligned with relation_names

  std::optional<std::size_t> object_index(const std::string& name) const;
  std::optional<std::size_t> relation_index(const std::string& name) const;
  bool object_is_base(const std::string& name) const;
  bool relation_is_base(const std::string& name) const;
  void validate() const;
};

struct DatasetRecord {
  std::string image_id;
  std::string features;  // fixture reference, relative to the dataset dir
  SceneGraph graph;
  std::optional<std::string> caption;
  std::string provenance;  // "" | "caption"
};

struct Dataset {
  Vocabulary vocabulary;
  std::vector<DatasetRecord> records;
  std::string base_dir;  // where feature fixtures resolve from
};

struct Violation {
  std::string kind;      // "bad_index" | "self_loop" | "duplicate_triple" |
                         // "unknown_concept" | "unknown_predicate" | ...
  std::string location;  // human-readable position, e.g. "edge 3"
  std::string detail;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
};

// Never aborts; collects every violated invariant with its location.
ValidationReport validate_scene_graph(const SceneGraph& g, const Vocabulary& v);

// Dataset JSON schema I/O. Loading deduplicates repeated (s,o,p) triples and
// reports the dropped count via *deduplicated if non-null.
Dataset load_dataset(const std::string& path, std::size_t* deduplicated = nullptr);
void save_dataset(const Dataset& ds, const std::string& path);

}  // namespace ovsg
