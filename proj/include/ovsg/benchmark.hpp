#pragma once

// Four-setting split construction, synthetic dataset generation, and SGDET
// Recall@K evaluation with base/novel slicing.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ovsg/core_types.hpp"
#include "ovsg/sg_model.hpp"

namespace ovsg {

enum class Setting { Closed, OvD, OvR, OvDR };

std::string setting_name(Setting s);
Setting setting_from_name(const std::string& name);

struct SplitSpec {
  Setting setting = Setting::Closed;
  double base_object_fraction = 0.70;
  // 15-of-50 at VG scale; scaled proportionally when <= 0
  int novel_relation_count = -1;
  std::uint64_t selection_seed = 0;
};

struct SplitResult {
  Dataset train;
  Dataset eval;
  std::vector<std::string> novel_objects;
  std::vector<std::string> novel_relations;
};

// closed: untouched; ovd: training graphs drop novel-concept nodes and their
// incident edges; ovr: training graphs drop novel-predicate edges; ovd_r:
// both. Evaluation keeps full annotations. Images left with empty training
// graphs are dropped from training.
SplitResult build_split(const Dataset& ds, const SplitSpec& spec);

void save_split_manifest(const SplitResult& split, const SplitSpec& spec,
                         const std::string& path);

struct SliceRecall {
  std::map<int, double> recall_at;  // K -> mean recall over images with gt
  std::size_t gt_triplets = 0;
  std::size_t images = 0;  // images contributing to the mean
};

struct EvalReport {
  std::map<std::string, SliceRecall> slices;  // all, base, novel_object, ...
  bool graph_constraint_mode = true;
  double iou_threshold = 0.5;
  // per image: K -> recall, for the "all" slice
  std::vector<std::pair<std::string, std::map<int, double>>> per_image;
};

inline const std::vector<int> kRecallKs = {20, 50, 100};

// A ground-truth triplet is recalled iff some unused predicted triplet among
// the image's top-K has matching subject/object/predicate names and both-box
// IoU >= threshold; predictions are consumed greedily in score order.
EvalReport evaluate_sgdet(const std::vector<ImagePrediction>& preds,
                          const Dataset& gts, double iou_threshold = 0.5,
                          bool graph_constraint_mode = true);

void save_eval_report(const EvalReport& report, const std::string& path);
void save_eval_report_csv(const EvalReport& report, const std::string& path);

struct GenSpec {
  std::size_t scenes = 32;
  std::size_t num_objects = 12;    // object vocabulary size
  std::size_t num_relations = 6;   // relation vocabulary size, at most 6 rules
  std::size_t min_nodes = 3;
  std::size_t max_nodes = 8;
  double noise = 0.05;
  std::size_t grid = 6;            // feature map is grid x grid cells
  std::size_t feature_dim = 72;
  std::size_t embed_dim = 64;
  bool non_overlapping = false;    // forbid box overlap (may be infeasible)
  bool captions = true;
  std::uint64_t seed = 0;
};

// Geometric rule predicates, in priority order.
const std::vector<std::string>& rule_predicates();

// Scenes with geometry-rule edges; node-region features are a fixed linear
// image of (concept embedding, box) plus Gaussian noise. Deterministic under
// the seed. Feature fixtures are written under out_dir/features/.
Dataset generate_synthetic_dataset(const GenSpec& spec, const std::string& out_dir);

}  // namespace ovsg
