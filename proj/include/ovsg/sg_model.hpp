#pragma once

// Set-prediction scene-graph model: cross-attention node decoder over frozen
// visual features, three-layer bbox head, parameter-free concept classifier,
// relation-query edge head, edge alignment, and full-graph inference.

#include <cstdint>
#include <string>
#include <vector>

#include "ovsg/concept_space.hpp"
#include "ovsg/core_types.hpp"
#include "ovsg/numerics.hpp"

namespace ovsg {

struct ModelConfig {
  std::size_t num_queries = 16;          // K
  std::size_t num_relation_queries = 1;  // M; 1 performs best and is default
  std::size_t d = 64;                    // node feature dim, equals d_t
  std::size_t d_e = 64;                  // edge feature dim
  std::size_t d_h = 64;                  // relation-head hidden dim
  std::size_t decoder_layers = 1;
  std::size_t top_n_detections = 100;    // clamped to K at inference
  std::size_t feature_dim = 72;          // frozen visual feature dim

  void validate() const;
};

// Frozen per-image grid features plus cell-center coordinates for the
// positional encoding. Never updated by training.
struct FeatureMap {
  nn::Tensor features;  // cells x feature_dim
  nn::Tensor centers;   // cells x 2, normalized (cx, cy) of each cell
};

void save_feature_map(const FeatureMap& fm, const std::string& path);
FeatureMap load_feature_map(const std::string& path);

// 6-d positional encoding per cell: (cx, cy, sin 2pi cx, cos 2pi cx, ...).
constexpr std::size_t kPosEncDim = 6;
nn::Tensor positional_encoding(const nn::Tensor& centers);

struct PredictionSet {
  nn::Tensor node_features;   // K x d
  std::vector<BBox> boxes;    // K
  nn::Tensor concept_scores;  // K x |object vocab|, sigmoid
  std::vector<double> objectness;  // max concept score per query
};

// Differentiable decode: node features, sigmoid boxes (K x 4 center-format),
// and concept logits against the stacked object embeddings.
struct DecodeOut {
  nn::Var node_features;  // K x d
  nn::Var boxes;          // K x 4
  nn::Var cls_logits;     // K x |object vocab|
};

void init_model_params(nn::ParamStore& store, const ModelConfig& cfg,
                       std::uint64_t seed);

DecodeOut decode_nodes_ad(nn::Session& session, const FeatureMap& fm,
                          const ModelConfig& cfg, const nn::Tensor& object_embeddings);

PredictionSet extract_prediction_set(const DecodeOut& out);

// sigma(<w, v>)
double node_similarity(const std::vector<double>& v, const std::vector<double>& w);

// Edge features for ordered query pairs; for M > 1 the per-query head
// outputs are averaged. Returns n_pairs x d_e.
nn::Var edge_features_ad(nn::Session& session, const nn::Var& node_features,
                         const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
                         const ModelConfig& cfg);
// Single-relation-query path, for the ablation and the averaging oracle.
nn::Var edge_features_single_query_ad(
    nn::Session& session, const nn::Var& node_features,
    const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
    const ModelConfig& cfg, std::size_t query_index);

// Raw alignment logits <e, f(E_t(t))>: n_pairs x |relations|. Sigmoid is
// applied only inside losses and inference ranking.
nn::Var edge_alignment_scores_ad(nn::Session& session, const nn::Var& edge_feats,
                                 const nn::Tensor& relation_embeddings,
                                 const TextProjection& proj);

struct TripletPrediction {
  BBox s_box, o_box;
  std::string s_name, o_name, predicate;
  double score = 0.0;
  std::size_t s_query = 0, o_query = 0;
};

struct ImagePrediction {
  std::string image_id;
  std::vector<TripletPrediction> triplets;  // sorted by score descending
};

ImagePrediction predict_scene_graph(nn::ParamStore& params, const FeatureMap& fm,
                                    const Vocabulary& vocab,
                                    const ConceptTable& concepts,
                                    const ModelConfig& cfg,
                                    const std::string& image_id,
                                    bool graph_constraint = true);

// Prediction dump: JSON lines, one record per image, preceded by one meta
// record carrying the objectness and graph-constraint choices.
void write_prediction_dump(const std::vector<ImagePrediction>& preds,
                           const std::string& path, bool graph_constraint);
std::vector<ImagePrediction> read_prediction_dump(const std::string& path);

}  // namespace ovsg
