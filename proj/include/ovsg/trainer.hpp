#pragma once

// Training loops tying the model, matching, and losses together: supervised
// training with optional teacher distillation, node-stage warmup, and
// caption-driven relation pretraining.

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ovsg/benchmark.hpp"
#include "ovsg/concept_space.hpp"
#include "ovsg/core_types.hpp"
#include "ovsg/losses.hpp"
#include "ovsg/sg_model.hpp"
#include "ovsg/weak_supervision.hpp"

namespace ovsg {

// Fixture table covering every object and relation name of a vocabulary.
ConceptTable concepts_for(const Vocabulary& v, std::size_t dim);

struct TrainResult {
  LossBreakdown last;
  std::size_t steps_run = 0;
};

// Supervised set-prediction training on annotated graphs. Supervision is
// restricted to base-masked categories; when teacher != nullptr and
// cfg.lambda > 0, student edge features on negative samples are pulled
// toward the teacher's. nodes_only skips every relation term.
TrainResult train_supervised(nn::ParamStore& params, const nn::ParamStore* teacher,
                             const Dataset& ds, const ConceptTable& concepts,
                             const ModelConfig& mcfg, const TrainConfig& tcfg,
                             std::ostream* log, bool nodes_only = false);

struct PretrainResult {
  TrainResult train;
  std::vector<std::string> relation_vocabulary;  // parsed predicate union
  std::size_t pseudo_edges = 0;
};

// Caption stage: parses captions, grounds pseudo labels with the confidence
// gate, freezes the node pathway, and trains the relation pathway with BCE
// only. Throws if the gate leaves no pseudo labels.
PretrainResult pretrain_relations_from_captions(
    nn::ParamStore& params, const Dataset& ds, const ParserRules& rules,
    const ModelConfig& mcfg, const TrainConfig& tcfg, double threshold,
    std::ostream* log);

// Inference over a dataset; evaluation sees the full vocabulary.
std::vector<ImagePrediction> predict_dataset(nn::ParamStore& params,
                                             const Dataset& ds,
                                             const ConceptTable& concepts,
                                             const ModelConfig& mcfg,
                                             bool graph_constraint = true);

}  // namespace ovsg
