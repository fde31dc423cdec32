#pragma once

// Caption -> triplet parsing and pseudo-label grounding for relation-aware
// pretraining.

#include <string>
#include <vector>

#include "ovsg/concept_space.hpp"
#include "ovsg/core_types.hpp"
#include "ovsg/sg_model.hpp"

namespace ovsg {

struct CaptionTriplet {
  std::string subject, relation, object;
  std::size_t subject_begin = 0, subject_end = 0;  // character spans
  std::size_t object_begin = 0, object_end = 0;
};

struct ParserRules {
  std::vector<std::string> nouns;       // lexicon noun phrases
  std::vector<std::string> relations;   // lexicon relation phrases
  std::vector<std::string> determiners;
  std::vector<std::string> adjectives;
  std::vector<std::string> prepositions;
  std::string version;

  static ParserRules from_vocabulary(const Vocabulary& v);
  static ParserRules load(const std::string& path);  // versioned rule table
  void save(const std::string& path) const;
};

// Deterministic rule cascade: longest-lexicon-match noun phrases with
// determiner/adjective stripping, then "NP verb NP", "NP verb prep NP" and
// "NP prep NP" patterns left to right. Unparseable text yields an empty list.
std::vector<CaptionTriplet> parse_caption(const std::string& text,
                                          const ParserRules& rules);

struct PseudoNode {
  std::string phrase;
  std::size_t query = 0;     // matched prediction index
  BBox box;                  // matched prediction's box
  double confidence = 0.0;   // matched concept score, > threshold
};

struct PseudoEdge {
  std::size_t subject = 0, object = 0;  // indices into nodes
  std::string predicate;
  CaptionTriplet source;
};

struct PseudoLabel {
  std::vector<PseudoNode> nodes;
  std::vector<PseudoEdge> edges;
};

// Grounds distinct phrases onto predictions via category-only bipartite
// matching; a triplet survives iff both endpoint concept scores exceed the
// threshold (strict inequality). Default threshold 0.25.
PseudoLabel ground_triplets(const std::vector<CaptionTriplet>& triplets,
                            const PredictionSet& preds,
                            const ConceptTable& concepts,
                            double threshold = 0.25);

}  // namespace ovsg
