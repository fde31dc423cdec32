#pragma once

// Frozen concept embeddings standing in for the text encoder, prompt
// construction, and the one-layer text projection onto edge-feature space.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ovsg/core_types.hpp"
#include "ovsg/numerics.hpp"

namespace ovsg {

// name -> unit-norm embedding; frozen after construction.
class ConceptTable {
 public:
  ConceptTable(std::size_t dim, std::string provenance)
      : dim_(dim), provenance_(std::move(provenance)) {}

  std::size_t dim() const { return dim_; }
  const std::string& provenance() const { return provenance_; }

  bool has(const std::string& name) const;
  const std::vector<double>& embedding(const std::string& name) const;
  // Registers alias to share target's vector. Target must exist.
  void add_alias(const std::string& alias, const std::string& target);
  // Inserts an embedding for a name not yet present (fixture generation or
  // file load); rejects duplicates and non-unit vectors.
  void insert(const std::string& name, std::vector<double> embedding);

  // Stacked embeddings for an ordered name list, one row per name.
  nn::Tensor stack(const std::vector<std::string>& names) const;

  // Order-insensitive content digest, used by immutability checks.
  std::uint64_t digest() const;

 private:
  std::size_t dim_;
  std::string provenance_;
  std::map<std::string, std::vector<double>> table_;
};

// Deterministic seeded unit vector derived from the name's bytes only;
// the same name always maps to the same vector.
std::vector<double> fixture_embedding(const std::string& name, std::size_t dim);

ConceptTable embed_concepts_fixture(const std::vector<std::string>& names,
                                    std::size_t dim);
// Embedding file: JSON manifest {names, dim} + raw little-endian f64 blob.
ConceptTable embed_concepts_file(const std::vector<std::string>& names,
                                 const std::string& manifest_path);
void save_embedding_file(const ConceptTable& table,
                         const std::vector<std::string>& names,
                         const std::string& manifest_path);
// Alias file: JSON map alias -> canonical name.
void load_alias_file(ConceptTable& table, const std::string& path);

struct PromptSpan {
  std::string name;
  std::size_t begin = 0;  // character offsets into the rendered string
  std::size_t end = 0;
};

struct Prompt {
  std::string text;
  std::vector<PromptSpan> object_spans;
  std::vector<PromptSpan> relation_spans;
  std::vector<std::size_t> separator_positions;  // char offsets of "[SEP]"
};

struct PromptOptions {
  std::vector<std::string> object_subset;    // empty = all
  std::vector<std::string> relation_subset;  // empty = all
  std::size_t pad_to_tokens = 0;             // 0 = no padding
};

// "[CLS] n1. n2. ... [SEP] r1. r2. ... [SEP]" with optional trailing [PAD].
Prompt build_prompt(const Vocabulary& v, const PromptOptions& opts = {});

// One fully connected layer mapping text space (d_t) to edge space (d_e).
struct TextProjection {
  std::string weight_name = "text_proj.w";  // d_t x d_e
  std::string bias_name = "text_proj.b";    // 1 x d_e

  static void init_params(nn::ParamStore& store, std::size_t d_t, std::size_t d_e,
                          std::uint64_t seed);
};

// Affine map of a concept embedding row-matrix (n x d_t) into edge space.
nn::Var project_text(nn::Session& session, const nn::Var& embeddings,
                     const TextProjection& proj);

}  // namespace ovsg
