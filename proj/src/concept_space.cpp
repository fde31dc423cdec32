#include "ovsg/concept_space.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

#include <json.hpp>

namespace ovsg {

using json = nlohmann::json;

bool ConceptTable::has(const std::string& name) const {
  return table_.count(name) != 0;
}

const std::vector<double>& ConceptTable::embedding(const std::string& name) const {
  auto it = table_.find(name);
  if (it == table_.end())
    throw std::invalid_argument("concept not in table: " + name);
  return it->second;
}

void ConceptTable::add_alias(const std::string& alias, const std::string& target) {
  insert(alias, embedding(target));
}

void ConceptTable::insert(const std::string& name, std::vector<double> embedding) {
  if (table_.count(name)) throw std::invalid_argument("duplicate concept: " + name);
  if (embedding.size() != dim_)
    throw std::invalid_argument("embedding dimension mismatch for: " + name);
  double sq = 0.0;
  for (double x : embedding) sq += x * x;
  if (std::fabs(std::sqrt(sq) - 1.0) > 1e-9)
    throw std::invalid_argument("embedding not unit norm for: " + name);
  table_.emplace(name, std::move(embedding));
}

nn::Tensor ConceptTable::stack(const std::vector<std::string>& names) const {
  nn::Tensor t(names.size(), dim_);
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto& e = embedding(names[i]);
    for (std::size_t j = 0; j < dim_; ++j) t.at(i, j) = e[j];
  }
  return t;
}

std::uint64_t ConceptTable::digest() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](std::uint64_t x) {
    h ^= x;
    h *= 1099511628211ull;
  };
  for (const auto& [name, emb] : table_) {
    for (char c : name) mix(static_cast<std::uint64_t>(static_cast<unsigned char>(c)));
    for (double d : emb) {
      std::uint64_t bits;
      static_assert(sizeof(bits) == sizeof(d));
      std::memcpy(&bits, &d, sizeof(bits));
      mix(bits);
    }
  }
  return h;
}

std::vector<double> fixture_embedding(const std::string& name, std::size_t dim) {
  // FNV-1a over the name bytes seeds the generator
  std::uint64_t h = 1469598103934665603ull;
  for (char c : name) {
    h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
    h *= 1099511628211ull;
  }
  std::mt19937_64 rng(h);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> v(dim);
  double sq = 0.0;
  for (auto& x : v) {
    x = gauss(rng);
    sq += x * x;
  }
  const double inv = 1.0 / std::sqrt(sq);
  for (auto& x : v) x *= inv;
  return v;
}

ConceptTable embed_concepts_fixture(const std::vector<std::string>& names,
                                    std::size_t dim) {
  if (names.empty()) throw std::invalid_argument("embed_concepts: empty name list");
  ConceptTable t(dim, "fixture");
  for (const auto& n : names)
    if (!t.has(n)) t.insert(n, fixture_embedding(n, dim));
  return t;
}

ConceptTable embed_concepts_file(const std::vector<std::string>& names,
                                 const std::string& manifest_path) {
  if (names.empty()) throw std::invalid_argument("embed_concepts: empty name list");
  std::ifstream mf(manifest_path);
  if (!mf) throw std::runtime_error("cannot open embedding manifest: " + manifest_path);
  json j;
  mf >> j;
  const std::size_t dim = j.at("dim");
  const auto file_names = j.at("names").get<std::vector<std::string>>();
  const std::string blob_path =
      manifest_path.substr(0, manifest_path.find_last_of('/') + 1) + "embeddings.f64";
  std::ifstream blob(blob_path, std::ios::binary);
  if (!blob) throw std::runtime_error("missing embedding blob: " + blob_path);
  ConceptTable t(dim, "file");
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < file_names.size(); ++i) index[file_names[i]] = i;
  for (const auto& n : names) {
    auto it = index.find(n);
    if (it == index.end())
      throw std::runtime_error("embedding file missing name: " + n);
    std::vector<double> v(dim);
    blob.seekg(static_cast<std::streamoff>(it->second * dim * sizeof(double)));
    blob.read(reinterpret_cast<char*>(v.data()),
              static_cast<std::streamsize>(dim * sizeof(double)));
    if (!blob) throw std::runtime_error("embedding blob too short for: " + n);
    if (!t.has(n)) t.insert(n, std::move(v));
  }
  return t;
}

void save_embedding_file(const ConceptTable& table,
                         const std::vector<std::string>& names,
                         const std::string& manifest_path) {
  json j{{"names", names}, {"dim", table.dim()}};
  std::ofstream mf(manifest_path);
  mf << j.dump(2) << "\n";
  const std::string blob_path =
      manifest_path.substr(0, manifest_path.find_last_of('/') + 1) + "embeddings.f64";
  std::ofstream blob(blob_path, std::ios::binary);
  for (const auto& n : names) {
    const auto& v = table.embedding(n);
    blob.write(reinterpret_cast<const char*>(v.data()),
               static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
}

void load_alias_file(ConceptTable& table, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open alias file: " + path);
  json j;
  in >> j;
  for (auto it = j.begin(); it != j.end(); ++it)
    table.add_alias(it.key(), it.value().get<std::string>());
}

Prompt build_prompt(const Vocabulary& v, const PromptOptions& opts) {
  if (v.object_names.empty()) throw std::invalid_argument("empty vocabulary");
  const auto& objects =
      opts.object_subset.empty() ? v.object_names : opts.object_subset;
  const auto& relations =
      opts.relation_subset.empty() ? v.relation_names : opts.relation_subset;
  if (objects.empty()) throw std::invalid_argument("sampled subset empty");

  Prompt p;
  std::size_t tokens = 0;
  auto append_token = [&](const std::string& tok) {
    if (!p.text.empty()) p.text += ' ';
    p.text += tok;
    ++tokens;
  };
  append_token("[CLS]");
  auto append_names = [&](const std::vector<std::string>& names,
                          std::vector<PromptSpan>& spans) {
    for (const auto& n : names) {
      if (!p.text.empty()) p.text += ' ';
      spans.push_back({n, p.text.size(), p.text.size() + n.size()});
      p.text += n;
      p.text += '.';
      // multiword names span several whitespace tokens
      tokens += 1 + static_cast<std::size_t>(std::count(n.begin(), n.end(), ' '));
    }
  };
  append_names(objects, p.object_spans);
  p.separator_positions.push_back(p.text.size() + 1);
  append_token("[SEP]");
  append_names(relations, p.relation_spans);
  p.separator_positions.push_back(p.text.size() + 1);
  append_token("[SEP]");
  while (opts.pad_to_tokens > 0 && tokens < opts.pad_to_tokens) append_token("[PAD]");
  return p;
}

void TextProjection::init_params(nn::ParamStore& store, std::size_t d_t,
                                 std::size_t d_e, std::uint64_t seed) {
  store.add("text_proj.w", nn::init_uniform(d_t, d_e, d_t, seed));
  store.add("text_proj.b", nn::Tensor(1, d_e));
}

nn::Var project_text(nn::Session& session, const nn::Var& embeddings,
                     const TextProjection& proj) {
  nn::Var w = session.p(proj.weight_name);
  nn::Var b = session.p(proj.bias_name);
  if (embeddings.cols() != w.rows())
    throw std::invalid_argument("text projection dimension mismatch");
  return nn::add_rowwise(nn::matmul(embeddings, w), b);
}

}  // namespace ovsg
