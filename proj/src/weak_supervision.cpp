#include "ovsg/weak_supervision.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "ovsg/matching.hpp"

namespace ovsg {

using json = nlohmann::json;

namespace {

const std::vector<std::string> kDeterminers = {
    "a", "an", "the", "this", "that", "its", "his", "her", "their", "some"};
const std::vector<std::string> kAdjectives = {
    "small", "big",   "large", "little", "red",  "blue",  "green",
    "yellow", "black", "white", "young",  "old",  "tall",  "wooden"};
const std::vector<std::string> kPrepositions = {
    "on",   "in",     "at",   "of",     "above", "below",  "under", "over",
    "near", "inside", "behind", "beside", "with",  "by",     "around", "onto"};

struct Token {
  std::string text;       // lowercased, punctuation stripped
  std::size_t begin = 0;  // offsets into the original caption
  std::size_t end = 0;
  bool sentence_end = false;  // token was followed by '.'
};

std::vector<Token> tokenize(const std::string& text) {
  std::vector<Token> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i >= text.size()) break;
    std::size_t start = i;
    std::string word;
    bool sentence_end = false;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) {
      const char c = text[i];
      if (c == '.') sentence_end = true;
      if (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '\'')
        word += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      ++i;
    }
    if (!word.empty()) tokens.push_back({word, start, start + word.size(), sentence_end});
    else if (sentence_end && !tokens.empty()) tokens.back().sentence_end = true;
  }
  return tokens;
}

std::vector<std::vector<std::string>> split_phrases(const std::vector<std::string>& names) {
  std::vector<std::vector<std::string>> out;
  for (const auto& n : names) {
    std::vector<std::string> words;
    std::string cur;
    for (char c : n) {
      if (c == ' ') {
        if (!cur.empty()) words.push_back(cur);
        cur.clear();
      } else {
        cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      }
    }
    if (!cur.empty()) words.push_back(cur);
    if (!words.empty()) out.push_back(std::move(words));
  }
  // longest first so lexicon matching is maximal
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& a, const auto& b) { return a.size() > b.size(); });
  return out;
}

bool contains(const std::vector<std::string>& list, const std::string& w) {
  return std::find(list.begin(), list.end(), w) != list.end();
}

// Matches the longest lexicon phrase starting at tokens[i]; returns its word
// count, or 0. Phrases never cross a sentence boundary.
std::size_t match_phrase(const std::vector<Token>& tokens, std::size_t i,
                         const std::vector<std::vector<std::string>>& phrases) {
  for (const auto& ph : phrases) {
    if (i + ph.size() > tokens.size()) continue;
    bool ok = true;
    for (std::size_t k = 0; k < ph.size() && ok; ++k) {
      if (tokens[i + k].text != ph[k]) ok = false;
      if (ok && k + 1 < ph.size() && tokens[i + k].sentence_end) ok = false;
    }
    if (ok) return ph.size();
  }
  return 0;
}

std::string join_tokens(const std::vector<Token>& tokens, std::size_t i,
                        std::size_t count) {
  std::string s;
  for (std::size_t k = 0; k < count; ++k) {
    if (k) s += ' ';
    s += tokens[i + k].text;
  }
  return s;
}

bool verb_like(const std::string& w) {
  auto ends_with = [&](const char* suf) {
    const std::size_t n = std::strlen(suf);
    return w.size() > n && w.compare(w.size() - n, n, suf) == 0;
  };
  return ends_with("ing") || ends_with("ed") || ends_with("s");
}

}  // namespace

ParserRules ParserRules::from_vocabulary(const Vocabulary& v) {
  ParserRules r;
  r.nouns = v.object_names;
  r.relations = v.relation_names;
  r.determiners = kDeterminers;
  r.adjectives = kAdjectives;
  r.prepositions = kPrepositions;
  r.version = "builtin-1";
  return r;
}

ParserRules ParserRules::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open parser rule table: " + path);
  json j;
  in >> j;
  ParserRules r;
  r.nouns = j.value("nouns", std::vector<std::string>{});
  r.relations = j.value("relations", std::vector<std::string>{});
  r.determiners = j.at("determiners").get<std::vector<std::string>>();
  r.adjectives = j.at("adjectives").get<std::vector<std::string>>();
  r.prepositions = j.at("prepositions").get<std::vector<std::string>>();
  r.version = j.at("version");
  return r;
}

void ParserRules::save(const std::string& path) const {
  json j{{"version", version},       {"nouns", nouns},
         {"relations", relations},   {"determiners", determiners},
         {"adjectives", adjectives}, {"prepositions", prepositions}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write parser rule table: " + path);
  out << j.dump(2) << "\n";
}

std::vector<CaptionTriplet> parse_caption(const std::string& text,
                                          const ParserRules& rules) {
  const std::vector<Token> tokens = tokenize(text);
  const auto noun_phrases = split_phrases(rules.nouns);
  const auto rel_phrases = split_phrases(rules.relations);

  struct NP {
    std::string phrase;
    std::size_t tok_begin, tok_end;  // token range of the noun itself
    std::size_t char_begin, char_end;
  };
  std::vector<NP> nps;
  for (std::size_t i = 0; i < tokens.size();) {
    // strip determiners and adjectives in front of a candidate noun
    std::size_t j = i;
    while (j < tokens.size() && !tokens[j].sentence_end &&
           (contains(rules.determiners, tokens[j].text) ||
            contains(rules.adjectives, tokens[j].text)))
      ++j;
    const std::size_t len = match_phrase(tokens, j, noun_phrases);
    if (len > 0) {
      nps.push_back({join_tokens(tokens, j, len), j, j + len, tokens[j].begin,
                     tokens[j + len - 1].end});
      i = j + len;
    } else {
      ++i;
    }
  }

  std::vector<CaptionTriplet> out;
  std::set<std::tuple<std::string, std::string, std::string>> seen;
  for (std::size_t n = 0; n + 1 < nps.size(); ++n) {
    const NP& s = nps[n];
    const NP& o = nps[n + 1];
    // the pair must lie inside one sentence
    bool crosses = false;
    for (std::size_t t = s.tok_begin; t + 1 < o.tok_end; ++t)
      if (tokens[t].sentence_end) crosses = true;
    if (crosses) continue;
    // relation candidate: tokens strictly between, minus determiners/adjectives
    std::vector<std::size_t> mid;
    for (std::size_t t = s.tok_end; t < o.tok_begin; ++t)
      if (!contains(rules.determiners, tokens[t].text) &&
          !contains(rules.adjectives, tokens[t].text))
        mid.push_back(t);
    if (mid.empty() || mid.size() > 3) continue;

    std::string joined_mid;
    for (std::size_t k = 0; k < mid.size(); ++k) {
      if (k) joined_mid += ' ';
      joined_mid += tokens[mid[k]].text;
    }
    std::string relation;
    // lexicon first (supports multiword relations)
    for (const auto& ph : rel_phrases) {
      if (ph.size() != mid.size()) continue;
      bool ok = true;
      for (std::size_t k = 0; k < ph.size() && ok; ++k)
        if (tokens[mid[k]].text != ph[k]) ok = false;
      if (ok) {
        relation = joined_mid;
        break;
      }
    }
    if (relation.empty()) {
      if (mid.size() == 1 && contains(rules.prepositions, tokens[mid[0]].text)) {
        relation = tokens[mid[0]].text;  // "NP prep NP"
      } else if (mid.size() == 1 && verb_like(tokens[mid[0]].text)) {
        relation = tokens[mid[0]].text;  // "NP verb NP"
      } else if (mid.size() == 2 && verb_like(tokens[mid[0]].text) &&
                 contains(rules.prepositions, tokens[mid[1]].text)) {
        relation = tokens[mid[0]].text + " " + tokens[mid[1]].text;  // "NP verb prep NP"
      }
    }
    if (relation.empty()) continue;
    if (!seen.insert({s.phrase, relation, o.phrase}).second) continue;
    CaptionTriplet t;
    t.subject = s.phrase;
    t.relation = relation;
    t.object = o.phrase;
    t.subject_begin = s.char_begin;
    t.subject_end = s.char_end;
    t.object_begin = o.char_begin;
    t.object_end = o.char_end;
    out.push_back(std::move(t));
  }
  return out;
}

PseudoLabel ground_triplets(const std::vector<CaptionTriplet>& triplets,
                            const PredictionSet& preds,
                            const ConceptTable& concepts, double threshold) {
  if (threshold < 0.0 || threshold > 1.0)
    throw std::invalid_argument("grounding threshold must be in [0, 1]");
  if (preds.boxes.empty()) throw std::invalid_argument("no predictions available");

  // distinct phrases in order of first appearance
  std::vector<std::string> phrases;
  auto note = [&](const std::string& p) {
    if (std::find(phrases.begin(), phrases.end(), p) == phrases.end())
      phrases.push_back(p);
  };
  for (const auto& t : triplets) {
    note(t.subject);
    note(t.object);
  }
  // injective assignment requires at most K phrases; extra ones are dropped
  if (phrases.size() > preds.boxes.size()) phrases.resize(preds.boxes.size());

  PseudoLabel label;
  if (phrases.empty()) return label;

  const std::size_t K = preds.boxes.size();
  std::vector<std::vector<double>> sim(phrases.size(), std::vector<double>(K));
  for (std::size_t i = 0; i < phrases.size(); ++i) {
    const std::vector<double> emb = concepts.has(phrases[i])
                                        ? concepts.embedding(phrases[i])
                                        : fixture_embedding(phrases[i], concepts.dim());
    for (std::size_t j = 0; j < K; ++j) {
      std::vector<double> v(preds.node_features.cols);
      for (std::size_t c = 0; c < v.size(); ++c) v[c] = preds.node_features.at(j, c);
      sim[i][j] = node_similarity(v, emb);
    }
  }
  std::vector<std::vector<double>> cost(phrases.size(), std::vector<double>(K));
  for (std::size_t i = 0; i < phrases.size(); ++i)
    for (std::size_t j = 0; j < K; ++j) cost[i][j] = 1.0 - sim[i][j];
  const MatchResult match = match_bipartite(cost);

  std::map<std::string, std::size_t> phrase_index;
  std::vector<double> confidence(phrases.size());
  for (std::size_t i = 0; i < phrases.size(); ++i) {
    phrase_index[phrases[i]] = i;
    confidence[i] = sim[i][match.assignment[i]];
  }

  std::map<std::string, std::size_t> node_of_phrase;  // surviving nodes
  for (const auto& t : triplets) {
    auto si = phrase_index.find(t.subject);
    auto oi = phrase_index.find(t.object);
    if (si == phrase_index.end() || oi == phrase_index.end()) continue;
    // strict inequality: a score exactly at the threshold is dropped
    if (!(confidence[si->second] > threshold) || !(confidence[oi->second] > threshold))
      continue;
    auto ensure_node = [&](std::size_t pi) {
      auto it = node_of_phrase.find(phrases[pi]);
      if (it != node_of_phrase.end()) return it->second;
      PseudoNode n;
      n.phrase = phrases[pi];
      n.query = match.assignment[pi];
      n.box = preds.boxes[n.query];
      n.confidence = confidence[pi];
      label.nodes.push_back(std::move(n));
      node_of_phrase[phrases[pi]] = label.nodes.size() - 1;
      return label.nodes.size() - 1;
    };
    PseudoEdge e;
    e.subject = ensure_node(si->second);
    e.object = ensure_node(oi->second);
    e.predicate = t.relation;
    e.source = t;
    if (e.subject == e.object) continue;
    label.edges.push_back(std::move(e));
  }
  return label;
}

}  // namespace ovsg
