// ovsg: data generation, split building, caption pretraining, distillation
// fine-tuning, and SGDET evaluation from a single JSON config with
// dotted-path command-line overrides.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "ovsg/benchmark.hpp"
#include "ovsg/concept_space.hpp"
#include "ovsg/core_types.hpp"
#include "ovsg/sg_model.hpp"
#include "ovsg/trainer.hpp"
#include "ovsg/weak_supervision.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace ovsg;

namespace {

const std::map<std::string, std::set<std::string>> kKnownKeys = {
    {"", {"seed", "out_dir", "embeddings", "gen", "split", "model", "train",
          "pretrain", "finetune", "eval", "parse"}},
    {"gen", {"scenes", "objects", "relations", "min_nodes", "max_nodes", "noise",
             "grid", "feature_dim", "embed_dim", "non_overlapping", "captions"}},
    {"split", {"dataset", "setting", "base_object_fraction", "novel_relation_count"}},
    {"model", {"queries", "relation_queries", "d", "d_e", "d_h", "decoder_layers",
               "top_n_detections", "feature_dim"}},
    {"train", {"lambda", "focal_alpha", "focal_gamma", "box_l1_weight",
               "box_giou_weight", "node_focal_weight", "negative_cap_ratio", "lr",
               "lr_final_ratio", "momentum", "grad_clip", "steps", "batch_size",
               "box_warmup_steps", "box_warmup_lr", "node_warmup_steps",
               "log_every", "seed"}},
    {"pretrain", {"dataset", "threshold", "rules"}},
    {"finetune", {"dataset", "teacher"}},
    {"eval", {"dataset", "checkpoint", "graph_constraint", "iou_threshold", "slice"}},
    {"parse", {"dataset", "rules", "text"}},
};

void reject_unknown_keys(const json& cfg) {
  for (auto it = cfg.begin(); it != cfg.end(); ++it) {
    if (!kKnownKeys.at("").count(it.key()))
      throw std::invalid_argument("unknown config key: " + it.key());
    if (it->is_object()) {
      const auto& allowed = kKnownKeys.at(it.key());
      for (auto sub = it->begin(); sub != it->end(); ++sub)
        if (!allowed.count(sub.key()))
          throw std::invalid_argument("unknown config key: " + it.key() + "." +
                                      sub.key());
    }
  }
}

json load_config(const std::string& path, const std::vector<std::string>& extras) {
  json cfg = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("config file not found: " + path);
    in >> cfg;
  }
  // dotted-path overrides: --train.lambda 0.1
  for (std::size_t i = 0; i < extras.size(); ++i) {
    std::string key = extras[i];
    if (key.rfind("--", 0) != 0)
      throw std::invalid_argument("unexpected argument: " + key);
    key = key.substr(2);
    if (i + 1 >= extras.size())
      throw std::invalid_argument("missing value for override --" + key);
    const std::string raw = extras[++i];
    json value;
    try {
      value = json::parse(raw);
    } catch (...) {
      value = raw;  // bare strings
    }
    json* slot = &cfg;
    std::size_t pos = 0;
    while (true) {
      const std::size_t dot = key.find('.', pos);
      const std::string part = key.substr(pos, dot - pos);
      if (dot == std::string::npos) {
        (*slot)[part] = value;
        break;
      }
      slot = &(*slot)[part];
      pos = dot + 1;
    }
  }
  if (const char* env_seed = std::getenv("OVSG_SEED"))
    cfg["seed"] = std::stoull(env_seed);
  reject_unknown_keys(cfg);
  return cfg;
}

std::uint64_t config_seed(const json& cfg) { return cfg.value("seed", 0ull); }

ModelConfig model_config(const json& cfg) {
  ModelConfig m;
  const json j = cfg.value("model", json::object());
  m.num_queries = j.value("queries", m.num_queries);
  m.num_relation_queries = j.value("relation_queries", m.num_relation_queries);
  m.d = j.value("d", m.d);
  m.d_e = j.value("d_e", m.d_e);
  m.d_h = j.value("d_h", m.d_h);
  m.decoder_layers = j.value("decoder_layers", m.decoder_layers);
  m.top_n_detections = j.value("top_n_detections", m.top_n_detections);
  m.feature_dim = j.value("feature_dim", m.feature_dim);
  m.validate();
  return m;
}

TrainConfig train_config(const json& cfg) {
  TrainConfig t;
  const json j = cfg.value("train", json::object());
  t.lambda = j.value("lambda", t.lambda);
  t.focal_alpha = j.value("focal_alpha", t.focal_alpha);
  t.focal_gamma = j.value("focal_gamma", t.focal_gamma);
  t.box_l1_weight = j.value("box_l1_weight", t.box_l1_weight);
  t.box_giou_weight = j.value("box_giou_weight", t.box_giou_weight);
  t.node_focal_weight = j.value("node_focal_weight", t.node_focal_weight);
  t.negative_cap_ratio = j.value("negative_cap_ratio", t.negative_cap_ratio);
  t.lr = j.value("lr", t.lr);
  t.lr_final_ratio = j.value("lr_final_ratio", t.lr_final_ratio);
  t.momentum = j.value("momentum", t.momentum);
  t.grad_clip = j.value("grad_clip", t.grad_clip);
  t.steps = j.value("steps", t.steps);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.box_warmup_steps = j.value("box_warmup_steps", t.box_warmup_steps);
  t.box_warmup_lr = j.value("box_warmup_lr", t.box_warmup_lr);
  t.node_warmup_steps = j.value("node_warmup_steps", t.node_warmup_steps);
  t.log_every = j.value("log_every", t.log_every);
  t.seed = j.value("seed", config_seed(cfg));
  t.validate();
  return t;
}

std::string out_dir(const json& cfg) {
  const std::string dir = cfg.value("out_dir", "out");
  fs::create_directories(dir);
  return dir;
}

ConceptTable build_concepts(const json& cfg, const Vocabulary& vocab,
                            std::size_t dim) {
  if (cfg.contains("embeddings")) {
    std::vector<std::string> names = vocab.object_names;
    for (const auto& r : vocab.relation_names)
      if (std::find(names.begin(), names.end(), r) == names.end())
        names.push_back(r);
    try {
      return embed_concepts_file(names, cfg.at("embeddings"));
    } catch (const std::exception& e) {
      throw std::invalid_argument(std::string("embedding file mismatch: ") + e.what());
    }
  }
  return concepts_for(vocab, dim);
}

void save_model_checkpoint(const nn::ParamStore& params, const std::string& dir,
                           const json& cfg, const Vocabulary& vocab,
                           const std::string& stage,
                           const std::vector<std::string>& pretrain_relations = {}) {
  json meta{{"stage", stage},
            {"model", cfg.value("model", json::object())},
            {"objects", vocab.object_names},
            {"relations", vocab.relation_names}};
  if (!pretrain_relations.empty()) meta["pretrain_relations"] = pretrain_relations;
  nn::save_checkpoint(params, dir, meta.dump());
}

int cmd_gen(const json& cfg) {
  GenSpec spec;
  const json j = cfg.value("gen", json::object());
  spec.scenes = j.value("scenes", spec.scenes);
  spec.num_objects = j.value("objects", spec.num_objects);
  spec.num_relations = j.value("relations", spec.num_relations);
  spec.min_nodes = j.value("min_nodes", spec.min_nodes);
  spec.max_nodes = j.value("max_nodes", spec.max_nodes);
  spec.noise = j.value("noise", spec.noise);
  spec.grid = j.value("grid", spec.grid);
  spec.feature_dim = j.value("feature_dim", spec.feature_dim);
  spec.embed_dim = j.value("embed_dim", spec.embed_dim);
  spec.non_overlapping = j.value("non_overlapping", spec.non_overlapping);
  spec.captions = j.value("captions", spec.captions);
  spec.seed = config_seed(cfg);
  const std::string dir = out_dir(cfg);
  Dataset ds = generate_synthetic_dataset(spec, dir);
  save_dataset(ds, dir + "/dataset.json");
  // schema round-trip check before declaring success
  load_dataset(dir + "/dataset.json");
  std::cerr << "generated " << ds.records.size() << " scenes in " << dir << "\n";
  return 0;
}

int cmd_split(const json& cfg) {
  const json j = cfg.value("split", json::object());
  const std::string ds_path = j.at("dataset");
  Dataset ds = load_dataset(ds_path);
  SplitSpec spec;
  spec.setting = setting_from_name(j.value("setting", "closed"));
  spec.base_object_fraction = j.value("base_object_fraction", spec.base_object_fraction);
  spec.novel_relation_count = j.value("novel_relation_count", spec.novel_relation_count);
  spec.selection_seed = config_seed(cfg);
  SplitResult split = build_split(ds, spec);
  const std::string dir = out_dir(cfg);
  // re-anchor feature references to the split directory
  auto reanchor = [&](Dataset& d) {
    for (auto& rec : d.records)
      rec.features =
          fs::relative(fs::path(ds.base_dir) / rec.features, dir).string();
    d.base_dir = dir;
  };
  reanchor(split.train);
  reanchor(split.eval);
  save_dataset(split.train, dir + "/train_dataset.json");
  save_dataset(split.eval, dir + "/eval_dataset.json");
  save_split_manifest(split, spec, dir + "/split_manifest.json");
  std::cerr << "split " << setting_name(spec.setting) << ": "
            << split.train.records.size() << " train / " << split.eval.records.size()
            << " eval images\n";
  return 0;
}

int cmd_pretrain(const json& cfg) {
  const json j = cfg.value("pretrain", json::object());
  Dataset ds = load_dataset(j.at("dataset"));
  const ModelConfig mcfg = model_config(cfg);
  TrainConfig tcfg = train_config(cfg);
  const double threshold = j.value("threshold", 0.25);
  ConceptTable concepts = build_concepts(cfg, ds.vocabulary, mcfg.d);

  nn::ParamStore params;
  init_model_params(params, mcfg, config_seed(cfg));

  if (tcfg.node_warmup_steps > 0) {
    TrainConfig warm = tcfg;
    warm.steps = tcfg.node_warmup_steps;
    std::cerr << "node warmup: " << warm.steps << " steps\n";
    train_supervised(params, nullptr, ds, concepts, mcfg, warm, &std::cout,
                     /*nodes_only=*/true);
  }
  ParserRules rules = j.contains("rules")
                          ? ParserRules::load(j.at("rules"))
                          : ParserRules::from_vocabulary(ds.vocabulary);
  if (j.contains("rules")) {
    // rule-table files carry grammar only; the lexicon comes from the data
    rules.nouns = ds.vocabulary.object_names;
    rules.relations = ds.vocabulary.relation_names;
  }
  std::cerr << "caption pretraining: " << tcfg.steps << " steps\n";
  PretrainResult res = pretrain_relations_from_captions(params, ds, rules, mcfg,
                                                        tcfg, threshold, &std::cout);
  const std::string dir = out_dir(cfg);
  save_model_checkpoint(params, dir + "/teacher", cfg, ds.vocabulary, "pretrain",
                        res.relation_vocabulary);
  std::cerr << "pretrained on " << res.pseudo_edges << " pseudo edges covering "
            << res.relation_vocabulary.size() << " predicates; final rel_bce "
            << res.train.last.rel_bce << "\n";
  return 0;
}

int cmd_finetune(const json& cfg) {
  const json j = cfg.value("finetune", json::object());
  Dataset ds = load_dataset(j.at("dataset"));
  const ModelConfig mcfg = model_config(cfg);
  TrainConfig tcfg = train_config(cfg);
  ConceptTable concepts = build_concepts(cfg, ds.vocabulary, mcfg.d);

  nn::ParamStore params;
  init_model_params(params, mcfg, config_seed(cfg));
  nn::ParamStore teacher;
  const bool has_teacher = j.contains("teacher");
  if (tcfg.lambda > 0.0 && !has_teacher)
    throw std::invalid_argument("distillation weight > 0 requires finetune.teacher");
  if (has_teacher) {
    init_model_params(teacher, mcfg, config_seed(cfg));
    nn::load_checkpoint(teacher, j.at("teacher").get<std::string>());
    // student starts from the teacher
    nn::load_checkpoint(params, j.at("teacher").get<std::string>());
  }
  TrainResult res = train_supervised(params, has_teacher ? &teacher : nullptr, ds,
                                     concepts, mcfg, tcfg, &std::cout);
  const std::string dir = out_dir(cfg);
  save_model_checkpoint(params, dir + "/student", cfg, ds.vocabulary, "finetune");
  std::cerr << "finetune done after " << res.steps_run << " steps; final total "
            << res.last.total << "\n";
  return 0;
}

void write_recall_plot(const EvalReport& report, const std::string& path) {
  const auto& sr = report.slices.at("all");
  std::ofstream out(path);
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='320' height='240'>\n"
      << "<rect width='320' height='240' fill='white'/>\n"
      << "<line x1='40' y1='200' x2='300' y2='200' stroke='black'/>\n"
      << "<line x1='40' y1='20' x2='40' y2='200' stroke='black'/>\n";
  std::string points;
  for (int K : kRecallKs) {
    const double x = 40.0 + 260.0 * K / 100.0;
    const double y = 200.0 - 180.0 * sr.recall_at.at(K);
    points += std::to_string(x) + "," + std::to_string(y) + " ";
    out << "<text x='" << x - 10 << "' y='215' font-size='10'>R@" << K
        << "</text>\n";
  }
  out << "<polyline points='" << points
      << "' fill='none' stroke='steelblue' stroke-width='2'/>\n</svg>\n";
}

int cmd_eval(const json& cfg) {
  const json j = cfg.value("eval", json::object());
  Dataset ds = load_dataset(j.at("dataset"));
  const ModelConfig mcfg = model_config(cfg);
  ConceptTable concepts = build_concepts(cfg, ds.vocabulary, mcfg.d);

  nn::ParamStore params;
  init_model_params(params, mcfg, config_seed(cfg));
  nn::load_checkpoint(params, j.at("checkpoint").get<std::string>());

  const bool graph_constraint = j.value("graph_constraint", true);
  const double iou_thr = j.value("iou_threshold", 0.5);
  auto preds = predict_dataset(params, ds, concepts, mcfg, graph_constraint);
  const std::string dir = out_dir(cfg);
  write_prediction_dump(preds, dir + "/predictions.jsonl", graph_constraint);
  EvalReport report = evaluate_sgdet(preds, ds, iou_thr, graph_constraint);
  save_eval_report(report, dir + "/eval_report.json");
  save_eval_report_csv(report, dir + "/per_image_recall.csv");
  write_recall_plot(report, dir + "/recall_vs_k.svg");

  const std::string slice = j.value("slice", "all");
  const auto it = report.slices.find(slice);
  if (it == report.slices.end()) throw std::invalid_argument("unknown slice: " + slice);
  if (it->second.gt_triplets == 0) {
    std::cerr << "warning: slice '" << slice
              << "' has no ground-truth triplets; recall not applicable\n";
  } else {
    for (int K : kRecallKs)
      std::cerr << slice << " recall@" << K << " = " << it->second.recall_at.at(K)
                << "\n";
  }
  return 0;
}

int cmd_parse_captions(const json& cfg) {
  const json j = cfg.value("parse", json::object());
  ParserRules rules;
  if (j.contains("dataset")) {
    Dataset ds = load_dataset(j.at("dataset"));
    rules = ParserRules::from_vocabulary(ds.vocabulary);
    if (j.contains("rules")) {
      ParserRules table = ParserRules::load(j.at("rules"));
      rules.determiners = table.determiners;
      rules.adjectives = table.adjectives;
      rules.prepositions = table.prepositions;
      rules.version = table.version;
    }
    if (j.contains("text")) {
      for (const auto& t : parse_caption(j.at("text"), rules))
        std::cout << json{{"subject", t.subject},
                          {"relation", t.relation},
                          {"object", t.object}}
                         .dump()
                  << "\n";
      return 0;
    }
    for (const auto& rec : ds.records) {
      if (!rec.caption) continue;
      json out{{"image_id", rec.image_id}, {"triplets", json::array()}};
      for (const auto& t : parse_caption(*rec.caption, rules))
        out["triplets"].push_back({{"subject", t.subject},
                                   {"relation", t.relation},
                                   {"object", t.object}});
      std::cout << out.dump() << "\n";
    }
    return 0;
  }
  throw std::invalid_argument("parse-captions requires parse.dataset");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"open-vocabulary scene-graph engine"};
  app.require_subcommand(1);
  std::string config_path;

  struct Cmd {
    std::string name, desc;
    int (*run)(const json&);
  };
  const std::vector<Cmd> cmds = {
      {"gen", "generate a synthetic dataset", cmd_gen},
      {"split", "build train/eval splits for a setting", cmd_split},
      {"pretrain", "caption-driven relation pretraining", cmd_pretrain},
      {"finetune", "supervised fine-tuning with optional distillation", cmd_finetune},
      {"eval", "SGDET Recall@K evaluation", cmd_eval},
      {"parse-captions", "run the caption parser over a corpus", cmd_parse_captions},
  };
  std::map<std::string, int (*)(const json&)> dispatch;
  for (const auto& c : cmds) {
    auto* sub = app.add_subcommand(c.name, c.desc);
    sub->add_option("--config", config_path, "JSON config file");
    sub->allow_extras();
    dispatch[c.name] = c.run;
  }
  CLI11_PARSE(app, argc, argv);

  auto* sub = app.get_subcommands().front();
  try {
    const json cfg = load_config(config_path, sub->remaining());
    return dispatch.at(sub->get_name())(cfg);
  } catch (const std::invalid_argument& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
