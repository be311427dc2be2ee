#include "cull/pipeline/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "cull/data/vocab.hpp"
#include "cull/error.hpp"

namespace cull {

using Json = nlohmann::ordered_json;

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::Cull: return "cull";
    case Strategy::TopN: return "topn";
    case Strategy::Blockwise: return "blockwise";
  }
  return "?";
}

Strategy parse_strategy(const std::string& s) {
  if (s == "cull") return Strategy::Cull;
  if (s == "topn") return Strategy::TopN;
  if (s == "blockwise") return Strategy::Blockwise;
  throw ConfigError("unknown strategy '" + s + "' (expected cull, topn or blockwise)");
}

namespace {

// Reads fields of one JSON object and rejects keys nobody asked for.
class Fields {
 public:
  Fields(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw ConfigError(where_ + ": expected an object");
  }
  ~Fields() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(where_ + ": unknown key '" + key + "'");
    }
  }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(where_ + "." + key + ": wrong type");
    }
  }
  const Json* sub(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

std::set<Section> parse_sections(const std::vector<std::string>& names) {
  std::set<Section> out;
  for (const auto& n : names) out.insert(parse_section(n));
  return out;
}

std::vector<std::string> section_names(const std::set<Section>& s) {
  std::vector<std::string> out;
  for (Section x : s) out.push_back(to_string(x));
  return out;
}

Json model_to_json(const ModelConfig& m) {
  Json j;
  j["arch"] = to_string(m.arch);
  j["d_model"] = m.d_model;
  j["heads"] = m.heads;
  j["d_ffn"] = m.d_ffn;
  j["encoder_layers"] = m.n_encoder_layers;
  j["decoder_layers"] = m.n_decoder_layers;
  j["vocab_size"] = m.vocab_size;
  j["max_len"] = m.max_len;
  j["seed"] = m.seed;
  return j;
}

Json data_to_json(const PipelineConfig& c) {
  Json j;
  j["languages"] = c.data.languages;
  j["content_words"] = c.data.content_words;
  j["min_len"] = c.data.length.min;
  j["max_len"] = c.data.length.max;
  j["train"] = c.data.sizes.train;
  j["dev"] = c.data.sizes.dev;
  j["test"] = c.data.sizes.test;
  return j;
}

Json directions_to_json(const PipelineConfig& c) {
  Json arr = Json::array();
  for (const auto& d : c.directions) {
    Json j;
    j["src"] = d.src;
    j["tgt"] = d.tgt;
    j["weight"] = d.weight;
    j["train_pairs"] = d.train_pairs;
    j["prune"] = d.prune;
    arr.push_back(j);
  }
  return arr;
}

Json train_to_json(const TrainConfig& t) {
  Json j;
  j["steps"] = t.steps;
  j["learning_rate"] = t.learning_rate;
  j["batch_size"] = t.batch_size;
  j["seed"] = t.seed;
  j["target_spbleu"] = t.target_spbleu;
  j["eval_every"] = t.eval_every;
  j["eval_pairs"] = t.eval_pairs;
  j["label_smoothing"] = t.label_smoothing;
  j["warmup_steps"] = t.warmup_steps;
  j["clip_norm"] = t.clip_norm;
  return j;
}

Json prune_to_json(const PruneSpec& p) {
  Json j;
  j["strategy"] = to_string(p.strategy);
  j["threshold"] = p.threshold;
  j["sections"] = section_names(p.sections);
  j["max_removals"] = p.max_removals ? Json(*p.max_removals) : Json(nullptr);
  j["stop_rule"] = to_string(p.stop_rule);
  j["dev_pairs"] = p.dev_pairs;
  j["horizon"] = p.horizon;
  j["n"] = p.n;
  std::vector<std::string> order;
  for (Section s : p.topn_order) order.push_back(to_string(s));
  j["topn_order"] = order;
  j["block_section"] = to_string(p.block_section);
  return j;
}

Json heal_to_json(const HealSpec& h) {
  Json j;
  j["kd_sentences_per_direction"] = h.plan.kd_sentences_per_direction;
  j["mode"] = to_string(h.plan.mode);
  Json lora;
  lora["rank"] = h.plan.lora.rank;
  lora["alpha"] = h.plan.lora.alpha;
  lora["dropout"] = h.plan.lora.dropout;
  std::vector<std::string> roles;
  for (LinearRole r : h.plan.lora.targets) roles.push_back(to_string(r));
  lora["targets"] = roles;
  j["lora"] = lora;
  j["learning_rate"] = h.plan.optimizer.learning_rate;
  j["steps"] = h.plan.optimizer.steps;
  j["batch_size"] = h.plan.optimizer.batch_size;
  j["seed"] = h.plan.optimizer.seed;
  j["label_smoothing"] = h.plan.label_smoothing;
  j["merge_adapters"] = h.plan.merge_adapters;
  j["kd_sweep"] = h.kd_sweep;
  j["compare_full"] = h.compare_full;
  return j;
}

Json eval_to_json(const EvalSpec& e) {
  Json j;
  j["throughput_prompts"] = e.throughput_prompts;
  j["throughput_max_new"] = e.throughput_max_new;
  j["throughput_repeats"] = e.throughput_repeats;
  return j;
}

}  // namespace

void PipelineConfig::validate() const {
  if (data.languages < 1 || data.languages > 7) throw ConfigError("data.languages must be in [1, 7]");
  if (data.content_words < 16) throw ConfigError("data.content_words must be >= 16");
  if (data.length.min < 1 || data.length.max < data.length.min) throw ConfigError("data: bad length range");
  if (data.sizes.train <= 0 || data.sizes.dev <= 0 || data.sizes.test <= 0) throw ConfigError("data: split sizes must be positive");
  if (directions.empty()) throw ConfigError("directions: none configured");
  std::set<std::string> names;
  bool any_prune = false;
  auto known = [this](const std::string& lang) {
    if (lang == "T") return true;
    for (int i = 1; i <= data.languages; ++i) {
      if (lang == "L" + std::to_string(i)) return true;
    }
    return false;
  };
  for (const auto& d : directions) {
    if (!known(d.src) || !known(d.tgt)) throw ConfigError("directions: unknown language in " + d.src + "-" + d.tgt);
    if (d.src == d.tgt) throw ConfigError("directions: source and target of " + d.src + "-" + d.tgt + " coincide");
    if (!names.insert(d.src + "-" + d.tgt).second) throw ConfigError("directions: duplicate " + d.src + "-" + d.tgt);
    if (d.train_pairs < 0 || d.train_pairs > data.sizes.train) {
      throw ConfigError("directions: train_pairs of " + d.src + "-" + d.tgt + " must be in [0, data.train]");
    }
    if (!(d.weight >= 0)) throw ConfigError("directions: weights must be >= 0");
    any_prune = any_prune || d.prune;
  }
  if (!any_prune) throw ConfigError("directions: no direction selected for pruning");
  model.validate();
  if (model.vocab_size < vocab::min_vocab_size(data.content_words)) {
    throw ConfigError("model.vocab_size " + std::to_string(model.vocab_size) + " is below the " +
                      std::to_string(vocab::min_vocab_size(data.content_words)) + " tokens the data needs");
  }
  const int longest = model.arch == Arch::EncoderDecoder ? data.length.max + 2 : 2 * data.length.max + 3;
  if (longest > model.max_len) {
    throw ConfigError("model.max_len " + std::to_string(model.max_len) + " is below the longest sequence (" +
                      std::to_string(longest) + ")");
  }
  train.validate();
  if (!(prune.threshold >= 0)) throw ConfigError("prune.threshold must be >= 0");
  if (prune.sections.empty()) throw ConfigError("prune.sections: none");
  for (Section s : prune.sections) {
    if (model.layer_count(s) == 0) throw ConfigError("prune.sections: model has no " + to_string(s) + " layers");
  }
  if (prune.dev_pairs < 0 || prune.horizon < 0 || prune.n < 0) throw ConfigError("prune: negative count");
  if (prune.max_removals && *prune.max_removals < 0) throw ConfigError("prune.max_removals must be >= 0");
  heal.plan.validate();
  for (std::size_t i = 0; i < heal.kd_sweep.size(); ++i) {
    if (heal.kd_sweep[i] <= 0 || (i > 0 && heal.kd_sweep[i] < heal.kd_sweep[i - 1])) {
      throw ConfigError("heal.kd_sweep must be positive and ascending");
    }
  }
  if (eval.throughput_prompts < 20 + 3) throw ConfigError("eval.throughput_prompts must be >= 23");
  if (eval.throughput_max_new <= 0 || eval.throughput_max_new > model.max_len) {
    throw ConfigError("eval.throughput_max_new must be in [1, max_len]");
  }
  if (eval.throughput_repeats < 1) throw ConfigError("eval.throughput_repeats must be >= 1");
}

std::vector<Direction> PipelineConfig::all_directions(const LanguageSet& langs) const {
  std::vector<Direction> out;
  for (const auto& d : directions) out.push_back(make_direction(langs, d.src, d.tgt, d.weight));
  return out;
}

std::vector<Direction> PipelineConfig::prune_directions(const LanguageSet& langs) const {
  std::vector<Direction> out;
  for (const auto& d : directions) {
    if (d.prune) out.push_back(make_direction(langs, d.src, d.tgt, d.weight));
  }
  return out;
}

PruneConfig PipelineConfig::prune_config(const LanguageSet& langs) const {
  PruneConfig pc;
  pc.threshold = prune.threshold;
  pc.directions = prune_directions(langs);
  pc.sections = prune.sections;
  pc.max_removals = prune.max_removals;
  pc.stop_rule = prune.stop_rule;
  pc.dev_pairs = prune.dev_pairs;
  return pc;
}

PipelineConfig parse_pipeline_config(const std::string& text) {
  Json root;
  try {
    root = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  PipelineConfig c;
  {
    Fields f(root, "config");
    f.get("seed", c.seed);
    std::string out = c.output_dir.string();
    f.get("output_dir", out);
    c.output_dir = out;
    if (const Json* j = f.sub("data")) {
      Fields d(*j, "data");
      d.get("languages", c.data.languages);
      d.get("content_words", c.data.content_words);
      d.get("min_len", c.data.length.min);
      d.get("max_len", c.data.length.max);
      d.get("train", c.data.sizes.train);
      d.get("dev", c.data.sizes.dev);
      d.get("test", c.data.sizes.test);
    }
    if (const Json* j = f.sub("directions")) {
      if (!j->is_array()) throw ConfigError("directions: expected an array");
      for (std::size_t i = 0; i < j->size(); ++i) {
        Fields d((*j)[i], "directions[" + std::to_string(i) + "]");
        DirectionSpec spec;
        d.get("src", spec.src);
        d.get("tgt", spec.tgt);
        d.get("weight", spec.weight);
        d.get("train_pairs", spec.train_pairs);
        d.get("prune", spec.prune);
        c.directions.push_back(spec);
      }
    }
    if (const Json* j = f.sub("model")) {
      Fields m(*j, "model");
      std::string arch = to_string(c.model.arch);
      m.get("arch", arch);
      c.model.arch = parse_arch(arch);
      if (c.model.arch == Arch::DecoderOnly) c.model = ModelConfig::toy_decoder_only();
      m.get("d_model", c.model.d_model);
      m.get("heads", c.model.heads);
      m.get("d_ffn", c.model.d_ffn);
      m.get("encoder_layers", c.model.n_encoder_layers);
      m.get("decoder_layers", c.model.n_decoder_layers);
      m.get("vocab_size", c.model.vocab_size);
      m.get("max_len", c.model.max_len);
      m.get("seed", c.model.seed);
    }
    if (const Json* j = f.sub("train")) {
      Fields t(*j, "train");
      t.get("steps", c.train.steps);
      t.get("learning_rate", c.train.learning_rate);
      t.get("batch_size", c.train.batch_size);
      t.get("seed", c.train.seed);
      t.get("target_spbleu", c.train.target_spbleu);
      t.get("eval_every", c.train.eval_every);
      t.get("eval_pairs", c.train.eval_pairs);
      t.get("label_smoothing", c.train.label_smoothing);
      t.get("warmup_steps", c.train.warmup_steps);
      t.get("clip_norm", c.train.clip_norm);
    }
    if (c.model.arch == Arch::DecoderOnly) c.prune.sections = {Section::Decoder};
    if (const Json* j = f.sub("prune")) {
      Fields p(*j, "prune");
      std::string strategy = to_string(c.prune.strategy), rule = to_string(c.prune.stop_rule);
      std::string block = to_string(c.prune.block_section);
      std::vector<std::string> sections = section_names(c.prune.sections);
      std::vector<std::string> order;
      for (Section s : c.prune.topn_order) order.push_back(to_string(s));
      p.get("strategy", strategy);
      p.get("threshold", c.prune.threshold);
      p.get("sections", sections);
      if (const Json* mr = p.sub("max_removals"); mr && !mr->is_null()) {
        if (!mr->is_number_integer()) throw ConfigError("prune.max_removals: wrong type");
        c.prune.max_removals = mr->get<int>();
      }
      p.get("stop_rule", rule);
      p.get("dev_pairs", c.prune.dev_pairs);
      p.get("horizon", c.prune.horizon);
      p.get("n", c.prune.n);
      p.get("topn_order", order);
      p.get("block_section", block);
      c.prune.strategy = parse_strategy(strategy);
      c.prune.stop_rule = parse_stop_rule(rule);
      c.prune.sections = parse_sections(sections);
      c.prune.topn_order.clear();
      for (const auto& s : order) c.prune.topn_order.push_back(parse_section(s));
      c.prune.block_section = parse_section(block);
    }
    if (const Json* j = f.sub("heal")) {
      Fields h(*j, "heal");
      auto& plan = c.heal.plan;
      std::string mode = to_string(plan.mode);
      h.get("kd_sentences_per_direction", plan.kd_sentences_per_direction);
      h.get("mode", mode);
      plan.mode = parse_heal_mode(mode);
      if (const Json* lj = h.sub("lora")) {
        Fields l(*lj, "heal.lora");
        l.get("rank", plan.lora.rank);
        l.get("alpha", plan.lora.alpha);
        l.get("dropout", plan.lora.dropout);
        std::vector<std::string> roles;
        for (LinearRole r : plan.lora.targets) roles.push_back(to_string(r));
        l.get("targets", roles);
        plan.lora.targets.clear();
        for (const auto& r : roles) plan.lora.targets.insert(parse_linear_role(r));
      }
      h.get("learning_rate", plan.optimizer.learning_rate);
      h.get("steps", plan.optimizer.steps);
      h.get("batch_size", plan.optimizer.batch_size);
      h.get("seed", plan.optimizer.seed);
      h.get("label_smoothing", plan.label_smoothing);
      h.get("merge_adapters", plan.merge_adapters);
      h.get("kd_sweep", c.heal.kd_sweep);
      h.get("compare_full", c.heal.compare_full);
    }
    if (const Json* j = f.sub("eval")) {
      Fields e(*j, "eval");
      e.get("throughput_prompts", c.eval.throughput_prompts);
      e.get("throughput_max_new", c.eval.throughput_max_new);
      e.get("throughput_repeats", c.eval.throughput_repeats);
    }
  }
  c.validate();
  return c;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_pipeline_config(buf.str());
}

std::string data_json(const PipelineConfig& c) {
  Json j;
  j["seed"] = c.seed;
  j["data"] = data_to_json(c);
  j["directions"] = directions_to_json(c);
  return j.dump();
}

std::string train_json(const PipelineConfig& c) {
  Json j;
  j["model"] = model_to_json(c.model);
  j["train"] = train_to_json(c.train);
  return j.dump();
}

std::string prune_json(const PipelineConfig& c) { return prune_to_json(c.prune).dump(); }
std::string heal_json(const PipelineConfig& c) { return heal_to_json(c.heal).dump(); }
std::string eval_json(const PipelineConfig& c) { return eval_to_json(c.eval).dump(); }

std::string to_json(const PipelineConfig& c) {
  Json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir.string();
  j["data"] = data_to_json(c);
  j["directions"] = directions_to_json(c);
  j["model"] = model_to_json(c.model);
  j["train"] = train_to_json(c.train);
  j["prune"] = prune_to_json(c.prune);
  j["heal"] = heal_to_json(c.heal);
  j["eval"] = eval_to_json(c.eval);
  return j.dump(2);
}

}  // namespace cull
