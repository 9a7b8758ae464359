#include "vlu/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <toml.hpp>

#include "vlu/errors.hpp"
#include "vlu/harness.hpp"
#include "vlu/util.hpp"

namespace vlu {

using nlohmann::json;

namespace {

json toml_to_json(const toml::node& node) {
  if (const auto* t = node.as_table()) {
    json obj = json::object();
    for (const auto& [k, v] : *t) obj[std::string(k.str())] = toml_to_json(v);
    return obj;
  }
  if (const auto* a = node.as_array()) {
    json arr = json::array();
    for (const auto& v : *a) arr.push_back(toml_to_json(v));
    return arr;
  }
  if (const auto* s = node.as_string()) return s->get();
  if (const auto* i = node.as_integer()) return i->get();
  if (const auto* f = node.as_floating_point()) return f->get();
  if (const auto* b = node.as_boolean()) return b->get();
  throw ConfigError("dates and times are not valid config values");
}

// Reads keys of one object and rejects the ones nobody asked for.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError(name_ + " must be a table");
  }

  template <class T>
  bool get(const char* key, T& out) {
    if (!j_.contains(key)) return false;
    used_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(name_ + "." + key + " has the wrong type");
    }
    return true;
  }

  bool get_seed(const char* key, std::uint64_t& out) {
    if (!j_.contains(key)) return false;
    used_.insert(key);
    if (!j_.at(key).is_number_integer() || (j_.at(key).is_number_integer() && !j_.at(key).is_number_unsigned() &&
                                            j_.at(key).get<long long>() < 0)) {
      throw ConfigError(name_ + "." + key + " must be a non-negative integer");
    }
    out = j_.at(key).get<std::uint64_t>();
    return true;
  }

  const json* sub(const char* key) {
    if (!j_.contains(key)) return nullptr;
    used_.insert(key);
    return &j_.at(key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!used_.contains(k)) throw ConfigError("unknown config key " + name_ + "." + k);
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> used_;
};

json axes_json(const std::vector<Axis>& axes) {
  json a = json::array();
  for (Axis x : axes) a.push_back(std::string(to_string(x)));
  return a;
}

std::vector<Axis> parse_axes(const std::vector<std::string>& names) {
  std::vector<Axis> axes;
  for (const auto& n : names) axes.push_back(parse_axis(n));
  return axes;
}

void read_backend(const json& j, const char* name, BackendConfig& b) {
  Section s(j, name);
  s.get("url", b.url);
  s.get("model", b.model);
  s.get("profile", b.profile);
  s.finish();
}

void read_visual(const json& j, VisualSchedule& v) {
  Section s(j, "visual");
  std::string name;
  if (s.get("preset", name)) v = VisualSchedule::preset(name);
  if (s.get("kind", name)) {
    const VisualKind kind = parse_visual_kind(name);
    if (kind != v.kind && kind != VisualKind::composite) v = VisualSchedule::preset(name);
    v.kind = kind;
  }
  s.get("degrees", v.degrees);
  std::vector<std::string> axes;
  if (s.get("axes", axes)) v.axes = parse_axes(axes);
  if (const json* stages = s.sub("stages")) {
    if (!stages->is_array()) throw ConfigError("visual.stages must be an array of tables");
    v.stages.clear();
    for (const auto& st : *stages) {
      Section ss(st, "visual.stages");
      VisualStage stage;
      if (!ss.get("kind", name)) throw ConfigError("visual.stages entries need a kind");
      stage.kind = parse_visual_kind(name);
      ss.get("degrees", stage.degrees);
      std::vector<std::string> stage_axes;
      if (ss.get("axes", stage_axes)) stage.axes = parse_axes(stage_axes);
      ss.finish();
      v.stages.push_back(std::move(stage));
    }
  }
  s.finish();
}

void read_textual(const json& j, TextualSchedule& t, const std::filesystem::path& base_dir) {
  Section s(j, "textual");
  std::string name;
  RephraseInstruction instruction = t.instruction;
  if (s.get("preset", name)) t = TextualSchedule::preset(parse_textual_kind(name));
  if (s.get("kind", name)) {
    const TextualKind kind = parse_textual_kind(name);
    if (kind != t.kind) t = TextualSchedule::preset(kind);
  }
  t.instruction = instruction;
  s.get("degrees", t.degrees);
  if (s.get("instruction_preset", name)) t.instruction = RephraseInstruction::preset(name);
  if (s.get("instruction_file", name)) {
    std::filesystem::path p(name);
    if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
    t.instruction = RephraseInstruction::load(p);
  }
  s.get("instruction", t.instruction.text);
  s.finish();
}

}  // namespace

Config::Config() : judge_template(kJudgeTemplate) {}

PipelineSettings Config::settings() const {
  PipelineSettings s = pipeline;
  s.visual.seed = seed;
  s.textual.seed = seed;
  return s;
}

BackendConfig Config::helper_backend() const {
  BackendConfig h = helper;
  if (h.url.empty()) {
    h.url = target.url;
    if (h.api_key.empty()) h.api_key = target.api_key;
  }
  return h;
}

void Config::validate() const {
  settings().validate();
  if (target.model.empty()) throw ConfigError("target.model must be set");
  if (target.url.empty()) throw ConfigError("target.url must be set");
  resolve_profile(target.profile, target.model);
  resolve_profile(helper.profile, helper.model);
  const bool needs_helper = pipeline.textual.kind == TextualKind::llm_rephrase || oracle == "llm";
  if (needs_helper && helper.model.empty()) throw ConfigError("helper.model must be set");
  if (oracle != "llm" && oracle != "exact") throw ConfigError("oracle.kind must be \"llm\" or \"exact\"");
  if (judge_template.find("{answer}") == std::string::npos) throw ConfigError("judge.template lacks {answer}");
  for (const auto* t : {&entailment_template, &entailment_template_no_context}) {
    if (t->find("{a}") == std::string::npos || t->find("{b}") == std::string::npos) {
      throw ConfigError("entailment templates need {a} and {b}");
    }
  }
  if (runtime.workers < 1) throw ConfigError("workers must be at least 1");
  if (runtime.max_in_flight < 1 || runtime.max_in_flight > 1024) throw ConfigError("max_in_flight must be in 1..1024");
  if (runtime.max_attempts < 1) throw ConfigError("max_attempts must be at least 1");
  if (runtime.backoff_ms < 0) throw ConfigError("backoff_ms must be non-negative");
}

json Config::to_json() const {
  const PipelineSettings& p = pipeline;
  json stages = json::array();
  for (const auto& st : p.visual.stages) {
    stages.push_back({{"kind", std::string(vlu::to_string(st.kind))}, {"degrees", st.degrees}, {"axes", axes_json(st.axes)}});
  }
  return {
      {"target", {{"url", target.url}, {"model", target.model}, {"profile", target.profile}}},
      {"helper", {{"url", helper.url}, {"model", helper.model}, {"profile", helper.profile}}},
      {"pipeline",
       {{"n", p.n},
        {"initial_temperature", p.initial_temperature},
        {"sample_temperature", p.sample_temperature},
        {"threshold", p.threshold},
        {"pairing", p.pairing.to_string()},
        {"include_initial", p.include_initial},
        {"seed", seed}}},
      {"visual",
       {{"kind", std::string(vlu::to_string(p.visual.kind))},
        {"degrees", p.visual.degrees},
        {"axes", axes_json(p.visual.axes)},
        {"stages", std::move(stages)}}},
      {"textual",
       {{"kind", std::string(vlu::to_string(p.textual.kind))},
        {"degrees", p.textual.degrees},
        {"instruction", p.textual.instruction.text}}},
      {"oracle",
       {{"kind", oracle},
        {"question_context", question_context},
        {"template", entailment_template},
        {"template_no_context", entailment_template_no_context}}},
      {"judge", {{"template", judge_template}, {"concise_free_form", concise_free_form}}},
  };
}

Config Config::from_json(const json& j, const std::filesystem::path& base_dir) {
  Config c;
  Section top(j, "config");
  if (const json* t = top.sub("target")) read_backend(*t, "target", c.target);
  if (const json* h = top.sub("helper")) read_backend(*h, "helper", c.helper);
  if (const json* pj = top.sub("pipeline")) {
    Section s(*pj, "pipeline");
    s.get("n", c.pipeline.n);
    s.get("initial_temperature", c.pipeline.initial_temperature);
    s.get("sample_temperature", c.pipeline.sample_temperature);
    s.get("threshold", c.pipeline.threshold);
    std::string pairing;
    if (s.get("pairing", pairing)) c.pipeline.pairing = PairingPolicy::parse(pairing);
    s.get("include_initial", c.pipeline.include_initial);
    s.get_seed("seed", c.seed);
    s.finish();
  }
  if (const json* v = top.sub("visual")) read_visual(*v, c.pipeline.visual);
  if (const json* t = top.sub("textual")) read_textual(*t, c.pipeline.textual, base_dir);
  if (const json* o = top.sub("oracle")) {
    Section s(*o, "oracle");
    s.get("kind", c.oracle);
    s.get("question_context", c.question_context);
    s.get("template", c.entailment_template);
    s.get("template_no_context", c.entailment_template_no_context);
    s.finish();
  }
  if (const json* jd = top.sub("judge")) {
    Section s(*jd, "judge");
    s.get("template", c.judge_template);
    s.get("concise_free_form", c.concise_free_form);
    s.finish();
  }
  if (const json* r = top.sub("runtime")) {
    Section s(*r, "runtime");
    std::string dir;
    if (s.get("cache_dir", dir)) c.runtime.cache_dir = dir;
    if (s.get("dump_dir", dir)) c.runtime.dump_dir = dir;
    s.get("workers", c.runtime.workers);
    s.get("max_in_flight", c.runtime.max_in_flight);
    s.get("max_attempts", c.runtime.max_attempts);
    s.get("backoff_ms", c.runtime.backoff_ms);
    s.finish();
  }
  top.finish();
  return c;
}

Config Config::parse_toml(std::string_view text, const std::filesystem::path& base_dir) {
  toml::table table;
  try {
    table = toml::parse(text);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "TOML parse error at line " << e.source().begin.line << ": " << e.description();
    throw ConfigError(msg.str());
  }
  return from_json(toml_to_json(table), base_dir);
}

Config Config::load(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    throw ConfigError(std::string("cannot read config: ") + e.what());
  }
  const auto ext = path.extension().string();
  const auto base = path.parent_path();
  if (ext == ".json" || ext == ".jsonl") {
    json j;
    try {
      j = ext == ".json" ? json::parse(text) : json::parse(text.substr(0, text.find('\n')));
    } catch (const json::exception& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
    if (ext == ".jsonl") {
      if (!j.contains("manifest") || !j["manifest"].contains("config")) {
        throw ConfigError(path.string() + " does not start with a manifest");
      }
      return from_json(j["manifest"]["config"], base);
    }
    return from_json(j, base);
  }
  return parse_toml(text, base);
}

void Config::apply_environment() {
  auto env = [](const char* name) -> std::string {
    const char* v = std::getenv(name);
    return v ? std::string(v) : std::string();
  };
  if (target.url.empty()) target.url = env("VLU_BASE_URL");
  if (target.url.empty()) target.url = "http://localhost:8000";
  const std::string key = env("VLU_API_KEY");
  if (target.api_key.empty()) target.api_key = key;
  if (helper.api_key.empty()) helper.api_key = key;
  if (!runtime.cache_dir) {
    const std::string dir = env("VLU_CACHE_DIR");
    if (!dir.empty()) runtime.cache_dir = dir;
  }
}

void set_blur_radii(Config& cfg, const std::vector<double>& radii) {
  cfg.pipeline.visual = VisualSchedule{.kind = VisualKind::blur, .degrees = radii};
}

void set_rephrase_temperatures(Config& cfg, const std::vector<double>& temps) {
  const RephraseInstruction instruction = cfg.pipeline.textual.instruction;
  cfg.pipeline.textual = TextualSchedule{.kind = TextualKind::llm_rephrase, .degrees = temps};
  cfg.pipeline.textual.instruction = instruction;
}

RephraseInstruction resolve_instruction(std::string_view preset_or_path) {
  const std::filesystem::path p(preset_or_path);
  std::error_code ec;
  if (std::filesystem::is_regular_file(p, ec)) return RephraseInstruction::load(p);
  try {
    return RephraseInstruction::preset(preset_or_path);
  } catch (const ConfigError&) {
    throw ConfigError("rephrase instruction '" + std::string(preset_or_path) +
                      "' is neither a file nor a preset (default, plain, altering, rewrite, modify, "
                      "semantic_equivalent)");
  }
}

}  // namespace vlu
