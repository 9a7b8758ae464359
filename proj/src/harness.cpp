#include "vlu/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <condition_variable>
#include <fstream>
#include <mutex>
#include <regex>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "vlu/errors.hpp"
#include "vlu/util.hpp"

namespace vlu {

using nlohmann::json;

const std::string_view kChoicePrompt =
    "This is a single choice question, answer only with choice number in {choice_numbers}.";
const std::string_view kConciseNote = "NOTE: Provide only the final answer. Do not provide unrelated details.";
const std::string_view kJudgeTemplate =
    "You are checking an answer against a reference.\n"
    "Question: {question}\n"
    "Reference answer: {gold}\n"
    "Candidate answer: {answer}\n"
    "Does the candidate answer agree with the reference answer? Respond only with yes or no.";

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::string shortest(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string strip_leading_zeros(std::string digits) {
  const auto nz = digits.find_first_not_of('0');
  return nz == std::string::npos ? "0" : digits.substr(nz);
}

}  // namespace

std::optional<int> strip_choice_markers(std::vector<std::string>& choices) {
  static const std::regex kMarker(R"(^\s*\(?([A-Za-z]|\d{1,2})\s*[.):]\s+(\S.*)$)");
  if (choices.empty()) return std::nullopt;
  std::vector<std::string> markers, rest;
  for (const auto& c : choices) {
    std::smatch m;
    if (!std::regex_match(c, m, kMarker)) return std::nullopt;
    markers.push_back(m[1].str());
    rest.push_back(trim(m[2].str()));
  }
  const bool numeric = std::isdigit(static_cast<unsigned char>(markers[0][0]));
  int first = 0;
  if (numeric) {
    first = std::stoi(markers[0]);
    if (first != 0 && first != 1) return std::nullopt;
  } else if (std::toupper(static_cast<unsigned char>(markers[0][0])) != 'A') {
    return std::nullopt;
  }
  for (std::size_t i = 0; i < markers.size(); ++i) {
    if (numeric) {
      if (!std::isdigit(static_cast<unsigned char>(markers[i][0])) ||
          std::stoi(markers[i]) != first + static_cast<int>(i)) {
        return std::nullopt;
      }
    } else if (markers[i].size() != 1 || std::isdigit(static_cast<unsigned char>(markers[i][0])) ||
               std::toupper(static_cast<unsigned char>(markers[i][0])) != 'A' + static_cast<int>(i)) {
      return std::nullopt;
    }
  }
  choices = std::move(rest);
  return numeric ? std::optional<int>(first) : std::nullopt;
}

std::optional<std::size_t> normalize_gold(std::string_view gold, const std::vector<std::string>& choices,
                                          std::optional<int> marker_base) {
  static const std::regex kLetter(R"(^\(?([A-Za-z])\)?\.?$)");
  static const std::regex kNumber(R"(^\(?(\d{1,6})\)?\.?$)");
  const std::string g = trim(gold);
  if (g.empty()) return std::nullopt;
  std::smatch m;
  auto numeric = [&]() -> std::optional<std::size_t> {
    if (!std::regex_match(g, m, kNumber)) return std::nullopt;
    const long long v = std::stoll(m[1].str()) - marker_base.value_or(0);
    if (v < 0 || v >= static_cast<long long>(choices.size())) return std::nullopt;
    return static_cast<std::size_t>(v);
  };
  if (marker_base) {
    if (auto idx = numeric()) return idx;
  }

  for (std::size_t i = 0; i < choices.size(); ++i) {
    if (lower(trim(choices[i])) == lower(g)) return i;
  }
  if (std::regex_match(g, m, kLetter)) {
    const auto idx = static_cast<std::size_t>(std::toupper(static_cast<unsigned char>(m[1].str()[0])) - 'A');
    if (idx < choices.size()) return idx;
    return std::nullopt;
  }
  return numeric();
}

IngestResult ingest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open dataset " + path.string());
  const auto base = path.parent_path();
  IngestResult out;
  std::unordered_set<std::string> ids;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (trim(text).empty()) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::exception& e) {
      throw SchemaError(line, std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) throw SchemaError(line, "expected a JSON object");

    auto optional_string = [&](const char* key) -> std::string {
      if (!j.contains(key) || j[key].is_null()) return {};
      if (!j[key].is_string()) throw SchemaError(line, std::string(key) + " must be a string");
      return j[key].get<std::string>();
    };

    BenchmarkSample s;
    s.line = line;
    if (!j.contains("id")) throw SchemaError(line, "missing id");
    if (j["id"].is_string()) {
      s.id = j["id"].get<std::string>();
    } else if (j["id"].is_number_integer()) {
      s.id = j["id"].dump();
    } else {
      throw SchemaError(line, "id must be a string or an integer");
    }
    if (s.id.empty()) throw SchemaError(line, "id is empty");

    const std::string image = optional_string("image_path");
    s.question = optional_string("question");
    if (trim(image).empty() || trim(s.question).empty()) {
      out.rejected_lines.push_back(line);
      continue;
    }
    if (!ids.insert(s.id).second) throw SchemaError(line, "duplicate id " + s.id);

    if (j.contains("choices") && !j["choices"].is_null()) {
      if (!j["choices"].is_array()) throw SchemaError(line, "choices must be an array");
      for (const auto& c : j["choices"]) {
        if (!c.is_string()) throw SchemaError(line, "choices must be strings");
        s.choices.push_back(c.get<std::string>());
      }
    }
    const std::string format = optional_string("format");
    if (format.empty()) {
      s.format = s.choices.empty() ? SampleFormat::free_form : SampleFormat::multi_choice;
    } else if (format == "multi_choice" || format == "multi-choice") {
      s.format = SampleFormat::multi_choice;
    } else if (format == "free_form" || format == "free-form") {
      s.format = SampleFormat::free_form;
    } else {
      throw SchemaError(line, "unknown format '" + format + "'");
    }

    if (!j.contains("gold") || j["gold"].is_null()) throw SchemaError(line, "missing gold");
    if (j["gold"].is_string()) {
      s.gold = j["gold"].get<std::string>();
    } else if (j["gold"].is_number_integer()) {
      s.gold = j["gold"].dump();
    } else {
      throw SchemaError(line, "gold must be a string or an integer");
    }

    if (j.contains("concise")) {
      if (!j["concise"].is_boolean()) throw SchemaError(line, "concise must be a boolean");
      s.concise = j["concise"].get<bool>();
    }

    if (s.format == SampleFormat::multi_choice) {
      if (s.choices.empty()) throw SchemaError(line, "multi-choice sample without choices");
      std::optional<int> base;
      if (j.contains("marker_base")) {
        if (!j["marker_base"].is_number_integer() || (j["marker_base"] != 0 && j["marker_base"] != 1)) {
          throw SchemaError(line, "marker_base must be 0 or 1");
        }
        base = j["marker_base"].get<int>();
      }
      const auto stripped = strip_choice_markers(s.choices);
      const auto idx = normalize_gold(s.gold, s.choices, base ? base : stripped);
      if (!idx) throw SchemaError(line, "gold '" + s.gold + "' matches no choice");
      s.gold = std::to_string(*idx);
    }

    std::filesystem::path img(image);
    if (img.is_relative()) img = base / img;
    {
      std::ifstream probe(img, std::ios::binary);
      if (!probe || probe.peek() == std::ifstream::traits_type::eof()) throw MissingImage(line, img.string());
    }
    s.image_path = img;
    out.samples.push_back(std::move(s));
  }
  return out;
}

std::string render_prompt(const BenchmarkSample& sample, bool concise_free_form) {
  return render_prompt(sample, sample.question, concise_free_form);
}

std::string render_prompt(const BenchmarkSample& sample, std::string_view question, bool concise_free_form) {
  std::string prompt(question);
  if (sample.format == SampleFormat::multi_choice) {
    std::string numbers;
    prompt += "\n";
    for (std::size_t i = 0; i < sample.choices.size(); ++i) {
      prompt += std::to_string(i) + ". " + sample.choices[i] + "\n";
      if (i) numbers += ",";
      numbers += std::to_string(i);
    }
    prompt += substitute(kChoicePrompt, "choice_numbers", numbers);
  } else if (sample.concise.value_or(concise_free_form)) {
    prompt += "\n";
    prompt += kConciseNote;
  }
  return prompt;
}

std::optional<std::string> first_standalone_integer(std::string_view text) {
  auto digit = [&](std::size_t i) { return i < text.size() && std::isdigit(static_cast<unsigned char>(text[i])); };
  auto alnum = [&](std::size_t i) { return i < text.size() && std::isalnum(static_cast<unsigned char>(text[i])); };
  std::size_t i = 0;
  while (i < text.size()) {
    if (!digit(i)) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (digit(j)) ++j;
    const bool glued_before = i > 0 && (alnum(i - 1) || (text[i - 1] == '.' && i > 1 && digit(i - 2)));
    const bool glued_after = alnum(j) || (j < text.size() && text[j] == '.' && digit(j + 1));
    if (!glued_before && !glued_after) return std::string(text.substr(i, j - i));
    i = j;
  }
  return std::nullopt;
}

CorrectnessJudge::CorrectnessJudge(std::shared_ptr<ModelClient> client, std::string model_id, GenerationParams params,
                                   std::string prompt_template)
    : client_(std::move(client)),
      model_id_(std::move(model_id)),
      params_(std::move(params)),
      template_(std::move(prompt_template)) {}

std::string CorrectnessJudge::render(std::string_view question, std::string_view gold, std::string_view answer) const {
  return substitute(substitute(substitute(template_, "question", question), "gold", gold), "answer", answer);
}

bool CorrectnessJudge::agrees(std::string_view question, std::string_view gold, std::string_view answer) const {
  ChatRequest req;
  req.model_id = model_id_;
  req.params = params_;
  req.messages.push_back(ChatMessage::text("user", render(question, gold, answer)));
  std::string reply;
  try {
    reply = client_->complete(req, 0).text;
  } catch (const BackendError& e) {
    throw JudgeUnavailable(std::string("judge backend failed: ") + e.what());
  }
  switch (LlmEntailmentOracle::parse_reply(reply)) {
    case Verdict::entails:
      return true;
    case Verdict::not_entails:
      return false;
    case Verdict::indeterminate:
      break;
  }
  throw JudgeUnavailable("judge reply is neither yes nor no: '" + reply + "'");
}

bool judge_correctness(const BenchmarkSample& sample, std::string_view answer, const CorrectnessJudge* judge) {
  if (trim(answer).empty()) return false;
  if (sample.format == SampleFormat::multi_choice) {
    const auto parsed = first_standalone_integer(answer);
    return parsed && strip_leading_zeros(*parsed) == strip_leading_zeros(sample.gold);
  }
  if (judge == nullptr) throw JudgeUnavailable("no judge configured for free-form answers");
  return judge->agrees(sample.question, sample.gold, answer);
}

Runtime make_runtime(const Config& cfg) {
  const ClientOptions co{cfg.runtime.max_attempts, std::chrono::milliseconds(cfg.runtime.backoff_ms),
                         cfg.runtime.max_in_flight};
  std::shared_ptr<ResponseCache> cache;
  if (cfg.runtime.cache_dir) cache = std::make_shared<ResponseCache>(*cfg.runtime.cache_dir);

  auto target_client = std::make_shared<ModelClient>(make_backend(cfg.target.url, cfg.target.api_key), cache, co);
  const BackendConfig h = cfg.helper_backend();
  auto helper_client = (h.url == cfg.target.url && h.api_key == cfg.target.api_key)
                           ? target_client
                           : std::make_shared<ModelClient>(make_backend(h.url, h.api_key), cache, co);
  const std::string helper_profile = resolve_profile(h.profile, h.model);

  Runtime rt;
  PipelineContext& ctx = rt.context;
  ctx.settings = cfg.settings();
  ctx.target = TargetModel{target_client, cfg.target.model,
                           profile_params(resolve_profile(cfg.target.profile, cfg.target.model))};
  ctx.helper = helper_client;
  ctx.rephrase.model_id = h.model;
  ctx.rephrase.params = profile_params(helper_profile);
  ctx.rephrase.params.max_new_tokens = 128;
  ctx.dump_dir = cfg.runtime.dump_dir;
  if (cfg.oracle == "exact") {
    ctx.oracle = std::make_shared<ExactMatchOracle>();
  } else {
    LlmOracleOptions oo;
    oo.model_id = h.model;
    oo.profile = helper_profile;
    oo.use_question_context = cfg.question_context;
    oo.prompt_template = cfg.entailment_template;
    oo.prompt_template_no_context = cfg.entailment_template_no_context;
    ctx.oracle = std::make_shared<LlmEntailmentOracle>(helper_client, oo);
  }
  GenerationParams jp = profile_params(helper_profile);
  jp.temperature = 0.1;
  jp.max_new_tokens = 8;
  rt.judge = std::make_shared<CorrectnessJudge>(helper_client, h.model, jp, cfg.judge_template);
  return rt;
}

std::string manifest_digest(const json& manifest) {
  const json keyed = {{"config", manifest.at("config")},
                      {"dataset_digest", manifest.at("dataset_digest")},
                      {"tool_version", manifest.at("tool_version")}};
  return sha256_hex(keyed.dump());
}

json make_manifest(const Config& cfg, const std::string& dataset_digest) {
  json m = {{"config", cfg.to_json()},
            {"dataset_digest", dataset_digest},
            {"started_at", utc_timestamp()},
            {"tool_version", VLU_VERSION}};
  m["digest"] = manifest_digest(m);
  return m;
}

namespace {

struct Outcome {
  std::string line;
  bool ok = false;
  bool backend_failure = false;
  std::optional<std::string> abort;
};

json skipped_line(const std::string& id, std::string_view reason) {
  return {{"question_id", id}, {"status", "skipped"}, {"reason", std::string(reason)}};
}

Outcome process_sample(const BenchmarkSample& sample, const Runtime& rt, const Config& cfg) {
  Outcome out;
  try {
    const RasterImage image = load_image(sample.image_path);
    const std::string prompt = render_prompt(sample, cfg.concise_free_form);
    const AnswerSample initial =
        initial_answer(image, prompt, rt.context.target, rt.context.settings.initial_temperature);
    const bool correct = judge_correctness(sample, initial.text, rt.judge.get());
    EstimateOptions opts;
    opts.render = [&](std::string_view q) { return render_prompt(sample, q, cfg.concise_free_form); };
    opts.initial = &initial;
    opts.dump_tag = sample.id;
    const UncertaintyEstimate est = estimate_uncertainty(image, sample.question, rt.context, opts);
    const DetectionRecord rec = detect(sample.id, initial, !correct, est, rt.context.settings.threshold);
    out.line = to_json(rec).dump();
    out.ok = true;
  } catch (const AuthError& e) {
    out.abort = e.what();
  } catch (const ImageError& e) {
    out.line = skipped_line(sample.id, e.what()).dump();
  } catch (const BackendError& e) {
    out.line = skipped_line(sample.id, e.what()).dump();
    out.backend_failure = true;
  } catch (const UncertaintyUnavailable& e) {
    out.line = skipped_line(sample.id, e.what()).dump();
    out.backend_failure = true;
  } catch (const JudgeUnavailable& e) {
    out.line = skipped_line(sample.id, e.what()).dump();
    out.backend_failure = true;
  }
  if (!out.abort && !out.ok) log().warn("sample {} skipped: {}", sample.id, out.line);
  return out;
}

// Returns the question ids already present and truncates a torn final line.
std::set<std::string> resume_state(const std::filesystem::path& out, const json& manifest, bool& has_manifest) {
  std::set<std::string> done;
  has_manifest = false;
  std::string data = read_file(out);
  std::size_t good = 0;
  std::size_t pos = 0;
  std::size_t line = 0;
  while (pos < data.size()) {
    const auto nl = data.find('\n', pos);
    if (nl == std::string::npos) break;
    ++line;
    const std::string_view text(data.data() + pos, nl - pos);
    json j;
    try {
      j = json::parse(text);
    } catch (const json::exception&) {
      throw SchemaError(line, "results file is corrupt");
    }
    if (line == 1) {
      if (!j.contains("manifest")) throw ConfigError(out.string() + " is not a results file");
      if (j["manifest"].value("digest", "") != manifest.at("digest")) {
        throw ConfigError(out.string() + " was produced by a different configuration or dataset");
      }
      has_manifest = true;
    } else {
      done.insert(j.at("question_id").get<std::string>());
    }
    pos = nl + 1;
    good = pos;
  }
  if (good != data.size()) std::filesystem::resize_file(out, good);
  return done;
}

}  // namespace

RunSummary run(const std::filesystem::path& dataset, const Config& cfg, const std::filesystem::path& out,
               const RunOptions& options) {
  cfg.validate();
  const IngestResult data = ingest(dataset);
  const json manifest = make_manifest(cfg, sha256_hex(read_file(dataset)));

  RunSummary summary;
  summary.rejected = data.rejected_lines.size();
  std::set<std::string> done;
  bool has_manifest = false;
  if (std::filesystem::exists(out)) done = resume_state(out, manifest, has_manifest);
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  std::ofstream file(out, has_manifest ? std::ios::app | std::ios::binary : std::ios::trunc | std::ios::binary);
  if (!file) throw ConfigError("cannot write " + out.string());
  if (!has_manifest) {
    file << json{{"manifest", manifest}}.dump() << '\n';
    file.flush();
  }

  std::vector<const BenchmarkSample*> pending;
  for (const auto& s : data.samples) {
    if (done.contains(s.id)) {
      ++summary.resumed;
    } else if (pending.size() < options.limit) {
      pending.push_back(&s);
    }
  }
  const std::size_t remaining = data.samples.size() - summary.resumed;

  const Runtime rt = make_runtime(cfg);
  std::vector<std::optional<Outcome>> results(pending.size());
  std::mutex mu;
  std::condition_variable cv;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  {
    std::vector<std::jthread> workers;
    const auto count = std::min<std::size_t>(static_cast<std::size_t>(cfg.runtime.workers), pending.size());
    for (std::size_t w = 0; w < count; ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < pending.size() && !stop; i = next++) {
          Outcome o = process_sample(*pending[i], rt, cfg);
          std::lock_guard lock(mu);
          results[i] = std::move(o);
          cv.notify_all();
        }
      });
    }

    std::size_t backend_failures = 0;
    std::optional<std::string> abort;
    for (std::size_t i = 0; i < pending.size(); ++i) {
      std::unique_lock lock(mu);
      cv.wait(lock, [&] { return results[i].has_value(); });
      Outcome o = std::move(*results[i]);
      lock.unlock();
      if (o.abort) {
        abort = o.abort;
        stop = true;
        break;
      }
      file << o.line << '\n';
      file.flush();
      if (o.ok) {
        ++summary.written;
      } else {
        ++summary.skipped;
        if (o.backend_failure) ++backend_failures;
      }
    }
    if (abort) {
      for (auto& w : workers) w.join();
      throw AuthError(*abort);
    }
    summary.complete = pending.size() == remaining;
    if (summary.written == 0 && summary.resumed == 0 && backend_failures > 0 && backend_failures == summary.skipped) {
      throw BackendUnavailable("no sample could be evaluated; the backend failed for all " +
                               std::to_string(backend_failures) + " samples");
    }
  }
  return summary;
}

ResultsFile read_results(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open results file " + path.string());
  ResultsFile r;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (trim(text).empty()) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::exception& e) {
      throw SchemaError(line, std::string("malformed results line: ") + e.what());
    }
    if (j.contains("manifest")) {
      r.manifest = j["manifest"];
    } else if (j.value("status", "") == "skipped") {
      ++r.skipped;
    } else {
      try {
        r.records.push_back(record_from_json(j));
      } catch (const json::exception& e) {
        throw SchemaError(line, std::string("malformed record: ") + e.what());
      }
    }
  }
  return r;
}

std::vector<double> sweep_grid(int n) {
  const double top = std::log(static_cast<double>(std::max(n, 1)));
  std::vector<double> grid;
  for (int k = 0; k / 20.0 <= top + 1e-12; ++k) grid.push_back(k / 20.0);
  if (grid.back() < top - 1e-12) grid.push_back(top);
  return grid;
}

AccuracyReport compute_report(const std::vector<DetectionRecord>& records, int skipped, double threshold, int n) {
  AccuracyReport r;
  r.threshold = threshold;
  r.n_skipped = skipped;
  std::vector<std::pair<bool, double>> labeled;
  for (const auto& rec : records) {
    if (!rec.is_hallucination_truth) {
      ++r.n_unlabeled;
      continue;
    }
    labeled.emplace_back(*rec.is_hallucination_truth, rec.uncertainty.entropy);
  }
  if (labeled.empty()) throw EmptyResults("no labeled records to score");

  auto score = [&](double t, int* tp, int* fn) {
    int a = 0, b = 0;
    for (const auto& [truth, e] : labeled) {
      const bool pred = predicts_hallucination(e, t);
      if (!truth && !pred) ++a;
      if (truth && pred) ++b;
    }
    if (tp) *tp = a;
    if (fn) *fn = b;
    return static_cast<double>(a + b) / static_cast<double>(labeled.size());
  };
  r.n_total = static_cast<int>(labeled.size());
  r.accuracy = score(threshold, &r.n_tp, &r.n_fn);
  for (double t : sweep_grid(n)) r.sweep.emplace_back(t, score(t, nullptr, nullptr));

  double max_e = std::log(static_cast<double>(std::max(n, 1)));
  for (const auto& [truth, e] : labeled) max_e = std::max(max_e, e);
  const auto bins = static_cast<std::size_t>(std::floor(max_e / r.histogram.bin_width + 1e-9)) + 1;
  r.histogram.hallucinatory.assign(bins, 0);
  r.histogram.non_hallucinatory.assign(bins, 0);
  for (const auto& [truth, e] : labeled) {
    const auto b = std::min(bins - 1, static_cast<std::size_t>(std::floor(e / r.histogram.bin_width + 1e-9)));
    (truth ? r.histogram.hallucinatory : r.histogram.non_hallucinatory)[b]++;
  }
  return r;
}

std::string format_summary(const AccuracyReport& r) {
  std::ostringstream o;
  o << "records    " << r.n_total << "\n"
    << "skipped    " << r.n_skipped << "\n"
    << "unlabeled  " << r.n_unlabeled << "\n"
    << "threshold  " << shortest(r.threshold) << "\n"
    << "n_tp       " << r.n_tp << "\n"
    << "n_fn       " << r.n_fn << "\n"
    << "accuracy   " << shortest(r.accuracy) << "\n";
  return o.str();
}

std::string format_sweep_csv(const AccuracyReport& r) {
  std::string csv = "threshold,accuracy\n";
  for (const auto& [t, a] : r.sweep) csv += shortest(t) + "," + shortest(a) + "\n";
  return csv;
}

std::string render_histogram_svg(const AccuracyReport& r) {
  const auto& h = r.histogram;
  const std::size_t bins = h.hallucinatory.size();
  const double width = 640, height = 360, left = 50, right = 20, top = 30, bottom = 50;
  const double plot_w = width - left - right, plot_h = height - top - bottom;
  int peak = 1;
  for (std::size_t i = 0; i < bins; ++i) peak = std::max({peak, h.hallucinatory[i], h.non_hallucinatory[i]});
  const double bin_w = plot_w / static_cast<double>(std::max<std::size_t>(bins, 1));

  std::ostringstream o;
  o << R"(<svg xmlns="http://www.w3.org/2000/svg" width=")" << width << R"(" height=")" << height << R"(">)" << "\n";
  o << R"(<rect width="100%" height="100%" fill="white"/>)" << "\n";
  auto bar = [&](std::size_t i, int count, double offset, const char* color) {
    if (count == 0) return;
    const double bh = plot_h * count / peak;
    o << "<rect x=\"" << left + i * bin_w + offset << "\" y=\"" << top + plot_h - bh << "\" width=\"" << bin_w / 2
      << "\" height=\"" << bh << "\" fill=\"" << color << "\"/>\n";
  };
  for (std::size_t i = 0; i < bins; ++i) {
    bar(i, h.non_hallucinatory[i], 0, "#4c72b0");
    bar(i, h.hallucinatory[i], bin_w / 2, "#dd5555");
  }
  o << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w << "\" y2=\"" << top + plot_h
    << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + plot_h
    << "\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i <= bins; i += 5) {
    o << "<text x=\"" << left + i * bin_w << "\" y=\"" << top + plot_h + 16
      << "\" font-size=\"11\" text-anchor=\"middle\">" << shortest(static_cast<double>(i) * h.bin_width) << "</text>\n";
  }
  const double tx = left + std::min(r.threshold / h.bin_width, static_cast<double>(bins)) * bin_w;
  o << "<line x1=\"" << tx << "\" y1=\"" << top << "\" x2=\"" << tx << "\" y2=\"" << top + plot_h
    << "\" stroke=\"gray\" stroke-dasharray=\"4,3\"/>\n";
  o << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 12
    << "\" font-size=\"12\" text-anchor=\"middle\">uncertainty (nats)</text>\n";
  o << "<text x=\"" << left << "\" y=\"18\" font-size=\"12\">max count " << peak << "</text>\n";
  o << "<rect x=\"" << width - 190 << "\" y=\"10\" width=\"10\" height=\"10\" fill=\"#4c72b0\"/>\n"
    << "<text x=\"" << width - 175 << "\" y=\"19\" font-size=\"11\">non-hallucinatory</text>\n"
    << "<rect x=\"" << width - 90 << "\" y=\"10\" width=\"10\" height=\"10\" fill=\"#dd5555\"/>\n"
    << "<text x=\"" << width - 75 << "\" y=\"19\" font-size=\"11\">hallucinatory</text>\n";
  o << "</svg>\n";
  return o.str();
}

AccuracyReport report(const std::filesystem::path& results, const std::optional<std::filesystem::path>& out_dir,
                      std::optional<double> threshold) {
  const ResultsFile rf = read_results(results);
  int n = 5;
  double t = 1.0;
  if (rf.manifest.is_object()) {
    const auto& p = rf.manifest.at("config").at("pipeline");
    n = p.value("n", n);
    t = p.value("threshold", t);
  }
  const AccuracyReport r = compute_report(rf.records, rf.skipped, threshold.value_or(t), n);
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    write_file_atomic(*out_dir / "summary.txt", format_summary(r));
    write_file_atomic(*out_dir / "sweep.csv", format_sweep_csv(r));
    write_file_atomic(*out_dir / "histogram.svg", render_histogram_svg(r));
  }
  return r;
}

}  // namespace vlu
