#include "vlu/pipeline.hpp"

#include <charconv>
#include <fstream>
#include <future>
#include <numeric>
#include <regex>

#include <spdlog/spdlog.h>

#include "vlu/errors.hpp"
#include "vlu/random.hpp"
#include "vlu/util.hpp"

namespace vlu {

PairingPolicy PairingPolicy::parse(std::string_view text) {
  static const std::regex kWithArg(R"(^(rotated|shuffled)[(:](\d+)\)?$)");
  const std::string s(text);
  if (s == "aligned") return aligned();
  if (s == "reversed") return reversed();
  std::smatch m;
  if (std::regex_match(s, m, kWithArg)) {
    const std::string arg = m[2].str();
    std::uint64_t value = 0;
    auto [ptr, ec] = std::from_chars(arg.data(), arg.data() + arg.size(), value);
    if (ec == std::errc{} && ptr == arg.data() + arg.size()) {
      if (m[1] == "rotated") return rotated(static_cast<int>(value));
      return shuffled(value);
    }
  }
  throw ConfigError("pairing must be aligned, reversed, rotated(k) or shuffled(seed); got '" + s + "'");
}

std::string PairingPolicy::to_string() const {
  switch (kind) {
    case Kind::aligned:
      return "aligned";
    case Kind::reversed:
      return "reversed";
    case Kind::rotated:
      return "rotated(" + std::to_string(offset) + ")";
    case Kind::shuffled:
      return "shuffled(" + std::to_string(seed) + ")";
  }
  return "aligned";
}

std::vector<std::size_t> PairingPolicy::text_order(std::size_t n) const {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (n == 0) return order;
  switch (kind) {
    case Kind::aligned:
      break;
    case Kind::reversed:
      std::reverse(order.begin(), order.end());
      break;
    case Kind::rotated: {
      const auto k = static_cast<std::size_t>(((offset % static_cast<long long>(n)) + static_cast<long long>(n)) %
                                              static_cast<long long>(n));
      for (std::size_t i = 0; i < n; ++i) order[i] = (i + k) % n;
      break;
    }
    case Kind::shuffled: {
      Rng rng = make_rng({seed});
      seeded_shuffle(order.begin(), order.end(), rng);
      break;
    }
  }
  return order;
}

std::vector<PerturbedPromptPair> build_pairs(std::span<const RasterImage> images, std::span<const std::string> questions,
                                             const PairingPolicy& policy) {
  if (images.size() != questions.size()) {
    throw LengthMismatch("cannot pair " + std::to_string(images.size()) + " images with " +
                         std::to_string(questions.size()) + " questions");
  }
  if (images.empty()) throw LengthMismatch("nothing to pair");
  const auto order = policy.text_order(images.size());
  std::vector<PerturbedPromptPair> pairs;
  pairs.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    pairs.push_back(PerturbedPromptPair{static_cast<int>(i + 1), static_cast<int>(order[i] + 1), images[i],
                                        questions[order[i]]});
  }
  return pairs;
}

void PipelineSettings::validate() const {
  if (n < 1) throw ConfigError("n must be at least 1");
  visual.validate();
  textual.validate();
  if (visual.size() != static_cast<std::size_t>(n)) {
    throw ConfigError("visual schedule has " + std::to_string(visual.size()) + " degrees, expected n = " +
                      std::to_string(n));
  }
  if (textual.size() != static_cast<std::size_t>(n)) {
    throw ConfigError("textual schedule has " + std::to_string(textual.size()) + " degrees, expected n = " +
                      std::to_string(n));
  }
  if (!std::isfinite(threshold) || threshold < 0.0) throw ConfigError("threshold must be a non-negative number");
  if (!(initial_temperature >= 0.0) || !(sample_temperature >= 0.0)) throw ConfigError("temperatures must be >= 0");
  if (!(log_base > 0.0) || log_base == 1.0) throw ConfigError("log base must be positive and not 1");
  if (pairing.kind == PairingPolicy::Kind::rotated && pairing.offset < 0) throw ConfigError("rotation must be >= 0");
}

ChatRequest make_vision_request(const TargetModel& target, const RasterImage& image, std::string_view prompt,
                                double temperature) {
  ChatRequest req;
  req.model_id = target.model_id;
  req.params = target.params;
  req.params.temperature = temperature;
  ChatMessage user{"user", {}};
  user.parts.emplace_back(ImagePart{"image/png", encode_png(image)});
  user.parts.emplace_back(std::string(prompt));
  req.messages.push_back(std::move(user));
  return req;
}

AnswerSample initial_answer(const RasterImage& image, std::string_view prompt, const TargetModel& target,
                            double temperature) {
  if (!target.client) throw ConfigError("target backend is not configured");
  return target.client->complete(make_vision_request(target, image, prompt, temperature), 0);
}

namespace {

void dump_perturbations(const std::filesystem::path& dir, const VisualSchedule& sched,
                        const std::vector<RasterImage>& images, const std::vector<std::string>& questions) {
  std::filesystem::create_directories(dir);
  const auto names = dump_names(sched);
  for (std::size_t i = 0; i < images.size(); ++i) save_png(images[i], dir / (names[i] + ".png"));
  std::string lines;
  for (const auto& q : questions) lines += q + "\n";
  write_file_atomic(dir / "questions.txt", lines);
}

}  // namespace

UncertaintyEstimate estimate_uncertainty(const RasterImage& image, std::string_view question,
                                         const PipelineContext& ctx, const EstimateOptions& options) {
  const PipelineSettings& s = ctx.settings;
  s.validate();
  if (!ctx.target.client) throw ConfigError("target backend is not configured");
  if (!ctx.oracle) throw ConfigError("entailment oracle is not configured");

  const std::vector<RasterImage> images = apply_schedule(image, s.visual);
  TextPerturbations texts = apply_text_schedule(question, s.textual, ctx.helper.get(), ctx.rephrase);
  if (ctx.dump_dir) dump_perturbations(*ctx.dump_dir / options.dump_tag, s.visual, images, texts.questions);

  const auto pairs = build_pairs(images, texts.questions, s.pairing);

  UncertaintyEstimate out;
  out.text_fallbacks = texts.fallbacks;
  std::vector<std::future<std::optional<AnswerSample>>> pending;
  pending.reserve(pairs.size());
  for (const auto& pair : pairs) {
    out.questions.push_back(pair.question);
    out.text_indices.push_back(pair.text_index);
    pending.push_back(std::async(std::launch::async, [&]() -> std::optional<AnswerSample> {
      const std::string prompt = options.render ? options.render(pair.question) : pair.question;
      try {
        return ctx.target.client->complete(make_vision_request(ctx.target, pair.image, prompt, s.sample_temperature),
                                           pair.degree_index);
      } catch (const BackendError& e) {
        log().warn("sample {} failed: {}", pair.degree_index, e.what());
        return std::nullopt;
      }
    }));
  }

  // Collected in degree order regardless of completion order.
  std::vector<AnswerSample> samples;
  for (auto& f : pending) {
    auto r = f.get();
    if (r) {
      samples.push_back(std::move(*r));
    } else {
      ++out.failed_samples;
    }
  }
  const int needed_failures = (s.n + 1) / 2;
  if (out.failed_samples >= needed_failures) {
    throw UncertaintyUnavailable(std::to_string(out.failed_samples) + " of " + std::to_string(s.n) +
                                 " samples failed");
  }

  out.samples = samples;
  std::vector<AnswerSample> clustered;
  if (s.include_initial && options.initial != nullptr) clustered.push_back(*options.initial);
  clustered.insert(clustered.end(), samples.begin(), samples.end());

  const Clustering clustering = cluster_answers(clustered, *ctx.oracle, question);
  out.oracle_failures = clustering.oracle_failures;
  out.cluster_sizes = clustering.sizes();
  for (const auto& c : clustering.clusters) {
    auto& texts = out.clusters.emplace_back();
    for (const auto& m : c.members) texts.push_back(m.text);
  }
  out.score = cluster_entropy(ClusterDistribution::from_clusters(clustering.clusters), s.log_base);
  return out;
}

DetectionRecord detect(std::string question_id, const AnswerSample& initial, std::optional<bool> truth,
                       const UncertaintyEstimate& estimate, double threshold) {
  DetectionRecord r;
  r.question_id = std::move(question_id);
  r.initial_answer = initial.text;
  r.is_hallucination_truth = truth;
  r.uncertainty = estimate.score;
  r.threshold = threshold;
  r.predicted_hallucination = predicts_hallucination(estimate.score.entropy, threshold);
  r.samples = estimate.samples;
  r.cluster_sizes = estimate.cluster_sizes;
  return r;
}

nlohmann::json to_json(const DetectionRecord& r) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& s : r.samples) {
    samples.push_back({{"text", s.text},
                       {"perturbation_index", s.perturbation_index},
                       {"gen_temperature", s.gen_temperature},
                       {"backend_id", s.backend_id}});
  }
  nlohmann::json j = {{"question_id", r.question_id},
                      {"initial_answer", r.initial_answer},
                      {"entropy", r.uncertainty.entropy},
                      {"num_clusters", r.uncertainty.num_clusters},
                      {"num_samples", r.uncertainty.num_samples},
                      {"predicted_hallucination", r.predicted_hallucination},
                      {"threshold", r.threshold},
                      {"cluster_sizes", r.cluster_sizes},
                      {"samples", std::move(samples)}};
  j["is_hallucination_truth"] = r.is_hallucination_truth ? nlohmann::json(*r.is_hallucination_truth) : nlohmann::json();
  return j;
}

DetectionRecord record_from_json(const nlohmann::json& j) {
  DetectionRecord r;
  r.question_id = j.at("question_id").get<std::string>();
  r.initial_answer = j.value("initial_answer", "");
  if (j.contains("is_hallucination_truth") && !j["is_hallucination_truth"].is_null()) {
    r.is_hallucination_truth = j["is_hallucination_truth"].get<bool>();
  }
  r.uncertainty.entropy = j.at("entropy").get<double>();
  r.uncertainty.num_clusters = j.at("num_clusters").get<int>();
  r.uncertainty.num_samples = j.at("num_samples").get<int>();
  r.predicted_hallucination = j.at("predicted_hallucination").get<bool>();
  r.threshold = j.at("threshold").get<double>();
  r.cluster_sizes = j.value("cluster_sizes", std::vector<std::size_t>{});
  for (const auto& s : j.value("samples", nlohmann::json::array())) {
    r.samples.push_back(AnswerSample{.text = s.at("text").get<std::string>(),
                                     .perturbation_index = s.at("perturbation_index").get<int>(),
                                     .gen_temperature = s.at("gen_temperature").get<double>(),
                                     .backend_id = s.value("backend_id", "")});
  }
  return r;
}

}  // namespace vlu
