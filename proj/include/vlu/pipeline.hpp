#pragma once

// Per-question procedure: initial answer, degree-aligned perturbation pairs,
// N sampled answers, semantic clustering, entropy and the threshold verdict.

#include <filesystem>
#include <functional>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "vlu/image.hpp"
#include "vlu/model_client.hpp"
#include "vlu/perturb_textual.hpp"
#include "vlu/perturb_visual.hpp"
#include "vlu/semantics.hpp"

namespace vlu {

struct PairingPolicy {
  enum class Kind { aligned, reversed, rotated, shuffled };
  Kind kind = Kind::aligned;
  /// Offset for rotated.
  int offset = 0;
  /// Permutation seed for shuffled.
  std::uint64_t seed = 0;

  static PairingPolicy aligned() { return {}; }
  static PairingPolicy reversed() { return {Kind::reversed, 0, 0}; }
  static PairingPolicy rotated(int k) { return {Kind::rotated, k, 0}; }
  static PairingPolicy shuffled(std::uint64_t seed) { return {Kind::shuffled, 0, seed}; }

  /// "aligned", "reversed", "rotated(k)" or "shuffled(seed)".
  static PairingPolicy parse(std::string_view text);
  std::string to_string() const;

  /// 0-based text index paired with each image degree.
  std::vector<std::size_t> text_order(std::size_t n) const;
  friend bool operator==(const PairingPolicy&, const PairingPolicy&) = default;
};

struct PerturbedPromptPair {
  /// 1-based image degree; pairs are ordered by it.
  int degree_index = 1;
  /// 1-based degree of the paired question.
  int text_index = 1;
  RasterImage image;
  std::string question;
};

/// Throws LengthMismatch unless both inputs have the same non-zero length.
std::vector<PerturbedPromptPair> build_pairs(std::span<const RasterImage> images, std::span<const std::string> questions,
                                             const PairingPolicy& policy);

struct PipelineSettings {
  int n = 5;
  VisualSchedule visual = VisualSchedule::standard();
  TextualSchedule textual = TextualSchedule::standard();
  PairingPolicy pairing;
  double initial_temperature = 0.1;
  double sample_temperature = 1.0;
  double threshold = 1.0;
  double log_base = std::numbers::e;
  /// Cluster the initial answer together with the N samples.
  bool include_initial = false;

  /// Throws ConfigError (schedules must have exactly n degrees).
  void validate() const;
};

struct TargetModel {
  std::shared_ptr<ModelClient> client;
  std::string model_id;
  GenerationParams params;
};

struct PipelineContext {
  PipelineSettings settings;
  TargetModel target;
  /// Rephraser; may be null for rule-based textual schedules.
  std::shared_ptr<ModelClient> helper;
  RephraseOptions rephrase;
  std::shared_ptr<EntailmentOracle> oracle;
  /// When set, perturbed images and questions are written below this directory.
  std::optional<std::filesystem::path> dump_dir;
};

/// Turns a (possibly perturbed) question into the prompt sent to the target.
using PromptRenderer = std::function<std::string(std::string_view question)>;

ChatRequest make_vision_request(const TargetModel& target, const RasterImage& image, std::string_view prompt,
                                double temperature);

/// Single completion at the low initial temperature; propagates BackendError.
AnswerSample initial_answer(const RasterImage& image, std::string_view prompt, const TargetModel& target,
                            double temperature = 0.1);

struct UncertaintyEstimate {
  UncertaintyScore score;
  std::vector<AnswerSample> samples;
  std::vector<std::size_t> cluster_sizes;
  /// Member texts per cluster, in clustering order.
  std::vector<std::vector<std::string>> clusters;
  std::vector<std::string> questions;
  std::vector<int> text_indices;
  int failed_samples = 0;
  int text_fallbacks = 0;
  int oracle_failures = 0;
};

struct EstimateOptions {
  PromptRenderer render;
  const AnswerSample* initial = nullptr;
  /// Subdirectory name below dump_dir.
  std::string dump_tag = "sample";
};

/// Throws UncertaintyUnavailable when at least ceil(N/2) completions fail; otherwise failed
/// slots are dropped and the entropy covers the survivors.
UncertaintyEstimate estimate_uncertainty(const RasterImage& image, std::string_view question,
                                         const PipelineContext& ctx, const EstimateOptions& options = {});

struct DetectionRecord {
  std::string question_id;
  std::string initial_answer;
  std::optional<bool> is_hallucination_truth;
  UncertaintyScore uncertainty;
  bool predicted_hallucination = false;
  double threshold = 1.0;
  std::vector<AnswerSample> samples;
  std::vector<std::size_t> cluster_sizes;
};

/// Strictly greater: an entropy equal to the threshold is not hallucinatory.
inline bool predicts_hallucination(double entropy, double threshold) { return entropy > threshold; }

DetectionRecord detect(std::string question_id, const AnswerSample& initial, std::optional<bool> truth,
                       const UncertaintyEstimate& estimate, double threshold);

nlohmann::json to_json(const DetectionRecord& record);
DetectionRecord record_from_json(const nlohmann::json& j);

}  // namespace vlu
