#pragma once

// Degree-ordered question perturbations: LLM rephrasing at increasing
// temperature, plus rule-based inequivalent baselines.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "vlu/model_client.hpp"

namespace vlu {

enum class TextualKind {
  llm_rephrase,
  swap,
  delete_word,
  insert,
  replace,
  shuffle,
  noise_injection,
  word_dropout,
  char_dropout,
};

/// Names as used in configs: "llm_rephrase", "swap", "delete", "insert", ...
std::string_view to_string(TextualKind kind);
TextualKind parse_textual_kind(std::string_view name);

/// The default rephrasing instruction.
extern const std::string_view kRephraseInstruction;

struct RephraseInstruction {
  std::string text{kRephraseInstruction};

  /// Reads a template file; one trailing newline is dropped.
  static RephraseInstruction load(const std::filesystem::path& path);
  /// "default", "plain", "altering", "rewrite", "modify", "semantic_equivalent".
  static RephraseInstruction preset(std::string_view name);
  friend bool operator==(const RephraseInstruction&, const RephraseInstruction&) = default;
};

struct TextualSchedule {
  TextualKind kind = TextualKind::llm_rephrase;
  /// Temperatures for llm_rephrase (strictly increasing), otherwise per-kind rates or counts.
  std::vector<double> degrees;
  std::uint64_t seed = 0;
  RephraseInstruction instruction;

  std::size_t size() const { return degrees.size(); }
  /// Throws InvalidSchedule.
  void validate() const;

  /// llm_rephrase at temperatures 0.1 .. 0.5.
  static TextualSchedule standard();
  /// Five-degree schedule for any kind.
  static TextualSchedule preset(TextualKind kind);
};

struct RephraseOptions {
  std::string model_id;
  /// Helper sampling parameters; the temperature is replaced per degree.
  GenerationParams params = [] {
    GenerationParams p;
    p.top_p = 0.8;
    p.repetition_penalty = 1.05;
    p.max_new_tokens = 128;
    return p;
  }();
};

struct RephraseResult {
  std::string text;
  bool fallback = false;
};

/// Trims whitespace and strips matching surrounding quotes.
std::string sanitize_rephrasing(std::string_view completion);

/// Instruction as system message, question as user message. Falls back to the
/// original question when the backend fails or the completion is empty or
/// longer than four times the question. Throws std::invalid_argument for an
/// empty question or a temperature outside (0, 2].
RephraseResult rephrase(std::string_view question, double temperature, ModelClient& client,
                        const RephraseInstruction& instruction, const RephraseOptions& options, int sample_index = 1);

/// Rule-based perturbation of whitespace-delimited words; deterministic in (question, kind, value, seed, stream).
/// Throws TooShort for degenerate inputs and std::invalid_argument for an out-of-range value.
std::string rule_perturb(std::string_view question, TextualKind kind, double rate_or_count, std::uint64_t seed,
                         std::uint64_t stream = 0);

struct TextPerturbations {
  std::vector<std::string> questions;
  int fallbacks = 0;
};

/// Element i perturbs the original question at degree i. The client is only needed for llm_rephrase.
TextPerturbations apply_text_schedule(std::string_view question, const TextualSchedule& sched, ModelClient* client,
                                      const RephraseOptions& options = {});

}  // namespace vlu
