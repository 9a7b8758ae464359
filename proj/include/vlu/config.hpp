#pragma once

// Effective run configuration: TOML/JSON loading, validation and the canonical
// JSON form embedded in results manifests.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "vlu/pipeline.hpp"

namespace vlu {

struct BackendConfig {
  /// Empty means unset: the target falls back to the environment, the helper to the target.
  std::string url;
  std::string model;
  std::string profile = "auto";
  /// Never serialized.
  std::string api_key;
  friend bool operator==(const BackendConfig&, const BackendConfig&) = default;
};

struct RuntimeConfig {
  std::optional<std::filesystem::path> cache_dir;
  std::optional<std::filesystem::path> dump_dir;
  int workers = 1;
  int max_in_flight = 4;
  int max_attempts = 3;
  int backoff_ms = 500;
};

struct Config {
  BackendConfig target{"", "llava-hf/llava-1.5-7b-hf", "auto", {}};
  BackendConfig helper{"", "Qwen/Qwen2.5-7B-Instruct", "qwen2.5", {}};
  PipelineSettings pipeline;
  std::uint64_t seed = 0;

  /// "llm" or "exact".
  std::string oracle = "llm";
  bool question_context = true;
  std::string entailment_template{kEntailmentTemplate};
  std::string entailment_template_no_context{kEntailmentTemplateNoContext};

  std::string judge_template;
  bool concise_free_form = false;

  /// Excluded from the canonical form; does not affect results.
  RuntimeConfig runtime;

  Config();

  /// Throws ConfigError.
  void validate() const;
  /// Pipeline settings with the seed applied to both schedules.
  PipelineSettings settings() const;
  /// The helper with an unset URL and key taken from the target.
  BackendConfig helper_backend() const;

  /// Canonical form: sorted keys, runtime section omitted.
  nlohmann::json to_json() const;
  /// Overlays present keys on the defaults; unknown keys are errors. Accepts a "runtime" section.
  /// Relative template paths resolve against base_dir.
  static Config from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  /// .toml, .json, or a results .jsonl whose manifest config is reused.
  static Config load(const std::filesystem::path& path);
  static Config parse_toml(std::string_view text, const std::filesystem::path& base_dir = {});
  /// Fills unset values from VLU_BASE_URL, VLU_API_KEY and VLU_CACHE_DIR; the target URL
  /// finally defaults to http://localhost:8000.
  void apply_environment();
};

/// Replaces the visual schedule with a blur schedule at the given radii.
void set_blur_radii(Config& cfg, const std::vector<double>& radii);
/// Replaces the textual schedule with LLM rephrasing at the given temperatures.
void set_rephrase_temperatures(Config& cfg, const std::vector<double>& temps);
/// A preset name or a path to a template file.
RephraseInstruction resolve_instruction(std::string_view preset_or_path);

}  // namespace vlu
