#pragma once

// Benchmark ingestion, prompt rendering, ground-truth labeling, resumable runs
// and accuracy reports.

#include <cstddef>
#include <filesystem>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vlu/config.hpp"
#include "vlu/pipeline.hpp"

namespace vlu {

enum class SampleFormat { multi_choice, free_form };

struct BenchmarkSample {
  std::string id;
  /// Resolved against the dataset directory.
  std::filesystem::path image_path;
  std::string question;
  SampleFormat format = SampleFormat::free_form;
  /// Choice texts with source markers removed.
  std::vector<std::string> choices;
  /// "0", "1", ... for multi-choice; the reference answer for free-form.
  std::string gold;
  /// Per-sample override of the concise-answer note for free-form questions.
  std::optional<bool> concise;
  std::size_t line = 0;
};

struct IngestResult {
  std::vector<BenchmarkSample> samples;
  /// Lines dropped for lacking an image or a question.
  std::vector<std::size_t> rejected_lines;
};

/// One JSON object per line: {"id","image_path","question","format","choices","gold"} plus optional
/// "marker_base" (0 or 1, for numeric gold labels) and "concise". Throws SchemaError or MissingImage.
IngestResult ingest(const std::filesystem::path& path);

/// Maps a source gold label onto a 0-based choice index. With a known numeric marker base a
/// number is read against it first; otherwise the choice text, then a letter ("B", "(b)"), then a
/// 0-based number is tried. Returns nullopt when the label matches nothing.
std::optional<std::size_t> normalize_gold(std::string_view gold, const std::vector<std::string>& choices,
                                          std::optional<int> marker_base = std::nullopt);

/// Removes a leading "A. ", "(b) ", "2) " style marker from every choice when all choices carry
/// one in sequence. Returns the first marker's numeric value when the markers were numbers.
std::optional<int> strip_choice_markers(std::vector<std::string>& choices);

extern const std::string_view kChoicePrompt;
extern const std::string_view kConciseNote;
/// Placeholders: {question}, {gold}, {answer}.
extern const std::string_view kJudgeTemplate;

/// Prompt for the sample's own question.
std::string render_prompt(const BenchmarkSample& sample, bool concise_free_form = false);
/// Prompt with the question stem replaced (used for perturbed questions).
std::string render_prompt(const BenchmarkSample& sample, std::string_view question, bool concise_free_form);

/// First integer token not embedded in a word or a decimal number.
std::optional<std::string> first_standalone_integer(std::string_view text);

/// Text-only LLM judge for free-form answers.
class CorrectnessJudge {
 public:
  CorrectnessJudge(std::shared_ptr<ModelClient> client, std::string model_id, GenerationParams params,
                   std::string prompt_template = std::string(kJudgeTemplate));
  /// Throws JudgeUnavailable on backend failure or a reply that is neither yes nor no.
  bool agrees(std::string_view question, std::string_view gold, std::string_view answer) const;
  std::string render(std::string_view question, std::string_view gold, std::string_view answer) const;

 private:
  std::shared_ptr<ModelClient> client_;
  std::string model_id_;
  GenerationParams params_;
  std::string template_;
};

/// Multi-choice: first standalone integer equals gold. Free-form: the judge agrees.
/// An empty answer is incorrect. Throws JudgeUnavailable.
bool judge_correctness(const BenchmarkSample& sample, std::string_view answer, const CorrectnessJudge* judge);

/// Backends, oracle and judge instantiated from a config.
struct Runtime {
  PipelineContext context;
  std::shared_ptr<CorrectnessJudge> judge;
};
Runtime make_runtime(const Config& cfg);

struct Histogram {
  double bin_width = 0.1;
  std::vector<int> hallucinatory;
  std::vector<int> non_hallucinatory;
};

struct AccuracyReport {
  /// Labeled, non-skipped records.
  int n_total = 0;
  /// Non-hallucinatory records predicted non-hallucinatory.
  int n_tp = 0;
  /// Hallucinatory records predicted hallucinatory.
  int n_fn = 0;
  int n_skipped = 0;
  /// Records without a truth label (not counted in n_total).
  int n_unlabeled = 0;
  double accuracy = 0.0;
  double threshold = 1.0;
  /// (threshold, accuracy) over 0, 0.05, ... and ln N.
  std::vector<std::pair<double, double>> sweep;
  Histogram histogram;
};

struct RunOptions {
  /// Stop after this many new records (simulates an interrupted run).
  std::size_t limit = std::numeric_limits<std::size_t>::max();
};

struct RunSummary {
  std::size_t written = 0;
  std::size_t resumed = 0;
  std::size_t skipped = 0;
  std::size_t rejected = 0;
  bool complete = false;
};

std::string manifest_digest(const nlohmann::json& manifest);
nlohmann::json make_manifest(const Config& cfg, const std::string& dataset_digest);

/// Appends records for every sample not already present in `out`. A results file from a
/// different configuration or dataset raises ConfigError. Per-sample failures become skipped
/// lines. Throws BackendUnavailable when no sample could be evaluated because of the backend.
RunSummary run(const std::filesystem::path& dataset, const Config& cfg, const std::filesystem::path& out,
               const RunOptions& options = {});

struct ResultsFile {
  nlohmann::json manifest;
  std::vector<DetectionRecord> records;
  int skipped = 0;
};
ResultsFile read_results(const std::filesystem::path& path);

/// Sweep grid: k * 0.05 for every k with k * 0.05 <= ln n, then ln n itself.
std::vector<double> sweep_grid(int n);
/// Throws EmptyResults when no labeled record is present.
AccuracyReport compute_report(const std::vector<DetectionRecord>& records, int skipped, double threshold, int n);
/// Reads a results file and, when out_dir is given, writes summary.txt, sweep.csv and histogram.svg.
AccuracyReport report(const std::filesystem::path& results, const std::optional<std::filesystem::path>& out_dir,
                      std::optional<double> threshold = std::nullopt);

std::string format_summary(const AccuracyReport& r);
std::string format_sweep_csv(const AccuracyReport& r);
std::string render_histogram_svg(const AccuracyReport& r);

}  // namespace vlu
