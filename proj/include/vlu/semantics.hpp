#pragma once

// Semantic clustering of sampled answers and the entropy of the resulting
// cluster distribution.

#include <cstddef>
#include <memory>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vlu {

class ModelClient;

/// One model response together with how it was produced.
struct AnswerSample {
  std::string text;
  /// Degree that produced the sample: 1..N for perturbed samples, 0 for the unperturbed initial answer.
  int perturbation_index = 1;
  double gen_temperature = 0.0;
  std::string backend_id;
  /// Refusals and empty answers cluster together under a sentinel and never entail anything.
  bool refusal = false;

  bool is_refusal() const;
  friend bool operator==(const AnswerSample&, const AnswerSample&) = default;
};

struct SemanticCluster {
  std::vector<AnswerSample> members;
  std::size_t representative = 0;
  /// Founded after an oracle failure; accepts no further members.
  bool isolated = false;
  /// The single cluster holding refusals/empty answers.
  bool refusal_sentinel = false;

  const AnswerSample& rep() const { return members.at(representative); }
  std::size_t size() const { return members.size(); }
};

struct Clustering {
  std::vector<SemanticCluster> clusters;
  int oracle_failures = 0;

  std::vector<std::size_t> sizes() const;
};

struct ClusterDistribution {
  std::vector<long long> counts;
  long long total = 0;

  static ClusterDistribution from_counts(std::vector<long long> counts);
  static ClusterDistribution from_clusters(const std::vector<SemanticCluster>& clusters);
  std::vector<double> probabilities() const;
};

struct UncertaintyScore {
  double entropy = 0.0;
  int num_clusters = 1;
  int num_samples = 1;
};

enum class Verdict { entails, not_entails, indeterminate };

/// Judges whether answer `a` entails answer `b`, optionally in the context of a question.
/// Implementations throw OracleFailure when a verdict cannot be obtained.
class EntailmentOracle {
 public:
  virtual ~EntailmentOracle() = default;
  virtual Verdict judge(std::string_view question_context, std::string_view a, std::string_view b) = 0;
};

/// lowercase, trim, drop characters in ".,!?;:", collapse whitespace runs.
std::string normalize_answer(std::string_view text);

/// Deterministic oracle: entails iff both answers normalize to the same string.
class ExactMatchOracle final : public EntailmentOracle {
 public:
  Verdict judge(std::string_view question_context, std::string_view a, std::string_view b) override;
};

/// Default prompt for the LLM-backed oracle. Placeholders: {question}, {a}, {b}.
extern const std::string_view kEntailmentTemplate;
/// Same prompt without the question line.
extern const std::string_view kEntailmentTemplateNoContext;

struct LlmOracleOptions {
  std::string model_id;
  std::string profile = "qwen2.5";
  double temperature = 0.1;
  bool use_question_context = true;
  std::string prompt_template{kEntailmentTemplate};
  std::string prompt_template_no_context{kEntailmentTemplateNoContext};
  int max_new_tokens = 8;
};

/// Asks a helper LLM for a yes/no entailment judgement.
class LlmEntailmentOracle final : public EntailmentOracle {
 public:
  LlmEntailmentOracle(std::shared_ptr<ModelClient> client, LlmOracleOptions options = {});
  Verdict judge(std::string_view question_context, std::string_view a, std::string_view b) override;

  std::string render(std::string_view question_context, std::string_view a, std::string_view b) const;
  static Verdict parse_reply(std::string_view reply);

 private:
  std::shared_ptr<ModelClient> client_;
  LlmOracleOptions options_;
};

/// judge(q,a,b) and judge(q,b,a) both entail. Indeterminate counts as no.
bool bidirectional_entails(EntailmentOracle& oracle, std::string_view question_context, std::string_view a,
                           std::string_view b);

/// Greedy first-match clustering in sampling order; the first member of each cluster is its
/// representative. A sample whose comparison fails founds an isolated singleton.
Clustering cluster_answers(std::span<const AnswerSample> samples, EntailmentOracle& oracle,
                           std::string_view question_context);

/// Entropy of the cluster distribution in the given log base (natural log by default).
UncertaintyScore cluster_entropy(const ClusterDistribution& dist, double log_base = std::numbers::e);

}  // namespace vlu
