#include "vlu/semantics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "vlu/errors.hpp"
#include "vlu/model_client.hpp"
#include "vlu/util.hpp"

namespace vlu {

const std::string_view kEntailmentTemplate =
    "We are evaluating answers to the question \"{question}\"\n"
    "Here are two possible answers:\n"
    "Possible Answer 1: {a}\n"
    "Possible Answer 2: {b}\n"
    "Does Possible Answer 1 semantically entail Possible Answer 2? Respond only with yes or no.";

const std::string_view kEntailmentTemplateNoContext =
    "Here are two possible answers:\n"
    "Possible Answer 1: {a}\n"
    "Possible Answer 2: {b}\n"
    "Does Possible Answer 1 semantically entail Possible Answer 2? Respond only with yes or no.";

bool AnswerSample::is_refusal() const { return refusal || trim(text).empty(); }

std::vector<std::size_t> Clustering::sizes() const {
  std::vector<std::size_t> out;
  out.reserve(clusters.size());
  for (const auto& c : clusters) out.push_back(c.size());
  return out;
}

ClusterDistribution ClusterDistribution::from_counts(std::vector<long long> counts) {
  ClusterDistribution d;
  d.total = std::accumulate(counts.begin(), counts.end(), 0LL);
  d.counts = std::move(counts);
  return d;
}

ClusterDistribution ClusterDistribution::from_clusters(const std::vector<SemanticCluster>& clusters) {
  std::vector<long long> counts;
  counts.reserve(clusters.size());
  for (const auto& c : clusters) counts.push_back(static_cast<long long>(c.size()));
  return from_counts(std::move(counts));
}

std::vector<double> ClusterDistribution::probabilities() const {
  std::vector<double> p;
  p.reserve(counts.size());
  for (long long c : counts) p.push_back(static_cast<double>(c) / static_cast<double>(total));
  return p;
}

std::string normalize_answer(std::string_view text) {
  std::string lowered(text);
  for (char& c : lowered) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  const std::string stripped = trim(lowered);

  std::string kept;
  kept.reserve(stripped.size());
  for (char c : stripped) {
    if (std::string_view(".,!?;:").find(c) == std::string_view::npos) kept.push_back(c);
  }

  std::string out;
  out.reserve(kept.size());
  bool in_space = false;
  for (char c : kept) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!in_space) out.push_back(' ');
      in_space = true;
    } else {
      out.push_back(c);
      in_space = false;
    }
  }
  return out;
}

Verdict ExactMatchOracle::judge(std::string_view, std::string_view a, std::string_view b) {
  return normalize_answer(a) == normalize_answer(b) ? Verdict::entails : Verdict::not_entails;
}

LlmEntailmentOracle::LlmEntailmentOracle(std::shared_ptr<ModelClient> client, LlmOracleOptions options)
    : client_(std::move(client)), options_(std::move(options)) {
  if (!client_) throw ConfigError("entailment oracle needs a helper client");
}

std::string LlmEntailmentOracle::render(std::string_view question_context, std::string_view a,
                                        std::string_view b) const {
  const bool with_context = options_.use_question_context && !question_context.empty();
  std::string prompt = with_context ? options_.prompt_template : options_.prompt_template_no_context;
  prompt = substitute(prompt, "question", question_context);
  prompt = substitute(prompt, "a", a);
  return substitute(prompt, "b", b);
}

Verdict LlmEntailmentOracle::parse_reply(std::string_view reply) {
  std::string r = trim(reply);
  std::size_t i = 0;
  while (i < r.size() && !std::isalpha(static_cast<unsigned char>(r[i]))) ++i;
  std::string word;
  for (; i < r.size() && std::isalpha(static_cast<unsigned char>(r[i])); ++i) {
    word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(r[i]))));
  }
  if (word == "yes") return Verdict::entails;
  if (word == "no") return Verdict::not_entails;
  return Verdict::indeterminate;
}

Verdict LlmEntailmentOracle::judge(std::string_view question_context, std::string_view a, std::string_view b) {
  ChatRequest req;
  req.model_id = options_.model_id;
  req.params = profile_params(options_.profile);
  req.params.temperature = options_.temperature;
  req.params.max_new_tokens = options_.max_new_tokens;
  req.messages.push_back(ChatMessage::text("user", render(question_context, a, b)));
  try {
    return parse_reply(client_->complete(req, 0).text);
  } catch (const BackendError& e) {
    throw OracleFailure(std::string("entailment check failed: ") + e.what());
  }
}

bool bidirectional_entails(EntailmentOracle& oracle, std::string_view question_context, std::string_view a,
                           std::string_view b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("bidirectional_entails needs non-empty answers");
  if (oracle.judge(question_context, a, b) != Verdict::entails) return false;
  return oracle.judge(question_context, b, a) == Verdict::entails;
}

Clustering cluster_answers(std::span<const AnswerSample> samples, EntailmentOracle& oracle,
                           std::string_view question_context) {
  if (samples.empty()) throw EmptyAnswerSet();

  Clustering out;
  std::optional<std::size_t> refusal_cluster;
  for (const AnswerSample& sample : samples) {
    if (sample.is_refusal()) {
      if (!refusal_cluster) {
        refusal_cluster = out.clusters.size();
        out.clusters.push_back(SemanticCluster{.members = {}, .representative = 0, .refusal_sentinel = true});
      }
      out.clusters[*refusal_cluster].members.push_back(sample);
      continue;
    }

    bool placed = false;
    for (auto& cluster : out.clusters) {
      if (cluster.isolated || cluster.refusal_sentinel) continue;
      try {
        if (bidirectional_entails(oracle, question_context, sample.text, cluster.rep().text)) {
          cluster.members.push_back(sample);
          placed = true;
          break;
        }
      } catch (const OracleFailure& e) {
        ++out.oracle_failures;
        log().warn("oracle failure, isolating sample {}: {}", sample.perturbation_index, e.what());
        out.clusters.push_back(SemanticCluster{.members = {sample}, .representative = 0, .isolated = true});
        placed = true;
        break;
      }
    }
    if (!placed) out.clusters.push_back(SemanticCluster{.members = {sample}, .representative = 0});
  }
  return out;
}

UncertaintyScore cluster_entropy(const ClusterDistribution& dist, double log_base) {
  if (dist.counts.empty() || dist.total < 1) throw InvalidDistribution("distribution has no samples");
  long long sum = 0;
  for (long long c : dist.counts) {
    if (c <= 0) throw InvalidDistribution("cluster count must be positive, got " + std::to_string(c));
    sum += c;
  }
  if (sum != dist.total) {
    throw InvalidDistribution("total " + std::to_string(dist.total) + " differs from sum of counts " +
                              std::to_string(sum));
  }
  if (!(log_base > 0.0) || log_base == 1.0) throw InvalidDistribution("log base must be positive and not 1");

  UncertaintyScore score;
  score.num_clusters = static_cast<int>(dist.counts.size());
  score.num_samples = static_cast<int>(dist.total);
  if (dist.counts.size() == 1) return score;

  // H = ln n - (1/n) sum c ln c, which makes H <= ln n exact in floating point.
  const double n = static_cast<double>(dist.total);
  double weighted = 0.0;
  for (long long c : dist.counts) {
    const double x = static_cast<double>(c);
    weighted += x * std::log(x);
  }
  double h = std::max(0.0, std::log(n) - weighted / n);
  if (log_base != std::numbers::e) h /= std::log(log_base);
  score.entropy = h;
  return score;
}

}  // namespace vlu
