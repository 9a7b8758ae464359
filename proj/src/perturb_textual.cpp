#include "vlu/perturb_textual.hpp"

#include <array>
#include <cctype>
#include <cmath>
#include <future>
#include <sstream>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "vlu/errors.hpp"
#include "vlu/random.hpp"
#include "vlu/util.hpp"

namespace vlu {

const std::string_view kRephraseInstruction =
    "Given the input question, generate a semantically equivalent variation by changing the wording, structure, "
    "grammar, or narrative. Ensure the perturbed question maintains the same meaning as the original.";

namespace {

constexpr std::array<std::pair<TextualKind, std::string_view>, 9> kKindNames{{
    {TextualKind::llm_rephrase, "llm_rephrase"},
    {TextualKind::swap, "swap"},
    {TextualKind::delete_word, "delete"},
    {TextualKind::insert, "insert"},
    {TextualKind::replace, "replace"},
    {TextualKind::shuffle, "shuffle"},
    {TextualKind::noise_injection, "noise_injection"},
    {TextualKind::word_dropout, "word_dropout"},
    {TextualKind::char_dropout, "char_dropout"},
}};

constexpr std::array<std::pair<std::string_view, std::string_view>, 6> kInstructionPresets{{
    {"default", kRephraseInstruction},
    {"plain", "Please rephrase it."},
    {"altering", "Rephrase it by altering the wording, structure, or grammar, while keeping the meaning intact."},
    {"rewrite",
     "Rewrite it using different words, sentence structure, or narrative style. Make sure the rephrased question has "
     "the same semantic meaning."},
    {"modify",
     "Modify it by changing the wording, sentence flow, or grammatical structure, ensuring the meaning remains "
     "unchanged."},
    {"semantic_equivalent",
     "Generate a semantic-equivalent variation by changing the wording, structure, grammar, or narrative."},
}};

constexpr std::array<std::string_view, 20> kFillerWords{
    "the",  "a",    "very",  "some",  "this",  "that", "really", "just",  "also",  "quite",
    "still", "maybe", "perhaps", "often", "then", "now",  "here",   "there", "again", "only"};

bool counts_words(TextualKind k) {
  return k == TextualKind::swap || k == TextualKind::delete_word || k == TextualKind::insert ||
         k == TextualKind::replace;
}

bool uses_rate(TextualKind k) {
  return k == TextualKind::noise_injection || k == TextualKind::word_dropout || k == TextualKind::char_dropout;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::istringstream in{std::string(text)};
  for (std::string w; in >> w;) words.push_back(std::move(w));
  return words;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

std::vector<std::string> utf8_chars(std::string_view s) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < s.size();) {
    std::size_t len = 1;
    const auto c = static_cast<unsigned char>(s[i]);
    if (c >= 0xf0) len = 4;
    else if (c >= 0xe0) len = 3;
    else if (c >= 0xc0) len = 2;
    len = std::min(len, s.size() - i);
    out.emplace_back(s.substr(i, len));
    i += len;
  }
  return out;
}

std::string nonsense_token(Rng& rng) {
  static constexpr std::string_view kAlphabet = "abcdefghijklmnopqrstuvwxyz#@%&";
  const std::size_t len = 3 + uniform_below(rng, 4);
  std::string t;
  for (std::size_t i = 0; i < len; ++i) t.push_back(kAlphabet[uniform_below(rng, kAlphabet.size())]);
  return t;
}

void check_value(TextualKind kind, double v) {
  if (!std::isfinite(v)) throw std::invalid_argument("perturbation value must be finite");
  if (counts_words(kind) && v < 1.0) {
    throw std::invalid_argument(std::string(to_string(kind)) + " needs a count >= 1");
  }
  if (uses_rate(kind) && !(v > 0.0 && v < 1.0)) {
    throw std::invalid_argument(std::string(to_string(kind)) + " needs a rate in (0, 1)");
  }
}

}  // namespace

std::string_view to_string(TextualKind kind) {
  for (const auto& [k, n] : kKindNames) {
    if (k == kind) return n;
  }
  return "unknown";
}

TextualKind parse_textual_kind(std::string_view name) {
  for (const auto& [k, n] : kKindNames) {
    if (n == name) return k;
  }
  throw UnsupportedKind("unsupported textual perturbation '" + std::string(name) + "'");
}

RephraseInstruction RephraseInstruction::load(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error&) {
    throw ConfigError("cannot read rephrase instruction " + path.string());
  }
  if (!text.empty() && text.back() == '\n') text.pop_back();
  if (!text.empty() && text.back() == '\r') text.pop_back();
  if (trim(text).empty()) throw ConfigError("rephrase instruction " + path.string() + " is empty");
  return RephraseInstruction{std::move(text)};
}

RephraseInstruction RephraseInstruction::preset(std::string_view name) {
  for (const auto& [n, text] : kInstructionPresets) {
    if (n == name) return RephraseInstruction{std::string(text)};
  }
  throw ConfigError("unknown instruction preset '" + std::string(name) + "'");
}

void TextualSchedule::validate() const {
  if (degrees.empty()) throw InvalidSchedule("textual schedule has no degrees");
  if (trim(instruction.text).empty()) throw InvalidSchedule("rephrase instruction is empty");
  if (kind == TextualKind::llm_rephrase) {
    for (std::size_t i = 0; i < degrees.size(); ++i) {
      if (!(degrees[i] > 0.0 && degrees[i] <= 2.0)) throw InvalidSchedule("rephrase temperatures must be in (0, 2]");
      if (i > 0 && !(degrees[i - 1] < degrees[i])) {
        throw InvalidSchedule("rephrase temperatures must be strictly increasing");
      }
    }
    return;
  }
  for (double d : degrees) {
    try {
      check_value(kind, d);
    } catch (const std::invalid_argument& e) {
      throw InvalidSchedule(e.what());
    }
  }
}

TextualSchedule TextualSchedule::standard() {
  return TextualSchedule{.kind = TextualKind::llm_rephrase, .degrees = {0.1, 0.2, 0.3, 0.4, 0.5}};
}

TextualSchedule TextualSchedule::preset(TextualKind kind) {
  switch (kind) {
    case TextualKind::llm_rephrase:
      return standard();
    case TextualKind::word_dropout:
      return {.kind = kind, .degrees = {0.2, 0.2, 0.2, 0.2, 0.2}};
    case TextualKind::char_dropout:
      return {.kind = kind, .degrees = {0.1, 0.1, 0.1, 0.1, 0.1}};
    case TextualKind::noise_injection:
      return {.kind = kind, .degrees = {0.2, 0.2, 0.2, 0.2, 0.2}};
    default:
      return {.kind = kind, .degrees = {1, 1, 1, 1, 1}};
  }
}

std::string sanitize_rephrasing(std::string_view completion) {
  static constexpr std::array<std::pair<std::string_view, std::string_view>, 6> kQuotes{{
      {"\"", "\""}, {"'", "'"}, {"`", "`"}, {"“", "”"}, {"‘", "’"}, {"«", "»"}}};
  std::string s = trim(completion);
  for (bool stripped = true; stripped;) {
    stripped = false;
    for (const auto& [open, close] : kQuotes) {
      if (s.size() >= open.size() + close.size() && s.starts_with(open) && s.ends_with(close)) {
        s = trim(std::string_view(s).substr(open.size(), s.size() - open.size() - close.size()));
        stripped = true;
        break;
      }
    }
  }
  return s;
}

RephraseResult rephrase(std::string_view question, double temperature, ModelClient& client,
                        const RephraseInstruction& instruction, const RephraseOptions& options, int sample_index) {
  if (trim(question).empty()) throw std::invalid_argument("cannot rephrase an empty question");
  if (!(temperature > 0.0 && temperature <= 2.0)) throw std::invalid_argument("rephrase temperature must be in (0, 2]");

  ChatRequest req;
  req.model_id = options.model_id;
  req.params = options.params;
  req.params.temperature = temperature;
  req.params.do_sample = true;
  req.messages.push_back(ChatMessage::text("system", instruction.text));
  req.messages.push_back(ChatMessage::text("user", std::string(question)));

  std::string text;
  try {
    text = sanitize_rephrasing(client.complete(req, sample_index).text);
  } catch (const BackendError& e) {
    log().warn("perturbation-fallback: rephrase at temperature {} failed: {}", temperature, e.what());
    return {std::string(question), true};
  }
  if (text.empty() || utf8_length(text) > 4 * utf8_length(question)) {
    log().warn("perturbation-fallback: unusable rephrasing at temperature {} ({} chars)", temperature,
               utf8_length(text));
    return {std::string(question), true};
  }
  return {std::move(text), false};
}

std::string rule_perturb(std::string_view question, TextualKind kind, double rate_or_count, std::uint64_t seed,
                         std::uint64_t stream) {
  if (kind == TextualKind::llm_rephrase) throw std::invalid_argument("llm_rephrase is not a rule perturbation");
  check_value(kind, rate_or_count);
  std::vector<std::string> words = split_words(question);
  Rng rng = make_rng({seed, stream, static_cast<std::uint64_t>(kind)});
  const auto count = static_cast<std::size_t>(std::max(1.0, std::round(rate_or_count)));
  const std::string name(to_string(kind));

  switch (kind) {
    case TextualKind::swap:
      if (words.size() < 2) throw TooShort("swap needs at least two words");
      for (std::size_t k = 0; k < count; ++k) {
        const std::size_t i = uniform_below(rng, words.size());
        std::size_t j = uniform_below(rng, words.size() - 1);
        if (j >= i) ++j;
        std::swap(words[i], words[j]);
      }
      break;
    case TextualKind::delete_word:
      if (words.size() <= count) throw TooShort("delete would leave no words");
      for (std::size_t k = 0; k < count; ++k) words.erase(words.begin() + uniform_below(rng, words.size()));
      break;
    case TextualKind::insert:
      if (words.empty()) throw TooShort("insert needs at least one word");
      for (std::size_t k = 0; k < count; ++k) {
        const std::size_t pos = uniform_below(rng, words.size() + 1);
        words.insert(words.begin() + pos, std::string(kFillerWords[uniform_below(rng, kFillerWords.size())]));
      }
      break;
    case TextualKind::replace:
      if (words.empty()) throw TooShort("replace needs at least one word");
      for (std::size_t k = 0; k < count; ++k) {
        const std::size_t pos = uniform_below(rng, words.size());
        std::size_t pick = uniform_below(rng, kFillerWords.size());
        if (kFillerWords[pick] == words[pos]) pick = (pick + 1) % kFillerWords.size();
        words[pos] = std::string(kFillerWords[pick]);
      }
      break;
    case TextualKind::shuffle:
      if (words.empty()) throw TooShort("shuffle needs at least one word");
      seeded_shuffle(words.begin(), words.end(), rng);
      break;
    case TextualKind::noise_injection: {
      if (words.empty()) throw TooShort("noise injection needs at least one word");
      const auto k = static_cast<std::size_t>(std::max(1.0, std::round(rate_or_count * words.size())));
      for (std::size_t i = 0; i < k; ++i) {
        const std::size_t pos = uniform_below(rng, words.size() + 1);
        words.insert(words.begin() + pos, nonsense_token(rng));
      }
      break;
    }
    case TextualKind::word_dropout: {
      if (words.empty()) throw TooShort("word dropout needs at least one word");
      std::size_t k = static_cast<std::size_t>(std::round(rate_or_count * words.size()));
      k = std::min(k, words.size() - 1);
      std::vector<std::size_t> idx(words.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      // Partial Fisher-Yates: the first k entries are the dropped positions.
      for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + uniform_below(rng, idx.size() - i)]);
      std::vector<bool> dropped(words.size(), false);
      for (std::size_t i = 0; i < k; ++i) dropped[idx[i]] = true;
      std::vector<std::string> kept;
      for (std::size_t i = 0; i < words.size(); ++i) {
        if (!dropped[i]) kept.push_back(std::move(words[i]));
      }
      words = std::move(kept);
      break;
    }
    case TextualKind::char_dropout: {
      if (words.empty()) throw TooShort("character dropout needs at least one word");
      std::vector<std::string> out;
      for (const auto& w : words) {
        std::string kept;
        for (const auto& ch : utf8_chars(w)) {
          if (uniform01(rng) >= rate_or_count) kept += ch;
        }
        if (!kept.empty()) out.push_back(std::move(kept));
      }
      if (out.empty()) return join_words(words);
      words = std::move(out);
      break;
    }
    case TextualKind::llm_rephrase:
      break;
  }
  return join_words(words);
}

TextPerturbations apply_text_schedule(std::string_view question, const TextualSchedule& sched, ModelClient* client,
                                      const RephraseOptions& options) {
  sched.validate();
  TextPerturbations out;
  out.questions.resize(sched.size());

  if (sched.kind == TextualKind::llm_rephrase) {
    if (client == nullptr) throw ConfigError("llm_rephrase needs a helper backend");
    std::vector<std::future<RephraseResult>> pending;
    pending.reserve(sched.size());
    for (std::size_t i = 0; i < sched.size(); ++i) {
      pending.push_back(std::async(std::launch::async, [&, i] {
        return rephrase(question, sched.degrees[i], *client, sched.instruction, options, static_cast<int>(i + 1));
      }));
    }
    for (std::size_t i = 0; i < pending.size(); ++i) {
      RephraseResult r = pending[i].get();
      out.fallbacks += r.fallback ? 1 : 0;
      out.questions[i] = std::move(r.text);
    }
    return out;
  }

  for (std::size_t i = 0; i < sched.size(); ++i) {
    try {
      out.questions[i] = rule_perturb(question, sched.kind, sched.degrees[i], sched.seed, i + 1);
      if (trim(out.questions[i]).empty()) throw TooShort("perturbation produced an empty question");
    } catch (const TooShort& e) {
      log().warn("perturbation-fallback: {} at degree {}: {}", to_string(sched.kind), i + 1, e.what());
      out.questions[i] = std::string(question);
      ++out.fallbacks;
    }
  }
  return out;
}

}  // namespace vlu
