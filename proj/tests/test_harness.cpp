#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>

#include "support/fixtures.hpp"
#include "support/oracles.hpp"
#include "vlu/errors.hpp"
#include "vlu/harness.hpp"
#include "vlu/random.hpp"

using namespace vlu;
using nlohmann::json;

namespace {

std::filesystem::path write_dataset(const fixture::TempDir& dir, const std::vector<std::string>& lines) {
  vlu::save_png(fixture::random_image(4, 4, 1), dir / "img.png");
  std::string text;
  for (const auto& l : lines) text += l + "\n";
  fixture::write_text(dir / "data.jsonl", text);
  return dir / "data.jsonl";
}

json sample_json(const std::string& id) {
  return {{"id", id}, {"image_path", "img.png"}, {"question", "What is it?"}, {"choices", {"cat", "dog"}}, {"gold", "0"}};
}

DetectionRecord record(std::optional<bool> truth, double entropy) {
  DetectionRecord r;
  r.question_id = "q";
  r.is_hallucination_truth = truth;
  r.uncertainty.entropy = entropy;
  return r;
}

struct EpochGuard {
  EpochGuard() { setenv("SOURCE_DATE_EPOCH", "1700000000", 1); }
  ~EpochGuard() { unsetenv("SOURCE_DATE_EPOCH"); }
};

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    out.push_back(text.substr(pos, nl - pos));
    if (nl == std::string::npos) break;
    pos = nl + 1;
  }
  return out;
}

}  // namespace

TEST_CASE("choice markers are stripped only when they run in sequence") {
  std::vector<std::string> c{"A. cat", "B. dog", "C. bird"};
  CHECK_FALSE(strip_choice_markers(c));
  CHECK(c == std::vector<std::string>{"cat", "dog", "bird"});
  c = {"(1) cat", "(2) dog"};
  CHECK(strip_choice_markers(c) == 1);
  CHECK(c == std::vector<std::string>{"cat", "dog"});
  c = {"0: cat", "1: dog"};
  CHECK(strip_choice_markers(c) == 0);
  c = {"B. cat", "C. dog"};
  CHECK_FALSE(strip_choice_markers(c));
  CHECK(c.front() == "B. cat");
  c = {"A. cat", "dog"};
  strip_choice_markers(c);
  CHECK(c.front() == "A. cat");
  c = {"3.5 kg", "4.5 kg"};
  strip_choice_markers(c);
  CHECK(c.front() == "3.5 kg");
}

TEST_CASE("gold labels normalize to choice indices") {
  const std::vector<std::string> choices{"cat", "dog", "bird"};
  CHECK(normalize_gold("B", choices) == 1);
  CHECK(normalize_gold("(c)", choices) == 2);
  CHECK(normalize_gold("Dog", choices) == 1);
  CHECK(normalize_gold("2", choices) == 2);
  CHECK(normalize_gold("2", choices, 1) == 1);
  CHECK(normalize_gold("1", choices, 0) == 1);
  CHECK_FALSE(normalize_gold("D", choices));
  CHECK_FALSE(normalize_gold("7", choices));
  CHECK_FALSE(normalize_gold("0", choices, 1));
  CHECK_FALSE(normalize_gold("", choices));
  CHECK_FALSE(normalize_gold("penguin", choices));
}

TEST_CASE("gold normalization is a bijection onto choice indices") {
  Rng rng = make_rng({77});
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + uniform_below(rng, 8);
    std::vector<std::string> choices;
    for (std::size_t i = 0; i < n; ++i) choices.push_back("option " + std::to_string(rng() % 1000) + "-" + std::to_string(i));
    for (std::size_t i = 0; i < n; ++i) {
      const std::string letter(1, static_cast<char>('A' + i));
      CHECK(normalize_gold(letter, choices) == i);
      CHECK(normalize_gold(choices[i], choices) == i);
      CHECK(normalize_gold(std::to_string(i + 1), choices, 1) == i);
      CHECK(normalize_gold(std::to_string(i), choices, 0) == i);
    }
  }
}

TEST_CASE("ingest normalizes, resolves and rejects") {
  fixture::TempDir dir;
  json letter = sample_json("a");
  letter["choices"] = {"A. cat", "B. dog"};
  letter["gold"] = "B";
  json numbered = sample_json("b");
  numbered["choices"] = {"1) cat", "2) dog"};
  numbered["gold"] = 2;
  json no_image = sample_json("c");
  no_image.erase("image_path");
  json no_question = sample_json("d");
  no_question["question"] = "  ";
  json free = {{"id", 5}, {"image_path", "img.png"}, {"question", "Describe it."}, {"gold", "a cat"}, {"concise", true}};
  const auto path = write_dataset(dir, {letter.dump(), "", numbered.dump(), no_image.dump(), no_question.dump(), free.dump()});

  const auto r = ingest(path);
  CHECK(r.rejected_lines == std::vector<std::size_t>{4, 5});
  REQUIRE(r.samples.size() == 3);
  CHECK(r.samples[0].gold == "1");
  CHECK(r.samples[0].choices == std::vector<std::string>{"cat", "dog"});
  CHECK(r.samples[0].format == SampleFormat::multi_choice);
  CHECK(r.samples[0].image_path == dir / "img.png");
  CHECK(r.samples[1].gold == "1");
  CHECK(r.samples[1].line == 3);
  CHECK(r.samples[2].id == "5");
  CHECK(r.samples[2].format == SampleFormat::free_form);
  CHECK(r.samples[2].concise == true);
}

TEST_CASE("ingest schema errors carry the line number") {
  fixture::TempDir dir;
  auto expect_line = [&](const std::vector<std::string>& lines, std::size_t line) {
    const auto path = write_dataset(dir, lines);
    try {
      ingest(path);
      FAIL("expected SchemaError");
    } catch (const SchemaError& e) {
      CHECK(e.line() == line);
    }
  };
  const std::string good = sample_json("x").dump();
  expect_line({good, "{not json"}, 2);
  expect_line({"[1,2]"}, 1);
  expect_line({good, good}, 2);
  expect_line({json{{"image_path", "img.png"}, {"question", "q"}, {"gold", "0"}}.dump()}, 1);
  json bad_gold = sample_json("y");
  bad_gold["gold"] = "Z";
  expect_line({good, sample_json("z").dump(), bad_gold.dump()}, 3);
  json bad_format = sample_json("y");
  bad_format["format"] = "essay";
  expect_line({bad_format.dump()}, 1);
  json bad_base = sample_json("y");
  bad_base["marker_base"] = 2;
  expect_line({bad_base.dump()}, 1);

  json missing = sample_json("m");
  missing["image_path"] = "nope.png";
  const auto path = write_dataset(dir, {good, missing.dump()});
  try {
    ingest(path);
    FAIL("expected MissingImage");
  } catch (const MissingImage& e) {
    CHECK(e.line() == 2);
  }
  CHECK_THROWS_AS(ingest(dir / "absent.jsonl"), ConfigError);
}

TEST_CASE("prompt rendering") {
  BenchmarkSample mc{.id = "1", .image_path = {}, .question = "Which animal?", .format = SampleFormat::multi_choice,
                     .choices = {"cat", "dog"}, .gold = "0", .concise = {}, .line = 1};
  CHECK(render_prompt(mc) ==
        "Which animal?\n0. cat\n1. dog\nThis is a single choice question, answer only with choice number in 0,1.");
  CHECK(render_prompt(mc, "Name the animal.", false).starts_with("Name the animal.\n0. cat"));

  BenchmarkSample ff{.id = "2", .image_path = {}, .question = "Describe it.", .format = SampleFormat::free_form,
                     .choices = {}, .gold = "a cat", .concise = {}, .line = 1};
  CHECK(render_prompt(ff) == "Describe it.");
  CHECK(render_prompt(ff, true) ==
        "Describe it.\nNOTE: Provide only the final answer. Do not provide unrelated details.");
  ff.concise = false;
  CHECK(render_prompt(ff, true) == "Describe it.");
}

TEST_CASE("first standalone integer") {
  CHECK(first_standalone_integer("The answer is 1.") == "1");
  CHECK(first_standalone_integer("1") == "1");
  CHECK(first_standalone_integer("Option 2, not 3") == "2");
  CHECK(first_standalone_integer("3.5 then 2") == "2");
  CHECK(first_standalone_integer("Q1 looks like 0") == "0");
  CHECK(first_standalone_integer("(1)") == "1");
  CHECK_FALSE(first_standalone_integer("no digits"));
  CHECK_FALSE(first_standalone_integer("abc123 4x"));
}

TEST_CASE("correctness judging") {
  BenchmarkSample mc{.id = "1", .image_path = {}, .question = "q", .format = SampleFormat::multi_choice,
                     .choices = {"cat", "dog"}, .gold = "1", .concise = {}, .line = 1};
  CHECK(judge_correctness(mc, "1", nullptr));
  CHECK(judge_correctness(mc, "I pick 01", nullptr));
  CHECK_FALSE(judge_correctness(mc, "0", nullptr));
  CHECK_FALSE(judge_correctness(mc, "dog", nullptr));
  CHECK_FALSE(judge_correctness(mc, "   ", nullptr));

  BenchmarkSample ff{.id = "2", .image_path = {}, .question = "What animal?", .format = SampleFormat::free_form,
                     .choices = {}, .gold = "a cat", .concise = {}, .line = 1};
  CHECK_THROWS_AS(judge_correctness(ff, "a cat", nullptr), JudgeUnavailable);
  auto client = std::make_shared<ModelClient>(std::make_shared<MockBackend>(MockSpec::from_json(
      {{"rules",
        {{{"regex", "Candidate answer: (a )?(kitten|cat)\\n"}, {"response", "Yes."}},
         {{"regex", "Candidate answer: a dog"}, {"response", "No"}},
         {{"regex", "Candidate answer: hmm"}, {"response", "maybe"}}}}})));
  const CorrectnessJudge judge(client, "llm", profile_params("qwen2.5"));
  CHECK(judge.render("Q", "G", "A") ==
        "You are checking an answer against a reference.\nQuestion: Q\nReference answer: G\nCandidate answer: A\n"
        "Does the candidate answer agree with the reference answer? Respond only with yes or no.");
  CHECK(judge_correctness(ff, "a kitten", &judge));
  CHECK_FALSE(judge_correctness(ff, "a dog", &judge));
  CHECK_THROWS_AS(judge_correctness(ff, "hmm", &judge), JudgeUnavailable);
}

TEST_CASE("sweep grid boundaries") {
  const auto g5 = sweep_grid(5);
  CHECK(g5.size() == 34);
  CHECK(g5.front() == 0.0);
  CHECK(g5[1] == 0.05);
  CHECK(g5[32] == 1.6);
  CHECK(g5.back() == std::log(5.0));
  CHECK(sweep_grid(1) == std::vector<double>{0.0});
  const auto g2 = sweep_grid(2);
  CHECK(g2.size() == 15);
  CHECK(g2.back() == std::log(2.0));
}

TEST_CASE("report examples") {
  std::vector<DetectionRecord> recs{record(false, 0.0), record(false, 1.2), record(true, 1.61), record(true, 0.5),
                                    record(std::nullopt, 0.3)};
  const auto r = compute_report(recs, 2, 1.0, 5);
  CHECK(r.n_total == 4);
  CHECK(r.n_tp == 1);
  CHECK(r.n_fn == 1);
  CHECK(r.n_skipped == 2);
  CHECK(r.n_unlabeled == 1);
  CHECK(r.accuracy == 0.5);
  CHECK(r.sweep.front() == std::pair<double, double>{0.0, 0.75});
  CHECK(r.sweep.back().second == 0.75);
  CHECK(r.histogram.hallucinatory.size() == 17);
  CHECK(r.histogram.non_hallucinatory[0] == 1);
  CHECK(r.histogram.non_hallucinatory[12] == 1);
  CHECK(r.histogram.hallucinatory[16] == 1);
  CHECK(r.histogram.hallucinatory[5] == 1);

  CHECK(format_summary(r) ==
        "records    4\nskipped    2\nunlabeled  1\nthreshold  1\nn_tp       1\nn_fn       1\naccuracy   0.5\n");
  const auto csv = format_sweep_csv(r);
  CHECK(csv.starts_with("threshold,accuracy\n0,0.75\n0.05,0.75\n"));
  CHECK(lines_of(csv).size() == 35);
  const auto svg = render_histogram_svg(r);
  CHECK(svg.starts_with("<svg"));
  CHECK(svg.find("hallucinatory") != std::string::npos);

  CHECK_THROWS_AS(compute_report({}, 3, 1.0, 5), EmptyResults);
  CHECK_THROWS_AS(compute_report({record(std::nullopt, 0.1)}, 0, 1.0, 5), EmptyResults);
}

TEST_CASE("a record exactly at the threshold counts as non-hallucinatory") {
  const auto r = compute_report({record(false, 1.0), record(true, 1.0)}, 0, 1.0, 5);
  CHECK(r.n_tp == 1);
  CHECK(r.n_fn == 0);
  CHECK(r.accuracy == 0.5);
}

TEST_CASE("report accuracy matches the reference metric") {
  Rng rng = make_rng({31337});
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<DetectionRecord> recs;
    std::vector<std::pair<bool, double>> labeled;
    const std::size_t count = 1 + uniform_below(rng, 40);
    for (std::size_t i = 0; i < count; ++i) {
      const bool truth = uniform_below(rng, 2) == 1;
      // Snap some entropies onto the grid so ties with the threshold occur.
      const double e = uniform_below(rng, 3) == 0 ? static_cast<double>(uniform_below(rng, 33)) / 20.0
                                                  : uniform01(rng) * std::log(5.0);
      recs.push_back(record(truth, e));
      labeled.emplace_back(truth, e);
    }
    const double t = static_cast<double>(uniform_below(rng, 33)) / 20.0;
    const auto r = compute_report(recs, 0, t, 5);
    CHECK(r.accuracy == doctest::Approx(oracle::accuracy(labeled, t)).epsilon(1e-15));
    CHECK(r.n_tp + r.n_fn <= r.n_total);
    for (const auto& [th, acc] : r.sweep) CHECK(acc == doctest::Approx(oracle::accuracy(labeled, th)).epsilon(1e-15));
    int binned = 0;
    for (int c : r.histogram.hallucinatory) binned += c;
    for (int c : r.histogram.non_hallucinatory) binned += c;
    CHECK(binned == static_cast<int>(count));
  }
}

TEST_CASE("end-to-end run on four synthetic samples") {
  EpochGuard epoch;
  fixture::TempDir dir;
  const auto set = fixture::make_synthetic(dir.path(), {{fixture::Behaviour::stable, true},
                                                       {fixture::Behaviour::divergent, true},
                                                       {fixture::Behaviour::stable, false},
                                                       {fixture::Behaviour::divergent, false}});
  const auto out = dir / "results.jsonl";
  const auto summary = run(set.dataset, set.config, out);
  CHECK(summary.written == 4);
  CHECK(summary.complete);

  const auto results = read_results(out);
  REQUIRE(results.records.size() == 4);
  CHECK(results.records[0].question_id == "Q01");
  CHECK(results.records[0].uncertainty.entropy == 0.0);
  CHECK(results.records[1].uncertainty.entropy == doctest::Approx(std::log(5.0)).epsilon(1e-12));
  CHECK(results.records[2].is_hallucination_truth == true);
  CHECK(results.manifest["config"] == set.config.to_json());
  CHECK(results.manifest["digest"] == manifest_digest(results.manifest));

  const auto r = report(out, dir / "report");
  CHECK(r.accuracy == 0.5);
  CHECK(r.n_tp == 1);
  CHECK(r.n_fn == 1);
  CHECK(std::filesystem::exists(dir / "report/summary.txt"));
  CHECK(std::filesystem::exists(dir / "report/sweep.csv"));
  CHECK(std::filesystem::exists(dir / "report/histogram.svg"));
  CHECK(report(out, std::nullopt, 2.0).accuracy == 0.5);
  CHECK(report(out, std::nullopt, 0.0).accuracy == 0.5);

  SUBCASE("a rerun touches nothing") {
    const std::string before = fixture::read_text(out);
    // Any backend call would now fail and show up as a skipped line.
    fixture::write_text(set.target_spec, R"({"rules":[{"match":"*","error":"unavailable"}]})");
    const auto again = run(set.dataset, set.config, out);
    CHECK(again.resumed == 4);
    CHECK(again.written == 0);
    CHECK(again.skipped == 0);
    CHECK(fixture::read_text(out) == before);
  }
  SUBCASE("identical inputs give byte-identical results") {
    const auto second = dir / "second.jsonl";
    run(set.dataset, set.config, second);
    CHECK(fixture::read_text(second) == fixture::read_text(out));
  }
  SUBCASE("a different configuration refuses to append") {
    Config other = set.config;
    other.pipeline.threshold = 0.5;
    CHECK_THROWS_AS(run(set.dataset, other, out), ConfigError);
  }
  SUBCASE("the manifest config reloads to the same configuration") {
    Config reloaded = Config::load(out);
    CHECK(reloaded.to_json() == set.config.to_json());
  }
}

TEST_CASE("interrupted runs resume, including after a torn line") {
  EpochGuard epoch;
  fixture::TempDir dir;
  const auto set = fixture::make_synthetic(dir.path(), fixture::mixed_twenty());
  const auto full = dir / "full.jsonl";
  run(set.dataset, set.config, full);

  const auto partial = dir / "partial.jsonl";
  auto first = run(set.dataset, set.config, partial, {.limit = 7});
  CHECK(first.written == 7);
  CHECK_FALSE(first.complete);
  {
    std::ofstream torn(partial, std::ios::app | std::ios::binary);
    torn << R"({"question_id":"Q08","initial_ans)";
  }
  auto rest = run(set.dataset, set.config, partial);
  CHECK(rest.resumed == 7);
  CHECK(rest.written == 13);
  CHECK(rest.complete);
  CHECK(fixture::read_text(partial) == fixture::read_text(full));
}

TEST_CASE("backend failures") {
  fixture::TempDir dir;
  const auto set = fixture::make_synthetic(dir.path(), {{fixture::Behaviour::stable, true}, {fixture::Behaviour::stable, false}});
  Config cfg = set.config;
  cfg.runtime.max_attempts = 1;

  SUBCASE("every sample failing is reported as unavailable") {
    fixture::write_text(set.target_spec, R"({"rules":[{"match":"*","error":"transient"}]})");
    CHECK_THROWS_AS(run(set.dataset, cfg, dir / "r.jsonl"), BackendUnavailable);
    const auto rf = read_results(dir / "r.jsonl");
    CHECK(rf.skipped == 2);
  }
  SUBCASE("authentication failures abort") {
    fixture::write_text(set.target_spec, R"({"rules":[{"match":"*","error":"auth"}]})");
    CHECK_THROWS_AS(run(set.dataset, cfg, dir / "r.jsonl"), AuthError);
  }
  SUBCASE("one bad sample is skipped") {
    fixture::write_text(set.target_spec,
                        R"({"rules":[{"regex":"^Q01:","error":"unavailable"},{"regex":"^Q02:","response":"0"}]})");
    const auto s = run(set.dataset, cfg, dir / "r.jsonl");
    CHECK(s.written == 1);
    CHECK(s.skipped == 1);
    const auto rf = read_results(dir / "r.jsonl");
    CHECK(rf.skipped == 1);
    CHECK(rf.records.front().question_id == "Q02");
  }
}

TEST_CASE("ingest rejections are counted in the run summary") {
  EpochGuard epoch;
  fixture::TempDir dir;
  const auto set = fixture::make_synthetic(dir.path(), {{fixture::Behaviour::stable, true}});
  std::string text = fixture::read_text(set.dataset);
  text += R"({"id":"nq","image_path":"images/Q01.png","gold":"0","choices":["a","b"]})" "\n";
  fixture::write_text(set.dataset, text);
  const auto s = run(set.dataset, set.config, dir / "r.jsonl");
  CHECK(s.rejected == 1);
  CHECK(s.written == 1);
}
