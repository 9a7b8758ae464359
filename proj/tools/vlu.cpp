// Command-line front end: run, detect-one, perturb, report and cache.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vlu/config.hpp"
#include "vlu/errors.hpp"
#include "vlu/harness.hpp"
#include "vlu/image.hpp"
#include "vlu/perturb_textual.hpp"
#include "vlu/perturb_visual.hpp"
#include "vlu/pipeline.hpp"
#include "vlu/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitBackend = 3;

struct Flags {
  std::optional<std::string> config;
  std::optional<std::string> backend_url;
  std::optional<std::string> model;
  std::optional<std::string> helper_url;
  std::optional<std::string> helper_model;
  std::optional<double> threshold;
  std::optional<int> n;
  std::vector<double> blur_radii;
  std::vector<double> rephrase_temps;
  std::optional<std::string> pairing;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> cache_dir;
  std::optional<int> workers;
  std::optional<double> sample_temperature;
  std::optional<std::string> dump_perturbed;
  std::optional<std::string> rephrase_instruction;

  std::string dataset;
  std::string out;
  std::string results;
  std::string image;
  std::string question;
  std::optional<std::size_t> limit;
};

void add_config_flags(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "TOML/JSON config or a results file whose manifest is reused");
  app->add_option("--backend-url", f.backend_url, "target backend: http(s) URL, mock:echo, mock:const:<text> or mock:<spec.json>");
  app->add_option("--model", f.model, "target model id");
  app->add_option("--helper-url", f.helper_url, "helper backend for rephrasing, entailment and judging");
  app->add_option("--helper-model", f.helper_model, "helper model id");
  app->add_option("--threshold", f.threshold, "entropy threshold in nats");
  app->add_option("--n", f.n, "number of perturbation degrees");
  app->add_option("--blur-radii", f.blur_radii, "comma-separated blur radii")->delimiter(',');
  app->add_option("--rephrase-temps", f.rephrase_temps, "comma-separated rephrase temperatures")->delimiter(',');
  app->add_option("--pairing", f.pairing, "aligned, reversed, rotated(k) or shuffled(seed)");
  app->add_option("--seed", f.seed, "seed for stochastic perturbations");
  app->add_option("--cache-dir", f.cache_dir, "response cache directory");
  app->add_option("--workers", f.workers, "samples processed in parallel");
  app->add_option("--sample-temperature", f.sample_temperature, "target temperature for the perturbed samples");
  app->add_option("--dump-perturbed", f.dump_perturbed, "write perturbed images and questions below this directory");
  app->add_option("--rephrase-instruction", f.rephrase_instruction, "instruction preset name or template file");
}

vlu::Config build_config(const Flags& f) {
  vlu::Config cfg = f.config ? vlu::Config::load(*f.config) : vlu::Config();
  if (f.backend_url) cfg.target.url = *f.backend_url;
  if (f.model) cfg.target.model = *f.model;
  if (f.helper_url) cfg.helper.url = *f.helper_url;
  if (f.helper_model) cfg.helper.model = *f.helper_model;
  if (f.threshold) cfg.pipeline.threshold = *f.threshold;
  if (f.n) cfg.pipeline.n = *f.n;
  if (!f.blur_radii.empty()) vlu::set_blur_radii(cfg, f.blur_radii);
  if (!f.rephrase_temps.empty()) vlu::set_rephrase_temperatures(cfg, f.rephrase_temps);
  if (f.pairing) cfg.pipeline.pairing = vlu::PairingPolicy::parse(*f.pairing);
  if (f.seed) cfg.seed = *f.seed;
  if (f.cache_dir) cfg.runtime.cache_dir = *f.cache_dir;
  if (f.workers) cfg.runtime.workers = *f.workers;
  if (f.sample_temperature) cfg.pipeline.sample_temperature = *f.sample_temperature;
  if (f.dump_perturbed) cfg.runtime.dump_dir = *f.dump_perturbed;
  if (f.rephrase_instruction) cfg.pipeline.textual.instruction = vlu::resolve_instruction(*f.rephrase_instruction);
  cfg.apply_environment();
  cfg.validate();
  return cfg;
}

int cmd_run(const Flags& f) {
  const vlu::Config cfg = build_config(f);
  vlu::RunOptions opts;
  if (f.limit) opts.limit = *f.limit;
  const vlu::RunSummary s = vlu::run(f.dataset, cfg, f.out, opts);
  std::cerr << "wrote " << s.written << " records, " << s.skipped << " skipped, " << s.resumed << " resumed, "
            << s.rejected << " rejected at ingestion" << (s.complete ? "" : " (incomplete)") << "\n";
  try {
    std::cout << vlu::format_summary(vlu::report(f.out, std::nullopt));
  } catch (const vlu::EmptyResults&) {
    std::cout << "no labeled records yet\n";
  }
  return 0;
}

int cmd_detect_one(const Flags& f) {
  const vlu::Config cfg = build_config(f);
  const vlu::RasterImage image = vlu::load_image(f.image);
  const vlu::Runtime rt = vlu::make_runtime(cfg);
  const vlu::AnswerSample initial =
      vlu::initial_answer(image, f.question, rt.context.target, rt.context.settings.initial_temperature);
  vlu::EstimateOptions opts;
  opts.initial = &initial;
  opts.dump_tag = "detect-one";
  const vlu::UncertaintyEstimate est = vlu::estimate_uncertainty(image, f.question, rt.context, opts);
  const bool hallucinatory = vlu::predicts_hallucination(est.score.entropy, cfg.pipeline.threshold);

  json samples = json::array();
  for (const auto& s : est.samples) samples.push_back(s.text);
  const json out = {{"entropy", est.score.entropy},
                    {"verdict", hallucinatory ? "hallucinatory" : "non-hallucinatory"},
                    {"threshold", cfg.pipeline.threshold},
                    {"num_clusters", est.score.num_clusters},
                    {"num_samples", est.score.num_samples},
                    {"clusters", est.clusters},
                    {"initial_answer", initial.text},
                    {"questions", est.questions},
                    {"samples", samples}};
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_perturb(const Flags& f) {
  const vlu::Config cfg = build_config(f);
  if (f.image.empty() && f.question.empty()) throw vlu::ConfigError("perturb needs --image and/or --question");
  const vlu::PipelineSettings settings = cfg.settings();
  fs::create_directories(f.out);
  if (!f.image.empty()) {
    const auto images = vlu::apply_schedule(vlu::load_image(f.image), settings.visual);
    const auto names = vlu::dump_names(settings.visual);
    for (std::size_t i = 0; i < images.size(); ++i) {
      const fs::path p = fs::path(f.out) / (names[i] + ".png");
      vlu::save_png(images[i], p);
      std::cout << p.string() << "\n";
    }
  }
  if (!f.question.empty()) {
    const vlu::Runtime rt = vlu::make_runtime(cfg);
    const auto texts = vlu::apply_text_schedule(f.question, settings.textual, rt.context.helper.get(), rt.context.rephrase);
    std::string lines;
    for (const auto& q : texts.questions) lines += q + "\n";
    const fs::path p = fs::path(f.out) / "questions.txt";
    vlu::write_file_atomic(p, lines);
    std::cout << p.string() << "\n";
  }
  return 0;
}

int cmd_report(const Flags& f) {
  std::optional<fs::path> out;
  if (!f.out.empty()) out = f.out;
  const vlu::AccuracyReport r = vlu::report(f.results, out, f.threshold);
  std::cout << vlu::format_summary(r);
  return 0;
}

std::optional<fs::path> cache_dir(const Flags& f) {
  vlu::Config cfg = f.config ? vlu::Config::load(*f.config) : vlu::Config();
  if (f.cache_dir) cfg.runtime.cache_dir = *f.cache_dir;
  cfg.apply_environment();
  return cfg.runtime.cache_dir;
}

int cmd_cache(const Flags& f, bool clear) {
  const auto dir = cache_dir(f);
  if (!dir) throw vlu::ConfigError("no cache directory (use --cache-dir or VLU_CACHE_DIR)");
  const vlu::ResponseCache cache(*dir);
  if (clear) {
    std::cout << "removed " << cache.clear() << " entries from " << dir->string() << "\n";
  } else {
    std::cout << "dir      " << dir->string() << "\nentries  " << cache.entry_count() << "\n";
  }
  return 0;
}

template <class F>
int guarded(F&& body) {
  try {
    return body();
  } catch (const vlu::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const vlu::SchemaError& e) {
    std::cerr << "dataset error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const vlu::MissingImage& e) {
    std::cerr << "dataset error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const vlu::ImageError& e) {
    std::cerr << "image error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const vlu::EmptyResults& e) {
    std::cerr << "report error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const vlu::BackendError& e) {
    std::cerr << "backend error: " << e.what() << "\n";
    return kExitBackend;
  } catch (const vlu::UncertaintyUnavailable& e) {
    std::cerr << "backend error: " << e.what() << "\n";
    return kExitBackend;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hallucination detection for vision-language models via perturbed-prompt uncertainty", "vlu"};
  app.set_version_flag("--version", std::string(VLU_VERSION));
  app.require_subcommand(1);
  Flags f;

  auto* run = app.add_subcommand("run", "evaluate a JSONL dataset and append records to a results file");
  add_config_flags(run, f);
  run->add_option("--dataset", f.dataset, "dataset JSONL")->required();
  run->add_option("--out", f.out, "results JSONL (resumed when it already exists)")->required();
  run->add_option("--limit", f.limit, "stop after this many new records");

  auto* detect = app.add_subcommand("detect-one", "score a single image and question");
  add_config_flags(detect, f);
  detect->add_option("--image", f.image, "image file")->required();
  detect->add_option("--question", f.question, "question text")->required();

  auto* perturb = app.add_subcommand("perturb", "write the perturbed images and questions of a schedule");
  add_config_flags(perturb, f);
  perturb->add_option("--image", f.image, "image file");
  perturb->add_option("--question", f.question, "question text");
  perturb->add_option("--out", f.out, "output directory")->required();

  auto* rep = app.add_subcommand("report", "accuracy, threshold sweep and histogram of a results file");
  rep->add_option("--results", f.results, "results JSONL")->required();
  rep->add_option("--out", f.out, "directory for summary.txt, sweep.csv and histogram.svg");
  rep->add_option("--threshold", f.threshold, "score at this threshold instead of the recorded one");

  auto* cache = app.add_subcommand("cache", "inspect or clear the response cache");
  cache->require_subcommand(1);
  auto* stats = cache->add_subcommand("stats", "print the number of cached responses");
  auto* clear = cache->add_subcommand("clear", "delete every cached response");
  for (auto* sub : {stats, clear}) {
    sub->add_option("--cache-dir", f.cache_dir, "response cache directory");
    sub->add_option("--config", f.config, "config providing runtime.cache_dir");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  if (*run) return guarded([&] { return cmd_run(f); });
  if (*detect) return guarded([&] { return cmd_detect_one(f); });
  if (*perturb) return guarded([&] { return cmd_perturb(f); });
  if (*rep) return guarded([&] { return cmd_report(f); });
  if (*stats) return guarded([&] { return cmd_cache(f, false); });
  if (*clear) return guarded([&] { return cmd_cache(f, true); });
  return kExitConfig;
}
