#include "fixtures.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>
#include <unistd.h>

#include "vlu/random.hpp"

namespace fixture {

using nlohmann::json;

TempDir::TempDir() {
  std::string tmpl = (std::filesystem::temp_directory_path() / "vlu-test-XXXXXX").string();
  if (mkdtemp(tmpl.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
  path_ = tmpl;
}

TempDir::~TempDir() {
  if (std::getenv("VLU_KEEP_TMP")) return;
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

vlu::RasterImage random_image(int width, int height, std::uint64_t seed) {
  vlu::Rng rng = vlu::make_rng({seed, 0xfeed});
  vlu::RasterImage img(width, height);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(vlu::uniform_below(rng, 256));
  return img;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

json target_rule(const std::string& tag, const SyntheticItem& item, int gold) {
  const std::string right = std::to_string(gold);
  const std::string wrong = std::to_string(1 - gold);
  json rule = {{"regex", "^" + tag + ":"}, {"response", "The answer is " + (item.initial_correct ? right : wrong) + "."}};
  switch (item.behaviour) {
    case Behaviour::stable:
      break;
    case Behaviour::split_low:
      rule["sequence"] = {"0", "0", "0", "1", "1"};
      break;
    case Behaviour::split_high:
      rule["sequence"] = {"0", "0", "1", "1", "none"};
      break;
    case Behaviour::divergent:
      rule["sequence"] = {"0", "1", "a cat", "a dog", "unsure"};
      break;
    case Behaviour::pooled: {
      json pool = json::array();
      for (int k = 0; k < 1000; ++k) pool.push_back({"guess " + std::to_string(k), 1.0});
      rule["pool"] = pool;
      rule["pool_min_temperature"] = 0.5;
      break;
    }
  }
  return rule;
}

}  // namespace

SyntheticSet make_synthetic(const std::filesystem::path& dir, const std::vector<SyntheticItem>& items,
                            std::uint64_t mock_seed) {
  std::filesystem::create_directories(dir / "images");
  SyntheticSet set;
  set.items = items;
  set.dataset = dir / "dataset.jsonl";
  set.target_spec = dir / "target.json";
  set.config_toml = dir / "config.toml";

  std::string lines;
  json rules = json::array();
  for (std::size_t i = 0; i < items.size(); ++i) {
    char tag[16];
    std::snprintf(tag, sizeof tag, "Q%02zu", i + 1);
    const std::string image = std::string("images/") + tag + ".png";
    vlu::save_png(random_image(12 + static_cast<int>(i % 5), 10 + static_cast<int>(i % 3), i), dir / image);
    const int gold = static_cast<int>(i % 2);
    json sample = {{"id", tag},
                   {"image_path", image},
                   {"question", std::string(tag) + ": which animal is in the picture?"},
                   {"format", "multi_choice"}};
    switch (i % 3) {
      case 0:
        sample["choices"] = {"A. cat", "B. dog"};
        sample["gold"] = gold ? "B" : "A";
        break;
      case 1:
        sample["choices"] = {"cat", "dog"};
        sample["gold"] = std::to_string(gold + 1);
        sample["marker_base"] = 1;
        break;
      default:
        sample["choices"] = {"cat", "dog"};
        sample["gold"] = gold ? "dog" : "cat";
        break;
    }
    lines += sample.dump() + "\n";
    rules.push_back(target_rule(tag, items[i], gold));
  }
  write_text(set.dataset, lines);
  write_text(set.target_spec, json{{"seed", mock_seed}, {"rules", rules}}.dump(2));

  vlu::Config& c = set.config;
  c.target = {"mock:" + set.target_spec.string(), "mock-vlm", "default", {}};
  c.helper = {"mock:echo", "mock-llm", "qwen2.5", {}};
  c.oracle = "exact";
  c.runtime.workers = 4;
  c.runtime.backoff_ms = 0;

  std::ostringstream toml;
  toml << "[target]\nurl = \"" << c.target.url << "\"\nmodel = \"mock-vlm\"\nprofile = \"default\"\n\n"
       << "[helper]\nurl = \"mock:echo\"\nmodel = \"mock-llm\"\n\n"
       << "[oracle]\nkind = \"exact\"\n\n"
       << "[runtime]\nworkers = 4\nbackoff_ms = 0\n";
  write_text(set.config_toml, toml.str());
  return set;
}

std::vector<SyntheticItem> thirteen_of_twenty() {
  std::vector<SyntheticItem> v;
  auto add = [&](int count, Behaviour b, bool correct) {
    for (int i = 0; i < count; ++i) v.push_back({b, correct});
  };
  // Correctly labeled: 5 + 2 + 4 + 2 = 13.
  add(5, Behaviour::stable, true);
  add(2, Behaviour::split_low, true);
  add(4, Behaviour::divergent, false);
  add(2, Behaviour::split_high, false);
  // Mislabeled: 3 + 2 + 2 = 7.
  add(3, Behaviour::divergent, true);
  add(2, Behaviour::split_high, true);
  add(2, Behaviour::stable, false);
  // Interleave so the order carries no information.
  std::vector<SyntheticItem> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(v[(i * 7) % v.size()]);
  return out;
}

std::vector<SyntheticItem> mixed_twenty() {
  const Behaviour all[] = {Behaviour::stable, Behaviour::split_low, Behaviour::split_high, Behaviour::divergent,
                           Behaviour::pooled};
  std::vector<SyntheticItem> v;
  for (int i = 0; i < 20; ++i) v.push_back({all[i % 5], (i / 5) % 2 == 0});
  return v;
}

}  // namespace fixture
