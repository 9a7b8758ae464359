#pragma once

// Temporary directories, random images and the synthetic mock-backed benchmark.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vlu/config.hpp"
#include "vlu/image.hpp"

namespace fixture {

class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

vlu::RasterImage random_image(int width, int height, std::uint64_t seed);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

/// How the mock target answers one synthetic question.
enum class Behaviour {
  stable,       // same answer every time: entropy 0
  split_low,    // sizes {3,2}: entropy 0.673
  split_high,   // sizes {2,2,1}: entropy 1.055
  divergent,    // five distinct answers: entropy ln 5
  pooled,       // seeded draws from a large pool of distinct answers
};

struct SyntheticItem {
  Behaviour behaviour = Behaviour::stable;
  /// Whether the low-temperature initial answer is the gold choice.
  bool initial_correct = true;
};

struct SyntheticSet {
  std::filesystem::path dataset;
  std::filesystem::path target_spec;
  std::filesystem::path config_toml;
  vlu::Config config;
  std::vector<SyntheticItem> items;
};

/// Writes images, dataset.jsonl, target.json and config.toml below dir. Gold labels use a mix of
/// letter and numeric markers so ingestion normalization is exercised.
SyntheticSet make_synthetic(const std::filesystem::path& dir, const std::vector<SyntheticItem>& items,
                            std::uint64_t mock_seed = 7);

/// 20 items, exactly 13 of which the threshold-1 detector labels correctly.
std::vector<SyntheticItem> thirteen_of_twenty();
/// 20 items cycling through every behaviour.
std::vector<SyntheticItem> mixed_twenty();

}  // namespace fixture
