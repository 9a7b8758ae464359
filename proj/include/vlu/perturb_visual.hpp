#pragma once

// Degree-ordered image perturbations: Gaussian blur (semantic-equivalent) and
// the inequivalent transforms used for ablations.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vlu/image.hpp"

namespace vlu {

enum class VisualKind {
  blur,
  rotation,
  flipping,
  shifting,
  cropping,
  erasing,
  gaussian_noise,
  dropout,
  salt_and_pepper,
  sharpen,
  brightness,
  contrast,
  composite,
};

std::string_view to_string(VisualKind kind);
/// Throws UnsupportedKind for unknown names.
VisualKind parse_visual_kind(std::string_view name);
/// True for kinds that draw from the seeded generator.
bool is_stochastic(VisualKind kind);

enum class Axis { horizontal, vertical };

std::string_view to_string(Axis axis);
Axis parse_axis(std::string_view name);

/// One transform application.
///
/// Degree meaning per kind: blur radius (sigma); rotation angle in degrees,
/// counter-clockwise; flipping 0 = left-right mirror, 1 = top-bottom mirror;
/// shifting pixels along `axis` (positive = up or right, vacated pixels
/// replicate the edge); cropping kept fraction of each side (center crop);
/// erasing side length of a black square at a seeded position; gaussian_noise
/// std-dev as a fraction of 255; dropout / salt_and_pepper per-pixel rate of
/// black / white pixels; sharpen blend factor; brightness and contrast
/// multiplicative factors.
struct VisualStep {
  VisualKind kind = VisualKind::blur;
  double degree = 1.0;
  Axis axis = Axis::vertical;
};

/// One stage of a composite schedule; degrees has length N or 1 (constant).
struct VisualStage {
  VisualKind kind = VisualKind::blur;
  std::vector<double> degrees;
  std::vector<Axis> axes;
};

struct VisualSchedule {
  VisualKind kind = VisualKind::blur;
  std::vector<double> degrees;
  /// Per-degree axis for shifting; empty means vertical throughout.
  std::vector<Axis> axes;
  /// Only for composite: stages applied in order at every degree.
  std::vector<VisualStage> stages;
  std::uint64_t seed = 0;

  std::size_t size() const;
  /// Throws InvalidSchedule.
  void validate() const;
  /// The transform chain for degree index i (0-based).
  std::vector<VisualStep> steps_at(std::size_t i) const;

  /// Blur with radii 0.6, 0.8, 1.0, 1.2, 1.4.
  static VisualSchedule standard();
  /// Named ablation presets: any single kind, or rotate_shift, crop_flip, rotate_blur, crop_blur.
  static VisualSchedule preset(std::string_view name);
};

std::vector<double> gaussian_kernel(double sigma);

/// Separable Gaussian blur with sigma = radius, half-width ceil(3 sigma),
/// replicated edges and round-half-away-from-zero. Throws InvalidRadius.
RasterImage blur(const RasterImage& img, double radius);

/// Applies one transform; stochastic kinds draw from a generator seeded with (seed, stream).
/// Throws InvalidDegree outside the documented range.
RasterImage ablation_transform(const RasterImage& img, const VisualStep& step, std::uint64_t seed,
                               std::uint64_t stream = 0);
/// Applies steps in order; step k draws from a generator seeded with (seed, stream, k).
RasterImage composite_transform(const RasterImage& img, std::span<const VisualStep> steps, std::uint64_t seed,
                                std::uint64_t stream = 0);

/// Element i perturbs the original image at degree i.
std::vector<RasterImage> apply_schedule(const RasterImage& img, const VisualSchedule& sched);

/// File stems for dumped images: "<kind>_<degree>" (blur_0.6), with the axis for
/// shifting, "composite_<i>" for composites and a "_<i>" suffix on repeats.
std::vector<std::string> dump_names(const VisualSchedule& sched);

/// Sum of absolute differences between horizontally and vertically adjacent samples.
double total_variation(const RasterImage& img);

}  // namespace vlu
