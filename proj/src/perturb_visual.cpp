#include "vlu/perturb_visual.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <utility>

#include "vlu/errors.hpp"
#include "vlu/random.hpp"
#include "vlu/util.hpp"

namespace vlu {

namespace {

constexpr std::array<std::pair<VisualKind, std::string_view>, 13> kKindNames{{
    {VisualKind::blur, "blur"},
    {VisualKind::rotation, "rotation"},
    {VisualKind::flipping, "flipping"},
    {VisualKind::shifting, "shifting"},
    {VisualKind::cropping, "cropping"},
    {VisualKind::erasing, "erasing"},
    {VisualKind::gaussian_noise, "gaussian_noise"},
    {VisualKind::dropout, "dropout"},
    {VisualKind::salt_and_pepper, "salt_and_pepper"},
    {VisualKind::sharpen, "sharpen"},
    {VisualKind::brightness, "brightness"},
    {VisualKind::contrast, "contrast"},
    {VisualKind::composite, "composite"},
}};

constexpr double kMaxRadius = 256.0;

std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0)); }

int clamp_index(int i, int n) { return std::clamp(i, 0, n - 1); }

bool is_integer(double d) { return std::isfinite(d) && d == std::floor(d); }

void check_degree(const VisualStep& step) {
  const double d = step.degree;
  auto fail = [&](std::string_view range) {
    throw InvalidDegree(std::string(to_string(step.kind)) + " degree " + format_degree(d) + " outside " +
                        std::string(range));
  };
  if (!std::isfinite(d)) fail("finite values");
  switch (step.kind) {
    case VisualKind::blur:
      if (!(d > 0.0) || d > kMaxRadius) throw InvalidRadius("blur radius must be in (0, 256], got " + format_degree(d));
      break;
    case VisualKind::rotation:
      if (d < -360.0 || d > 360.0) fail("[-360, 360]");
      break;
    case VisualKind::flipping:
      if (d != 0.0 && d != 1.0) fail("{0 (left-right), 1 (top-bottom)}");
      break;
    case VisualKind::shifting:
      if (!is_integer(d) || std::abs(d) > 100000.0) fail("integer pixels with |d| <= 100000");
      break;
    case VisualKind::cropping:
      if (!(d > 0.0 && d <= 1.0)) fail("(0, 1]");
      break;
    case VisualKind::erasing:
      if (!is_integer(d) || d < 1.0 || d > 100000.0) fail("integer pixels in [1, 100000]");
      break;
    case VisualKind::gaussian_noise:
    case VisualKind::sharpen:
      if (!(d > 0.0 && d <= 1.0)) fail("(0, 1]");
      break;
    case VisualKind::dropout:
    case VisualKind::salt_and_pepper:
      if (!(d > 0.0 && d < 1.0)) fail("(0, 1)");
      break;
    case VisualKind::brightness:
    case VisualKind::contrast:
      if (!(d > 0.0 && d <= 4.0)) fail("(0, 4]");
      break;
    case VisualKind::composite:
      throw UnsupportedKind("composite is not a single transform");
  }
}

RasterImage rotate(const RasterImage& img, double degrees) {
  RasterImage out(img.width, img.height, 0);
  const double theta = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(theta);
  const double sn = std::sin(theta);
  const double cx = (img.width - 1) / 2.0;
  const double cy = (img.height - 1) / 2.0;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double dx = x - cx;
      const double dy = y - cy;
      // Inverse map for a counter-clockwise rotation of the content (y axis points down).
      const double sx = cx + dx * cs - dy * sn;
      const double sy = cy + dx * sn + dy * cs;
      if (sx < -1e-9 || sy < -1e-9 || sx > img.width - 1 + 1e-9 || sy > img.height - 1 + 1e-9) continue;
      const int x0 = clamp_index(static_cast<int>(std::floor(sx)), img.width);
      const int y0 = clamp_index(static_cast<int>(std::floor(sy)), img.height);
      const int x1 = clamp_index(x0 + 1, img.width);
      const int y1 = clamp_index(y0 + 1, img.height);
      const double fx = std::clamp(sx - x0, 0.0, 1.0);
      const double fy = std::clamp(sy - y0, 0.0, 1.0);
      for (int c = 0; c < 3; ++c) {
        const double top = img.at(x0, y0, c) * (1 - fx) + img.at(x1, y0, c) * fx;
        const double bottom = img.at(x0, y1, c) * (1 - fx) + img.at(x1, y1, c) * fx;
        out.at(x, y, c) = to_u8(top * (1 - fy) + bottom * fy);
      }
    }
  }
  return out;
}

RasterImage flip(const RasterImage& img, bool top_bottom) {
  RasterImage out(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const int sx = top_bottom ? x : img.width - 1 - x;
      const int sy = top_bottom ? img.height - 1 - y : y;
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = img.at(sx, sy, c);
    }
  }
  return out;
}

RasterImage shift(const RasterImage& img, int pixels, Axis axis) {
  RasterImage out(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const int sx = axis == Axis::horizontal ? clamp_index(x - pixels, img.width) : x;
      const int sy = axis == Axis::vertical ? clamp_index(y + pixels, img.height) : y;
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = img.at(sx, sy, c);
    }
  }
  return out;
}

RasterImage center_crop(const RasterImage& img, double ratio) {
  const int w = std::max(1, static_cast<int>(std::floor(ratio * img.width + 1e-9)));
  const int h = std::max(1, static_cast<int>(std::floor(ratio * img.height + 1e-9)));
  const int x0 = (img.width - w) / 2;
  const int y0 = (img.height - h) / 2;
  RasterImage out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = img.at(x0 + x, y0 + y, c);
    }
  }
  return out;
}

RasterImage erase(const RasterImage& img, int side, Rng& rng) {
  RasterImage out = img;
  const int x0 = static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(std::max(1, img.width - side + 1))));
  const int y0 = static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(std::max(1, img.height - side + 1))));
  for (int y = y0; y < std::min(img.height, y0 + side); ++y) {
    for (int x = x0; x < std::min(img.width, x0 + side); ++x) {
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = 0;
    }
  }
  return out;
}

RasterImage add_noise(const RasterImage& img, double scale, Rng& rng) {
  RasterImage out = img;
  const double sd = scale * 255.0;
  for (auto& p : out.pixels) p = to_u8(p + sd * standard_normal(rng));
  return out;
}

RasterImage replace_pixels(const RasterImage& img, double rate, std::uint8_t value, Rng& rng) {
  RasterImage out = img;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      if (uniform01(rng) < rate) {
        for (int c = 0; c < 3; ++c) out.at(x, y, c) = value;
      }
    }
  }
  return out;
}

RasterImage sharpen(const RasterImage& img, double alpha) {
  // Blend of identity and a lightness-1 Laplacian sharpening kernel; weights sum to 1.
  const double centre = (1.0 - alpha) + alpha * 9.0;
  const double ring = -alpha;
  RasterImage out(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const double w = (dx == 0 && dy == 0) ? centre : ring;
            acc += w * img.at(clamp_index(x + dx, img.width), clamp_index(y + dy, img.height), c);
          }
        }
        out.at(x, y, c) = to_u8(acc);
      }
    }
  }
  return out;
}

RasterImage scale_brightness(const RasterImage& img, double factor) {
  RasterImage out = img;
  for (auto& p : out.pixels) p = to_u8(p * factor);
  return out;
}

RasterImage scale_contrast(const RasterImage& img, double factor) {
  double mean = 0.0;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      mean += 0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) + 0.114 * img.at(x, y, 2);
    }
  }
  mean /= static_cast<double>(img.width) * img.height;
  RasterImage out = img;
  for (auto& p : out.pixels) p = to_u8(factor * p + (1.0 - factor) * mean);
  return out;
}

RasterImage apply_step(const RasterImage& img, const VisualStep& step, Rng& rng) {
  check_degree(step);
  switch (step.kind) {
    case VisualKind::blur:
      return blur(img, step.degree);
    case VisualKind::rotation:
      return rotate(img, step.degree);
    case VisualKind::flipping:
      return flip(img, step.degree == 1.0);
    case VisualKind::shifting:
      return shift(img, static_cast<int>(step.degree), step.axis);
    case VisualKind::cropping:
      return center_crop(img, step.degree);
    case VisualKind::erasing:
      return erase(img, static_cast<int>(step.degree), rng);
    case VisualKind::gaussian_noise:
      return add_noise(img, step.degree, rng);
    case VisualKind::dropout:
      return replace_pixels(img, step.degree, 0, rng);
    case VisualKind::salt_and_pepper:
      return replace_pixels(img, step.degree, 255, rng);
    case VisualKind::sharpen:
      return sharpen(img, step.degree);
    case VisualKind::brightness:
      return scale_brightness(img, step.degree);
    case VisualKind::contrast:
      return scale_contrast(img, step.degree);
    case VisualKind::composite:
      break;
  }
  throw UnsupportedKind("unsupported visual kind " + std::string(to_string(step.kind)));
}

void require_image(const RasterImage& img) {
  if (!img.valid()) throw ImageError("image must be at least 1x1 with a full RGB buffer");
}

}  // namespace

std::string_view to_string(VisualKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

VisualKind parse_visual_kind(std::string_view name) {
  for (const auto& [k, n] : kKindNames) {
    if (n == name) return k;
  }
  throw UnsupportedKind("unsupported visual perturbation '" + std::string(name) + "'");
}

bool is_stochastic(VisualKind kind) {
  return kind == VisualKind::erasing || kind == VisualKind::gaussian_noise || kind == VisualKind::dropout ||
         kind == VisualKind::salt_and_pepper;
}

std::string_view to_string(Axis axis) { return axis == Axis::horizontal ? "horizontal" : "vertical"; }

Axis parse_axis(std::string_view name) {
  if (name == "horizontal") return Axis::horizontal;
  if (name == "vertical") return Axis::vertical;
  throw InvalidSchedule("axis must be horizontal or vertical, got '" + std::string(name) + "'");
}

std::size_t VisualSchedule::size() const {
  if (kind != VisualKind::composite) return degrees.size();
  std::size_t n = 0;
  for (const auto& s : stages) n = std::max(n, s.degrees.size());
  return n;
}

void VisualSchedule::validate() const {
  const std::size_t n = size();
  if (n == 0) throw InvalidSchedule("visual schedule has no degrees");
  if (kind == VisualKind::composite) {
    if (stages.empty()) throw InvalidSchedule("composite schedule has no stages");
    for (const auto& s : stages) {
      if (s.kind == VisualKind::composite) throw InvalidSchedule("composite stages cannot nest");
      if (s.degrees.size() != 1 && s.degrees.size() != n) {
        throw InvalidSchedule("composite stage " + std::string(to_string(s.kind)) + " needs 1 or " +
                              std::to_string(n) + " degrees");
      }
      if (!s.axes.empty() && s.axes.size() != 1 && s.axes.size() != n) {
        throw InvalidSchedule("composite stage axes need length 1 or " + std::to_string(n));
      }
    }
  } else {
    if (!axes.empty() && axes.size() != n) throw InvalidSchedule("axes must match the number of degrees");
    if (kind == VisualKind::blur) {
      for (std::size_t i = 1; i < n; ++i) {
        if (!(degrees[i - 1] < degrees[i])) throw InvalidSchedule("blur radii must be strictly increasing");
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& step : steps_at(i)) {
      try {
        check_degree(step);
      } catch (const InvalidDegree& e) {
        throw InvalidSchedule(e.what());
      } catch (const InvalidRadius& e) {
        throw InvalidSchedule(e.what());
      }
    }
  }
}

std::vector<VisualStep> VisualSchedule::steps_at(std::size_t i) const {
  auto pick = [i](const auto& v) { return v.size() == 1 ? v.front() : v.at(i); };
  if (kind != VisualKind::composite) {
    return {VisualStep{kind, degrees.at(i), axes.empty() ? Axis::vertical : axes.at(i)}};
  }
  std::vector<VisualStep> steps;
  for (const auto& s : stages) {
    steps.push_back(VisualStep{s.kind, pick(s.degrees), s.axes.empty() ? Axis::vertical : pick(s.axes)});
  }
  return steps;
}

VisualSchedule VisualSchedule::standard() {
  return VisualSchedule{.kind = VisualKind::blur, .degrees = {0.6, 0.8, 1.0, 1.2, 1.4}};
}

VisualSchedule VisualSchedule::preset(std::string_view name) {
  const std::vector<double> rotations{-40, -20, 10, 20, 40};
  const std::vector<double> crops{0.95, 0.9, 0.85, 0.8, 0.75};
  const std::vector<double> fifths{0.05, 0.1, 0.15, 0.2, 0.25};
  const std::vector<double> factors{0.8, 0.9, 1.1, 1.2, 1.3};

  if (name == "rotate_shift") {
    return {.kind = VisualKind::composite,
            .stages = {{VisualKind::rotation, rotations, {}}, {VisualKind::shifting, {100}, {Axis::vertical}}}};
  }
  if (name == "crop_flip") {
    return {.kind = VisualKind::composite, .stages = {{VisualKind::cropping, crops, {}}, {VisualKind::flipping, {0}, {}}}};
  }
  if (name == "rotate_blur") {
    return {.kind = VisualKind::composite, .stages = {{VisualKind::rotation, rotations, {}}, {VisualKind::blur, {1.0}, {}}}};
  }
  if (name == "crop_blur") {
    return {.kind = VisualKind::composite, .stages = {{VisualKind::cropping, crops, {}}, {VisualKind::blur, {1.0}, {}}}};
  }
  switch (parse_visual_kind(name)) {
    case VisualKind::blur:
      return standard();
    case VisualKind::rotation:
      return {.kind = VisualKind::rotation, .degrees = rotations};
    case VisualKind::flipping:
      return {.kind = VisualKind::flipping, .degrees = {0, 0, 1, 1, 1}};
    case VisualKind::shifting:
      return {.kind = VisualKind::shifting,
              .degrees = {20, -20, -20, 20, 40},
              .axes = {Axis::vertical, Axis::vertical, Axis::horizontal, Axis::horizontal, Axis::vertical}};
    case VisualKind::cropping:
      return {.kind = VisualKind::cropping, .degrees = crops};
    case VisualKind::erasing:
      return {.kind = VisualKind::erasing, .degrees = {50, 100, 150, 200, 250}};
    case VisualKind::gaussian_noise:
      return {.kind = VisualKind::gaussian_noise, .degrees = fifths};
    case VisualKind::dropout:
      return {.kind = VisualKind::dropout, .degrees = fifths};
    case VisualKind::salt_and_pepper:
      return {.kind = VisualKind::salt_and_pepper, .degrees = fifths};
    case VisualKind::sharpen:
      return {.kind = VisualKind::sharpen, .degrees = {0.1, 0.2, 0.3, 0.4, 0.5}};
    case VisualKind::brightness:
      return {.kind = VisualKind::brightness, .degrees = factors};
    case VisualKind::contrast:
      return {.kind = VisualKind::contrast, .degrees = factors};
    case VisualKind::composite:
      break;
  }
  throw UnsupportedKind("composite needs a named preset");
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma) || sigma > kMaxRadius) {
    throw InvalidRadius("blur radius must be in (0, 256], got " + format_degree(sigma));
  }
  const int half = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * half + 1));
  double sum = 0.0;
  for (int j = -half; j <= half; ++j) {
    const double w = std::exp(-(static_cast<double>(j) * j) / (2.0 * sigma * sigma));
    k[static_cast<std::size_t>(j + half)] = w;
    sum += w;
  }
  for (double& w : k) w /= sum;
  return k;
}

RasterImage blur(const RasterImage& img, double radius) {
  const std::vector<double> k = gaussian_kernel(radius);
  require_image(img);
  const int half = static_cast<int>(k.size() / 2);
  const int w = img.width;
  const int h = img.height;

  std::vector<double> rows(img.pixels.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int j = -half; j <= half; ++j) acc += k[j + half] * img.at(clamp_index(x + j, w), y, c);
        rows[img.offset(x, y) + c] = acc;
      }
    }
  }

  RasterImage out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int j = -half; j <= half; ++j) acc += k[j + half] * rows[img.offset(x, clamp_index(y + j, h)) + c];
        out.at(x, y, c) = to_u8(acc);
      }
    }
  }
  return out;
}

RasterImage ablation_transform(const RasterImage& img, const VisualStep& step, std::uint64_t seed,
                               std::uint64_t stream) {
  require_image(img);
  Rng rng = make_rng({seed, stream});
  return apply_step(img, step, rng);
}

RasterImage composite_transform(const RasterImage& img, std::span<const VisualStep> steps, std::uint64_t seed,
                                std::uint64_t stream) {
  require_image(img);
  RasterImage current = img;
  for (std::size_t k = 0; k < steps.size(); ++k) {
    Rng rng = make_rng({seed, stream, k});
    current = apply_step(current, steps[k], rng);
  }
  return current;
}

std::vector<RasterImage> apply_schedule(const RasterImage& img, const VisualSchedule& sched) {
  require_image(img);
  sched.validate();
  std::vector<RasterImage> out;
  out.reserve(sched.size());
  for (std::size_t i = 0; i < sched.size(); ++i) {
    const auto steps = sched.steps_at(i);
    const std::uint64_t stream = i + 1;
    out.push_back(sched.kind == VisualKind::composite ? composite_transform(img, steps, sched.seed, stream)
                                                      : ablation_transform(img, steps.front(), sched.seed, stream));
  }
  return out;
}

std::vector<std::string> dump_names(const VisualSchedule& sched) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < sched.size(); ++i) {
    std::string name;
    if (sched.kind == VisualKind::composite) {
      name = "composite_" + std::to_string(i + 1);
    } else {
      const VisualStep step = sched.steps_at(i).front();
      name = std::string(to_string(step.kind)) + "_";
      if (step.kind == VisualKind::shifting) name += std::string(to_string(step.axis)) + "_";
      name += format_degree(step.degree);
    }
    if (std::find(names.begin(), names.end(), name) != names.end()) name += "_" + std::to_string(i + 1);
    names.push_back(std::move(name));
  }
  return names;
}

double total_variation(const RasterImage& img) {
  double tv = 0.0;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        if (x + 1 < img.width) tv += std::abs(img.at(x + 1, y, c) - img.at(x, y, c));
        if (y + 1 < img.height) tv += std::abs(img.at(x, y + 1, c) - img.at(x, y, c));
      }
    }
  }
  return tv;
}

}  // namespace vlu
