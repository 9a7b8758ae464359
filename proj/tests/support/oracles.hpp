#pragma once

// Reference implementations used only by tests. They favour the most direct
// formulation over speed and share no code with the library.

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "vlu/image.hpp"

namespace oracle {

/// Dense (2h+1)^2 Gaussian convolution with clamped coordinates, long double accumulation.
vlu::RasterImage dense_blur(const vlu::RasterImage& img, double sigma);

/// -sum p ln p over counts, evaluated in long double.
long double entropy(const std::vector<long long>& counts);

/// Sizes of the connected components of the graph whose edges join equal items, sorted descending.
std::vector<std::size_t> component_sizes(const std::vector<std::string>& items);

/// Fraction of (truth, entropy) pairs where truth == (entropy > threshold).
double accuracy(const std::vector<std::pair<bool, double>>& labeled, double threshold);

}  // namespace oracle
