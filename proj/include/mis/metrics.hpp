#pragma once

#include <span>
#include <vector>

#include "mis/conditioning.hpp"
#include "mis/image.hpp"

namespace mis {

/// Cosine similarity; two zero vectors count as identical, one zero vector
/// as unrelated.
double cosine(std::span<const float> a, std::span<const float> b);

struct EvalReport {
  /// Per generated image: best cosine against any context image, on
  /// flattened encoder features.
  std::vector<double> per_image;
  double feature_consistency_mean = 0.0;
  double feature_consistency_std = 0.0;
  /// Mean over feature coordinates of the variance across generated images.
  double within_set_variance = 0.0;
};

/// Throws std::invalid_argument when either set is empty.
EvalReport evaluate(std::span<const Image> generated, std::span<const Image> context, const FeatureEncoder& encoder);

}  // namespace mis
