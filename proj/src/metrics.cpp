#include "mis/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Core>

namespace mis {

double cosine(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine of vectors with different lengths");
  Eigen::Map<const Eigen::VectorXf> va(a.data(), static_cast<Eigen::Index>(a.size()));
  Eigen::Map<const Eigen::VectorXf> vb(b.data(), static_cast<Eigen::Index>(b.size()));
  const double na = va.cast<double>().norm(), nb = vb.cast<double>().norm();
  if (na == 0.0 && nb == 0.0) return 1.0;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return va.cast<double>().dot(vb.cast<double>()) / (na * nb);
}

EvalReport evaluate(std::span<const Image> generated, std::span<const Image> context, const FeatureEncoder& encoder) {
  if (generated.empty()) throw std::invalid_argument("no generated images to evaluate");
  if (context.empty()) throw std::invalid_argument("no context images to compare against");
  std::vector<std::vector<float>> ctx;
  for (const auto& img : context) ctx.push_back(encoder.encode(img));

  EvalReport r;
  const std::size_t dim = encoder.tokens() * encoder.dim();
  Eigen::MatrixXd feats(static_cast<Eigen::Index>(generated.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < generated.size(); ++i) {
    const auto f = encoder.encode(generated[i]);
    double best = -1.0;
    for (const auto& c : ctx) best = std::max(best, cosine(f, c));
    r.per_image.push_back(best);
    feats.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::VectorXf>(f.data(), static_cast<Eigen::Index>(dim)).cast<double>().transpose();
  }
  const Eigen::Map<const Eigen::VectorXd> per(r.per_image.data(), static_cast<Eigen::Index>(r.per_image.size()));
  r.feature_consistency_mean = per.mean();
  r.feature_consistency_std = std::sqrt((per.array() - r.feature_consistency_mean).square().mean());
  const Eigen::RowVectorXd centre = feats.colwise().mean();
  r.within_set_variance = (feats.rowwise() - centre).array().square().colwise().mean().mean();
  return r;
}

}  // namespace mis
