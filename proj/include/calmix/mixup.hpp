#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

#include "calmix/autograd.hpp"
#include "calmix/matrix.hpp"
#include "calmix/rng.hpp"

namespace calmix {

enum class Strategy { None, Proposed, InputMixup, ManifoldMixup };
enum class Ablation { Full, NoAum, NoSaliency, NoSimilar, NoDissimilar };

inline const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::None: return "none";
    case Strategy::Proposed: return "proposed";
    case Strategy::InputMixup: return "input_mixup";
    case Strategy::ManifoldMixup: return "manifold_mixup";
  }
  return "?";
}

inline const char* to_string(Ablation a) {
  switch (a) {
    case Ablation::Full: return "full";
    case Ablation::NoAum: return "no_aum";
    case Ablation::NoSaliency: return "no_saliency";
    case Ablation::NoSimilar: return "no_similar";
    case Ablation::NoDissimilar: return "no_dissimilar";
  }
  return "?";
}

struct MixupConfig {
  double alpha = 0.4;
  double beta = 0.8;
  double gamma = 0.1;
  double delta = 0.1;
  Strategy strategy = Strategy::Proposed;
  Ablation ablation = Ablation::Full;
  // Test hook: pins the mixing ratio instead of drawing from Beta(alpha,
  // alpha); lambda accounting then reports zero draws.
  std::optional<double> fixed_lambda;

  void validate() const {
    if (!(alpha > 0.0))
      throw std::invalid_argument("MixupConfig: alpha must be positive");
    if (beta < 0.0 || gamma < 0.0 || delta < 0.0)
      throw std::invalid_argument("MixupConfig: loss weights must be >= 0");
    if (std::abs(beta + gamma + delta - 1.0) > 1e-9)
      throw std::invalid_argument(
          "MixupConfig: loss weights must sum to 1 within 1e-9");
    if (fixed_lambda && !(*fixed_lambda >= 0.0 && *fixed_lambda <= 1.0))
      throw std::invalid_argument("MixupConfig: fixed lambda outside [0,1]");
  }

  // (base, similar, dissimilar) weights after dropping an ablated term and
  // renormalizing the remaining two.
  std::array<double, 3> effective_weights() const {
    switch (ablation) {
      case Ablation::NoSimilar:
        return {beta / (beta + delta), 0.0, delta / (beta + delta)};
      case Ablation::NoDissimilar:
        return {beta / (beta + gamma), gamma / (beta + gamma), 0.0};
      default:
        return {beta, gamma, delta};
    }
  }
};

// Mixing ratio from Beta(alpha, alpha).
inline double sample_lambda(double alpha, Rng& rng) {
  if (!(alpha > 0.0))
    throw std::invalid_argument("sample_lambda: alpha must be positive");
  return rng.beta(alpha, alpha);
}

struct MixedExample {
  Vector representation;
  Vector target;
  double lambda = 0.0;
  std::size_t parent_i = 0;
  std::size_t parent_j = 0;
};

// lambda * (x_i, y_i) + (1 - lambda) * (x_j, y_j) on both the representation
// and the target distribution.
inline MixedExample interpolate(const Vector& xi, const Vector& xj,
                                const Vector& yi, const Vector& yj,
                                double lambda, std::size_t id_i = 0,
                                std::size_t id_j = 0) {
  if (xi.size() != xj.size())
    throw std::invalid_argument("interpolate: representation shape mismatch");
  if (yi.size() != yj.size())
    throw std::invalid_argument("interpolate: target length mismatch");
  require_distribution(yi, "interpolate target i");
  require_distribution(yj, "interpolate target j");
  const auto [wi, wj] = mix_weights(lambda);
  MixedExample m;
  m.representation = lerp_clamped(xi, xj, wi, wj);
  m.target = lerp_clamped(yi, yj, wi, wj);
  m.lambda = lambda;
  m.parent_i = id_i;
  m.parent_j = id_j;
  return m;
}

// beta * base + gamma * similar-mix + delta * dissimilar-mix, with ablation
// renormalization applied.
inline double combined_loss(double loss_base, double loss_sim, double loss_dis,
                            const MixupConfig& cfg) {
  cfg.validate();
  const auto w = cfg.effective_weights();
  return w[0] * loss_base + w[1] * loss_sim + w[2] * loss_dis;
}

}  // namespace calmix
