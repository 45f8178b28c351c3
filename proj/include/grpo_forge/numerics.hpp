#ifndef GRPO_FORGE_NUMERICS_HPP_
#define GRPO_FORGE_NUMERICS_HPP_

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <utility>

namespace grpo_forge {

template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  const Scalar m = x.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((x.array() - m).exp().sum());
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> log_softmax(
    const Eigen::MatrixBase<Derived>& logits) {
  return logits.array() - log_sum_exp(logits);
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> softmax(
    const Eigen::MatrixBase<Derived>& logits) {
  return log_softmax(logits).array().exp();
}

/// Population mean and standard deviation.
template <typename Derived>
std::pair<typename Derived::Scalar, typename Derived::Scalar> population_mean_std(
    const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  const Scalar mean = x.mean();
  const Scalar var = (x.array() - mean).square().mean();
  return {mean, std::sqrt(var)};
}

/// k3 estimator of KL(current || reference) at one sampled token, given
/// log r = log pi_ref - log pi_current.
template <typename Scalar>
Scalar k3_term(Scalar log_ratio) {
  return std::exp(log_ratio) - log_ratio - Scalar(1);
}

/// Derivative of k3 with respect to log pi_current at the sampled token.
template <typename Scalar>
Scalar k3_dlogp(Scalar log_ratio) {
  return Scalar(1) - std::exp(log_ratio);
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& x) {
  return x.allFinite();
}

/// Uniform double in [0, 1) from the top 53 bits of a 64-bit engine draw.
template <typename Engine>
double uniform01(Engine& engine) {
  return static_cast<double>(engine() >> 11) * 0x1.0p-53;
}

/// Mixes a master seed with stream indices into one engine seed.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0,
                          std::uint64_t c = 0);

}  // namespace grpo_forge

#endif  // GRPO_FORGE_NUMERICS_HPP_
