#pragma once

#include <cmath>
#include <limits>

#include "cnep/errors.hpp"
#include "cnep/nn.hpp"

namespace cnep {

/// Coefficients of the combined objective
///   total = rec_weight * L_rec + batch_weight * L_batch + ind_weight * L_ind.
/// batch_weight is negative by default so that minimizing the total raises
/// the batch entropy.
struct LossWeights {
  double rec = 1.0;
  double batch = -1.0;
  double ind = 1.0;

  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct LossBreakdown {
  double rec = 0.0;            // gate-weighted reconstruction loss, 1/d scaled
  double batch_entropy = 0.0;  // entropy of the batch-mean gate distribution
  double ind_entropy = 0.0;    // mean per-trajectory gate entropy
  double total = 0.0;
  LossWeights alphas{};
  double nll = 0.0;            // gate-weighted NLL without the 1/d factor (comparable across models)

  friend bool operator==(const LossBreakdown&, const LossBreakdown&) = default;
};

namespace detail {
inline double xlogx(double p) { return p > 0.0 ? p * std::log(p) : 0.0; }
}  // namespace detail

/// P is b x d, rows are gate distributions. Natural log, 0 log 0 = 0.
inline double batch_entropy(const Matrix& gate_probs) {
  if (gate_probs.rows() == 0) throw UsageError("batch_entropy of an empty batch");
  const Vector mean = gate_probs.colwise().mean().transpose();
  double h = 0.0;
  for (Index e = 0; e < mean.size(); ++e) h -= detail::xlogx(mean(e));
  return h;
}

inline double individual_entropy(const Matrix& gate_probs) {
  if (gate_probs.rows() == 0) throw UsageError("individual_entropy of an empty batch");
  double total = 0.0;
  for (Index i = 0; i < gate_probs.rows(); ++i)
    for (Index e = 0; e < gate_probs.cols(); ++e) total -= detail::xlogx(gate_probs(i, e));
  return total / static_cast<double>(gate_probs.rows());
}

/// (1/d) sum_e L_e p_e for one trajectory.
inline double weighted_rec_loss(const Vector& expert_losses, const Vector& gate) {
  if (expert_losses.size() != gate.size() || gate.size() == 0)
    throw UsageError("weighted_rec_loss: expert loss and gate lengths differ");
  return expert_losses.dot(gate) / static_cast<double>(gate.size());
}

}  // namespace cnep
