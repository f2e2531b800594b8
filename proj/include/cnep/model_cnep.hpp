#pragma once

// Gated mixture of expert query networks over a shared encoder.
//
// Training evaluates every expert on every target and weights expert e's
// loss by the gate probability p_e of the trajectory's latent. Inference
// runs only the expert with the highest gate probability.

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "cnep/losses.hpp"
#include "cnep/model_cnmp.hpp"
#include "cnep/model_common.hpp"
#include "cnep/rng.hpp"

namespace cnep {

struct CnepConfig {
  Index dm = 1;
  Index experts = 2;
  Index latent_width = 128;
  std::vector<Index> encoder_hidden{128, 128};
  std::vector<Index> query_hidden{128, 128};
  std::vector<Index> gate_hidden{64};
  Activation activation = Activation::relu;
  LossWeights alphas{};

  MlpSpec encoder_spec() const { return {1 + dm, encoder_hidden, latent_width, activation}; }
  MlpSpec expert_spec() const { return {latent_width + 1, query_hidden, 2 * dm, activation}; }
  MlpSpec gate_spec() const { return {latent_width, gate_hidden, experts, activation}; }

  void validate() const {
    if (dm < 1) throw ConfigError("dm must be positive");
    if (experts < 1) throw ConfigError("the expert count must be at least 1");
    if (latent_width < 1) throw ConfigError("latent width must be positive");
    encoder_spec().validate();
    expert_spec().validate();
    gate_spec().validate();
  }

  friend bool operator==(const CnepConfig&, const CnepConfig&) = default;
};

/// Index of the largest entry; the lowest index wins ties.
inline Index argmax_lowest(const Vector& v) {
  Index best = 0;
  for (Index i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = i;
  return best;
}

class CnepModel {
 public:
  static constexpr ModelKind kind = ModelKind::cnep;
  using Config = CnepConfig;

  explicit CnepModel(CnepConfig config, std::uint64_t seed = 0)
      : config_((config.validate(), std::move(config))),
        encoder_(config_.encoder_spec(), "encoder"),
        gate_(config_.gate_spec(), "gate") {
    for (Index e = 0; e < config_.experts; ++e)
      experts_.emplace_back(config_.expert_spec(), "expert" + std::to_string(e));
    Rng rng(seed);
    encoder_.init_uniform(rng);
    gate_.init_uniform(rng);
    for (auto& ex : experts_) ex.init_uniform(rng);
  }

  const CnepConfig& config() const { return config_; }
  Index dm() const { return config_.dm; }
  Index latent_width() const { return config_.latent_width; }
  Index num_experts() const { return config_.experts; }
  const LossWeights& alphas() const { return config_.alphas; }
  void set_alphas(const LossWeights& w) { config_.alphas = w; }

  Mlp& encoder() { return encoder_; }
  const Mlp& encoder() const { return encoder_; }
  Mlp& gate() { return gate_; }
  const Mlp& gate() const { return gate_; }
  Mlp& expert(Index e) { return experts_.at(static_cast<std::size_t>(e)); }
  const Mlp& expert(Index e) const { return experts_.at(static_cast<std::size_t>(e)); }

  std::size_t parameter_count() const {
    std::size_t total = encoder_.parameter_count() + gate_.parameter_count();
    for (const auto& ex : experts_) total += ex.parameter_count();
    return total;
  }

  std::vector<ParamTensor*> parameters() {
    std::vector<ParamTensor*> out;
    detail::collect(out, encoder_);
    detail::collect(out, gate_);
    for (auto& ex : experts_) detail::collect(out, ex);
    return out;
  }

  std::vector<const ParamTensor*> parameters() const {
    std::vector<const ParamTensor*> out;
    detail::collect(out, encoder_);
    detail::collect(out, gate_);
    for (const auto& ex : experts_) detail::collect(out, ex);
    return out;
  }

  Vector encode(const ObservationSet& obs) const {
    return encoder_.forward(detail::encoder_rows(obs, dm())).colwise().mean().transpose();
  }

  Vector gate_logits(const Vector& latent) const {
    if (latent.size() != latent_width()) throw UsageError("latent width mismatch");
    return gate_.forward(latent.transpose()).row(0).transpose();
  }

  /// Softmax of the gate logits.
  Vector gate_probs(const Vector& latent) const { return softmax(gate_logits(latent)); }

  Prediction expert_query(Index e, const Vector& latent, const Vector& times) const {
    for (Index i = 0; i < times.size(); ++i) detail::check_finite_time(times(i));
    return detail::split_gaussian(expert(e).forward(detail::query_rows(latent, times)), dm());
  }

  /// Mean per-target NLL of each expert for one latent.
  Vector expert_losses(const Vector& latent, const TargetSet& targets, const Matrix& truth) const {
    if (truth.rows() != targets.size() || truth.cols() != dm())
      throw UsageError("ground truth must be m x dm");
    const Matrix q = detail::query_rows(latent, targets.times);
    Vector losses(num_experts());
    for (Index e = 0; e < num_experts(); ++e)
      losses(e) = gaussian_nll_rows(truth, expert(e).forward(q)).mean();
    return losses;
  }

  /// Encodes once, selects argmax expert, and queries only that expert.
  GatedPrediction generate(const ObservationSet& obs, const Vector& query_times) const {
    for (Index i = 0; i < query_times.size(); ++i) detail::check_finite_time(query_times(i));
    const Vector r = encode(obs);
    GatedPrediction out;
    out.gate = gate_probs(r);
    out.expert = argmax_lowest(out.gate);
    static_cast<Prediction&>(out) =
        detail::split_gaussian(expert(out.expert).forward(detail::query_rows(r, query_times)), dm());
    return out;
  }

  LossBreakdown loss(const Batch& batch) const {
    Tape tape;
    return evaluate(batch, tape, false);
  }

  LossBreakdown forward_loss(const Batch& batch) {
    Tape tape;
    const LossBreakdown lb = evaluate(batch, tape, true);
    tape_ = std::move(tape);
    return lb;
  }

  /// Overwrites every parameter gradient with d total / d param for the last
  /// recorded forward_loss; gradients flow through all three terms.
  void backward() {
    if (!tape_) throw UsageError("backward() called without a recorded forward pass");
    Tape& tape = *tape_;
    const auto& sb = tape.batch;
    const LossWeights& a = config_.alphas;
    const Index b = sb.items();
    const Index d = num_experts();
    const double inv_b = 1.0 / static_cast<double>(b);
    const double inv_d = 1.0 / static_cast<double>(d);
    for (auto* p : parameters()) p->zero_grad();

    // dTotal / dP
    Matrix d_probs(b, d);
    const Vector mean_p = tape.probs.colwise().mean().transpose();
    for (Index e = 0; e < d; ++e) {
      const double log_mean = std::log(std::max(mean_p(e), std::numeric_limits<double>::min()));
      for (Index i = 0; i < b; ++i) {
        d_probs(i, e) = a.rec * tape.expert_item_losses(i, e) * inv_b * inv_d -
                        a.batch * (log_mean + 1.0) * inv_b - a.ind * (tape.log_probs(i, e) + 1.0) * inv_b;
      }
    }
    const Matrix d_logits = softmax_rows_backward(tape.probs, d_probs);
    Matrix d_latents = gate_.backward(tape.gate, d_logits);

    // Experts: row weights a.rec * p_{i,e} / (b d m_i)
    Matrix d_query = Matrix::Zero(sb.target_times.size(), latent_width() + 1);
    Vector weights(sb.target_times.size());
    for (Index e = 0; e < d; ++e) {
      for (Index i = 0; i < b; ++i)
        weights.segment(sb.tgt_offset[static_cast<std::size_t>(i)], sb.tgt_count(i))
            .setConstant(a.rec * tape.probs(i, e) * inv_b * inv_d / static_cast<double>(sb.tgt_count(i)));
      Matrix d_out;
      gaussian_nll_rows(sb.truth, tape.expert_outputs[static_cast<std::size_t>(e)], &weights, &d_out);
      d_query += experts_[static_cast<std::size_t>(e)].backward(tape.experts[static_cast<std::size_t>(e)], d_out);
    }
    detail::add_query_grad_to_latents(d_query, sb, d_latents);
    encoder_.backward(tape.encoder, detail::latent_grad_to_rows(d_latents, sb));
    tape_.reset();
  }

  bool has_recorded_forward() const { return tape_.has_value(); }

 private:
  struct Tape {
    detail::StackedBatch batch;
    MlpTape encoder;
    MlpTape gate;
    std::vector<MlpTape> experts;
    std::vector<Matrix> expert_outputs;
    Matrix probs;               // b x d
    Matrix log_probs;           // b x d
    Matrix expert_item_losses;  // b x d, L_e per item
  };

  LossBreakdown evaluate(const Batch& batch, Tape& tape, bool record) const {
    tape.batch = detail::stack_batch(batch, dm());
    const auto& sb = tape.batch;
    const Index d = num_experts();
    const Matrix encoded =
        record ? encoder_.forward(sb.encoder_input, tape.encoder) : encoder_.forward(sb.encoder_input);
    const Matrix latents = detail::segment_means(encoded, sb);
    const Matrix logits = record ? gate_.forward(latents, tape.gate) : gate_.forward(latents);
    tape.log_probs = log_softmax_rows(logits);
    tape.probs = tape.log_probs.array().exp();

    const Matrix q = detail::query_rows(latents, sb);
    tape.expert_item_losses.resize(sb.items(), d);
    tape.experts.resize(static_cast<std::size_t>(d));
    tape.expert_outputs.resize(static_cast<std::size_t>(d));
    for (Index e = 0; e < d; ++e) {
      const auto ue = static_cast<std::size_t>(e);
      tape.expert_outputs[ue] = record ? experts_[ue].forward(q, tape.experts[ue]) : experts_[ue].forward(q);
      tape.expert_item_losses.col(e) =
          detail::segment_row_means(gaussian_nll_rows(sb.truth, tape.expert_outputs[ue]), sb);
    }

    LossBreakdown lb;
    lb.alphas = config_.alphas;
    const Vector weighted = (tape.expert_item_losses.array() * tape.probs.array()).rowwise().sum();
    lb.nll = weighted.mean();
    lb.rec = lb.nll / static_cast<double>(d);
    lb.batch_entropy = batch_entropy(tape.probs);
    lb.ind_entropy = -(tape.probs.array() * tape.log_probs.array()).rowwise().sum().mean();
    lb.total = lb.alphas.rec * lb.rec + lb.alphas.batch * lb.batch_entropy + lb.alphas.ind * lb.ind_entropy;
    return lb;
  }

  CnepConfig config_;
  Mlp encoder_;
  Mlp gate_;
  std::vector<Mlp> experts_;
  std::optional<Tape> tape_;
};

inline LossBreakdown cnep_loss(const CnepModel& model, const Batch& batch) { return model.loss(batch); }

/// CNMP twin of a CNEP configuration: same encoder, query hidden layers
/// widened uniformly to the smallest width whose total parameter count is at
/// least the CNEP's. Throws when the result exceeds max_ratio x the CNEP count.
inline CnmpConfig parity_cnmp_config(const CnepConfig& cnep, double max_ratio = 1.1) {
  cnep.validate();
  const std::size_t target = [&] {
    std::size_t total = parameter_count(cnep.encoder_spec()) + parameter_count(cnep.gate_spec());
    return total + static_cast<std::size_t>(cnep.experts) * parameter_count(cnep.expert_spec());
  }();
  CnmpConfig out;
  out.dm = cnep.dm;
  out.latent_width = cnep.latent_width;
  out.encoder_hidden = cnep.encoder_hidden;
  out.activation = cnep.activation;
  const std::size_t depth = cnep.query_hidden.size();
  const auto count_for = [&](Index width) {
    out.query_hidden.assign(depth, width);
    return parameter_count(out.encoder_spec()) + parameter_count(out.query_spec());
  };
  Index width = 1;
  while (count_for(width) < target) ++width;
  const std::size_t got = count_for(width);
  if (static_cast<double>(got) > max_ratio * static_cast<double>(target))
    throw ConfigError("no uniform CNMP query width reaches parameter parity within " +
                      std::to_string(max_ratio) + "x of the CNEP count");
  return out;
}

/// Throws unless cnmp_count lies in [1, max_ratio] x cnep_count.
inline void assert_parameter_parity(std::size_t cnmp_count, std::size_t cnep_count, double max_ratio = 1.1) {
  const double ratio = static_cast<double>(cnmp_count) / static_cast<double>(cnep_count);
  if (ratio < 1.0 || ratio > max_ratio)
    throw ConfigError("parameter parity violated: cnmp/cnep = " + std::to_string(ratio) +
                      ", expected within [1, " + std::to_string(max_ratio) + "]");
}

}  // namespace cnep
