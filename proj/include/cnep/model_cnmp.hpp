#pragma once

// Single-decoder baseline: encoder, mean aggregation, one query network.

#include <optional>
#include <vector>

#include "cnep/losses.hpp"
#include "cnep/model_common.hpp"
#include "cnep/rng.hpp"

namespace cnep {

struct CnmpConfig {
  Index dm = 1;
  Index latent_width = 128;
  std::vector<Index> encoder_hidden{128, 128};
  std::vector<Index> query_hidden{128, 128};
  Activation activation = Activation::relu;

  MlpSpec encoder_spec() const { return {1 + dm, encoder_hidden, latent_width, activation}; }
  MlpSpec query_spec() const { return {latent_width + 1, query_hidden, 2 * dm, activation}; }

  void validate() const {
    if (dm < 1) throw ConfigError("dm must be positive");
    if (latent_width < 1) throw ConfigError("latent width must be positive");
    encoder_spec().validate();
    query_spec().validate();
  }

  friend bool operator==(const CnmpConfig&, const CnmpConfig&) = default;
};

class CnmpModel {
 public:
  static constexpr ModelKind kind = ModelKind::cnmp;
  using Config = CnmpConfig;

  explicit CnmpModel(CnmpConfig config, std::uint64_t seed = 0)
      : config_((config.validate(), std::move(config))),
        encoder_(config_.encoder_spec(), "encoder"),
        query_(config_.query_spec(), "query") {
    Rng rng(seed);
    encoder_.init_uniform(rng);
    query_.init_uniform(rng);
  }

  const CnmpConfig& config() const { return config_; }
  Index dm() const { return config_.dm; }
  Index latent_width() const { return config_.latent_width; }

  Mlp& encoder() { return encoder_; }
  const Mlp& encoder() const { return encoder_; }
  Mlp& query_network() { return query_; }
  const Mlp& query_network() const { return query_; }

  std::size_t parameter_count() const { return encoder_.parameter_count() + query_.parameter_count(); }

  std::vector<ParamTensor*> parameters() {
    std::vector<ParamTensor*> out;
    detail::collect(out, encoder_);
    detail::collect(out, query_);
    return out;
  }

  std::vector<const ParamTensor*> parameters() const {
    std::vector<const ParamTensor*> out;
    detail::collect(out, encoder_);
    detail::collect(out, query_);
    return out;
  }

  /// Mean of the per-observation encodings.
  Vector encode(const ObservationSet& obs) const {
    return encoder_.forward(detail::encoder_rows(obs, dm())).colwise().mean().transpose();
  }

  /// (mean, raw scale) for one query time; std = softplus(raw).
  Vector query_raw(const Vector& latent, double t_q) const {
    detail::check_finite_time(t_q);
    return query_.forward(detail::query_rows(latent, Vector::Constant(1, t_q))).row(0).transpose();
  }

  Prediction query(const Vector& latent, double t_q) const {
    return detail::split_gaussian(query_raw(latent, t_q).transpose(), dm());
  }

  Prediction generate(const ObservationSet& obs, const Vector& query_times) const {
    for (Index i = 0; i < query_times.size(); ++i) detail::check_finite_time(query_times(i));
    const Vector r = encode(obs);
    return detail::split_gaussian(query_.forward(detail::query_rows(r, query_times)), dm());
  }

  /// Mean over items of the mean per-target NLL.
  LossBreakdown loss(const Batch& batch) const {
    const auto sb = detail::stack_batch(batch, dm());
    const Matrix latents = detail::segment_means(encoder_.forward(sb.encoder_input), sb);
    const Matrix out = query_.forward(detail::query_rows(latents, sb));
    return breakdown(detail::segment_row_means(gaussian_nll_rows(sb.truth, out), sb).mean());
  }

  /// Records the computation for backward().
  LossBreakdown forward_loss(const Batch& batch) {
    Tape tape;
    tape.batch = detail::stack_batch(batch, dm());
    const Matrix encoded = encoder_.forward(tape.batch.encoder_input, tape.encoder);
    const Matrix latents = detail::segment_means(encoded, tape.batch);
    tape.output = query_.forward(detail::query_rows(latents, tape.batch), tape.query);
    const double value = detail::segment_row_means(gaussian_nll_rows(tape.batch.truth, tape.output), tape.batch).mean();
    tape_ = std::move(tape);
    return breakdown(value);
  }

  /// Overwrites every parameter gradient with d loss / d param for the last
  /// recorded forward_loss, then discards the recording.
  void backward() {
    if (!tape_) throw UsageError("backward() called without a recorded forward pass");
    Tape& tape = *tape_;
    const auto& sb = tape.batch;
    for (auto* p : parameters()) p->zero_grad();

    const double inv_b = 1.0 / static_cast<double>(sb.items());
    Vector weights(sb.target_times.size());
    for (Index i = 0; i < sb.items(); ++i)
      weights.segment(sb.tgt_offset[static_cast<std::size_t>(i)], sb.tgt_count(i))
          .setConstant(inv_b / static_cast<double>(sb.tgt_count(i)));
    Matrix d_out;
    gaussian_nll_rows(sb.truth, tape.output, &weights, &d_out);

    const Matrix d_query = query_.backward(tape.query, d_out);
    Matrix d_latents = Matrix::Zero(sb.items(), latent_width());
    detail::add_query_grad_to_latents(d_query, sb, d_latents);
    encoder_.backward(tape.encoder, detail::latent_grad_to_rows(d_latents, sb));
    tape_.reset();
  }

  bool has_recorded_forward() const { return tape_.has_value(); }

 private:
  struct Tape {
    detail::StackedBatch batch;
    MlpTape encoder;
    MlpTape query;
    Matrix output;
  };

  static LossBreakdown breakdown(double nll) {
    LossBreakdown lb;
    lb.rec = nll;
    lb.total = nll;
    lb.nll = nll;
    lb.alphas = {1.0, 0.0, 0.0};
    return lb;
  }

  CnmpConfig config_;
  Mlp encoder_;
  Mlp query_;
  std::optional<Tape> tape_;
};

/// Free-function form: mean per-target NLL of a batch.
inline double cnmp_loss(const CnmpModel& model, const Batch& batch) { return model.loss(batch).total; }

}  // namespace cnep
