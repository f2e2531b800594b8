#pragma once

#include <string>
#include <vector>

#include "cnep/errors.hpp"
#include "cnep/nn.hpp"
#include "cnep/trajectory.hpp"

namespace cnep {

enum class ModelKind { cnmp, cnep };

inline std::string to_string(ModelKind k) { return k == ModelKind::cnmp ? "cnmp" : "cnep"; }

/// Per-query Gaussian outputs: rows are query times, columns SM dimensions.
struct Prediction {
  Matrix mean;
  Matrix stddev;
};

/// Output of gated inference: the prediction of the selected expert only.
struct GatedPrediction : Prediction {
  Index expert = 0;
  Vector gate;
};

namespace detail {

/// A batch flattened into contiguous row blocks; item i owns encoder rows
/// [obs_offset[i], obs_offset[i+1]) and target rows [tgt_offset[i], tgt_offset[i+1]).
struct StackedBatch {
  Matrix encoder_input;  // (sum n_i) x (1 + dm)
  Vector target_times;   // sum m_i
  Matrix truth;          // (sum m_i) x dm
  std::vector<Index> obs_offset{0};
  std::vector<Index> tgt_offset{0};

  Index items() const { return static_cast<Index>(obs_offset.size()) - 1; }
  Index obs_count(Index i) const { return obs_offset[i + 1] - obs_offset[i]; }
  Index tgt_count(Index i) const { return tgt_offset[i + 1] - tgt_offset[i]; }
};

inline Matrix encoder_rows(const ObservationSet& obs, Index dm) {
  if (obs.size() == 0) throw UsageError("cannot encode an empty observation set");
  if (obs.values.rows() != obs.size() || obs.values.cols() != dm)
    throw UsageError("observation values must be n x " + std::to_string(dm));
  Matrix rows(obs.size(), 1 + dm);
  rows.col(0) = obs.times;
  rows.rightCols(dm) = obs.values;
  return rows;
}

inline StackedBatch stack_batch(const Batch& batch, Index dm) {
  if (batch.empty()) throw UsageError("loss of an empty batch");
  StackedBatch sb;
  Index n_total = 0;
  Index m_total = 0;
  for (const auto& ex : batch) {
    if (ex.obs.size() == 0) throw UsageError("batch item without observations");
    if (ex.targets.size() == 0) throw UsageError("batch item without targets");
    if (ex.truth.rows() != ex.targets.size() || ex.truth.cols() != dm)
      throw UsageError("ground truth must be m x " + std::to_string(dm));
    n_total += ex.obs.size();
    m_total += ex.targets.size();
  }
  sb.encoder_input.resize(n_total, 1 + dm);
  sb.target_times.resize(m_total);
  sb.truth.resize(m_total, dm);
  for (const auto& ex : batch) {
    const Index o = sb.obs_offset.back();
    const Index t = sb.tgt_offset.back();
    sb.encoder_input.middleRows(o, ex.obs.size()) = encoder_rows(ex.obs, dm);
    sb.target_times.segment(t, ex.targets.size()) = ex.targets.times;
    sb.truth.middleRows(t, ex.targets.size()) = ex.truth;
    sb.obs_offset.push_back(o + ex.obs.size());
    sb.tgt_offset.push_back(t + ex.targets.size());
  }
  return sb;
}

/// Row-block means of encoder outputs: one latent per item.
inline Matrix segment_means(const Matrix& encoded, const StackedBatch& sb) {
  Matrix latents(sb.items(), encoded.cols());
  for (Index i = 0; i < sb.items(); ++i)
    latents.row(i) = encoded.middleRows(sb.obs_offset[static_cast<std::size_t>(i)], sb.obs_count(i))
                         .colwise()
                         .mean();
  return latents;
}

/// Query-network input rows [r_item | t].
inline Matrix query_rows(const Matrix& latents, const StackedBatch& sb) {
  const Index width = latents.cols();
  Matrix q(sb.target_times.size(), width + 1);
  for (Index i = 0; i < sb.items(); ++i) {
    const Index start = sb.tgt_offset[static_cast<std::size_t>(i)];
    for (Index j = 0; j < sb.tgt_count(i); ++j) {
      q.row(start + j).head(width) = latents.row(i);
      q(start + j, width) = sb.target_times(start + j);
    }
  }
  return q;
}

inline Matrix query_rows(const Vector& latent, const Vector& times) {
  Matrix q(times.size(), latent.size() + 1);
  q.leftCols(latent.size()).rowwise() = latent.transpose();
  q.col(latent.size()) = times;
  return q;
}

/// Accumulates dL/d latent from dL/d query rows.
inline void add_query_grad_to_latents(const Matrix& d_query, const StackedBatch& sb, Matrix& d_latents) {
  const Index width = d_latents.cols();
  for (Index i = 0; i < sb.items(); ++i)
    d_latents.row(i) +=
        d_query.middleRows(sb.tgt_offset[static_cast<std::size_t>(i)], sb.tgt_count(i)).leftCols(width).colwise().sum();
}

/// Spreads dL/d latent back to encoder output rows (mean => 1/n each).
inline Matrix latent_grad_to_rows(const Matrix& d_latents, const StackedBatch& sb) {
  Matrix d_rows(sb.encoder_input.rows(), d_latents.cols());
  for (Index i = 0; i < sb.items(); ++i) {
    const double inv_n = 1.0 / static_cast<double>(sb.obs_count(i));
    d_rows.middleRows(sb.obs_offset[static_cast<std::size_t>(i)], sb.obs_count(i)).rowwise() =
        d_latents.row(i) * inv_n;
  }
  return d_rows;
}

/// Per-item mean over target rows.
inline Vector segment_row_means(const Vector& per_row, const StackedBatch& sb) {
  Vector out(sb.items());
  for (Index i = 0; i < sb.items(); ++i)
    out(i) = per_row.segment(sb.tgt_offset[static_cast<std::size_t>(i)], sb.tgt_count(i)).mean();
  return out;
}

inline Prediction split_gaussian(const Matrix& out, Index dm) {
  Prediction p;
  p.mean = out.leftCols(dm);
  p.stddev = out.rightCols(dm).unaryExpr([](double raw) { return softplus(raw); });
  return p;
}

inline void collect(std::vector<ParamTensor*>& into, Mlp& net) {
  for (auto& p : net.params()) into.push_back(&p);
}

inline void collect(std::vector<const ParamTensor*>& into, const Mlp& net) {
  for (const auto& p : net.params()) into.push_back(&p);
}

inline void check_finite_time(double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw UsageError("query times must lie in [0, 1]");
}

}  // namespace detail
}  // namespace cnep
