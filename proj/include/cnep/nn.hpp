#pragma once

// Feed-forward building blocks with hand-written reverse mode: affine layers,
// relu/tanh, softplus, softmax and the diagonal Gaussian negative
// log-likelihood used by every query network.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cnep/errors.hpp"
#include "cnep/rng.hpp"

namespace cnep {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * ln(2*pi)

/// Exact element-wise equality that tolerates differing shapes.
template <class A, class B>
bool equal_exact(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a.size() == 0 || a == b);
}

enum class Activation { relu, tanh };

inline std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

inline Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation '" + name + "' (expected relu or tanh)");
}

/// A named block of trainable scalars with a matching gradient buffer.
/// Two-dimensional tensors are stored column-major, shape = {rows, cols}.
struct ParamTensor {
  std::string name;
  std::vector<Index> shape;
  Vector values;
  Vector grad;

  ParamTensor() = default;
  ParamTensor(std::string tensor_name, std::vector<Index> tensor_shape)
      : name(std::move(tensor_name)), shape(std::move(tensor_shape)) {
    Index n = 1;
    for (Index s : shape) {
      if (s <= 0) throw ConfigError("tensor '" + name + "' has a non-positive dimension");
      n *= s;
    }
    values = Vector::Zero(n);
    grad = Vector::Zero(n);
  }

  Index size() const { return values.size(); }
  Index rows() const { return shape.empty() ? 0 : shape[0]; }
  Index cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  void zero_grad() { grad.setZero(); }

  Eigen::Map<const Matrix> matrix() const { return {values.data(), rows(), cols()}; }
  Eigen::Map<Matrix> matrix() { return {values.data(), rows(), cols()}; }
  Eigen::Map<Matrix> grad_matrix() { return {grad.data(), rows(), cols()}; }
};

struct MlpSpec {
  Index input_width = 1;
  std::vector<Index> hidden_widths{1};
  Index output_width = 1;
  Activation hidden_activation = Activation::relu;

  void validate() const {
    if (input_width <= 0 || output_width <= 0)
      throw ConfigError("mlp input/output widths must be positive");
    if (hidden_widths.empty()) throw ConfigError("mlp needs at least one hidden layer");
    for (Index w : hidden_widths)
      if (w <= 0) throw ConfigError("mlp hidden widths must be positive");
  }

  /// Widths of every layer boundary: input, hidden..., output.
  std::vector<Index> layer_widths() const {
    std::vector<Index> widths{input_width};
    widths.insert(widths.end(), hidden_widths.begin(), hidden_widths.end());
    widths.push_back(output_width);
    return widths;
  }

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

/// Sum over layers of in*out + out.
inline std::size_t parameter_count(const MlpSpec& spec) {
  const auto widths = spec.layer_widths();
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l)
    total += static_cast<std::size_t>(widths[l] * widths[l + 1] + widths[l + 1]);
  return total;
}

// ---------------------------------------------------------------------------
// Scalar helpers

/// log(1 + exp(x)) without overflow for large |x|.
inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

/// d softplus / dx.
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Inverse of softplus for y > 0.
inline double softplus_inverse(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

inline Vector softmax(const Vector& logits) {
  if (logits.size() == 0) throw UsageError("softmax of an empty vector");
  const double top = logits.maxCoeff();
  Vector p = (logits.array() - top).exp();
  return p / p.sum();
}

/// Per-row numerically stable log-softmax.
inline Matrix log_softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const double top = logits.row(i).maxCoeff();
    const double lse = top + std::log((logits.row(i).array() - top).exp().sum());
    out.row(i) = logits.row(i).array() - lse;
  }
  return out;
}

/// Diagonal-Gaussian NLL, std_k = softplus(raw_scale_k), summed over k.
inline double gaussian_nll(std::span<const double> x, std::span<const double> mean,
                           std::span<const double> raw_scale) {
  if (x.size() != mean.size() || x.size() != raw_scale.size())
    throw UsageError("gaussian_nll: length mismatch");
  double total = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double sigma = softplus(raw_scale[k]);
    const double z = (x[k] - mean[k]) / sigma;
    total += kHalfLog2Pi + std::log(sigma) + 0.5 * z * z;
  }
  return total;
}

inline double gaussian_nll(const Vector& x, const Vector& mean, const Vector& raw_scale) {
  return gaussian_nll(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())),
                      std::span<const double>(mean.data(), static_cast<std::size_t>(mean.size())),
                      std::span<const double>(raw_scale.data(),
                                              static_cast<std::size_t>(raw_scale.size())));
}

/// Row-wise NLL for a query-network output block `out` = [mean | raw_scale]
/// (rows x 2*dm) against `truth` (rows x dm). Returns one value per row.
/// When `grad` is non-null, it receives d(sum_r weight_r * nll_r)/d out.
inline Vector gaussian_nll_rows(const Matrix& truth, const Matrix& out, const Vector* weights = nullptr,
                                Matrix* grad = nullptr) {
  const Index dm = truth.cols();
  if (out.cols() != 2 * dm || out.rows() != truth.rows())
    throw UsageError("gaussian_nll_rows: output block does not match ground truth");
  Vector nll(truth.rows());
  if (grad) grad->setZero(out.rows(), out.cols());
  for (Index r = 0; r < truth.rows(); ++r) {
    double row_total = 0.0;
    const double w = weights ? (*weights)(r) : 1.0;
    for (Index k = 0; k < dm; ++k) {
      const double raw = out(r, dm + k);
      const double sigma = softplus(raw);
      const double diff = truth(r, k) - out(r, k);
      const double z = diff / sigma;
      row_total += kHalfLog2Pi + std::log(sigma) + 0.5 * z * z;
      if (grad) {
        (*grad)(r, k) = -w * diff / (sigma * sigma);
        const double dsigma = 1.0 / sigma - diff * diff / (sigma * sigma * sigma);
        (*grad)(r, dm + k) = w * dsigma * sigmoid(raw);
      }
    }
    nll(r) = row_total;
  }
  return nll;
}

// ---------------------------------------------------------------------------
// Multilayer perceptron

/// Activations recorded by a forward pass, consumed by Mlp::backward.
struct MlpTape {
  std::vector<Matrix> layer_inputs;   // input to each affine layer
  std::vector<Matrix> pre_activation; // hidden pre-activations
  bool recorded = false;
};

/// Stack of affine layers; hidden layers use the configured activation and
/// the output layer is linear. Rows of the input matrix are independent samples.
class Mlp {
 public:
  Mlp() = default;

  explicit Mlp(MlpSpec spec, const std::string& prefix = "mlp") : spec_(std::move(spec)) {
    spec_.validate();
    const auto widths = spec_.layer_widths();
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      params_.emplace_back(prefix + ".w" + std::to_string(l),
                           std::vector<Index>{widths[l], widths[l + 1]});
      params_.emplace_back(prefix + ".b" + std::to_string(l), std::vector<Index>{widths[l + 1]});
    }
  }

  const MlpSpec& spec() const { return spec_; }
  std::size_t parameter_count() const { return cnep::parameter_count(spec_); }
  std::size_t num_layers() const { return params_.size() / 2; }

  std::vector<ParamTensor>& params() { return params_; }
  const std::vector<ParamTensor>& params() const { return params_; }

  /// Weights and biases uniform in +-sqrt(1/fan_in).
  void init_uniform(Rng& rng) {
    for (std::size_t l = 0; l < num_layers(); ++l) {
      const double bound = std::sqrt(1.0 / static_cast<double>(weight(l).rows()));
      for (auto* tensor : {&params_[2 * l], &params_[2 * l + 1]})
        for (Index i = 0; i < tensor->size(); ++i) tensor->values(i) = rng.uniform(-bound, bound);
    }
  }

  void set_zero() {
    for (auto& p : params_) p.values.setZero();
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  Matrix forward(const Matrix& input) const {
    check_input(input);
    Matrix h = input;
    for (std::size_t l = 0; l < num_layers(); ++l) {
      Matrix z = affine(l, h);
      h = (l + 1 < num_layers()) ? activate(z) : std::move(z);
    }
    return h;
  }

  Matrix forward(const Matrix& input, MlpTape& tape) const {
    check_input(input);
    tape.layer_inputs.clear();
    tape.pre_activation.clear();
    Matrix h = input;
    for (std::size_t l = 0; l < num_layers(); ++l) {
      tape.layer_inputs.push_back(h);
      Matrix z = affine(l, h);
      if (l + 1 < num_layers()) {
        h = activate(z);
        tape.pre_activation.push_back(std::move(z));
      } else {
        h = std::move(z);
      }
    }
    tape.recorded = true;
    return h;
  }

  /// Accumulates parameter gradients for upstream gradient `d_output` and
  /// returns the gradient with respect to the recorded input.
  Matrix backward(const MlpTape& tape, const Matrix& d_output) {
    if (!tape.recorded) throw UsageError("Mlp::backward called without a recorded forward pass");
    if (d_output.cols() != spec_.output_width || d_output.rows() != tape.layer_inputs.front().rows())
      throw UsageError("Mlp::backward: upstream gradient shape mismatch");
    Matrix delta = d_output;
    for (std::size_t l = num_layers(); l-- > 0;) {
      const Matrix& in = tape.layer_inputs[l];
      params_[2 * l].grad_matrix().noalias() += in.transpose() * delta;
      Eigen::Map<Vector>(params_[2 * l + 1].grad.data(), params_[2 * l + 1].size()) +=
          delta.colwise().sum().transpose();
      Matrix d_in = delta * weight(l).transpose();
      if (l > 0) {
        const Matrix& z = tape.pre_activation[l - 1];
        if (spec_.hidden_activation == Activation::relu) {
          d_in = d_in.array() * (z.array() > 0.0).cast<double>();
        } else {
          d_in = d_in.array() * (1.0 - in.array().square());
        }
      }
      delta = std::move(d_in);
    }
    return delta;
  }

 private:
  Eigen::Map<const Matrix> weight(std::size_t l) const { return params_[2 * l].matrix(); }

  Matrix affine(std::size_t l, const Matrix& h) const {
    Matrix z = h * weight(l);
    z.rowwise() += Eigen::Map<const Vector>(params_[2 * l + 1].values.data(),
                                            params_[2 * l + 1].size())
                       .transpose();
    return z;
  }

  Matrix activate(const Matrix& z) const {
    if (spec_.hidden_activation == Activation::relu) return z.cwiseMax(0.0);
    return z.array().tanh().matrix();
  }

  void check_input(const Matrix& input) const {
    if (input.cols() != spec_.input_width)
      throw ConfigError("mlp input has " + std::to_string(input.cols()) + " columns, expected " +
                        std::to_string(spec_.input_width));
  }

  MlpSpec spec_;
  std::vector<ParamTensor> params_;
};

/// Stateless forward for an explicit parameter set laid out as
/// {w0, b0, w1, b1, ...} with w_l of shape {in_l, out_l}.
inline Vector mlp_forward(const MlpSpec& spec, std::span<const ParamTensor> params, const Vector& input) {
  spec.validate();
  const auto widths = spec.layer_widths();
  if (params.size() != 2 * (widths.size() - 1))
    throw ConfigError("mlp_forward: expected " + std::to_string(2 * (widths.size() - 1)) +
                      " parameter tensors");
  if (input.size() != spec.input_width) throw ConfigError("mlp_forward: input width mismatch");
  Vector h = input;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const ParamTensor& w = params[2 * l];
    const ParamTensor& b = params[2 * l + 1];
    if (w.rows() != widths[l] || w.cols() != widths[l + 1] || b.size() != widths[l + 1])
      throw ConfigError("mlp_forward: layer " + std::to_string(l) + " parameter shape mismatch");
    Vector z = w.matrix().transpose() * h + b.values;
    if (l + 2 < widths.size()) {
      h = spec.hidden_activation == Activation::relu ? Vector(z.cwiseMax(0.0))
                                                     : Vector(z.array().tanh().matrix());
    } else {
      h = std::move(z);
    }
  }
  return h;
}

/// Row-wise softmax backward: given probabilities P and dL/dP, returns dL/dlogits.
inline Matrix softmax_rows_backward(const Matrix& probs, const Matrix& d_probs) {
  Matrix d_logits(probs.rows(), probs.cols());
  for (Index i = 0; i < probs.rows(); ++i) {
    const double inner = probs.row(i).dot(d_probs.row(i));
    d_logits.row(i) = probs.row(i).array() * (d_probs.row(i).array() - inner);
  }
  return d_logits;
}

}  // namespace cnep
