#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "cnep/model_cnep.hpp"
#include "cnep/model_cnmp.hpp"
#include "support/gradcheck.hpp"
#include "support/loss_oracle.hpp"

using namespace cnep;
using cnep::testing::check_model_gradients;
using cnep::testing::random_batch;

namespace {

CnepConfig small_cnep(Index dm, Index d, Activation act = Activation::tanh) {
  CnepConfig c;
  c.dm = dm;
  c.experts = d;
  c.latent_width = 6;
  c.encoder_hidden = {5, 5};
  c.query_hidden = {5, 4};
  c.gate_hidden = {4};
  c.activation = act;
  return c;
}

CnmpConfig small_cnmp(Index dm, Activation act = Activation::tanh) {
  CnmpConfig c;
  c.dm = dm;
  c.latent_width = 6;
  c.encoder_hidden = {5, 5};
  c.query_hidden = {7, 6};
  c.activation = act;
  return c;
}

ObservationSet make_obs(std::initializer_list<std::pair<double, double>> pts) {
  ObservationSet obs;
  obs.times.resize(static_cast<Index>(pts.size()));
  obs.values.resize(static_cast<Index>(pts.size()), 1);
  Index i = 0;
  for (auto [t, v] : pts) {
    obs.times(i) = t;
    obs.values(i, 0) = v;
    ++i;
  }
  return obs;
}

Example one_target_example(double t_obs, double v_obs, double t_q, double truth) {
  Example ex;
  ex.obs = make_obs({{t_obs, v_obs}});
  ex.targets.times = Vector::Constant(1, t_q);
  ex.truth = Matrix::Constant(1, 1, truth);
  return ex;
}

// Zeroes a query network and sets its raw-scale biases so std = 1 and the
// mean biases to `mean`.
void make_constant_query(Mlp& net, Index dm, double mean) {
  net.set_zero();
  auto& bias = net.params().back().values;
  for (Index k = 0; k < dm; ++k) {
    bias(k) = mean;
    bias(dm + k) = softplus_inverse(1.0);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// CNMP

TEST(CnmpEncode, SingleObservationIsItsEncoding) {
  CnmpModel model(small_cnmp(1), 3);
  const auto obs = make_obs({{0.3, 0.7}});
  Matrix row(1, 2);
  row << 0.3, 0.7;
  const Vector direct = model.encoder().forward(row).row(0).transpose();
  EXPECT_TRUE(equal_exact(model.encode(obs), direct));
}

TEST(CnmpEncode, PermutationInvariantAndDuplicateIdempotent) {
  CnmpModel model(small_cnmp(1), 3);
  const Vector a = model.encode(make_obs({{0.1, 0.5}, {0.6, -0.2}, {0.9, 0.1}}));
  const Vector b = model.encode(make_obs({{0.9, 0.1}, {0.1, 0.5}, {0.6, -0.2}}));
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_TRUE(equal_exact(model.encode(make_obs({{0.4, 0.2}, {0.4, 0.2}})), model.encode(make_obs({{0.4, 0.2}}))));
  EXPECT_THROW(model.encode(ObservationSet{}), UsageError);
}

TEST(CnmpQuery, ZeroNetAndShape) {
  CnmpModel model(small_cnmp(2), 1);
  model.query_network().set_zero();
  const Vector r = Vector::Random(6);
  const Vector raw = model.query_raw(r, 0.5);
  ASSERT_EQ(raw.size(), 4);
  const Prediction p = model.query(r, 0.5);
  for (Index k = 0; k < 2; ++k) {
    EXPECT_DOUBLE_EQ(p.mean(0, k), 0.0);
    EXPECT_NEAR(p.stddev(0, k), 0.6931, 1e-4);
  }
  EXPECT_TRUE(equal_exact(model.query_raw(r, 0.25), model.query_raw(r, 0.25)));
}

TEST(CnmpLoss, PerfectUnitSigmaPrediction) {
  CnmpModel model(small_cnmp(2), 1);
  make_constant_query(model.query_network(), 2, 0.4);
  Example ex;
  ex.obs = ObservationSet::single(0.2, Vector::Constant(2, 0.1));
  ex.targets.times = Vector::LinSpaced(3, 0.0, 1.0);
  ex.truth = Matrix::Constant(3, 2, 0.4);
  EXPECT_NEAR(model.loss({ex}).total, 0.918939 * 2, 1e-6);
}

TEST(CnmpLoss, DuplicatedBatchAndOracle) {
  CnmpModel model(small_cnmp(1), 9);
  Rng rng(2);
  const Batch batch = random_batch(3, 1, 4, 4, rng);
  Batch doubled = batch;
  doubled.insert(doubled.end(), batch.begin(), batch.end());
  EXPECT_NEAR(model.loss(batch).total, model.loss(doubled).total, 1e-13);
  EXPECT_NEAR(model.loss(batch).total, cnep::testing::oracle_cnmp_loss(model, batch), 1e-12);

  const Example ex = one_target_example(0.1, 0.3, 0.7, -0.2);
  const Prediction p = model.query(model.encode(ex.obs), 0.7);
  const double raw = softplus_inverse(p.stddev(0, 0));
  EXPECT_NEAR(model.loss({ex}).total,
              gaussian_nll(Vector::Constant(1, -0.2), Vector::Constant(1, p.mean(0, 0)), Vector::Constant(1, raw)),
              1e-10);
}

TEST(CnmpGenerate, ShapeAndDeterminism) {
  CnmpModel model(small_cnmp(1), 4);
  const auto obs = make_obs({{0.0, 0.0}, {0.5, 1.0}});
  const Vector times = Vector::LinSpaced(17, 0.0, 1.0);
  const Prediction a = model.generate(obs, times);
  const Prediction b = model.generate(obs, times);
  EXPECT_EQ(a.mean.rows(), 17);
  EXPECT_TRUE(equal_exact(a.mean, b.mean));
  EXPECT_TRUE(equal_exact(a.stddev, b.stddev));
  EXPECT_THROW(model.generate(obs, Vector::Constant(1, 1.5)), UsageError);
}

TEST(CnmpBackward, RequiresForward) {
  CnmpModel model(small_cnmp(1), 4);
  EXPECT_THROW(model.backward(), UsageError);
  Rng rng(1);
  model.forward_loss(random_batch(2, 1, 3, 3, rng));
  EXPECT_NO_THROW(model.backward());
  EXPECT_THROW(model.backward(), UsageError);
}

TEST(CnmpBackward, FiniteDifferences) {
  Rng rng(31);
  for (Index dm : {1, 2}) {
    CnmpModel model(small_cnmp(dm), 100 + static_cast<std::uint64_t>(dm));
    const Batch batch = random_batch(3, dm, 4, 5, rng);
    const auto res = check_model_gradients(model, batch, 12, rng);
    EXPECT_TRUE(res.ok()) << res.mismatches.size() << " mismatches, first in "
                          << (res.mismatches.empty() ? "" : res.mismatches.front().tensor);
  }
}

// ---------------------------------------------------------------------------
// Loss components

TEST(WeightedRecLoss, DirectFormula) {
  Vector L(2), p(2);
  L << 2.0, 4.0;
  p << 0.5, 0.5;
  EXPECT_DOUBLE_EQ(weighted_rec_loss(L, p), 1.5);
  p << 1.0, 0.0;
  EXPECT_DOUBLE_EQ(weighted_rec_loss(L, p), 1.0);
  EXPECT_THROW(weighted_rec_loss(L, Vector::Ones(3)), UsageError);
}

TEST(WeightedRecLoss, MatchesLoopAndIsBilinear) {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const Index d = rng.uniform_int(1, 6);
    Vector L(d), p(d), L2(d), p2(d);
    for (Index e = 0; e < d; ++e) {
      L(e) = rng.uniform(-3, 3);
      L2(e) = rng.uniform(-3, 3);
      p(e) = rng.uniform01();
      p2(e) = rng.uniform01();
    }
    double loop = 0.0;
    for (Index e = 0; e < d; ++e) loop += L(e) * p(e);
    loop /= static_cast<double>(d);
    EXPECT_NEAR(weighted_rec_loss(L, p), loop, 1e-12);
    const double s = rng.uniform(-2, 2);
    EXPECT_NEAR(weighted_rec_loss(L + s * L2, p), weighted_rec_loss(L, p) + s * weighted_rec_loss(L2, p), 1e-12);
    EXPECT_NEAR(weighted_rec_loss(L, p + s * p2), weighted_rec_loss(L, p) + s * weighted_rec_loss(L, p2), 1e-12);
  }
}

TEST(Entropies, KnownValues) {
  Matrix split(2, 2);
  split << 1, 0, 0, 1;
  EXPECT_NEAR(batch_entropy(split), 0.693147, 1e-6);
  EXPECT_DOUBLE_EQ(individual_entropy(split), 0.0);
  Matrix same(3, 2);
  same << 1, 0, 1, 0, 1, 0;
  EXPECT_DOUBLE_EQ(batch_entropy(same), 0.0);
  EXPECT_NEAR(batch_entropy(Matrix::Constant(5, 4, 0.25)), 1.386294, 1e-6);
  EXPECT_NEAR(individual_entropy(Matrix::Constant(3, 2, 0.5)), std::numbers::ln2, 1e-15);
  Matrix mixed(2, 2);
  mixed << 1, 0, 0.5, 0.5;
  EXPECT_NEAR(individual_entropy(mixed), 0.346574, 1e-6);
}

TEST(Entropies, BoundsAndJensen) {
  Rng rng(12);
  for (int trial = 0; trial < 1000; ++trial) {
    const Index b = rng.uniform_int(1, 8);
    const Index d = rng.uniform_int(2, 6);
    Matrix logits(b, d);
    const double spread = rng.uniform(0.1, 12.0);
    for (Index i = 0; i < logits.size(); ++i) logits(i) = rng.uniform(-spread, spread);
    const Matrix P = log_softmax_rows(logits).array().exp();
    const double hb = batch_entropy(P);
    const double hi = individual_entropy(P);
    const double log_d = std::log(static_cast<double>(d));
    EXPECT_GE(hb, -1e-15);
    EXPECT_GE(hi, -1e-15);
    EXPECT_LE(hb, log_d + 1e-12);
    EXPECT_LE(hi, log_d + 1e-12);
    EXPECT_GE(hb, hi - 1e-12);
  }
}

// ---------------------------------------------------------------------------
// CNEP

TEST(CnepGate, ZeroGateIsUniform) {
  CnepModel model(small_cnep(1, 3), 2);
  model.gate().set_zero();
  const Vector p = model.gate_probs(Vector::Random(6));
  for (Index e = 0; e < 3; ++e) EXPECT_NEAR(p(e), 1.0 / 3.0, 1e-15);
  CnepModel other(small_cnep(1, 3), 5);
  EXPECT_NEAR(other.gate_probs(Vector::Random(6)).sum(), 1.0, 1e-12);
}

TEST(CnepExpertLosses, IdenticalExpertsAndUnitSigma) {
  CnepModel model(small_cnep(2, 2), 8);
  model.expert(1).params() = model.expert(0).params();
  Example ex;
  ex.obs = ObservationSet::single(0.3, Vector::Constant(2, 0.2));
  ex.targets.times = Vector::LinSpaced(4, 0.1, 0.9);
  ex.truth = Matrix::Random(4, 2);
  const Vector r = model.encode(ex.obs);
  const Vector L = model.expert_losses(r, ex.targets, ex.truth);
  EXPECT_DOUBLE_EQ(L(0), L(1));

  make_constant_query(model.expert(0), 2, 0.0);
  ex.truth.setZero();
  EXPECT_NEAR(model.expert_losses(r, ex.targets, ex.truth)(0), 0.918939 * 2, 1e-6);
}

TEST(CnepExpertLosses, MatchesPerExpertOracle) {
  CnepModel model(small_cnep(1, 3), 8);
  Rng rng(5);
  const Batch batch = random_batch(1, 1, 3, 4, rng);
  const Vector r = model.encode(batch[0].obs);
  const Vector L = model.expert_losses(r, batch[0].targets, batch[0].truth);
  for (Index e = 0; e < 3; ++e)
    EXPECT_NEAR(L(e), cnep::testing::oracle_expert_loss(model.expert(e), r, batch[0]), 1e-12);
}

TEST(CnepLoss, RecOnlyWeightsGiveRec) {
  auto cfg = small_cnep(1, 2);
  cfg.alphas = {1.0, 0.0, 0.0};
  CnepModel model(cfg, 3);
  Rng rng(9);
  const auto lb = model.loss(random_batch(4, 1, 5, 5, rng));
  EXPECT_DOUBLE_EQ(lb.total, lb.rec);
  EXPECT_NEAR(lb.nll, 2.0 * lb.rec, 1e-14);
}

TEST(CnepLoss, DuplicationInvariantAndOracle) {
  CnepModel model(small_cnep(2, 3), 14);
  Rng rng(10);
  for (int trial = 0; trial < 10; ++trial) {
    const Batch batch = random_batch(rng.uniform_int(1, 5), 2, 5, 5, rng);
    Batch doubled = batch;
    doubled.insert(doubled.end(), batch.begin(), batch.end());
    const auto lb = model.loss(batch);
    EXPECT_NEAR(model.loss(doubled).total, lb.total, 1e-12);
    const auto oracle = cnep::testing::oracle_cnep_loss(model, batch);
    EXPECT_NEAR(lb.rec, oracle.rec, 1e-10);
    EXPECT_NEAR(lb.batch_entropy, oracle.batch_entropy, 1e-10);
    EXPECT_NEAR(lb.ind_entropy, oracle.ind_entropy, 1e-10);
    EXPECT_NEAR(lb.total, oracle.total, 1e-10);
    EXPECT_DOUBLE_EQ(lb.total, lb.alphas.rec * lb.rec + lb.alphas.batch * lb.batch_entropy +
                                   lb.alphas.ind * lb.ind_entropy);
  }
}

TEST(CnepLoss, SingleExpertReducesToCnmp) {
  auto cfg = small_cnep(1, 1);
  cfg.alphas = {1.0, 0.0, 0.0};
  CnepModel cnep_model(cfg, 21);
  CnmpConfig twin = small_cnmp(1);
  twin.query_hidden = cfg.query_hidden;
  CnmpModel cnmp_model(twin, 0);
  cnmp_model.encoder().params() = cnep_model.encoder().params();
  cnmp_model.query_network().params() = cnep_model.expert(0).params();
  Rng rng(4);
  const Batch batch = random_batch(4, 1, 5, 5, rng);
  EXPECT_NEAR(cnep_model.loss(batch).total, cnmp_model.loss(batch).total, 1e-13);
}

TEST(CnepGenerate, ArgmaxSelectionAndTieBreak) {
  Vector p(3);
  p << 0.1, 0.8, 0.1;
  EXPECT_EQ(argmax_lowest(p), 1);
  Vector tie(2);
  tie << 0.5, 0.5;
  EXPECT_EQ(argmax_lowest(tie), 0);

  CnepModel model(small_cnep(1, 2), 6);
  model.gate().set_zero();  // exact tie
  const auto obs = make_obs({{0.2, 0.4}});
  const Vector times = Vector::LinSpaced(9, 0.0, 1.0);
  const GatedPrediction g = model.generate(obs, times);
  EXPECT_EQ(g.expert, 0);
  const Prediction e0 = model.expert_query(0, model.encode(obs), times);
  EXPECT_TRUE(equal_exact(g.mean, e0.mean));

  // Bias the gate toward the second expert.
  model.gate().params().back().values(1) = 1.0;
  const GatedPrediction g1 = model.generate(obs, times);
  EXPECT_EQ(g1.expert, 1);
  EXPECT_TRUE(equal_exact(g1.mean, model.expert_query(1, model.encode(obs), times).mean));
}

TEST(CnepGenerate, ChoiceInvariantUnderLogitShift) {
  Rng rng(44);
  for (int trial = 0; trial < 50; ++trial) {
    CnepModel model(small_cnep(1, 4), static_cast<std::uint64_t>(trial));
    const auto obs = make_obs({{rng.uniform01(), rng.uniform(-1, 1)}});
    const Vector times = Vector::LinSpaced(5, 0.0, 1.0);
    const Index before = model.generate(obs, times).expert;
    model.gate().params().back().values.array() += rng.uniform(-30, 30);
    EXPECT_EQ(model.generate(obs, times).expert, before);
  }
}

TEST(CnepParameters, CountsAreAdditive) {
  const auto cfg = small_cnep(1, 3);
  CnepModel model(cfg, 0);
  const std::size_t expert = parameter_count(cfg.expert_spec());
  EXPECT_EQ(model.parameter_count(),
            parameter_count(cfg.encoder_spec()) + parameter_count(cfg.gate_spec()) + 3 * expert);
  auto cfg6 = cfg;
  cfg6.experts = 6;
  CnepModel model6(cfg6, 0);
  // doubling d doubles the expert block; the gate readout grows by latent gate width + 1 per logit
  EXPECT_EQ(model6.parameter_count() - parameter_count(cfg6.gate_spec()) - parameter_count(cfg6.encoder_spec()),
            2 * (model.parameter_count() - parameter_count(cfg.gate_spec()) - parameter_count(cfg.encoder_spec())));
}

TEST(CnepParameters, DefaultParity) {
  for (Index d : {2, 3, 4}) {
    CnepConfig cfg;
    cfg.experts = d;
    const CnmpConfig twin = parity_cnmp_config(cfg);
    const std::size_t cnep_count = CnepModel(cfg, 0).parameter_count();
    const std::size_t cnmp_count = CnmpModel(twin, 0).parameter_count();
    EXPECT_GE(cnmp_count, cnep_count);
    EXPECT_LE(static_cast<double>(cnmp_count), 1.1 * static_cast<double>(cnep_count));
    EXPECT_NO_THROW(assert_parameter_parity(cnmp_count, cnep_count));
  }
  EXPECT_THROW(assert_parameter_parity(100, 101), ConfigError);
  EXPECT_THROW(assert_parameter_parity(120, 100), ConfigError);
}

TEST(CnepBackward, FiniteDifferences) {
  Rng rng(77);
  for (Index d : {2, 3}) {
    for (Index dm : {1, 2}) {
      CnepModel model(small_cnep(dm, d), static_cast<std::uint64_t>(10 * d + dm));
      const Batch batch = random_batch(3, dm, 4, 4, rng);
      const auto res = check_model_gradients(model, batch, 10, rng);
      EXPECT_TRUE(res.ok()) << "d=" << d << " dm=" << dm << ": " << res.mismatches.size()
                            << " mismatches, first in "
                            << (res.mismatches.empty() ? "" : res.mismatches.front().tensor);
    }
  }
}

TEST(CnepBackward, RequiresForward) {
  CnepModel model(small_cnep(1, 2), 4);
  EXPECT_THROW(model.backward(), UsageError);
}
