// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset. Exit status is 0 only if every run criterion
// passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <numbers>
#include <optional>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "cnep/cnep.hpp"
#include "support/gradcheck.hpp"
#include "support/loss_oracle.hpp"

using namespace cnep;

namespace {

// Tolerances and counts of the criteria.
constexpr int kGradModels = 20;
constexpr double kOracleTol = 1e-10;
constexpr int kOracleBatches = 50;
constexpr int kEntropyMatrices = 1000;
constexpr int kSeeds = 10;
constexpr double kUnimodalCeiling = 0.05;
constexpr double kRankAlpha = 0.05;
constexpr std::size_t kConvergenceVotes = 7;
constexpr double kFidelityCeiling = 0.05;
constexpr double kGateFloor = 0.9;
constexpr std::size_t kCommitVotes = 8;
constexpr double kCnmpCollisionFloor = 0.5;
constexpr double kPidExact = 1e-9;
constexpr int kPidCases = 100;
constexpr double kCsvTol = 1e-12;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) { return detail::format6(v); }

std::vector<std::uint64_t> seed_list() {
  std::vector<std::uint64_t> s;
  for (int i = 0; i < kSeeds; ++i) s.push_back(static_cast<std::uint64_t>(i));
  return s;
}

BenchResult bench(const std::string& scenario) {
  BenchSettings s = default_bench_settings(scenario);
  s.seeds = seed_list();
  return run_scenario(scenario, s);
}

// ---------------------------------------------------------------------------

Verdict gradients() {
  Rng rng(2024);
  std::size_t checked = 0, bad = 0;
  double worst = 0.0;
  for (int i = 0; i < kGradModels; ++i) {
    const Index dm = rng.uniform_int(1, 2);
    const Index width = rng.uniform_int(3, 6);
    const Batch batch = testing::random_batch(rng.uniform_int(1, 4), dm, 4, 4, rng);
    const auto check = [&](auto& model) {
      const auto res = testing::check_model_gradients(model, batch, 1000, rng);
      checked += res.checked;
      bad += res.mismatches.size();
      worst = std::max(worst, res.worst_relative);
    };
    if (i % 2 == 0) {
      CnmpConfig c;
      c.dm = dm;
      c.latent_width = width;
      c.encoder_hidden = {width};
      c.query_hidden = {width, width};
      c.activation = Activation::tanh;
      CnmpModel m(c, rng.next_u64());
      check(m);
    } else {
      CnepConfig c;
      c.dm = dm;
      c.experts = rng.uniform_int(2, 4);
      c.latent_width = width;
      c.encoder_hidden = {width};
      c.query_hidden = {width};
      c.gate_hidden = {width};
      c.activation = Activation::tanh;
      c.alphas = {rng.uniform(0.5, 2), rng.uniform(-1, 0), rng.uniform(0, 1)};
      CnepModel m(c, rng.next_u64());
      check(m);
    }
  }
  return {bad == 0, std::to_string(checked) + " parameter entries, " + std::to_string(bad) +
                        " outside tolerance, worst relative error above the 1e-7 floor " + fmt(worst)};
}

Verdict loss_oracle() {
  Rng rng(7);
  double worst = 0.0;
  for (int i = 0; i < kOracleBatches; ++i) {
    CnepConfig c;
    c.dm = rng.uniform_int(1, 3);
    c.experts = rng.uniform_int(2, 5);
    c.latent_width = rng.uniform_int(2, 8);
    c.encoder_hidden = {rng.uniform_int(2, 8)};
    c.query_hidden = {rng.uniform_int(2, 8)};
    c.gate_hidden = {rng.uniform_int(2, 8)};
    c.alphas = {rng.uniform(0, 2), rng.uniform(-2, 0), rng.uniform(0, 2)};
    const CnepModel m(c, rng.next_u64());
    const Batch batch = testing::random_batch(rng.uniform_int(1, 6), c.dm, 5, 5, rng);
    const LossBreakdown got = m.loss(batch);
    const auto want = testing::oracle_cnep_loss(m, batch);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const Vector latent = m.encode(batch[b].obs);
      const Vector losses = m.expert_losses(latent, batch[b].targets, batch[b].truth);
      const Vector gate = m.gate_probs(latent);
      for (Index e = 0; e < c.experts; ++e) {
        worst = std::max(worst, std::abs(losses(e) - want.expert_losses[b][static_cast<std::size_t>(e)]));
        worst = std::max(worst, std::abs(gate(e) - want.gates[b][static_cast<std::size_t>(e)]));
      }
    }
    for (const auto& [a, b] : {std::pair{got.rec, want.rec}, std::pair{got.batch_entropy, want.batch_entropy},
                               std::pair{got.ind_entropy, want.ind_entropy}, std::pair{got.total, want.total}})
      worst = std::max(worst, std::abs(a - b));
    const double assembled = c.alphas.rec * got.rec + c.alphas.batch * got.batch_entropy + c.alphas.ind * got.ind_entropy;
    worst = std::max(worst, std::abs(assembled - got.total));
  }
  return {worst <= kOracleTol, std::to_string(kOracleBatches) + " batches, max deviation " + fmt(worst)};
}

Verdict entropies() {
  bool ok = true;
  std::string why;
  Matrix uniform2 = Matrix::Constant(3, 2, 0.5), uniform4 = Matrix::Constant(5, 4, 0.25);
  Matrix onehot = Matrix::Zero(4, 3);
  for (Index i = 0; i < 4; ++i) onehot(i, i % 3) = 1.0;
  Matrix same = Matrix::Zero(3, 3);
  same.col(1).setOnes();
  const auto expect = [&](double got, double want, const std::string& name) {
    if (std::abs(got - want) > 5e-7) {
      ok = false;
      why += " " + name + "=" + fmt(got);
    }
  };
  expect(batch_entropy(uniform2), 0.693147, "batch(uniform 2)");
  expect(individual_entropy(uniform2), 0.693147, "ind(uniform 2)");
  expect(batch_entropy(uniform4), 1.386294, "batch(uniform 4)");
  expect(individual_entropy(uniform4), 1.386294, "ind(uniform 4)");
  expect(individual_entropy(onehot), 0.0, "ind(one-hot)");
  expect(batch_entropy(same), 0.0, "batch(identical one-hot)");
  Rng rng(31);
  int violations = 0;
  for (int i = 0; i < kEntropyMatrices; ++i) {
    Matrix p(rng.uniform_int(1, 8), rng.uniform_int(2, 6));
    for (Index r = 0; r < p.rows(); ++r) {
      Vector logits(p.cols());
      for (Index e = 0; e < p.cols(); ++e) logits(e) = rng.uniform(-6, 6);
      p.row(r) = softmax(logits).transpose();
    }
    if (batch_entropy(p) < individual_entropy(p) - 1e-12) ++violations;
  }
  if (violations) {
    ok = false;
    why += " " + std::to_string(violations) + " matrices with batch < individual";
  }
  return {ok, ok ? "known values exact; batch >= individual on " + std::to_string(kEntropyMatrices) + " random matrices"
                 : "mismatch:" + why};
}

Verdict unimodal(const BenchResult& r) {
  const auto& a = r.values("cnmp", "val_mse");
  const auto& c = r.values("cnep", "val_mse");
  std::vector<double> pooled = a;
  pooled.insert(pooled.end(), c.begin(), c.end());
  const double ma = median_of(a), mc = median_of(c), iqr = iqr_of(pooled);
  return {std::abs(ma - mc) < iqr && ma < kUnimodalCeiling && mc < kUnimodalCeiling,
          "median val MSE cnmp " + fmt(ma) + ", cnep " + fmt(mc) + ", pooled IQR " + fmt(iqr)};
}

Verdict multimodal(const BenchResult& r) {
  const double ma = r.median("cnmp", "val_mse"), mc = r.median("cnep", "val_mse");
  const double p = wilcoxon_signed_rank_p(r.values("cnmp", "val_mse"), r.values("cnep", "val_mse"));
  const bool parity = r.cnmp_parameters >= r.cnep_parameters &&
                      static_cast<double>(r.cnmp_parameters) <= 1.1 * static_cast<double>(r.cnep_parameters);
  return {parity && mc < ma && p < kRankAlpha,
          "median val MSE cnmp " + fmt(ma) + ", cnep " + fmt(mc) + ", p " + fmt(p) + ", parameters " +
              std::to_string(r.cnmp_parameters) + " vs " + std::to_string(r.cnep_parameters)};
}

Verdict convergence(const BenchResult& r) {
  const auto& ea = r.values("cnmp", "convergence_epoch");
  const auto& ec = r.values("cnep", "convergence_epoch");
  std::size_t wins = 0;
  for (std::size_t i = 0; i < ea.size(); ++i) wins += ec[i] <= ea[i] ? 1 : 0;
  return {wins >= kConvergenceVotes, "cnep crossed the threshold no later in " + std::to_string(wins) + "/" +
                                         std::to_string(ea.size()) + " seeds (median epoch cnmp " +
                                         fmt(median_of(ea)) + ", cnep " + fmt(median_of(ec)) + ")"};
}

Verdict commitment(const BenchResult& r) {
  const auto& fa = r.values("cnmp", "mode_fidelity");
  const auto& fc = r.values("cnep", "mode_fidelity");
  const auto& g = r.values("cnep", "gate_max_p");
  std::size_t committed = 0, worse = 0;
  for (std::size_t i = 0; i < fc.size(); ++i) {
    committed += fc[i] < kFidelityCeiling && g[i] > kGateFloor ? 1 : 0;
    worse += fa[i] > fc[i] ? 1 : 0;
  }
  return {committed >= kCommitVotes && worse >= kCommitVotes,
          "cnep committed in " + std::to_string(committed) + "/" + std::to_string(fc.size()) +
              " seeds, cnmp fidelity worse in " + std::to_string(worse) + " (median fidelity cnmp " +
              fmt(median_of(fa)) + ", cnep " + fmt(median_of(fc)) + ", median gate " + fmt(median_of(g)) + ")"};
}

Verdict avoidance(const BenchResult& r) {
  const auto& ha = r.values("cnmp", "collision_rate");
  const auto& hc = r.values("cnep", "collision_rate");
  const double ma = mean_of(ha), mc = mean_of(hc);
  return {mc == 0.0 && ma >= kCnmpCollisionFloor, "collision rate cnmp " + fmt(ma) + ", cnep " + fmt(mc)};
}

Verdict pid() {
  Rng rng(99);
  int inexact = 0, moved = 0, unstable = 0;
  for (int trial = 0; trial < kPidCases; ++trial) {
    const Index T = rng.uniform_int(30, 200), dm = rng.uniform_int(1, 3);
    Matrix x(T, dm);
    for (Index k = 0; k < dm; ++k) {
      const double a = rng.uniform(-1, 1), f = rng.uniform(0.5, 3), ph = rng.uniform(0, 6);
      for (Index i = 0; i < T; ++i) x(i, k) = a * std::sin(2 * std::numbers::pi * f * static_cast<double>(i) / static_cast<double>(T - 1) + ph);
    }
    PidConfig cfg;
    cfg.kp = rng.uniform(0.1, 2);
    cfg.ki = rng.uniform(0, 1);
    cfg.kd = rng.uniform(0, 0.3);
    cfg.decay_window = rng.uniform_int(4, std::min<Index>(30, T / 4));
    const Vector grid = unit_grid(T);
    std::set<Index> idx;
    const Index n = rng.uniform_int(1, 3);
    for (int a = 0; a < 100 && static_cast<Index>(idx.size()) < n; ++a) {
      const Index c = rng.uniform_int(0, T - 1);
      bool far = true;
      for (Index p : idx) far = far && std::abs(p - c) >= cfg.decay_window;
      if (far) idx.insert(c);
    }
    ObservationSet cond;
    cond.times.resize(static_cast<Index>(idx.size()));
    cond.values.resize(static_cast<Index>(idx.size()), dm);
    Index j = 0;
    for (Index c : idx) {
      cond.times(j) = grid(c);
      for (Index k = 0; k < dm; ++k) cond.values(j, k) = x(c, k) + rng.uniform(-0.5, 0.5);
      ++j;
    }
    const Matrix out = refine(x, cond, cfg);
    j = 0;
    for (Index c : idx) {
      if ((out.row(c) - cond.values.row(j)).cwiseAbs().maxCoeff() > kPidExact) ++inexact;
      ++j;
    }
    for (Index i = 0; i < T; ++i) {
      bool inside = false;
      for (Index c : idx) inside = inside || std::abs(i - c) < cfg.decay_window;
      if (!inside) {
        for (Index k = 0; k < dm; ++k)
          if (std::memcmp(&out(i, k), &x(i, k), sizeof(double)) != 0) ++moved;
      }
    }
    const Matrix again = refine(out, cond, cfg);
    if (std::memcmp(again.data(), out.data(), sizeof(double) * static_cast<std::size_t>(out.size())) != 0) ++unstable;
  }
  return {inexact == 0 && moved == 0 && unstable == 0,
          std::to_string(kPidCases) + " cases: " + std::to_string(inexact) + " missed points, " +
              std::to_string(moved) + " entries changed outside windows, " + std::to_string(unstable) +
              " not idempotent"};
}

Verdict persistence() {
  std::vector<std::string> problems;
  const Dataset ds = gen_sines(2, 5, 100, 3);
  AppConfig app = scenario_defaults("sines-2");
  app.train.epochs = 40;
  app.train.validation_every = 10;
  app.train.seed = 17;
  CnepConfig mc = app.model;
  mc.alphas = app.train.alphas;
  CnepModel a(mc, 5), b(mc, 5);
  const TrainReport ra = train(a, ds, app.train), rb = train(b, ds, app.train);
  if (!(ra == rb)) problems.push_back("TrainReports differ");
  CnmpModel c(parity_cnmp_config(mc), 6), d(parity_cnmp_config(mc), 6);
  if (!(train(c, ds, app.train) == train(d, ds, app.train))) problems.push_back("CNMP TrainReports differ");

  const auto dir = std::filesystem::temp_directory_path();
  const std::string pa = (dir / "cnep_accept_a.ckpt").string(), pc = (dir / "cnep_accept_c.ckpt").string();
  save_checkpoint(a, pa);
  save_checkpoint(c, pc);
  const CnepModel a2 = load_checkpoint<CnepModel>(pa);
  const CnmpModel c2 = load_checkpoint<CnmpModel>(pc);
  Rng rng(8);
  const Vector grid = unit_grid(100);
  for (int i = 0; i < 20; ++i) {
    const auto obs = ObservationSet::single(rng.uniform01(), Vector::Constant(1, rng.uniform(-1, 1)));
    const auto g1 = a.generate(obs, grid), g2 = a2.generate(obs, grid);
    if (g1.expert != g2.expert || !(g1.mean.array() == g2.mean.array()).all() ||
        !(g1.stddev.array() == g2.stddev.array()).all())
      problems.push_back("CNEP generation differs after reload");
    if (!(c.generate(obs, grid).mean.array() == c2.generate(obs, grid).mean.array()).all())
      problems.push_back("CNMP generation differs after reload");
  }
  std::filesystem::remove(pa);
  std::filesystem::remove(pc);

  double worst = 0.0;
  for (const Dataset& src : {gen_sines(4, 3, 150, 1), gen_intersecting(150, 2), gen_obstacle_pair(150, 3).first}) {
    std::stringstream ss;
    write_dataset(src, ss);
    const Dataset back = parse_dataset(ss);
    for (std::size_t i = 0; i < src.size(); ++i) {
      worst = std::max(worst, (back.trajectories[i].sm - src.trajectories[i].sm).cwiseAbs().maxCoeff());
      worst = std::max(worst, (back.trajectories[i].times - src.trajectories[i].times).cwiseAbs().maxCoeff());
    }
  }
  if (worst > kCsvTol) problems.push_back("dataset CSV error " + fmt(worst));
  std::string detail = "reports identical, reloaded generations identical, CSV max error " + fmt(worst);
  if (!problems.empty()) {
    detail.clear();
    for (const auto& p : problems) detail += (detail.empty() ? "" : "; ") + p;
  }
  return {problems.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  const auto want = [&](int k) { return wanted.empty() || wanted.count(k) > 0; };

  std::optional<BenchResult> sines4;
  const auto sines4_result = [&]() -> const BenchResult& {
    if (!sines4) sines4 = bench("sines-4");
    return *sines4;
  };

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"gradient correctness", gradients},
      {"loss-formula oracle", loss_oracle},
      {"entropy identities", entropies},
      {"unimodal parity (sines-1)", [] { return unimodal(bench("sines-1")); }},
      {"multimodal advantage (sines-4)", [&] { return multimodal(sines4_result()); }},
      {"faster convergence (sines-4)", [&] { return convergence(sines4_result()); }},
      {"mode commitment (intersecting)", [] { return commitment(bench("intersecting")); }},
      {"obstacle avoidance", [] { return avoidance(bench("obstacle")); }},
      {"PID exactness", pid},
      {"determinism and persistence", persistence},
  };

  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int k = static_cast<int>(i) + 1;
    if (!want(k)) continue;
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    all = all && v.pass;
    std::printf("%s %d %s: %s [%.1f s]\n", v.pass ? "PASS" : "FAIL", k, criteria[i].first.c_str(), v.detail.c_str(),
                secs);
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
