// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <Eigen/Dense>

#include "crb/uq_mc.hpp"

using namespace crb;

namespace
{

struct HeatSink
{
  Mesh mesh;
  KLBasis kl;
  AffineForm form;
  ReducedBasis rb;
};

HeatSink make_heat_sink(double upsilon, std::size_t n_max)
{
  HeatSink hs;
  hs.mesh = build_mesh(Geometry::TSink, 1.0 / 16);
  KLOptions o;
  o.upsilon = upsilon;
  hs.kl = kl_expand(hs.mesh, o);
  ModelSpec spec;
  spec.kind = ModelKind::TSinkRobin;
  spec.field = hs.kl.boundary_field();
  hs.form = assemble_affine(hs.mesh, spec);
  GreedyOptions g;
  g.n_max = n_max;
  g.eps = 1e-14;
  g.seed = 1;
  hs.rb = greedy_offline(hs.form, heat_sink_trial(hs.kl, 100, 2, 2.0, {5, 10, 15, 20, 25}), g);
  return hs;
}

const HeatSink &heat_sink()
{
  static const HeatSink hs = make_heat_sink(0.058, 8);
  return hs;
}

double naive_variance(const std::vector<double> &s)
{
  double m = 0.0;
  for (double x : s)
  {
    m += x;
  }
  m /= s.size();
  double v = 0.0;
  for (double x : s)
  {
    v += (x - m) * (x - m);
  }
  return v / (s.size() - 1);
}

}  // namespace

TEST_CASE("estimators are unbiased on a uniform stub")
{
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int reps = 10000;
  std::vector<double> vs(reps), es(reps);
  for (int r = 0; r < reps; r++)
  {
    std::vector<double> s(5);
    for (auto &x : s)
    {
      x = u(rng);
    }
    vs[r] = mc_variance(s);
    es[r] = mc_mean(s);
  }
  const double ev = mc_mean(vs), ee = mc_mean(es);
  CHECK(std::abs(ev - 1.0 / 12) <= 3.0 * std::sqrt(mc_variance(vs) / reps));
  CHECK(std::abs(ee - 0.5) <= 3.0 * std::sqrt(mc_variance(es) / reps));
  CHECK_THROWS_AS(mc_variance(std::vector<double>{1.0}), ConfigError);
}

TEST_CASE("variance discrepancy bound")
{
  const std::vector<double> s = {0.0, 1.0};
  CHECK(combine_variance_bound(s, std::vector<double>{0.0, 0.0}) == 0.0);
  CHECK(combine_variance_bound(s, std::vector<double>{0.1, 0.1}) == doctest::Approx(0.48));
  CHECK_THROWS_AS(combine_variance_bound(s, std::vector<double>{0.1}), ConfigError);

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<int> size(2, 20);
  for (int t = 0; t < 1000; t++)
  {
    const int m = size(rng);
    std::vector<double> a(m), b(m), e(m);
    for (int i = 0; i < m; i++)
    {
      a[i] = u(rng);
      e[i] = 0.2 * std::abs(u(rng));
      b[i] = a[i] + e[i] * u(rng);
    }
    CHECK(std::abs(naive_variance(a) - naive_variance(b)) <= combine_variance_bound(a, e) + 1e-15);
  }
}

TEST_CASE("zero fluctuation gives the deterministic output")
{
  const HeatSink hs = make_heat_sink(0.0, 2);
  MCOptions o;
  o.k_trunc = 5;
  o.m = 50;
  const MCResult r = mc_outputs(hs.rb, hs.kl, o);
  CHECK(r.variance == 0.0);
  const double s0 = online_solve(hs.rb, field_parameter(hs.kl, 2.0, Eigen::VectorXd())).output;
  CHECK(r.mean == doctest::Approx(s0).epsilon(1e-14));
}

TEST_CASE("total bound covers the full-field truth")
{
  const HeatSink &hs = heat_sink();
  std::mt19937_64 rng(3);
  int covered = 0;
  for (int i = 0; i < 100; i++)
  {
    const FieldRealization y = sample_y(hs.kl, 25, rng, {5, 10, 15, 20});
    const ParamVec full = field_parameter(hs.kl, 2.0, y.y);
    const double truth = solve_truth(hs.form, full).output;
    for (std::size_t k : {5, 10, 20, 25})
    {
      for (std::size_t n : {2, 5, 8})
      {
        const OnlineSolution sol = online_solve(hs.rb, hs.rb.theta.truncate(full, k), n);
        const double bound = total_error_bound(hs.rb, full, sol);
        covered += std::abs(truth - sol.output) <= bound;
        CHECK(std::abs(truth - sol.output) <= bound);
      }
    }
  }
  CHECK(covered == 1200);
}

TEST_CASE("total bound vanishes at a snapshot with all modes")
{
  const HeatSink &hs = heat_sink();
  for (const auto &mu : hs.rb.selected_mu)
  {
    ParamVec full = mu;
    // Snapshots drawn at a lower truncation are also full-field parameters.
    const OnlineSolution sol = online_solve(hs.rb, full);
    CHECK(total_error_bound(hs.rb, full, sol) <= 1e-8 * std::abs(sol.output));
  }
}

TEST_CASE("total bound grows as the truncation shrinks")
{
  const HeatSink &hs = heat_sink();
  const auto ys = draw_realizations(hs.kl, 100, 4, {5, 10, 15, 20});
  double prev = 0.0;
  for (std::size_t k : {20, 15, 10, 5})
  {
    const MCResult r = mc_outputs(hs.rb, hs.kl, ys, k, 8, 2.0);
    CHECK(r.delta_e > prev);
    prev = r.delta_e;
  }
}

TEST_CASE("Monte-Carlo result contracts and reproducibility")
{
  const HeatSink &hs = heat_sink();
  MCOptions o;
  o.k_trunc = 10;
  o.m = 200;
  o.seed = 77;
  const MCResult a = mc_outputs(hs.rb, hs.kl, o);
  CHECK(a.variance >= 0.0);
  CHECK(a.delta_e >= 0.0);
  CHECK(a.delta_v >= 0.0);
  CHECK(a.delta_e == doctest::Approx(mc_mean(a.per_sample_bounds)));
  CHECK(a.clt_halfwidth == doctest::Approx(1.96 * std::sqrt(a.variance / a.m)));

  set_thread_count(3);
  const MCResult b = mc_outputs(hs.rb, hs.kl, o);
  set_thread_count(0);
  CHECK(a.outputs == b.outputs);
  CHECK(a.mean == b.mean);
  CHECK(a.variance == b.variance);
  CHECK(a.delta_e == b.delta_e);
  CHECK(a.delta_v == b.delta_v);

  o.k_trunc = 26;
  CHECK_THROWS_AS(mc_outputs(hs.rb, hs.kl, o), ConfigError);
}
