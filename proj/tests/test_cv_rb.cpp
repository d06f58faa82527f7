// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "crb/cv_rb.hpp"
#include "crb/uq_mc.hpp"

using namespace crb;

namespace
{

DumbbellModel hookean_1d()
{
  DumbbellModel m(1, DumbbellForce::Hookean);
  m.x0 = {1.0};
  return m;
}

std::vector<ParamVec> line_trial(std::size_t n, double lo, double hi)
{
  std::vector<ParamVec> t;
  for (std::size_t i = 0; i < n; i++)
  {
    t.push_back({lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1)});
  }
  return t;
}

const CVBasis &alg1_basis()
{
  static const CVBasis b = []
  {
    CVGreedyOptions o;
    o.kind = CVKind::Alg1;
    o.n_max = 4;
    o.m_small = 500;
    o.m_large = 50000;
    o.steps = 50;
    o.seed = 5;
    return greedy_offline_cv(hookean_1d(), line_trial(21, 0.0, 2.0), o);
  }();
  return b;
}

}  // namespace

TEST_CASE("hand-computed combination")
{
  const std::vector<double> z = {1.0, 2.0, 3.0};
  Eigen::MatrixXd c(3, 1);
  c << 0.0, 1.0, 2.0;
  const CovarianceSystem s = covariance_system(z, c);
  CHECK(s.b[0] == doctest::Approx(2.0 / 3.0));
  CHECK(s.c(0, 0) == doctest::Approx(2.0 / 3.0));
  const CVEstimate e = solve_combination(z, c);
  CHECK(e.alpha_star[0] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(e.variance == doctest::Approx(0.0).epsilon(1e-28));
  CHECK(e.mean == doctest::Approx(1.0));
  CHECK(e.raw_variance == doctest::Approx(1.0));
}

TEST_CASE("zero controls give the raw estimator")
{
  const std::vector<double> z = {1.0, 4.0, 2.0, 8.0};
  const Eigen::MatrixXd c = Eigen::MatrixXd::Zero(4, 2);
  const CVEstimate e = solve_combination(z, c);
  CHECK(e.alpha_star.cwiseAbs().maxCoeff() == 0.0);
  CHECK(e.variance == e.raw_variance);
  CHECK(e.ratio == 1.0);
}

TEST_CASE("underdetermined combination")
{
  const std::vector<double> z = {1.0, 2.0};
  CHECK_THROWS_AS(solve_combination(z, Eigen::MatrixXd::Ones(2, 2)), ConfigError);
  CHECK_THROWS_AS(solve_combination(z, Eigen::MatrixXd::Ones(3, 1)), ConfigError);
}

TEST_CASE("least-squares optimality and agreement with the covariance system")
{
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n01;
  const int m = 300, n = 5;
  Eigen::MatrixXd y(m, n);
  std::vector<double> z(m);
  for (int i = 0; i < m; i++)
  {
    for (int j = 0; j < n; j++)
    {
      y(i, j) = n01(rng);
    }
    z[i] = 2.0 + y.row(i).sum() * 0.3 + 0.5 * y(i, 0) * y(i, 1) + 0.1 * n01(rng);
  }
  const CVEstimate e = solve_combination(z, y);
  const CovarianceSystem s = covariance_system(z, y);
  const Eigen::VectorXd direct = s.c.ldlt().solve(s.b);
  CHECK((e.alpha_star - direct).norm() <= 1e-10 * direct.norm());
  CHECK(e.variance <= e.raw_variance + 1e-12);
  CHECK(combination_variance(z, y, e.alpha_star) == doctest::Approx(e.variance).epsilon(1e-13));
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for (int t = 0; t < 100; t++)
  {
    Eigen::VectorXd a = e.alpha_star;
    for (int j = 0; j < n; j++)
    {
      a[j] *= 1.0 + u(rng);
    }
    CHECK(combination_variance(z, y, a) >= e.variance - 1e-12);
  }

  // A duplicated column changes nothing but the split of the weight.
  Eigen::MatrixXd y2(m, n + 1);
  y2 << y, y.col(2);
  const CVEstimate e2 = solve_combination(z, y2);
  CHECK(e2.variance == doctest::Approx(e.variance).epsilon(1e-10));
  CHECK(e2.alpha_star[2] == doctest::Approx(e2.alpha_star[5]).epsilon(1e-8));
}

TEST_CASE("Alg1 basis")
{
  const CVBasis &b = alg1_basis();
  const DumbbellModel model = hookean_1d();
  REQUIRE(b.size() == 4);
  CHECK(b.trial_history.size() == 3);
  for (std::size_t i = 0; i < b.size(); i++)
  {
    for (std::size_t j = 0; j < i; j++)
    {
      CHECK(b.selected[i] != b.selected[j]);
    }
  }
  for (double h : b.trial_history)
  {
    CHECK(h >= 0.0);
  }
  CHECK(b.trial_history.back() <= b.trial_history.front());

  SUBCASE("exact cancellation at a snapshot")
  {
    for (const ParamVec &l : b.selected)
    {
      const CVEstimate e = online_estimate(b, model, l, 500, 17);
      CHECK(e.variance <= 1e-20 * e.mean * e.mean);
      CHECK(e.ratio >= 1e6);
    }
    const CVEstimate one = online_estimate(b, model, b.selected[0], 500, 18, 1);
    CHECK(one.alpha_star[0] == doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("references and control means")
  {
    const SeededIncrements src(2000, 50, 1, 1.0 / 50, 21);
    const CVOnlineContext ctx = prepare_online(b, model, src);
    for (std::size_t i = 0; i < b.size(); i++)
    {
      const double a = b.selected[i][0] - 1.0;
      const double dt = 1.0 / 50;
      const double q = (1 + a * dt) * (1 + a * dt);
      const double euler = a == 0.0 ? 1.0 + 1.0 : std::pow(q, 50) + dt * (std::pow(q, 50) - 1) / (q - 1);
      std::vector<double> col(ctx.alg1_controls.rows());
      for (std::size_t p = 0; p < col.size(); p++)
      {
        col[p] = ctx.alg1_controls(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(i));
      }
      const double se = std::sqrt(mc_variance(col) / col.size());
      CHECK(std::abs(mc_mean(col)) <= 3.0 * se + std::abs(b.alg1_refs[i] - euler));
      CHECK(std::abs(b.alg1_refs[i] - euler) <= 3.0 * b.alg1_ref_halfwidths[i] / 1.96);
      // M_large = 100 M_small: reference half-widths are ten times smaller.
      const double ratio = b.alg1_ref_halfwidths[i] / clt_halfwidth(simulate(model, b.selected[i], 500, 50, 40 + i).z_values);
      CHECK(ratio == doctest::Approx(0.1).epsilon(0.25));
    }
  }

  SUBCASE("estimator consistency and no variance increase")
  {
    for (double l : {0.15, 0.77, 1.33, 1.9})
    {
      const CVEstimate e = online_estimate(b, model, {l}, 500, 23);
      CHECK(e.variance <= e.raw_variance + 1e-12);
      const double se = std::sqrt(e.variance / 500 + e.raw_variance / 500);
      CHECK(std::abs(e.mean - e.raw_mean) <= 3.0 * se);
      CHECK(e.ratio > 10.0);
    }
  }

  SUBCASE("reproducible at any thread count")
  {
    CVGreedyOptions o;
    o.kind = CVKind::Alg1;
    o.n_max = 4;
    o.m_small = 500;
    o.m_large = 50000;
    o.steps = 50;
    o.seed = 5;
    set_thread_count(3);
    const CVBasis c = greedy_offline_cv(model, line_trial(21, 0.0, 2.0), o);
    const CVEstimate e3 = online_estimate(c, model, {0.4}, 500, 9);
    set_thread_count(1);
    const CVEstimate e1 = online_estimate(b, model, {0.4}, 500, 9);
    set_thread_count(0);
    CHECK(c.selected == b.selected);
    CHECK(c.alg1_refs == b.alg1_refs);
    CHECK(c.trial_history == b.trial_history);
    CHECK(e3.mean == e1.mean);
    CHECK(e3.variance == e1.variance);
  }
}

TEST_CASE("single-element basis")
{
  CVGreedyOptions o;
  o.n_max = 1;
  o.m_small = 100;
  o.m_large = 1000;
  o.steps = 20;
  const CVBasis b = greedy_offline_cv(hookean_1d(), line_trial(5, 0.0, 1.0), o);
  CHECK(b.size() == 1);
  CHECK(b.alg1_refs.size() == 1);
  CHECK(b.trial_history.empty());
  CHECK_THROWS_AS(greedy_offline_cv(hookean_1d(), {}, o), ConfigError);
}

TEST_CASE("Alg2 controls")
{
  SUBCASE("constant terminal gives zero columns")
  {
    const auto m = make_ou_model([](double) { return 4.0; }, 0.5, 1.0);
    CVGreedyOptions o;
    o.kind = CVKind::Alg2;
    o.alg2_control = Alg2Control::Kolmogorov;
    o.n_max = 2;
    o.m_small = 100;
    o.steps = 20;
    o.grid = {-6.0, 6.0, 60};
    o.eps = -1.0;
    const CVBasis b = greedy_offline_cv(*m, line_trial(5, -1.0, 1.0), o);
    const SeededIncrements src(50, 20, 1, 0.05, 2);
    const CVOnlineContext ctx = prepare_online(b, *m, src);
    std::vector<double> z;
    const Eigen::MatrixXd y = build_controls(b, *m, {0.3}, ctx, z);
    CHECK(y.cols() == 2);
    CHECK(y.cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("grid and closed-form controls on Hookean dumbbells")
  {
    const DumbbellModel model = hookean_1d();
    CVGreedyOptions o;
    o.kind = CVKind::Alg2;
    o.n_max = 3;
    o.m_small = 500;
    o.steps = 50;
    o.seed = 8;
    o.alg2_control = Alg2Control::Kolmogorov;
    o.grid = {-8.0, 8.0, 320};
    o.grid_t_steps = 400;
    const CVBasis grid = greedy_offline_cv(model, line_trial(11, 0.0, 2.0), o);
    o.alg2_control = Alg2Control::HookeanExact;
    const CVBasis exact = greedy_offline_cv(model, line_trial(11, 0.0, 2.0), o);
    for (double l : {0.3, 1.1, 1.7})
    {
      const CVEstimate eg = online_estimate(grid, model, {l}, 500, 30);
      const CVEstimate ee = online_estimate(exact, model, {l}, 500, 30);
      CHECK(eg.ratio > 10.0);
      CHECK(ee.ratio > 10.0);
      CHECK(eg.grid_outside == 0);
      const double se = std::sqrt(ee.variance / 500 + ee.raw_variance / 500);
      CHECK(std::abs(ee.mean - ee.raw_mean) <= 3.0 * se);
    }
  }

  SUBCASE("two-dimensional FENE with Hookean controls")
  {
    DumbbellModel fene(2, DumbbellForce::Fene, 16.0);
    fene.x0 = {1.0, 1.0};
    CVGreedyOptions o;
    o.kind = CVKind::Alg2;
    o.n_max = 4;
    o.m_small = 300;
    o.steps = 100;
    o.seed = 2;
    const auto trial = sample_box(20, {-1, -1, -1}, {1, 1, 1}, 3);
    const CVBasis b = greedy_offline_cv(fene, trial, o);
    CHECK(b.size() == 4);
    const auto rows = cv_sweep(b, fene, sample_box(5, {-1, -1, -1}, {1, 1, 1}, 4), {1, 4}, 300, 5);
    CHECK(rows.size() == 2);
    CHECK(rows[1].geomean_ratio >= rows[0].geomean_ratio);
    CHECK(rows[0].min_ratio >= 1.0 - 1e-12);
  }
}

TEST_CASE("parameter box sampling")
{
  const auto s = sample_box(1000, {-1, -2}, {1, 2}, 4);
  for (const auto &p : s)
  {
    CHECK(std::abs(p[0]) <= 1.0);
    CHECK(std::abs(p[1]) <= 2.0);
  }
  CHECK(sample_box(3, {0}, {1}, 9) == sample_box(3, {0}, {1}, 9));
  CHECK_THROWS_AS(sample_box(3, {0}, {0}, 9), ConfigError);
}
