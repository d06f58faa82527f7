// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <Eigen/Dense>

#include "crb/kl_field.hpp"

using namespace crb;

namespace
{

const Mesh &sink()
{
  static const Mesh m = build_mesh(Geometry::TSink, 1.0 / 16);
  return m;
}

KLOptions heat_sink_options()
{
  KLOptions o;
  o.delta = 0.5;
  o.b_bar = 0.5;
  o.upsilon = 0.058;
  o.k_max = 25;
  return o;
}

// Dense weighted kernel W^1/2 K W^1/2 built directly from the quadrature.
Eigen::MatrixXd weighted_kernel(const KLBasis &kl)
{
  const auto n = static_cast<Eigen::Index>(kl.node_count());
  Eigen::MatrixXd a(n, n);
  for (Eigen::Index i = 0; i < n; i++)
  {
    for (Eigen::Index j = 0; j < n; j++)
    {
      const double dx = kl.nodes[i][0] - kl.nodes[j][0];
      const double dy = kl.nodes[i][1] - kl.nodes[j][1];
      const double d = kl.correlation_length;
      a(i, j) = std::sqrt(kl.weights[i] * kl.weights[j]) * std::exp(-(dx * dx + dy * dy) / (d * d));
    }
  }
  return a;
}

}  // namespace

TEST_CASE("nearly constant kernel has one dominant mode")
{
  KLOptions o = heat_sink_options();
  o.delta = 1e6;
  o.k_max = 5;
  const KLBasis kl = kl_expand(sink(), o);
  const double trace = kl.spectrum.sum();
  CHECK(kl.eigenvalues[0] >= 0.999 * trace);
  for (Eigen::Index k = 1; k < kl.spectrum.size(); k++)
  {
    CHECK(kl.spectrum[k] <= 1e-3 * kl.eigenvalues[0]);
  }
}

TEST_CASE("heat sink expansion invariants")
{
  const KLOptions o = heat_sink_options();
  const KLBasis kl = kl_expand(sink(), o);
  REQUIRE(kl.size() == 25);

  SUBCASE("trace identity")
  {
    double trace = 0.0;
    for (double w : kl.weights)
    {
      trace += w * std::pow(o.b_bar * o.upsilon, 2);
    }
    const double sum = std::pow(o.b_bar * o.upsilon, 2) * kl.spectrum.sum();
    CHECK(std::abs(sum - trace) <= 1e-6 * trace);
  }

  SUBCASE("sorted, non-negative, weighted-orthonormal modes")
  {
    for (Eigen::Index k = 1; k < kl.spectrum.size(); k++)
    {
      CHECK(kl.spectrum[k] <= kl.spectrum[k - 1]);
    }
    CHECK(kl.spectrum.minCoeff() >= 0.0);
    const Eigen::Map<const Eigen::VectorXd> w(kl.weights.data(), kl.weights.size());
    const Eigen::MatrixXd gram = kl.modes.transpose() * w.asDiagonal() * kl.modes;
    CHECK((gram - Eigen::MatrixXd::Identity(25, 25)).cwiseAbs().maxCoeff() < 1e-8);
  }

  SUBCASE("truncated reconstruction error equals the discarded tail")
  {
    const Eigen::MatrixXd a = weighted_kernel(kl);
    const Eigen::Map<const Eigen::VectorXd> w(kl.weights.data(), kl.weights.size());
    const Eigen::MatrixXd psi = w.cwiseSqrt().asDiagonal() * kl.modes;
    const Eigen::MatrixXd rec = psi * kl.eigenvalues.asDiagonal() * psi.transpose();
    const double tail = std::sqrt(kl.spectrum.tail(kl.spectrum.size() - 25).squaredNorm());
    const double frob = (a - rec).norm();
    CHECK(frob <= tail + 1e-10 * a.norm());
    CHECK(frob >= tail - 1e-10 * a.norm());
  }

  SUBCASE("G convention")
  {
    CHECK(kl.g_mean.minCoeff() == 1.0);
    CHECK(kl.g_mean.maxCoeff() == 1.0);
    KLOptions n = o;
    n.g_normalization = GNormalization::Normalized;
    const KLBasis kn = kl_expand(sink(), n);
    const Eigen::Map<const Eigen::VectorXd> w(kn.weights.data(), kn.weights.size());
    CHECK(std::abs(w.dot(kn.g_mean) - 1.0) < 1e-10);
  }

  SUBCASE("truncation error: weighted tail monotone, sup-norm bound holds")
  {
    std::mt19937_64 rng(5);
    const Eigen::Map<const Eigen::VectorXd> w(kl.weights.data(), kl.weights.size());
    for (int trial = 0; trial < 50; trial++)
    {
      const FieldRealization full = sample_y(kl, 25, rng);
      double prev = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k <= 25; k++)
      {
        const FieldRealization part = evaluate_field(kl, full.y.head(k));
        const Eigen::VectorXd diff = full.b_values - part.b_values;
        const double l2 = std::sqrt(w.dot(diff.cwiseAbs2()));
        CHECK(l2 <= prev * (1 + 1e-12) + 1e-15);
        prev = l2;
        CHECK(diff.cwiseAbs().maxCoeff() <= kl.truncation_sup_bound(k) * (1 + 1e-12) + 1e-15);
      }
    }
  }
}

TEST_CASE("sampling")
{
  KLOptions o = heat_sink_options();
  const KLBasis kl = kl_expand(sink(), o);

  SUBCASE("zero fluctuation")
  {
    KLOptions z = o;
    z.upsilon = 0.0;
    const KLBasis kz = kl_expand(sink(), z);
    std::mt19937_64 rng(1);
    const FieldRealization r = sample_y(kz, 5, rng);
    CHECK(r.y.cwiseAbs().maxCoeff() == 0.0);
    CHECK(r.admissible);
    CHECK((r.b_values - o.b_bar * kz.g_mean).cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("moments and uncorrelatedness")
  {
    std::mt19937_64 rng(2);
    const int n = 100000, K = 4;
    Eigen::MatrixXd y(n, K);
    for (int i = 0; i < n; i++)
    {
      y.row(i) = sample_y(kl, K, rng).y.transpose();
    }
    for (int k = 0; k < K; k++)
    {
      const double var = o.upsilon * o.upsilon * kl.eigenvalues[k];
      const double mean = y.col(k).mean();
      const double emp = (y.col(k).array() - mean).square().sum() / (n - 1);
      CHECK(std::abs(mean) <= 3.0 * std::sqrt(var / n));
      // Uniform law: fourth central moment 9/5 var^2.
      CHECK(std::abs(emp - var) <= 3.0 * var * std::sqrt(0.8 / n));
      for (int j = 0; j < k; j++)
      {
        const Eigen::ArrayXd a = y.col(j).array() - y.col(j).mean();
        const Eigen::ArrayXd b = y.col(k).array() - mean;
        const double corr = (a * b).sum() / std::sqrt(a.square().sum() * b.square().sum());
        CHECK(std::abs(corr) <= 3.0 / std::sqrt(n));
      }
    }
  }

  SUBCASE("no rejections at the heat sink settings")
  {
    KLSampler s(kl, 25, 3);
    for (int i = 0; i < 10000; i++)
    {
      CHECK(s.draw().admissible);
    }
    CHECK(s.rejections() == 0);
  }

  SUBCASE("too large a fluctuation is a configuration error")
  {
    KLOptions big = o;
    big.upsilon = 5.0;
    const KLBasis kb = kl_expand(sink(), big);
    KLSampler s(kb, 25, 4);
    CHECK_THROWS_AS(
        {
          for (int i = 0; i < 2000; i++)
          {
            s.draw();
          }
        },
        ConfigError);
  }

  SUBCASE("affine form admissibility agrees with the field")
  {
    ModelSpec spec;
    spec.kind = ModelKind::TSinkRobin;
    spec.field = kl.boundary_field();
    const AffineForm form = assemble_affine(sink(), spec);
    std::mt19937_64 rng(6);
    for (int i = 0; i < 20; i++)
    {
      const FieldRealization r = sample_y(kl, 25, rng);
      CHECK(form.theta.admissible(field_parameter(kl, 2.0, r.y)));
      Eigen::VectorXd bad = r.y;
      bad[0] = -0.6 / kl.modes.col(0).maxCoeff();
      CHECK(form.theta.admissible(field_parameter(kl, 2.0, bad)) ==
            evaluate_field(kl, bad).admissible);
    }
  }
}

TEST_CASE("kl input errors")
{
  KLOptions o = heat_sink_options();
  o.delta = 0.0;
  CHECK_THROWS_AS(kl_expand(sink(), o), ConfigError);
  o = heat_sink_options();
  o.k_max = 100000;
  CHECK_THROWS_AS(kl_expand(sink(), o), ConfigError);
  const KLBasis kl = kl_expand(sink(), heat_sink_options());
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(sample_y(kl, 0, rng), ConfigError);
  CHECK_THROWS_AS(sample_y(kl, 26, rng), ConfigError);
}
