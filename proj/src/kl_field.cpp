// SPDX-License-Identifier: Apache-2.0

#include "crb/kl_field.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <Eigen/Eigenvalues>

namespace crb
{

std::string to_string(GNormalization g)
{
  return g == GNormalization::Normalized ? "normalized" : "unit";
}

GNormalization parse_g_normalization(const std::string &s)
{
  if (s == "unit")
  {
    return GNormalization::UnitOnGammaB;
  }
  if (s == "normalized")
  {
    return GNormalization::Normalized;
  }
  throw ConfigError("unknown G normalization '" + s + "' (expected unit or normalized)");
}

std::string to_string(KernelDistance d)
{
  return d == KernelDistance::Arc ? "arc" : "ambient";
}

KernelDistance parse_kernel_distance(const std::string &s)
{
  if (s == "ambient")
  {
    return KernelDistance::Ambient;
  }
  if (s == "arc")
  {
    return KernelDistance::Arc;
  }
  throw ConfigError("unknown kernel distance '" + s + "' (expected ambient or arc)");
}

double KLBasis::amplitude_bound(std::size_t k) const
{
  return upsilon * std::sqrt(3.0 * eigenvalues[static_cast<Eigen::Index>(k)]);
}

BoundaryField KLBasis::boundary_field() const
{
  BoundaryField f;
  f.g = g_mean;
  f.modes = modes;
  for (std::size_t k = 0; k < size(); k++)
  {
    const double a = amplitude_bound(k);
    f.y_ranges.push_back({-a, a});
  }
  return f;
}

double KLBasis::truncation_sup_bound(std::size_t k) const
{
  double s = 0.0;
  for (std::size_t j = k; j < size(); j++)
  {
    const auto jj = static_cast<Eigen::Index>(j);
    s += std::sqrt(eigenvalues[jj]) * modes.col(jj).cwiseAbs().maxCoeff();
  }
  return b_bar * upsilon * std::sqrt(3.0) * s;
}

KLBasis kl_expand(const Mesh &mesh, const KLOptions &options)
{
  const BoundaryQuadrature q = boundary_quadrature(mesh, BoundaryLabel::GammaB);
  return kl_expand(q.points, q.weights, q.arc, options);
}

KLBasis kl_expand(const std::vector<std::array<double, 2>> &nodes, const std::vector<double> &weights,
                  const std::vector<double> &arc, const KLOptions &options)
{
  const std::size_t n = nodes.size();
  if (!(options.delta > 0.0))
  {
    throw ConfigError("kl: correlation length delta must be positive");
  }
  if (options.upsilon < 0.0 || !(options.b_bar > 0.0))
  {
    throw ConfigError("kl: need upsilon >= 0 and b_bar > 0");
  }
  if (n == 0 || weights.size() != n || arc.size() != n)
  {
    throw ConfigError("kl: node, weight and arc arrays must be non-empty and of equal length");
  }
  if (options.k_max < 1 || options.k_max > n)
  {
    std::ostringstream msg;
    msg << "kl: k_max = " << options.k_max << " must lie in [1, " << n << "]";
    throw ConfigError(msg.str());
  }

  // Symmetric form W^1/2 K W^1/2 of the weighted Nystrom operator.
  const auto N = static_cast<Eigen::Index>(n);
  Eigen::VectorXd sw(N);
  for (Eigen::Index i = 0; i < N; i++)
  {
    sw[i] = std::sqrt(weights[i]);
  }
  Eigen::MatrixXd a(N, N);
  const double inv_d2 = 1.0 / (options.delta * options.delta);
  for (Eigen::Index j = 0; j < N; j++)
  {
    for (Eigen::Index i = j; i < N; i++)
    {
      double d2;
      if (options.distance == KernelDistance::Arc)
      {
        const double d = arc[i] - arc[j];
        d2 = d * d;
      }
      else
      {
        const double dx = nodes[i][0] - nodes[j][0], dy = nodes[i][1] - nodes[j][1];
        d2 = dx * dx + dy * dy;
      }
      a(i, j) = sw[i] * sw[j] * std::exp(-d2 * inv_d2);
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a, Eigen::ComputeEigenvectors);
  if (eig.info() != Eigen::Success)
  {
    throw NumericalError("kl: symmetric eigensolver failed");
  }

  // Eigen returns ascending order.
  const Eigen::VectorXd raw = eig.eigenvalues().reverse();
  const double floor = -kEigenClipTol * std::max(1.0, raw[0]);
  if (raw.minCoeff() < floor)
  {
    std::ostringstream msg;
    msg << "kl: discretized covariance is indefinite, smallest eigenvalue " << raw.minCoeff();
    throw NumericalError(msg.str());
  }

  KLBasis kl;
  kl.nodes = nodes;
  kl.weights = weights;
  kl.arc = arc;
  kl.b_bar = options.b_bar;
  kl.upsilon = options.upsilon;
  kl.correlation_length = options.delta;
  kl.g_normalization = options.g_normalization;
  kl.distance = options.distance;
  kl.spectrum = raw.cwiseMax(0.0);
  const auto K = static_cast<Eigen::Index>(options.k_max);
  kl.eigenvalues = kl.spectrum.head(K);
  kl.modes.resize(N, K);
  for (Eigen::Index k = 0; k < K; k++)
  {
    Eigen::VectorXd phi = eig.eigenvectors().col(N - 1 - k).cwiseQuotient(sw);
    Eigen::Index at;
    phi.cwiseAbs().maxCoeff(&at);
    if (phi[at] < 0.0)
    {
      phi = -phi;
    }
    kl.modes.col(k) = phi;
  }

  const double measure = pairwise_sum(weights);
  const double g = options.g_normalization == GNormalization::Normalized ? 1.0 / measure : 1.0;
  kl.g_mean = Eigen::VectorXd::Constant(N, g);
  return kl;
}

FieldRealization evaluate_field(const KLBasis &kl, const Eigen::VectorXd &y)
{
  if (static_cast<std::size_t>(y.size()) > kl.size())
  {
    throw ConfigError("kl: more amplitudes than stored modes");
  }
  FieldRealization r;
  r.y = y;
  r.b_values = kl.g_mean;
  if (y.size() > 0)
  {
    r.b_values.noalias() += kl.modes.leftCols(y.size()) * y;
  }
  r.b_values *= kl.b_bar;
  r.admissible = (r.b_values - 0.5 * kl.b_bar * kl.g_mean).minCoeff() >= 0.0;
  return r;
}

FieldRealization sample_y(const KLBasis &kl, std::size_t k_trunc, std::mt19937_64 &rng,
                          const std::vector<std::size_t> &also_truncated)
{
  if (k_trunc < 1 || k_trunc > kl.size())
  {
    std::ostringstream msg;
    msg << "kl: truncation K = " << k_trunc << " must lie in [1, " << kl.size() << "]";
    throw ConfigError(msg.str());
  }
  const double r3 = std::sqrt(3.0);
  std::uniform_real_distribution<double> z(-r3, r3);
  const auto K = static_cast<Eigen::Index>(k_trunc);
  std::size_t rejected = 0;
  for (;;)
  {
    Eigen::VectorXd y(K);
    for (Eigen::Index k = 0; k < K; k++)
    {
      y[k] = kl.upsilon * std::sqrt(kl.eigenvalues[k]) * z(rng);
    }
    FieldRealization r = evaluate_field(kl, y);
    bool ok = r.admissible;
    for (std::size_t level : also_truncated)
    {
      if (ok && level < k_trunc)
      {
        ok = evaluate_field(kl, y.head(static_cast<Eigen::Index>(level))).admissible;
      }
    }
    if (ok)
    {
      r.rejections = rejected;
      return r;
    }
    if (++rejected >= 1000)
    {
      throw ConfigError("kl: 1000 consecutive draws violated b >= b_bar G/2; upsilon is too "
                        "large for this field");
    }
  }
}

void check_rejection_rate(std::size_t accepted, std::size_t rejected)
{
  const std::size_t attempts = accepted + rejected;
  if (attempts >= 1000 && 2 * rejected > attempts)
  {
    std::ostringstream msg;
    msg << "kl: rejection rate " << static_cast<double>(rejected) / attempts << " over "
        << attempts << " draws exceeds 50%; upsilon is too large for this field";
    throw ConfigError(msg.str());
  }
}

KLSampler::KLSampler(const KLBasis &kl, std::size_t k_trunc, std::uint64_t seed)
    : kl_(&kl), k_trunc_(k_trunc), rng_(seed)
{
}

FieldRealization KLSampler::draw()
{
  FieldRealization r = sample_y(*kl_, k_trunc_, rng_);
  draws_++;
  rejections_ += r.rejections;
  check_rejection_rate(draws_, rejections_);
  return r;
}

ParamVec field_parameter(const KLBasis &kl, double sigma0, const Eigen::VectorXd &y)
{
  if (static_cast<std::size_t>(y.size()) > kl.size())
  {
    throw ConfigError("kl: more amplitudes than stored modes");
  }
  ParamVec mu(2 + kl.size(), 0.0);
  mu[0] = sigma0;
  mu[1] = kl.b_bar;
  for (Eigen::Index k = 0; k < y.size(); k++)
  {
    mu[2 + k] = y[k];
  }
  return mu;
}

}  // namespace crb
