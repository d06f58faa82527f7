// SPDX-License-Identifier: Apache-2.0

#ifndef CRB_KL_FIELD_HPP
#define CRB_KL_FIELD_HPP

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>
#include <Eigen/Dense>

#include "crb/affine_form.hpp"
#include "crb/mesh.hpp"

namespace crb
{

// Scaling of the mean shape G on GAMMA_B.
enum class GNormalization
{
  UnitOnGammaB,  // G = 1
  Normalized     // G = 1/|GAMMA_B|, so that the boundary integral of G is 1
};

enum class KernelDistance
{
  Ambient,  // Euclidean distance in the plane
  Arc       // distance along the boundary chain
};

std::string to_string(GNormalization g);
GNormalization parse_g_normalization(const std::string &s);
std::string to_string(KernelDistance d);
KernelDistance parse_kernel_distance(const std::string &s);

struct KLOptions
{
  double delta = 0.5;
  double upsilon = 0.058;
  double b_bar = 0.5;
  std::size_t k_max = 25;
  GNormalization g_normalization = GNormalization::UnitOnGammaB;
  KernelDistance distance = KernelDistance::Ambient;
};

//
// Truncated KL data of the Biot field b(x, y) = b G(x) + b sum_k Phi_k(x) y_k on the GAMMA_B
// quadrature nodes. (lambda_k, Phi_k) are eigenpairs of the unit kernel exp(-d^2/delta^2)
// in the quadrature-weighted inner product, and y_k = upsilon sqrt(lambda_k) Z_k with Z_k
// of unit variance, so the covariance of b is (b upsilon)^2 exp(-d^2/delta^2).
//
struct KLBasis
{
  std::vector<std::array<double, 2>> nodes;
  std::vector<double> weights;
  std::vector<double> arc;
  Eigen::VectorXd g_mean;
  Eigen::MatrixXd modes;        // nodes x k_max
  Eigen::VectorXd eigenvalues;  // k_max, non-increasing
  Eigen::VectorXd spectrum;     // all clipped eigenvalues of the discrete kernel
  double b_bar = 0.0;
  double upsilon = 0.0;
  double correlation_length = 0.0;
  GNormalization g_normalization = GNormalization::UnitOnGammaB;
  KernelDistance distance = KernelDistance::Ambient;

  std::size_t size() const { return static_cast<std::size_t>(eigenvalues.size()); }
  std::size_t node_count() const { return weights.size(); }

  // Half-width of the range of y_k: upsilon sqrt(3 lambda_k).
  double amplitude_bound(std::size_t k) const;

  // Affine-form field data with all k_max modes.
  BoundaryField boundary_field() const;

  // b_bar upsilon sqrt(3) sum_{k >= K} sqrt(lambda_k) max|Phi_k|: sup-norm bound on the
  // difference between the k_max and the K-term fields.
  double truncation_sup_bound(std::size_t k) const;
};

// Nystrom discretization of the covariance on the GAMMA_B quadrature of the mesh.
KLBasis kl_expand(const Mesh &mesh, const KLOptions &options);

// Same, on explicit nodes (weights and arc coordinates given).
KLBasis kl_expand(const std::vector<std::array<double, 2>> &nodes, const std::vector<double> &weights,
                  const std::vector<double> &arc, const KLOptions &options);

inline constexpr double kEigenClipTol = 1e-12;

struct FieldRealization
{
  Eigen::VectorXd y;         // k_trunc amplitudes
  Eigen::VectorXd b_values;  // b at the nodes
  bool admissible = false;
  std::size_t rejections = 0;
};

// b_bar G + b_bar sum_{k < y.size()} Phi_k y_k at the nodes, with the admissibility flag
// b >= b_bar G / 2.
FieldRealization evaluate_field(const KLBasis &kl, const Eigen::VectorXd &y);

// Draws Z_k uniform on (-sqrt 3, sqrt 3), y_k = upsilon sqrt(lambda_k) Z_k for k < k_trunc,
// rejecting draws that are not admissible. The draw must also be admissible when truncated
// to each level in `also_truncated`. ConfigError if 1000 consecutive draws are rejected.
FieldRealization sample_y(const KLBasis &kl, std::size_t k_trunc, std::mt19937_64 &rng,
                          const std::vector<std::size_t> &also_truncated = {});

// Sequential sampler that tracks the rejection rate over its lifetime.
class KLSampler
{
public:
  KLSampler(const KLBasis &kl, std::size_t k_trunc, std::uint64_t seed);
  FieldRealization draw();
  std::size_t draws() const { return draws_; }
  std::size_t rejections() const { return rejections_; }

private:
  const KLBasis *kl_;
  std::size_t k_trunc_;
  std::mt19937_64 rng_;
  std::size_t draws_ = 0;
  std::size_t rejections_ = 0;
};

// ConfigError when more than half of at least 1000 attempts were rejected.
void check_rejection_rate(std::size_t accepted, std::size_t rejected);

// Parameter vector (sigma0, b_bar, y_1..y_K, 0..0) for a T_SINK_ROBIN form with k_max modes.
ParamVec field_parameter(const KLBasis &kl, double sigma0, const Eigen::VectorXd &y);

}  // namespace crb

#endif  // CRB_KL_FIELD_HPP
