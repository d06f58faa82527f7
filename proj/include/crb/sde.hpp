// SPDX-License-Identifier: Apache-2.0

#ifndef CRB_SDE_HPP
#define CRB_SDE_HPP

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>
#include <Eigen/Dense>

#include "crb/common.hpp"

namespace crb
{

enum class ConstraintKind
{
  None,
  BallReflect
};

//
// dX = b(lambda, t, X) dt + sigma(lambda, t, X) dB, X_0 = x0 on [0, T], with the output
// functional Z = g(lambda, X_T) - int_0^T f(lambda, t, X_t) dt. The diffusion matrix is d x d.
//
class SDEModel
{
public:
  virtual ~SDEModel() = default;

  virtual std::size_t dimension() const = 0;
  virtual std::size_t param_dim() const = 0;
  virtual void drift(const ParamVec &lambda, double t, std::span<const double> x,
                     std::span<double> out) const = 0;
  // Column-major d x d.
  virtual void diffusion(const ParamVec &lambda, double t, std::span<const double> x,
                         std::span<double> out) const = 0;
  virtual double running_cost(const ParamVec &lambda, double t, std::span<const double> x) const;
  virtual double terminal(const ParamVec &lambda, std::span<const double> x) const = 0;

  // True when sigma is the identity, which lets the stepper skip the matrix product.
  virtual bool unit_diffusion() const { return false; }

  std::vector<double> x0;
  double horizon = 1.0;
  ConstraintKind constraint = ConstraintKind::None;
  double radius = 0.0;
};

enum class DumbbellForce
{
  Hookean,
  Fene
};

//
// dX = (lambda X - F(X)) dt + dB with F(X) = X (Hookean) or X/(1 - |X|^2/b) (FENE), and
// Z = (X_T (x) F(X_T))_{ij}. For d = 2 the velocity gradient is traceless and
// lambda = (lambda_11, lambda_12, lambda_21); for d = 1 lambda is a scalar.
//
class DumbbellModel : public SDEModel
{
public:
  DumbbellModel(std::size_t d, DumbbellForce force, double b = 0.0);

  std::size_t dimension() const override { return d_; }
  std::size_t param_dim() const override { return d_ == 1 ? 1 : 3; }
  void drift(const ParamVec &lambda, double t, std::span<const double> x,
             std::span<double> out) const override;
  void diffusion(const ParamVec &lambda, double t, std::span<const double> x,
                 std::span<double> out) const override;
  double terminal(const ParamVec &lambda, std::span<const double> x) const override;
  bool unit_diffusion() const override { return true; }

  DumbbellForce force() const { return force_; }
  double b() const { return b_; }
  Eigen::MatrixXd gradient_matrix(const ParamVec &lambda) const;
  // F(x); throws NumericalError on or outside the FENE ball.
  void entropic_force(std::span<const double> x, std::span<double> out) const;
  // Full Kramers tensor X (x) F(X), row-major d x d.
  std::vector<double> kramers_tensor(std::span<const double> x) const;

  std::array<std::size_t, 2> component = {0, 1};

private:
  std::size_t d_;
  DumbbellForce force_;
  double b_;
};

// Scalar geometric Brownian motion dX = r X dt + s X dB with lambda = (r, s) and the
// terminal value g = X_T. E(Z) = x0 exp(r T).
class BlackScholesModel : public SDEModel
{
public:
  BlackScholesModel();
  std::size_t dimension() const override { return 1; }
  std::size_t param_dim() const override { return 2; }
  void drift(const ParamVec &lambda, double t, std::span<const double> x,
             std::span<double> out) const override;
  void diffusion(const ParamVec &lambda, double t, std::span<const double> x,
                 std::span<double> out) const override;
  double terminal(const ParamVec &lambda, std::span<const double> x) const override;
};

// Model assembled from callables, for custom drifts and functionals.
class FunctionalSDEModel : public SDEModel
{
public:
  using VecFn = std::function<void(const ParamVec &, double, std::span<const double>, std::span<double>)>;
  using CostFn = std::function<double(const ParamVec &, double, std::span<const double>)>;
  using TerminalFn = std::function<double(const ParamVec &, std::span<const double>)>;

  FunctionalSDEModel(std::size_t d, std::size_t param_dim, VecFn drift, VecFn diffusion,
                     TerminalFn terminal, CostFn running = nullptr);

  std::size_t dimension() const override { return d_; }
  std::size_t param_dim() const override { return p_; }
  void drift(const ParamVec &lambda, double t, std::span<const double> x,
             std::span<double> out) const override;
  void diffusion(const ParamVec &lambda, double t, std::span<const double> x,
                 std::span<double> out) const override;
  double running_cost(const ParamVec &lambda, double t, std::span<const double> x) const override;
  double terminal(const ParamVec &lambda, std::span<const double> x) const override;

private:
  std::size_t d_, p_;
  VecFn drift_, diffusion_;
  TerminalFn terminal_;
  CostFn running_;
};

// 1D Ornstein-Uhlenbeck dX = a X dt + dB with lambda = (a) and terminal g.
std::unique_ptr<FunctionalSDEModel> make_ou_model(std::function<double(double)> g, double x0,
                                                  double horizon);

//
// Brownian increments for m paths of `steps` steps in dimension d. Path p is generated
// independently of the others, so ensembles can be filled in parallel and reproduced
// path by path.
//
class IncrementSource
{
public:
  virtual ~IncrementSource() = default;
  virtual std::size_t paths() const = 0;
  virtual std::size_t steps() const = 0;
  virtual std::size_t dim() const = 0;
  virtual double dt() const = 0;
  virtual std::uint64_t seed() const = 0;
  // Writes steps * d increments of path p, step-major.
  virtual void fill(std::size_t p, std::span<double> out) const = 0;
};

// N(0, dt I) increments from the per-path stream derive_seed(seed, tag, p).
class SeededIncrements : public IncrementSource
{
public:
  SeededIncrements(std::size_t m, std::size_t steps, std::size_t d, double dt, std::uint64_t seed);
  std::size_t paths() const override { return m_; }
  std::size_t steps() const override { return steps_; }
  std::size_t dim() const override { return d_; }
  double dt() const override { return dt_; }
  std::uint64_t seed() const override { return seed_; }
  void fill(std::size_t p, std::span<double> out) const override;

private:
  std::size_t m_, steps_, d_;
  double dt_;
  std::uint64_t seed_;
};

// Increments held in memory, layout [path][step][dim].
class StoredIncrements : public IncrementSource
{
public:
  StoredIncrements() = default;
  StoredIncrements(std::size_t m, std::size_t steps, std::size_t d, double dt, std::uint64_t seed,
                   std::vector<double> data);
  static StoredIncrements capture(const IncrementSource &src);

  std::size_t paths() const override { return m_; }
  std::size_t steps() const override { return steps_; }
  std::size_t dim() const override { return d_; }
  double dt() const override { return dt_; }
  std::uint64_t seed() const override { return seed_; }
  void fill(std::size_t p, std::span<double> out) const override;
  const std::vector<double> &data() const { return data_; }

private:
  std::size_t m_ = 0, steps_ = 0, d_ = 0;
  double dt_ = 0.0;
  std::uint64_t seed_ = 0;
  std::vector<double> data_;
};

// Sums consecutive pairs of a finer source: the same Brownian paths at twice the step.
class CoarsenedIncrements : public IncrementSource
{
public:
  explicit CoarsenedIncrements(const IncrementSource &fine);
  std::size_t paths() const override { return fine_->paths(); }
  std::size_t steps() const override { return fine_->steps() / 2; }
  std::size_t dim() const override { return fine_->dim(); }
  double dt() const override { return 2.0 * fine_->dt(); }
  std::uint64_t seed() const override { return fine_->seed(); }
  void fill(std::size_t p, std::span<double> out) const override;

private:
  const IncrementSource *fine_;
};

// Raw little-endian layout: magic "CRBINC01", u64 m, u64 steps, u64 d, u64 seed, f64 dt,
// then m * steps * d f64 values.
void write_increments(const std::string &path, const IncrementSource &src);
StoredIncrements read_increments(const std::string &path);

struct PathEnsemble
{
  std::size_t m = 0;
  std::size_t steps = 0;
  std::size_t d = 0;
  double dt = 0.0;
  std::uint64_t seed = 0;
  std::vector<double> increments;       // optional, [path][step][dim]
  std::vector<double> states;           // optional, [path][step 0..steps][dim]
  std::vector<double> terminal_states;  // [path][dim]
  std::vector<double> z_values;
  std::size_t reflections = 0;
};

struct SimulateOptions
{
  bool store_increments = false;
  bool store_states = false;
};

// Callback invoked for each step j of path p with the state X_j at t_j and the increment
// dB_j that moves it to X_{j+1}. Calls for distinct paths may run concurrently.
using StepObserver = std::function<void(std::size_t p, std::size_t j, double t,
                                        std::span<const double> x, std::span<const double> db)>;

// Euler-Maruyama with dt = src.dt(); paths outside the open constraint ball are reflected
// back across the sphere. Z uses left-endpoint quadrature of the running cost.
PathEnsemble simulate(const SDEModel &model, const ParamVec &lambda, const IncrementSource &src,
                      const SimulateOptions &options = {}, const StepObserver &observer = nullptr);

// Convenience: fresh seeded increments with dt = horizon / steps.
PathEnsemble simulate(const SDEModel &model, const ParamVec &lambda, std::size_t m,
                      std::size_t steps, std::uint64_t seed, const SimulateOptions &options = {});

// Designated Kramers component (model.component) at the terminal states.
std::vector<double> kramers_output(const DumbbellModel &model, const PathEnsemble &ensemble);

//
// Gridded solution of the 1D backward Kolmogorov equation, u_values[k][i] = u(t_k, x_i).
//
struct ControlGrid
{
  ParamVec lambda;
  std::vector<double> t_grid;
  std::vector<double> x_grid;
  std::vector<std::vector<double>> u_values;
  std::vector<std::vector<double>> gradient;

  // Bilinear interpolation of du/dx; `outside` is set when x is clamped to the grid.
  double gradient_at(double t, double x, bool *outside = nullptr) const;
  double value_at(double t, double x) const;
};

struct KolmogorovGrid
{
  double x_min = -6.0;
  double x_max = 6.0;
  std::size_t intervals = 240;
};

// Backward Euler in time, centered differences in space, u_xx = 0 at the two ends.
ControlGrid kolmogorov_solve_1d(const SDEModel &model, const ParamVec &lambda,
                                std::size_t t_steps, const KolmogorovGrid &grid);

// Closed-form control for Hookean dumbbells dX = (lambda - I) X dt + dB with
// g = (X (x) X)_{ij}: u(t, x) = (Mx)_i (Mx)_j + Sigma_ij(T - t), M = exp((lambda - I)(T - t)),
// so grad u = M_i^T (Mx)_j + M_j^T (Mx)_i.
struct HookeanExactControl
{
  HookeanExactControl(const DumbbellModel &model, const ParamVec &lambda, std::size_t steps);

  ParamVec lambda;
  std::size_t d = 0;
  std::array<std::size_t, 2> component = {0, 1};
  double horizon = 1.0;
  std::vector<Eigen::MatrixXd> propagators;  // M at t_k = k T / steps

  void gradient_at(double t, std::span<const double> x, std::span<double> out) const;
  double value_at(double t, std::span<const double> x) const;
};

using Control = std::variant<ControlGrid, HookeanExactControl>;

// grad u(t, x), d entries. Returns false when a grid control had to clamp x.
bool control_gradient(const Control &c, double t, std::span<const double> x, std::span<double> out);

struct ControlValues
{
  std::vector<double> values;  // one per path
  std::size_t outside = 0;     // evaluations clamped to the grid
};

// sum_j grad u(t_j, X_j) . sigma(t_j, X_j) dB_j along stored states and increments.
ControlValues ito_control_variate(const Control &control, const SDEModel &model,
                                  const ParamVec &lambda, const PathEnsemble &ensemble);

// Simulates at lambda and accumulates the Ito integrals of several controls on the fly.
// Returns the ensemble (z values, terminal states) and one column per control.
PathEnsemble simulate_with_controls(const SDEModel &model, const ParamVec &lambda,
                                    const IncrementSource &src, const std::vector<const Control *> &controls,
                                    Eigen::MatrixXd &values, std::size_t *outside = nullptr);

// Closed-form OU second moment E[X_T^2] for dX = a X dt + dB, X_0 = x0.
double ou_second_moment(double a, double x0, double t);

}  // namespace crb

#endif  // CRB_SDE_HPP
