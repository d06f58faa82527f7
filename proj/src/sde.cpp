// SPDX-License-Identifier: Apache-2.0

#include "crb/sde.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <unsupported/Eigen/MatrixFunctions>

namespace crb
{

namespace
{

constexpr std::uint64_t kIncrementStream = 0x696e6372ull;
constexpr char kIncrementMagic[8] = {'C', 'R', 'B', 'I', 'N', 'C', '0', '1'};

void check_lambda(const SDEModel &model, const ParamVec &lambda)
{
  if (lambda.size() != model.param_dim())
  {
    std::ostringstream msg;
    msg << "SDE parameter has " << lambda.size() << " entries, model expects " << model.param_dim();
    throw ConfigError(msg.str());
  }
}

void check_source(const SDEModel &model, const IncrementSource &src)
{
  if (src.paths() < 1 || src.steps() < 1)
  {
    throw ConfigError("simulation needs at least one path and one step");
  }
  if (src.dim() != model.dimension())
  {
    throw ConfigError("increment dimension does not match the model dimension");
  }
  if (!(src.dt() > 0.0))
  {
    throw ConfigError("time step must be positive");
  }
  if (model.x0.size() != model.dimension())
  {
    throw ConfigError("initial condition does not match the model dimension");
  }
}

// Folds |x| back into the open ball by repeated mirror reflection across the sphere.
bool reflect(std::span<double> x, double radius)
{
  double r2 = 0.0;
  for (double v : x)
  {
    r2 += v * v;
  }
  const double r = std::sqrt(r2);
  if (r < radius)
  {
    return false;
  }
  // Signed radius folded into [-R, R]; a negative value lands on the antipodal side.
  double folded = std::fmod(r + radius, 4.0 * radius) - radius;
  if (folded > radius)
  {
    folded = 2.0 * radius - folded;
  }
  const double limit = radius * (1.0 - 1e-12);
  folded = std::clamp(folded, -limit, limit);
  const double scale = folded / r;
  for (double &v : x)
  {
    v *= scale;
  }
  return true;
}

template <typename T>
void put(std::ostream &os, T v)
{
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big)
  {
    std::reverse(b, b + sizeof(T));
  }
  os.write(reinterpret_cast<const char *>(b), sizeof(T));
}

template <typename T>
T get(std::istream &is, const std::string &path)
{
  unsigned char b[sizeof(T)];
  if (!is.read(reinterpret_cast<char *>(b), sizeof(T)))
  {
    throw ArtifactError("truncated increment store: " + path);
  }
  if constexpr (std::endian::native == std::endian::big)
  {
    std::reverse(b, b + sizeof(T));
  }
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

}  // namespace

double SDEModel::running_cost(const ParamVec &, double, std::span<const double>) const
{
  return 0.0;
}

DumbbellModel::DumbbellModel(std::size_t d, DumbbellForce force, double b) : d_(d), force_(force), b_(b)
{
  if (d != 1 && d != 2)
  {
    throw ConfigError("dumbbell models are implemented for d = 1 and d = 2");
  }
  if (force == DumbbellForce::Fene && !(b > 0.0))
  {
    throw ConfigError("FENE dumbbell needs b > 0");
  }
  x0.assign(d, 1.0);
  horizon = 1.0;
  if (d == 1)
  {
    component = {0, 0};
  }
  if (force == DumbbellForce::Fene)
  {
    constraint = ConstraintKind::BallReflect;
    radius = std::sqrt(b);
  }
}

Eigen::MatrixXd DumbbellModel::gradient_matrix(const ParamVec &lambda) const
{
  if (lambda.size() != param_dim())
  {
    throw ConfigError("dumbbell velocity gradient has the wrong number of entries");
  }
  Eigen::MatrixXd k(d_, d_);
  if (d_ == 1)
  {
    k(0, 0) = lambda[0];
  }
  else
  {
    k << lambda[0], lambda[1], lambda[2], -lambda[0];
  }
  return k;
}

void DumbbellModel::entropic_force(std::span<const double> x, std::span<double> out) const
{
  double scale = 1.0;
  if (force_ == DumbbellForce::Fene)
  {
    double r2 = 0.0;
    for (double v : x)
    {
      r2 += v * v;
    }
    if (r2 >= b_)
    {
      throw NumericalError("FENE force is singular: state on or outside the ball |x| = sqrt(b)");
    }
    scale = 1.0 / (1.0 - r2 / b_);
  }
  for (std::size_t i = 0; i < d_; i++)
  {
    out[i] = scale * x[i];
  }
}

void DumbbellModel::drift(const ParamVec &lambda, double, std::span<const double> x,
                          std::span<double> out) const
{
  double f[2];
  entropic_force(x, std::span<double>(f, d_));
  if (d_ == 1)
  {
    out[0] = lambda[0] * x[0] - f[0];
  }
  else
  {
    out[0] = lambda[0] * x[0] + lambda[1] * x[1] - f[0];
    out[1] = lambda[2] * x[0] - lambda[0] * x[1] - f[1];
  }
}

void DumbbellModel::diffusion(const ParamVec &, double, std::span<const double>, std::span<double> out) const
{
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < d_; i++)
  {
    out[i * d_ + i] = 1.0;
  }
}

double DumbbellModel::terminal(const ParamVec &, std::span<const double> x) const
{
  double f[2];
  entropic_force(x, std::span<double>(f, d_));
  return x[component[0]] * f[component[1]];
}

std::vector<double> DumbbellModel::kramers_tensor(std::span<const double> x) const
{
  double f[2];
  entropic_force(x, std::span<double>(f, d_));
  std::vector<double> t(d_ * d_);
  for (std::size_t i = 0; i < d_; i++)
  {
    for (std::size_t j = 0; j < d_; j++)
    {
      t[i * d_ + j] = x[i] * f[j];
    }
  }
  return t;
}

BlackScholesModel::BlackScholesModel()
{
  x0 = {1.0};
  horizon = 1.0;
}

void BlackScholesModel::drift(const ParamVec &lambda, double, std::span<const double> x,
                              std::span<double> out) const
{
  out[0] = lambda[0] * x[0];
}

void BlackScholesModel::diffusion(const ParamVec &lambda, double, std::span<const double> x,
                                  std::span<double> out) const
{
  out[0] = lambda[1] * x[0];
}

double BlackScholesModel::terminal(const ParamVec &, std::span<const double> x) const
{
  return x[0];
}

FunctionalSDEModel::FunctionalSDEModel(std::size_t d, std::size_t param_dim, VecFn drift, VecFn diffusion,
                                       TerminalFn terminal, CostFn running)
    : d_(d), p_(param_dim), drift_(std::move(drift)), diffusion_(std::move(diffusion)),
      terminal_(std::move(terminal)), running_(std::move(running))
{
  if (d == 0 || !drift_ || !diffusion_ || !terminal_)
  {
    throw ConfigError("functional SDE model needs d >= 1, a drift, a diffusion and a terminal");
  }
  x0.assign(d, 0.0);
}

void FunctionalSDEModel::drift(const ParamVec &lambda, double t, std::span<const double> x,
                               std::span<double> out) const
{
  drift_(lambda, t, x, out);
}

void FunctionalSDEModel::diffusion(const ParamVec &lambda, double t, std::span<const double> x,
                                   std::span<double> out) const
{
  diffusion_(lambda, t, x, out);
}

double FunctionalSDEModel::running_cost(const ParamVec &lambda, double t, std::span<const double> x) const
{
  return running_ ? running_(lambda, t, x) : 0.0;
}

double FunctionalSDEModel::terminal(const ParamVec &lambda, std::span<const double> x) const
{
  return terminal_(lambda, x);
}

std::unique_ptr<FunctionalSDEModel> make_ou_model(std::function<double(double)> g, double x0, double horizon)
{
  auto m = std::make_unique<FunctionalSDEModel>(
      1, 1,
      [](const ParamVec &l, double, std::span<const double> x, std::span<double> out) { out[0] = l[0] * x[0]; },
      [](const ParamVec &, double, std::span<const double>, std::span<double> out) { out[0] = 1.0; },
      [g](const ParamVec &, std::span<const double> x) { return g(x[0]); });
  m->x0 = {x0};
  m->horizon = horizon;
  return m;
}

SeededIncrements::SeededIncrements(std::size_t m, std::size_t steps, std::size_t d, double dt,
                                   std::uint64_t seed)
    : m_(m), steps_(steps), d_(d), dt_(dt), seed_(seed)
{
}

void SeededIncrements::fill(std::size_t p, std::span<double> out) const
{
  std::mt19937_64 rng(derive_seed(seed_, kIncrementStream, p));
  std::normal_distribution<double> normal(0.0, 1.0);
  const double s = std::sqrt(dt_);
  for (std::size_t i = 0; i < steps_ * d_; i++)
  {
    out[i] = s * normal(rng);
  }
}

StoredIncrements::StoredIncrements(std::size_t m, std::size_t steps, std::size_t d, double dt,
                                   std::uint64_t seed, std::vector<double> data)
    : m_(m), steps_(steps), d_(d), dt_(dt), seed_(seed), data_(std::move(data))
{
  if (data_.size() != m * steps * d)
  {
    throw ConfigError("stored increments do not match the shape m x steps x d");
  }
}

StoredIncrements StoredIncrements::capture(const IncrementSource &src)
{
  const std::size_t block = src.steps() * src.dim();
  std::vector<double> data(src.paths() * block);
  parallel_for(src.paths(), [&](std::size_t p) { src.fill(p, std::span<double>(data.data() + p * block, block)); });
  return StoredIncrements(src.paths(), src.steps(), src.dim(), src.dt(), src.seed(), std::move(data));
}

void StoredIncrements::fill(std::size_t p, std::span<double> out) const
{
  const std::size_t block = steps_ * d_;
  std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(p * block), block, out.begin());
}

CoarsenedIncrements::CoarsenedIncrements(const IncrementSource &fine) : fine_(&fine)
{
  if (fine.steps() < 2 || fine.steps() % 2 != 0)
  {
    throw ConfigError("coarsening needs an even number of fine steps");
  }
}

void CoarsenedIncrements::fill(std::size_t p, std::span<double> out) const
{
  const std::size_t d = fine_->dim();
  std::vector<double> buf(fine_->steps() * d);
  fine_->fill(p, buf);
  for (std::size_t j = 0; j < steps(); j++)
  {
    for (std::size_t k = 0; k < d; k++)
    {
      out[j * d + k] = buf[2 * j * d + k] + buf[(2 * j + 1) * d + k];
    }
  }
}

void write_increments(const std::string &path, const IncrementSource &src)
{
  std::ofstream os(path, std::ios::binary);
  if (!os)
  {
    throw ArtifactError("cannot write increment store: " + path);
  }
  os.write(kIncrementMagic, sizeof(kIncrementMagic));
  put<std::uint64_t>(os, src.paths());
  put<std::uint64_t>(os, src.steps());
  put<std::uint64_t>(os, src.dim());
  put<std::uint64_t>(os, src.seed());
  put<double>(os, src.dt());
  std::vector<double> buf(src.steps() * src.dim());
  for (std::size_t p = 0; p < src.paths(); p++)
  {
    src.fill(p, buf);
    for (double v : buf)
    {
      put<double>(os, v);
    }
  }
  if (!os)
  {
    throw ArtifactError("failed writing increment store: " + path);
  }
}

StoredIncrements read_increments(const std::string &path)
{
  std::ifstream is(path, std::ios::binary);
  if (!is)
  {
    throw ArtifactError("cannot open increment store: " + path);
  }
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kIncrementMagic, sizeof(magic)) != 0)
  {
    throw ArtifactError("not an increment store or unsupported version: " + path);
  }
  const auto m = get<std::uint64_t>(is, path);
  const auto steps = get<std::uint64_t>(is, path);
  const auto d = get<std::uint64_t>(is, path);
  const auto seed = get<std::uint64_t>(is, path);
  const auto dt = get<double>(is, path);
  if (m == 0 || steps == 0 || d == 0 || m * steps * d > (std::uint64_t{1} << 34))
  {
    throw ArtifactError("increment store header is corrupt: " + path);
  }
  std::vector<double> data(m * steps * d);
  for (double &v : data)
  {
    v = get<double>(is, path);
  }
  return StoredIncrements(m, steps, d, dt, seed, std::move(data));
}

namespace
{

// Euler-Maruyama for one path. Calls step(j, t, x, db) before each update.
template <typename StepFn>
std::size_t run_path(const SDEModel &model, const ParamVec &lambda, std::size_t p, std::span<const double> db,
                     std::size_t steps, double dt, std::span<double> x, double &cost, std::span<double> states,
                     StepFn &&step)
{
  const std::size_t d = model.dimension();
  const bool unit = model.unit_diffusion();
  std::vector<double> b(d), sig(unit ? 0 : d * d);
  std::copy(model.x0.begin(), model.x0.end(), x.begin());
  if (!states.empty())
  {
    std::copy(x.begin(), x.end(), states.begin());
  }
  cost = 0.0;
  std::size_t reflections = 0;
  for (std::size_t j = 0; j < steps; j++)
  {
    const double t = static_cast<double>(j) * dt;
    const std::span<const double> dbj = db.subspan(j * d, d);
    step(j, t, std::span<const double>(x.data(), d), dbj);
    cost += dt * model.running_cost(lambda, t, x);
    model.drift(lambda, t, x, b);
    if (unit)
    {
      for (std::size_t k = 0; k < d; k++)
      {
        x[k] += b[k] * dt + dbj[k];
      }
    }
    else
    {
      model.diffusion(lambda, t, x, sig);
      std::vector<double> nx(d);
      for (std::size_t k = 0; k < d; k++)
      {
        double s = 0.0;
        for (std::size_t l = 0; l < d; l++)
        {
          s += sig[l * d + k] * dbj[l];
        }
        nx[k] = x[k] + b[k] * dt + s;
      }
      std::copy(nx.begin(), nx.end(), x.begin());
    }
    for (double v : x)
    {
      if (!std::isfinite(v))
      {
        std::ostringstream msg;
        msg << "SDE state diverged at step " << j + 1 << " of path " << p;
        throw NumericalError(msg.str());
      }
    }
    if (model.constraint == ConstraintKind::BallReflect)
    {
      reflections += reflect(x, model.radius);
    }
    if (!states.empty())
    {
      std::copy(x.begin(), x.end(), states.begin() + static_cast<std::ptrdiff_t>((j + 1) * d));
    }
  }
  return reflections;
}

}  // namespace

PathEnsemble simulate(const SDEModel &model, const ParamVec &lambda, const IncrementSource &src,
                      const SimulateOptions &options, const StepObserver &observer)
{
  check_lambda(model, lambda);
  check_source(model, src);
  PathEnsemble e;
  e.m = src.paths();
  e.steps = src.steps();
  e.d = src.dim();
  e.dt = src.dt();
  e.seed = src.seed();
  const std::size_t d = e.d, block = e.steps * d;
  e.terminal_states.resize(e.m * d);
  e.z_values.resize(e.m);
  if (options.store_increments)
  {
    e.increments.resize(e.m * block);
  }
  if (options.store_states)
  {
    e.states.resize(e.m * (e.steps + 1) * d);
  }
  std::vector<std::size_t> refl(e.m, 0);
  parallel_for(e.m,
               [&](std::size_t p)
               {
                 std::vector<double> local;
                 std::span<double> db;
                 if (options.store_increments)
                 {
                   db = std::span<double>(e.increments.data() + p * block, block);
                 }
                 else
                 {
                   local.resize(block);
                   db = local;
                 }
                 src.fill(p, db);
                 std::span<double> states;
                 if (options.store_states)
                 {
                   states = std::span<double>(e.states.data() + p * (e.steps + 1) * d, (e.steps + 1) * d);
                 }
                 std::span<double> x(e.terminal_states.data() + p * d, d);
                 double cost = 0.0;
                 refl[p] = run_path(model, lambda, p, db, e.steps, e.dt, x, cost, states,
                                    [&](std::size_t j, double t, std::span<const double> xs, std::span<const double> dbj)
                                    {
                                      if (observer)
                                      {
                                        observer(p, j, t, xs, dbj);
                                      }
                                    });
                 e.z_values[p] = model.terminal(lambda, x) - cost;
               });
  for (std::size_t r : refl)
  {
    e.reflections += r;
  }
  return e;
}

PathEnsemble simulate(const SDEModel &model, const ParamVec &lambda, std::size_t m, std::size_t steps,
                      std::uint64_t seed, const SimulateOptions &options)
{
  if (steps < 1)
  {
    throw ConfigError("simulation needs at least one step");
  }
  const SeededIncrements src(m, steps, model.dimension(), model.horizon / static_cast<double>(steps), seed);
  return simulate(model, lambda, src, options);
}

std::vector<double> kramers_output(const DumbbellModel &model, const PathEnsemble &ensemble)
{
  if (ensemble.d != model.dimension())
  {
    throw ConfigError("ensemble dimension does not match the dumbbell model");
  }
  std::vector<double> out(ensemble.m);
  for (std::size_t p = 0; p < ensemble.m; p++)
  {
    const std::span<const double> x(ensemble.terminal_states.data() + p * ensemble.d, ensemble.d);
    out[p] = model.terminal({}, x);
  }
  return out;
}

namespace
{

// Cell index and weight for linear interpolation on a uniform grid; clamps outside.
std::pair<std::size_t, double> locate(const std::vector<double> &grid, double v, bool &outside)
{
  const std::size_t n = grid.size();
  const double h = (grid.back() - grid.front()) / static_cast<double>(n - 1);
  double s = (v - grid.front()) / h;
  if (s < 0.0 || s > static_cast<double>(n - 1))
  {
    outside = true;
    s = std::clamp(s, 0.0, static_cast<double>(n - 1));
  }
  std::size_t i = std::min(static_cast<std::size_t>(s), n - 2);
  return {i, s - static_cast<double>(i)};
}

double bilinear(const std::vector<std::vector<double>> &table, const std::vector<double> &tg,
                const std::vector<double> &xg, double t, double x, bool *outside)
{
  bool out_t = false, out_x = false;
  const auto [k, wt] = locate(tg, t, out_t);
  const auto [i, wx] = locate(xg, x, out_x);
  if (outside)
  {
    *outside = out_x;
  }
  const double a = (1 - wx) * table[k][i] + wx * table[k][i + 1];
  const double b = (1 - wx) * table[k + 1][i] + wx * table[k + 1][i + 1];
  return (1 - wt) * a + wt * b;
}

}  // namespace

double ControlGrid::gradient_at(double t, double x, bool *outside) const
{
  return bilinear(gradient, t_grid, x_grid, t, x, outside);
}

double ControlGrid::value_at(double t, double x) const
{
  return bilinear(u_values, t_grid, x_grid, t, x, nullptr);
}

ControlGrid kolmogorov_solve_1d(const SDEModel &model, const ParamVec &lambda, std::size_t t_steps,
                                const KolmogorovGrid &grid)
{
  if (model.dimension() != 1)
  {
    throw ConfigError("the Kolmogorov solver is one-dimensional");
  }
  check_lambda(model, lambda);
  if (t_steps < 1)
  {
    throw ConfigError("Kolmogorov solver needs at least one time step");
  }
  if (!(grid.x_max > grid.x_min))
  {
    throw ConfigError("Kolmogorov grid has an empty range");
  }
  if (grid.intervals < 4)
  {
    throw ConfigError("Kolmogorov grid too coarse: fewer than 3 interior points");
  }
  const std::size_t n = grid.intervals + 1;
  const double hx = (grid.x_max - grid.x_min) / static_cast<double>(grid.intervals);
  const double dt = model.horizon / static_cast<double>(t_steps);
  ControlGrid cg;
  cg.lambda = lambda;
  cg.x_grid.resize(n);
  for (std::size_t i = 0; i < n; i++)
  {
    cg.x_grid[i] = grid.x_min + hx * static_cast<double>(i);
  }
  cg.t_grid.resize(t_steps + 1);
  for (std::size_t k = 0; k <= t_steps; k++)
  {
    cg.t_grid[k] = dt * static_cast<double>(k);
  }
  cg.u_values.assign(t_steps + 1, std::vector<double>(n));
  for (std::size_t i = 0; i < n; i++)
  {
    const double x = cg.x_grid[i];
    cg.u_values[t_steps][i] = model.terminal(lambda, std::span<const double>(&x, 1));
  }
  // Interior unknowns 1..n-2; the end values follow from u_0 - 2u_1 + u_2 = 0 and its mirror.
  const std::size_t m = n - 2;
  std::vector<double> lo(m), di(m), up(m), rhs(m);
  for (std::size_t k = t_steps; k-- > 0;)
  {
    const double t = cg.t_grid[k];
    const std::vector<double> &next = cg.u_values[k + 1];
    for (std::size_t r = 0; r < m; r++)
    {
      const std::size_t i = r + 1;
      const double x = cg.x_grid[i];
      double b = 0.0, s = 0.0;
      model.drift(lambda, t, std::span<const double>(&x, 1), std::span<double>(&b, 1));
      model.diffusion(lambda, t, std::span<const double>(&x, 1), std::span<double>(&s, 1));
      const double diff = 0.5 * s * s / (hx * hx);
      const double adv = b / (2.0 * hx);
      // (u^k - u^{k+1})/dt = b u_x + (s^2/2) u_xx - f at the new level, solved for the
      // update w = u^k - u^{k+1} so that constants are preserved exactly.
      lo[r] = -dt * (diff - adv);
      di[r] = 1.0 + 2.0 * dt * diff;
      up[r] = -dt * (diff + adv);
      // Neighbours of the end rows obey the same zero-curvature closure as the unknowns.
      const double left = i == 1 ? 2.0 * next[1] - next[2] : next[i - 1];
      const double right = i == n - 2 ? 2.0 * next[n - 2] - next[n - 3] : next[i + 1];
      const double lu = diff * ((right - next[i]) - (next[i] - left)) + adv * (right - left);
      rhs[r] = dt * (lu - model.running_cost(lambda, t, std::span<const double>(&x, 1)));
    }
    di[0] += 2.0 * lo[0];
    up[0] -= lo[0];
    lo[0] = 0.0;
    di[m - 1] += 2.0 * up[m - 1];
    lo[m - 1] -= up[m - 1];
    up[m - 1] = 0.0;
    for (std::size_t r = 1; r < m; r++)
    {
      const double w = lo[r] / di[r - 1];
      di[r] -= w * up[r - 1];
      rhs[r] -= w * rhs[r - 1];
    }
    std::vector<double> w(n);
    w[m] = rhs[m - 1] / di[m - 1];
    for (std::size_t r = m - 1; r-- > 0;)
    {
      w[r + 1] = (rhs[r] - up[r] * w[r + 2]) / di[r];
    }
    std::vector<double> &u = cg.u_values[k];
    for (std::size_t i = 1; i + 1 < n; i++)
    {
      u[i] = next[i] + w[i];
    }
    u[0] = 2.0 * u[1] - u[2];
    u[n - 1] = 2.0 * u[n - 2] - u[n - 3];
  }
  cg.gradient.assign(t_steps + 1, std::vector<double>(n));
  for (std::size_t k = 0; k <= t_steps; k++)
  {
    const std::vector<double> &u = cg.u_values[k];
    std::vector<double> &g = cg.gradient[k];
    for (std::size_t i = 1; i + 1 < n; i++)
    {
      g[i] = (u[i + 1] - u[i - 1]) / (2.0 * hx);
    }
    g[0] = (u[1] - u[0]) / hx;
    g[n - 1] = (u[n - 1] - u[n - 2]) / hx;
  }
  return cg;
}

HookeanExactControl::HookeanExactControl(const DumbbellModel &model, const ParamVec &lambda, std::size_t steps)
    : lambda(lambda), d(model.dimension()), component(model.component), horizon(model.horizon)
{
  if (steps < 1)
  {
    throw ConfigError("Hookean control needs at least one step");
  }
  const Eigen::MatrixXd a = model.gradient_matrix(lambda) - Eigen::MatrixXd::Identity(d, d);
  propagators.resize(steps + 1);
  for (std::size_t k = 0; k <= steps; k++)
  {
    const double s = horizon * (1.0 - static_cast<double>(k) / static_cast<double>(steps));
    propagators[k] = (a * s).exp();
  }
}

namespace
{

Eigen::MatrixXd hookean_propagator(const HookeanExactControl &c, double t)
{
  const std::size_t steps = c.propagators.size() - 1;
  const double pos = t / c.horizon * static_cast<double>(steps);
  const double k = std::round(pos);
  if (std::abs(pos - k) < 1e-9 && k >= 0.0 && k <= static_cast<double>(steps))
  {
    return c.propagators[static_cast<std::size_t>(k)];
  }
  // Off-grid times: recover the generator from the first propagator.
  const Eigen::MatrixXd a = c.propagators[0].log() / c.horizon;
  return (a * (c.horizon - t)).exp();
}

}  // namespace

void HookeanExactControl::gradient_at(double t, std::span<const double> x, std::span<double> out) const
{
  const std::size_t steps = propagators.size() - 1;
  const double pos = t / horizon * static_cast<double>(steps);
  const double k = std::round(pos);
  Eigen::MatrixXd off_grid;
  const Eigen::MatrixXd *mp = nullptr;
  if (std::abs(pos - k) < 1e-9 && k >= 0.0 && k <= static_cast<double>(steps))
  {
    mp = &propagators[static_cast<std::size_t>(k)];
  }
  else
  {
    off_grid = hookean_propagator(*this, t);
    mp = &off_grid;
  }
  const Eigen::MatrixXd &m = *mp;
  const auto n = static_cast<Eigen::Index>(d);
  const auto i = static_cast<Eigen::Index>(component[0]);
  const auto j = static_cast<Eigen::Index>(component[1]);
  double mxi = 0.0, mxj = 0.0;
  for (Eigen::Index k2 = 0; k2 < n; k2++)
  {
    mxi += m(i, k2) * x[k2];
    mxj += m(j, k2) * x[k2];
  }
  for (Eigen::Index k2 = 0; k2 < n; k2++)
  {
    out[k2] = m(i, k2) * mxj + m(j, k2) * mxi;
  }
}

double HookeanExactControl::value_at(double t, std::span<const double> x) const
{
  const Eigen::MatrixXd m = hookean_propagator(*this, t);
  const Eigen::Map<const Eigen::VectorXd> xv(x.data(), static_cast<Eigen::Index>(d));
  const Eigen::VectorXd mx = m * xv;
  const auto n = static_cast<Eigen::Index>(d);
  // Covariance int_0^s e^{Ar} e^{A^T r} dr by the block exponential of [[-A, I], [0, A^T]].
  const double s = horizon - t;
  const Eigen::MatrixXd a = propagators[0].log() / horizon;
  Eigen::MatrixXd blk = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  blk.topLeftCorner(n, n) = -a;
  blk.topRightCorner(n, n) = Eigen::MatrixXd::Identity(n, n);
  blk.bottomRightCorner(n, n) = a.transpose();
  const Eigen::MatrixXd f = (blk * s).exp();
  const Eigen::MatrixXd cov = f.bottomRightCorner(n, n).transpose() * f.topRightCorner(n, n);
  const auto i = static_cast<Eigen::Index>(component[0]);
  const auto j = static_cast<Eigen::Index>(component[1]);
  return mx[i] * mx[j] + cov(i, j);
}

bool control_gradient(const Control &c, double t, std::span<const double> x, std::span<double> out)
{
  if (const auto *g = std::get_if<ControlGrid>(&c))
  {
    if (x.size() != 1)
    {
      throw ConfigError("grid control is one-dimensional");
    }
    bool outside = false;
    out[0] = g->gradient_at(t, x[0], &outside);
    return !outside;
  }
  const auto &h = std::get<HookeanExactControl>(c);
  if (x.size() != h.d)
  {
    throw ConfigError("Hookean control dimension does not match the state");
  }
  h.gradient_at(t, x, out);
  return true;
}

namespace
{

// grad u . sigma dB at one step.
double control_increment(const Control &c, const SDEModel &model, const ParamVec &lambda, double t,
                         std::span<const double> x, std::span<const double> db, std::vector<double> &grad,
                         std::vector<double> &sig, std::size_t &outside)
{
  const std::size_t d = x.size();
  outside += !control_gradient(c, t, x, grad);
  double v = 0.0;
  if (model.unit_diffusion())
  {
    for (std::size_t k = 0; k < d; k++)
    {
      v += grad[k] * db[k];
    }
    return v;
  }
  model.diffusion(lambda, t, x, sig);
  for (std::size_t k = 0; k < d; k++)
  {
    double s = 0.0;
    for (std::size_t l = 0; l < d; l++)
    {
      s += sig[l * d + k] * db[l];
    }
    v += grad[k] * s;
  }
  return v;
}

}  // namespace

ControlValues ito_control_variate(const Control &control, const SDEModel &model, const ParamVec &lambda,
                                  const PathEnsemble &ensemble)
{
  const std::size_t d = ensemble.d;
  if (d != model.dimension())
  {
    throw ConfigError("ensemble dimension does not match the model");
  }
  if (ensemble.states.size() != ensemble.m * (ensemble.steps + 1) * d ||
      ensemble.increments.size() != ensemble.m * ensemble.steps * d)
  {
    throw ConfigError("Ito control variate needs stored states and increments");
  }
  ControlValues out;
  out.values.resize(ensemble.m);
  std::vector<std::size_t> outside(ensemble.m, 0);
  parallel_for(ensemble.m,
               [&](std::size_t p)
               {
                 std::vector<double> grad(d), sig(d * d);
                 double v = 0.0;
                 for (std::size_t j = 0; j < ensemble.steps; j++)
                 {
                   const std::span<const double> x(ensemble.states.data() + (p * (ensemble.steps + 1) + j) * d, d);
                   const std::span<const double> db(ensemble.increments.data() + (p * ensemble.steps + j) * d, d);
                   v += control_increment(control, model, lambda, ensemble.dt * static_cast<double>(j), x, db, grad,
                                          sig, outside[p]);
                 }
                 out.values[p] = v;
               });
  for (std::size_t o : outside)
  {
    out.outside += o;
  }
  return out;
}

PathEnsemble simulate_with_controls(const SDEModel &model, const ParamVec &lambda, const IncrementSource &src,
                                    const std::vector<const Control *> &controls, Eigen::MatrixXd &values,
                                    std::size_t *outside)
{
  const std::size_t d = model.dimension();
  const std::size_t nc = controls.size();
  values = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(src.paths()), static_cast<Eigen::Index>(nc));
  std::vector<std::size_t> out_count(src.paths(), 0);
  const StepObserver obs = [&](std::size_t p, std::size_t, double t, std::span<const double> x,
                               std::span<const double> db)
  {
    thread_local std::vector<double> grad, sig;
    grad.resize(d);
    sig.resize(d * d);
    for (std::size_t c = 0; c < nc; c++)
    {
      values(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(c)) +=
          control_increment(*controls[c], model, lambda, t, x, db, grad, sig, out_count[p]);
    }
  };
  PathEnsemble e = simulate(model, lambda, src, {}, nc > 0 ? obs : StepObserver());
  if (outside)
  {
    *outside = 0;
    for (std::size_t o : out_count)
    {
      *outside += o;
    }
  }
  return e;
}

double ou_second_moment(double a, double x0, double t)
{
  const double e = std::exp(2.0 * a * t);
  const double var = a == 0.0 ? t : std::expm1(2.0 * a * t) / (2.0 * a);
  return x0 * x0 * e + var;
}

}  // namespace crb
