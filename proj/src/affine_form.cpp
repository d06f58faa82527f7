// SPDX-License-Identifier: Apache-2.0

#include "crb/affine_form.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace crb
{

std::string to_string(ModelKind kind)
{
  return kind == ModelKind::TSinkRobin ? "T_SINK_ROBIN" : "THERMAL_BLOCK";
}

ModelKind parse_model_kind(const std::string &s)
{
  if (s == "THERMAL_BLOCK")
  {
    return ModelKind::ThermalBlock;
  }
  if (s == "T_SINK_ROBIN")
  {
    return ModelKind::TSinkRobin;
  }
  throw ConfigError("unknown model tag '" + s + "'");
}

std::size_t ThetaMap::q_count() const
{
  if (kind == ModelKind::ThermalBlock)
  {
    return 2;
  }
  return (merged_diffusion ? 2 : 3) + kl_terms;
}

int ThetaMap::mean_term() const
{
  if (kind == ModelKind::ThermalBlock)
  {
    return -1;
  }
  return merged_diffusion ? 1 : 2;
}

std::size_t ThetaMap::first_fluctuation_term() const
{
  return kind == ModelKind::ThermalBlock ? q_count() : static_cast<std::size_t>(mean_term()) + 1;
}

bool ThetaMap::is_fluctuation(std::size_t q) const
{
  return q >= first_fluctuation_term();
}

Eigen::VectorXd ThetaMap::evaluate(const ParamVec &mu) const
{
  if (mu.size() != param_dim())
  {
    std::ostringstream msg;
    msg << "parameter vector has " << mu.size() << " entries, expected " << param_dim();
    throw ConfigError(msg.str());
  }
  Eigen::VectorXd theta(q_count());
  if (kind == ModelKind::ThermalBlock)
  {
    theta << 1.0, mu[0];
    return theta;
  }
  std::size_t q = 0;
  theta[q++] = 1.0;
  if (!merged_diffusion)
  {
    theta[q++] = mu[0];
  }
  const double b = mu[1];
  theta[q++] = b;
  for (std::size_t k = 0; k < kl_terms; k++)
  {
    theta[q++] = b * mu[2 + k];
  }
  return theta;
}

Eigen::VectorXd ThetaMap::relative_field(const ParamVec &mu) const
{
  if (kind == ModelKind::ThermalBlock)
  {
    return {};
  }
  Eigen::VectorXd field = Eigen::VectorXd::Ones(mode_ratio.rows());
  if (kl_terms > 0)
  {
    const Eigen::Map<const Eigen::VectorXd> y(mu.data() + 2, static_cast<Eigen::Index>(kl_terms));
    field.noalias() += mode_ratio * y;
  }
  return field;
}

bool ThetaMap::admissible(const ParamVec &mu) const
{
  if (mu.size() != param_dim())
  {
    return false;
  }
  if (kind == ModelKind::ThermalBlock)
  {
    return mu[0] > 0.0;
  }
  if (!(mu[0] > 0.0) || !(mu[1] > 0.0))
  {
    return false;
  }
  if (kl_terms == 0)
  {
    return true;
  }
  return relative_field(mu).minCoeff() >= admissibility_floor;
}

void ThetaMap::check_admissible(const ParamVec &mu) const
{
  if (mu.size() != param_dim())
  {
    std::ostringstream msg;
    msg << "parameter vector has " << mu.size() << " entries, expected " << param_dim();
    throw ConfigError(msg.str());
  }
  if (!admissible(mu))
  {
    throw NumericalError("non-admissible parameter: coefficients must stay positive and the "
                         "boundary field above the admissibility floor");
  }
}

ParamVec ThetaMap::truncate(const ParamVec &mu, std::size_t k) const
{
  ParamVec out = mu;
  if (kind == ModelKind::TSinkRobin)
  {
    for (std::size_t j = k; j < kl_terms; j++)
    {
      out[2 + j] = 0.0;
    }
  }
  return out;
}

namespace
{

// Ratios theta_q(mu)/theta_q(mu_ref) over the coercive terms.
Eigen::VectorXd coercive_ratios(const ThetaMap &theta, const ParamVec &mu)
{
  const Eigen::VectorXd t = theta.evaluate(mu);
  const Eigen::VectorXd t_ref = theta.evaluate(theta.reference);
  const std::size_t n = theta.first_fluctuation_term();
  Eigen::VectorXd r(n);
  for (std::size_t q = 0; q < n; q++)
  {
    r[q] = t[q] / t_ref[q];
  }
  return r;
}

}  // namespace

double coercivity_lb(const ThetaMap &theta, const ParamVec &mu)
{
  theta.check_admissible(mu);
  Eigen::VectorXd r = coercive_ratios(theta, mu);
  const int mean = theta.mean_term();
  if (mean >= 0 && theta.kl_terms > 0)
  {
    r[mean] *= theta.admissibility_floor;
  }
  return r.minCoeff();
}

double continuity_ub(const ThetaMap &theta, const ParamVec &mu)
{
  theta.check_admissible(mu);
  Eigen::VectorXd r = coercive_ratios(theta, mu);
  const int mean = theta.mean_term();
  if (mean >= 0 && theta.kl_terms > 0)
  {
    r[mean] *= std::max(1.0, theta.relative_field(mu).maxCoeff());
  }
  return r.maxCoeff();
}

SparseMatrix AffineForm::assemble(const ParamVec &mu) const
{
  const Eigen::VectorXd t = theta.evaluate(mu);
  SparseMatrix b = t[0] * terms[0];
  for (std::size_t q = 1; q < terms.size(); q++)
  {
    b += t[q] * terms[q];
  }
  b.makeCompressed();
  return b;
}

std::uint64_t AffineForm::provenance_hash() const
{
  std::uint64_t h = fnv1a(nullptr, 0);
  const int kind = static_cast<int>(theta.kind);
  h = fnv1a(&kind, sizeof(kind), h);
  for (const auto &term : terms)
  {
    SparseMatrix c = term;
    c.makeCompressed();
    h = fnv1a(c.valuePtr(), sizeof(double) * c.nonZeros(), h);
    h = fnv1a(c.innerIndexPtr(), sizeof(int) * c.nonZeros(), h);
    h = fnv1a(c.outerIndexPtr(), sizeof(int) * (c.outerSize() + 1), h);
  }
  h = fnv1a(load.data(), sizeof(double) * load.size(), h);
  h = fnv1a(theta.reference.data(), sizeof(double) * theta.reference.size(), h);
  return h;
}

namespace
{

using Triplets = std::vector<Eigen::Triplet<double>>;

// P1 stiffness of triangle t scattered into dof space with a scalar coefficient.
void add_stiffness(const Mesh &mesh, std::size_t t, double coeff, const std::vector<int> &dof,
                   Triplets &out)
{
  const auto &tri = mesh.triangles[t];
  const auto &p0 = mesh.nodes[tri[0]];
  const auto &p1 = mesh.nodes[tri[1]];
  const auto &p2 = mesh.nodes[tri[2]];
  const double area = mesh.signed_area(t);
  const double bx[3] = {p1[1] - p2[1], p2[1] - p0[1], p0[1] - p1[1]};
  const double by[3] = {p2[0] - p1[0], p0[0] - p2[0], p1[0] - p0[0]};
  const double scale = coeff / (4.0 * area);
  for (int i = 0; i < 3; i++)
  {
    const int di = dof[tri[i]];
    if (di < 0)
    {
      continue;
    }
    for (int j = 0; j < 3; j++)
    {
      const int dj = dof[tri[j]];
      if (dj < 0)
      {
        continue;
      }
      out.emplace_back(di, dj, scale * (bx[i] * bx[j] + by[i] * by[j]));
    }
  }
}

// Boundary mass sum_j w_j c_j phi_a phi_b over the quadrature nodes on GAMMA_B.
void add_boundary_mass(const Mesh &mesh, const BoundaryQuadrature &quad,
                       const Eigen::Ref<const Eigen::VectorXd> &coeff, const std::vector<int> &dof,
                       Triplets &out)
{
  for (std::size_t j = 0; j < quad.size(); j++)
  {
    const auto &edge = mesh.boundary_edges[quad.edge[j]];
    const double s = quad.local[j];
    const double phi[2] = {1.0 - s, s};
    const double w = quad.weights[j] * coeff[static_cast<Eigen::Index>(j)];
    for (int a = 0; a < 2; a++)
    {
      for (int b = 0; b < 2; b++)
      {
        out.emplace_back(dof[edge.nodes[a]], dof[edge.nodes[b]], w * phi[a] * phi[b]);
      }
    }
  }
}

SparseMatrix to_sparse(const Triplets &t, std::size_t n)
{
  SparseMatrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  m.setFromTriplets(t.begin(), t.end());
  // Exact symmetry regardless of the triplet summation order.
  SparseMatrix sym = 0.5 * (m + SparseMatrix(m.transpose()));
  sym.makeCompressed();
  return sym;
}

void require_label(const Mesh &mesh, BoundaryLabel label, ModelKind kind)
{
  if (!mesh.has_label(label))
  {
    throw ConfigError("mesh lacks boundary label " + to_string(label) + " required by model " +
                      to_string(kind));
  }
}

struct Layout
{
  std::vector<int> dof;  // node -> dof or -1
  std::vector<int> dof_nodes;
};

Layout make_layout(const Mesh &mesh, ModelKind kind)
{
  Layout l;
  l.dof.assign(mesh.num_nodes(), 0);
  if (kind == ModelKind::ThermalBlock)
  {
    for (const auto &e : mesh.boundary_edges)
    {
      if (e.label == BoundaryLabel::Dirichlet)
      {
        l.dof[e.nodes[0]] = -1;
        l.dof[e.nodes[1]] = -1;
      }
    }
  }
  int next = 0;
  for (std::size_t i = 0; i < mesh.num_nodes(); i++)
  {
    if (l.dof[i] >= 0)
    {
      l.dof[i] = next++;
      l.dof_nodes.push_back(static_cast<int>(i));
    }
  }
  return l;
}

void check_field(const BoundaryQuadrature &quad, const BoundaryField &field)
{
  if (static_cast<std::size_t>(field.g.size()) != quad.size() ||
      (field.modes.cols() > 0 && static_cast<std::size_t>(field.modes.rows()) != quad.size()))
  {
    std::ostringstream msg;
    msg << "boundary field has " << field.g.size() << " nodes but the mesh GAMMA_B quadrature has "
        << quad.size();
    throw ConfigError(msg.str());
  }
  if (field.y_ranges.size() != static_cast<std::size_t>(field.modes.cols()))
  {
    throw ConfigError("boundary field: one amplitude range per mode is required");
  }
  if (!(field.g.minCoeff() > 0.0))
  {
    throw ConfigError("boundary field: G must be positive on GAMMA_B");
  }
}

}  // namespace

AffineForm assemble_affine(const Mesh &mesh, const ModelSpec &model)
{
  AffineForm form;
  const Layout layout = make_layout(mesh, model.kind);
  form.dof_nodes = layout.dof_nodes;
  const std::size_t n = layout.dof_nodes.size();
  ThetaMap &theta = form.theta;
  theta.kind = model.kind;

  if (model.kind == ModelKind::ThermalBlock)
  {
    require_label(mesh, BoundaryLabel::Dirichlet, model.kind);
    if (!(model.mu_range.lo > 0.0) || model.mu_range.hi < model.mu_range.lo)
    {
      throw ConfigError("model.mu_range must be a positive interval");
    }
    theta.ranges = {model.mu_range};
    theta.reference = {model.reference_mu.value_or(model.mu_range.midpoint())};

    Triplets all, block;
    Eigen::VectorXd load = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    for (std::size_t t = 0; t < mesh.num_triangles(); t++)
    {
      add_stiffness(mesh, t, 1.0, layout.dof, all);
      if (mesh.regions[t] == 1)
      {
        add_stiffness(mesh, t, 1.0, layout.dof, block);
      }
      const double third = mesh.signed_area(t) / 3.0;
      for (int v : mesh.triangles[t])
      {
        if (layout.dof[v] >= 0)
        {
          load[layout.dof[v]] += third;
        }
      }
    }
    form.terms = {to_sparse(all, n), to_sparse(block, n)};
    form.load = load;
  }
  else
  {
    require_label(mesh, BoundaryLabel::GammaR, model.kind);
    require_label(mesh, BoundaryLabel::GammaB, model.kind);
    const BoundaryQuadrature quad = boundary_quadrature(mesh, BoundaryLabel::GammaB);
    check_field(quad, model.field);
    if (!(model.sigma0.lo > 0.0) || !(model.b_bar.lo > 0.0) || model.sigma0.hi < model.sigma0.lo ||
        model.b_bar.hi < model.b_bar.lo)
    {
      throw ConfigError("model: sigma0 and b_bar ranges must be positive intervals");
    }
    const std::size_t kl = static_cast<std::size_t>(model.field.modes.cols());
    theta.merged_diffusion = model.sigma0.fixed();
    theta.kl_terms = kl;
    theta.ranges = {model.sigma0, model.b_bar};
    theta.reference = {model.sigma0.midpoint(), model.b_bar.midpoint()};
    for (const auto &r : model.field.y_ranges)
    {
      theta.ranges.push_back(r);
      // Zero amplitude keeps the reference field equal to the mean field.
      theta.reference.push_back(0.0);
    }
    theta.mode_ratio = model.field.modes.array().colwise() / model.field.g.array();

    Triplets fin, spreader;
    for (std::size_t t = 0; t < mesh.num_triangles(); t++)
    {
      if (mesh.regions[t] == 0)
      {
        add_stiffness(mesh, t, 1.0, layout.dof, fin);
      }
      else if (theta.merged_diffusion)
      {
        add_stiffness(mesh, t, model.sigma0.lo, layout.dof, fin);
      }
      else
      {
        add_stiffness(mesh, t, 1.0, layout.dof, spreader);
      }
    }
    form.terms.push_back(to_sparse(fin, n));
    if (!theta.merged_diffusion)
    {
      form.terms.push_back(to_sparse(spreader, n));
    }
    Triplets mean;
    add_boundary_mass(mesh, quad, model.field.g, layout.dof, mean);
    form.terms.push_back(to_sparse(mean, n));
    for (std::size_t k = 0; k < kl; k++)
    {
      Triplets mode;
      add_boundary_mass(mesh, quad, model.field.modes.col(static_cast<Eigen::Index>(k)), layout.dof,
                        mode);
      form.terms.push_back(to_sparse(mode, n));
    }

    form.load = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    for (const auto &e : mesh.boundary_edges)
    {
      if (e.label != BoundaryLabel::GammaR)
      {
        continue;
      }
      const auto &a = mesh.nodes[e.nodes[0]];
      const auto &b = mesh.nodes[e.nodes[1]];
      const double half = 0.5 * std::hypot(b[0] - a[0], b[1] - a[1]);
      form.load[layout.dof[e.nodes[0]]] += half;
      form.load[layout.dof[e.nodes[1]]] += half;
    }
  }

  form.x_gram = form.assemble(theta.reference);
  return form;
}

SparseMatrix assemble_direct(const Mesh &mesh, const ModelSpec &model, const ParamVec &mu)
{
  const Layout layout = make_layout(mesh, model.kind);
  const std::size_t n = layout.dof_nodes.size();
  Triplets all;
  if (model.kind == ModelKind::ThermalBlock)
  {
    for (std::size_t t = 0; t < mesh.num_triangles(); t++)
    {
      add_stiffness(mesh, t, mesh.regions[t] == 1 ? 1.0 + mu.at(0) : 1.0, layout.dof, all);
    }
    return to_sparse(all, n);
  }
  const BoundaryQuadrature quad = boundary_quadrature(mesh, BoundaryLabel::GammaB);
  check_field(quad, model.field);
  for (std::size_t t = 0; t < mesh.num_triangles(); t++)
  {
    add_stiffness(mesh, t, mesh.regions[t] == 0 ? 1.0 : mu.at(0), layout.dof, all);
  }
  Eigen::VectorXd b = model.field.g;
  for (Eigen::Index k = 0; k < model.field.modes.cols(); k++)
  {
    b += model.field.modes.col(k) * mu.at(2 + k);
  }
  b *= mu.at(1);
  add_boundary_mass(mesh, quad, b, layout.dof, all);
  return to_sparse(all, n);
}

TruthSolution solve_truth(const AffineForm &form, const ParamVec &mu)
{
  form.theta.check_admissible(mu);
  const SparseMatrix b = form.assemble(mu);
  Eigen::SimplicialLDLT<SparseMatrix> solver;
  solver.compute(b);
  if (solver.info() != Eigen::Success)
  {
    throw NumericalError("truth solve: sparse factorization failed");
  }
  TruthSolution sol;
  sol.mu = mu;
  sol.coefficients = solver.solve(form.load);
  // One step of iterative refinement.
  sol.coefficients -= solver.solve(b * sol.coefficients - form.load);
  const double rhs_norm = form.load.norm();
  if (rhs_norm > 0.0)
  {
    const double rel = (b * sol.coefficients - form.load).norm() / rhs_norm;
    if (!(rel <= kTruthResidualTol))
    {
      std::ostringstream msg;
      msg << "truth solve did not converge: relative residual " << rel;
      throw NumericalError(msg.str());
    }
  }
  sol.output = form.load.dot(sol.coefficients);
  return sol;
}

}  // namespace crb
