// SPDX-License-Identifier: Apache-2.0

#include "crb/artifacts.hpp"

#include <fstream>
#include <sstream>

namespace crb
{

namespace
{

constexpr const char *kFormat = "crb-artifact";

Json dense(const Eigen::MatrixXd &m)
{
  return Json{{"rows", m.rows()},
              {"cols", m.cols()},
              {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

Eigen::MatrixXd dense(const Json &j)
{
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows * cols) != data.size())
  {
    throw ArtifactError("dense matrix shape does not match its data");
  }
  return Eigen::Map<const Eigen::MatrixXd>(data.data(), rows, cols);
}

Json vec(const Eigen::VectorXd &v)
{
  return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd vec(const Json &j)
{
  const auto data = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(data.data(), static_cast<Eigen::Index>(data.size()));
}

Json sparse(const SparseMatrix &m)
{
  std::vector<int> is, js;
  std::vector<double> vs;
  for (int k = 0; k < m.outerSize(); k++)
  {
    for (SparseMatrix::InnerIterator it(m, k); it; ++it)
    {
      is.push_back(static_cast<int>(it.row()));
      js.push_back(static_cast<int>(it.col()));
      vs.push_back(it.value());
    }
  }
  return Json{{"rows", m.rows()}, {"cols", m.cols()}, {"i", is}, {"j", js}, {"v", vs}};
}

SparseMatrix sparse(const Json &j)
{
  const auto is = j.at("i").get<std::vector<int>>();
  const auto js = j.at("j").get<std::vector<int>>();
  const auto vs = j.at("v").get<std::vector<double>>();
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  if (is.size() != js.size() || is.size() != vs.size())
  {
    throw ArtifactError("sparse triplet arrays differ in length");
  }
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(vs.size());
  for (std::size_t k = 0; k < vs.size(); k++)
  {
    if (is[k] < 0 || is[k] >= rows || js[k] < 0 || js[k] >= cols)
    {
      throw ArtifactError("sparse triplet index out of range");
    }
    t.emplace_back(is[k], js[k], vs[k]);
  }
  SparseMatrix m(rows, cols);
  m.setFromTriplets(t.begin(), t.end());
  m.makeCompressed();
  return m;
}

Json ranges(const std::vector<ParamRange> &r)
{
  Json a = Json::array();
  for (const auto &p : r)
  {
    a.push_back({p.lo, p.hi});
  }
  return a;
}

std::vector<ParamRange> ranges(const Json &j)
{
  std::vector<ParamRange> r;
  for (const auto &p : j)
  {
    r.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  }
  return r;
}

template <typename F>
auto guarded(const char *what, F &&f)
{
  try
  {
    return f();
  }
  catch (const Json::exception &e)
  {
    throw ArtifactError(std::string("malformed ") + what + " artifact: " + e.what());
  }
}

Json control_to_json(const Control &c)
{
  if (const auto *g = std::get_if<ControlGrid>(&c))
  {
    return Json{{"type", "grid"},
                {"lambda", g->lambda},
                {"t_grid", g->t_grid},
                {"x_grid", g->x_grid},
                {"u_values", g->u_values},
                {"gradient", g->gradient}};
  }
  const auto &h = std::get<HookeanExactControl>(c);
  return Json{{"type", "hookean_exact"},
              {"lambda", h.lambda},
              {"d", h.d},
              {"component", h.component},
              {"horizon", h.horizon},
              {"steps", h.propagators.size() - 1}};
}

Control control_from_json(const Json &j)
{
  const auto type = j.at("type").get<std::string>();
  if (type == "grid")
  {
    ControlGrid g;
    g.lambda = j.at("lambda").get<ParamVec>();
    g.t_grid = j.at("t_grid").get<std::vector<double>>();
    g.x_grid = j.at("x_grid").get<std::vector<double>>();
    g.u_values = j.at("u_values").get<std::vector<std::vector<double>>>();
    g.gradient = j.at("gradient").get<std::vector<std::vector<double>>>();
    return g;
  }
  if (type == "hookean_exact")
  {
    DumbbellModel hook(j.at("d").get<std::size_t>(), DumbbellForce::Hookean);
    hook.component = j.at("component").get<std::array<std::size_t, 2>>();
    hook.horizon = j.at("horizon").get<double>();
    return HookeanExactControl(hook, j.at("lambda").get<ParamVec>(), j.at("steps").get<std::size_t>());
  }
  throw ArtifactError("unknown control type '" + type + "'");
}

}  // namespace

Json mesh_to_json(const Mesh &mesh)
{
  Json edges = Json::array();
  for (const auto &e : mesh.boundary_edges)
  {
    edges.push_back({e.nodes[0], e.nodes[1], to_string(e.label)});
  }
  return Json{{"geometry", to_string(mesh.geometry)},
              {"spacing", mesh.spacing},
              {"nodes", mesh.nodes},
              {"triangles", mesh.triangles},
              {"regions", mesh.regions},
              {"boundary_edges", edges}};
}

Mesh mesh_from_json(const Json &j)
{
  return guarded("mesh",
                 [&]
                 {
                   Mesh m;
                   m.geometry = parse_geometry(j.at("geometry").get<std::string>());
                   m.spacing = j.at("spacing").get<double>();
                   m.nodes = j.at("nodes").get<std::vector<std::array<double, 2>>>();
                   m.triangles = j.at("triangles").get<std::vector<std::array<int, 3>>>();
                   m.regions = j.at("regions").get<std::vector<int>>();
                   for (const auto &e : j.at("boundary_edges"))
                   {
                     m.boundary_edges.push_back(
                         {{e.at(0).get<int>(), e.at(1).get<int>()}, parse_boundary_label(e.at(2).get<std::string>())});
                   }
                   return m;
                 });
}

Json theta_to_json(const ThetaMap &theta)
{
  return Json{{"kind", to_string(theta.kind)},
              {"ranges", ranges(theta.ranges)},
              {"reference", theta.reference},
              {"merged_diffusion", theta.merged_diffusion},
              {"kl_terms", theta.kl_terms},
              {"mode_ratio", dense(theta.mode_ratio)},
              {"admissibility_floor", theta.admissibility_floor}};
}

ThetaMap theta_from_json(const Json &j)
{
  return guarded("theta map",
                 [&]
                 {
                   ThetaMap t;
                   t.kind = parse_model_kind(j.at("kind").get<std::string>());
                   t.ranges = ranges(j.at("ranges"));
                   t.reference = j.at("reference").get<ParamVec>();
                   t.merged_diffusion = j.at("merged_diffusion").get<bool>();
                   t.kl_terms = j.at("kl_terms").get<std::size_t>();
                   t.mode_ratio = dense(j.at("mode_ratio"));
                   t.admissibility_floor = j.at("admissibility_floor").get<double>();
                   return t;
                 });
}

Json affine_form_to_json(const AffineForm &form)
{
  Json terms = Json::array();
  for (const auto &t : form.terms)
  {
    terms.push_back(sparse(t));
  }
  return Json{{"theta", theta_to_json(form.theta)},
              {"terms", terms},
              {"load", vec(form.load)},
              {"x_gram", sparse(form.x_gram)},
              {"dof_nodes", form.dof_nodes},
              {"provenance_hash", hex64(form.provenance_hash())}};
}

AffineForm affine_form_from_json(const Json &j)
{
  return guarded("affine form",
                 [&]
                 {
                   AffineForm f;
                   f.theta = theta_from_json(j.at("theta"));
                   for (const auto &t : j.at("terms"))
                   {
                     f.terms.push_back(sparse(t));
                   }
                   f.load = vec(j.at("load"));
                   f.x_gram = sparse(j.at("x_gram"));
                   f.dof_nodes = j.at("dof_nodes").get<std::vector<int>>();
                   if (hex64(f.provenance_hash()) != j.at("provenance_hash").get<std::string>())
                   {
                     throw ArtifactError("affine form content does not match its provenance hash");
                   }
                   return f;
                 });
}

Json reduced_basis_to_json(const ReducedBasis &rb)
{
  Json stiff = Json::array();
  for (const auto &c : rb.reduced_stiffness)
  {
    stiff.push_back(dense(c));
  }
  return Json{{"form_hash", hex64(rb.form_hash)},
              {"theta", theta_to_json(rb.theta)},
              {"basis", dense(rb.basis)},
              {"selected_mu", rb.selected_mu},
              {"reduced_stiffness", stiff},
              {"reduced_load", vec(rb.reduced_load)},
              {"riesz_gram", dense(rb.riesz_gram)},
              {"theta_ref", vec(rb.theta_ref)},
              {"greedy_history", rb.greedy_history}};
}

ReducedBasis reduced_basis_from_json(const Json &j)
{
  return guarded("reduced basis",
                 [&]
                 {
                   ReducedBasis rb;
                   rb.form_hash = std::stoull(j.at("form_hash").get<std::string>(), nullptr, 16);
                   rb.theta = theta_from_json(j.at("theta"));
                   rb.basis = dense(j.at("basis"));
                   rb.selected_mu = j.at("selected_mu").get<std::vector<ParamVec>>();
                   for (const auto &c : j.at("reduced_stiffness"))
                   {
                     rb.reduced_stiffness.push_back(dense(c));
                   }
                   rb.reduced_load = vec(j.at("reduced_load"));
                   rb.riesz_gram = dense(j.at("riesz_gram"));
                   rb.theta_ref = vec(j.at("theta_ref"));
                   rb.greedy_history = j.at("greedy_history").get<std::vector<double>>();
                   const std::size_t n = rb.size(), q = rb.q_count();
                   if (rb.reduced_load.size() != static_cast<Eigen::Index>(n) ||
                       rb.riesz_gram.rows() != static_cast<Eigen::Index>(1 + n * q) ||
                       q != rb.theta.q_count())
                   {
                     throw ArtifactError("reduced basis arrays are inconsistent");
                   }
                   return rb;
                 });
}

Json kl_basis_to_json(const KLBasis &kl)
{
  return Json{{"nodes", kl.nodes},
              {"weights", kl.weights},
              {"arc", kl.arc},
              {"g_mean", vec(kl.g_mean)},
              {"modes", dense(kl.modes)},
              {"eigenvalues", vec(kl.eigenvalues)},
              {"spectrum", vec(kl.spectrum)},
              {"b_bar", kl.b_bar},
              {"upsilon", kl.upsilon},
              {"correlation_length", kl.correlation_length},
              {"g_normalization", to_string(kl.g_normalization)},
              {"distance", to_string(kl.distance)}};
}

KLBasis kl_basis_from_json(const Json &j)
{
  return guarded("KL basis",
                 [&]
                 {
                   KLBasis kl;
                   kl.nodes = j.at("nodes").get<std::vector<std::array<double, 2>>>();
                   kl.weights = j.at("weights").get<std::vector<double>>();
                   kl.arc = j.at("arc").get<std::vector<double>>();
                   kl.g_mean = vec(j.at("g_mean"));
                   kl.modes = dense(j.at("modes"));
                   kl.eigenvalues = vec(j.at("eigenvalues"));
                   kl.spectrum = vec(j.at("spectrum"));
                   kl.b_bar = j.at("b_bar").get<double>();
                   kl.upsilon = j.at("upsilon").get<double>();
                   kl.correlation_length = j.at("correlation_length").get<double>();
                   kl.g_normalization = parse_g_normalization(j.at("g_normalization").get<std::string>());
                   kl.distance = parse_kernel_distance(j.at("distance").get<std::string>());
                   if (kl.modes.rows() != static_cast<Eigen::Index>(kl.node_count()) ||
                       kl.modes.cols() != kl.eigenvalues.size())
                   {
                     throw ArtifactError("KL basis arrays are inconsistent");
                   }
                   return kl;
                 });
}

Json cv_basis_to_json(const CVBasis &basis)
{
  Json controls = Json::array();
  for (const auto &c : basis.alg2_controls)
  {
    controls.push_back(control_to_json(c));
  }
  return Json{{"kind", to_string(basis.kind)},
              {"selected", basis.selected},
              {"alg1_refs", basis.alg1_refs},
              {"alg1_ref_halfwidths", basis.alg1_ref_halfwidths},
              {"m_large", basis.m_large},
              {"alg2_control", to_string(basis.alg2_control)},
              {"alg2_controls", controls},
              {"m_small", basis.m_small},
              {"steps", basis.steps},
              {"trial_history", basis.trial_history},
              {"seed", basis.seed}};
}

CVBasis cv_basis_from_json(const Json &j)
{
  return guarded("control-variate basis",
                 [&]
                 {
                   CVBasis b;
                   b.kind = parse_cv_kind(j.at("kind").get<std::string>());
                   b.selected = j.at("selected").get<std::vector<ParamVec>>();
                   b.alg1_refs = j.at("alg1_refs").get<std::vector<double>>();
                   b.alg1_ref_halfwidths = j.at("alg1_ref_halfwidths").get<std::vector<double>>();
                   b.m_large = j.at("m_large").get<std::size_t>();
                   b.alg2_control = parse_alg2_control(j.at("alg2_control").get<std::string>());
                   for (const auto &c : j.at("alg2_controls"))
                   {
                     b.alg2_controls.push_back(control_from_json(c));
                   }
                   b.m_small = j.at("m_small").get<std::size_t>();
                   b.steps = j.at("steps").get<std::size_t>();
                   b.trial_history = j.at("trial_history").get<std::vector<double>>();
                   b.seed = j.at("seed").get<std::uint64_t>();
                   const bool ok = b.kind == CVKind::Alg1 ? b.alg1_refs.size() == b.size()
                                                          : b.alg2_controls.size() == b.size();
                   if (!ok)
                   {
                     throw ArtifactError("control-variate basis arrays are inconsistent");
                   }
                   return b;
                 });
}

void save_artifact(const std::string &path, const std::string &kind, const Json &payload)
{
  const Json doc{{"format", kFormat}, {"kind", kind}, {"schema_version", kArtifactSchemaVersion}, {"payload", payload}};
  write_text_file(path, doc.dump());
}

Json load_artifact(const std::string &path, const std::string &kind)
{
  const Json doc = read_json_file(path);
  if (!doc.is_object() || doc.value("format", "") != kFormat)
  {
    throw ArtifactError(path + " is not a crb artifact");
  }
  if (doc.value("kind", "") != kind)
  {
    throw ArtifactError(path + " holds a '" + doc.value("kind", "") + "' artifact, expected '" + kind + "'");
  }
  const int version = doc.value("schema_version", -1);
  if (version != kArtifactSchemaVersion)
  {
    std::ostringstream msg;
    msg << path << " has schema version " << version << ", this build reads version " << kArtifactSchemaVersion;
    throw ArtifactError(msg.str());
  }
  if (!doc.contains("payload"))
  {
    throw ArtifactError(path + " has no payload");
  }
  return doc.at("payload");
}

Json read_json_file(const std::string &path)
{
  std::ifstream is(path);
  if (!is)
  {
    throw ArtifactError("cannot open " + path);
  }
  try
  {
    return Json::parse(is);
  }
  catch (const Json::parse_error &e)
  {
    throw ArtifactError("cannot parse " + path + ": " + e.what());
  }
}

void write_text_file(const std::string &path, const std::string &text)
{
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os)
  {
    throw ArtifactError("cannot write " + path);
  }
  os << text;
  if (!os)
  {
    throw ArtifactError("failed writing " + path);
  }
}

}  // namespace crb
