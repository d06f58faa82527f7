// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "crb/artifacts.hpp"
#include "crb/uq_mc.hpp"

namespace fs = std::filesystem;

namespace crb
{
namespace
{

constexpr int kManifestVersion = 1;
constexpr const char *kManifestFormat = "crb-manifest";

constexpr std::uint64_t kTrialStream = 0x636c692d747269ull;
constexpr std::uint64_t kTestStream = 0x636c692d746573ull;
constexpr std::uint64_t kGreedyStream = 0x636c692d677265ull;
constexpr std::uint64_t kOnlineStream = 0x636c692d6f6e6cull;
constexpr std::uint64_t kUqStream = 0x636c692d7571ull;
constexpr std::uint64_t kSweepStream = 0x636c692d737765ull;

std::vector<std::string> split_path(const std::string &path)
{
  std::vector<std::string> parts;
  std::stringstream ss(path);
  std::string part;
  while (std::getline(ss, part, '.'))
  {
    parts.push_back(part);
  }
  return parts;
}

std::size_t line_at(const std::string &text, std::size_t offset)
{
  offset = std::min(offset, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + offset, '\n'));
}

//
// Validated access to a JSON run configuration. Every error names the offending field and,
// when the key can be located in the source text, its line.
//
class Config
{
public:
  Config(Json root, std::string text) : root_(std::move(root)), text_(std::move(text))
  {
    if (!root_.is_object())
    {
      throw ConfigError("config: top level must be a JSON object");
    }
  }

  static Config parse(const std::string &text, const std::string &origin)
  {
    try
    {
      return Config(Json::parse(text), text);
    }
    catch (const Json::parse_error &e)
    {
      std::ostringstream msg;
      msg << origin << ": invalid JSON at line " << line_at(text, e.byte == 0 ? 0 : e.byte - 1) << ": " << e.what();
      throw ConfigError(msg.str());
    }
  }

  static Config from_file(const std::string &path)
  {
    std::ifstream is(path);
    if (!is)
    {
      throw ConfigError("cannot open config file " + path);
    }
    std::stringstream ss;
    ss << is.rdbuf();
    return parse(ss.str(), path);
  }

  const Json &root() const { return root_; }
  bool has(const std::string &path) const { return find(path) != nullptr; }

  [[noreturn]] void fail(const std::string &path, const std::string &msg) const
  {
    std::ostringstream os;
    os << "config field '" << path << "'";
    if (const std::size_t line = line_of(path); line > 0)
    {
      os << " (line " << line << ")";
    }
    os << ": " << msg;
    throw ConfigError(os.str());
  }

  template <typename T>
  T get(const std::string &path) const
  {
    const Json *j = find(path);
    if (j == nullptr)
    {
      fail(path, "is required");
    }
    return convert<T>(*j, path);
  }

  template <typename T>
  T get(const std::string &path, const T &fallback) const
  {
    const Json *j = find(path);
    return j == nullptr ? fallback : convert<T>(*j, path);
  }

  std::size_t count(const std::string &path, std::size_t fallback) const
  {
    const Json *j = find(path);
    if (j == nullptr)
    {
      return fallback;
    }
    if (!j->is_number_integer() || j->get<long long>() < 1)
    {
      fail(path, "must be an integer >= 1");
    }
    return j->get<std::size_t>();
  }

  double positive(const std::string &path, double fallback) const
  {
    const double v = get<double>(path, fallback);
    if (!(v > 0.0) || !std::isfinite(v))
    {
      fail(path, "must be a finite number > 0");
    }
    return v;
  }

  std::vector<std::size_t> counts(const std::string &path, const std::vector<std::size_t> &fallback) const
  {
    const Json *j = find(path);
    if (j == nullptr)
    {
      return fallback;
    }
    if (!j->is_array())
    {
      fail(path, "must be an array of integers >= 1");
    }
    std::vector<std::size_t> out;
    for (const auto &e : *j)
    {
      if (!e.is_number_integer() || e.get<long long>() < 1)
      {
        fail(path, "must be an array of integers >= 1");
      }
      out.push_back(e.get<std::size_t>());
    }
    return out;
  }

  ParamRange range(const std::string &path, ParamRange fallback, bool allow_fixed) const
  {
    const Json *j = find(path);
    if (j == nullptr)
    {
      return fallback;
    }
    if (!j->is_array() || j->size() != 2 || !(*j)[0].is_number() || !(*j)[1].is_number())
    {
      fail(path, "must be a pair [lo, hi]");
    }
    const ParamRange r{(*j)[0].get<double>(), (*j)[1].get<double>()};
    if (!(r.lo < r.hi) && !(allow_fixed && r.lo == r.hi))
    {
      fail(path, "range is degenerate, need lo < hi");
    }
    return r;
  }

  // Rejects keys of the object at `path` that are not listed.
  void allow_keys(const std::string &path, const std::set<std::string> &allowed) const
  {
    const Json *j = path.empty() ? &root_ : find(path);
    if (j == nullptr)
    {
      return;
    }
    if (!j->is_object())
    {
      fail(path, "must be an object");
    }
    for (auto it = j->begin(); it != j->end(); ++it)
    {
      if (allowed.count(it.key()) == 0)
      {
        fail(path.empty() ? it.key() : path + "." + it.key(), "unknown field");
      }
    }
  }

  std::uint64_t hash() const
  {
    const std::string canonical = root_.dump();
    return fnv1a(canonical.data(), canonical.size());
  }

private:
  template <typename T>
  T convert(const Json &j, const std::string &path) const
  {
    try
    {
      return j.get<T>();
    }
    catch (const Json::exception &)
    {
      fail(path, "has the wrong type");
    }
  }

  const Json *find(const std::string &path) const
  {
    const Json *j = &root_;
    for (const auto &part : split_path(path))
    {
      if (!j->is_object() || !j->contains(part))
      {
        return nullptr;
      }
      j = &(*j)[part];
    }
    return j;
  }

  std::size_t line_of(const std::string &path) const
  {
    std::size_t pos = 0;
    std::size_t found = std::string::npos;
    for (const auto &part : split_path(path))
    {
      const std::size_t p = text_.find("\"" + part + "\"", pos);
      if (p == std::string::npos)
      {
        break;
      }
      found = p;
      pos = p + 1;
    }
    return found == std::string::npos ? 0 : line_at(text_, found);
  }

  Json root_;
  std::string text_;
};

std::string format_double(double v)
{
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class Csv
{
public:
  explicit Csv(const std::vector<std::string> &header) { line(header); }

  void line(const std::vector<std::string> &cells)
  {
    for (std::size_t i = 0; i < cells.size(); i++)
    {
      os_ << (i ? "," : "") << cells[i];
    }
    os_ << "\n";
  }

  template <typename... Ts>
  void row(const Ts &...cells)
  {
    std::vector<std::string> out;
    (append(out, cells), ...);
    line(out);
  }

  std::string str() const { return os_.str(); }

private:
  static void append(std::vector<std::string> &out, double v) { out.push_back(format_double(v)); }
  static void append(std::vector<std::string> &out, std::size_t v) { out.push_back(std::to_string(v)); }
  static void append(std::vector<std::string> &out, int v) { out.push_back(std::to_string(v)); }
  static void append(std::vector<std::string> &out, const std::string &v) { out.push_back(v); }
  static void append(std::vector<std::string> &out, const ParamVec &v)
  {
    for (double x : v)
    {
      out.push_back(format_double(x));
    }
  }

  std::ostringstream os_;
};

std::string file_hash(const std::string &path)
{
  std::ifstream is(path, std::ios::binary);
  if (!is)
  {
    throw ArtifactError("cannot open " + path);
  }
  std::stringstream ss;
  ss << is.rdbuf();
  const std::string bytes = ss.str();
  return hex64(fnv1a(bytes.data(), bytes.size()));
}

// State of one subcommand run: where artifacts are read and written, and what was touched.
struct RunContext
{
  std::string command;
  const Config *config = nullptr;
  std::uint64_t seed = 0;
  fs::path in_dir;
  fs::path out_dir;
  Json inputs = Json::array();
  Json outputs = Json::array();
  std::ostream *out = nullptr;

  Json load(const std::string &name, const std::string &kind)
  {
    const std::string path = (in_dir / name).string();
    if (!fs::exists(path))
    {
      throw ArtifactError("missing artifact " + path + " (run the producing subcommand first)");
    }
    Json payload = load_artifact(path, kind);
    inputs.push_back({{"name", name}, {"kind", kind}, {"hash", file_hash(path)}});
    return payload;
  }

  void save(const std::string &name, const std::string &kind, const Json &payload)
  {
    const std::string path = (out_dir / name).string();
    save_artifact(path, kind, payload);
    outputs.push_back({{"name", name}, {"kind", kind}, {"hash", file_hash(path)}});
  }

  void write(const std::string &name, const std::string &text, const std::string &kind = "csv")
  {
    const std::string path = (out_dir / name).string();
    write_text_file(path, text);
    outputs.push_back({{"name", name}, {"kind", kind}, {"hash", file_hash(path)}});
  }

  void write_binary(const std::string &name, const IncrementSource &src)
  {
    const std::string path = (out_dir / name).string();
    write_increments(path, src);
    outputs.push_back({{"name", name}, {"kind", "increments"}, {"hash", file_hash(path)}});
  }
};

//
// Problem setup from the configuration.
//

std::string problem_of(const Config &cfg)
{
  const auto p = cfg.get<std::string>("problem");
  if (p != "thermal_block" && p != "heat_sink" && p != "fene_dumbbell")
  {
    cfg.fail("problem", "must be one of thermal_block, heat_sink, fene_dumbbell (got '" + p + "')");
  }
  return p;
}

void require_problem(const RunContext &ctx, std::initializer_list<const char *> allowed)
{
  const std::string p = problem_of(*ctx.config);
  for (const char *a : allowed)
  {
    if (p == a)
    {
      return;
    }
  }
  ctx.config->fail("problem", "subcommand '" + ctx.command + "' does not apply to problem '" + p + "'");
}

void validate_config(const Config &cfg)
{
  const std::string p = problem_of(cfg);
  cfg.allow_keys("", {"problem", "description", "seed", "output_dir", "mesh", "parameters", "greedy", "online",
                      "kl", "model", "uq", "sde", "cv"});
  cfg.get<std::uint64_t>("seed", 0);
  cfg.get<std::string>("output_dir", "out");
  cfg.allow_keys("mesh", {"h"});
  cfg.allow_keys("parameters", {"mu_range", "lo", "hi"});
  cfg.allow_keys("greedy", {"trial_size", "n_max", "eps", "trial_truncations"});
  cfg.allow_keys("online", {"test_size", "ns"});
  cfg.allow_keys("kl", {"k_max", "delta", "upsilon", "b_bar", "g_normalization", "distance"});
  cfg.allow_keys("model", {"sigma0"});
  cfg.allow_keys("uq", {"ks", "ns", "m"});
  cfg.allow_keys("sde", {"d", "force", "b", "x0", "horizon", "steps", "component"});
  cfg.allow_keys("cv", {"kind", "alg2_control", "trial_size", "n_max", "m_small", "m_large", "eps", "grid",
                        "grid_t_steps", "test_size", "m_online", "online_ns", "sweep_ns", "write_increments"});
  cfg.allow_keys("cv.grid", {"x_min", "x_max", "intervals"});
  if (p != "fene_dumbbell")
  {
    cfg.positive("mesh.h", 1.0 / 64);
    cfg.count("greedy.trial_size", 1);
    cfg.count("greedy.n_max", 1);
    cfg.positive("greedy.eps", 1.0);
    cfg.count("online.test_size", 1);
    cfg.counts("online.ns", {});
  }
  if (p == "thermal_block")
  {
    const ParamRange r = cfg.range("parameters.mu_range", {0.1, 10.0}, false);
    if (r.lo <= 0.0)
    {
      cfg.fail("parameters.mu_range", "conductivities must be > 0");
    }
  }
  if (p == "heat_sink")
  {
    cfg.count("kl.k_max", 1);
    cfg.positive("kl.delta", 1.0);
    cfg.positive("kl.upsilon", 1.0);
    cfg.positive("kl.b_bar", 1.0);
    cfg.positive("model.sigma0", 2.0);
    cfg.counts("greedy.trial_truncations", {});
    cfg.counts("uq.ks", {});
    cfg.counts("uq.ns", {});
    cfg.count("uq.m", 2);
    if (cfg.has("uq.m") && cfg.get<std::size_t>("uq.m") < 2)
    {
      cfg.fail("uq.m", "must be >= 2");
    }
  }
}

ModelSpec base_spec(const Config &cfg)
{
  ModelSpec spec;
  if (problem_of(cfg) == "thermal_block")
  {
    spec.kind = ModelKind::ThermalBlock;
    spec.mu_range = cfg.range("parameters.mu_range", {0.1, 10.0}, false);
  }
  else
  {
    spec.kind = ModelKind::TSinkRobin;
    const double sigma0 = cfg.positive("model.sigma0", 2.0);
    spec.sigma0 = {sigma0, sigma0};
  }
  return spec;
}

KLOptions kl_options(const Config &cfg)
{
  KLOptions o;
  o.k_max = cfg.count("kl.k_max", o.k_max);
  o.delta = cfg.positive("kl.delta", o.delta);
  o.upsilon = cfg.positive("kl.upsilon", o.upsilon);
  o.b_bar = cfg.positive("kl.b_bar", o.b_bar);
  try
  {
    o.g_normalization = parse_g_normalization(cfg.get<std::string>("kl.g_normalization", to_string(o.g_normalization)));
  }
  catch (const ConfigError &e)
  {
    cfg.fail("kl.g_normalization", e.what());
  }
  try
  {
    o.distance = parse_kernel_distance(cfg.get<std::string>("kl.distance", to_string(o.distance)));
  }
  catch (const ConfigError &e)
  {
    cfg.fail("kl.distance", e.what());
  }
  return o;
}

Mesh config_mesh(const Config &cfg)
{
  const Geometry g = problem_of(cfg) == "thermal_block" ? Geometry::UnitSquareDirichlet : Geometry::TSink;
  return build_mesh(g, cfg.positive("mesh.h", 1.0 / 64));
}

KLBasis load_kl(RunContext &ctx)
{
  KLBasis kl = kl_basis_from_json(ctx.load("kl_basis.json", "kl_basis"));
  const KLOptions o = kl_options(*ctx.config);
  if (kl.size() != o.k_max || kl.upsilon != o.upsilon || kl.b_bar != o.b_bar || kl.correlation_length != o.delta ||
      kl.g_normalization != o.g_normalization || kl.distance != o.distance)
  {
    throw ArtifactError("kl_basis.json was built with different kl settings than the config; rerun 'kl build'");
  }
  return kl;
}

struct FormSetup
{
  Mesh mesh;
  std::optional<KLBasis> kl;
  AffineForm form;
};

FormSetup build_form(RunContext &ctx)
{
  FormSetup s;
  s.mesh = config_mesh(*ctx.config);
  ModelSpec spec = base_spec(*ctx.config);
  if (spec.kind == ModelKind::TSinkRobin)
  {
    s.kl = load_kl(ctx);
    spec.b_bar = {s.kl->b_bar, s.kl->b_bar};
    spec.field = s.kl->boundary_field();
  }
  s.form = assemble_affine(s.mesh, spec);
  return s;
}

ReducedBasis load_rb(RunContext &ctx)
{
  return reduced_basis_from_json(ctx.load("reduced_basis.json", "reduced_basis"));
}

std::vector<ParamVec> test_points(const RunContext &ctx, const ThetaMap &theta)
{
  std::mt19937_64 rng(derive_seed(ctx.seed, kTestStream, 0));
  return sample_parameters(theta, ctx.config->count("online.test_size", 200), rng);
}

std::vector<std::size_t> basis_sizes(const Config &cfg, const std::string &path, std::size_t available)
{
  std::vector<std::size_t> ns = cfg.counts(path, {});
  if (ns.empty())
  {
    ns.push_back(available);
  }
  for (std::size_t n : ns)
  {
    if (n > available)
    {
      cfg.fail(path, "requests N = " + std::to_string(n) + " but the basis has " + std::to_string(available) +
                         " functions");
    }
  }
  return ns;
}

std::vector<std::string> indexed_header(std::vector<std::string> head, const std::string &prefix, std::size_t count)
{
  for (std::size_t i = 0; i < count; i++)
  {
    head.push_back(prefix + std::to_string(i));
  }
  return head;
}

//
// rb
//

void rb_offline(RunContext &ctx)
{
  require_problem(ctx, {"thermal_block", "heat_sink"});
  const Config &cfg = *ctx.config;
  const FormSetup s = build_form(ctx);
  const std::size_t trial_size = cfg.count("greedy.trial_size", 512);
  std::vector<ParamVec> trial;
  if (s.kl)
  {
    trial = heat_sink_trial(*s.kl, trial_size, derive_seed(ctx.seed, kTrialStream, 0), cfg.positive("model.sigma0", 2.0),
                            cfg.counts("greedy.trial_truncations", {}));
  }
  else
  {
    std::mt19937_64 rng(derive_seed(ctx.seed, kTrialStream, 0));
    trial = sample_parameters(s.form.theta, trial_size, rng);
  }
  GreedyOptions g;
  g.n_max = cfg.count("greedy.n_max", 15);
  g.eps = cfg.positive("greedy.eps", 1e-8);
  g.seed = derive_seed(ctx.seed, kGreedyStream, 0);
  const ReducedBasis rb = greedy_offline(s.form, trial, g);

  ctx.save("reduced_basis.json", "reduced_basis", reduced_basis_to_json(rb));
  Csv csv({"N", "max_output_bound"});
  for (std::size_t i = 0; i < rb.greedy_history.size(); i++)
  {
    csv.row(i + 1, rb.greedy_history[i]);
  }
  ctx.write("rb_greedy.csv", csv.str());
  *ctx.out << "rb offline: N = " << rb.size() << ", truth dimension " << s.form.size() << ", trial " << trial.size()
           << ", final max output bound " << (rb.greedy_history.empty() ? 0.0 : rb.greedy_history.back()) << "\n";
}

void rb_online(RunContext &ctx)
{
  require_problem(ctx, {"thermal_block", "heat_sink"});
  const ReducedBasis rb = load_rb(ctx);
  const auto points = test_points(ctx, rb.theta);
  const auto ns = basis_sizes(*ctx.config, "online.ns", rb.size());
  std::vector<std::vector<OnlineSolution>> sol(points.size());
  parallel_for(points.size(), [&](std::size_t i) {
    for (std::size_t n : ns)
    {
      sol[i].push_back(online_solve(rb, points[i], n));
    }
  });
  Csv csv(indexed_header({"index", "N", "output", "output_bound", "energy_bound", "alpha_lb"}, "mu_",
                         rb.theta.param_dim()));
  for (std::size_t i = 0; i < points.size(); i++)
  {
    for (std::size_t k = 0; k < ns.size(); k++)
    {
      const auto &o = sol[i][k];
      csv.row(i, ns[k], o.output, o.output_bound, o.energy_bound, o.alpha_lb, points[i]);
    }
  }
  ctx.write("rb_online.csv", csv.str());
  *ctx.out << "rb online: " << points.size() << " parameters, N in {";
  for (std::size_t k = 0; k < ns.size(); k++)
  {
    *ctx.out << (k ? ", " : "") << ns[k];
  }
  *ctx.out << "}\n";
}

void rb_effectivity(RunContext &ctx)
{
  require_problem(ctx, {"thermal_block", "heat_sink"});
  const ReducedBasis rb = load_rb(ctx);
  const FormSetup s = build_form(ctx);
  if (s.form.provenance_hash() != rb.form_hash)
  {
    throw ArtifactError("reduced_basis.json was built on a different affine form than this config produces");
  }
  const auto points = test_points(ctx, rb.theta);
  const auto ns = basis_sizes(*ctx.config, "online.ns", rb.size());
  Csv csv({"index", "N", "truth", "reduced", "error", "bound", "effectivity", "ceiling", "ok"});
  std::size_t violations = 0;
  double lo = INFINITY, hi = 0.0;
  for (std::size_t n : ns)
  {
    const auto rows = effectivity_report(s.form, rb, points, n);
    for (std::size_t i = 0; i < rows.size(); i++)
    {
      const auto &r = rows[i];
      csv.row(i, n, r.truth, r.reduced, r.error, r.bound, r.effectivity ? format_double(*r.effectivity) : "",
              r.ceiling, r.ok ? 1 : 0);
      violations += r.ok ? 0 : 1;
      if (r.effectivity)
      {
        lo = std::min(lo, *r.effectivity);
        hi = std::max(hi, *r.effectivity);
      }
    }
  }
  ctx.write("rb_effectivity.csv", csv.str());
  *ctx.out << "rb effectivity: " << points.size() * ns.size() << " rows, " << violations << " violations";
  if (hi > 0.0)
  {
    *ctx.out << ", effectivity range [" << lo << ", " << hi << "]";
  }
  *ctx.out << "\n";
}

//
// kl
//

void kl_build(RunContext &ctx)
{
  require_problem(ctx, {"heat_sink"});
  const Mesh mesh = config_mesh(*ctx.config);
  const KLBasis kl = kl_expand(mesh, kl_options(*ctx.config));
  ctx.save("kl_basis.json", "kl_basis", kl_basis_to_json(kl));
  const double total = kl.spectrum.sum();
  Csv csv({"k", "eigenvalue", "cumulative_fraction", "retained"});
  double acc = 0.0;
  for (Eigen::Index k = 0; k < kl.spectrum.size(); k++)
  {
    acc += kl.spectrum[k];
    csv.row(static_cast<std::size_t>(k + 1), kl.spectrum[k], total > 0.0 ? acc / total : 0.0,
            static_cast<std::size_t>(k) < kl.size() ? 1 : 0);
  }
  ctx.write("kl_spectrum.csv", csv.str());
  *ctx.out << "kl build: " << kl.node_count() << " boundary nodes, " << kl.size() << " modes retained, lambda_1 = "
           << kl.eigenvalues[0] << ", lambda_K = " << kl.eigenvalues[kl.size() - 1] << "\n";
}

//
// uq
//

void uq_run(RunContext &ctx)
{
  require_problem(ctx, {"heat_sink"});
  const Config &cfg = *ctx.config;
  const KLBasis kl = load_kl(ctx);
  const ReducedBasis rb = load_rb(ctx);
  const std::vector<std::size_t> ks = cfg.counts("uq.ks", {5, 10, 15, 20});
  for (std::size_t k : ks)
  {
    if (k > kl.size())
    {
      cfg.fail("uq.ks", "K = " + std::to_string(k) + " exceeds the " + std::to_string(kl.size()) + " KL modes");
    }
  }
  std::vector<std::size_t> all(rb.size());
  for (std::size_t i = 0; i < all.size(); i++)
  {
    all[i] = i + 1;
  }
  const std::vector<std::size_t> ns = cfg.has("uq.ns") ? basis_sizes(cfg, "uq.ns", rb.size()) : all;
  const auto rows = uq_sweep(rb, kl, ks, ns, cfg.count("uq.m", 2000), derive_seed(ctx.seed, kUqStream, 0),
                             cfg.positive("model.sigma0", 2.0));
  Csv csv({"N", "K", "E_M", "V_M", "delta_E", "delta_V", "clt_halfwidth"});
  for (const auto &r : rows)
  {
    csv.row(r.n, r.k, r.mean, r.variance, r.delta_e, r.delta_v, r.clt_halfwidth);
  }
  ctx.write("uq.csv", csv.str());
  *ctx.out << "uq run: " << rows.size() << " rows, M = " << (rows.empty() ? 0 : rows.front().m) << "\n";
}

//
// cv
//

std::unique_ptr<DumbbellModel> cv_model(const Config &cfg)
{
  const std::size_t d = cfg.count("sde.d", 2);
  if (d > 2)
  {
    cfg.fail("sde.d", "dumbbells are supported in dimension 1 or 2");
  }
  const auto force_name = cfg.get<std::string>("sde.force", "fene");
  DumbbellForce force;
  if (force_name == "hookean")
  {
    force = DumbbellForce::Hookean;
  }
  else if (force_name == "fene")
  {
    force = DumbbellForce::Fene;
  }
  else
  {
    cfg.fail("sde.force", "must be 'hookean' or 'fene'");
  }
  const double b = force == DumbbellForce::Fene ? cfg.positive("sde.b", 16.0) : 0.0;
  auto model = std::make_unique<DumbbellModel>(d, force, b);
  if (cfg.has("sde.x0"))
  {
    const auto x0 = cfg.get<std::vector<double>>("sde.x0");
    if (x0.size() != d)
    {
      cfg.fail("sde.x0", "must have " + std::to_string(d) + " entries");
    }
    model->x0 = x0;
  }
  if (force == DumbbellForce::Fene)
  {
    double r2 = 0.0;
    for (double v : model->x0)
    {
      r2 += v * v;
    }
    if (r2 >= b)
    {
      cfg.fail("sde.x0", "initial state must lie inside the FENE ball |x|^2 < b");
    }
  }
  model->horizon = cfg.positive("sde.horizon", 1.0);
  if (cfg.has("sde.component"))
  {
    const auto c = cfg.get<std::array<std::size_t, 2>>("sde.component");
    if (c[0] >= d || c[1] >= d)
    {
      cfg.fail("sde.component", "indices must be below the dimension");
    }
    model->component = c;
  }
  return model;
}

std::pair<ParamVec, ParamVec> cv_box(const Config &cfg, std::size_t dim)
{
  const ParamVec dflt(dim, 1.0);
  ParamVec lo = cfg.get<ParamVec>("parameters.lo", ParamVec(dim, -1.0));
  ParamVec hi = cfg.get<ParamVec>("parameters.hi", dflt);
  if (lo.size() != dim)
  {
    cfg.fail("parameters.lo", "must have " + std::to_string(dim) + " entries");
  }
  if (hi.size() != dim)
  {
    cfg.fail("parameters.hi", "must have " + std::to_string(dim) + " entries");
  }
  for (std::size_t i = 0; i < dim; i++)
  {
    if (!(lo[i] < hi[i]))
    {
      cfg.fail("parameters.hi", "range is degenerate, need lo < hi in every coordinate");
    }
  }
  return {lo, hi};
}

CVGreedyOptions cv_options(const RunContext &ctx)
{
  const Config &cfg = *ctx.config;
  CVGreedyOptions o;
  try
  {
    o.kind = parse_cv_kind(cfg.get<std::string>("cv.kind", "alg1"));
  }
  catch (const ConfigError &e)
  {
    cfg.fail("cv.kind", e.what());
  }
  try
  {
    o.alg2_control = parse_alg2_control(cfg.get<std::string>("cv.alg2_control", "hookean_exact"));
  }
  catch (const ConfigError &e)
  {
    cfg.fail("cv.alg2_control", e.what());
  }
  o.n_max = cfg.count("cv.n_max", o.n_max);
  o.m_small = cfg.count("cv.m_small", o.m_small);
  o.m_large = cfg.count("cv.m_large", o.m_large);
  o.steps = cfg.count("sde.steps", o.steps);
  o.eps = cfg.positive("cv.eps", 1e-12);
  o.seed = derive_seed(ctx.seed, kGreedyStream, 0);
  o.grid.x_min = cfg.get<double>("cv.grid.x_min", o.grid.x_min);
  o.grid.x_max = cfg.get<double>("cv.grid.x_max", o.grid.x_max);
  if (!(o.grid.x_min < o.grid.x_max))
  {
    cfg.fail("cv.grid.x_max", "range is degenerate, need x_min < x_max");
  }
  o.grid.intervals = cfg.count("cv.grid.intervals", o.grid.intervals);
  o.grid_t_steps = cfg.get<std::size_t>("cv.grid_t_steps", 0);
  return o;
}

std::vector<ParamVec> cv_test(const RunContext &ctx, const DumbbellModel &model)
{
  const auto [lo, hi] = cv_box(*ctx.config, model.param_dim());
  return sample_box(ctx.config->count("cv.test_size", 200), lo, hi, derive_seed(ctx.seed, kTestStream, 0));
}

CVBasis load_cv(RunContext &ctx, const DumbbellModel &model)
{
  CVBasis basis = cv_basis_from_json(ctx.load("cv_basis.json", "cv_basis"));
  const CVGreedyOptions o = cv_options(ctx);
  if (basis.steps != o.steps || basis.kind != o.kind || (!basis.selected.empty() && basis.selected[0].size() != model.param_dim()))
  {
    throw ArtifactError("cv_basis.json does not match the sde/cv settings of the config; rerun 'cv offline'");
  }
  return basis;
}

void cv_offline(RunContext &ctx)
{
  require_problem(ctx, {"fene_dumbbell"});
  const Config &cfg = *ctx.config;
  const auto model = cv_model(cfg);
  const CVGreedyOptions o = cv_options(ctx);
  if (o.kind == CVKind::Alg2 && o.alg2_control == Alg2Control::Kolmogorov && model->dimension() != 1)
  {
    cfg.fail("cv.alg2_control", "the Kolmogorov grid solver is one-dimensional; use hookean_exact for d = 2");
  }
  const auto [lo, hi] = cv_box(cfg, model->param_dim());
  const auto trial = sample_box(cfg.count("cv.trial_size", 100), lo, hi, derive_seed(ctx.seed, kTrialStream, 0));
  const CVBasis basis = greedy_offline_cv(*model, trial, o);
  ctx.save("cv_basis.json", "cv_basis", cv_basis_to_json(basis));
  Csv csv(indexed_header({"step", "max_trial_error"}, "lambda_", model->param_dim()));
  for (std::size_t i = 0; i < basis.size(); i++)
  {
    csv.row(i + 1, i < basis.trial_history.size() ? basis.trial_history[i] : NAN, basis.selected[i]);
  }
  ctx.write("cv_greedy.csv", csv.str());
  *ctx.out << "cv offline: " << to_string(basis.kind) << ", N = " << basis.size() << ", trial " << trial.size()
           << ", m_small " << basis.m_small << "\n";
}

void cv_online(RunContext &ctx)
{
  require_problem(ctx, {"fene_dumbbell"});
  const Config &cfg = *ctx.config;
  const auto model = cv_model(cfg);
  const CVBasis basis = load_cv(ctx, *model);
  const auto test = cv_test(ctx, *model);
  const auto ns = basis_sizes(cfg, "cv.online_ns", basis.size());
  const std::size_t m = cfg.count("cv.m_online", basis.m_small);
  const SeededIncrements src(m, basis.steps, model->dimension(), model->horizon / basis.steps,
                             derive_seed(ctx.seed, kOnlineStream, 0));
  const CVOnlineContext online = prepare_online(basis, *model, src);
  if (cfg.get<bool>("cv.write_increments", false))
  {
    ctx.write_binary("cv_online_increments.bin", online.increments);
  }
  Csv csv(indexed_header({"index", "N", "mean", "variance", "raw_mean", "raw_variance", "ratio", "clt_halfwidth",
                          "raw_clt_halfwidth", "grid_outside"},
                         "lambda_", model->param_dim()));
  double log_sum = 0.0;
  for (std::size_t j = 0; j < test.size(); j++)
  {
    for (std::size_t n : ns)
    {
      const CVEstimate e = online_estimate(basis, *model, test[j], online, n);
      csv.row(j, n, e.mean, e.variance, e.raw_mean, e.raw_variance, e.ratio, e.clt_halfwidth, e.raw_clt_halfwidth,
              e.grid_outside, test[j]);
      if (n == ns.back())
      {
        log_sum += std::log(e.ratio);
      }
    }
  }
  ctx.write("cv_online.csv", csv.str());
  *ctx.out << "cv online: " << test.size() << " parameters on " << m << " shared paths, geometric-mean variance ratio "
           << std::exp(log_sum / test.size()) << " at N = " << ns.back() << "\n";
}

void cv_sweep_cmd(RunContext &ctx)
{
  require_problem(ctx, {"fene_dumbbell"});
  const Config &cfg = *ctx.config;
  const auto model = cv_model(cfg);
  const CVBasis basis = load_cv(ctx, *model);
  const auto test = cv_test(ctx, *model);
  std::vector<std::size_t> ns;
  if (cfg.has("cv.sweep_ns"))
  {
    ns = basis_sizes(cfg, "cv.sweep_ns", basis.size());
  }
  else
  {
    for (std::size_t n : {1, 2, 5, 10, 15, 20})
    {
      if (n < basis.size())
      {
        ns.push_back(n);
      }
    }
    ns.push_back(basis.size());
  }
  const auto rows = cv_sweep(basis, *model, test, ns, cfg.count("cv.m_online", basis.m_small),
                             derive_seed(ctx.seed, kSweepStream, 0));
  Csv csv({"N", "min_ratio", "mean_ratio", "max_ratio", "geomean_ratio", "min_normalized", "mean_normalized",
           "max_normalized", "mean_raw_normalized"});
  for (const auto &r : rows)
  {
    csv.row(r.n, r.min_ratio, r.mean_ratio, r.max_ratio, r.geomean_ratio, r.min_normalized, r.mean_normalized,
            r.max_normalized, r.mean_raw_normalized);
  }
  ctx.write("cv_sweep.csv", csv.str());
  *ctx.out << "cv sweep: " << test.size() << " test parameters\n";
  for (const auto &r : rows)
  {
    *ctx.out << "  N = " << r.n << "  variance ratio min " << r.min_ratio << "  geomean " << r.geomean_ratio
             << "  max " << r.max_ratio << "\n";
  }
}

//
// report
//

void report(RunContext &ctx)
{
  const std::string p = problem_of(*ctx.config);
  std::size_t tables = 0;
  if (p != "fene_dumbbell" && fs::exists(ctx.in_dir / "reduced_basis.json"))
  {
    const ReducedBasis rb = load_rb(ctx);
    Csv csv({"N", "max_output_bound", "reduction"});
    *ctx.out << "reduced basis greedy convergence\n  N  max output bound  reduction\n";
    for (std::size_t i = 0; i < rb.greedy_history.size(); i++)
    {
      const double red = rb.greedy_history[0] / rb.greedy_history[i];
      csv.row(i + 1, rb.greedy_history[i], red);
      char line[96];
      std::snprintf(line, sizeof line, "  %-2zu %17.6e %10.3e\n", i + 1, rb.greedy_history[i], red);
      *ctx.out << line;
    }
    ctx.write("report_rb.csv", csv.str());
    tables++;
  }
  if (p == "fene_dumbbell" && fs::exists(ctx.in_dir / "cv_basis.json"))
  {
    const CVBasis basis = cv_basis_from_json(ctx.load("cv_basis.json", "cv_basis"));
    Csv csv({"step", "max_trial_error"});
    *ctx.out << "control-variate greedy (" << to_string(basis.kind) << ")\n  step  max trial error\n";
    for (std::size_t i = 0; i < basis.trial_history.size(); i++)
    {
      csv.row(i + 1, basis.trial_history[i]);
      char line[64];
      std::snprintf(line, sizeof line, "  %-4zu %15.6e\n", i + 1, basis.trial_history[i]);
      *ctx.out << line;
    }
    ctx.write("report_cv.csv", csv.str());
    tables++;
  }
  if (tables == 0)
  {
    throw ArtifactError("no artifacts to report in " + ctx.in_dir.string());
  }
}

using Handler = std::function<void(RunContext &)>;

const std::map<std::string, Handler> &handlers()
{
  static const std::map<std::string, Handler> h = {
      {"rb offline", rb_offline}, {"rb online", rb_online}, {"rb effectivity", rb_effectivity},
      {"kl build", kl_build},     {"uq run", uq_run},       {"cv offline", cv_offline},
      {"cv online", cv_online},   {"cv sweep", cv_sweep_cmd}, {"report", report}};
  return h;
}

std::string manifest_name(const std::string &command)
{
  std::string s = "manifest_" + command + ".json";
  std::replace(s.begin(), s.end(), ' ', '_');
  return s;
}

// Runs one subcommand and writes its manifest. Returns the manifest.
Json execute(const std::string &command, const Config &cfg, const std::optional<fs::path> &in_dir,
             const std::optional<fs::path> &out_dir, std::ostream &out)
{
  validate_config(cfg);
  RunContext ctx;
  ctx.command = command;
  ctx.config = &cfg;
  ctx.seed = cfg.get<std::uint64_t>("seed", 0);
  ctx.out_dir = fs::absolute(out_dir.value_or(fs::path(cfg.get<std::string>("output_dir", "out"))));
  ctx.in_dir = in_dir ? fs::absolute(*in_dir) : ctx.out_dir;
  ctx.out = &out;
  std::error_code ec;
  fs::create_directories(ctx.out_dir, ec);
  if (ec)
  {
    throw ArtifactError("cannot create output directory " + ctx.out_dir.string() + ": " + ec.message());
  }
  handlers().at(command)(ctx);

  Json manifest{{"format", kManifestFormat},
                {"schema_version", kManifestVersion},
                {"artifact_schema_version", kArtifactSchemaVersion},
                {"command", command},
                {"config", cfg.root()},
                {"config_hash", hex64(cfg.hash())},
                {"seed", ctx.seed},
                {"threads", thread_count()},
                {"input_dir", ctx.in_dir.string()},
                {"output_dir", ctx.out_dir.string()},
                {"inputs", ctx.inputs},
                {"outputs", ctx.outputs}};
  write_text_file((ctx.out_dir / manifest_name(command)).string(), manifest.dump(2) + "\n");
  return manifest;
}

// Re-runs the command recorded in a manifest and compares every output hash.
int replay(const std::string &path, const std::optional<fs::path> &out_dir, std::ostream &out, std::ostream &err)
{
  const Json m = read_json_file(path);
  if (!m.is_object() || m.value("format", "") != kManifestFormat)
  {
    throw ArtifactError(path + " is not a crb manifest");
  }
  if (m.value("schema_version", -1) != kManifestVersion || m.value("artifact_schema_version", -1) != kArtifactSchemaVersion)
  {
    throw ArtifactError(path + " was written by an incompatible schema version");
  }
  const Json expected = m.at("outputs");
  const fs::path in_dir = m.at("input_dir").get<std::string>();
  for (const auto &input : m.at("inputs"))
  {
    const std::string file = (in_dir / input.at("name").get<std::string>()).string();
    if (!fs::exists(file) || file_hash(file) != input.at("hash").get<std::string>())
    {
      throw ArtifactError("replay input " + file + " is missing or differs from the recorded run");
    }
  }
  const Config cfg(m.at("config"), m.at("config").dump(2));
  if (hex64(cfg.hash()) != m.at("config_hash").get<std::string>())
  {
    throw ArtifactError(path + ": embedded config does not match its hash");
  }
  const fs::path target = out_dir.value_or(fs::path(m.at("output_dir").get<std::string>()));
  const Json fresh = execute(m.at("command").get<std::string>(), cfg, in_dir, target, out);
  std::map<std::string, std::string> now;
  for (const auto &o : fresh.at("outputs"))
  {
    now[o.at("name")] = o.at("hash");
  }
  std::size_t differing = 0;
  for (const auto &o : expected)
  {
    const std::string name = o.at("name");
    const bool same = now.count(name) && now[name] == o.at("hash").get<std::string>();
    out << "  " << (same ? "identical " : "DIFFERS   ") << name << "\n";
    differing += same ? 0 : 1;
  }
  if (differing > 0 || fresh.at("outputs").size() != expected.size())
  {
    err << "replay: " << differing << " output(s) differ from the recorded run\n";
    return static_cast<int>(ErrorKind::Artifact);
  }
  out << "replay: all " << expected.size() << " outputs reproduced bitwise\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string> &args, std::ostream &out, std::ostream &err)
{
  CLI::App app("Certified reduced basis and control-variate toolkit", "crb");
  app.require_subcommand(1);
  unsigned threads = 0;
  std::string out_dir;
  app.add_option("--threads", threads, "worker threads (default: hardware concurrency)")->check(CLI::NonNegativeNumber);
  app.add_option("--out", out_dir, "output directory (overrides output_dir in the config)");

  std::string config_path;
  std::string selected;
  auto add_leaf = [&](CLI::App *parent, const std::string &name, const std::string &full, const std::string &help) {
    auto *sub = parent->add_subcommand(name, help);
    sub->add_option("config", config_path, "JSON run configuration")->required();
    sub->callback([&selected, full] { selected = full; });
  };
  auto *rb = app.add_subcommand("rb", "reduced basis for the thermal block or heat sink");
  rb->require_subcommand(1);
  add_leaf(rb, "offline", "rb offline", "greedy offline stage, writes reduced_basis.json");
  add_leaf(rb, "online", "rb online", "reduced outputs and bounds on the test sample");
  add_leaf(rb, "effectivity", "rb effectivity", "truth versus reduced outputs with effectivities");
  auto *kl = app.add_subcommand("kl", "Karhunen-Loeve expansion of the Biot field");
  kl->require_subcommand(1);
  add_leaf(kl, "build", "kl build", "writes kl_basis.json and kl_spectrum.csv");
  auto *uq = app.add_subcommand("uq", "Monte Carlo over the random Biot field");
  uq->require_subcommand(1);
  add_leaf(uq, "run", "uq run", "writes uq.csv (N, K, E_M, V_M, delta_E, delta_V, clt_halfwidth)");
  auto *cv = app.add_subcommand("cv", "reduced-basis control variates for dumbbell SDEs");
  cv->require_subcommand(1);
  add_leaf(cv, "offline", "cv offline", "greedy offline stage, writes cv_basis.json");
  add_leaf(cv, "online", "cv online", "control-variate estimates on the test sample");
  add_leaf(cv, "sweep", "cv sweep", "variance-ratio statistics versus N");
  add_leaf(&app, "report", "report", "convergence tables from the artifacts of a run");
  std::string manifest_path;
  auto *rp = app.add_subcommand("replay", "re-run a manifest and compare outputs bitwise");
  rp->add_option("manifest", manifest_path, "manifest JSON written by a previous run")->required();
  rp->callback([&selected] { selected = "replay"; });

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try
  {
    app.parse(reversed);
  }
  catch (const CLI::CallForHelp &)
  {
    out << app.help();
    return 0;
  }
  catch (const CLI::ParseError &e)
  {
    err << "usage error: " << e.what() << "\n" << app.help();
    return static_cast<int>(ErrorKind::Config);
  }

  try
  {
    set_thread_count(threads);
    const std::optional<fs::path> out_override = out_dir.empty() ? std::nullopt : std::optional<fs::path>(out_dir);
    if (selected == "replay")
    {
      return replay(manifest_path, out_override, out, err);
    }
    const Config cfg = Config::from_file(config_path);
    execute(selected, cfg, std::nullopt, out_override, out);
    return 0;
  }
  catch (const Error &e)
  {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(e.kind());
  }
  catch (const std::exception &e)
  {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::Numerical);
  }
}

}  // namespace crb
