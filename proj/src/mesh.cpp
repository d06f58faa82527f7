// SPDX-License-Identifier: Apache-2.0

#include "crb/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "crb/common.hpp"

namespace crb
{

std::string to_string(BoundaryLabel label)
{
  switch (label)
  {
    case BoundaryLabel::Dirichlet:
      return "DIRICHLET";
    case BoundaryLabel::GammaN:
      return "GAMMA_N";
    case BoundaryLabel::GammaR:
      return "GAMMA_R";
    case BoundaryLabel::GammaB:
      return "GAMMA_B";
  }
  return "?";
}

BoundaryLabel parse_boundary_label(const std::string &s)
{
  for (auto l : {BoundaryLabel::Dirichlet, BoundaryLabel::GammaN, BoundaryLabel::GammaR,
                 BoundaryLabel::GammaB})
  {
    if (to_string(l) == s)
    {
      return l;
    }
  }
  throw ConfigError("unknown boundary label '" + s + "'");
}

std::string to_string(Geometry g)
{
  return g == Geometry::TSink ? "T_SINK" : "UNIT_SQUARE_DIRICHLET";
}

Geometry parse_geometry(const std::string &s)
{
  if (s == "UNIT_SQUARE_DIRICHLET")
  {
    return Geometry::UnitSquareDirichlet;
  }
  if (s == "T_SINK")
  {
    return Geometry::TSink;
  }
  throw ConfigError("unknown geometry tag '" + s + "'");
}

double Mesh::signed_area(std::size_t t) const
{
  const auto &a = nodes[triangles[t][0]];
  const auto &b = nodes[triangles[t][1]];
  const auto &c = nodes[triangles[t][2]];
  return 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]));
}

double Mesh::total_area() const
{
  std::vector<double> areas(triangles.size());
  for (std::size_t t = 0; t < triangles.size(); t++)
  {
    areas[t] = signed_area(t);
  }
  return pairwise_sum(areas);
}

bool Mesh::has_label(BoundaryLabel label) const
{
  return std::any_of(boundary_edges.begin(), boundary_edges.end(),
                     [label](const BoundaryEdge &e) { return e.label == label; });
}

namespace
{

// Builds a mesh from the cells of a structured grid with origin (x0, y0) and spacing s.
// inside(i, j) selects cell [i, i+1] x [j, j+1] in grid units.
template <typename Inside, typename Region>
Mesh grid_mesh(int nx, int ny, double x0, double y0, double s, Inside inside, Region region)
{
  Mesh mesh;
  mesh.spacing = s;
  std::vector<int> id((nx + 1) * (ny + 1), -1);
  auto node = [&](int i, int j)
  {
    int &k = id[j * (nx + 1) + i];
    if (k < 0)
    {
      k = static_cast<int>(mesh.nodes.size());
      mesh.nodes.push_back({x0 + i * s, y0 + j * s});
    }
    return k;
  };
  // Row-major node numbering: touch nodes in grid order first so numbering does not
  // depend on cell traversal.
  for (int j = 0; j <= ny; j++)
  {
    for (int i = 0; i <= nx; i++)
    {
      bool used = false;
      for (int dj = -1; dj <= 0 && !used; dj++)
      {
        for (int di = -1; di <= 0 && !used; di++)
        {
          const int ci = i + di, cj = j + dj;
          used = ci >= 0 && cj >= 0 && ci < nx && cj < ny && inside(ci, cj);
        }
      }
      if (used)
      {
        node(i, j);
      }
    }
  }
  for (int j = 0; j < ny; j++)
  {
    for (int i = 0; i < nx; i++)
    {
      if (!inside(i, j))
      {
        continue;
      }
      const int a = node(i, j), b = node(i + 1, j), c = node(i + 1, j + 1), d = node(i, j + 1);
      mesh.triangles.push_back({a, b, c});
      mesh.triangles.push_back({a, c, d});
      mesh.regions.push_back(region(i, j));
      mesh.regions.push_back(region(i, j));
    }
  }
  return mesh;
}

// Edges used by exactly one triangle, in order of first appearance.
std::vector<std::array<int, 2>> find_boundary_edges(const Mesh &mesh)
{
  std::map<std::pair<int, int>, std::pair<int, std::array<int, 2>>> count;
  std::vector<std::pair<int, int>> order;
  for (const auto &tri : mesh.triangles)
  {
    for (int k = 0; k < 3; k++)
    {
      const int a = tri[k], b = tri[(k + 1) % 3];
      const auto key = std::minmax(a, b);
      auto [it, inserted] = count.try_emplace({key.first, key.second}, 0, std::array<int, 2>{a, b});
      if (inserted)
      {
        order.push_back(it->first);
      }
      it->second.first++;
    }
  }
  std::vector<std::array<int, 2>> edges;
  for (const auto &key : order)
  {
    const auto &entry = count.at(key);
    if (entry.first == 1)
    {
      edges.push_back(entry.second);
    }
  }
  return edges;
}

}  // namespace

Mesh build_mesh(Geometry geometry, double h)
{
  if (!(h > 0.0) || !std::isfinite(h))
  {
    std::ostringstream msg;
    msg << "mesh size h must be positive, got " << h;
    throw ConfigError(msg.str());
  }

  Mesh mesh;
  if (geometry == Geometry::UnitSquareDirichlet)
  {
    // Even cell count so the block interface x = y = 1/2 is a grid line.
    int n = static_cast<int>(std::ceil(1.0 / h - 1e-12));
    n += n % 2;
    const double s = 1.0 / n;
    mesh = grid_mesh(
        n, n, 0.0, 0.0, s, [](int, int) { return true; },
        [n](int i, int j) { return (2 * i < n && 2 * j < n) ? 1 : 0; });
    for (const auto &e : find_boundary_edges(mesh))
    {
      mesh.boundary_edges.push_back({e, BoundaryLabel::Dirichlet});
    }
  }
  else
  {
    // Spreader (-1,1)x(0,1), fin (-1/4,1/4)x(1,5). Grid unit s = 1/(4k).
    const int k = static_cast<int>(std::ceil(0.25 / h - 1e-12));
    const double s = 0.25 / k;
    const int nx = 8 * k, ny = 20 * k;
    const int spreader_rows = 4 * k, fin_lo = 3 * k, fin_hi = 5 * k;
    mesh = grid_mesh(
        nx, ny, -1.0, 0.0, s,
        [=](int i, int j) { return j < spreader_rows || (i >= fin_lo && i < fin_hi); },
        [=](int, int j) { return j < spreader_rows ? 1 : 0; });
    const double tol = 1e-9;
    for (const auto &e : find_boundary_edges(mesh))
    {
      const auto &a = mesh.nodes[e[0]];
      const auto &b = mesh.nodes[e[1]];
      const double mx = 0.5 * (a[0] + b[0]), my = 0.5 * (a[1] + b[1]);
      BoundaryLabel label = BoundaryLabel::GammaN;
      if (std::abs(my) < tol)
      {
        label = BoundaryLabel::GammaR;
      }
      else if ((std::abs(std::abs(mx) - 0.25) < tol && my > 1.0) || std::abs(my - 5.0) < tol)
      {
        label = BoundaryLabel::GammaB;
      }
      mesh.boundary_edges.push_back({e, label});
    }
  }
  mesh.geometry = geometry;
  return mesh;
}

void validate_mesh(const Mesh &mesh)
{
  if (mesh.regions.size() != mesh.triangles.size())
  {
    throw ConfigError("mesh: region tag count differs from triangle count");
  }
  for (std::size_t t = 0; t < mesh.triangles.size(); t++)
  {
    for (int v : mesh.triangles[t])
    {
      if (v < 0 || static_cast<std::size_t>(v) >= mesh.nodes.size())
      {
        throw ConfigError("mesh: triangle " + std::to_string(t) + " references a missing node");
      }
    }
    if (!(mesh.signed_area(t) > 0.0))
    {
      throw ConfigError("mesh: triangle " + std::to_string(t) + " has non-positive area");
    }
  }
  std::map<std::pair<int, int>, int> uses;
  for (const auto &tri : mesh.triangles)
  {
    for (int k = 0; k < 3; k++)
    {
      const auto key = std::minmax(tri[k], tri[(k + 1) % 3]);
      uses[{key.first, key.second}]++;
    }
  }
  std::map<std::pair<int, int>, int> seen;
  for (const auto &e : mesh.boundary_edges)
  {
    const auto key = std::minmax(e.nodes[0], e.nodes[1]);
    auto it = uses.find({key.first, key.second});
    if (it == uses.end() || it->second != 1)
    {
      throw ConfigError("mesh: boundary edge (" + std::to_string(e.nodes[0]) + "," +
                        std::to_string(e.nodes[1]) + ") does not belong to exactly one triangle");
    }
    if (seen[{key.first, key.second}]++ > 0)
    {
      throw ConfigError("mesh: boundary edge listed twice");
    }
  }
  std::size_t boundary_count = 0;
  for (const auto &[key, n] : uses)
  {
    boundary_count += (n == 1);
  }
  if (boundary_count != mesh.boundary_edges.size())
  {
    throw ConfigError("mesh: boundary labels do not cover the boundary edge set");
  }
}

double BoundaryQuadrature::measure() const
{
  return pairwise_sum(weights);
}

BoundaryQuadrature boundary_quadrature(const Mesh &mesh, BoundaryLabel label)
{
  std::vector<int> selected;
  for (std::size_t e = 0; e < mesh.boundary_edges.size(); e++)
  {
    if (mesh.boundary_edges[e].label == label)
    {
      selected.push_back(static_cast<int>(e));
    }
  }

  // Order the selected edges into chains following their orientation.
  std::map<int, int> by_tail;
  std::map<int, int> head_count;
  for (int e : selected)
  {
    by_tail[mesh.boundary_edges[e].nodes[0]] = e;
    head_count[mesh.boundary_edges[e].nodes[1]]++;
  }
  std::vector<int> ordered;
  std::vector<bool> used(mesh.boundary_edges.size(), false);
  auto walk = [&](int e)
  {
    while (e >= 0 && !used[e])
    {
      used[e] = true;
      ordered.push_back(e);
      auto it = by_tail.find(mesh.boundary_edges[e].nodes[1]);
      e = it == by_tail.end() ? -1 : it->second;
    }
  };
  for (int e : selected)
  {
    if (!used[e] && head_count[mesh.boundary_edges[e].nodes[0]] == 0)
    {
      walk(e);
    }
  }
  for (int e : selected)
  {
    if (!used[e])
    {
      walk(e);
    }
  }

  // 3-point Gauss-Legendre on [0,1]; exact for polynomials of degree 5.
  const double r = std::sqrt(0.6);
  const std::array<double, 3> xi = {0.5 * (1.0 - r), 0.5, 0.5 * (1.0 + r)};
  const std::array<double, 3> wi = {5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0};

  BoundaryQuadrature q;
  double arc0 = 0.0;
  for (int e : ordered)
  {
    const auto &edge = mesh.boundary_edges[e];
    const auto &a = mesh.nodes[edge.nodes[0]];
    const auto &b = mesh.nodes[edge.nodes[1]];
    const double len = std::hypot(b[0] - a[0], b[1] - a[1]);
    for (int k = 0; k < 3; k++)
    {
      q.points.push_back({a[0] + xi[k] * (b[0] - a[0]), a[1] + xi[k] * (b[1] - a[1])});
      q.weights.push_back(wi[k] * len);
      q.arc.push_back(arc0 + xi[k] * len);
      q.edge.push_back(e);
      q.local.push_back(xi[k]);
    }
    arc0 += len;
  }
  return q;
}

}  // namespace crb
