// SPDX-License-Identifier: Apache-2.0

#ifndef CRB_MESH_HPP
#define CRB_MESH_HPP

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace crb
{

enum class BoundaryLabel
{
  Dirichlet,
  GammaN,  // homogeneous Neumann
  GammaR,  // unit heat flux (load)
  GammaB   // Robin exchange with the random Biot field
};

enum class Geometry
{
  UnitSquareDirichlet,
  TSink
};

std::string to_string(BoundaryLabel label);
BoundaryLabel parse_boundary_label(const std::string &s);
std::string to_string(Geometry g);
Geometry parse_geometry(const std::string &s);

struct BoundaryEdge
{
  // Oriented counter-clockwise with respect to the owning triangle, so the outward normal
  // points to the right of nodes[0] -> nodes[1].
  std::array<int, 2> nodes;
  BoundaryLabel label;
};

// Conforming P1 triangulation of a polygonal domain.
//
// Region tags: UNIT_SQUARE_DIRICHLET uses 1 for the block (0,1/2)^2 and 0 elsewhere;
// T_SINK uses 0 for the fin and 1 for the spreader.
struct Mesh
{
  Geometry geometry = Geometry::UnitSquareDirichlet;
  double spacing = 0.0;
  std::vector<std::array<double, 2>> nodes;
  std::vector<std::array<int, 3>> triangles;
  std::vector<int> regions;
  std::vector<BoundaryEdge> boundary_edges;

  std::size_t num_nodes() const { return nodes.size(); }
  std::size_t num_triangles() const { return triangles.size(); }

  double signed_area(std::size_t t) const;
  double total_area() const;
  bool has_label(BoundaryLabel label) const;
};

// Deterministic structured generator. The grid spacing is the largest value not above h
// that aligns with every interface of the geometry.
Mesh build_mesh(Geometry geometry, double h);

// Throws ConfigError naming the first violated invariant.
void validate_mesh(const Mesh &mesh);

// Edgewise 3-point Gauss-Legendre rule on all boundary edges carrying `label`, with
// points ordered along the boundary chain and an arc-length coordinate per point.
struct BoundaryQuadrature
{
  std::vector<std::array<double, 2>> points;
  std::vector<double> weights;
  std::vector<double> arc;
  std::vector<int> edge;      // index into Mesh::boundary_edges
  std::vector<double> local;  // position along the edge in [0,1]

  std::size_t size() const { return points.size(); }
  double measure() const;
};

BoundaryQuadrature boundary_quadrature(const Mesh &mesh, BoundaryLabel label);

}  // namespace crb

#endif  // CRB_MESH_HPP
