#pragma once

#include <array>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cbcflow/core.hpp"

namespace cbcflow {

// Boundary role of an edge. WallH carries homogeneous Dirichlet data,
// InflowN carries an inflow profile, OutflowOne is the open outflow part.
enum class BoundaryTag { WallH, InflowN, OutflowOne };

std::string to_string(BoundaryTag tag);
BoundaryTag boundary_tag_from_string(const std::string& s);

struct BoundaryEdge {
    int a = -1;  // directed a -> b, counterclockwise in the owning triangle
    int b = -1;
    BoundaryTag tag = BoundaryTag::WallH;
};

// Result of point location: owning triangle plus barycentric coordinates
// (clamped to [0,1], summing to 1).
struct MeshLocation {
    int tri = -1;
    std::array<double, 3> bary{};
};

// Conforming triangle mesh with tagged boundary. Connectivity tables are
// derived once in finalize(); mutating the raw arrays afterwards is not
// supported.
class Mesh {
public:
    std::vector<Vec2> nodes;
    std::vector<std::array<int, 3>> tris;      // CCW vertex indices
    std::vector<BoundaryEdge> boundary_edges;

    // Derived connectivity, valid after finalize().
    std::vector<std::array<int, 2>> edges;          // canonical (min,max) pairs
    std::vector<std::array<int, 3>> tri_edges;      // edge k is opposite vertex k
    std::vector<std::array<int, 3>> tri_neighbors;  // across edge k; -1 on boundary
    std::vector<int> boundary_edge_edge;            // global edge index per boundary edge
    std::vector<int> boundary_edge_tri;             // owning triangle per boundary edge
    std::vector<std::vector<int>> node_tris;        // triangles touching each node

    int n_nodes() const { return static_cast<int>(nodes.size()); }
    int n_tris() const { return static_cast<int>(tris.size()); }
    int n_edges() const { return static_cast<int>(edges.size()); }

    // Builds derived tables and validates: positive triangle areas, conforming
    // connectivity (each edge in at most two triangles, no hanging nodes via
    // uncovered rim edges), and boundary edges exactly covering the rim.
    // Boundary edges are reoriented to match the owning triangle's CCW order.
    // Throws MeshError on violation.
    void finalize();

    double tri_area(int t) const;
    double total_area() const;
    double min_angle_deg() const;

    Vec2 tri_centroid(int t) const;
    Vec2 boundary_edge_normal(int be) const;  // unit outward normal
    double boundary_edge_length(int be) const;

    // Point location. locate() walks from the hint triangle (or 0) and falls
    // back to an exhaustive scan; locate_exhaustive() scans triangles in index
    // order. Both resolve ties (points on shared edges/vertices) to the lowest
    // containing triangle index and return barycentric coordinates in [0,1]
    // summing to 1. Returns nullopt for points outside the mesh.
    std::optional<MeshLocation> locate(const Vec2& p, int hint = -1) const;
    std::optional<MeshLocation> locate_exhaustive(const Vec2& p) const;

    // Closest point on the boundary (over all boundary edges) to p.
    Vec2 project_to_boundary(const Vec2& p) const;

private:
    bool bary_in_tri(int t, const Vec2& p, std::array<double, 3>& bary) const;
    std::optional<MeshLocation> canonical_location(int t, const Vec2& p) const;
};

// Generators. All produce finalized meshes with CCW triangles.

// Unit square [0,1]^2, n x n cells, each split along the SW-NE diagonal.
// Left wall (x=0) is OutflowOne, the other three walls WallH.
Mesh generate_unit_square(int n);

// Symmetric Y-shaped channel: inlet rectangle [0,5] x [-1/2,1/2] (inlet at
// x=0 tagged InflowN), junction triangle, and two straight branches of width
// sqrt(2)/2 whose ends lie on y = +/-(x - 7.5), 6 <= x <= 6.5 (OutflowOne).
// Everything else is WallH. h is the target edge length.
Mesh generate_bifurcation(double h);

// Rectangle [-1.5,6] x [-1,1] with a circular hole of radius 0.15 at the
// origin. Inlet x=-1.5 tagged InflowN, outlet x=6 OutflowOne, top/bottom and
// the circle WallH. h is the target edge length; the lattice pitch is snapped
// to 0.5/k <= h so the outer rectangle is met exactly.
Mesh generate_cylinder_channel(double h);

// ASCII mesh I/O ("cbcflow-mesh 1" format). load_mesh throws MeshError with
// a line number on parse errors and re-validates via finalize().
Mesh load_mesh(std::istream& in);
Mesh load_mesh_file(const std::string& path);
void save_mesh(const Mesh& mesh, std::ostream& out);
void save_mesh_file(const Mesh& mesh, const std::string& path);

}  // namespace cbcflow
