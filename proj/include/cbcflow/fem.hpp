#pragma once

#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "cbcflow/linalg.hpp"
#include "cbcflow/mesh.hpp"
#include "cbcflow/quadrature.hpp"

namespace cbcflow {

using VectorField = std::function<Vec2(const Vec2&)>;

// Taylor-Hood velocity/pressure pair: P2 velocity (scalar nodes = mesh
// vertices followed by edge midpoints, two interleaved components), P1
// pressure on the vertices.
//
// DOF layout: velocity dof = 2*snode + component; pressure dof = vertex id.
class FESystem {
public:
    explicit FESystem(const Mesh& mesh);

    const Mesh& mesh() const { return *mesh_; }

    int n_scalar() const { return n_scalar_; }  // P2 scalar nodes
    int n_u() const { return 2 * n_scalar_; }
    int n_p() const { return mesh_->n_nodes(); }

    static int u_dof(int snode, int comp) { return 2 * snode + comp; }

    // Local P2 node `local` of triangle t: 0..2 vertices, 3..5 edge midpoints
    // (midpoint k sits on the edge opposite vertex k).
    int tri_snode(int t, int local) const;
    Vec2 snode_pos(int snode) const;

    // Scalar nodes lying on edges of the given tag (vertices and midpoints).
    const std::vector<int>& snodes_on(BoundaryTag tag) const;

    // Homogeneous-Dirichlet velocity nodes: all of WallH. Inflow nodes are
    // the InflowN nodes not already on a wall (corners belong to the wall).
    const std::vector<int>& wall_snodes() const { return wall_snodes_; }
    const std::vector<int>& inflow_snodes() const { return inflow_snodes_; }

    // Boundary edge indices carrying the given tag.
    const std::vector<int>& edges_with_tag(BoundaryTag tag) const;

private:
    const Mesh* mesh_;
    int n_scalar_ = 0;
    std::vector<int> tag_snodes_[3];
    std::vector<int> tag_edges_[3];
    std::vector<int> wall_snodes_;
    std::vector<int> inflow_snodes_;
};

// P2/P1 basis values at a barycentric point of one triangle.
struct P2Basis {
    double n[6];
    Vec2 grad[6];  // physical gradients
};

P2Basis p2_basis(const Mesh& mesh, int t, double l0, double l1, double l2);

// Field evaluation at a located point.
Vec2 evaluate_velocity(const FESystem& fes, std::span<const double> u, const MeshLocation& loc);
Mat2 evaluate_velocity_gradient(const FESystem& fes, std::span<const double> u,
                                const MeshLocation& loc);  // (i,j) = d u_i / d x_j
double evaluate_pressure(const FESystem& fes, std::span<const double> p, const MeshLocation& loc);
double evaluate_scalar(const FESystem& fes, std::span<const double> s, const MeshLocation& loc);
Vec2 evaluate_scalar_gradient(const FESystem& fes, std::span<const double> s,
                              const MeshLocation& loc);

// Volume assemblies (quadrature exact for degree 6 unless noted).
SparseMatrix assemble_a0(const FESystem& fes);      // 2 int D(u):D(v), n_u x n_u
SparseMatrix assemble_mass(const FESystem& fes);    // int u.v, n_u x n_u
SparseMatrix assemble_p1_mass(const FESystem& fes); // int p q, n_p x n_p
SparseMatrix assemble_b(const FESystem& fes);       // b(u,q) = -int q div u, n_p x n_u
std::vector<double> assemble_load(const FESystem& fes, const VectorField& f, int degree = 6);

// Neumann-type boundary load: r[(i,c)] = int_{tag} g_c phi_i ds.
std::vector<double> assemble_boundary_load(const FESystem& fes, const VectorField& g,
                                           BoundaryTag tag, int degree = 6);

// Same with the unit outward normal passed to the integrand.
using BoundaryField = std::function<Vec2(const Vec2&, const Vec2&)>;
std::vector<double> assemble_boundary_load(const FESystem& fes, const BoundaryField& g,
                                           BoundaryTag tag, int degree = 6);

// Error norms against analytic fields (over-integrated by default).
double velocity_l2_error(const FESystem& fes, std::span<const double> u, const VectorField& exact,
                         int degree = 8);
double velocity_h1_semi_error(const FESystem& fes, std::span<const double> u,
                              const std::function<Mat2(const Vec2&)>& exact_grad, int degree = 8);
double pressure_l2_error(const FESystem& fes, std::span<const double> p,
                         const std::function<double(const Vec2&)>& exact, int degree = 8);

// Trilinear convection form with the outflow boundary correction:
//   a1(w;u,v) = int (w.grad u).v dx - 1/2 int_{Gamma1} (w.n)(u.v) ds,
// the boundary term scaled by gamma1_weight (1 = include, 0 = drop).
std::vector<double> assemble_a1_action(const FESystem& fes, std::span<const double> w,
                                       std::span<const double> u, double gamma1_weight);

// Exact slot linearizations of a1 at state u:
//   first:  dw -> a1(dw; u, .)    second: du -> a1(u; du, .)
struct A1Jacobians {
    SparseMatrix first;
    SparseMatrix second;
};
A1Jacobians assemble_a1_jacobians(const FESystem& fes, std::span<const double> u,
                                  double gamma1_weight);

// Convective-outflow boundary pieces on Gamma1 (positive sign convention:
// these are the forms +1/2 int (w.n)(u.v) ds; a1 subtracts them).
struct CbcBoundary {
    SparseMatrix first;           // dw -> 1/2 int (dw.n)(u.v)
    SparseMatrix second;          // du -> 1/2 int (u.n)(du.v)
    std::vector<double> action;   // v  -> 1/2 int (u.n)(u.v)
};
CbcBoundary assemble_cbc_boundary_jacobians(const FESystem& fes, std::span<const double> u);

// Two-state version of the action: v -> 1/2 int (w.n)(u.v) ds.
std::vector<double> assemble_cbc_boundary_action(const FESystem& fes, std::span<const double> w,
                                                 std::span<const double> u);

// Directional (sign-gated) outflow boundary operator, frozen at u_prev:
//   du -> -1/2 int_{Gamma1} (u_prev.n)_- (du.v) ds,  (s)_- = min(s,0).
SparseMatrix assemble_ddn_boundary(const FESystem& fes, std::span<const double> u_prev);

// Nonlinear directional action: v -> -1/2 int (u.n)_- (u.v) ds.
std::vector<double> assemble_ddn_boundary_action(const FESystem& fes, std::span<const double> u);

}  // namespace cbcflow
