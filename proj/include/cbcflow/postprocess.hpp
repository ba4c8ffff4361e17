#pragma once

#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "cbcflow/fem.hpp"
#include "cbcflow/nonlinear.hpp"

namespace cbcflow {

// Nonlinear outflow rate gamma(u) = int_tag (u.n)_+ u ds, (s)_+ = max(s, 0).
struct OutflowReport {
    Vec2 gamma;
    BoundaryTag tag = BoundaryTag::OutflowOne;
    // Per boundary edge share of gamma (boundary edge index, contribution).
    std::vector<std::pair<int, Vec2>> edge_contributions;
};

// Edge quadrature of order 6 on the P2 trace. Throws ConfigError when no
// boundary edge carries the tag.
OutflowReport nonlinear_outflow(const FESystem& fes, std::span<const double> u,
                                BoundaryTag tag = BoundaryTag::OutflowOne);

using ScalarField = std::function<double(const Vec2&)>;

// Scalar stream function psi with u ~ curl psi = (d psi/dy, -d psi/dx),
// solving int grad psi . grad phi = int u . (curl phi) for all phi vanishing
// on the Dirichlet part. Dirichlet values are imposed on every boundary node
// incident to a wall or inflow edge; the outflow part is natural.
struct StreamFunction {
    std::vector<double> psi;                        // P2 coefficients
    std::vector<std::pair<int, double>> dirichlet;  // imposed (snode, value)
    // Solved constants of closed wall loops (holes) whose level is not fixed
    // by the flux walk, one per loop in discovery order.
    std::vector<double> tied_constants;
};

// Dirichlet datum from the discrete flux: walking the boundary loop that
// contains the lexicographically smallest boundary vertex (anchor value 0),
// psi accumulates int u.n ds edge by edge (Simpson on the quadratic trace,
// exact). Wall loops not containing the anchor keep a single unknown
// constant that the solve determines. Throws ConfigError when the mesh has
// no wall or inflow edges (the level would be undetermined).
StreamFunction solve_stream_function(const FESystem& fes, std::span<const double> u);

// Same solve with an explicit Dirichlet datum evaluated at the node
// positions (manufactured tests); every wall/inflow node is constrained.
StreamFunction solve_stream_function(const FESystem& fes, std::span<const double> u,
                                     const ScalarField& g);

struct FieldNorms {
    double l2_u = 0.0;
    double v_norm = 0.0;        // sqrt(2 int D(u):D(u))
    double div_residual = 0.0;  // max over q_h of |b(u, q_h)| / ||q_h||
    double l2_p = 0.0;
};

FieldNorms field_norms(const FESystem& fes, const State& state);

}  // namespace cbcflow
