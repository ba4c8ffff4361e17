#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cbcflow/fem.hpp"

namespace cbcflow {

// Outflow treatment on the OutflowOne edges:
//   Cbc: sigma(u,p) n = 1/2 (u tensor u) n   (convective condition)
//   Dn:  sigma(u,p) n = 0                    (do-nothing)
//   Ddn: sigma(u,p) n = 1/2 (u.n)_- u        (directional do-nothing)
enum class OutflowKind { Cbc, Dn, Ddn };

OutflowKind outflow_kind_from_string(const std::string& s);
std::string to_string(OutflowKind kind);

// Inflow data as a function of position and time.
using InflowProfile = std::function<Vec2(const Vec2&, double)>;

// Named profiles: "poiseuille_half" ((1/2-y)(1/2+y), 0),
// "poiseuille_unit" ((1-y)(1+y), 0), "zero".
InflowProfile inflow_profile_by_name(const std::string& name);

struct BoundarySpec {
    OutflowKind outflow_kind = OutflowKind::Cbc;
    InflowProfile inflow_profile;  // may be empty when the mesh has no inflow
};

// Velocity Dirichlet constraints: zero on walls, interpolated profile on the
// inflow nodes. `dofs` is sorted and duplicate free.
struct DirichletConstraints {
    std::vector<int> dofs;
    std::vector<double> values;

    DirichletConstraints zeroed() const;  // same dofs, all values zero
};

DirichletConstraints dirichlet_constraints(const FESystem& fes, const BoundarySpec& spec,
                                           double t);

// Eliminates constrained DOFs from an n x n triplet system in place:
// constrained columns are folded into the rhs, constrained rows replaced by
// identity rows with rhs equal to the prescribed value.
void apply_dirichlet(const DirichletConstraints& bc, std::vector<Triplet>& triplets,
                     std::span<double> rhs, int n);

struct StokesResult {
    std::vector<double> u;
    std::vector<double> p;
};

// Solves nu a0(u,v) + b(v,p) = <rhs_u, v>, b(u,q) = 0 under the given
// velocity constraints (natural condition sigma n = 0 on unconstrained
// boundary). The pressure is pinned at vertex 0 when the mesh has no
// OutflowOne edges; an incompatible constrained flux then surfaces as a
// ConfigError.
StokesResult solve_stokes(const FESystem& fes, const DirichletConstraints& bc, double nu,
                          std::span<const double> rhs_u);

// Divergence-free extension of the inflow data: velocity of a Stokes solve
// (nu=1, f=0) with the profile as Dirichlet data. Used to shift the
// non-homogeneous problem to one with zero boundary data.
struct Lifting {
    std::vector<double> w0;     // velocity coefficients, sized n_u
    double div_residual = 0.0;  // ||B w0||
    double net_flux = 0.0;      // integral of u_in . n over the inflow
};

Lifting build_lifting(const FESystem& fes, const InflowProfile& u_in, double t);

// Shifted forcing functional <Phi, v> = <f, v> - nu a0(w0, v) - a1(w0; w0, v);
// gamma1_weight forwards to the convection form's outflow correction.
std::vector<double> assemble_phi(const FESystem& fes, const VectorField& f, const Lifting& lifting,
                                 double nu, double gamma1_weight = 1.0);

}  // namespace cbcflow
