#pragma once

#include <string>
#include <vector>

#include "cbcflow/boundary.hpp"

namespace cbcflow {

struct State {
    std::vector<double> u;  // n_u velocity coefficients
    std::vector<double> p;  // n_p pressure coefficients
};

struct NewtonConfig {
    enum class Guess { Auto, Zero, Stokes, Continuation };

    int max_iters = 50;
    double abs_tol = 1e-10;
    double rel_tol = 1e-10;
    double damping = 1.0;  // step fraction in (0, 1]
    // Auto: zero start for nu >= 1/20, otherwise continuation in nu
    // (halving 1/nu from 20 up to the target, reusing each solution).
    Guess guess = Guess::Auto;
};

struct NewtonReport {
    std::vector<double> residual_history;  // one entry per iterate, head = initial guess
    int iterations = 0;                    // Newton steps taken
    bool converged = false;
    std::string divergence_reason;         // empty when converged
};

struct NewtonResult {
    State state;         // physical velocity and pressure
    State perturbation;  // zero-boundary-data unknown (equals state without a lifting)
    NewtonReport report;
};

// Weight of the outflow correction inside the convection form: 1 for the
// convective condition, 0 for the do-nothing variants.
double gamma1_weight_for(OutflowKind kind);

// Residual of the stationary momentum/continuity system at a physical state:
//   velocity rows: nu a0(u,v) + a1(u;u,v) [+ directional boundary action]
//                  + b(v,p) - <load, v>
//   pressure rows: b(u,q)
// `load` is the assembled forcing functional over velocity DOFs.
std::vector<double> stationary_residual(const FESystem& fes, const State& s, double nu,
                                        std::span<const double> load, OutflowKind kind);

// Derivative of stationary_residual. Exact for Cbc/Dn; for Ddn the boundary
// term keeps its sign factor frozen at the given state (quasi-Newton matrix).
SparseMatrix stationary_jacobian(const FESystem& fes, const State& s, double nu,
                                 OutflowKind kind);

// Residual of the shifted system in the zero-boundary-data unknown: the
// convection form is expanded against the lifting and the forcing is folded
// into phi (assemble_phi with the gamma weight of `kind`). Its derivative is
// stationary_jacobian evaluated at the reconstructed state (tilde.u + w0).
std::vector<double> perturbed_residual(const FESystem& fes, const State& tilde, double nu,
                                       std::span<const double> phi, const Lifting& lifting,
                                       OutflowKind kind);

// Newton iteration for meshes whose Dirichlet data is identically zero (walls
// only; throws ConfigError when inflow nodes exist). `extra_load` is an
// optional assembled functional added to <f, v> (e.g. a boundary flux).
NewtonResult newton_solve_homogeneous(const FESystem& fes, const BoundarySpec& spec, double nu,
                                      const VectorField& f, const NewtonConfig& cfg = {},
                                      std::span<const double> extra_load = {});

// Newton iteration on the shifted system; returns both the perturbation and
// the reconstructed physical state.
NewtonResult newton_solve_nonhomogeneous(const FESystem& fes, const BoundarySpec& spec, double nu,
                                         const VectorField& f, const Lifting& lifting,
                                         const NewtonConfig& cfg = {});

// Directional-outflow iteration: exact volume linearization, boundary matrix
// frozen at the current state, convergence measured on the true residual.
NewtonResult ddn_quasi_newton(const FESystem& fes, const BoundarySpec& spec, double nu,
                              const VectorField& f, const Lifting& lifting,
                              const NewtonConfig& cfg = {});

}  // namespace cbcflow
