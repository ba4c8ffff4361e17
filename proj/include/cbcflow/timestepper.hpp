#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cbcflow/boundary.hpp"
#include "cbcflow/nonlinear.hpp"

namespace cbcflow {

// Time discretization controls. The step count N = floor(t_final / dt) is
// honored exactly; captures snap to the nearest step.
struct TimeConfig {
    double dt = 0.01;
    double t_final = 1.0;
    std::vector<double> capture_times;

    // If positive, stop once ||u^n - u^{n-1}||_{L2} / dt falls below this
    // (the run is still marked complete; remaining captures are skipped).
    double steady_tol = 0.0;

    int n_steps() const;
};

struct StepDiagnostics {
    int step = 0;
    double t = 0.0;
    double div_residual = 0.0;  // ||B u^n||
    double outflow_flux = 0.0;  // integral of u^n . n over the outflow edges
    double step_change = 0.0;   // ||u^n - u^{n-1}||_{L2}
};

struct Capture {
    double t_requested = 0.0;
    double t = 0.0;  // nearest step time actually captured
    int step = 0;
    State state;
};

struct Trajectory {
    std::vector<Capture> captures;
    std::vector<StepDiagnostics> diagnostics;
    std::vector<std::string> warnings;
    State final_state;
    double final_time = 0.0;
    int steps_taken = 0;
    bool complete = false;
    std::string error;  // reason when a step aborted the run
};

// Departure point of the characteristic through x: x - u(x) dt. No clipping;
// callers handle feet that leave the domain.
Vec2 upwind_point(const Vec2& x, const Vec2& u_at_x, double dt);

// One linearly implicit characteristics step: solves
//   (M/dt + nu A0 - gamma/2 OutflowCoupling(u_prev) [+ directional term]
//      + pressure coupling) (u^n, p^n)
//     = (1/dt) int (u_prev o X) . v dx + <f, v>
// with the outflow boundary factor frozen at u_prev and Dirichlet data taken
// at time t_n. Upwind feet outside the domain are projected to the closest
// boundary point; a foot that still fails to locate raises SolveError with
// its coordinates. Single-shot assembly and factorization; LgStepper caches
// the factorization across steps.
State lg_step(const FESystem& fes, const BoundarySpec& spec, double nu, const VectorField& f,
              const State& state_prev, double dt, double t_n);

// Repeated stepping with the constant block (M/dt + nu A0 + pressure
// coupling, Dirichlet-eliminated) factored once. The u_prev-dependent outflow
// term lives on few boundary DOFs and is folded in through a dense
// capacitance solve; every step verifies the true residual of the assembled
// system and falls back to a fresh factorization when it exceeds
// 1e-8 * (1 + ||rhs||).
class LgStepper {
public:
    LgStepper(const FESystem& fes, const BoundarySpec& spec, double nu, const VectorField& f,
              double dt);
    ~LgStepper();
    LgStepper(LgStepper&&) noexcept;
    LgStepper& operator=(LgStepper&&) noexcept;

    State step(const State& state_prev, double t_n);

    int refactorizations() const;  // fallback count, for diagnostics

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Runs N = floor(t_final/dt) steps from u0 (pressure initialized to zero),
// recording per-step diagnostics and snapping captures to the nearest step
// (time 0 captures the initial state). Warns, without failing, when u0
// disagrees with the inflow profile at t=0 or when max|u| dt exceeds the
// smallest edge. A step failure returns the partial trajectory with
// `complete` false and `error` set.
Trajectory run_transient(const FESystem& fes, const BoundarySpec& spec, double nu,
                         const VectorField& f, std::span<const double> u0,
                         const TimeConfig& tcfg);

}  // namespace cbcflow
