#include "cbcflow/nonlinear.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cbcflow {

double gamma1_weight_for(OutflowKind kind) { return kind == OutflowKind::Cbc ? 1.0 : 0.0; }

namespace {

// Matrices that do not change across Newton iterations.
struct Ops {
    const FESystem& fes;
    SparseMatrix a0;
    SparseMatrix b;

    explicit Ops(const FESystem& f) : fes(f), a0(assemble_a0(f)), b(assemble_b(f)) {}
};

std::vector<double> physical_velocity(const State& tilde, const std::vector<double>* w0) {
    std::vector<double> u = tilde.u;
    if (w0) axpy(1.0, *w0, u);
    return u;
}

// Shared residual: the homogeneous path is the w0 == nullptr case.
std::vector<double> residual_impl(const Ops& ops, const State& tilde, double nu,
                                  std::span<const double> load, OutflowKind kind,
                                  const std::vector<double>* w0) {
    const FESystem& fes = ops.fes;
    const double gamma = gamma1_weight_for(kind);
    std::vector<double> r(fes.n_u() + fes.n_p(), 0.0);
    const std::span<double> ru(r.data(), fes.n_u());
    const std::span<double> rp(r.data() + fes.n_u(), fes.n_p());

    ops.a0.matvec_add(tilde.u, ru, nu);
    axpy(1.0, assemble_a1_action(fes, tilde.u, tilde.u, gamma), ru);
    if (w0) {
        axpy(1.0, assemble_a1_action(fes, *w0, tilde.u, gamma), ru);
        axpy(1.0, assemble_a1_action(fes, tilde.u, *w0, gamma), ru);
    }
    if (kind == OutflowKind::Ddn) {
        const std::vector<double> u_phys = physical_velocity(tilde, w0);
        axpy(1.0, assemble_ddn_boundary_action(fes, u_phys), ru);
    }
    axpy(-1.0, load, ru);
    ops.b.matvec_add(tilde.p, ru, 1.0, /*transpose=*/true);
    ops.b.matvec_add(tilde.u, rp);
    return r;
}

std::vector<Triplet> jacobian_triplets(const Ops& ops, std::span<const double> u_phys, double nu,
                                       OutflowKind kind) {
    const FESystem& fes = ops.fes;
    std::vector<Triplet> trips;
    append_block(trips, ops.a0, 0, 0, nu);
    const A1Jacobians jac = assemble_a1_jacobians(fes, u_phys, gamma1_weight_for(kind));
    append_block(trips, jac.first, 0, 0);
    append_block(trips, jac.second, 0, 0);
    if (kind == OutflowKind::Ddn)
        append_block(trips, assemble_ddn_boundary(fes, u_phys), 0, 0);
    append_block(trips, ops.b, fes.n_u(), 0);
    append_block(trips, ops.b, 0, fes.n_u(), 1.0, /*transpose=*/true);
    return trips;
}

struct IterationSetup {
    OutflowKind kind;
    const std::vector<double>* w0;          // nullptr for the homogeneous path
    const DirichletConstraints* bc;         // zero-valued, includes pressure pin
    const std::vector<int>* zero_rows;      // rows forced to zero in the residual
};

void zero_constrained(std::span<double> r, const std::vector<int>& rows) {
    for (int d : rows) r[d] = 0.0;
}

std::pair<State, NewtonReport> newton_iterate(const Ops& ops, const IterationSetup& setup,
                                              double nu, std::span<const double> load, State x,
                                              const NewtonConfig& cfg) {
    const FESystem& fes = ops.fes;
    const int n = fes.n_u() + fes.n_p();
    NewtonReport rep;
    double prev = std::numeric_limits<double>::infinity();
    int increases = 0;

    for (;;) {
        std::vector<double> r = residual_impl(ops, x, nu, load, setup.kind, setup.w0);
        zero_constrained(r, *setup.zero_rows);
        const double rn = norm2(r);
        rep.residual_history.push_back(rn);
        if (!std::isfinite(rn)) {
            rep.divergence_reason = "residual is not finite";
            break;
        }
        if (rn <= std::max(cfg.abs_tol, cfg.rel_tol * rep.residual_history.front())) {
            rep.converged = true;
            break;
        }
        if (rn > prev) {
            if (++increases >= 5) {
                rep.divergence_reason = "residual increased for 5 consecutive iterations";
                break;
            }
        } else {
            increases = 0;
        }
        prev = rn;
        if (rep.iterations >= cfg.max_iters) {
            rep.divergence_reason = "no convergence within max iterations";
            break;
        }
        if (norm2(x.u) > 1e12) {
            rep.divergence_reason = "iterate norm exceeded 1e12";
            break;
        }

        const std::vector<double> u_phys = physical_velocity(x, setup.w0);
        std::vector<Triplet> trips = jacobian_triplets(ops, u_phys, nu, setup.kind);
        std::vector<double> rhs(n);
        for (int i = 0; i < n; ++i) rhs[i] = -r[i];
        apply_dirichlet(*setup.bc, trips, rhs, n);
        const std::vector<double> delta = lu_solve(SparseMatrix(n, n, std::move(trips)), rhs);
        axpy(cfg.damping, std::span<const double>(delta.data(), fes.n_u()), x.u);
        axpy(cfg.damping, std::span<const double>(delta.data() + fes.n_u(), fes.n_p()), x.p);
        ++rep.iterations;
    }
    return {std::move(x), std::move(rep)};
}

NewtonResult drive(const FESystem& fes, const BoundarySpec& spec, double nu_target,
                   const VectorField& f, std::span<const double> extra_load,
                   const Lifting* lifting, NewtonConfig cfg) {
    if (!lifting && !fes.inflow_snodes().empty())
        throw ConfigError("mesh has inflow nodes; build a lifting and use the shifted solver");

    Ops ops(fes);
    DirichletConstraints bc = dirichlet_constraints(fes, spec, 0.0).zeroed();
    if (fes.edges_with_tag(BoundaryTag::OutflowOne).empty()) {
        bc.dofs.push_back(fes.n_u());  // pin the pressure at vertex 0
        bc.values.push_back(0.0);
    }
    const std::vector<int> zero_rows = bc.dofs;

    const OutflowKind kind = spec.outflow_kind;
    auto load_at = [&](double nu) {
        std::vector<double> load;
        if (lifting) {
            load = assemble_phi(fes, f, *lifting, nu, gamma1_weight_for(kind));
        } else {
            load = f ? assemble_load(fes, f) : std::vector<double>(fes.n_u(), 0.0);
        }
        if (!extra_load.empty()) axpy(1.0, extra_load, load);
        return load;
    };

    NewtonConfig::Guess guess = cfg.guess;
    if (guess == NewtonConfig::Guess::Auto)
        guess = (nu_target >= 0.05 - 1e-12) ? NewtonConfig::Guess::Zero
                                            : NewtonConfig::Guess::Continuation;

    IterationSetup setup{kind, lifting ? &lifting->w0 : nullptr, &bc, &zero_rows};
    State x{std::vector<double>(fes.n_u(), 0.0), std::vector<double>(fes.n_p(), 0.0)};
    NewtonReport rep;

    if (guess == NewtonConfig::Guess::Continuation) {
        std::vector<double> nus;
        for (double inv = 20.0; inv < 1.0 / nu_target - 1e-9; inv *= 2.0)
            nus.push_back(1.0 / inv);
        nus.push_back(nu_target);
        for (std::size_t k = 0; k < nus.size(); ++k) {
            const std::vector<double> load = load_at(nus[k]);
            std::tie(x, rep) = newton_iterate(ops, setup, nus[k], load, std::move(x), cfg);
            if (!rep.converged) {
                if (k + 1 < nus.size())
                    rep.divergence_reason = "continuation stage nu=" + std::to_string(nus[k]) +
                                            ": " + rep.divergence_reason;
                break;
            }
        }
    } else {
        if (guess == NewtonConfig::Guess::Stokes) {
            const StokesResult st = solve_stokes(fes, bc, nu_target, load_at(nu_target));
            x.u = st.u;
            x.p = st.p;
        }
        const std::vector<double> load = load_at(nu_target);
        std::tie(x, rep) = newton_iterate(ops, setup, nu_target, load, std::move(x), cfg);
    }

    NewtonResult out;
    out.perturbation = x;
    out.state = std::move(x);
    if (lifting) axpy(1.0, lifting->w0, out.state.u);
    out.report = std::move(rep);
    return out;
}

}  // namespace

std::vector<double> stationary_residual(const FESystem& fes, const State& s, double nu,
                                        std::span<const double> load, OutflowKind kind) {
    const Ops ops(fes);
    return residual_impl(ops, s, nu, load, kind, nullptr);
}

SparseMatrix stationary_jacobian(const FESystem& fes, const State& s, double nu,
                                 OutflowKind kind) {
    const Ops ops(fes);
    const int n = fes.n_u() + fes.n_p();
    return SparseMatrix(n, n, jacobian_triplets(ops, s.u, nu, kind));
}

std::vector<double> perturbed_residual(const FESystem& fes, const State& tilde, double nu,
                                       std::span<const double> phi, const Lifting& lifting,
                                       OutflowKind kind) {
    const Ops ops(fes);
    return residual_impl(ops, tilde, nu, phi, kind, &lifting.w0);
}

NewtonResult newton_solve_homogeneous(const FESystem& fes, const BoundarySpec& spec, double nu,
                                      const VectorField& f, const NewtonConfig& cfg,
                                      std::span<const double> extra_load) {
    return drive(fes, spec, nu, f, extra_load, nullptr, cfg);
}

NewtonResult newton_solve_nonhomogeneous(const FESystem& fes, const BoundarySpec& spec, double nu,
                                         const VectorField& f, const Lifting& lifting,
                                         const NewtonConfig& cfg) {
    return drive(fes, spec, nu, f, {}, &lifting, cfg);
}

NewtonResult ddn_quasi_newton(const FESystem& fes, const BoundarySpec& spec, double nu,
                              const VectorField& f, const Lifting& lifting,
                              const NewtonConfig& cfg) {
    BoundarySpec directional = spec;
    directional.outflow_kind = OutflowKind::Ddn;
    return drive(fes, directional, nu, f, {}, &lifting, cfg);
}

}  // namespace cbcflow
