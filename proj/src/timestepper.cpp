#include "cbcflow/timestepper.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include "cbcflow/quadrature.hpp"

namespace cbcflow {

int TimeConfig::n_steps() const {
    if (dt <= 0.0) throw ConfigError("time step must be positive");
    if (t_final < dt) throw ConfigError("final time must be at least one step");
    return static_cast<int>(std::floor(t_final / dt + 1e-9));
}

Vec2 upwind_point(const Vec2& x, const Vec2& u_at_x, double dt) { return x - dt * u_at_x; }

namespace {

// (1/1) int (u_prev o X) . v dx by the assembly-order volume rule; the 1/dt
// factor is applied by the caller. Feet outside the mesh are projected to the
// closest boundary point.
std::vector<double> assemble_composed_load(const FESystem& fes, std::span<const double> u_prev,
                                           double dt) {
    const Mesh& mesh = fes.mesh();
    const auto& rule = triangle_quadrature(6);
    std::vector<double> out(fes.n_u(), 0.0);
    for (int t = 0; t < mesh.n_tris(); ++t) {
        const Vec2 p0 = mesh.nodes[mesh.tris[t][0]];
        const Vec2 p1 = mesh.nodes[mesh.tris[t][1]];
        const Vec2 p2 = mesh.nodes[mesh.tris[t][2]];
        const double det = 2.0 * mesh.tri_area(t);
        for (const auto& qp : rule) {
            const P2Basis b = p2_basis(mesh, t, qp.l0, qp.l1, qp.l2);
            const Vec2 x = qp.l0 * p0 + qp.l1 * p1 + qp.l2 * p2;
            Vec2 u_at{0.0, 0.0};
            for (int i = 0; i < 6; ++i) {
                const int s = fes.tri_snode(t, i);
                u_at.x += b.n[i] * u_prev[FESystem::u_dof(s, 0)];
                u_at.y += b.n[i] * u_prev[FESystem::u_dof(s, 1)];
            }
            Vec2 foot = upwind_point(x, u_at, dt);
            auto loc = mesh.locate(foot, t);
            if (!loc) {
                foot = mesh.project_to_boundary(foot);
                loc = mesh.locate(foot, t);
            }
            if (!loc)
                throw SolveError("upwind point (" + std::to_string(foot.x) + ", " +
                                 std::to_string(foot.y) + ") could not be located");
            const Vec2 u_foot = evaluate_velocity(fes, u_prev, *loc);
            const double w = qp.w * det;
            for (int i = 0; i < 6; ++i) {
                const int s = fes.tri_snode(t, i);
                out[FESystem::u_dof(s, 0)] += w * b.n[i] * u_foot.x;
                out[FESystem::u_dof(s, 1)] += w * b.n[i] * u_foot.y;
            }
        }
    }
    return out;
}

// u_prev-dependent outflow boundary block of the step matrix.
std::vector<Triplet> outflow_correction(const FESystem& fes, OutflowKind kind,
                                        std::span<const double> u_prev) {
    std::vector<Triplet> trips;
    const double gamma = gamma1_weight_for(kind);
    if (gamma != 0.0)
        append_block(trips, assemble_cbc_boundary_jacobians(fes, u_prev).second, 0, 0, -gamma);
    if (kind == OutflowKind::Ddn) append_block(trips, assemble_ddn_boundary(fes, u_prev), 0, 0);
    return trips;
}

std::vector<Triplet> constant_block(const FESystem& fes, const SparseMatrix& mass,
                                    const SparseMatrix& a0, const SparseMatrix& b, double nu,
                                    double dt) {
    std::vector<Triplet> trips;
    append_block(trips, mass, 0, 0, 1.0 / dt);
    append_block(trips, a0, 0, 0, nu);
    append_block(trips, b, fes.n_u(), 0);
    append_block(trips, b, 0, fes.n_u(), 1.0, /*transpose=*/true);
    return trips;
}

DirichletConstraints step_constraints(const FESystem& fes, const BoundarySpec& spec, double t_n) {
    DirichletConstraints bc = dirichlet_constraints(fes, spec, t_n);
    if (fes.edges_with_tag(BoundaryTag::OutflowOne).empty()) {
        bc.dofs.push_back(fes.n_u());  // pin the pressure level
        bc.values.push_back(0.0);
    }
    return bc;
}

// Dense LU with partial pivoting for the small capacitance systems.
std::vector<double> dense_solve(std::vector<std::vector<double>> a, std::vector<double> rhs) {
    const int n = static_cast<int>(rhs.size());
    for (int k = 0; k < n; ++k) {
        int piv = k;
        for (int i = k + 1; i < n; ++i)
            if (std::abs(a[i][k]) > std::abs(a[piv][k])) piv = i;
        if (std::abs(a[piv][k]) < 1e-300)
            throw SingularMatrixError("capacitance system is singular", k);
        std::swap(a[k], a[piv]);
        std::swap(rhs[k], rhs[piv]);
        for (int i = k + 1; i < n; ++i) {
            const double f = a[i][k] / a[k][k];
            if (f == 0.0) continue;
            for (int j = k; j < n; ++j) a[i][j] -= f * a[k][j];
            rhs[i] -= f * rhs[k];
        }
    }
    for (int i = n - 1; i >= 0; --i) {
        double s = rhs[i];
        for (int j = i + 1; j < n; ++j) s -= a[i][j] * rhs[j];
        rhs[i] = s / a[i][i];
    }
    return rhs;
}

}  // namespace

State lg_step(const FESystem& fes, const BoundarySpec& spec, double nu, const VectorField& f,
              const State& state_prev, double dt, double t_n) {
    if (dt <= 0.0) throw ConfigError("time step must be positive");
    const int n = fes.n_u() + fes.n_p();
    const SparseMatrix mass = assemble_mass(fes);
    const SparseMatrix a0 = assemble_a0(fes);
    const SparseMatrix b = assemble_b(fes);

    std::vector<Triplet> trips = constant_block(fes, mass, a0, b, nu, dt);
    for (const Triplet& tr : outflow_correction(fes, spec.outflow_kind, state_prev.u))
        trips.push_back(tr);

    std::vector<double> rhs(n, 0.0);
    {
        const std::vector<double> composed = assemble_composed_load(fes, state_prev.u, dt);
        const std::span<double> ru(rhs.data(), fes.n_u());
        axpy(1.0 / dt, composed, ru);
        if (f) axpy(1.0, assemble_load(fes, f), ru);
    }

    const DirichletConstraints bc = step_constraints(fes, spec, t_n);
    apply_dirichlet(bc, trips, rhs, n);
    const std::vector<double> x = lu_solve(SparseMatrix(n, n, std::move(trips)), rhs);
    return {std::vector<double>(x.begin(), x.begin() + fes.n_u()),
            std::vector<double>(x.begin() + fes.n_u(), x.end())};
}

struct LgStepper::Impl {
    const FESystem& fes;
    BoundarySpec spec;
    double nu;
    double dt;
    int n;

    SparseMatrix mass;
    SparseMatrix a0;
    SparseMatrix b;
    SparseMatrix k_orig;  // constant block before elimination (for value fold-in)
    SparseMatrix k_elim;  // constant block with Dirichlet rows/cols eliminated
    LuSolver lu;          // factorization of k_elim
    std::vector<double> load;

    std::vector<int> bc_dofs;        // constrained DOFs (sorted)
    std::vector<char> is_constrained;
    std::vector<int> support;        // free velocity DOFs on outflow edges
    std::vector<int> support_index;  // dof -> support position, -1 elsewhere
    std::vector<std::vector<double>> pw;  // P K^-1 P^T, m x m

    int refactor_count = 0;

    Impl(const FESystem& f, const BoundarySpec& s, double nu_, const VectorField& forcing,
         double dt_)
        : fes(f),
          spec(s),
          nu(nu_),
          dt(dt_),
          n(f.n_u() + f.n_p()),
          mass(assemble_mass(f)),
          a0(assemble_a0(f)),
          b(assemble_b(f)),
          k_orig(n, n, constant_block(f, mass, a0, b, nu_, dt_)),
          k_elim(eliminated_constant(f, s, mass, a0, b, nu_, dt_)),
          lu(k_elim),
          load(forcing ? assemble_load(f, forcing) : std::vector<double>(f.n_u(), 0.0)) {
        if (dt <= 0.0) throw ConfigError("time step must be positive");
        const DirichletConstraints bc = step_constraints(fes, spec, 0.0);
        bc_dofs = bc.dofs;
        is_constrained.assign(n, 0);
        for (int d : bc_dofs) is_constrained[d] = 1;

        support_index.assign(n, -1);
        for (int s_node : fes.snodes_on(BoundaryTag::OutflowOne))
            for (int c = 0; c < 2; ++c) {
                const int d = FESystem::u_dof(s_node, c);
                if (!is_constrained[d]) {
                    support_index[d] = static_cast<int>(support.size());
                    support.push_back(d);
                }
            }

        // Columns of K^-1 P^T restricted to the support rows.
        const int m = static_cast<int>(support.size());
        pw.assign(m, std::vector<double>(m, 0.0));
        std::vector<double> e(n, 0.0);
        for (int j = 0; j < m; ++j) {
            e[support[j]] = 1.0;
            const std::vector<double> col = lu.solve(e);
            e[support[j]] = 0.0;
            for (int i = 0; i < m; ++i) pw[i][j] = col[support[i]];
        }
    }

    static SparseMatrix eliminated_constant(const FESystem& fes, const BoundarySpec& spec,
                                            const SparseMatrix& mass, const SparseMatrix& a0,
                                            const SparseMatrix& b, double nu, double dt) {
        const int n = fes.n_u() + fes.n_p();
        std::vector<Triplet> trips = constant_block(fes, mass, a0, b, nu, dt);
        std::vector<double> dummy(n, 0.0);
        apply_dirichlet(step_constraints(fes, spec, 0.0).zeroed(), trips, dummy, n);
        return SparseMatrix(n, n, std::move(trips));
    }

    // Dense support-block view of the correction triplets.
    std::vector<std::vector<double>> correction_dense(const std::vector<Triplet>& trips) const {
        const int m = static_cast<int>(support.size());
        std::vector<std::vector<double>> c(m, std::vector<double>(m, 0.0));
        for (const Triplet& t : trips) {
            const int i = support_index[t.r];
            const int j = support_index[t.c];
            if (i >= 0 && j >= 0) c[i][j] += t.v;
        }
        return c;
    }

    State step(const State& state_prev, double t_n) {
        const DirichletConstraints bc = step_constraints(fes, spec, t_n);
        const std::vector<Triplet> corr = outflow_correction(fes, spec.outflow_kind, state_prev.u);

        // Raw right-hand side, then boundary-value fold-in.
        std::vector<double> rhs(n, 0.0);
        {
            const std::vector<double> composed = assemble_composed_load(fes, state_prev.u, dt);
            const std::span<double> ru(rhs.data(), fes.n_u());
            axpy(1.0 / dt, composed, ru);
            axpy(1.0, load, ru);
        }
        std::vector<double> x_bc(n, 0.0);
        bool any_value = false;
        for (std::size_t k = 0; k < bc.dofs.size(); ++k) {
            x_bc[bc.dofs[k]] = bc.values[k];
            any_value = any_value || bc.values[k] != 0.0;
        }
        std::vector<double> b_elim = rhs;
        if (any_value) {
            std::vector<double> g(n, 0.0);
            k_orig.matvec_add(x_bc, g);
            for (const Triplet& t : corr) g[t.r] += t.v * x_bc[t.c];
            axpy(-1.0, g, b_elim);
        }
        for (std::size_t k = 0; k < bc.dofs.size(); ++k) b_elim[bc.dofs[k]] = bc.values[k];

        // Base solve plus dense capacitance correction for the boundary block.
        std::vector<double> x = lu.solve(b_elim);
        const int m = static_cast<int>(support.size());
        if (!corr.empty() && m > 0) {
            const auto c = correction_dense(corr);
            std::vector<double> px(m);
            for (int i = 0; i < m; ++i) px[i] = x[support[i]];
            std::vector<double> rhs_y(m, 0.0);
            std::vector<std::vector<double>> cap(m, std::vector<double>(m, 0.0));
            for (int i = 0; i < m; ++i) {
                cap[i][i] = 1.0;
                for (int k = 0; k < m; ++k) {
                    if (c[i][k] == 0.0) continue;
                    rhs_y[i] += c[i][k] * px[k];
                    for (int j = 0; j < m; ++j) cap[i][j] += c[i][k] * pw[k][j];
                }
            }
            const std::vector<double> y = dense_solve(std::move(cap), std::move(rhs_y));
            std::vector<double> py(n, 0.0);
            for (int i = 0; i < m; ++i) py[support[i]] = y[i];
            const std::vector<double> z = lu.solve(py);
            axpy(-1.0, z, x);
        }

        // True residual of the assembled step system; fall back on violation.
        std::vector<double> r = b_elim;
        k_elim.matvec_add(x, r, -1.0);
        for (const Triplet& t : corr)
            if (!is_constrained[t.r] && !is_constrained[t.c]) r[t.r] -= t.v * x[t.c];
        if (norm2(r) > 1e-8 * (1.0 + norm2(b_elim))) {
            ++refactor_count;
            std::vector<Triplet> trips = constant_block(fes, mass, a0, b, nu, dt);
            for (const Triplet& t : corr) trips.push_back(t);
            std::vector<double> full_rhs = rhs;
            apply_dirichlet(bc, trips, full_rhs, n);
            x = lu_solve(SparseMatrix(n, n, std::move(trips)), full_rhs);
        }

        return {std::vector<double>(x.begin(), x.begin() + fes.n_u()),
                std::vector<double>(x.begin() + fes.n_u(), x.end())};
    }
};

LgStepper::LgStepper(const FESystem& fes, const BoundarySpec& spec, double nu,
                     const VectorField& f, double dt)
    : impl_(std::make_unique<Impl>(fes, spec, nu, f, dt)) {}
LgStepper::~LgStepper() = default;
LgStepper::LgStepper(LgStepper&&) noexcept = default;
LgStepper& LgStepper::operator=(LgStepper&&) noexcept = default;

State LgStepper::step(const State& state_prev, double t_n) { return impl_->step(state_prev, t_n); }

int LgStepper::refactorizations() const { return impl_->refactor_count; }

namespace {

double outflow_flux(const FESystem& fes, std::span<const double> u) {
    const Mesh& mesh = fes.mesh();
    const auto& rule = edge_quadrature(6);
    double flux = 0.0;
    for (int be : fes.edges_with_tag(BoundaryTag::OutflowOne)) {
        const Vec2 a = mesh.nodes[mesh.boundary_edges[be].a];
        const Vec2 b = mesh.nodes[mesh.boundary_edges[be].b];
        const Vec2 nrm = mesh.boundary_edge_normal(be);
        const double len = mesh.boundary_edge_length(be);
        for (const auto& qp : rule) {
            const auto loc = mesh.locate(a + qp.t * (b - a), mesh.boundary_edge_tri[be]);
            if (!loc) continue;
            flux += qp.w * len * evaluate_velocity(fes, u, *loc).dot(nrm);
        }
    }
    return flux;
}

double min_edge_length(const Mesh& mesh) {
    double h = std::numeric_limits<double>::infinity();
    for (int t = 0; t < mesh.n_tris(); ++t)
        for (int k = 0; k < 3; ++k) {
            const Vec2 d = mesh.nodes[mesh.tris[t][k]] - mesh.nodes[mesh.tris[t][(k + 1) % 3]];
            h = std::min(h, d.norm());
        }
    return h;
}

double max_speed(const FESystem& fes, std::span<const double> u) {
    double m = 0.0;
    for (int s = 0; s < fes.n_scalar(); ++s) {
        const Vec2 v{u[FESystem::u_dof(s, 0)], u[FESystem::u_dof(s, 1)]};
        m = std::max(m, v.norm());
    }
    return m;
}

}  // namespace

Trajectory run_transient(const FESystem& fes, const BoundarySpec& spec, double nu,
                         const VectorField& f, std::span<const double> u0,
                         const TimeConfig& tcfg) {
    if (static_cast<int>(u0.size()) != fes.n_u())
        throw ConfigError("initial velocity has wrong size");
    const int n_steps = tcfg.n_steps();

    Trajectory traj;
    State state{std::vector<double>(u0.begin(), u0.end()),
                std::vector<double>(fes.n_p(), 0.0)};

    // Compatibility of the initial trace with the inflow data.
    if (spec.inflow_profile) {
        double worst = 0.0;
        for (int s : fes.inflow_snodes()) {
            const Vec2 want = spec.inflow_profile(fes.snode_pos(s), 0.0);
            worst = std::max(worst, std::abs(u0[FESystem::u_dof(s, 0)] - want.x));
            worst = std::max(worst, std::abs(u0[FESystem::u_dof(s, 1)] - want.y));
        }
        if (worst > 1e-8)
            traj.warnings.push_back("initial velocity deviates from the inflow profile by " +
                                    std::to_string(worst));
    }

    // Snap capture times to steps (step 0 = initial state), dedupe per step.
    std::vector<std::pair<int, double>> capture_steps;  // (step, requested time)
    for (double t : tcfg.capture_times) {
        const int s = std::clamp(static_cast<int>(std::lround(t / tcfg.dt)), 0, n_steps);
        capture_steps.emplace_back(s, t);
    }
    std::sort(capture_steps.begin(), capture_steps.end());
    capture_steps.erase(std::unique(capture_steps.begin(), capture_steps.end(),
                                    [](const auto& a, const auto& b) { return a.first == b.first; }),
                        capture_steps.end());
    std::size_t next_capture = 0;
    auto capture_if_due = [&](int step_idx, const State& s) {
        while (next_capture < capture_steps.size() && capture_steps[next_capture].first == step_idx) {
            traj.captures.push_back({capture_steps[next_capture].second, step_idx * tcfg.dt,
                                     step_idx, s});
            ++next_capture;
        }
    };
    capture_if_due(0, state);

    LgStepper stepper(fes, spec, nu, f, tcfg.dt);
    const SparseMatrix bmat = assemble_b(fes);
    const SparseMatrix mass = assemble_mass(fes);
    const double h_min = min_edge_length(fes.mesh());
    bool cfl_warned = false;

    traj.complete = true;
    for (int step_idx = 1; step_idx <= n_steps; ++step_idx) {
        const double t_n = step_idx * tcfg.dt;
        if (!cfl_warned && max_speed(fes, state.u) * tcfg.dt > h_min) {
            traj.warnings.push_back("step " + std::to_string(step_idx) +
                                    ": max|u|*dt exceeds the smallest edge length");
            cfl_warned = true;
        }

        State next;
        try {
            next = stepper.step(state, t_n);
        } catch (const std::exception& e) {
            traj.complete = false;
            traj.error = e.what();
            break;
        }

        StepDiagnostics diag;
        diag.step = step_idx;
        diag.t = t_n;
        diag.div_residual = norm2(bmat * next.u);
        diag.outflow_flux = outflow_flux(fes, next.u);
        std::vector<double> d = next.u;
        axpy(-1.0, state.u, d);
        diag.step_change = std::sqrt(dot(d, mass * d));
        traj.diagnostics.push_back(diag);

        state = std::move(next);
        traj.steps_taken = step_idx;
        capture_if_due(step_idx, state);

        if (tcfg.steady_tol > 0.0 && diag.step_change / tcfg.dt <= tcfg.steady_tol) break;
    }

    traj.final_state = std::move(state);
    traj.final_time = traj.steps_taken * tcfg.dt;
    return traj;
}

}  // namespace cbcflow
