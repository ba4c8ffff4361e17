#include "cbcflow/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "cbcflow/boundary.hpp"

namespace cbcflow {

namespace {

// P2 trace shapes on a boundary edge, endpoint a at t=0, endpoint b at t=1.
double trace_at(double fa, double fb, double fm, double t) {
    return (1.0 - t) * (1.0 - 2.0 * t) * fa + t * (2.0 * t - 1.0) * fb + 4.0 * t * (1.0 - t) * fm;
}

int midpoint_snode(const Mesh& m, int be) { return m.n_nodes() + m.boundary_edge_edge[be]; }

Vec2 snode_velocity(std::span<const double> u, int s) {
    return {u[FESystem::u_dof(s, 0)], u[FESystem::u_dof(s, 1)]};
}

}  // namespace

OutflowReport nonlinear_outflow(const FESystem& fes, std::span<const double> u, BoundaryTag tag) {
    const Mesh& m = fes.mesh();
    const std::vector<int>& edges = fes.edges_with_tag(tag);
    if (edges.empty())
        throw ConfigError("nonlinear outflow: no boundary edges carry tag " + to_string(tag));

    OutflowReport out;
    out.tag = tag;
    const std::vector<EdgeQuadPoint>& qps = edge_quadrature(6);
    for (int be : edges) {
        const BoundaryEdge& e = m.boundary_edges[be];
        const Vec2 n = m.boundary_edge_normal(be);
        const double len = m.boundary_edge_length(be);
        const Vec2 ua = snode_velocity(u, e.a);
        const Vec2 ub = snode_velocity(u, e.b);
        const Vec2 um = snode_velocity(u, midpoint_snode(m, be));
        Vec2 share{0.0, 0.0};
        for (const EdgeQuadPoint& qp : qps) {
            const Vec2 uq{trace_at(ua.x, ub.x, um.x, qp.t), trace_at(ua.y, ub.y, um.y, qp.t)};
            const double un_pos = std::max(uq.dot(n), 0.0);
            share = share + (qp.w * len * un_pos) * uq;
        }
        out.gamma = out.gamma + share;
        out.edge_contributions.emplace_back(be, share);
    }
    return out;
}

namespace {

struct ScalarProblem {
    std::vector<Triplet> k;
    std::vector<double> rhs;
};

// Stiffness int grad psi . grad phi and load int u . (curl phi) with
// curl phi = (d phi/dy, -d phi/dx), over the scalar P2 space.
ScalarProblem assemble_scalar_problem(const FESystem& fes, std::span<const double> u) {
    const Mesh& m = fes.mesh();
    ScalarProblem sp;
    sp.rhs.assign(fes.n_scalar(), 0.0);
    sp.k.reserve(static_cast<std::size_t>(m.n_tris()) * 36);
    const std::vector<TriQuadPoint>& qps = triangle_quadrature(6);
    for (int t = 0; t < m.n_tris(); ++t) {
        const double det = 2.0 * m.tri_area(t);
        int sn[6];
        for (int i = 0; i < 6; ++i) sn[i] = fes.tri_snode(t, i);
        double ke[6][6] = {};
        double fe[6] = {};
        for (const TriQuadPoint& qp : qps) {
            const P2Basis basis = p2_basis(m, t, qp.l0, qp.l1, qp.l2);
            const double w = qp.w * det;
            Vec2 uq{0.0, 0.0};
            for (int i = 0; i < 6; ++i) {
                uq.x += basis.n[i] * u[FESystem::u_dof(sn[i], 0)];
                uq.y += basis.n[i] * u[FESystem::u_dof(sn[i], 1)];
            }
            for (int i = 0; i < 6; ++i) {
                fe[i] += w * (uq.x * basis.grad[i].y - uq.y * basis.grad[i].x);
                for (int j = 0; j < 6; ++j)
                    ke[i][j] += w * basis.grad[i].dot(basis.grad[j]);
            }
        }
        for (int i = 0; i < 6; ++i) {
            sp.rhs[sn[i]] += fe[i];
            for (int j = 0; j < 6; ++j) sp.k.push_back({sn[i], sn[j], ke[i][j]});
        }
    }
    return sp;
}

// Boundary loops as edge sequences; each boundary vertex has exactly one
// outgoing boundary edge (a -> b, domain on the left).
std::vector<std::vector<int>> trace_boundary_loops(const Mesh& m, int anchor_vertex) {
    const int nbe = static_cast<int>(m.boundary_edges.size());
    std::vector<int> out_edge(m.n_nodes(), -1);
    for (int be = 0; be < nbe; ++be) out_edge[m.boundary_edges[be].a] = be;

    std::vector<std::vector<int>> loops;
    std::vector<char> used(nbe, 0);
    auto walk_from = [&](int start_vertex) {
        std::vector<int> loop;
        int v = start_vertex;
        while (true) {
            const int be = out_edge[v];
            if (be < 0 || used[be]) break;
            used[be] = 1;
            loop.push_back(be);
            v = m.boundary_edges[be].b;
            if (v == start_vertex) break;
        }
        loops.push_back(std::move(loop));
    };
    walk_from(anchor_vertex);  // anchor loop first
    for (int be = 0; be < nbe; ++be)
        if (!used[be]) walk_from(m.boundary_edges[be].a);
    return loops;
}

bool is_wall_like(BoundaryTag tag) { return tag != BoundaryTag::OutflowOne; }

// Scalar nodes incident to a wall or inflow edge.
std::vector<char> wall_touch(const FESystem& fes) {
    const Mesh& m = fes.mesh();
    std::vector<char> touch(fes.n_scalar(), 0);
    for (int be = 0; be < static_cast<int>(m.boundary_edges.size()); ++be) {
        if (!is_wall_like(m.boundary_edges[be].tag)) continue;
        touch[m.boundary_edges[be].a] = 1;
        touch[m.boundary_edges[be].b] = 1;
        touch[midpoint_snode(m, be)] = 1;
    }
    return touch;
}

StreamFunction solve_constrained(const FESystem& fes, std::span<const double> u,
                                 std::vector<std::pair<int, double>> dirichlet,
                                 const std::vector<std::vector<int>>& tie_groups) {
    if (dirichlet.empty())
        throw ConfigError(
            "stream function is underdetermined: no wall or inflow edges fix its level");

    ScalarProblem sp = assemble_scalar_problem(fes, u);
    const int n = fes.n_scalar();

    std::vector<int> master(n, -1);
    for (const std::vector<int>& grp : tie_groups) {
        const int mr = *std::min_element(grp.begin(), grp.end());
        for (int s : grp)
            if (s != mr) master[s] = mr;
    }
    bool any_tied = false;
    for (int s = 0; s < n; ++s) any_tied = any_tied || master[s] >= 0;
    if (any_tied) {
        for (Triplet& t : sp.k) {
            if (master[t.r] >= 0) t.r = master[t.r];
            if (master[t.c] >= 0) t.c = master[t.c];
        }
        for (int s = 0; s < n; ++s) {
            if (master[s] < 0) continue;
            sp.rhs[master[s]] += sp.rhs[s];
            sp.rhs[s] = 0.0;
            sp.k.push_back({s, s, 1.0});
        }
    }

    std::sort(dirichlet.begin(), dirichlet.end());
    dirichlet.erase(std::unique(dirichlet.begin(), dirichlet.end(),
                                [](const auto& a, const auto& b) { return a.first == b.first; }),
                    dirichlet.end());
    DirichletConstraints bc;
    for (const auto& [dof, value] : dirichlet) {
        bc.dofs.push_back(dof);
        bc.values.push_back(value);
    }
    apply_dirichlet(bc, sp.k, sp.rhs, n);

    const LuSolver lu(SparseMatrix(n, n, std::move(sp.k)));
    std::vector<double> x = lu.solve(sp.rhs);
    for (int s = 0; s < n; ++s)
        if (master[s] >= 0) x[s] = x[master[s]];
    for (const auto& [dof, value] : dirichlet) x[dof] = value;

    StreamFunction out;
    out.psi = std::move(x);
    out.dirichlet = std::move(dirichlet);
    for (const std::vector<int>& grp : tie_groups) {
        const int mr = *std::min_element(grp.begin(), grp.end());
        out.tied_constants.push_back(out.psi[mr]);
    }
    return out;
}

}  // namespace

StreamFunction solve_stream_function(const FESystem& fes, std::span<const double> u) {
    const Mesh& m = fes.mesh();
    if (m.boundary_edges.empty()) throw ConfigError("stream function: mesh has no boundary");

    // Anchor: lexicographically smallest boundary vertex.
    int anchor = -1;
    for (const BoundaryEdge& e : m.boundary_edges) {
        for (int v : {e.a, e.b}) {
            if (anchor < 0 || m.nodes[v].x < m.nodes[anchor].x ||
                (m.nodes[v].x == m.nodes[anchor].x && m.nodes[v].y < m.nodes[anchor].y))
                anchor = v;
        }
    }

    const std::vector<std::vector<int>> loops = trace_boundary_loops(m, anchor);
    const std::vector<char> touch = wall_touch(fes);

    // Anchor loop: cumulative discrete flux fixes the Dirichlet values.
    // Simpson on each edge integrates the quadratic trace of u.n exactly.
    std::vector<std::pair<int, double>> dirichlet;
    std::vector<char> assigned(fes.n_scalar(), 0);
    auto assign = [&](int s, double value) {
        if (assigned[s]) return;
        assigned[s] = 1;
        if (touch[s]) dirichlet.emplace_back(s, value);
    };
    double cum = 0.0;
    assign(anchor, 0.0);
    for (int be : loops.front()) {
        const BoundaryEdge& e = m.boundary_edges[be];
        const Vec2 nrm = m.boundary_edge_normal(be);
        const double len = m.boundary_edge_length(be);
        const int sm = midpoint_snode(m, be);
        const double fa = snode_velocity(u, e.a).dot(nrm);
        const double fb = snode_velocity(u, e.b).dot(nrm);
        const double fm = snode_velocity(u, sm).dot(nrm);
        const double half =
            (len / 2.0) / 6.0 * (fa + 4.0 * trace_at(fa, fb, fm, 0.25) + fm);
        const double full = len / 6.0 * (fa + 4.0 * fm + fb);
        assign(e.a, cum);
        assign(sm, cum + half);
        assign(e.b, cum + full);
        cum += full;
    }

    // Other loops (holes): one unknown constant per loop with wall edges.
    std::vector<std::vector<int>> tie_groups;
    for (std::size_t li = 1; li < loops.size(); ++li) {
        std::vector<int> grp;
        for (int be : loops[li]) {
            const BoundaryEdge& e = m.boundary_edges[be];
            for (int s : {e.a, midpoint_snode(m, be), e.b})
                if (touch[s]) grp.push_back(s);
        }
        std::sort(grp.begin(), grp.end());
        grp.erase(std::unique(grp.begin(), grp.end()), grp.end());
        if (!grp.empty()) tie_groups.push_back(std::move(grp));
    }

    return solve_constrained(fes, u, std::move(dirichlet), tie_groups);
}

StreamFunction solve_stream_function(const FESystem& fes, std::span<const double> u,
                                     const ScalarField& g) {
    const std::vector<char> touch = wall_touch(fes);
    std::vector<std::pair<int, double>> dirichlet;
    for (int s = 0; s < fes.n_scalar(); ++s)
        if (touch[s]) dirichlet.emplace_back(s, g(fes.snode_pos(s)));
    return solve_constrained(fes, u, std::move(dirichlet), {});
}

FieldNorms field_norms(const FESystem& fes, const State& state) {
    FieldNorms out;
    const SparseMatrix mass = assemble_mass(fes);
    const SparseMatrix a0 = assemble_a0(fes);
    const SparseMatrix b = assemble_b(fes);
    const SparseMatrix mp = assemble_p1_mass(fes);
    out.l2_u = std::sqrt(std::max(0.0, dot(state.u, mass * state.u)));
    out.v_norm = std::sqrt(std::max(0.0, dot(state.u, a0 * state.u)));
    out.l2_p = std::sqrt(std::max(0.0, dot(state.p, mp * state.p)));
    const std::vector<double> z = b * state.u;
    if (norm2(z) > 0.0) {
        const LuSolver lu(mp);
        out.div_residual = std::sqrt(std::max(0.0, dot(z, lu.solve(z))));
    }
    return out;
}

}  // namespace cbcflow
