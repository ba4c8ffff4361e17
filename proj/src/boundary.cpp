#include "cbcflow/boundary.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cbcflow {

OutflowKind outflow_kind_from_string(const std::string& s) {
    if (s == "cbc") return OutflowKind::Cbc;
    if (s == "dn") return OutflowKind::Dn;
    if (s == "ddn") return OutflowKind::Ddn;
    throw ConfigError("unknown outflow condition '" + s + "' (expected cbc, dn, or ddn)");
}

std::string to_string(OutflowKind kind) {
    switch (kind) {
        case OutflowKind::Cbc: return "cbc";
        case OutflowKind::Dn: return "dn";
        case OutflowKind::Ddn: return "ddn";
    }
    throw ConfigError("invalid outflow kind");
}

InflowProfile inflow_profile_by_name(const std::string& name) {
    if (name == "poiseuille_half")
        return [](const Vec2& p, double) { return Vec2{(0.5 - p.y) * (0.5 + p.y), 0.0}; };
    if (name == "poiseuille_unit")
        return [](const Vec2& p, double) { return Vec2{(1.0 - p.y) * (1.0 + p.y), 0.0}; };
    if (name == "zero") return [](const Vec2&, double) { return Vec2{0.0, 0.0}; };
    throw ConfigError("unknown inflow profile '" + name + "'");
}

DirichletConstraints DirichletConstraints::zeroed() const {
    DirichletConstraints out;
    out.dofs = dofs;
    out.values.assign(dofs.size(), 0.0);
    return out;
}

DirichletConstraints dirichlet_constraints(const FESystem& fes, const BoundarySpec& spec,
                                           double t) {
    if (!fes.inflow_snodes().empty() && !spec.inflow_profile)
        throw ConfigError("mesh has inflow edges but no inflow profile was given");

    std::vector<std::pair<int, double>> entries;
    for (int s : fes.wall_snodes()) {
        entries.emplace_back(FESystem::u_dof(s, 0), 0.0);
        entries.emplace_back(FESystem::u_dof(s, 1), 0.0);
    }
    for (int s : fes.inflow_snodes()) {
        const Vec2 v = spec.inflow_profile(fes.snode_pos(s), t);
        entries.emplace_back(FESystem::u_dof(s, 0), v.x);
        entries.emplace_back(FESystem::u_dof(s, 1), v.y);
    }
    std::sort(entries.begin(), entries.end());

    DirichletConstraints bc;
    bc.dofs.reserve(entries.size());
    bc.values.reserve(entries.size());
    for (const auto& [d, v] : entries) {
        bc.dofs.push_back(d);
        bc.values.push_back(v);
    }
    return bc;
}

void apply_dirichlet(const DirichletConstraints& bc, std::vector<Triplet>& triplets,
                     std::span<double> rhs, int n) {
    std::vector<char> constrained(n, 0);
    std::vector<double> value(n, 0.0);
    for (std::size_t k = 0; k < bc.dofs.size(); ++k) {
        const int d = bc.dofs[k];
        if (d < 0 || d >= n) throw ConfigError("constraint dof out of range");
        constrained[d] = 1;
        value[d] = bc.values[k];
    }

    std::size_t kept = 0;
    for (const Triplet& t : triplets) {
        if (constrained[t.r]) continue;
        if (constrained[t.c]) {
            rhs[t.r] -= t.v * value[t.c];
            continue;
        }
        triplets[kept++] = t;
    }
    triplets.resize(kept);
    for (int d : bc.dofs) {
        triplets.push_back({d, d, 1.0});
        rhs[d] = value[d];
    }
}

namespace {

// Saddle block layout: velocity DOFs first, then the n_p pressure DOFs.
std::vector<Triplet> stokes_triplets(const FESystem& fes, double nu) {
    std::vector<Triplet> trips;
    const SparseMatrix a0 = assemble_a0(fes);
    const SparseMatrix b = assemble_b(fes);
    append_block(trips, a0, 0, 0, nu);
    append_block(trips, b, fes.n_u(), 0);
    append_block(trips, b, 0, fes.n_u(), 1.0, /*transpose=*/true);
    return trips;
}

}  // namespace

StokesResult solve_stokes(const FESystem& fes, const DirichletConstraints& bc, double nu,
                          std::span<const double> rhs_u) {
    const int n = fes.n_u() + fes.n_p();
    std::vector<Triplet> trips = stokes_triplets(fes, nu);
    std::vector<double> rhs(n, 0.0);
    std::copy(rhs_u.begin(), rhs_u.end(), rhs.begin());

    DirichletConstraints all = bc;
    const bool pin_pressure = fes.edges_with_tag(BoundaryTag::OutflowOne).empty();
    if (pin_pressure) {
        all.dofs.push_back(fes.n_u());
        all.values.push_back(0.0);
    }
    apply_dirichlet(all, trips, rhs, n);

    const SparseMatrix sys(n, n, std::move(trips));
    std::vector<double> x;
    try {
        x = lu_solve(sys, rhs);
    } catch (const SolveError& e) {
        if (pin_pressure)
            throw ConfigError(std::string("Stokes solve failed with every boundary segment "
                                          "constrained (check inflow flux compatibility): ") +
                              e.what());
        throw;
    }

    StokesResult out;
    out.u.assign(x.begin(), x.begin() + fes.n_u());
    out.p.assign(x.begin() + fes.n_u(), x.end());
    return out;
}

Lifting build_lifting(const FESystem& fes, const InflowProfile& u_in, double t) {
    Lifting lift;
    lift.w0.assign(fes.n_u(), 0.0);
    if (!u_in || fes.edges_with_tag(BoundaryTag::InflowN).empty()) return lift;

    // Net inflow flux; must vanish when there is no outflow to absorb it.
    const auto& rule = edge_quadrature(8);
    const Mesh& m = fes.mesh();
    for (int be : fes.edges_with_tag(BoundaryTag::InflowN)) {
        const Vec2 a = m.nodes[m.boundary_edges[be].a];
        const Vec2 b = m.nodes[m.boundary_edges[be].b];
        const Vec2 n = m.boundary_edge_normal(be);
        const double len = m.boundary_edge_length(be);
        for (const auto& qp : rule)
            lift.net_flux += qp.w * len * u_in(a + qp.t * (b - a), t).dot(n);
    }
    if (fes.edges_with_tag(BoundaryTag::OutflowOne).empty() && std::abs(lift.net_flux) > 1e-8)
        throw ConfigError("inflow profile has nonzero net flux " +
                          std::to_string(lift.net_flux) + " but the mesh has no outflow");

    BoundarySpec spec;
    spec.inflow_profile = u_in;
    const DirichletConstraints bc = dirichlet_constraints(fes, spec, t);
    const std::vector<double> zero_rhs(fes.n_u(), 0.0);
    StokesResult res = solve_stokes(fes, bc, 1.0, zero_rhs);
    lift.w0 = std::move(res.u);
    lift.div_residual = norm2(assemble_b(fes) * lift.w0);
    return lift;
}

std::vector<double> assemble_phi(const FESystem& fes, const VectorField& f, const Lifting& lifting,
                                 double nu, double gamma1_weight) {
    std::vector<double> phi =
        f ? assemble_load(fes, f) : std::vector<double>(fes.n_u(), 0.0);
    const double w0_norm = norm2(lifting.w0);
    if (lifting.w0.empty() || w0_norm == 0.0) return phi;
    axpy(-nu, assemble_a0(fes) * lifting.w0, phi);
    axpy(-1.0, assemble_a1_action(fes, lifting.w0, lifting.w0, gamma1_weight), phi);
    return phi;
}

}  // namespace cbcflow
