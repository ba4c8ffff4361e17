#include "cbcflow/fem.hpp"

#include <algorithm>
#include <array>

namespace cbcflow {

namespace {

int tag_index(BoundaryTag tag) { return static_cast<int>(tag); }

Vec2 perp(const Vec2& v) { return {v.y, -v.x}; }

// Midpoint scalar node of a boundary edge.
int bedge_mid_snode(const Mesh& mesh, int be) {
    return mesh.n_nodes() + mesh.boundary_edge_edge[be];
}

// P2 trace along a boundary edge, parametrized by t in [0,1] from node a to b.
struct EdgeTrace {
    std::array<int, 3> snode;  // a, b, midpoint
    double n[3];

    void eval(double t) {
        n[0] = (1.0 - t) * (1.0 - 2.0 * t);
        n[1] = t * (2.0 * t - 1.0);
        n[2] = 4.0 * t * (1.0 - t);
    }
};

EdgeTrace edge_trace(const Mesh& mesh, int be) {
    EdgeTrace tr;
    tr.snode = {mesh.boundary_edges[be].a, mesh.boundary_edges[be].b, bedge_mid_snode(mesh, be)};
    return tr;
}

}  // namespace

FESystem::FESystem(const Mesh& mesh) : mesh_(&mesh) {
    n_scalar_ = mesh.n_nodes() + mesh.n_edges();
    for (std::size_t be = 0; be < mesh.boundary_edges.size(); ++be) {
        const auto& e = mesh.boundary_edges[be];
        const int k = tag_index(e.tag);
        tag_edges_[k].push_back(static_cast<int>(be));
        tag_snodes_[k].push_back(e.a);
        tag_snodes_[k].push_back(e.b);
        tag_snodes_[k].push_back(bedge_mid_snode(mesh, static_cast<int>(be)));
    }
    for (auto& v : tag_snodes_) {
        std::sort(v.begin(), v.end());
        v.erase(std::unique(v.begin(), v.end()), v.end());
    }
    wall_snodes_ = tag_snodes_[tag_index(BoundaryTag::WallH)];
    const auto& inflow_all = tag_snodes_[tag_index(BoundaryTag::InflowN)];
    std::set_difference(inflow_all.begin(), inflow_all.end(), wall_snodes_.begin(),
                        wall_snodes_.end(), std::back_inserter(inflow_snodes_));
}

int FESystem::tri_snode(int t, int local) const {
    if (local < 3) return mesh_->tris[t][local];
    return mesh_->n_nodes() + mesh_->tri_edges[t][local - 3];
}

Vec2 FESystem::snode_pos(int snode) const {
    if (snode < mesh_->n_nodes()) return mesh_->nodes[snode];
    const auto& e = mesh_->edges[snode - mesh_->n_nodes()];
    return 0.5 * (mesh_->nodes[e[0]] + mesh_->nodes[e[1]]);
}

const std::vector<int>& FESystem::snodes_on(BoundaryTag tag) const {
    return tag_snodes_[tag_index(tag)];
}

const std::vector<int>& FESystem::edges_with_tag(BoundaryTag tag) const {
    return tag_edges_[tag_index(tag)];
}

P2Basis p2_basis(const Mesh& mesh, int t, double l0, double l1, double l2) {
    const Vec2& p0 = mesh.nodes[mesh.tris[t][0]];
    const Vec2& p1 = mesh.nodes[mesh.tris[t][1]];
    const Vec2& p2 = mesh.nodes[mesh.tris[t][2]];
    const double det = (p1 - p0).cross(p2 - p0);
    const Vec2 gl[3] = {perp(p1 - p2) * (1.0 / det), perp(p2 - p0) * (1.0 / det),
                        perp(p0 - p1) * (1.0 / det)};
    const double l[3] = {l0, l1, l2};

    P2Basis b;
    for (int i = 0; i < 3; ++i) {
        b.n[i] = l[i] * (2.0 * l[i] - 1.0);
        b.grad[i] = (4.0 * l[i] - 1.0) * gl[i];
    }
    for (int k = 0; k < 3; ++k) {
        const int a = (k + 1) % 3, c = (k + 2) % 3;
        b.n[3 + k] = 4.0 * l[a] * l[c];
        b.grad[3 + k] = 4.0 * (l[a] * gl[c] + l[c] * gl[a]);
    }
    return b;
}

Vec2 evaluate_velocity(const FESystem& fes, std::span<const double> u, const MeshLocation& loc) {
    const P2Basis b = p2_basis(fes.mesh(), loc.tri, loc.bary[0], loc.bary[1], loc.bary[2]);
    Vec2 val{0.0, 0.0};
    for (int s = 0; s < 6; ++s) {
        const int sn = fes.tri_snode(loc.tri, s);
        val.x += u[FESystem::u_dof(sn, 0)] * b.n[s];
        val.y += u[FESystem::u_dof(sn, 1)] * b.n[s];
    }
    return val;
}

Mat2 evaluate_velocity_gradient(const FESystem& fes, std::span<const double> u,
                                const MeshLocation& loc) {
    const P2Basis b = p2_basis(fes.mesh(), loc.tri, loc.bary[0], loc.bary[1], loc.bary[2]);
    Mat2 g;
    for (int s = 0; s < 6; ++s) {
        const int sn = fes.tri_snode(loc.tri, s);
        for (int c = 0; c < 2; ++c) {
            const double coef = u[FESystem::u_dof(sn, c)];
            g(c, 0) += coef * b.grad[s].x;
            g(c, 1) += coef * b.grad[s].y;
        }
    }
    return g;
}

double evaluate_pressure(const FESystem& fes, std::span<const double> p, const MeshLocation& loc) {
    double val = 0.0;
    for (int i = 0; i < 3; ++i) val += p[fes.mesh().tris[loc.tri][i]] * loc.bary[i];
    return val;
}

double evaluate_scalar(const FESystem& fes, std::span<const double> s, const MeshLocation& loc) {
    const P2Basis b = p2_basis(fes.mesh(), loc.tri, loc.bary[0], loc.bary[1], loc.bary[2]);
    double val = 0.0;
    for (int k = 0; k < 6; ++k) val += s[fes.tri_snode(loc.tri, k)] * b.n[k];
    return val;
}

Vec2 evaluate_scalar_gradient(const FESystem& fes, std::span<const double> s,
                              const MeshLocation& loc) {
    const P2Basis b = p2_basis(fes.mesh(), loc.tri, loc.bary[0], loc.bary[1], loc.bary[2]);
    Vec2 val{0.0, 0.0};
    for (int k = 0; k < 6; ++k) val += s[fes.tri_snode(loc.tri, k)] * b.grad[k];
    return val;
}

namespace {

constexpr int kAssemblyDegree = 6;

// Iterates volume quadrature points: cb(t, weight*area_factor, basis).
template <typename F>
void for_volume_qp(const FESystem& fes, int degree, F&& cb) {
    const Mesh& mesh = fes.mesh();
    const auto& rule = triangle_quadrature(degree);
    for (int t = 0; t < mesh.n_tris(); ++t) {
        const double det = 2.0 * mesh.tri_area(t);
        for (const auto& qp : rule) {
            const P2Basis b = p2_basis(mesh, t, qp.l0, qp.l1, qp.l2);
            cb(t, qp.w * det, qp, b);
        }
    }
}

// Iterates Gamma1 edge quadrature points with the P2 trace evaluated.
template <typename F>
void for_tag_edge_qp(const FESystem& fes, BoundaryTag tag, int degree, F&& cb) {
    const Mesh& mesh = fes.mesh();
    const auto& rule = edge_quadrature(degree);
    for (int be : fes.edges_with_tag(tag)) {
        EdgeTrace tr = edge_trace(mesh, be);
        const Vec2 a = mesh.nodes[mesh.boundary_edges[be].a];
        const Vec2 b = mesh.nodes[mesh.boundary_edges[be].b];
        const double len = mesh.boundary_edge_length(be);
        const Vec2 n = mesh.boundary_edge_normal(be);
        for (const auto& qp : rule) {
            tr.eval(qp.t);
            const Vec2 x = a + qp.t * (b - a);
            cb(tr, qp.w * len, n, x);
        }
    }
}

Vec2 trace_velocity(const EdgeTrace& tr, std::span<const double> u) {
    Vec2 v{0.0, 0.0};
    for (int k = 0; k < 3; ++k) {
        v.x += u[FESystem::u_dof(tr.snode[k], 0)] * tr.n[k];
        v.y += u[FESystem::u_dof(tr.snode[k], 1)] * tr.n[k];
    }
    return v;
}

}  // namespace

SparseMatrix assemble_a0(const FESystem& fes) {
    std::vector<Triplet> trips;
    trips.reserve(static_cast<std::size_t>(fes.mesh().n_tris()) * 144);
    for_volume_qp(fes, kAssemblyDegree, [&](int t, double w, const TriQuadPoint&, const P2Basis& b) {
        int dof[6];
        for (int s = 0; s < 6; ++s) dof[s] = fes.tri_snode(t, s);
        for (int i = 0; i < 6; ++i) {
            for (int j = 0; j < 6; ++j) {
                const double gg = b.grad[i].dot(b.grad[j]);
                const double gi[2] = {b.grad[i].x, b.grad[i].y};
                const double gj[2] = {b.grad[j].x, b.grad[j].y};
                for (int ci = 0; ci < 2; ++ci) {
                    for (int cj = 0; cj < 2; ++cj) {
                        // 2 D(u):D(v) for v = e_ci phi_i, u = e_cj phi_j.
                        const double val = (ci == cj ? gg : 0.0) + gi[cj] * gj[ci];
                        trips.push_back({FESystem::u_dof(dof[i], ci),
                                         FESystem::u_dof(dof[j], cj), w * val});
                    }
                }
            }
        }
    });
    return SparseMatrix(fes.n_u(), fes.n_u(), std::move(trips));
}

SparseMatrix assemble_mass(const FESystem& fes) {
    std::vector<Triplet> trips;
    trips.reserve(static_cast<std::size_t>(fes.mesh().n_tris()) * 72);
    for_volume_qp(fes, kAssemblyDegree, [&](int t, double w, const TriQuadPoint&, const P2Basis& b) {
        int dof[6];
        for (int s = 0; s < 6; ++s) dof[s] = fes.tri_snode(t, s);
        for (int i = 0; i < 6; ++i)
            for (int j = 0; j < 6; ++j)
                for (int c = 0; c < 2; ++c)
                    trips.push_back({FESystem::u_dof(dof[i], c), FESystem::u_dof(dof[j], c),
                                     w * b.n[i] * b.n[j]});
    });
    return SparseMatrix(fes.n_u(), fes.n_u(), std::move(trips));
}

SparseMatrix assemble_p1_mass(const FESystem& fes) {
    std::vector<Triplet> trips;
    trips.reserve(static_cast<std::size_t>(fes.mesh().n_tris()) * 9);
    for_volume_qp(fes, 4, [&](int t, double w, const TriQuadPoint& qp, const P2Basis&) {
        const double l[3] = {qp.l0, qp.l1, qp.l2};
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                trips.push_back({fes.mesh().tris[t][i], fes.mesh().tris[t][j], w * l[i] * l[j]});
    });
    return SparseMatrix(fes.n_p(), fes.n_p(), std::move(trips));
}

SparseMatrix assemble_b(const FESystem& fes) {
    std::vector<Triplet> trips;
    trips.reserve(static_cast<std::size_t>(fes.mesh().n_tris()) * 36);
    for_volume_qp(fes, kAssemblyDegree, [&](int t, double w, const TriQuadPoint& qp, const P2Basis& b) {
        const double l[3] = {qp.l0, qp.l1, qp.l2};
        for (int i = 0; i < 3; ++i) {
            const int row = fes.mesh().tris[t][i];
            for (int j = 0; j < 6; ++j) {
                const int sn = fes.tri_snode(t, j);
                trips.push_back({row, FESystem::u_dof(sn, 0), -w * l[i] * b.grad[j].x});
                trips.push_back({row, FESystem::u_dof(sn, 1), -w * l[i] * b.grad[j].y});
            }
        }
    });
    return SparseMatrix(fes.n_p(), fes.n_u(), std::move(trips));
}

std::vector<double> assemble_load(const FESystem& fes, const VectorField& f, int degree) {
    std::vector<double> r(fes.n_u(), 0.0);
    const Mesh& mesh = fes.mesh();
    for_volume_qp(fes, degree, [&](int t, double w, const TriQuadPoint& qp, const P2Basis& b) {
        Vec2 x{0.0, 0.0};
        for (int i = 0; i < 3; ++i) {
            const double l[3] = {qp.l0, qp.l1, qp.l2};
            x += l[i] * mesh.nodes[mesh.tris[t][i]];
        }
        const Vec2 fv = f(x);
        for (int s = 0; s < 6; ++s) {
            const int sn = fes.tri_snode(t, s);
            r[FESystem::u_dof(sn, 0)] += w * fv.x * b.n[s];
            r[FESystem::u_dof(sn, 1)] += w * fv.y * b.n[s];
        }
    });
    return r;
}

std::vector<double> assemble_boundary_load(const FESystem& fes, const VectorField& g,
                                           BoundaryTag tag, int degree) {
    std::vector<double> r(fes.n_u(), 0.0);
    for_tag_edge_qp(fes, tag, degree, [&](const EdgeTrace& tr, double w, const Vec2&, const Vec2& x) {
        const Vec2 gv = g(x);
        for (int k = 0; k < 3; ++k) {
            r[FESystem::u_dof(tr.snode[k], 0)] += w * gv.x * tr.n[k];
            r[FESystem::u_dof(tr.snode[k], 1)] += w * gv.y * tr.n[k];
        }
    });
    return r;
}

std::vector<double> assemble_boundary_load(const FESystem& fes, const BoundaryField& g,
                                           BoundaryTag tag, int degree) {
    std::vector<double> r(fes.n_u(), 0.0);
    for_tag_edge_qp(fes, tag, degree,
                    [&](const EdgeTrace& tr, double w, const Vec2& n, const Vec2& x) {
                        const Vec2 gv = g(x, n);
                        for (int k = 0; k < 3; ++k) {
                            r[FESystem::u_dof(tr.snode[k], 0)] += w * gv.x * tr.n[k];
                            r[FESystem::u_dof(tr.snode[k], 1)] += w * gv.y * tr.n[k];
                        }
                    });
    return r;
}

namespace {

Vec2 qp_position(const Mesh& mesh, int t, const TriQuadPoint& qp) {
    return qp.l0 * mesh.nodes[mesh.tris[t][0]] + qp.l1 * mesh.nodes[mesh.tris[t][1]] +
           qp.l2 * mesh.nodes[mesh.tris[t][2]];
}

}  // namespace

double velocity_l2_error(const FESystem& fes, std::span<const double> u, const VectorField& exact,
                         int degree) {
    double total = 0.0;
    for_volume_qp(fes, degree, [&](int t, double w, const TriQuadPoint& qp, const P2Basis& b) {
        Vec2 uh{0.0, 0.0};
        for (int s = 0; s < 6; ++s) {
            const int sn = fes.tri_snode(t, s);
            uh += Vec2{u[FESystem::u_dof(sn, 0)], u[FESystem::u_dof(sn, 1)]} * b.n[s];
        }
        const Vec2 d = uh - exact(qp_position(fes.mesh(), t, qp));
        total += w * d.dot(d);
    });
    return std::sqrt(total);
}

double velocity_h1_semi_error(const FESystem& fes, std::span<const double> u,
                              const std::function<Mat2(const Vec2&)>& exact_grad, int degree) {
    double total = 0.0;
    for_volume_qp(fes, degree, [&](int t, double w, const TriQuadPoint& qp, const P2Basis& b) {
        Mat2 g;
        for (int s = 0; s < 6; ++s) {
            const int sn = fes.tri_snode(t, s);
            for (int c = 0; c < 2; ++c) {
                const double coef = u[FESystem::u_dof(sn, c)];
                g(c, 0) += coef * b.grad[s].x;
                g(c, 1) += coef * b.grad[s].y;
            }
        }
        const Mat2 ge = exact_grad(qp_position(fes.mesh(), t, qp));
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) {
                const double d = g(i, j) - ge(i, j);
                total += w * d * d;
            }
    });
    return std::sqrt(total);
}

double pressure_l2_error(const FESystem& fes, std::span<const double> p,
                         const std::function<double(const Vec2&)>& exact, int degree) {
    double total = 0.0;
    for_volume_qp(fes, degree, [&](int t, double w, const TriQuadPoint& qp, const P2Basis&) {
        double ph = 0.0;
        const double l[3] = {qp.l0, qp.l1, qp.l2};
        for (int i = 0; i < 3; ++i) ph += p[fes.mesh().tris[t][i]] * l[i];
        const double d = ph - exact(qp_position(fes.mesh(), t, qp));
        total += w * d * d;
    });
    return std::sqrt(total);
}

std::vector<double> assemble_cbc_boundary_action(const FESystem& fes, std::span<const double> w,
                                                 std::span<const double> u) {
    std::vector<double> r(fes.n_u(), 0.0);
    for_tag_edge_qp(fes, BoundaryTag::OutflowOne, kAssemblyDegree,
                    [&](const EdgeTrace& tr, double wq, const Vec2& n, const Vec2&) {
                        const double wn = trace_velocity(tr, w).dot(n);
                        const Vec2 uv = trace_velocity(tr, u);
                        const double f = 0.5 * wq * wn;
                        for (int k = 0; k < 3; ++k) {
                            r[FESystem::u_dof(tr.snode[k], 0)] += f * uv.x * tr.n[k];
                            r[FESystem::u_dof(tr.snode[k], 1)] += f * uv.y * tr.n[k];
                        }
                    });
    return r;
}

CbcBoundary assemble_cbc_boundary_jacobians(const FESystem& fes, std::span<const double> u) {
    std::vector<Triplet> t1, t2;
    for_tag_edge_qp(fes, BoundaryTag::OutflowOne, kAssemblyDegree,
                    [&](const EdgeTrace& tr, double wq, const Vec2& n, const Vec2&) {
                        const double un = trace_velocity(tr, u).dot(n);
                        const Vec2 uv = trace_velocity(tr, u);
                        for (int i = 0; i < 3; ++i) {
                            for (int j = 0; j < 3; ++j) {
                                const double nn = 0.5 * wq * tr.n[i] * tr.n[j];
                                for (int ci = 0; ci < 2; ++ci) {
                                    // first: (dw.n)(u.v), row (i,ci) tests v.
                                    const double uc = (ci == 0) ? uv.x : uv.y;
                                    for (int cj = 0; cj < 2; ++cj) {
                                        const double nc = (cj == 0) ? n.x : n.y;
                                        t1.push_back({FESystem::u_dof(tr.snode[i], ci),
                                                      FESystem::u_dof(tr.snode[j], cj),
                                                      nn * nc * uc});
                                    }
                                    // second: (u.n)(du.v), diagonal in components.
                                    t2.push_back({FESystem::u_dof(tr.snode[i], ci),
                                                  FESystem::u_dof(tr.snode[j], ci), nn * un});
                                }
                            }
                        }
                    });
    CbcBoundary out;
    out.first = SparseMatrix(fes.n_u(), fes.n_u(), std::move(t1));
    out.second = SparseMatrix(fes.n_u(), fes.n_u(), std::move(t2));
    out.action = assemble_cbc_boundary_action(fes, u, u);
    return out;
}

SparseMatrix assemble_ddn_boundary(const FESystem& fes, std::span<const double> u_prev) {
    std::vector<Triplet> trips;
    for_tag_edge_qp(fes, BoundaryTag::OutflowOne, kAssemblyDegree,
                    [&](const EdgeTrace& tr, double wq, const Vec2& n, const Vec2&) {
                        const double un_neg = std::min(trace_velocity(tr, u_prev).dot(n), 0.0);
                        if (un_neg == 0.0) return;
                        for (int i = 0; i < 3; ++i)
                            for (int j = 0; j < 3; ++j)
                                for (int c = 0; c < 2; ++c)
                                    trips.push_back({FESystem::u_dof(tr.snode[i], c),
                                                     FESystem::u_dof(tr.snode[j], c),
                                                     -0.5 * wq * un_neg * tr.n[i] * tr.n[j]});
                    });
    return SparseMatrix(fes.n_u(), fes.n_u(), std::move(trips));
}

std::vector<double> assemble_ddn_boundary_action(const FESystem& fes, std::span<const double> u) {
    std::vector<double> r(fes.n_u(), 0.0);
    for_tag_edge_qp(fes, BoundaryTag::OutflowOne, kAssemblyDegree,
                    [&](const EdgeTrace& tr, double wq, const Vec2& n, const Vec2&) {
                        const Vec2 uv = trace_velocity(tr, u);
                        const double un_neg = std::min(uv.dot(n), 0.0);
                        if (un_neg == 0.0) return;
                        const double f = -0.5 * wq * un_neg;
                        for (int k = 0; k < 3; ++k) {
                            r[FESystem::u_dof(tr.snode[k], 0)] += f * uv.x * tr.n[k];
                            r[FESystem::u_dof(tr.snode[k], 1)] += f * uv.y * tr.n[k];
                        }
                    });
    return r;
}

std::vector<double> assemble_a1_action(const FESystem& fes, std::span<const double> w,
                                       std::span<const double> u, double gamma1_weight) {
    std::vector<double> r(fes.n_u(), 0.0);
    for_volume_qp(fes, kAssemblyDegree, [&](int t, double wq, const TriQuadPoint&, const P2Basis& b) {
        Vec2 wv{0.0, 0.0};
        Mat2 gu;
        for (int s = 0; s < 6; ++s) {
            const int sn = fes.tri_snode(t, s);
            for (int c = 0; c < 2; ++c) {
                const double wc = w[FESystem::u_dof(sn, c)];
                const double uc = u[FESystem::u_dof(sn, c)];
                if (c == 0) wv.x += wc * b.n[s];
                else wv.y += wc * b.n[s];
                gu(c, 0) += uc * b.grad[s].x;
                gu(c, 1) += uc * b.grad[s].y;
            }
        }
        const Vec2 conv{wv.x * gu(0, 0) + wv.y * gu(0, 1), wv.x * gu(1, 0) + wv.y * gu(1, 1)};
        for (int s = 0; s < 6; ++s) {
            const int sn = fes.tri_snode(t, s);
            r[FESystem::u_dof(sn, 0)] += wq * conv.x * b.n[s];
            r[FESystem::u_dof(sn, 1)] += wq * conv.y * b.n[s];
        }
    });
    if (gamma1_weight != 0.0) {
        const auto bnd = assemble_cbc_boundary_action(fes, w, u);
        axpy(-gamma1_weight, bnd, r);
    }
    return r;
}

A1Jacobians assemble_a1_jacobians(const FESystem& fes, std::span<const double> u,
                                  double gamma1_weight) {
    std::vector<Triplet> t1, t2;
    const std::size_t per_tri = 144;
    t1.reserve(static_cast<std::size_t>(fes.mesh().n_tris()) * per_tri / 2);
    t2.reserve(static_cast<std::size_t>(fes.mesh().n_tris()) * per_tri / 4);
    for_volume_qp(fes, kAssemblyDegree, [&](int t, double wq, const TriQuadPoint&, const P2Basis& b) {
        int dof[6];
        Vec2 uv{0.0, 0.0};
        Mat2 gu;
        for (int s = 0; s < 6; ++s) {
            dof[s] = fes.tri_snode(t, s);
            const double ux = u[FESystem::u_dof(dof[s], 0)];
            const double uy = u[FESystem::u_dof(dof[s], 1)];
            uv.x += ux * b.n[s];
            uv.y += uy * b.n[s];
            gu(0, 0) += ux * b.grad[s].x;
            gu(0, 1) += ux * b.grad[s].y;
            gu(1, 0) += uy * b.grad[s].x;
            gu(1, 1) += uy * b.grad[s].y;
        }
        for (int i = 0; i < 6; ++i) {
            for (int j = 0; j < 6; ++j) {
                const double nn = wq * b.n[i] * b.n[j];
                // first slot: (dw . grad u)_ci . v => entry[(i,ci),(j,cj)] = nn * du_ci/dx_cj
                for (int ci = 0; ci < 2; ++ci)
                    for (int cj = 0; cj < 2; ++cj)
                        t1.push_back({FESystem::u_dof(dof[i], ci), FESystem::u_dof(dof[j], cj),
                                      nn * gu(ci, cj)});
                // second slot: (u . grad phi_j) diagonal in components.
                const double conv = wq * b.n[i] * (uv.x * b.grad[j].x + uv.y * b.grad[j].y);
                for (int c = 0; c < 2; ++c)
                    t2.push_back({FESystem::u_dof(dof[i], c), FESystem::u_dof(dof[j], c), conv});
            }
        }
    });
    A1Jacobians out;
    if (gamma1_weight != 0.0) {
        const CbcBoundary bnd = assemble_cbc_boundary_jacobians(fes, u);
        append_block(t1, bnd.first, 0, 0, -gamma1_weight);
        append_block(t2, bnd.second, 0, 0, -gamma1_weight);
    }
    out.first = SparseMatrix(fes.n_u(), fes.n_u(), std::move(t1));
    out.second = SparseMatrix(fes.n_u(), fes.n_u(), std::move(t2));
    return out;
}

}  // namespace cbcflow
