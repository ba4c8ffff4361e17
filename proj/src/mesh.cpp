#include "cbcflow/mesh.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <unordered_map>

namespace cbcflow {

std::string to_string(BoundaryTag tag) {
    switch (tag) {
        case BoundaryTag::WallH: return "H";
        case BoundaryTag::InflowN: return "N";
        case BoundaryTag::OutflowOne: return "OUT";
    }
    throw MeshError("invalid boundary tag");
}

BoundaryTag boundary_tag_from_string(const std::string& s) {
    if (s == "H") return BoundaryTag::WallH;
    if (s == "N") return BoundaryTag::InflowN;
    if (s == "OUT") return BoundaryTag::OutflowOne;
    throw MeshError("unknown boundary tag '" + s + "'");
}

namespace {

std::string tri_str(int t) { return "triangle " + std::to_string(t); }

std::string edge_str(int a, int b) {
    return "(" + std::to_string(a) + "," + std::to_string(b) + ")";
}

}  // namespace

void Mesh::finalize() {
    const int nv = n_nodes();
    const int nt = n_tris();
    if (nv < 3) throw MeshError("mesh has fewer than 3 nodes");
    if (nt < 1) throw MeshError("mesh has no triangles");

    std::vector<char> referenced(nv, 0);
    for (int t = 0; t < nt; ++t) {
        for (int k = 0; k < 3; ++k) {
            const int v = tris[t][k];
            if (v < 0 || v >= nv)
                throw MeshError(tri_str(t) + " references invalid node " + std::to_string(v));
            referenced[v] = 1;
        }
        const auto& tr = tris[t];
        if (tr[0] == tr[1] || tr[1] == tr[2] || tr[0] == tr[2])
            throw MeshError(tri_str(t) + " has repeated nodes");
        if (tri_area(t) <= 0.0)
            throw MeshError(tri_str(t) + " has nonpositive area (orientation or degeneracy)");
    }
    for (int v = 0; v < nv; ++v)
        if (!referenced[v])
            throw MeshError("node " + std::to_string(v) + " is not referenced by any triangle");

    // Edge table: canonical (min,max) node pairs.
    std::map<std::array<int, 2>, int> edge_id;
    edges.clear();
    tri_edges.assign(nt, {-1, -1, -1});
    std::vector<std::array<int, 2>> incident;  // up to two triangles per edge
    for (int t = 0; t < nt; ++t) {
        for (int k = 0; k < 3; ++k) {
            const int a = tris[t][(k + 1) % 3];
            const int b = tris[t][(k + 2) % 3];
            const std::array<int, 2> key{std::min(a, b), std::max(a, b)};
            auto [it, inserted] = edge_id.try_emplace(key, n_edges());
            if (inserted) {
                edges.push_back(key);
                incident.push_back({-1, -1});
            }
            const int e = it->second;
            tri_edges[t][k] = e;
            if (incident[e][0] < 0) incident[e][0] = t;
            else if (incident[e][1] < 0) incident[e][1] = t;
            else throw MeshError("edge " + edge_str(key[0], key[1]) + " is shared by more than two triangles");
        }
    }

    tri_neighbors.assign(nt, {-1, -1, -1});
    for (int t = 0; t < nt; ++t) {
        for (int k = 0; k < 3; ++k) {
            const int e = tri_edges[t][k];
            const int other = (incident[e][0] == t) ? incident[e][1] : incident[e][0];
            tri_neighbors[t][k] = other;
        }
    }

    // Boundary edges must exactly cover the rim (edges with one triangle),
    // oriented counterclockwise in the owning triangle.
    std::vector<int> cover(n_edges(), -1);
    boundary_edge_edge.assign(boundary_edges.size(), -1);
    boundary_edge_tri.assign(boundary_edges.size(), -1);
    for (std::size_t i = 0; i < boundary_edges.size(); ++i) {
        auto& be = boundary_edges[i];
        if (be.a < 0 || be.a >= nv || be.b < 0 || be.b >= nv || be.a == be.b)
            throw MeshError("boundary edge " + std::to_string(i) + " has invalid nodes");
        const std::array<int, 2> key{std::min(be.a, be.b), std::max(be.a, be.b)};
        auto it = edge_id.find(key);
        if (it == edge_id.end())
            throw MeshError("boundary edge " + edge_str(be.a, be.b) + " is not an edge of any triangle");
        const int e = it->second;
        if (incident[e][1] >= 0)
            throw MeshError("boundary edge " + edge_str(be.a, be.b) + " is an interior edge");
        if (cover[e] >= 0)
            throw MeshError("duplicate boundary edge " + edge_str(be.a, be.b));
        cover[e] = static_cast<int>(i);
        const int t = incident[e][0];
        boundary_edge_edge[i] = e;
        boundary_edge_tri[i] = t;
        // Reorient a->b to the owning triangle's CCW direction.
        for (int k = 0; k < 3; ++k) {
            const int a = tris[t][(k + 1) % 3];
            const int b = tris[t][(k + 2) % 3];
            if (std::min(a, b) == key[0] && std::max(a, b) == key[1]) {
                be.a = a;
                be.b = b;
                break;
            }
        }
    }
    for (int e = 0; e < n_edges(); ++e) {
        if (incident[e][1] < 0 && cover[e] < 0)
            throw MeshError("rim edge " + edge_str(edges[e][0], edges[e][1]) +
                            " is not declared as a boundary edge (hanging node or missing tag)");
    }

    node_tris.assign(nv, {});
    for (int t = 0; t < nt; ++t)
        for (int k = 0; k < 3; ++k) node_tris[tris[t][k]].push_back(t);
}

double Mesh::tri_area(int t) const {
    const Vec2& p0 = nodes[tris[t][0]];
    const Vec2& p1 = nodes[tris[t][1]];
    const Vec2& p2 = nodes[tris[t][2]];
    return 0.5 * (p1 - p0).cross(p2 - p0);
}

double Mesh::total_area() const {
    double s = 0.0;
    for (int t = 0; t < n_tris(); ++t) s += tri_area(t);
    return s;
}

double Mesh::min_angle_deg() const {
    double best = 180.0;
    for (int t = 0; t < n_tris(); ++t) {
        for (int k = 0; k < 3; ++k) {
            const Vec2& p = nodes[tris[t][k]];
            Vec2 e1 = nodes[tris[t][(k + 1) % 3]] - p;
            Vec2 e2 = nodes[tris[t][(k + 2) % 3]] - p;
            const double c = e1.dot(e2) / (e1.norm() * e2.norm());
            best = std::min(best, std::acos(std::clamp(c, -1.0, 1.0)) * 180.0 / M_PI);
        }
    }
    return best;
}

Vec2 Mesh::tri_centroid(int t) const {
    const Vec2& p0 = nodes[tris[t][0]];
    const Vec2& p1 = nodes[tris[t][1]];
    const Vec2& p2 = nodes[tris[t][2]];
    return {(p0.x + p1.x + p2.x) / 3.0, (p0.y + p1.y + p2.y) / 3.0};
}

Vec2 Mesh::boundary_edge_normal(int be) const {
    const Vec2 d = nodes[boundary_edges[be].b] - nodes[boundary_edges[be].a];
    const double len = d.norm();
    return {d.y / len, -d.x / len};
}

double Mesh::boundary_edge_length(int be) const {
    return (nodes[boundary_edges[be].b] - nodes[boundary_edges[be].a]).norm();
}

namespace {
constexpr double kBaryTol = 1e-12;
}

bool Mesh::bary_in_tri(int t, const Vec2& p, std::array<double, 3>& bary) const {
    const Vec2& p0 = nodes[tris[t][0]];
    const Vec2& p1 = nodes[tris[t][1]];
    const Vec2& p2 = nodes[tris[t][2]];
    const double det = (p1 - p0).cross(p2 - p0);
    bary[0] = (p1 - p).cross(p2 - p) / det;
    bary[1] = (p2 - p).cross(p0 - p) / det;
    bary[2] = (p0 - p).cross(p1 - p) / det;
    return bary[0] >= -kBaryTol && bary[1] >= -kBaryTol && bary[2] >= -kBaryTol;
}

std::optional<MeshLocation> Mesh::canonical_location(int t, const Vec2& p) const {
    // Ties on shared edges/vertices resolve to the lowest containing index.
    int best = t;
    std::array<double, 3> bary;
    for (int k = 0; k < 3; ++k) {
        for (int cand : node_tris[tris[t][k]]) {
            if (cand < best && bary_in_tri(cand, p, bary)) best = cand;
        }
    }
    if (!bary_in_tri(best, p, bary)) return std::nullopt;
    double sum = 0.0;
    for (double& l : bary) {
        l = std::clamp(l, 0.0, 1.0);
        sum += l;
    }
    for (double& l : bary) l /= sum;
    return MeshLocation{best, bary};
}

std::optional<MeshLocation> Mesh::locate(const Vec2& p, int hint) const {
    int cur = (hint >= 0 && hint < n_tris()) ? hint : 0;
    std::array<double, 3> bary;
    const int max_steps = 2 * n_tris() + 8;
    for (int step = 0; step < max_steps; ++step) {
        const Vec2& p0 = nodes[tris[cur][0]];
        const Vec2& p1 = nodes[tris[cur][1]];
        const Vec2& p2 = nodes[tris[cur][2]];
        const double det = (p1 - p0).cross(p2 - p0);
        bary[0] = (p1 - p).cross(p2 - p) / det;
        bary[1] = (p2 - p).cross(p0 - p) / det;
        bary[2] = (p0 - p).cross(p1 - p) / det;
        int k = 0;
        if (bary[1] < bary[k]) k = 1;
        if (bary[2] < bary[k]) k = 2;
        if (bary[k] >= -kBaryTol) return canonical_location(cur, p);
        const int next = tri_neighbors[cur][k];
        if (next < 0) break;  // rim reached: outside, or stuck at a concavity
        cur = next;
    }
    return locate_exhaustive(p);
}

std::optional<MeshLocation> Mesh::locate_exhaustive(const Vec2& p) const {
    std::array<double, 3> bary;
    for (int t = 0; t < n_tris(); ++t) {
        if (bary_in_tri(t, p, bary)) return canonical_location(t, p);
    }
    return std::nullopt;
}

Vec2 Mesh::project_to_boundary(const Vec2& p) const {
    double best = std::numeric_limits<double>::max();
    Vec2 result = p;
    for (const auto& be : boundary_edges) {
        const Vec2& a = nodes[be.a];
        const Vec2& b = nodes[be.b];
        const Vec2 d = b - a;
        const double t = std::clamp((p - a).dot(d) / d.dot(d), 0.0, 1.0);
        const Vec2 q = a + t * d;
        const double dist = (p - q).norm();
        if (dist < best) {
            best = dist;
            result = q;
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

namespace {

// Deduplicating node pool: coordinates within 1e-9 are one node. A coarse
// cell hash keeps lookups O(1); candidate cells around the query are checked
// with the true tolerance so points straddling cell borders still merge.
class NodePool {
public:
    int add(const Vec2& p, std::vector<Vec2>& nodes) {
        const std::int64_t ci = cell(p.x);
        const std::int64_t cj = cell(p.y);
        for (std::int64_t di = -1; di <= 1; ++di) {
            for (std::int64_t dj = -1; dj <= 1; ++dj) {
                auto it = map_.find(key(ci + di, cj + dj));
                if (it == map_.end()) continue;
                for (int idx : it->second) {
                    if (std::abs(nodes[idx].x - p.x) <= tol_ && std::abs(nodes[idx].y - p.y) <= tol_)
                        return idx;
                }
            }
        }
        const int idx = static_cast<int>(nodes.size());
        nodes.push_back(p);
        map_[key(ci, cj)].push_back(idx);
        return idx;
    }

private:
    static constexpr double tol_ = 1e-9;
    static constexpr double cell_size_ = 1e-6;

    static std::int64_t cell(double x) { return static_cast<std::int64_t>(std::floor(x / cell_size_)); }
    static std::uint64_t key(std::int64_t i, std::int64_t j) {
        return (static_cast<std::uint64_t>(i) << 32) ^ static_cast<std::uint64_t>(j & 0xffffffff);
    }

    std::unordered_map<std::uint64_t, std::vector<int>> map_;
};

using TagClassifier = std::function<BoundaryTag(const Vec2&)>;

struct MeshBuilder {
    std::vector<Vec2> nodes;
    std::vector<std::array<int, 3>> tris;
    NodePool pool;

    int node(const Vec2& p) { return pool.add(p, nodes); }

    void tri(int a, int b, int c) { tris.push_back({a, b, c}); }

    // Quad corners in CCW order, split along the 00-11 diagonal.
    void quad(int v00, int v10, int v11, int v01) {
        tri(v00, v10, v11);
        tri(v00, v11, v01);
    }

    // Split along the shorter diagonal; better angles for skewed quads.
    void quad_shorter(int v00, int v10, int v11, int v01) {
        const double d0 = (nodes[v11] - nodes[v00]).norm();
        const double d1 = (nodes[v01] - nodes[v10]).norm();
        if (d0 <= d1) {
            quad(v00, v10, v11, v01);
        } else {
            tri(v00, v10, v01);
            tri(v10, v11, v01);
        }
    }

    // Derives rim edges from the triangle incidence, tags their midpoints,
    // and finalizes.
    Mesh finish(const TagClassifier& classify) {
        Mesh mesh;
        mesh.nodes = std::move(nodes);
        mesh.tris = std::move(tris);

        std::map<std::array<int, 2>, std::pair<int, int>> count;  // edge -> (count, owner tri dir info)
        std::map<std::array<int, 2>, std::array<int, 2>> directed;
        for (int t = 0; t < mesh.n_tris(); ++t) {
            for (int k = 0; k < 3; ++k) {
                const int a = mesh.tris[t][(k + 1) % 3];
                const int b = mesh.tris[t][(k + 2) % 3];
                const std::array<int, 2> key{std::min(a, b), std::max(a, b)};
                auto& c = count[key];
                c.first += 1;
                directed[key] = {a, b};
            }
        }
        for (const auto& [key, c] : count) {
            if (c.first != 1) continue;
            const auto dir = directed[key];
            const Vec2 mid = 0.5 * (mesh.nodes[dir[0]] + mesh.nodes[dir[1]]);
            mesh.boundary_edges.push_back({dir[0], dir[1], classify(mid)});
        }
        mesh.finalize();
        return mesh;
    }
};

}  // namespace

Mesh generate_unit_square(int n) {
    if (n < 1) throw MeshError("unit square subdivision must be >= 1");
    Mesh mesh;
    const auto idx = [n](int i, int j) { return j * (n + 1) + i; };
    mesh.nodes.reserve((n + 1) * (n + 1));
    for (int j = 0; j <= n; ++j)
        for (int i = 0; i <= n; ++i)
            mesh.nodes.push_back({static_cast<double>(i) / n, static_cast<double>(j) / n});
    mesh.tris.reserve(2 * n * n);
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
            const int v00 = idx(i, j), v10 = idx(i + 1, j);
            const int v11 = idx(i + 1, j + 1), v01 = idx(i, j + 1);
            mesh.tris.push_back({v00, v10, v11});
            mesh.tris.push_back({v00, v11, v01});
        }
    }
    for (int i = 0; i < n; ++i) {
        mesh.boundary_edges.push_back({idx(i, 0), idx(i + 1, 0), BoundaryTag::WallH});
        mesh.boundary_edges.push_back({idx(n, i), idx(n, i + 1), BoundaryTag::WallH});
        mesh.boundary_edges.push_back({idx(n - i, n), idx(n - i - 1, n), BoundaryTag::WallH});
        mesh.boundary_edges.push_back({idx(0, n - i), idx(0, n - i - 1), BoundaryTag::OutflowOne});
    }
    mesh.finalize();
    return mesh;
}

Mesh generate_bifurcation(double h) {
    if (!(h > 0.0) || h > 0.5) throw MeshError("bifurcation mesh size must be in (0, 0.5]");
    const int ny = std::max(2, static_cast<int>(std::lround(1.0 / h)));
    const int nx = std::max(2, static_cast<int>(std::lround(5.0 / h)));
    const int ns = std::max(2, static_cast<int>(std::lround(std::sqrt(2.0) / h)));

    MeshBuilder mb;

    // Inlet rectangle [0,5] x [-1/2,1/2].
    {
        std::vector<int> grid((nx + 1) * (ny + 1));
        for (int j = 0; j <= ny; ++j)
            for (int i = 0; i <= nx; ++i)
                grid[j * (nx + 1) + i] =
                    mb.node({5.0 * i / nx, -0.5 + static_cast<double>(j) / ny});
        for (int j = 0; j < ny; ++j)
            for (int i = 0; i < nx; ++i)
                mb.quad(grid[j * (nx + 1) + i], grid[j * (nx + 1) + i + 1],
                        grid[(j + 1) * (nx + 1) + i + 1], grid[(j + 1) * (nx + 1) + i]);
    }

    // Junction triangle A=(5,-1/2), B=(11/2,0), C=(5,1/2), uniform subdivision.
    {
        const Vec2 A{5.0, -0.5}, B{5.5, 0.0}, C{5.0, 0.5};
        const int k = ny;
        std::vector<int> v((k + 1) * (k + 2) / 2);
        const auto vid = [k](int a, int b) { return a * (k + 1) - a * (a - 1) / 2 + b; };
        for (int a = 0; a <= k; ++a)
            for (int b = 0; b <= k - a; ++b)
                v[vid(a, b)] = mb.node(A + (static_cast<double>(a) / k) * (B - A) +
                                       (static_cast<double>(b) / k) * (C - A));
        for (int a = 0; a < k; ++a) {
            for (int b = 0; b < k - a; ++b) {
                mb.tri(v[vid(a, b)], v[vid(a + 1, b)], v[vid(a, b + 1)]);
                if (b < k - a - 1)
                    mb.tri(v[vid(a + 1, b)], v[vid(a + 1, b + 1)], v[vid(a, b + 1)]);
            }
        }
    }

    // Two straight branches: cross-edge swept along the branch axis by (1,±1).
    const auto branch = [&](Vec2 a0, Vec2 a1, Vec2 d) {
        const int nt = ny;
        std::vector<int> grid((ns + 1) * (nt + 1));
        for (int j = 0; j <= nt; ++j)
            for (int i = 0; i <= ns; ++i)
                grid[j * (ns + 1) + i] =
                    mb.node(a0 + (static_cast<double>(j) / nt) * (a1 - a0) +
                            (static_cast<double>(i) / ns) * d);
        for (int j = 0; j < nt; ++j)
            for (int i = 0; i < ns; ++i)
                mb.quad(grid[j * (ns + 1) + i], grid[j * (ns + 1) + i + 1],
                        grid[(j + 1) * (ns + 1) + i + 1], grid[(j + 1) * (ns + 1) + i]);
    };
    branch({5.0, -0.5}, {5.5, 0.0}, {1.0, -1.0});
    branch({5.5, 0.0}, {5.0, 0.5}, {1.0, 1.0});

    return mb.finish([](const Vec2& m) {
        if (m.x < 1e-9) return BoundaryTag::InflowN;
        if (m.x > 6.0 - 1e-9 &&
            (std::abs(m.y - (m.x - 7.5)) < 1e-9 || std::abs(m.y + (m.x - 7.5)) < 1e-9))
            return BoundaryTag::OutflowOne;
        return BoundaryTag::WallH;
    });
}

Mesh generate_cylinder_channel(double h) {
    if (!(h > 0.0) || h > 0.15) throw MeshError("cylinder channel mesh size must be in (0, 0.15]");
    const double radius = 0.15;
    const int k = static_cast<int>(std::ceil(0.5 / h - 1e-9));
    const double hq = 0.5 / k;
    const int NX = 15 * k;  // x spans 7.5
    const int NY = 4 * k;   // y spans 2
    const auto gx = [&](int i) { return -1.5 + 7.5 * i / NX; };
    const auto gy = [&](int j) { return -1.0 + 2.0 * j / NY; };

    // Collar square half-width, snapped to the lattice.
    int m = static_cast<int>(std::lround(0.45 / hq));
    const int m_min = static_cast<int>(std::ceil((radius + 1.5 * hq) / hq));
    m = std::max(m, m_min);
    if (m * hq > 0.8) throw MeshError("cylinder channel mesh size leaves no room for the collar");
    const double a = m * hq;
    const int i0 = 3 * k;  // lattice index of x=0
    const int j0 = 2 * k;  // lattice index of y=0

    MeshBuilder mb;

    // Background lattice outside the collar square [-a,a]^2.
    const double tol = 1e-6 * hq;
    for (int j = 0; j < NY; ++j) {
        for (int i = 0; i < NX; ++i) {
            const bool inside = gx(i) >= -a - tol && gx(i + 1) <= a + tol &&
                                gy(j) >= -a - tol && gy(j + 1) <= a + tol;
            if (inside) continue;
            const int v00 = mb.node({gx(i), gy(j)});
            const int v10 = mb.node({gx(i + 1), gy(j)});
            const int v11 = mb.node({gx(i + 1), gy(j + 1)});
            const int v01 = mb.node({gx(i), gy(j + 1)});
            mb.quad(v00, v10, v11, v01);
        }
    }

    // Collar square perimeter lattice points, CCW by angle.
    std::vector<Vec2> rim;
    for (int j = j0 - m; j <= j0 + m; ++j) {
        for (int i = i0 - m; i <= i0 + m; ++i) {
            const bool on_rim = (i == i0 - m || i == i0 + m || j == j0 - m || j == j0 + m);
            if (on_rim) rim.push_back({gx(i), gy(j)});
        }
    }
    std::sort(rim.begin(), rim.end(), [](const Vec2& p, const Vec2& q) {
        return std::atan2(p.y, p.x) < std::atan2(q.y, q.x);
    });
    const int ntheta = static_cast<int>(rim.size());

    // O-grid annulus between the circle and the collar, graded radially so the
    // innermost layer matches the tangential spacing on the circle.
    const int nr = std::max(2, static_cast<int>(std::lround(1.5 * (a * std::sqrt(2.0) - radius) / hq)));
    const double t_in = 2.0 * M_PI * radius / ntheta;
    std::vector<int> ring((ntheta) * (nr + 1));
    for (int i = 0; i < ntheta; ++i) {
        const double theta = std::atan2(rim[i].y, rim[i].x);
        const Vec2 c{radius * std::cos(theta), radius * std::sin(theta)};
        const double d = rim[i].norm() - radius;
        const double w = std::clamp(t_in * nr / d, 0.25, 1.0);
        for (int l = 0; l <= nr; ++l) {
            const double x = static_cast<double>(l) / nr;
            const double f = x * (w + (1.0 - w) * x);
            ring[i * (nr + 1) + l] = mb.node(l == nr ? rim[i] : c + f * (rim[i] - c));
        }
    }
    for (int i = 0; i < ntheta; ++i) {
        const int ip = (i + 1) % ntheta;
        for (int l = 0; l < nr; ++l) {
            mb.quad_shorter(ring[i * (nr + 1) + l], ring[i * (nr + 1) + l + 1],
                            ring[ip * (nr + 1) + l + 1], ring[ip * (nr + 1) + l]);
        }
    }

    return mb.finish([](const Vec2& mid) {
        if (std::abs(mid.x + 1.5) < 1e-9) return BoundaryTag::InflowN;
        if (std::abs(mid.x - 6.0) < 1e-9) return BoundaryTag::OutflowOne;
        return BoundaryTag::WallH;
    });
}

// ---------------------------------------------------------------------------
// ASCII I/O
// ---------------------------------------------------------------------------

namespace {

struct LineReader {
    std::istream& in;
    int line_no = 0;

    // Next non-empty line with comments stripped, tokenized.
    bool next(std::vector<std::string>& tokens) {
        std::string line;
        while (std::getline(in, line)) {
            ++line_no;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            tokens.clear();
            std::istringstream ss(line);
            std::string tok;
            while (ss >> tok) tokens.push_back(tok);
            if (!tokens.empty()) return true;
        }
        return false;
    }

    [[noreturn]] void fail(const std::string& msg) const {
        throw MeshError("mesh parse error at line " + std::to_string(line_no) + ": " + msg);
    }
};

int parse_int(LineReader& lr, const std::string& s) {
    try {
        std::size_t pos = 0;
        const int v = std::stoi(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        lr.fail("expected integer, got '" + s + "'");
    }
}

double parse_double(LineReader& lr, const std::string& s) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        lr.fail("expected number, got '" + s + "'");
    }
}

}  // namespace

Mesh load_mesh(std::istream& in) {
    LineReader lr{in};
    std::vector<std::string> tok;

    if (!lr.next(tok)) lr.fail("empty input");
    if (tok.size() != 2 || tok[0] != "cbcflow-mesh" || tok[1] != "1")
        lr.fail("expected header 'cbcflow-mesh 1'");

    Mesh mesh;
    if (!lr.next(tok) || tok.size() != 2 || tok[0] != "nodes") lr.fail("expected 'nodes <count>'");
    const int nv = parse_int(lr, tok[1]);
    if (nv < 0) lr.fail("negative node count");
    mesh.nodes.reserve(nv);
    for (int i = 0; i < nv; ++i) {
        if (!lr.next(tok) || tok.size() != 2) lr.fail("expected 'x y' node line");
        mesh.nodes.push_back({parse_double(lr, tok[0]), parse_double(lr, tok[1])});
    }

    if (!lr.next(tok) || tok.size() != 2 || tok[0] != "triangles") lr.fail("expected 'triangles <count>'");
    const int nt = parse_int(lr, tok[1]);
    if (nt < 0) lr.fail("negative triangle count");
    mesh.tris.reserve(nt);
    for (int t = 0; t < nt; ++t) {
        if (!lr.next(tok) || tok.size() != 3) lr.fail("expected 'i j k' triangle line");
        std::array<int, 3> tri;
        for (int k = 0; k < 3; ++k) {
            tri[k] = parse_int(lr, tok[k]);
            if (tri[k] < 0 || tri[k] >= nv) lr.fail("triangle node index out of range");
        }
        mesh.tris.push_back(tri);
    }

    if (!lr.next(tok) || tok.size() != 2 || tok[0] != "boundary") lr.fail("expected 'boundary <count>'");
    const int nb = parse_int(lr, tok[1]);
    if (nb < 0) lr.fail("negative boundary edge count");
    mesh.boundary_edges.reserve(nb);
    for (int b = 0; b < nb; ++b) {
        if (!lr.next(tok) || tok.size() != 3) lr.fail("expected 'i j tag' boundary line");
        BoundaryEdge be;
        be.a = parse_int(lr, tok[0]);
        be.b = parse_int(lr, tok[1]);
        if (be.a < 0 || be.a >= nv || be.b < 0 || be.b >= nv) lr.fail("boundary node index out of range");
        try {
            be.tag = boundary_tag_from_string(tok[2]);
        } catch (const MeshError& e) {
            lr.fail(e.what());
        }
        mesh.boundary_edges.push_back(be);
    }
    if (lr.next(tok)) lr.fail("unexpected trailing content");

    mesh.finalize();
    return mesh;
}

Mesh load_mesh_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MeshError("cannot open mesh file '" + path + "'");
    try {
        return load_mesh(in);
    } catch (const MeshError& e) {
        throw MeshError(path + ": " + e.what());
    }
}

void save_mesh(const Mesh& mesh, std::ostream& out) {
    char buf[64];
    out << "cbcflow-mesh 1\n";
    out << "nodes " << mesh.n_nodes() << "\n";
    for (const auto& p : mesh.nodes) {
        std::snprintf(buf, sizeof(buf), "%.17g %.17g\n", p.x, p.y);
        out << buf;
    }
    out << "triangles " << mesh.n_tris() << "\n";
    for (const auto& t : mesh.tris) out << t[0] << " " << t[1] << " " << t[2] << "\n";
    out << "boundary " << mesh.boundary_edges.size() << "\n";
    for (const auto& be : mesh.boundary_edges)
        out << be.a << " " << be.b << " " << to_string(be.tag) << "\n";
}

void save_mesh_file(const Mesh& mesh, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw MeshError("cannot open '" + path + "' for writing");
    save_mesh(mesh, out);
    out.flush();
    if (!out) throw MeshError("failed writing mesh to '" + path + "'");
}

}  // namespace cbcflow
