#include "cbcflow/output.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace cbcflow {

void atomic_write_file(const std::string& path, const std::string& content) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw SolveError("cannot open " + tmp.string() + " for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) throw SolveError("short write to " + tmp.string());
    }
    fs::rename(tmp, target);
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::uint64_t fnv1a_hash(std::string_view text) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::string fnv1a_hex(std::string_view text) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a_hash(text)));
    return buf;
}

std::string vtk_unstructured(const FESystem& fes, std::span<const double> u,
                             std::span<const double> p, std::span<const double> psi) {
    const Mesh& m = fes.mesh();
    std::ostringstream out;
    out << "# vtk DataFile Version 3.0\n";
    out << "cbcflow fields\n";
    out << "ASCII\n";
    out << "DATASET UNSTRUCTURED_GRID\n";
    out << "POINTS " << fes.n_scalar() << " double\n";
    for (int s = 0; s < fes.n_scalar(); ++s) {
        const Vec2 x = fes.snode_pos(s);
        out << format_double(x.x) << ' ' << format_double(x.y) << " 0\n";
    }
    out << "CELLS " << m.n_tris() << ' ' << m.n_tris() * 7 << '\n';
    // Quadratic triangle ordering: corners, then midsides 0-1, 1-2, 2-0
    // (locals 5, 3, 4: midside k sits opposite vertex k).
    for (int t = 0; t < m.n_tris(); ++t) {
        out << 6;
        for (int local : {0, 1, 2, 5, 3, 4}) out << ' ' << fes.tri_snode(t, local);
        out << '\n';
    }
    out << "CELL_TYPES " << m.n_tris() << '\n';
    for (int t = 0; t < m.n_tris(); ++t) out << "22\n";
    out << "POINT_DATA " << fes.n_scalar() << '\n';
    out << "VECTORS velocity double\n";
    for (int s = 0; s < fes.n_scalar(); ++s) {
        out << format_double(u[FESystem::u_dof(s, 0)]) << ' '
            << format_double(u[FESystem::u_dof(s, 1)]) << " 0\n";
    }
    out << "SCALARS pressure double 1\nLOOKUP_TABLE default\n";
    for (int s = 0; s < fes.n_scalar(); ++s) {
        if (s < m.n_nodes()) {
            out << format_double(p[s]) << '\n';
        } else {
            const auto& e = m.edges[s - m.n_nodes()];
            out << format_double(0.5 * (p[e[0]] + p[e[1]])) << '\n';
        }
    }
    if (!psi.empty()) {
        out << "SCALARS stream_function double 1\nLOOKUP_TABLE default\n";
        for (int s = 0; s < fes.n_scalar(); ++s) out << format_double(psi[s]) << '\n';
    }
    return out.str();
}

void write_vtk_file(const std::string& path, const FESystem& fes, std::span<const double> u,
                    std::span<const double> p, std::span<const double> psi) {
    atomic_write_file(path, vtk_unstructured(fes, u, p, psi));
}

void save_state_file(const std::string& path, std::span<const double> u,
                     std::span<const double> p) {
    std::ostringstream out;
    out << "cbcflow-state 1\n" << u.size() << ' ' << p.size() << '\n';
    for (double v : u) out << format_double(v) << '\n';
    for (double v : p) out << format_double(v) << '\n';
    atomic_write_file(path, out.str());
}

std::pair<std::vector<double>, std::vector<double>> load_state_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SolveError("cannot open state file " + path);
    std::string magic, version;
    in >> magic >> version;
    if (magic != "cbcflow-state" || version != "1")
        throw SolveError("not a cbcflow-state file: " + path);
    std::size_t nu = 0, np = 0;
    in >> nu >> np;
    std::vector<double> u(nu), p(np);
    for (double& v : u) in >> v;
    for (double& v : p) in >> v;
    if (!in) throw SolveError("truncated state file " + path);
    return {std::move(u), std::move(p)};
}

std::string csv_row(const std::vector<std::string>& cells) {
    std::string out;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out += ',';
        out += cells[i];
    }
    out += '\n';
    return out;
}

}  // namespace cbcflow
