#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cbcflow/output.hpp"
#include "cbcflow/scenario.hpp"
#include "doctest.h"

using namespace cbcflow;
namespace fs = std::filesystem;

namespace {

// Fresh per-case scratch directory under the system temp root.
std::string scratch_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("cbcflow_scenario_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(bool(in));
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

std::vector<double> parse_numbers(const std::string& line) {
    std::istringstream in(line);
    std::vector<double> out;
    double v;
    while (in >> v) out.push_back(v);
    return out;
}

int count_lines(const std::string& text) {
    return static_cast<int>(split_lines(text).size());
}

}  // namespace

TEST_CASE("atomic file writer creates parents and leaves no temp files") {
    const std::string dir = scratch_dir("atomic");
    const std::string path = dir + "/a/b/data.txt";
    atomic_write_file(path, "hello\n");
    CHECK(read_file(path) == "hello\n");
    atomic_write_file(path, "replaced\n");
    CHECK(read_file(path) == "replaced\n");
    int entries = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir + "/a/b")) ++entries;
    CHECK(entries == 1);  // no .tmp leftovers
}

TEST_CASE("double formatting round-trips bitwise") {
    const std::vector<double> samples = {0.1, 1.0 / 3.0, 1e-300,        -2.5e17,
                                         0.0, 1.0 / 70,  6.02214076e23, -0.0,
                                         3.14159, 0.04999999999999};
    for (double v : samples) {
        const double back = std::stod(format_double(v));
        CHECK(std::memcmp(&back, &v, sizeof v) == 0);
    }
}

TEST_CASE("fnv1a matches the published 64-bit test vectors") {
    CHECK(fnv1a_hash("") == 0xcbf29ce484222325ull);
    CHECK(fnv1a_hash("a") == 0xaf63dc4c8601ec8cull);
    CHECK(fnv1a_hash("foobar") == 0x85944171f73967e8ull);
    CHECK(fnv1a_hex("") == "cbf29ce484222325");
    CHECK(fnv1a_hex("foobar") == "85944171f73967e8");
    CHECK(fnv1a_hash("ab") != fnv1a_hash("ba"));
}

TEST_CASE("csv rows join cells with commas") {
    CHECK(csv_row({"a", "b", "c"}) == "a,b,c\n");
    CHECK(csv_row({"single"}) == "single\n");
    CHECK(csv_row({"", ""}) == ",\n");
}

TEST_CASE("state files round-trip bitwise and reject malformed input") {
    const std::string dir = scratch_dir("state");
    std::vector<double> u(17), p(5);
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = std::sin(3.7 * i) * 1e-7 + i;
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::cos(2.1 * i) / 3.0;
    save_state_file(dir + "/s.state", u, p);
    const auto [u2, p2] = load_state_file(dir + "/s.state");
    REQUIRE(u2.size() == u.size());
    REQUIRE(p2.size() == p.size());
    for (std::size_t i = 0; i < u.size(); ++i) CHECK(u2[i] == u[i]);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(p2[i] == p[i]);

    atomic_write_file(dir + "/bad.state", "not-a-state 1\n2 2\n");
    CHECK_THROWS_AS(load_state_file(dir + "/bad.state"), SolveError);
    atomic_write_file(dir + "/trunc.state", "cbcflow-state 1\n4 2\n1.0\n2.0\n");
    CHECK_THROWS_AS(load_state_file(dir + "/trunc.state"), SolveError);
    CHECK_THROWS_AS(load_state_file(dir + "/missing.state"), SolveError);
}

TEST_CASE("vtk output lists quadratic cells with consistent geometry and data") {
    const Mesh m = generate_unit_square(2);
    const FESystem fes(m);
    std::vector<double> u(fes.n_u()), p(fes.n_p()), psi(fes.n_scalar());
    for (int s = 0; s < fes.n_scalar(); ++s) {
        u[FESystem::u_dof(s, 0)] = 0.01 * s + 1.0;
        u[FESystem::u_dof(s, 1)] = -0.5 * s;
        psi[s] = 2.0 * s;
    }
    for (int i = 0; i < fes.n_p(); ++i) p[i] = 0.25 * i - 1.0;

    const std::string text = vtk_unstructured(fes, u, p, psi);
    const auto lines = split_lines(text);
    REQUIRE(lines.size() > 10);
    CHECK(lines[0] == "# vtk DataFile Version 3.0");
    CHECK(lines[2] == "ASCII");
    CHECK(lines[3] == "DATASET UNSTRUCTURED_GRID");

    // Locate sections.
    auto find_line = [&](const std::string& prefix) {
        for (std::size_t i = 0; i < lines.size(); ++i)
            if (lines[i].rfind(prefix, 0) == 0) return i;
        REQUIRE(false);
        return std::size_t(0);
    };
    const std::size_t lp = find_line("POINTS");
    const std::size_t lc = find_line("CELLS");
    const std::size_t lt = find_line("CELL_TYPES");
    const std::size_t lv = find_line("VECTORS velocity");
    const std::size_t ls = find_line("SCALARS pressure");
    const std::size_t lpsi = find_line("SCALARS stream_function");

    const int ns = fes.n_scalar();
    CHECK(parse_numbers(lines[lp].substr(6))[0] == ns);

    // Points are 3D with zero z; velocity rows pad to three components.
    std::vector<Vec2> pts(ns);
    for (int s = 0; s < ns; ++s) {
        const auto xyz = parse_numbers(lines[lp + 1 + s]);
        REQUIRE(xyz.size() == 3);
        CHECK(xyz[2] == 0.0);
        pts[s] = {xyz[0], xyz[1]};
        const auto vel = parse_numbers(lines[lv + 1 + s]);
        REQUIRE(vel.size() == 3);
        CHECK(vel[0] == u[FESystem::u_dof(s, 0)]);
        CHECK(vel[1] == u[FESystem::u_dof(s, 1)]);
        CHECK(vel[2] == 0.0);
    }

    // Quadratic triangles: six indices, slots 3..5 geometrically the edge
    // midpoints of (0,1), (1,2), (2,0); pressure there is the endpoint mean.
    std::vector<double> pval(ns, 0.0);
    for (int s = 0; s < ns; ++s) pval[s] = parse_numbers(lines[ls + 2 + s])[0];
    for (int i = 0; i < fes.n_p(); ++i) CHECK(pval[i] == p[i]);
    for (int t = 0; t < m.n_tris(); ++t) {
        const auto cell = parse_numbers(lines[lc + 1 + t]);
        REQUIRE(cell.size() == 7);
        CHECK(cell[0] == 6);
        const int type = static_cast<int>(parse_numbers(lines[lt + 1 + t])[0]);
        CHECK(type == 22);
        for (int e = 0; e < 3; ++e) {
            const int a = static_cast<int>(cell[1 + e]);
            const int b = static_cast<int>(cell[1 + (e + 1) % 3]);
            const int mid = static_cast<int>(cell[4 + e]);
            CHECK(pts[mid].x == doctest::Approx(0.5 * (pts[a].x + pts[b].x)).epsilon(1e-14));
            CHECK(pts[mid].y == doctest::Approx(0.5 * (pts[a].y + pts[b].y)).epsilon(1e-14));
            CHECK(pval[mid] == doctest::Approx(0.5 * (pval[a] + pval[b])).epsilon(1e-14));
        }
    }

    for (int s = 0; s < ns; ++s) CHECK(parse_numbers(lines[lpsi + 2 + s])[0] == psi[s]);

    // Omitting psi drops the section.
    const std::string bare = vtk_unstructured(fes, u, p);
    CHECK(bare.find("stream_function") == std::string::npos);
    CHECK(bare.find("SCALARS pressure") != std::string::npos);
}

TEST_CASE("presets pin the published parameter sets") {
    const std::vector<double> moderate = {1.0, 1.0 / 10, 1.0 / 20, 1.0 / 30, 1.0 / 40};
    const std::vector<double> low = {1.0 / 50, 1.0 / 60, 1.0 / 70, 1.0 / 80, 1.0 / 90};

    SUBCASE("fig2 pair") {
        for (const char* name : {"fig2_cbc", "fig2_dn"}) {
            const SweepSpec s = load_preset(name);
            CHECK(s.base.geometry.kind == GeometrySpec::Kind::UnitSquare);
            CHECK(s.base.geometry.n == 64);
            CHECK(s.base.forcing == "sin_sin");
            CHECK(s.base.inflow == "zero");
            CHECK(s.base.mode == "stationary");
            CHECK(s.nus == moderate);
            REQUIRE(s.kinds.size() == 1);
        }
        CHECK(load_preset("fig2_cbc").kinds[0] == OutflowKind::Cbc);
        CHECK(load_preset("fig2_dn").kinds[0] == OutflowKind::Dn);
    }
    SUBCASE("fig3 pair") {
        const SweepSpec c = load_preset("fig3_cbc");
        CHECK(c.nus == low);
        CHECK(c.kinds == std::vector<OutflowKind>{OutflowKind::Cbc});
        CHECK(c.base.newton.guess == NewtonConfig::Guess::Auto);
        const SweepSpec d = load_preset("fig3_dn");
        CHECK(d.nus == low);
        CHECK(d.kinds == std::vector<OutflowKind>{OutflowKind::Dn});
        CHECK(d.base.newton.guess == NewtonConfig::Guess::Zero);
        CHECK(d.base.geometry.n == 64);
    }
    SUBCASE("fig4 sweep covers both conditions over the full range") {
        const SweepSpec s = load_preset("fig4_sweep");
        std::vector<double> all = moderate;
        all.insert(all.end(), low.begin(), low.end());
        CHECK(s.nus == all);
        CHECK(s.kinds == std::vector<OutflowKind>{OutflowKind::Cbc, OutflowKind::Dn});
        CHECK(s.base.mode == "stationary");
    }
    SUBCASE("fig6 bifurcation") {
        const SweepSpec s = load_preset("fig6_all");
        CHECK(s.base.geometry.kind == GeometrySpec::Kind::Bifurcation);
        CHECK(s.base.geometry.h == 0.05);
        CHECK(s.base.inflow == "poiseuille_half");
        CHECK(s.base.forcing == "zero");
        CHECK(s.nus == std::vector<double>{1.0 / 250, 1.0 / 1000});
        CHECK(s.kinds ==
              std::vector<OutflowKind>{OutflowKind::Cbc, OutflowKind::Dn, OutflowKind::Ddn});
        CHECK(s.base.stream_function);
    }
    SUBCASE("fig7 cylinder transient") {
        const SweepSpec s = load_preset("fig7_all");
        CHECK(s.base.geometry.kind == GeometrySpec::Kind::Cylinder);
        CHECK(s.base.geometry.h == 0.04);
        CHECK(s.base.inflow == "poiseuille_unit");
        CHECK(s.base.mode == "transient");
        CHECK(s.base.time.dt == 0.01);
        CHECK(s.base.time.t_final == 24.0);
        CHECK(s.base.time.capture_times == std::vector<double>{4.0, 24.0});
        CHECK(s.base.initial == "lifting");
        CHECK(s.nus == std::vector<double>{1.0 / 250});
        CHECK(s.kinds.size() == 3);
    }
    SUBCASE("mms study") {
        const SweepSpec s = load_preset("mms_convergence");
        CHECK(s.base.mode == "mms");
        CHECK(s.mms_refinements == std::vector<int>{8, 16, 32});
        CHECK(s.nus == std::vector<double>{1.0});
        CHECK(s.kinds == std::vector<OutflowKind>{OutflowKind::Cbc});
    }
    SUBCASE("unknown preset lists the available names") {
        CHECK_THROWS_WITH_AS(load_preset("fig9"),
                             doctest::Contains("available: fig2_cbc"), ConfigError);
        CHECK(preset_names().size() == 8);
    }
}

TEST_CASE("config text parses sections, comments, fractions, and lists") {
    const std::string text =
        "# driven square, two conditions\n"
        "[scenario]\n"
        "name = demo\n"
        "geometry = unit_square\n"
        "n = 12\n"
        "forcing = sin_sin\n"
        "nu_list = 1, 1/10, 0.025\n"
        "outflow_list = cbc, ddn\n"
        "mode = stationary\n"
        "\n"
        "[newton]\n"
        "max_iterations = 30\n"
        "guess = continuation\n"
        "damping = 0.8\n"
        "\n"
        "[output]\n"
        "workers = 3\n"
        "vtk = false\n";
    const SweepSpec s = parse_scenario_text(text, "fallback");
    CHECK(s.base.name == "demo");
    CHECK(s.base.geometry.n == 12);
    CHECK(s.nus == std::vector<double>{1.0, 0.1, 0.025});
    CHECK(s.kinds == std::vector<OutflowKind>{OutflowKind::Cbc, OutflowKind::Ddn});
    CHECK(s.base.newton.max_iters == 30);
    CHECK(s.base.newton.guess == NewtonConfig::Guess::Continuation);
    CHECK(s.base.newton.damping == 0.8);
    CHECK(s.workers == 3);
    CHECK_FALSE(s.base.write_vtk);
    CHECK(s.base.write_states);  // untouched default

    CHECK(parse_scenario_text("", "x").base.name == "x");
}

TEST_CASE("config errors carry line numbers and context") {
    CHECK_THROWS_WITH_AS(parse_scenario_text("[scenario]\nbogus = 1\n", "t"),
                         doctest::Contains("line 2"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_scenario_text("[scenario]\nbogus = 1\n", "t"),
                         doctest::Contains("unknown key 'bogus'"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_scenario_text("[nope]\na = 1\n", "t"),
                         doctest::Contains("unknown section"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_scenario_text("a = 1\n", "t"),
                         doctest::Contains("before any [section]"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_scenario_text("[scenario]\njust words\n", "t"),
                         doctest::Contains("expected 'key = value'"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_scenario_text("[scenario\nn = 4\n", "t"),
                         doctest::Contains("malformed section"), ConfigError);
    CHECK_THROWS_AS(parse_scenario_text("[scenario]\nn = four\n", "t"), ConfigError);
    CHECK_THROWS_AS(parse_scenario_text("[scenario]\nnu_list = 1/0\n", "t"), ConfigError);
    CHECK_THROWS_AS(parse_scenario_text("[scenario]\nnu_list =\n", "t"), ConfigError);
    CHECK_THROWS_AS(parse_scenario_text("[scenario]\ngeometry = sphere\n", "t"), ConfigError);
    CHECK_THROWS_AS(parse_scenario_text("[newton]\nguess = hope\n", "t"), ConfigError);
    CHECK_THROWS_AS(parse_scenario_text("[output]\nvtk = sometimes\n", "t"), ConfigError);
    CHECK_THROWS_AS(parse_scenario_text("[scenario]\noutflow_list = cbc, abc\n", "t"),
                    ConfigError);
}

TEST_CASE("serialization round-trips byte for byte") {
    for (const auto& name : preset_names()) {
        const SweepSpec spec = load_preset(name);
        const std::string text = serialize_config(spec);
        const SweepSpec back = parse_scenario_text(text, "ignored");
        const std::string again = serialize_config(back);
        CHECK(text == again);
        CHECK(fnv1a_hex(text) == fnv1a_hex(again));
        CHECK(back.base.name == spec.base.name);
        CHECK(back.nus == spec.nus);
        CHECK(back.kinds == spec.kinds);
        CHECK(back.base.mode == spec.base.mode);
        CHECK(back.base.newton.guess == spec.base.newton.guess);
    }
}

TEST_CASE("validation rejects out-of-range parameters") {
    auto base = [] { return load_preset("fig2_cbc"); };

    SweepSpec s = base();
    s.nus = {-1.0};
    CHECK_THROWS_WITH_AS(validate(s), doctest::Contains("viscosity must be positive"),
                         ConfigError);
    s = base();
    s.nus = {0.0};
    CHECK_THROWS_AS(validate(s), ConfigError);
    s = base();
    s.nus.clear();
    CHECK_THROWS_AS(validate(s), ConfigError);
    s = base();
    s.kinds.clear();
    CHECK_THROWS_AS(validate(s), ConfigError);
    s = base();
    s.workers = 0;
    CHECK_THROWS_AS(validate(s), ConfigError);
    s = base();
    s.base.geometry.n = 0;
    CHECK_THROWS_AS(validate(s), ConfigError);
    s = base();
    s.base.geometry.kind = GeometrySpec::Kind::Cylinder;
    s.base.geometry.h = -0.1;
    CHECK_THROWS_AS(validate(s), ConfigError);
    s = base();
    s.base.geometry.kind = GeometrySpec::Kind::File;
    s.base.geometry.path = "";
    CHECK_THROWS_AS(validate(s), ConfigError);
    s = base();
    s.base.forcing = "vortex";
    CHECK_THROWS_AS(validate(s), ConfigError);
    s = base();
    s.base.inflow = "plug";
    CHECK_THROWS_AS(validate(s), ConfigError);
    s = base();
    s.base.mode = "quasi";
    CHECK_THROWS_AS(validate(s), ConfigError);
    s = base();
    s.base.newton.damping = 0.0;
    CHECK_THROWS_AS(validate(s), ConfigError);
    s = base();
    s.base.newton.damping = 1.5;
    CHECK_THROWS_AS(validate(s), ConfigError);
    s = base();
    s.base.newton.max_iters = 0;
    CHECK_THROWS_AS(validate(s), ConfigError);

    s = load_preset("fig7_all");
    s.base.time.dt = -0.01;
    CHECK_THROWS_AS(validate(s), ConfigError);
    s = load_preset("fig7_all");
    s.base.time.t_final = 0.001;  // below one step
    CHECK_THROWS_AS(validate(s), ConfigError);
    s = load_preset("fig7_all");
    s.base.initial = "warm";
    CHECK_THROWS_AS(validate(s), ConfigError);

    s = load_preset("mms_convergence");
    s.kinds = {OutflowKind::Dn};
    CHECK_THROWS_AS(validate(s), ConfigError);
    s = load_preset("mms_convergence");
    s.mms_refinements = {8};
    CHECK_THROWS_AS(validate(s), ConfigError);
    s = load_preset("mms_convergence");
    s.mms_refinements = {8, 8};
    CHECK_THROWS_AS(validate(s), ConfigError);

    CHECK_NOTHROW(validate(load_preset("fig6_all")));
    CHECK_NOTHROW(validate(load_preset("fig7_all")));
}

TEST_CASE("overrides rewrite individual entries") {
    SweepSpec s = load_preset("fig2_cbc");
    apply_override(s, "scenario.n=8");
    CHECK(s.base.geometry.n == 8);
    apply_override(s, "scenario.nu_list = 1/2, 1/4");
    CHECK(s.nus == std::vector<double>{0.5, 0.25});
    apply_override(s, "newton.guess=zero");
    CHECK(s.base.newton.guess == NewtonConfig::Guess::Zero);
    apply_override(s, "scenario.outflow_list=ddn");
    CHECK(s.kinds == std::vector<OutflowKind>{OutflowKind::Ddn});
    apply_override(s, "output.workers=4");
    CHECK(s.workers == 4);
    apply_override(s, "time.dt=0.05");
    CHECK(s.base.time.dt == 0.05);

    CHECK_THROWS_WITH_AS(apply_override(s, "scenario.n"),
                         doctest::Contains("section.key=value"), ConfigError);
    CHECK_THROWS_AS(apply_override(s, "n=8"), ConfigError);
    CHECK_THROWS_AS(apply_override(s, "mesh.n=8"), ConfigError);
}

TEST_CASE("geometry builder covers the generators and mesh files") {
    const std::string dir = scratch_dir("geom");
    CHECK(build_geometry({GeometrySpec::Kind::UnitSquare, 3, 0.0, ""}).n_nodes() == 16);
    const Mesh bif = build_geometry({GeometrySpec::Kind::Bifurcation, 0, 0.5, ""});
    CHECK(bif.n_tris() > 0);

    const Mesh saved = generate_unit_square(3);
    save_mesh_file(saved, dir + "/m.msh");
    const Mesh loaded = build_geometry({GeometrySpec::Kind::File, 0, 0.0, dir + "/m.msh"});
    CHECK(loaded.n_nodes() == saved.n_nodes());
    CHECK(loaded.n_tris() == saved.n_tris());
    CHECK_THROWS_AS(build_geometry({GeometrySpec::Kind::File, 0, 0.0, dir + "/absent.msh"}),
                    MeshError);
}

TEST_CASE("stationary sweep produces manifest, gamma table, and run artifacts") {
    const std::string dir = scratch_dir("run_stationary");
    SweepSpec spec = load_preset("fig2_cbc");
    apply_override(spec, "scenario.n=6");
    apply_override(spec, "scenario.nu_list=1, 1/10");

    const RunManifest man = run_sweep(spec, dir);
    CHECK_FALSE(man.any_failure);
    REQUIRE(man.points.size() == 2);
    CHECK(man.mesh.nodes == 49);
    CHECK(man.mesh.tris == 72);
    CHECK(man.mesh.area == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(man.mesh.outflow_edges == 6);
    CHECK(man.mesh.inflow_edges == 0);
    CHECK(man.mesh.wall_edges == 18);

    for (const auto& p : man.points) {
        CHECK(p.converged);
        REQUIRE(p.residual_history.size() >= 2);
        CHECK(p.residual_history.back() < 1e-10 * (1 + p.residual_history.front()));
        CHECK(p.has_gamma);
        CHECK(p.norms.l2_u > 0.0);
        CHECK(p.norms.div_residual < 1e-9);
        CHECK(fs::exists(dir + "/" + p.dir + "/newton.csv"));
        CHECK(fs::exists(dir + "/" + p.state_file));
        CHECK(fs::exists(dir + "/" + p.vtk_file));
    }
    CHECK(man.points[0].nu == 1.0);
    CHECK(man.points[1].nu == 0.1);

    // Reload through the manifest reader and compare the essentials.
    const RunManifest back = load_run_manifest(dir);
    CHECK(back.name == man.name);
    CHECK(back.config_hash == man.config_hash);
    CHECK(back.config_hash == fnv1a_hex(back.config_text));
    CHECK(back.any_failure == man.any_failure);
    REQUIRE(back.points.size() == man.points.size());
    for (std::size_t i = 0; i < man.points.size(); ++i) {
        CHECK(back.points[i].nu == man.points[i].nu);
        CHECK(back.points[i].kind == man.points[i].kind);
        CHECK(back.points[i].converged == man.points[i].converged);
        CHECK(back.points[i].iterations == man.points[i].iterations);
        CHECK(back.points[i].gamma.x == man.points[i].gamma.x);
        CHECK(back.points[i].gamma.y == man.points[i].gamma.y);
        CHECK(back.points[i].residual_history == man.points[i].residual_history);
        CHECK(back.points[i].norms.l2_u == man.points[i].norms.l2_u);
    }
    CHECK(back.mesh.nodes == man.mesh.nodes);
    CHECK(back.mesh.area == man.mesh.area);

    // State files round-trip to correctly sized coefficient vectors.
    const auto [u, p] = load_state_file(dir + "/" + man.points[0].state_file);
    const Mesh mesh = build_geometry(spec.base.geometry);
    const FESystem fes(mesh);
    CHECK(static_cast<int>(u.size()) == fes.n_u());
    CHECK(static_cast<int>(p.size()) == fes.n_p());

    // gamma.csv carries the fig-4 abscissa: 0 at nu=1, else 1/(10 nu).
    const auto lines = split_lines(read_file(dir + "/gamma.csv"));
    REQUIRE(lines.size() == 3);
    CHECK(lines[0] == "x,gamma_x,gamma_y,condition,nu,converged");
    const auto row1 = parse_numbers([&] {
        std::string s = lines[1];
        for (char& c : s)
            if (c == ',') c = ' ';
        return s.substr(0, s.find("cbc"));
    }());
    CHECK(row1[0] == 0.0);
    CHECK(row1[1] == man.points[0].gamma.x);
    std::string s2 = lines[2];
    CHECK(s2.substr(0, 2) == "1,");  // x = 1/(10 * 0.1)
    CHECK(s2.find(",cbc,") != std::string::npos);
    CHECK(s2.back() == '1');  // converged flag
}

TEST_CASE("identical sweeps produce bit-identical outputs") {
    const std::string d1 = scratch_dir("det_a");
    const std::string d2 = scratch_dir("det_b");
    SweepSpec spec = load_preset("fig2_dn");
    apply_override(spec, "scenario.n=6");
    apply_override(spec, "scenario.nu_list=1/10");
    run_sweep(spec, d1);
    run_sweep(spec, d2);
    for (const char* f : {"gamma.csv", "manifest.json", "config.txt", "p00_dn/newton.csv",
                          "p00_dn/solution.state", "p00_dn/solution.vtk"}) {
        CAPTURE(f);
        CHECK(read_file(d1 + "/" + f) == read_file(d2 + "/" + f));
    }
}

TEST_CASE("sweeps record failed points without aborting") {
    const std::string dir = scratch_dir("run_failure");
    SweepSpec spec = load_preset("fig3_dn");
    apply_override(spec, "scenario.n=16");
    apply_override(spec, "scenario.nu_list=1/10, 0.002");
    apply_override(spec, "newton.max_iterations=8");
    apply_override(spec, "scenario.stream_function=false");

    const RunManifest man = run_sweep(spec, dir);
    CHECK(man.any_failure);
    REQUIRE(man.points.size() == 2);
    CHECK(man.points[0].converged);
    CHECK_FALSE(man.points[1].converged);
    CHECK_FALSE(man.points[1].error.empty());
    CHECK(man.points[1].state_file.empty());
    CHECK_FALSE(man.points[1].has_gamma);
    CHECK(fs::exists(dir + "/p01_dn/newton.csv"));            // history still kept
    CHECK_FALSE(fs::exists(dir + "/p01_dn/solution.state"));  // no bogus solution
    CHECK(fs::exists(dir + "/" + man.points[0].state_file));

    const auto lines = split_lines(read_file(dir + "/gamma.csv"));
    REQUIRE(lines.size() == 3);
    CHECK(lines[2].find("nan") != std::string::npos);
    CHECK(lines[2].back() == '0');

    const RunManifest back = load_run_manifest(dir);
    CHECK(back.any_failure);
    CHECK(back.points[1].error == man.points[1].error);
}

TEST_CASE("transient sweep captures states and step diagnostics") {
    const std::string dir = scratch_dir("run_transient");
    SweepSpec spec = load_preset("fig2_cbc");
    apply_override(spec, "scenario.n=6");
    apply_override(spec, "scenario.nu_list=1/2");
    apply_override(spec, "scenario.mode=transient");
    apply_override(spec, "time.dt=0.01");
    apply_override(spec, "time.t_final=0.05");
    apply_override(spec, "time.captures=0, 0.05");
    apply_override(spec, "time.initial=zero");

    const RunManifest man = run_sweep(spec, dir);
    CHECK_FALSE(man.any_failure);
    REQUIRE(man.points.size() == 1);
    const PointOutcome& p = man.points[0];
    CHECK(p.converged);
    CHECK(p.iterations == 5);
    CHECK(p.final_time == doctest::Approx(0.05).epsilon(1e-12));
    REQUIRE(p.captures.size() == 2);
    CHECK(p.captures[0].step == 0);
    CHECK(p.captures[0].t == 0.0);
    CHECK(p.captures[1].step == 5);
    CHECK(p.captures[1].t == doctest::Approx(0.05).epsilon(1e-12));
    for (const auto& c : p.captures) {
        CHECK(fs::exists(dir + "/" + c.vtk));
        CHECK(fs::exists(dir + "/" + c.state));
    }
    CHECK(fs::exists(dir + "/" + p.state_file));
    CHECK(p.has_gamma);
    CHECK(p.norms.l2_u > 0.0);

    const auto diag = split_lines(read_file(dir + "/p00_cbc/diagnostics.csv"));
    REQUIRE(diag.size() == 6);  // header + five steps
    CHECK(diag[0] == "step,t,div_residual,outflow_flux,step_change");

    // The t=0 capture is the zero start.
    const auto [u0, p0] = load_state_file(dir + "/" + p.captures[0].state);
    for (double v : u0) CHECK(v == 0.0);

    // No gamma.csv for transient sweeps.
    CHECK_FALSE(fs::exists(dir + "/gamma.csv"));
    const RunManifest back = load_run_manifest(dir);
    REQUIRE(back.points[0].captures.size() == 2);
    CHECK(back.points[0].captures[1].state == p.captures[1].state);
}

TEST_CASE("transient initial data policy controls the start state") {
    SweepSpec spec = load_preset("fig6_all");
    apply_override(spec, "scenario.h=0.5");
    apply_override(spec, "scenario.nu_list=1/10");
    apply_override(spec, "scenario.outflow_list=cbc");
    apply_override(spec, "scenario.mode=transient");
    apply_override(spec, "scenario.stream_function=false");
    apply_override(spec, "time.dt=0.005");
    apply_override(spec, "time.t_final=0.01");
    apply_override(spec, "time.initial=lifting");

    const std::string d1 = scratch_dir("init_lifting");
    const RunManifest lifted = run_sweep(spec, d1);
    REQUIRE(lifted.points.size() == 1);
    CHECK(lifted.points[0].converged);
    for (const auto& w : lifted.points[0].warnings)
        CHECK(w.find("inflow") == std::string::npos);

    apply_override(spec, "time.initial=zero");
    const std::string d2 = scratch_dir("init_zero");
    const RunManifest cold = run_sweep(spec, d2);
    REQUIRE(cold.points.size() == 1);
    bool warned = false;
    for (const auto& w : cold.points[0].warnings)
        if (w.find("inflow") != std::string::npos) warned = true;
    CHECK(warned);
}

TEST_CASE("refinement study reports decreasing errors and fitted orders") {
    const std::string dir = scratch_dir("run_mms");
    SweepSpec spec = load_preset("mms_convergence");
    apply_override(spec, "scenario.mms_refinements=4, 8");

    const RunManifest man = run_sweep(spec, dir);
    CHECK_FALSE(man.any_failure);
    REQUIRE(man.mms_rows.size() == 2);
    CHECK(man.mms_rows[0].n == 4);
    CHECK(man.mms_rows[1].n == 8);
    CHECK(man.mms_rows[1].err_l2_u < man.mms_rows[0].err_l2_u);
    CHECK(man.mms_rows[1].err_h1_u < man.mms_rows[0].err_h1_u);
    CHECK(man.mms_rows[1].err_l2_p < man.mms_rows[0].err_l2_p);
    CHECK(man.order_l2_u > 2.2);
    CHECK(man.order_h1_u > 1.4);
    CHECK(man.order_l2_p > 1.5);

    const auto lines = split_lines(read_file(dir + "/errors.csv"));
    REQUIRE(lines.size() == 3);
    CHECK(lines[0] == "n,h,err_l2_u,err_h1_u,err_l2_p");

    const RunManifest back = load_run_manifest(dir);
    CHECK(back.order_l2_u == man.order_l2_u);
    CHECK(back.mms_rows.size() == 2);
    CHECK(back.mms_rows[1].err_l2_u == man.mms_rows[1].err_l2_u);
    CHECK(back.points.size() == 2);  // one outcome per refinement
    CHECK(back.points[0].dir == "mms_n4");
}
