#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cbcflow/output.hpp"
#include "cbcflow/scenario.hpp"

namespace {

using namespace cbcflow;

std::string fmt(double v) {
    std::ostringstream out;
    out << v;
    return out.str();
}

int cmd_run(const std::string& preset, const std::string& config, const std::string& out_dir,
            int workers, const std::vector<std::string>& overrides) {
    SweepSpec spec = !preset.empty() ? load_preset(preset) : load_scenario_file(config);
    for (const auto& o : overrides) apply_override(spec, o);
    if (workers > 0) spec.workers = workers;
    validate(spec);

    std::cout << "running " << spec.base.name << ": " << spec.kinds.size() * spec.nus.size()
              << " point(s), mode " << spec.base.mode << ", workers " << spec.workers << "\n";
    RunManifest man = run_sweep(spec, out_dir);

    for (const auto& p : man.points) {
        std::cout << "  " << (p.dir.empty() ? std::string("point") : p.dir) << "  nu="
                  << fmt(p.nu) << " " << to_string(p.kind) << "  "
                  << (p.converged ? "converged" : "FAILED") << " (" << p.iterations
                  << " iterations)";
        if (!p.converged && !p.error.empty()) std::cout << ": " << p.error;
        std::cout << "\n";
        for (const auto& w : p.warnings) std::cout << "    warning: " << w << "\n";
    }
    if (man.mode == "mms" && !man.mms_rows.empty())
        std::cout << "  observed orders: L2(u)=" << fmt(man.order_l2_u)
                  << " H1(u)=" << fmt(man.order_h1_u) << " L2(p)=" << fmt(man.order_l2_p) << "\n";
    std::cout << "manifest: " << out_dir << "/manifest.json\n";
    if (man.any_failure) {
        std::cerr << "error: one or more sweep points failed; partial results kept in "
                  << out_dir << "\n";
        return 2;
    }
    return 0;
}

Mesh generate_named(const std::string& kind, double param) {
    if (kind == "unit-square") {
        int n = static_cast<int>(std::lround(param));
        if (std::abs(param - n) > 1e-12 || n < 1)
            throw ConfigError("unit-square takes a positive integer resolution");
        return generate_unit_square(n);
    }
    if (kind == "bifurcation") return generate_bifurcation(param);
    if (kind == "cylinder") return generate_cylinder_channel(param);
    throw ConfigError("unknown geometry '" + kind +
                      "' (expected unit-square, bifurcation, or cylinder)");
}

void print_mesh_stats(const Mesh& m) {
    int wall = 0, inflow = 0, outflow = 0;
    for (const auto& be : m.boundary_edges) {
        if (be.tag == BoundaryTag::WallH) ++wall;
        else if (be.tag == BoundaryTag::InflowN) ++inflow;
        else ++outflow;
    }
    std::cout << "nodes: " << m.n_nodes() << "\n"
              << "triangles: " << m.n_tris() << "\n"
              << "edges: " << m.n_edges() << "\n"
              << "min angle: " << fmt(m.min_angle_deg()) << " deg\n"
              << "area: " << fmt(m.total_area()) << "\n"
              << "boundary edges: wall=" << wall << " inflow=" << inflow
              << " outflow=" << outflow << "\n";
}

int cmd_mesh_generate(const std::string& kind, double param, const std::string& out_path) {
    Mesh m = generate_named(kind, param);
    std::ostringstream buf;
    save_mesh(m, buf);
    atomic_write_file(out_path, buf.str());
    std::cout << "wrote " << out_path << " (" << m.n_nodes() << " nodes, " << m.n_tris()
              << " triangles)\n";
    return 0;
}

int cmd_mesh_validate(const std::string& path) {
    Mesh m = load_mesh_file(path);
    std::cout << "ok: " << path << " (" << m.n_nodes() << " nodes, " << m.n_tris()
              << " triangles, min angle " << fmt(m.min_angle_deg()) << " deg)\n";
    return 0;
}

int cmd_mesh_info(const std::string& path) {
    Mesh m = load_mesh_file(path);
    print_mesh_stats(m);
    return 0;
}

int cmd_report(const std::string& dir, std::string out_dir) {
    RunManifest man = load_run_manifest(dir);
    if (out_dir.empty()) out_dir = dir;

    std::string csv = csv_row({"x", "gamma_x", "gamma_y", "condition", "nu", "converged"});
    std::map<std::string, std::vector<std::pair<double, double>>> series;
    for (const auto& p : man.points) {
        const double x = p.nu == 1.0 ? 0.0 : 1.0 / (10.0 * p.nu);
        csv += csv_row({format_double(x), p.has_gamma ? format_double(p.gamma.x) : "nan",
                        p.has_gamma ? format_double(p.gamma.y) : "nan", to_string(p.kind),
                        format_double(p.nu), p.converged ? "1" : "0"});
        if (p.converged && p.has_gamma)
            series[to_string(p.kind)].push_back({x, std::hypot(p.gamma.x, p.gamma.y)});
    }
    atomic_write_file(out_dir + "/report.csv", csv);
    std::cout << "wrote " << out_dir << "/report.csv (" << man.points.size() << " points)\n";

    for (auto& [kind, rows] : series) {
        std::sort(rows.begin(), rows.end());
        std::string dat;
        for (const auto& [x, g] : rows) dat += format_double(x) + " " + format_double(g) + "\n";
        atomic_write_file(out_dir + "/gamma_" + kind + ".dat", dat);
        std::cout << "wrote " << out_dir << "/gamma_" << kind << ".dat (" << rows.size()
                  << " rows)\n";
    }

    bool any_captures = false;
    std::string caps = csv_row(
        {"point", "condition", "nu", "capture", "t_requested", "t", "step", "vtk", "state"});
    for (const auto& p : man.points)
        for (std::size_t i = 0; i < p.captures.size(); ++i) {
            const auto& c = p.captures[i];
            any_captures = true;
            caps += csv_row({p.dir, to_string(p.kind), format_double(p.nu), std::to_string(i),
                             format_double(c.t_requested), format_double(c.t),
                             std::to_string(c.step), c.vtk, c.state});
        }
    if (any_captures) {
        atomic_write_file(out_dir + "/captures.csv", caps);
        std::cout << "wrote " << out_dir << "/captures.csv\n";
    }

    if (!man.mms_rows.empty())
        std::cout << "observed orders: L2(u)=" << fmt(man.order_l2_u)
                  << " H1(u)=" << fmt(man.order_h1_u) << " L2(p)=" << fmt(man.order_l2_p)
                  << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Taylor-Hood Navier-Stokes solver with convective outflow conditions"};
    app.require_subcommand(1);

    std::string preset, config, out_dir = "out";
    int workers = 0;
    std::vector<std::string> overrides;
    auto* run = app.add_subcommand("run", "Run a preset or a config-file sweep");
    auto* opt_preset = run->add_option("--preset", preset, "Named preset scenario");
    auto* opt_config = run->add_option("--config", config, "Scenario config file");
    opt_preset->excludes(opt_config);
    run->add_option("--out", out_dir, "Output directory")->capture_default_str();
    run->add_option("--workers", workers, "Concurrent sweep points");
    run->add_option("--set", overrides, "Override a config entry (section.key=value)");

    auto* mesh = app.add_subcommand("mesh", "Generate and inspect meshes");
    mesh->require_subcommand(1);
    std::string gen_kind, gen_out = "mesh.txt", mesh_path;
    double gen_param = 0.0;
    auto* gen = mesh->add_subcommand("generate", "Generate a built-in geometry");
    gen->add_option("kind", gen_kind, "unit-square, bifurcation, or cylinder")->required();
    gen->add_option("param", gen_param, "Resolution n (unit-square) or mesh size h")->required();
    gen->add_option("-o,--out", gen_out, "Output mesh file")->capture_default_str();
    auto* val = mesh->add_subcommand("validate", "Check a mesh file");
    val->add_option("file", mesh_path, "Mesh file")->required();
    auto* info = mesh->add_subcommand("info", "Print mesh statistics");
    info->add_option("file", mesh_path, "Mesh file")->required();

    std::string report_dir, report_out;
    auto* report = app.add_subcommand("report", "Aggregate a finished run directory");
    report->add_option("dir", report_dir, "Directory holding manifest.json")->required();
    report->add_option("--out", report_out, "Where to write the aggregates (default: dir)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (run->parsed()) {
            if (preset.empty() && config.empty())
                throw ConfigError("run needs --preset or --config");
            return cmd_run(preset, config, out_dir, workers, overrides);
        }
        if (mesh->parsed()) {
            if (gen->parsed()) return cmd_mesh_generate(gen_kind, gen_param, gen_out);
            if (val->parsed()) return cmd_mesh_validate(mesh_path);
            return cmd_mesh_info(mesh_path);
        }
        return cmd_report(report_dir, report_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
