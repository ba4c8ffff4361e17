#include "cbcflow/scenario.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "cbcflow/output.hpp"

namespace cbcflow {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr double kPi = std::numbers::pi;

// Shortest decimal form that parses back to the same double.
std::string short_double(double v) {
    char buf[40];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, end);
}

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

double parse_plain_double(const std::string& s, const std::string& ctx) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (trim(s.substr(pos)).empty()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError(ctx + ": invalid number '" + s + "'");
}

// Accepts plain decimals and "a/b" fractions (convenient for viscosities).
double parse_double_value(const std::string& s, const std::string& ctx) {
    std::size_t slash = s.find('/');
    if (slash == std::string::npos) return parse_plain_double(s, ctx);
    double num = parse_plain_double(trim(s.substr(0, slash)), ctx);
    double den = parse_plain_double(trim(s.substr(slash + 1)), ctx);
    if (den == 0.0) throw ConfigError(ctx + ": division by zero in '" + s + "'");
    return num / den;
}

int parse_int_value(const std::string& s, const std::string& ctx) {
    try {
        std::size_t pos = 0;
        int v = std::stoi(s, &pos);
        if (trim(s.substr(pos)).empty()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError(ctx + ": invalid integer '" + s + "'");
}

bool parse_bool_value(const std::string& s, const std::string& ctx) {
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError(ctx + ": invalid boolean '" + s + "'");
}

std::vector<double> parse_double_list(const std::string& s, const std::string& ctx) {
    std::vector<double> out;
    for (const auto& item : split_list(s)) out.push_back(parse_double_value(item, ctx));
    if (out.empty()) throw ConfigError(ctx + ": empty list");
    return out;
}

std::vector<int> parse_int_list(const std::string& s, const std::string& ctx) {
    std::vector<int> out;
    for (const auto& item : split_list(s)) out.push_back(parse_int_value(item, ctx));
    if (out.empty()) throw ConfigError(ctx + ": empty list");
    return out;
}

std::string geometry_kind_name(GeometrySpec::Kind k) {
    switch (k) {
        case GeometrySpec::Kind::UnitSquare: return "unit_square";
        case GeometrySpec::Kind::Bifurcation: return "bifurcation";
        case GeometrySpec::Kind::Cylinder: return "cylinder";
        case GeometrySpec::Kind::File: return "file";
    }
    throw ConfigError("invalid geometry kind");
}

GeometrySpec::Kind geometry_kind_from(const std::string& s, const std::string& ctx) {
    if (s == "unit_square") return GeometrySpec::Kind::UnitSquare;
    if (s == "bifurcation") return GeometrySpec::Kind::Bifurcation;
    if (s == "cylinder") return GeometrySpec::Kind::Cylinder;
    if (s == "file") return GeometrySpec::Kind::File;
    throw ConfigError(ctx + ": unknown geometry '" + s +
                      "' (expected unit_square, bifurcation, cylinder, or file)");
}

std::string guess_name(NewtonConfig::Guess g) {
    switch (g) {
        case NewtonConfig::Guess::Auto: return "auto";
        case NewtonConfig::Guess::Zero: return "zero";
        case NewtonConfig::Guess::Stokes: return "stokes";
        case NewtonConfig::Guess::Continuation: return "continuation";
    }
    throw ConfigError("invalid newton guess");
}

NewtonConfig::Guess guess_from(const std::string& s, const std::string& ctx) {
    if (s == "auto") return NewtonConfig::Guess::Auto;
    if (s == "zero") return NewtonConfig::Guess::Zero;
    if (s == "stokes") return NewtonConfig::Guess::Stokes;
    if (s == "continuation") return NewtonConfig::Guess::Continuation;
    throw ConfigError(ctx + ": unknown guess '" + s +
                      "' (expected auto, zero, stokes, or continuation)");
}

template <typename T, typename F>
std::string join_list(const std::vector<T>& xs, F fmt) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ", ";
        out += fmt(xs[i]);
    }
    return out;
}

// Manufactured solenoidal family for the convergence-study mode:
// u = curl(sin^2(pi x) sin^2(pi y)), p = cos(pi x) cos(pi y). The velocity
// vanishes on the whole unit-square boundary while the outflow traction term
// stays nonzero through the pressure.
Vec2 study_velocity(const Vec2& q) {
    const double x = q.x, y = q.y;
    return {kPi * std::sin(kPi * x) * std::sin(kPi * x) * std::sin(2 * kPi * y),
            -kPi * std::sin(2 * kPi * x) * std::sin(kPi * y) * std::sin(kPi * y)};
}

Mat2 study_velocity_grad(const Vec2& q) {
    const double x = q.x, y = q.y;
    Mat2 g;
    g(0, 0) = kPi * kPi * std::sin(2 * kPi * x) * std::sin(2 * kPi * y);
    g(0, 1) = 2 * kPi * kPi * std::sin(kPi * x) * std::sin(kPi * x) * std::cos(2 * kPi * y);
    g(1, 0) = -2 * kPi * kPi * std::cos(2 * kPi * x) * std::sin(kPi * y) * std::sin(kPi * y);
    g(1, 1) = -g(0, 0);
    return g;
}

double study_pressure(const Vec2& q) { return std::cos(kPi * q.x) * std::cos(kPi * q.y); }

Vec2 study_laplacian(const Vec2& q) {
    const double x = q.x, y = q.y;
    const double sx = std::sin(kPi * x), sy = std::sin(kPi * y);
    return {2 * kPi * kPi * kPi * std::sin(2 * kPi * y) * (std::cos(2 * kPi * x) - 2 * sx * sx),
            2 * kPi * kPi * kPi * std::sin(2 * kPi * x) * (2 * sy * sy - std::cos(2 * kPi * y))};
}

Vec2 study_pressure_grad(const Vec2& q) {
    return {-kPi * std::sin(kPi * q.x) * std::cos(kPi * q.y),
            -kPi * std::cos(kPi * q.x) * std::sin(kPi * q.y)};
}

VectorField study_forcing(double nu) {
    return [nu](const Vec2& q) {
        const Vec2 u = study_velocity(q);
        const Mat2 g = study_velocity_grad(q);
        const Vec2 lap = study_laplacian(q);
        const Vec2 gp = study_pressure_grad(q);
        return Vec2{-nu * lap.x + u.x * g(0, 0) + u.y * g(0, 1) + gp.x,
                    -nu * lap.y + u.x * g(1, 0) + u.y * g(1, 1) + gp.y};
    };
}

// Exact outflow flux sigma(u,p) n - 1/2 (u.n) u of the manufactured pair.
BoundaryField study_flux(double nu) {
    return [nu](const Vec2& q, const Vec2& n) {
        const Mat2 g = study_velocity_grad(q);
        const double p = study_pressure(q);
        const Vec2 u = study_velocity(q);
        Vec2 t{nu * ((g(0, 0) + g(0, 0)) * n.x + (g(0, 1) + g(1, 0)) * n.y) - p * n.x,
               nu * ((g(1, 0) + g(0, 1)) * n.x + (g(1, 1) + g(1, 1)) * n.y) - p * n.y};
        t -= 0.5 * u.dot(n) * u;
        return t;
    };
}

double fit_loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double lx = std::log(x[i]), ly = std::log(std::max(y[i], 1e-300));
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

void set_key(SweepSpec& spec, const std::string& section, const std::string& key,
             const std::string& value, const std::string& ctx) {
    Scenario& sc = spec.base;
    if (section == "scenario") {
        if (key == "name") sc.name = value;
        else if (key == "geometry") sc.geometry.kind = geometry_kind_from(value, ctx);
        else if (key == "n") sc.geometry.n = parse_int_value(value, ctx);
        else if (key == "h") sc.geometry.h = parse_double_value(value, ctx);
        else if (key == "mesh_path") sc.geometry.path = value;
        else if (key == "forcing") sc.forcing = value;
        else if (key == "inflow") sc.inflow = value;
        else if (key == "mode") sc.mode = value;
        else if (key == "nu" || key == "nu_list") spec.nus = parse_double_list(value, ctx);
        else if (key == "outflow" || key == "outflow_list") {
            spec.kinds.clear();
            for (const auto& item : split_list(value))
                spec.kinds.push_back(outflow_kind_from_string(item));
            if (spec.kinds.empty()) throw ConfigError(ctx + ": empty outflow list");
        } else if (key == "mms_refinements") spec.mms_refinements = parse_int_list(value, ctx);
        else if (key == "stream_function") sc.stream_function = parse_bool_value(value, ctx);
        else throw ConfigError(ctx + ": unknown key '" + key + "' in section [scenario]");
    } else if (section == "newton") {
        if (key == "max_iterations") sc.newton.max_iters = parse_int_value(value, ctx);
        else if (key == "abs_tol") sc.newton.abs_tol = parse_double_value(value, ctx);
        else if (key == "rel_tol") sc.newton.rel_tol = parse_double_value(value, ctx);
        else if (key == "damping") sc.newton.damping = parse_double_value(value, ctx);
        else if (key == "guess") sc.newton.guess = guess_from(value, ctx);
        else throw ConfigError(ctx + ": unknown key '" + key + "' in section [newton]");
    } else if (section == "time") {
        if (key == "dt") sc.time.dt = parse_double_value(value, ctx);
        else if (key == "t_final") sc.time.t_final = parse_double_value(value, ctx);
        else if (key == "captures") sc.time.capture_times = parse_double_list(value, ctx);
        else if (key == "initial") sc.initial = value;
        else if (key == "steady_tol") sc.time.steady_tol = parse_double_value(value, ctx);
        else throw ConfigError(ctx + ": unknown key '" + key + "' in section [time]");
    } else if (section == "output") {
        if (key == "workers") spec.workers = parse_int_value(value, ctx);
        else if (key == "vtk") sc.write_vtk = parse_bool_value(value, ctx);
        else if (key == "states") sc.write_states = parse_bool_value(value, ctx);
        else throw ConfigError(ctx + ": unknown key '" + key + "' in section [output]");
    } else {
        throw ConfigError(ctx + ": unknown section [" + section +
                          "] (expected scenario, newton, time, or output)");
    }
}

}  // namespace

Mesh build_geometry(const GeometrySpec& g) {
    switch (g.kind) {
        case GeometrySpec::Kind::UnitSquare: return generate_unit_square(g.n);
        case GeometrySpec::Kind::Bifurcation: return generate_bifurcation(g.h);
        case GeometrySpec::Kind::Cylinder: return generate_cylinder_channel(g.h);
        case GeometrySpec::Kind::File: return load_mesh_file(g.path);
    }
    throw ConfigError("invalid geometry kind");
}

VectorField forcing_by_name(const std::string& name) {
    if (name == "zero") return {};
    if (name == "sin_sin")
        return [](const Vec2& q) { return Vec2{std::sin(q.x) + std::sin(q.y), 0.0}; };
    throw ConfigError("unknown forcing '" + name + "' (expected zero or sin_sin)");
}

const std::vector<std::string>& preset_names() {
    static const std::vector<std::string> names = {"fig2_cbc",   "fig2_dn",  "fig3_cbc",
                                                   "fig3_dn",    "fig4_sweep", "fig6_all",
                                                   "fig7_all",   "mms_convergence"};
    return names;
}

SweepSpec load_preset(const std::string& name) {
    SweepSpec s;
    s.base.name = name;

    const std::vector<double> nus_moderate = {1.0, 1.0 / 10, 1.0 / 20, 1.0 / 30, 1.0 / 40};
    const std::vector<double> nus_low = {1.0 / 50, 1.0 / 60, 1.0 / 70, 1.0 / 80, 1.0 / 90};

    auto driven_square = [&] {
        s.base.geometry = {GeometrySpec::Kind::UnitSquare, 64, 0.05, ""};
        s.base.forcing = "sin_sin";
        s.base.inflow = "zero";
    };

    if (name == "fig2_cbc" || name == "fig2_dn") {
        driven_square();
        s.nus = nus_moderate;
        s.kinds = {name == "fig2_cbc" ? OutflowKind::Cbc : OutflowKind::Dn};
    } else if (name == "fig3_cbc" || name == "fig3_dn") {
        driven_square();
        s.nus = nus_low;
        if (name == "fig3_cbc") {
            s.kinds = {OutflowKind::Cbc};
        } else {
            // The do-nothing runs in this regime are started from zero on
            // purpose: the point of the experiment is whether that works.
            s.kinds = {OutflowKind::Dn};
            s.base.newton.guess = NewtonConfig::Guess::Zero;
        }
    } else if (name == "fig4_sweep") {
        driven_square();
        s.nus = nus_moderate;
        s.nus.insert(s.nus.end(), nus_low.begin(), nus_low.end());
        s.kinds = {OutflowKind::Cbc, OutflowKind::Dn};
    } else if (name == "fig6_all") {
        s.base.geometry = {GeometrySpec::Kind::Bifurcation, 64, 0.05, ""};
        s.base.forcing = "zero";
        s.base.inflow = "poiseuille_half";
        s.nus = {1.0 / 250, 1.0 / 1000};
        s.kinds = {OutflowKind::Cbc, OutflowKind::Dn, OutflowKind::Ddn};
    } else if (name == "fig7_all") {
        s.base.geometry = {GeometrySpec::Kind::Cylinder, 64, 0.04, ""};
        s.base.forcing = "zero";
        s.base.inflow = "poiseuille_unit";
        s.base.mode = "transient";
        s.base.time.dt = 0.01;
        s.base.time.t_final = 24.0;
        s.base.time.capture_times = {4.0, 24.0};
        s.base.initial = "lifting";
        s.nus = {1.0 / 250};
        s.kinds = {OutflowKind::Cbc, OutflowKind::Dn, OutflowKind::Ddn};
    } else if (name == "mms_convergence") {
        s.base.geometry = {GeometrySpec::Kind::UnitSquare, 64, 0.05, ""};
        s.base.forcing = "zero";
        s.base.inflow = "zero";
        s.base.mode = "mms";
        s.nus = {1.0};
        s.kinds = {OutflowKind::Cbc};
        s.mms_refinements = {8, 16, 32};
    } else {
        std::string msg = "unknown preset '" + name + "' (available:";
        for (const auto& p : preset_names()) msg += " " + p;
        throw ConfigError(msg + ")");
    }
    return s;
}

SweepSpec parse_scenario_text(const std::string& text, const std::string& default_name) {
    SweepSpec spec;
    spec.base.name = default_name;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string ctx = "line " + std::to_string(lineno);
        std::string body = trim(line);
        if (body.empty() || body[0] == '#' || body[0] == ';') continue;
        if (body.front() == '[') {
            if (body.back() != ']' || body.size() < 3)
                throw ConfigError(ctx + ": malformed section header '" + body + "'");
            section = trim(body.substr(1, body.size() - 2));
            continue;
        }
        std::size_t eq = body.find('=');
        if (eq == std::string::npos)
            throw ConfigError(ctx + ": expected 'key = value', got '" + body + "'");
        std::string key = trim(body.substr(0, eq));
        std::string value = trim(body.substr(eq + 1));
        if (key.empty()) throw ConfigError(ctx + ": empty key");
        if (section.empty())
            throw ConfigError(ctx + ": assignment before any [section] header");
        set_key(spec, section, key, value, ctx);
    }
    return spec;
}

SweepSpec load_scenario_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    std::string name = fs::path(path).stem().string();
    return parse_scenario_text(buf.str(), name.empty() ? "custom" : name);
}

void apply_override(SweepSpec& spec, const std::string& assignment) {
    const std::string ctx = "override '" + assignment + "'";
    std::size_t eq = assignment.find('=');
    if (eq == std::string::npos)
        throw ConfigError(ctx + ": expected section.key=value");
    std::string path = trim(assignment.substr(0, eq));
    std::string value = trim(assignment.substr(eq + 1));
    std::size_t dot = path.find('.');
    if (dot == std::string::npos || dot == 0 || dot + 1 >= path.size())
        throw ConfigError(ctx + ": expected section.key=value");
    set_key(spec, trim(path.substr(0, dot)), trim(path.substr(dot + 1)), value, ctx);
}

std::string serialize_config(const SweepSpec& spec) {
    const Scenario& sc = spec.base;
    std::ostringstream out;
    out << "[scenario]\n";
    out << "name = " << sc.name << '\n';
    out << "geometry = " << geometry_kind_name(sc.geometry.kind) << '\n';
    if (sc.geometry.kind == GeometrySpec::Kind::UnitSquare)
        out << "n = " << sc.geometry.n << '\n';
    if (sc.geometry.kind == GeometrySpec::Kind::Bifurcation ||
        sc.geometry.kind == GeometrySpec::Kind::Cylinder)
        out << "h = " << short_double(sc.geometry.h) << '\n';
    if (sc.geometry.kind == GeometrySpec::Kind::File)
        out << "mesh_path = " << sc.geometry.path << '\n';
    out << "forcing = " << sc.forcing << '\n';
    out << "inflow = " << sc.inflow << '\n';
    out << "mode = " << sc.mode << '\n';
    out << "nu_list = " << join_list(spec.nus, short_double) << '\n';
    out << "outflow_list = "
        << join_list(spec.kinds, [](OutflowKind k) { return to_string(k); }) << '\n';
    if (sc.mode == "mms")
        out << "mms_refinements = "
            << join_list(spec.mms_refinements, [](int n) { return std::to_string(n); }) << '\n';
    out << "stream_function = " << (sc.stream_function ? "true" : "false") << '\n';
    out << '\n';
    out << "[newton]\n";
    out << "max_iterations = " << sc.newton.max_iters << '\n';
    out << "abs_tol = " << short_double(sc.newton.abs_tol) << '\n';
    out << "rel_tol = " << short_double(sc.newton.rel_tol) << '\n';
    out << "damping = " << short_double(sc.newton.damping) << '\n';
    out << "guess = " << guess_name(sc.newton.guess) << '\n';
    if (sc.mode == "transient") {
        out << '\n';
        out << "[time]\n";
        out << "dt = " << short_double(sc.time.dt) << '\n';
        out << "t_final = " << short_double(sc.time.t_final) << '\n';
        if (!sc.time.capture_times.empty())
            out << "captures = " << join_list(sc.time.capture_times, short_double) << '\n';
        out << "initial = " << sc.initial << '\n';
        out << "steady_tol = " << short_double(sc.time.steady_tol) << '\n';
    }
    out << '\n';
    out << "[output]\n";
    out << "workers = " << spec.workers << '\n';
    out << "vtk = " << (sc.write_vtk ? "true" : "false") << '\n';
    out << "states = " << (sc.write_states ? "true" : "false") << '\n';
    return out.str();
}

void validate(const SweepSpec& spec) {
    const Scenario& sc = spec.base;
    if (spec.nus.empty()) throw ConfigError("nu_list must not be empty");
    for (double nu : spec.nus)
        if (!(nu > 0.0))
            throw ConfigError("viscosity must be positive (got " + short_double(nu) + ")");
    if (spec.kinds.empty()) throw ConfigError("outflow_list must not be empty");
    if (spec.workers < 1) throw ConfigError("workers must be at least 1");

    switch (sc.geometry.kind) {
        case GeometrySpec::Kind::UnitSquare:
            if (sc.geometry.n < 1) throw ConfigError("unit square resolution n must be positive");
            break;
        case GeometrySpec::Kind::Bifurcation:
        case GeometrySpec::Kind::Cylinder:
            if (!(sc.geometry.h > 0.0)) throw ConfigError("mesh size h must be positive");
            break;
        case GeometrySpec::Kind::File:
            if (sc.geometry.path.empty()) throw ConfigError("geometry file requires mesh_path");
            break;
    }

    forcing_by_name(sc.forcing);        // throws on unknown names
    inflow_profile_by_name(sc.inflow);

    if (sc.mode != "stationary" && sc.mode != "transient" && sc.mode != "mms")
        throw ConfigError("unknown mode '" + sc.mode +
                          "' (expected stationary, transient, or mms)");
    if (sc.mode == "transient") {
        if (!(sc.time.dt > 0.0)) throw ConfigError("time step dt must be positive");
        if (sc.time.t_final < sc.time.dt)
            throw ConfigError("t_final must be at least one time step");
        if (sc.time.steady_tol < 0.0) throw ConfigError("steady_tol must be nonnegative");
        if (sc.initial != "zero" && sc.initial != "lifting")
            throw ConfigError("unknown initial data policy '" + sc.initial +
                              "' (expected zero or lifting)");
    }
    if (sc.mode == "mms") {
        if (sc.geometry.kind != GeometrySpec::Kind::UnitSquare)
            throw ConfigError("mms mode requires the unit square geometry");
        if (spec.kinds != std::vector<OutflowKind>{OutflowKind::Cbc})
            throw ConfigError("mms mode supports the convective outflow condition only");
        if (spec.nus.size() != 1) throw ConfigError("mms mode takes a single viscosity");
        if (spec.mms_refinements.size() < 2)
            throw ConfigError("mms mode needs at least two refinements");
        for (std::size_t i = 0; i < spec.mms_refinements.size(); ++i) {
            if (spec.mms_refinements[i] < 2)
                throw ConfigError("mms refinements must be at least 2");
            if (i && spec.mms_refinements[i] <= spec.mms_refinements[i - 1])
                throw ConfigError("mms refinements must be strictly increasing");
        }
    }

    if (sc.newton.max_iters < 1) throw ConfigError("max_iterations must be positive");
    if (!(sc.newton.damping > 0.0) || sc.newton.damping > 1.0)
        throw ConfigError("damping must lie in (0, 1]");
    if (sc.newton.abs_tol < 0.0 || sc.newton.rel_tol < 0.0)
        throw ConfigError("Newton tolerances must be nonnegative");
}

namespace {

MeshSummary summarize(const Mesh& m) {
    MeshSummary s;
    s.nodes = m.n_nodes();
    s.tris = m.n_tris();
    s.edges = m.n_edges();
    s.min_angle_deg = m.min_angle_deg();
    s.area = m.total_area();
    for (const auto& be : m.boundary_edges) {
        if (be.tag == BoundaryTag::WallH) ++s.wall_edges;
        else if (be.tag == BoundaryTag::InflowN) ++s.inflow_edges;
        else ++s.outflow_edges;
    }
    return s;
}

std::string newton_history_csv(const std::vector<double>& history) {
    std::string out = csv_row({"iteration", "residual"});
    for (std::size_t i = 0; i < history.size(); ++i)
        out += csv_row({std::to_string(i), short_double(history[i])});
    return out;
}

// Solution artifacts (VTK, state dump, optional stream function) for one
// converged or captured state.
void write_state_outputs(const FESystem& fes, const Scenario& sc, const State& state,
                         const std::string& abs_base, const std::string& rel_base,
                         PointOutcome& out, std::string* vtk_rel, std::string* state_rel) {
    std::vector<double> psi;
    if (sc.stream_function) {
        try {
            psi = solve_stream_function(fes, state.u).psi;
        } catch (const std::exception& e) {
            out.warnings.push_back(std::string("stream function skipped: ") + e.what());
        }
    }
    if (sc.write_vtk) {
        write_vtk_file(abs_base + ".vtk", fes, state.u, state.p, psi);
        if (vtk_rel) *vtk_rel = rel_base + ".vtk";
    }
    if (sc.write_states) {
        save_state_file(abs_base + ".state", state.u, state.p);
        if (state_rel) *state_rel = rel_base + ".state";
    }
}

void fill_solution_summary(const FESystem& fes, const State& state, PointOutcome& out) {
    out.norms = field_norms(fes, state);
    if (!fes.edges_with_tag(BoundaryTag::OutflowOne).empty()) {
        out.gamma = nonlinear_outflow(fes, state.u).gamma;
        out.has_gamma = true;
    }
}

PointOutcome run_stationary_point(const FESystem& fes, const Scenario& sc, double nu,
                                  OutflowKind kind, const std::string& out_dir,
                                  const std::string& rel_dir) {
    PointOutcome out;
    out.nu = nu;
    out.kind = kind;
    out.dir = rel_dir;
    const std::string abs_dir = out_dir + "/" + rel_dir;
    try {
        fs::create_directories(abs_dir);
        BoundarySpec bspec{kind, inflow_profile_by_name(sc.inflow)};
        const VectorField f = forcing_by_name(sc.forcing);
        const bool has_inflow = !fes.inflow_snodes().empty();

        NewtonResult res;
        if (kind == OutflowKind::Ddn) {
            Lifting lift = has_inflow ? build_lifting(fes, bspec.inflow_profile, 0.0)
                                      : Lifting{std::vector<double>(fes.n_u(), 0.0), 0.0, 0.0};
            res = ddn_quasi_newton(fes, bspec, nu, f, lift, sc.newton);
        } else if (has_inflow) {
            Lifting lift = build_lifting(fes, bspec.inflow_profile, 0.0);
            res = newton_solve_nonhomogeneous(fes, bspec, nu, f, lift, sc.newton);
        } else {
            res = newton_solve_homogeneous(fes, bspec, nu, f, sc.newton);
        }

        out.converged = res.report.converged;
        out.iterations = res.report.iterations;
        out.residual_history = res.report.residual_history;
        out.error = res.report.divergence_reason;
        atomic_write_file(abs_dir + "/newton.csv", newton_history_csv(out.residual_history));
        if (out.converged) {
            fill_solution_summary(fes, res.state, out);
            write_state_outputs(fes, sc, res.state, abs_dir + "/solution", rel_dir + "/solution",
                                out, &out.vtk_file, &out.state_file);
        }
    } catch (const std::exception& e) {
        out.converged = false;
        out.error = e.what();
    }
    return out;
}

PointOutcome run_transient_point(const FESystem& fes, const Scenario& sc, double nu,
                                 OutflowKind kind, const std::string& out_dir,
                                 const std::string& rel_dir) {
    PointOutcome out;
    out.nu = nu;
    out.kind = kind;
    out.dir = rel_dir;
    const std::string abs_dir = out_dir + "/" + rel_dir;
    try {
        fs::create_directories(abs_dir);
        BoundarySpec bspec{kind, inflow_profile_by_name(sc.inflow)};
        const VectorField f = forcing_by_name(sc.forcing);

        std::vector<double> u0(fes.n_u(), 0.0);
        if (sc.initial == "lifting" && !fes.inflow_snodes().empty())
            u0 = build_lifting(fes, bspec.inflow_profile, 0.0).w0;

        Trajectory tr = run_transient(fes, bspec, nu, f, u0, sc.time);
        out.converged = tr.complete;
        out.error = tr.error;
        out.iterations = tr.steps_taken;
        out.final_time = tr.final_time;
        out.warnings = tr.warnings;

        std::string diag = csv_row({"step", "t", "div_residual", "outflow_flux", "step_change"});
        for (const auto& d : tr.diagnostics)
            diag += csv_row({std::to_string(d.step), short_double(d.t),
                             short_double(d.div_residual), short_double(d.outflow_flux),
                             short_double(d.step_change)});
        atomic_write_file(abs_dir + "/diagnostics.csv", diag);

        for (std::size_t i = 0; i < tr.captures.size(); ++i) {
            const Capture& cap = tr.captures[i];
            char tag[32];
            std::snprintf(tag, sizeof(tag), "capture_%02zu", i);
            CaptureInfo info;
            info.t_requested = cap.t_requested;
            info.t = cap.t;
            info.step = cap.step;
            write_state_outputs(fes, sc, cap.state, abs_dir + "/" + tag, rel_dir + "/" + tag,
                                out, &info.vtk, &info.state);
            out.captures.push_back(std::move(info));
        }

        if (tr.complete) {
            fill_solution_summary(fes, tr.final_state, out);
            write_state_outputs(fes, sc, tr.final_state, abs_dir + "/final", rel_dir + "/final",
                                out, &out.vtk_file, &out.state_file);
        }
    } catch (const std::exception& e) {
        out.converged = false;
        out.error = e.what();
    }
    return out;
}

void run_refinement_study(const SweepSpec& spec, const std::string& out_dir, RunManifest& man) {
    const Scenario& sc = spec.base;
    const double nu = spec.nus[0];
    const VectorField f = study_forcing(nu);
    const BoundaryField flux = study_flux(nu);
    const VectorField exact_u = study_velocity;
    const std::function<Mat2(const Vec2&)> exact_grad = study_velocity_grad;
    const std::function<double(const Vec2&)> exact_p = study_pressure;

    for (int n : spec.mms_refinements) {
        const std::string rel_dir = "mms_n" + std::to_string(n);
        PointOutcome out;
        out.nu = nu;
        out.kind = OutflowKind::Cbc;
        out.dir = rel_dir;
        try {
            fs::create_directories(out_dir + "/" + rel_dir);
            Mesh mesh = generate_unit_square(n);
            FESystem fes(mesh);
            man.mesh = summarize(mesh);  // finest level wins
            BoundarySpec bspec{OutflowKind::Cbc, inflow_profile_by_name("zero")};
            const auto extra = assemble_boundary_load(fes, flux, BoundaryTag::OutflowOne, 8);
            NewtonResult res = newton_solve_homogeneous(fes, bspec, nu, f, sc.newton, extra);
            out.converged = res.report.converged;
            out.iterations = res.report.iterations;
            out.residual_history = res.report.residual_history;
            out.error = res.report.divergence_reason;
            atomic_write_file(out_dir + "/" + rel_dir + "/newton.csv",
                              newton_history_csv(out.residual_history));
            if (out.converged) {
                MmsRow row;
                row.n = n;
                row.h = 1.0 / n;
                row.err_l2_u = velocity_l2_error(fes, res.state.u, exact_u);
                row.err_h1_u = velocity_h1_semi_error(fes, res.state.u, exact_grad);
                row.err_l2_p = pressure_l2_error(fes, res.state.p, exact_p);
                man.mms_rows.push_back(row);
                fill_solution_summary(fes, res.state, out);
                write_state_outputs(fes, sc, res.state, out_dir + "/" + rel_dir + "/solution",
                                    rel_dir + "/solution", out, &out.vtk_file, &out.state_file);
            }
        } catch (const std::exception& e) {
            out.converged = false;
            out.error = e.what();
        }
        man.points.push_back(std::move(out));
    }

    if (man.mms_rows.size() >= 2) {
        std::vector<double> hs, e0, e1, ep;
        for (const auto& r : man.mms_rows) {
            hs.push_back(r.h);
            e0.push_back(r.err_l2_u);
            e1.push_back(r.err_h1_u);
            ep.push_back(r.err_l2_p);
        }
        man.order_l2_u = fit_loglog_slope(hs, e0);
        man.order_h1_u = fit_loglog_slope(hs, e1);
        man.order_l2_p = fit_loglog_slope(hs, ep);

        std::string csv = csv_row({"n", "h", "err_l2_u", "err_h1_u", "err_l2_p"});
        for (const auto& r : man.mms_rows)
            csv += csv_row({std::to_string(r.n), short_double(r.h), short_double(r.err_l2_u),
                            short_double(r.err_h1_u), short_double(r.err_l2_p)});
        atomic_write_file(out_dir + "/errors.csv", csv);
    }
}

json capture_to_json(const CaptureInfo& c) {
    return json{{"t_requested", c.t_requested},
                {"t", c.t},
                {"step", c.step},
                {"vtk", c.vtk},
                {"state", c.state}};
}

json point_to_json(const PointOutcome& p) {
    json j{{"nu", p.nu},
           {"kind", to_string(p.kind)},
           {"dir", p.dir},
           {"converged", p.converged},
           {"error", p.error},
           {"iterations", p.iterations},
           {"residual_history", p.residual_history},
           {"final_time", p.final_time},
           {"warnings", p.warnings},
           {"state_file", p.state_file},
           {"vtk_file", p.vtk_file}};
    if (p.has_gamma) j["gamma"] = {p.gamma.x, p.gamma.y};
    if (p.converged)
        j["norms"] = {{"l2_u", p.norms.l2_u},
                      {"v_norm", p.norms.v_norm},
                      {"div_residual", p.norms.div_residual},
                      {"l2_p", p.norms.l2_p}};
    if (!p.captures.empty()) {
        json caps = json::array();
        for (const auto& c : p.captures) caps.push_back(capture_to_json(c));
        j["captures"] = caps;
    }
    return j;
}

PointOutcome point_from_json(const json& j) {
    PointOutcome p;
    p.nu = j.at("nu").get<double>();
    p.kind = outflow_kind_from_string(j.at("kind").get<std::string>());
    p.dir = j.at("dir").get<std::string>();
    p.converged = j.at("converged").get<bool>();
    p.error = j.at("error").get<std::string>();
    p.iterations = j.at("iterations").get<int>();
    p.residual_history = j.at("residual_history").get<std::vector<double>>();
    p.final_time = j.at("final_time").get<double>();
    p.warnings = j.at("warnings").get<std::vector<std::string>>();
    p.state_file = j.at("state_file").get<std::string>();
    p.vtk_file = j.at("vtk_file").get<std::string>();
    if (j.contains("gamma")) {
        p.has_gamma = true;
        p.gamma = {j["gamma"][0].get<double>(), j["gamma"][1].get<double>()};
    }
    if (j.contains("norms")) {
        p.norms.l2_u = j["norms"]["l2_u"].get<double>();
        p.norms.v_norm = j["norms"]["v_norm"].get<double>();
        p.norms.div_residual = j["norms"]["div_residual"].get<double>();
        p.norms.l2_p = j["norms"]["l2_p"].get<double>();
    }
    if (j.contains("captures"))
        for (const auto& cj : j["captures"]) {
            CaptureInfo c;
            c.t_requested = cj.at("t_requested").get<double>();
            c.t = cj.at("t").get<double>();
            c.step = cj.at("step").get<int>();
            c.vtk = cj.at("vtk").get<std::string>();
            c.state = cj.at("state").get<std::string>();
            p.captures.push_back(std::move(c));
        }
    return p;
}

// Fig. 4 style abscissa: 0 at nu = 1, otherwise 1/(10 nu).
double gamma_abscissa(double nu) { return nu == 1.0 ? 0.0 : 1.0 / (10.0 * nu); }

std::string gamma_csv(const std::vector<PointOutcome>& points) {
    std::string out = csv_row({"x", "gamma_x", "gamma_y", "condition", "nu", "converged"});
    for (const auto& p : points)
        out += csv_row({short_double(gamma_abscissa(p.nu)),
                        p.has_gamma ? short_double(p.gamma.x) : "nan",
                        p.has_gamma ? short_double(p.gamma.y) : "nan", to_string(p.kind),
                        short_double(p.nu), p.converged ? "1" : "0"});
    return out;
}

}  // namespace

RunManifest run_sweep(const SweepSpec& spec, const std::string& out_dir) {
    validate(spec);
    fs::create_directories(out_dir);

    RunManifest man;
    man.name = spec.base.name;
    man.mode = spec.base.mode;
    man.out_dir = out_dir;
    man.config_text = serialize_config(spec);
    man.config_hash = fnv1a_hex(man.config_text);
    atomic_write_file(out_dir + "/config.txt", man.config_text);

    if (spec.base.mode == "mms") {
        run_refinement_study(spec, out_dir, man);
    } else {
        Mesh mesh = build_geometry(spec.base.geometry);
        FESystem fes(mesh);
        man.mesh = summarize(mesh);

        struct Task {
            double nu;
            OutflowKind kind;
            std::string rel_dir;
        };
        std::vector<Task> tasks;
        for (OutflowKind kind : spec.kinds)
            for (double nu : spec.nus) {
                char buf[64];
                std::snprintf(buf, sizeof(buf), "p%02zu_%s", tasks.size(),
                              to_string(kind).c_str());
                tasks.push_back({nu, kind, buf});
            }

        man.points.resize(tasks.size());
        const bool transient = spec.base.mode == "transient";
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            for (std::size_t i; (i = next.fetch_add(1)) < tasks.size();) {
                const Task& t = tasks[i];
                man.points[i] = transient
                    ? run_transient_point(fes, spec.base, t.nu, t.kind, out_dir, t.rel_dir)
                    : run_stationary_point(fes, spec.base, t.nu, t.kind, out_dir, t.rel_dir);
            }
        };
        const int extra = std::min<int>(spec.workers, static_cast<int>(tasks.size())) - 1;
        std::vector<std::thread> pool;
        for (int i = 0; i < extra; ++i) pool.emplace_back(worker);
        worker();
        for (auto& th : pool) th.join();

        if (!transient) atomic_write_file(out_dir + "/gamma.csv", gamma_csv(man.points));
    }

    for (const auto& p : man.points)
        if (!p.converged) man.any_failure = true;

    json j{{"format", "cbcflow-manifest 1"},
           {"name", man.name},
           {"mode", man.mode},
           {"config_hash", man.config_hash},
           {"config_file", "config.txt"},
           {"any_failure", man.any_failure},
           {"mesh",
            {{"nodes", man.mesh.nodes},
             {"tris", man.mesh.tris},
             {"edges", man.mesh.edges},
             {"min_angle_deg", man.mesh.min_angle_deg},
             {"area", man.mesh.area},
             {"wall_edges", man.mesh.wall_edges},
             {"inflow_edges", man.mesh.inflow_edges},
             {"outflow_edges", man.mesh.outflow_edges}}}};
    json pts = json::array();
    for (const auto& p : man.points) pts.push_back(point_to_json(p));
    j["points"] = pts;
    if (man.mode == "stationary") j["gamma_csv"] = "gamma.csv";
    if (!man.mms_rows.empty()) {
        json rows = json::array();
        for (const auto& r : man.mms_rows)
            rows.push_back({{"n", r.n},
                            {"h", r.h},
                            {"err_l2_u", r.err_l2_u},
                            {"err_h1_u", r.err_h1_u},
                            {"err_l2_p", r.err_l2_p}});
        j["mms"] = {{"rows", rows},
                    {"orders",
                     {{"l2_u", man.order_l2_u},
                      {"h1_u", man.order_h1_u},
                      {"l2_p", man.order_l2_p}}}};
    }
    atomic_write_file(out_dir + "/manifest.json", j.dump(2) + "\n");
    return man;
}

RunManifest load_run_manifest(const std::string& out_dir) {
    const std::string path = out_dir + "/manifest.json";
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open manifest " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("malformed manifest " + path + ": " + e.what());
    }
    try {
        RunManifest man;
        man.name = j.at("name").get<std::string>();
        man.mode = j.at("mode").get<std::string>();
        man.config_hash = j.at("config_hash").get<std::string>();
        man.out_dir = out_dir;
        man.any_failure = j.at("any_failure").get<bool>();
        const json& m = j.at("mesh");
        man.mesh.nodes = m.at("nodes").get<int>();
        man.mesh.tris = m.at("tris").get<int>();
        man.mesh.edges = m.at("edges").get<int>();
        man.mesh.min_angle_deg = m.at("min_angle_deg").get<double>();
        man.mesh.area = m.at("area").get<double>();
        man.mesh.wall_edges = m.at("wall_edges").get<int>();
        man.mesh.inflow_edges = m.at("inflow_edges").get<int>();
        man.mesh.outflow_edges = m.at("outflow_edges").get<int>();
        for (const auto& pj : j.at("points")) man.points.push_back(point_from_json(pj));
        if (j.contains("mms")) {
            for (const auto& rj : j["mms"]["rows"]) {
                MmsRow r;
                r.n = rj.at("n").get<int>();
                r.h = rj.at("h").get<double>();
                r.err_l2_u = rj.at("err_l2_u").get<double>();
                r.err_h1_u = rj.at("err_h1_u").get<double>();
                r.err_l2_p = rj.at("err_l2_p").get<double>();
                man.mms_rows.push_back(r);
            }
            man.order_l2_u = j["mms"]["orders"]["l2_u"].get<double>();
            man.order_h1_u = j["mms"]["orders"]["h1_u"].get<double>();
            man.order_l2_p = j["mms"]["orders"]["l2_p"].get<double>();
        }
        std::ifstream cfg(out_dir + "/config.txt");
        if (cfg) {
            std::ostringstream buf;
            buf << cfg.rdbuf();
            man.config_text = buf.str();
        }
        return man;
    } catch (const json::exception& e) {
        throw ConfigError("manifest " + path + " is missing fields: " + e.what());
    }
}

}  // namespace cbcflow
