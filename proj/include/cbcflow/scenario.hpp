#pragma once

#include <string>
#include <vector>

#include "cbcflow/nonlinear.hpp"
#include "cbcflow/postprocess.hpp"
#include "cbcflow/timestepper.hpp"

namespace cbcflow {

struct GeometrySpec {
    enum class Kind { UnitSquare, Bifurcation, Cylinder, File };
    Kind kind = Kind::UnitSquare;
    int n = 64;           // unit square cells per side
    double h = 0.05;      // target edge length of the channel geometries
    std::string path;     // mesh file for Kind::File
};

Mesh build_geometry(const GeometrySpec& g);

// A single experiment description. Sweeps vary nu and the outflow condition
// around this base (SweepSpec); everything else is shared.
struct Scenario {
    std::string name = "custom";
    GeometrySpec geometry;
    std::string forcing = "zero";     // "zero" | "sin_sin"
    std::string inflow = "zero";      // named inflow profile
    std::string mode = "stationary";  // "stationary" | "transient" | "mms"
    TimeConfig time;                  // transient controls
    std::string initial = "lifting";  // transient start: "zero" | "lifting"
    NewtonConfig newton;
    bool stream_function = true;      // solve and emit psi
    bool write_vtk = true;
    bool write_states = true;
};

struct SweepSpec {
    Scenario base;
    std::vector<double> nus = {1.0};
    std::vector<OutflowKind> kinds = {OutflowKind::Cbc};
    std::vector<int> mms_refinements = {8, 16, 32};
    int workers = 1;
};

// Named analytic forcings; "zero" yields an empty function.
VectorField forcing_by_name(const std::string& name);

const std::vector<std::string>& preset_names();
SweepSpec load_preset(const std::string& name);

// Flat key/value config with [scenario], [newton], [time], [output] sections,
// '#' comments, one assignment per line. Viscosities accept "a/b" fractions.
SweepSpec parse_scenario_text(const std::string& text, const std::string& default_name);
SweepSpec load_scenario_file(const std::string& path);

// Applies one "section.key=value" assignment (the CLI --set mechanism).
void apply_override(SweepSpec& spec, const std::string& assignment);

// Canonical config text (round-trips through parse_scenario_text).
std::string serialize_config(const SweepSpec& spec);

// Validates parameter ranges and resolvable names; throws ConfigError.
void validate(const SweepSpec& spec);

struct CaptureInfo {
    double t_requested = 0.0;
    double t = 0.0;
    int step = 0;
    std::string vtk;    // paths relative to the sweep output dir
    std::string state;
};

struct PointOutcome {
    double nu = 1.0;
    OutflowKind kind = OutflowKind::Cbc;
    std::string dir;      // subdirectory relative to the sweep output dir
    bool converged = false;
    std::string error;    // divergence reason or exception text
    int iterations = 0;   // Newton steps, or transient steps taken
    std::vector<double> residual_history;
    bool has_gamma = false;
    Vec2 gamma;
    FieldNorms norms;
    double final_time = 0.0;
    std::vector<std::string> warnings;
    std::string state_file;  // empty when the point failed
    std::string vtk_file;
    std::vector<CaptureInfo> captures;
};

struct MeshSummary {
    int nodes = 0, tris = 0, edges = 0;
    double min_angle_deg = 0.0, area = 0.0;
    int wall_edges = 0, inflow_edges = 0, outflow_edges = 0;
};

struct MmsRow {
    int n = 0;
    double h = 0.0, err_l2_u = 0.0, err_h1_u = 0.0, err_l2_p = 0.0;
};

struct RunManifest {
    std::string name;
    std::string mode;
    std::string config_text;
    std::string config_hash;
    std::string out_dir;
    MeshSummary mesh;
    bool any_failure = false;
    std::vector<PointOutcome> points;
    std::vector<MmsRow> mms_rows;
    double order_l2_u = 0.0, order_h1_u = 0.0, order_l2_p = 0.0;
};

// Runs every (kind, nu) point, writing per-point outputs into subdirectories
// of out_dir plus manifest.json, config.txt and gamma.csv at the top level.
// Failures are recorded per point; the sweep itself only throws on setup
// errors (invalid config, unwritable directory).
RunManifest run_sweep(const SweepSpec& spec, const std::string& out_dir);

// Reads back a manifest written by run_sweep.
RunManifest load_run_manifest(const std::string& out_dir);

}  // namespace cbcflow
