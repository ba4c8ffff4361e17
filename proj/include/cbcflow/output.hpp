#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cbcflow/fem.hpp"

namespace cbcflow {

// Writes to a temporary file in the target directory and renames it into
// place, so readers never observe a truncated file.
void atomic_write_file(const std::string& path, const std::string& content);

// Locale-independent %.17g formatting (round-trips doubles exactly).
std::string format_double(double v);

// 64-bit FNV-1a over the given text, as 16 hex digits.
std::uint64_t fnv1a_hash(std::string_view text);
std::string fnv1a_hex(std::string_view text);

// Legacy ASCII VTK unstructured grid of quadratic triangles: velocity padded
// to three components, pressure interpolated to the midside nodes, stream
// function optional (pass an empty span to omit it).
std::string vtk_unstructured(const FESystem& fes, std::span<const double> u,
                             std::span<const double> p, std::span<const double> psi = {});
void write_vtk_file(const std::string& path, const FESystem& fes, std::span<const double> u,
                    std::span<const double> p, std::span<const double> psi = {});

// Coefficient dump ("cbcflow-state 1"): velocity then pressure, one value
// per line in %.17g. load throws SolveError on malformed input.
void save_state_file(const std::string& path, std::span<const double> u,
                     std::span<const double> p);
std::pair<std::vector<double>, std::vector<double>> load_state_file(const std::string& path);

// One CSV line from preformatted cells (no quoting; cells must not contain
// commas or newlines).
std::string csv_row(const std::vector<std::string>& cells);

}  // namespace cbcflow
