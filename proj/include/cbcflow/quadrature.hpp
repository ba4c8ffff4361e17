#pragma once

#include <vector>

namespace cbcflow {

// Quadrature point on the reference triangle {l0+l1+l2=1, li>=0},
// in barycentric coordinates. Weights sum to the reference area 1/2.
struct TriQuadPoint {
    double l0, l1, l2, w;
};

// Quadrature point on the reference edge [0,1]. Weights sum to 1.
struct EdgeQuadPoint {
    double t, w;
};

// Gauss-Legendre points/weights on [0,1]; exact for degree 2n-1.
std::vector<EdgeQuadPoint> gauss_legendre(int n);

// Rules exact for polynomials of the given total degree. Built once per
// degree and cached (thread safe); the returned reference stays valid.
const std::vector<TriQuadPoint>& triangle_quadrature(int degree);
const std::vector<EdgeQuadPoint>& edge_quadrature(int degree);

}  // namespace cbcflow
