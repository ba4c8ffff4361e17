#include "cbcflow/quadrature.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>

namespace cbcflow {

namespace {

// Legendre P_n(x) and derivative by the three-term recurrence.
void legendre(int n, double x, double& p, double& dp) {
    double p0 = 1.0, p1 = x;
    if (n == 0) {
        p = 1.0;
        dp = 0.0;
        return;
    }
    for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    p = p1;
    dp = n * (x * p1 - p0) / (x * x - 1.0);
}

}  // namespace

std::vector<EdgeQuadPoint> gauss_legendre(int n) {
    if (n < 1) throw std::invalid_argument("gauss_legendre: need n >= 1");
    std::vector<EdgeQuadPoint> pts(n);
    for (int k = 0; k < n; ++k) {
        // Chebyshev initial guess, Newton refinement on [-1,1].
        double x = std::cos(M_PI * (k + 0.75) / (n + 0.5));
        double p = 0.0, dp = 1.0;
        for (int it = 0; it < 100; ++it) {
            legendre(n, x, p, dp);
            const double dx = p / dp;
            x -= dx;
            if (std::abs(dx) < 1e-15) break;
        }
        legendre(n, x, p, dp);
        const double w = 2.0 / ((1.0 - x * x) * dp * dp);
        pts[n - 1 - k] = {0.5 * (x + 1.0), 0.5 * w};  // map to [0,1]
    }
    return pts;
}

const std::vector<TriQuadPoint>& triangle_quadrature(int degree) {
    static std::mutex mtx;
    static std::map<int, std::unique_ptr<std::vector<TriQuadPoint>>> cache;
    std::lock_guard<std::mutex> lock(mtx);
    auto& slot = cache[degree];
    if (!slot) {
        // Duffy collapse x = u, y = v(1-u) with Jacobian (1-u): the u-direction
        // integrand gains one degree, so use points exact through degree+1.
        const int nu = (degree + 3) / 2;
        const auto gu = gauss_legendre(nu);
        const auto gv = gauss_legendre(nu);
        auto rule = std::make_unique<std::vector<TriQuadPoint>>();
        rule->reserve(gu.size() * gv.size());
        for (const auto& a : gu) {
            for (const auto& b : gv) {
                const double x = a.t;
                const double y = b.t * (1.0 - a.t);
                const double w = a.w * b.w * (1.0 - a.t);
                rule->push_back({1.0 - x - y, x, y, w});
            }
        }
        slot = std::move(rule);
    }
    return *slot;
}

const std::vector<EdgeQuadPoint>& edge_quadrature(int degree) {
    static std::mutex mtx;
    static std::map<int, std::unique_ptr<std::vector<EdgeQuadPoint>>> cache;
    std::lock_guard<std::mutex> lock(mtx);
    auto& slot = cache[degree];
    if (!slot)
        slot = std::make_unique<std::vector<EdgeQuadPoint>>(gauss_legendre((degree + 2) / 2));
    return *slot;
}

}  // namespace cbcflow
