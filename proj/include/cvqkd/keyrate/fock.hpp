#pragma once

// Truncated single-mode Fock-space operators in shot-noise units: x = a + a^dag,
// p = i(a^dag - a), so the vacuum quadrature variance is 1.

#include <cmath>

#include <boost/math/special_functions/laguerre.hpp>

#include "cvqkd/common.hpp"

namespace cvqkd::keyrate {

struct FockToolbox {
    int cutoff = 0;
    CMatrix a;
    CMatrix number;
    CMatrix x;
    CMatrix p;
    // Projections of the untruncated x^2 and p^2, not squares of the truncated x and p.
    CMatrix x2;
    CMatrix p2;

    int dim() const { return cutoff + 1; }

    /// Truncated coherent state, renormalized to unit norm.
    CVector coherent(cplx alpha) const {
        CVector v(dim());
        double log_abs = std::log(std::abs(alpha));
        double phase = std::arg(alpha);
        for (int n = 0; n < dim(); ++n) {
            if (alpha == cplx{0.0, 0.0}) {
                v(n) = n == 0 ? 1.0 : 0.0;
                continue;
            }
            double mag = std::exp(-0.5 * std::norm(alpha) + n * log_abs - 0.5 * std::lgamma(n + 1.0));
            v(n) = std::polar(mag, n * phase);
        }
        return v / v.norm();
    }

    /// Probability mass of |alpha> outside the truncated space.
    double truncation_deficit(cplx alpha) const {
        const double r2 = std::norm(alpha);
        double term = std::exp(-r2);
        double kept = term;
        for (int n = 1; n < dim(); ++n) {
            term *= r2 / n;
            kept += term;
        }
        return std::max(0.0, 1.0 - kept);
    }
};

inline FockToolbox fock_toolbox(int cutoff) {
    if (cutoff < 2) throw Error(Stage::keyrate, "Fock cutoff must be at least 2");
    FockToolbox fb;
    fb.cutoff = cutoff;
    const int d = cutoff + 1;
    fb.a = CMatrix::Zero(d, d);
    fb.number = CMatrix::Zero(d, d);
    for (int n = 1; n < d; ++n) fb.a(n - 1, n) = std::sqrt(static_cast<double>(n));
    for (int n = 0; n < d; ++n) fb.number(n, n) = n;
    const CMatrix ad = fb.a.adjoint();
    const cplx i{0.0, 1.0};
    fb.x = fb.a + ad;
    fb.p = i * (ad - fb.a);
    // a^2 and a^dag^2 truncate exactly; a a^dag + a^dag a = 2n + 1 in the full space.
    const CMatrix a2 = fb.a * fb.a;
    const CMatrix ad2 = ad * ad;
    const CMatrix sym = 2.0 * fb.number + CMatrix::Identity(d, d);
    fb.x2 = a2 + ad2 + sym;
    fb.p2 = -(a2 + ad2) + sym;
    return fb;
}

/// <m| D(s) rho_th(nbar) D(s)^dag |n> for real s >= 0. The matrix is real
/// symmetric; a complex displacement s e^{i phi} multiplies it by e^{i(m-n)phi}.
inline double displaced_thermal_element(int m, int n, double s, double nbar) {
    if (m < n) std::swap(m, n);
    const int k = m - n;
    const double s2 = s * s;
    if (nbar <= 1e-14) {
        if (s == 0.0) return (m == 0 && n == 0) ? 1.0 : 0.0;
        return std::exp(-s2 + (m + n) * std::log(s) - 0.5 * (std::lgamma(m + 1.0) + std::lgamma(n + 1.0)));
    }
    const double lag = boost::math::laguerre(static_cast<unsigned>(n), static_cast<unsigned>(k),
                                             -s2 / (nbar * (1.0 + nbar)));
    double log_pref = n * std::log(nbar) - (m + 1) * std::log1p(nbar) +
                      0.5 * (std::lgamma(n + 1.0) - std::lgamma(m + 1.0)) - s2 / (1.0 + nbar);
    if (k > 0) {
        if (s == 0.0) return 0.0;
        log_pref += k * std::log(s);
    }
    return std::exp(log_pref) * lag;
}

/// Displaced thermal state D(beta) rho_th(nbar) D(beta)^dag on the first `dim` Fock levels
/// (exact matrix elements of the untruncated operator).
inline CMatrix displaced_thermal(cplx beta, double nbar, int dim) {
    CMatrix r(dim, dim);
    const double s = std::abs(beta);
    const double phi = std::arg(beta);
    for (int m = 0; m < dim; ++m) {
        for (int n = 0; n <= m; ++n) {
            double g = displaced_thermal_element(m, n, s, nbar);
            r(m, n) = std::polar(g, (m - n) * phi);
            r(n, m) = std::conj(r(m, n));
        }
    }
    return r;
}

/// Exact matrix elements <m|D(beta)|n> of the displacement operator, m, n < dim.
inline CMatrix displacement(cplx beta, int dim) {
    CMatrix d(dim, dim);
    const double r2 = std::norm(beta);
    for (int m = 0; m < dim; ++m) {
        for (int n = 0; n < dim; ++n) {
            const int lo = std::min(m, n);
            const int k = std::abs(m - n);
            double lag = boost::math::laguerre(static_cast<unsigned>(lo), static_cast<unsigned>(k), r2);
            double mag = std::exp(-0.5 * r2 + 0.5 * (std::lgamma(lo + 1.0) - std::lgamma(lo + k + 1.0)));
            cplx factor = m >= n ? std::pow(beta, k) : std::pow(-std::conj(beta), k);
            d(m, n) = mag * lag * factor;
        }
    }
    return d;
}

}  // namespace cvqkd::keyrate
