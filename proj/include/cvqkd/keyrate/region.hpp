#pragma once

// Key-map region operators of Bob's heterodyne measurement in the truncated Fock basis.
//
// The outcome POVM is E(gamma) = 1/(pi eta) D(gamma/sqrt(eta)) rho_th(nd) D(gamma/sqrt(eta))^dag,
// with nd = (1 - eta + v_el) / eta for a trusted noisy detector and nd = 0 for an ideal
// heterodyne. Integrating over the wedge [(2j-1)pi/M, (2j+1)pi/M) factorizes into an angular
// part, int e^{i(m-n)theta} dtheta, and a radial part (1/pi) int_0^inf g_mn(s) s ds that no
// longer depends on eta.

#include <cmath>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "cvqkd/keyrate/fock.hpp"

namespace cvqkd::keyrate {

/// Excess thermal occupation of the noisy-heterodyne POVM for a trusted detector.
inline double detector_noise_photons(double eta, double v_el) {
    if (!(eta > 0.0 && eta <= 1.0)) throw Error(Stage::keyrate, "detector efficiency must be in (0, 1]");
    if (v_el < 0.0) throw Error(Stage::keyrate, "electronic noise must be non-negative");
    return (1.0 - eta + v_el) / eta;
}

/// Angular factor of wedge j: int_{c - pi/M}^{c + pi/M} e^{i d theta} dtheta with c = 2 pi j / M.
inline cplx wedge_angular_factor(int d, int j, int m_states) {
    const double half = kPi / m_states;
    if (d == 0) return 2.0 * half;
    const double center = kTwoPi * j / m_states;
    return std::polar(2.0 * std::sin(d * half) / d, d * center);
}

/// (1/pi) int_0^inf g_mn(s) s ds for the displaced thermal kernel.
inline double radial_factor(int m, int n, double nd) {
    if (nd <= 1e-14) {
        return std::exp(std::lgamma(0.5 * (m + n) + 1.0) -
                        0.5 * (std::lgamma(m + 1.0) + std::lgamma(n + 1.0))) / kTwoPi;
    }
    auto integrand = [&](double s) { return displaced_thermal_element(m, n, s, nd) * s; };
    double err = 0.0;
    double v = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
        integrand, 0.0, std::numeric_limits<double>::infinity(), 15, 1e-14, &err);
    return v / kPi;
}

/// R_j for j = 0..M-1 on Fock levels 0..cutoff. Completeness sum_j R_j = I holds in the
/// truncated basis because the angular factors of off-diagonal elements sum to zero.
inline std::vector<CMatrix> region_operators(int m_states, int cutoff, double nd = 0.0) {
    if (m_states < 2) throw Error(Stage::keyrate, "key map needs at least two regions");
    if (cutoff < 2) throw Error(Stage::keyrate, "Fock cutoff must be at least 2");
    const int d = cutoff + 1;
    CMatrix radial(d, d);
    for (int m = 0; m < d; ++m)
        for (int n = 0; n <= m; ++n) radial(m, n) = radial(n, m) = radial_factor(m, n, nd);

    std::vector<CMatrix> regions(m_states, CMatrix(d, d));
    for (int j = 0; j < m_states; ++j) {
        for (int m = 0; m < d; ++m)
            for (int n = 0; n < d; ++n) regions[j](m, n) = wedge_angular_factor(m - n, j, m_states) * radial(m, n);
        regions[j] = hermitian_part(regions[j]);
    }
    return regions;
}

}  // namespace cvqkd::keyrate
