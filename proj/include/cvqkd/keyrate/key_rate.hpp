#pragma once

// Asymptotic key rate K = max(0, lower_bound - p_pass * delta_EC).

#include <cmath>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "cvqkd/keyrate/frank_wolfe.hpp"
#include "cvqkd/protocol.hpp"

namespace cvqkd::keyrate {

/// Density of arg(y) for y complex Gaussian with mean of modulus `snr_amplitude` (in units of the
/// per-component standard deviation) at angle `mean_angle`.
inline double gaussian_phase_density(double theta, double snr_amplitude, double mean_angle) {
    const double a = snr_amplitude;
    const double u = theta - mean_angle;
    const double b = a * std::cos(u);
    const double s = a * std::sin(u);
    return std::exp(-0.5 * a * a) / kTwoPi +
           b / (2.0 * std::sqrt(kTwoPi)) * std::exp(-0.5 * s * s) * (1.0 + std::erf(b / std::sqrt(2.0)));
}

/// Joint P(k, z) of Alice's state and Bob's key symbol under the linear heterodyne model with
/// physical amplitudes `constellation` and parameters (T, eps, eta, v_el).
inline std::vector<std::vector<double>> gaussian_joint_distribution(const protocol::Constellation& c, double t,
                                                                    double eps, double eta, double v_el) {
    const int m = c.states;
    // y = x_B + i p_B with per-quadrature variance 1 + v_el + eta T eps / 2
    const double sigma = std::sqrt(1.0 + v_el + eta * t * eps / 2.0);
    std::vector<std::vector<double>> joint(m, std::vector<double>(m, 0.0));
    for (int k = 0; k < m; ++k) {
        const cplx mean = std::sqrt(eta * t / 2.0) * 2.0 * c.points[k];
        const double a = std::abs(mean) / sigma;
        const double phi = std::arg(mean);
        for (int j = 0; j < m; ++j) {
            const double lo = (2.0 * j - 1.0) * kPi / m;
            const double hi = (2.0 * j + 1.0) * kPi / m;
            auto f = [&](double th) { return gaussian_phase_density(th, a, phi); };
            joint[k][j] = c.probabilities[k] * boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, lo, hi, 10, 1e-13);
        }
    }
    return joint;
}

struct KeyRateResult {
    double primal = 0.0;        // f at the final iterate, bits
    double lower_bound = 0.0;   // certified lower bound on min f, bits
    double gap = 0.0;
    double leakage = 0.0;       // delta_EC, bits
    protocol::EcAccounting ec;
    double bits_per_symbol = 0.0;
    double bits_per_second = 0.0;
    bool no_key = false;
    int iterations = 0;
    bool converged = false;
    bool stalled = false;
    double cutoff_delta = 0.0;  // |K(N_c) - K(N_c + 2)| / K(N_c) when checked
    int cutoff = 0;
};

inline KeyRateResult asymptotic_key_rate(const FrankWolfeResult& fw, const protocol::EcAccounting& ec,
                                         double symbol_rate_hz) {
    KeyRateResult r;
    r.primal = fw.primal;
    r.lower_bound = fw.lower_bound;
    r.gap = fw.gap();
    r.ec = ec;
    r.leakage = ec.leakage;
    r.iterations = fw.iterations;
    r.converged = fw.converged;
    r.stalled = fw.stalled;
    const double raw = fw.lower_bound - ec.pass_probability * ec.leakage;
    const auto rate = protocol::secret_fraction_to_rate(raw, symbol_rate_hz);
    r.bits_per_symbol = rate.no_key ? 0.0 : raw;
    r.bits_per_second = rate.bits_per_second;
    r.no_key = rate.no_key;
    return r;
}

inline KeyRateResult asymptotic_key_rate(const KeyRateProblem& problem, const protocol::EcAccounting& ec,
                                         double symbol_rate_hz, const FrankWolfeOptions& opt = {}) {
    return asymptotic_key_rate(minimize_relative_entropy(problem, opt), ec, symbol_rate_hz);
}

}  // namespace cvqkd::keyrate
