#pragma once

// Constraint set for the key-rate minimization. Under source replacement Alice holds a register
// |k> entangled with the state she sends; the joint state on register (x) Fock space must
//   * reproduce Alice's reduced state sum_kl sqrt(p_k p_l) <alpha_l|alpha_k> |k><l| (Gram), and
//   * reproduce Bob's per-state first and second quadrature moments.

#include <cmath>
#include <vector>

#include "cvqkd/estimation.hpp"
#include "cvqkd/keyrate/fock.hpp"
#include "cvqkd/keyrate/region.hpp"
#include "cvqkd/keyrate/sdp.hpp"
#include "cvqkd/protocol.hpp"

namespace cvqkd::keyrate {

struct ProblemOptions {
    int cutoff = 10;
    // Trusted detector: constraints at the channel output, detector noise enters the key-map POVM.
    // Untrusted: constraints at the detector output with an ideal heterodyne POVM.
    bool trusted_detector = true;
    // Amplitude fraction d of the signal sideband; Alice's amplitudes are charged as alpha / d.
    double sideband_fraction = 1.0;
    // Largest tolerated gap between analytic targets and those of the truncated channel state.
    double target_tolerance = 1e-6;
};

struct KeyRateProblem {
    int states = 0;
    int cutoff = 0;
    std::vector<cplx> alphas;  // amplitudes Alice is charged with
    std::vector<double> probabilities;
    double transmittance = 0.0;  // effective, referred to `alphas`
    double output_excess = 0.0;  // quadrature variance above vacuum at the constrained point
    double efficiency = 1.0;
    double electronic_noise = 0.0;
    bool trusted_detector = true;
    double detector_photons = 0.0;

    FockToolbox fock;
    CMatrix gram;  // Alice's reduced state
    BlockSdp constraints;
    std::vector<CMatrix> regions;
    std::vector<CMatrix> region_roots;
    CMatrix channel_state;  // feasible point: Gaussian channel applied to the source state
    double target_deviation = 0.0;  // max |analytic - truncated| over moment targets
    double truncation_deficit = 0.0;

    int dim() const { return states * (cutoff + 1); }
};

inline cplx coherent_overlap(cplx bra, cplx ket) {
    // <bra|ket>
    return std::exp(-0.5 * (std::norm(bra) + std::norm(ket)) + std::conj(bra) * ket);
}

inline CMatrix source_gram(const std::vector<cplx>& alphas, const std::vector<double>& probs) {
    const int m = static_cast<int>(alphas.size());
    CMatrix g(m, m);
    for (int k = 0; k < m; ++k)
        for (int l = 0; l < m; ++l) g(k, l) = std::sqrt(probs[k] * probs[l]) * coherent_overlap(alphas[l], alphas[k]);
    return g;
}

inline CMatrix psd_sqrt(const CMatrix& a) {
    Eigen::SelfAdjointEigenSolver<CMatrix> es(hermitian_part(a));
    RVector ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().adjoint();
}

/// Joint register-Bob state after a thermal-loss channel with transmittance T whose output
/// quadrature variance exceeds vacuum by `output_excess`. The channel is simulated through a beam
/// splitter with a thermal environment in a padded Fock space; Bob's mode is then folded into
/// levels 0..cutoff by a trace-preserving map that moves the tail weight onto |cutoff>, so the
/// register marginal stays exact.
inline CMatrix thermal_loss_state(const std::vector<cplx>& alphas, const std::vector<double>& probs, double t,
                                  double output_excess, int cutoff) {
    if (!(t > 0.0 && t <= 1.0)) throw Error(Stage::keyrate, "transmittance must be in (0, 1]");
    if (output_excess < 0.0) throw Error(Stage::keyrate, "excess noise must be non-negative");
    if (t >= 1.0 && output_excess > 0.0) throw Error(Stage::keyrate, "noisy channel needs transmittance below 1");
    const int m = static_cast<int>(alphas.size());
    const int b = cutoff + 1;

    double nbar_env = t < 1.0 ? output_excess / (2.0 * (1.0 - t)) : 0.0;
    std::vector<double> weights;
    {
        double q = 1.0 / (1.0 + nbar_env);
        const double ratio = nbar_env / (1.0 + nbar_env);
        double acc = 0.0;
        while (acc < 1.0 - 1e-15 && weights.size() < 64) {
            weights.push_back(q);
            acc += q;
            q *= ratio;
        }
    }
    const int env_max = static_cast<int>(weights.size()) - 1;
    double amax = 0.0;
    for (auto a : alphas) amax = std::max(amax, std::abs(a));
    const int d = std::max(b, static_cast<int>(std::ceil(amax * amax + 12.0 * amax))) + env_max + 30;

    const double st = std::sqrt(t);
    const double sr = std::sqrt(1.0 - t);
    // U|0,n> for env Fock n: (1/sqrt n!) (-sr a^dag + st e^dag)^n |0,0>
    std::vector<CMatrix> split(weights.size(), CMatrix::Zero(d, d));
    for (int n = 0; n <= env_max; ++n) {
        for (int j = 0; j <= n; ++j) {
            const double log_binom = std::lgamma(n + 1.0) - std::lgamma(j + 1.0) - std::lgamma(n - j + 1.0);
            const double log_norm = 0.5 * (std::lgamma(j + 1.0) + std::lgamma(n - j + 1.0) - std::lgamma(n + 1.0));
            double mag = std::exp(log_binom + log_norm) * std::pow(sr, j) * std::pow(st, n - j);
            if (j % 2 == 1) mag = -mag;
            split[n](j, n - j) = mag;
        }
    }

    // psi[k][n] = D_a(st alpha) U|0,n> D_e(sr alpha)^T as a (Bob x env) coefficient matrix
    std::vector<std::vector<CMatrix>> psi(m);
    for (int k = 0; k < m; ++k) {
        const CMatrix da = displacement(st * alphas[k], d);
        const CMatrix de = displacement(sr * alphas[k], d);
        for (int n = 0; n <= env_max; ++n) psi[k].push_back(da * split[n] * de.transpose());
    }

    CMatrix rho = CMatrix::Zero(m * b, m * b);
    for (int k = 0; k < m; ++k) {
        for (int l = k; l < m; ++l) {
            CMatrix blk = CMatrix::Zero(d, d);
            for (int n = 0; n <= env_max; ++n) blk += weights[n] * psi[k][n] * psi[l][n].adjoint();
            CMatrix folded = blk.topLeftCorner(b, b);
            folded(b - 1, b - 1) += blk.diagonal().tail(d - b).sum();
            folded *= std::sqrt(probs[k] * probs[l]);
            rho.block(k * b, l * b, b, b) = folded;
            if (l != k) rho.block(l * b, k * b, b, b) = folded.adjoint();
        }
    }
    return hermitian_part(rho);
}

inline KeyRateProblem build_problem(const protocol::Constellation& constellation,
                                    const estimation::ChannelEstimate& estimate, const ProblemOptions& opt = {}) {
    if (!(opt.sideband_fraction > 0.0 && opt.sideband_fraction <= 1.0))
        throw Error(Stage::keyrate, "sideband amplitude fraction must be in (0, 1]");
    const double eta = estimate.efficiency;
    const double v_el = estimate.electronic_noise;
    const double eps = estimate.excess_noise;
    const double t_channel = estimate.transmittance;
    if (!(t_channel > 0.0 && t_channel <= 1.0))
        throw Error(Stage::keyrate, "infeasible targets: transmittance " + std::to_string(t_channel) + " outside (0, 1]");
    if (eps < 0.0)
        throw Error(Stage::keyrate, "infeasible targets: second moments below squared first moment plus vacuum (eps < 0)");

    KeyRateProblem p;
    p.states = constellation.states;
    p.cutoff = opt.cutoff;
    p.efficiency = eta;
    p.electronic_noise = v_el;
    p.trusted_detector = opt.trusted_detector;
    const double d2 = opt.sideband_fraction * opt.sideband_fraction;
    for (auto a : constellation.points) p.alphas.push_back(a / opt.sideband_fraction);
    p.probabilities = constellation.probabilities;

    // The observed output moments are unchanged by the sideband charge: sqrt(T) alpha and T eps are
    // invariant under alpha -> alpha/d, T -> T d^2, eps -> eps / d^2.
    if (opt.trusted_detector) {
        p.transmittance = t_channel * d2;
        p.output_excess = t_channel * eps;
        p.detector_photons = detector_noise_photons(eta, v_el);
    } else {
        p.transmittance = eta * t_channel * d2;
        p.output_excess = eta * t_channel * eps + 2.0 * v_el;
        p.detector_photons = 0.0;
    }

    p.fock = fock_toolbox(opt.cutoff);
    for (auto a : p.alphas)
        p.truncation_deficit = std::max(p.truncation_deficit, p.fock.truncation_deficit(std::sqrt(p.transmittance) * a));
    p.gram = source_gram(p.alphas, p.probabilities);
    p.regions = region_operators(p.states, opt.cutoff, p.detector_photons);
    for (const auto& r : p.regions) p.region_roots.push_back(psd_sqrt(r));
    p.channel_state = thermal_loss_state(p.alphas, p.probabilities, p.transmittance, p.output_excess, opt.cutoff);

    const int m = p.states;
    const int b = opt.cutoff + 1;
    BlockSdp& sdp = p.constraints;
    sdp.blocks = m;
    sdp.block_size = b;
    const CMatrix eye = CMatrix::Identity(b, b);
    const cplx i2{0.0, 2.0};

    for (int k = 0; k < m; ++k) sdp.constraints.push_back({{{k, k, eye}}, p.gram(k, k).real()});
    for (int k = 0; k < m; ++k) {
        for (int l = k + 1; l < m; ++l) {
            sdp.constraints.push_back({{{l, k, 0.5 * eye}, {k, l, 0.5 * eye}}, p.gram(k, l).real()});
            sdp.constraints.push_back({{{l, k, eye / i2}, {k, l, -eye / i2}}, p.gram(k, l).imag()});
        }
    }

    // Moment targets come from the truncated channel state, which makes it exactly feasible; the
    // analytic forward-model values are kept as a cross-check.
    const std::vector<const CMatrix*> ops = {&p.fock.x, &p.fock.p, &p.fock.x2, &p.fock.p2};
    const double st = std::sqrt(p.transmittance);
    for (int k = 0; k < m; ++k) {
        const double mx = st * 2.0 * p.alphas[k].real();
        const double mp = st * 2.0 * p.alphas[k].imag();
        const double analytic[4] = {mx, mp, mx * mx + 1.0 + p.output_excess, mp * mp + 1.0 + p.output_excess};
        for (int o = 0; o < 4; ++o) {
            SdpConstraint c{{{k, k, *ops[o]}}, 0.0};
            c.target = 0.0;
            sdp.constraints.push_back(std::move(c));
            const double simulated = sdp.apply(sdp.size() - 1, p.channel_state);
            sdp.constraints.back().target = simulated;
            p.target_deviation = std::max(p.target_deviation, std::abs(simulated - p.probabilities[k] * analytic[o]));
        }
    }
    if (p.target_deviation > opt.target_tolerance)
        throw Error(Stage::keyrate, "Fock cutoff " + std::to_string(opt.cutoff) +
                                        " too small: moment targets off by " + std::to_string(p.target_deviation));
    return p;
}

}  // namespace cvqkd::keyrate
