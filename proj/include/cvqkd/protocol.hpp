#pragma once

// Protocol-level math for M-PSK discrete modulation: the coherent-state alphabet, correction of
// Alice's amplitudes for image-sideband leakage, Bob's angular key map and the error-correction
// leakage term.

#include <cmath>
#include <limits>
#include <vector>

#include "cvqkd/common.hpp"

namespace cvqkd::protocol {

struct Constellation {
    int states = 8;
    double amplitude = 0.0;  // alpha, SNU amplitude
    std::vector<cplx> points;
    std::vector<double> probabilities;

    double modulation_variance() const { return 2.0 * amplitude * amplitude; }

    /// Same alphabet with every amplitude scaled by `factor`.
    Constellation scaled(double factor) const {
        Constellation c = *this;
        c.amplitude *= factor;
        for (auto& p : c.points) p *= factor;
        return c;
    }
};

inline bool supported_states(int m) { return m == 4 || m == 8 || m == 12; }

inline Constellation build_constellation(int m, double modulation_variance) {
    if (!supported_states(m))
        throw Error(Stage::protocol, "unsupported protocol: " + std::to_string(m) + "-PSK (supported: 4, 8, 12)");
    if (!(modulation_variance > 0.0)) throw Error(Stage::protocol, "modulation variance must be positive");
    Constellation c;
    c.states = m;
    c.amplitude = std::sqrt(modulation_variance / 2.0);
    c.points.reserve(m);
    for (int k = 0; k < m; ++k) c.points.push_back(std::polar(c.amplitude, kTwoPi * k / m));
    c.probabilities.assign(m, 1.0 / m);
    return c;
}

struct SidebandModel {
    double suppression_db = std::numeric_limits<double>::infinity();
    double signal_power = 1.0;  // positive first-order sideband, linear
    double image_power = 0.0;   // negative first-order sideband, linear
    double amplitude_fraction = 1.0;  // d
};

/// Sideband powers for a given suppression ratio, normalized to unit signal power.
inline SidebandModel sideband_model(double suppression_db) {
    if (std::isnan(suppression_db) || suppression_db < 0.0)
        throw Error(Stage::protocol, "sideband suppression must be non-negative");
    SidebandModel s;
    s.suppression_db = suppression_db;
    s.signal_power = 1.0;
    s.image_power = std::isinf(suppression_db) ? 0.0 : 1.0 / db_to_linear(suppression_db);
    s.amplitude_fraction = std::sqrt(s.signal_power / (s.signal_power + s.image_power));
    return s;
}

struct SidebandCorrection {
    double amplitude_fraction = 1.0;  // d
    double corrected_amplitude = 0.0;  // alpha / d
};

/// d = sqrt(P+ / (P+ + P-)); Alice's amplitude is inflated to alpha / d so that the power leaked
/// into the image sideband is charged to the channel.
inline SidebandCorrection image_sideband_correction(double suppression_db, double alpha) {
    if (!(alpha > 0.0)) throw Error(Stage::protocol, "amplitude must be positive");
    const SidebandModel s = sideband_model(suppression_db);
    return {s.amplitude_fraction, alpha / s.amplitude_fraction};
}

struct KeyMapResult {
    int symbol = 0;
    bool zero_measurement = false;
};

/// Region index j with arg(y) in [(2j-1)pi/M, (2j+1)pi/M). y = 0 maps to 0 and is flagged.
inline KeyMapResult key_map_checked(cplx y, int m) {
    if (m < 2) throw Error(Stage::protocol, "key map needs at least two regions");
    if (y == cplx{0.0, 0.0}) return {0, true};
    double theta = std::atan2(y.imag(), y.real());
    if (theta < 0.0) theta += kTwoPi;
    // shift by half a wedge so region j starts at 2 pi j / M
    const double width = kTwoPi / m;
    double shifted = theta + 0.5 * width;
    int j = static_cast<int>(std::floor(shifted / width));
    // The floor can land exactly on a boundary after rounding; compare against the exact edges.
    auto lower = [&](int r) { return (2.0 * r - 1.0) * kPi / m; };
    if (j < m && theta < lower(j)) --j;
    if (j + 1 <= m && theta >= lower(j + 1)) ++j;
    return {((j % m) + m) % m, false};
}

inline int key_map(cplx y, int m) { return key_map_checked(y, m).symbol; }

struct EcAccounting {
    double efficiency = 0.0;            // beta
    double entropy_z = 0.0;             // H(Z), bits
    double conditional_entropy = 0.0;   // H(Z|X), bits
    double mutual_information = 0.0;    // I(X;Z), bits
    double leakage = 0.0;               // delta_EC = (1-beta) H(Z) + beta H(Z|X)
    double leakage_mutual_form = 0.0;   // delta_EC = H(Z) - beta I(X;Z)
    double pass_probability = 1.0;
};

namespace detail {
inline double entropy_bits(const std::vector<double>& p) {
    double h = 0.0;
    for (double v : p)
        if (v > 0.0) h -= v * std::log2(v);
    return h;
}
}  // namespace detail

/// Leakage from a joint (k, z) table given as rows k and columns z; accepts counts or probabilities.
inline EcAccounting ec_leakage(const std::vector<std::vector<double>>& joint, double beta) {
    if (!(beta >= 0.0 && beta <= 1.0)) throw Error(Stage::protocol, "reconciliation efficiency must be in [0, 1]");
    if (joint.empty()) throw Error(Stage::protocol, "empty joint table");
    const std::size_t cols = joint.front().size();
    double total = 0.0;
    for (const auto& row : joint) {
        if (row.size() != cols) throw Error(Stage::protocol, "ragged joint table");
        for (double v : row) {
            if (v < 0.0 || !std::isfinite(v)) throw Error(Stage::protocol, "joint table entries must be non-negative");
            total += v;
        }
    }
    if (!(total > 0.0)) throw Error(Stage::protocol, "joint table is all zero");

    std::vector<double> pz(cols, 0.0), pxz, px;
    for (const auto& row : joint) {
        double rx = 0.0;
        for (std::size_t z = 0; z < cols; ++z) {
            const double p = row[z] / total;
            pz[z] += p;
            pxz.push_back(p);
            rx += p;
        }
        px.push_back(rx);
    }
    EcAccounting ec;
    ec.efficiency = beta;
    ec.entropy_z = detail::entropy_bits(pz);
    const double h_xz = detail::entropy_bits(pxz);
    const double h_x = detail::entropy_bits(px);
    ec.conditional_entropy = std::max(0.0, h_xz - h_x);
    ec.mutual_information = std::max(0.0, ec.entropy_z - ec.conditional_entropy);
    ec.leakage = (1.0 - beta) * ec.entropy_z + beta * ec.conditional_entropy;
    ec.leakage_mutual_form = ec.entropy_z - beta * ec.mutual_information;
    ec.pass_probability = 1.0;
    return ec;
}

struct SecretRate {
    double bits_per_second = 0.0;
    bool no_key = false;
};

inline SecretRate secret_fraction_to_rate(double bits_per_symbol, double symbol_rate_hz) {
    if (!(symbol_rate_hz > 0.0)) throw Error(Stage::protocol, "symbol rate must be positive");
    if (!(bits_per_symbol > 0.0)) return {0.0, true};
    return {bits_per_symbol * symbol_rate_hz, false};
}

}  // namespace cvqkd::protocol
