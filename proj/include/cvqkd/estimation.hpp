#pragma once

// Shot-noise calibration, per-state quadrature moments and the channel estimator
//
//     T   = 2 <x_A x_B>^2 / (eta <x_A^2>^2)
//     eps = (<x_B^2> - 1 - v_el) / (eta T / 2) - V_A
//
// Alice's quadratures are x_A = 2 Re(alpha_k), p_A = 2 Im(alpha_k), so <x_A^2> = V_A and the
// detected quadrature is x_B = sqrt(eta T / 2) x_A + n with Var(n) = 1 + v_el + eta T eps / 2.

#include <cmath>
#include <span>
#include <vector>

#include "cvqkd/protocol.hpp"
#include "cvqkd/types.hpp"

namespace cvqkd::estimation {

struct SnuCalibration {
    double snu_scale = 1.0;  // per-quadrature variance of pure shot noise, in record units
    double electronic_noise = 0.0;  // v_el, SNU
};

namespace detail {
inline double quadrature_variance(std::span<const cplx> r) {
    if (r.empty()) return 0.0;
    cplx mean{0.0, 0.0};
    for (const auto& v : r) mean += v;
    mean /= static_cast<double>(r.size());
    double acc = 0.0;
    for (const auto& v : r) acc += std::norm(v - mean);
    return acc / (2.0 * r.size());
}
}  // namespace detail

/// Vacuum records carry shot plus electronic noise; electronic records carry the detector's
/// noise alone with the LO blocked.
inline SnuCalibration calibrate_snu(std::span<const cplx> vacuum, std::span<const cplx> electronic) {
    if (vacuum.empty() || electronic.empty()) throw Error(Stage::estimation, "calibration records are empty");
    const double v_vac = detail::quadrature_variance(vacuum);
    const double v_el = detail::quadrature_variance(electronic);
    if (!(v_vac > v_el)) throw Error(Stage::estimation, "calibration failure: vacuum variance does not exceed electronic variance");
    SnuCalibration c;
    c.snu_scale = v_vac - v_el;
    c.electronic_noise = v_el / c.snu_scale;
    return c;
}

struct StateMoments {
    double mean_x = 0.0;
    double mean_p = 0.0;
    double second_x = 0.0;
    double second_p = 0.0;
    long long count = 0;
};

struct MomentStats {
    std::vector<StateMoments> states;
    // Ensemble moments pooled over states; x and p kept separately.
    double cross_x = 0.0;   // <x_A x_B>
    double cross_p = 0.0;   // <p_A p_B>
    double alice_second_x = 0.0;  // <x_A^2>
    double alice_second_p = 0.0;
    double bob_second_x = 0.0;    // <x_B^2>
    double bob_second_p = 0.0;
    long long total = 0;

    double cross() const { return 0.5 * (cross_x + cross_p); }
    double alice_second() const { return 0.5 * (alice_second_x + alice_second_p); }
    double bob_second() const { return 0.5 * (bob_second_x + bob_second_p); }
};

/// Mergeable running sums, so frames can be reduced in a fixed order.
class MomentAccumulator {
public:
    explicit MomentAccumulator(const protocol::Constellation& c)
        : alphabet_(c.points), sums_(c.points.size()) {}

    void add(cplx y, int k) {
        if (k < 0 || k >= static_cast<int>(alphabet_.size())) throw Error(Stage::estimation, "state index out of range");
        auto& s = sums_[k];
        s.x += y.real();
        s.p += y.imag();
        s.xx += y.real() * y.real();
        s.pp += y.imag() * y.imag();
        ++s.n;
    }

    void add(std::span<const cplx> samples, std::span<const int> indices) {
        if (samples.size() != indices.size()) throw Error(Stage::estimation, "samples and indices differ in length");
        for (std::size_t i = 0; i < samples.size(); ++i) add(samples[i], indices[i]);
    }

    void merge(const MomentAccumulator& other) {
        if (other.sums_.size() != sums_.size()) throw Error(Stage::estimation, "mismatched alphabets");
        for (std::size_t k = 0; k < sums_.size(); ++k) {
            sums_[k].x += other.sums_[k].x;
            sums_[k].p += other.sums_[k].p;
            sums_[k].xx += other.sums_[k].xx;
            sums_[k].pp += other.sums_[k].pp;
            sums_[k].n += other.sums_[k].n;
        }
    }

    MomentStats stats(bool require_all_states = true) const {
        MomentStats m;
        m.states.resize(sums_.size());
        double n_total = 0.0;
        for (std::size_t k = 0; k < sums_.size(); ++k) {
            const auto& s = sums_[k];
            if (s.n == 0) {
                if (require_all_states) throw Error(Stage::estimation, "missing state index " + std::to_string(k));
                continue;
            }
            const double n = static_cast<double>(s.n);
            auto& st = m.states[k];
            st.mean_x = s.x / n;
            st.mean_p = s.p / n;
            st.second_x = s.xx / n;
            st.second_p = s.pp / n;
            st.count = s.n;
            const double xa = 2.0 * alphabet_[k].real();
            const double pa = 2.0 * alphabet_[k].imag();
            m.cross_x += xa * s.x;
            m.cross_p += pa * s.p;
            m.alice_second_x += xa * xa * n;
            m.alice_second_p += pa * pa * n;
            m.bob_second_x += s.xx;
            m.bob_second_p += s.pp;
            n_total += n;
        }
        if (n_total == 0.0) throw Error(Stage::estimation, "no samples");
        m.cross_x /= n_total;
        m.cross_p /= n_total;
        m.alice_second_x /= n_total;
        m.alice_second_p /= n_total;
        m.bob_second_x /= n_total;
        m.bob_second_p /= n_total;
        m.total = static_cast<long long>(n_total);
        return m;
    }

private:
    struct Sums {
        double x = 0.0, p = 0.0, xx = 0.0, pp = 0.0;
        long long n = 0;
    };
    std::vector<cplx> alphabet_;
    std::vector<Sums> sums_;
};

inline MomentStats conditional_moments(const MeasuredFrame& frame, const protocol::Constellation& c) {
    MomentAccumulator acc(c);
    acc.add(frame.samples, frame.indices);
    return acc.stats();
}

struct ForwardModel {
    double transmittance = 1.0;
    double excess_noise = 0.0;  // SNU, channel-input referred
    double efficiency = 1.0;    // eta
    double electronic_noise = 0.0;
};

/// Expected moments of the linear heterodyne model, with uniform state probabilities.
inline MomentStats forward_moments(const protocol::Constellation& c, const ForwardModel& f) {
    const double gain = std::sqrt(f.efficiency * f.transmittance / 2.0);
    const double noise = 1.0 + f.electronic_noise + f.efficiency * f.transmittance * f.excess_noise / 2.0;
    MomentStats m;
    for (std::size_t k = 0; k < c.points.size(); ++k) {
        const double xa = 2.0 * c.points[k].real();
        const double pa = 2.0 * c.points[k].imag();
        const double pk = c.probabilities[k];
        StateMoments s;
        s.mean_x = gain * xa;
        s.mean_p = gain * pa;
        s.second_x = s.mean_x * s.mean_x + noise;
        s.second_p = s.mean_p * s.mean_p + noise;
        m.states.push_back(s);
        m.cross_x += pk * xa * s.mean_x;
        m.cross_p += pk * pa * s.mean_p;
        m.alice_second_x += pk * xa * xa;
        m.alice_second_p += pk * pa * pa;
        m.bob_second_x += pk * s.second_x;
        m.bob_second_p += pk * s.second_p;
    }
    return m;
}

struct ChannelEstimate {
    double transmittance = 0.0;  // T-hat
    double excess_noise = 0.0;   // eps-hat, SNU; may be slightly negative
    double modulation_variance = 0.0;
    double efficiency = 0.0;
    double electronic_noise = 0.0;
    bool negative_excess_noise = false;

    /// Values handed to the key-rate engine: eps clamped at zero.
    double clamped_excess_noise() const { return std::max(0.0, excess_noise); }
};

namespace detail {
inline ChannelEstimate estimate_from(double cross, double alice_second, double bob_second, double eta,
                                     double v_el, double va) {
    if (alice_second == 0.0) throw Error(Stage::estimation, "<x_A^2> is zero");
    if (!(eta > 0.0)) throw Error(Stage::estimation, "detector efficiency must be positive");
    ChannelEstimate e;
    e.transmittance = 2.0 * cross * cross / (eta * alice_second * alice_second);
    if (!(e.transmittance > 0.0)) throw Error(Stage::estimation, "estimated transmittance is zero");
    e.excess_noise = (bob_second - 1.0 - v_el) / (eta * e.transmittance / 2.0) - va;
    e.modulation_variance = va;
    e.efficiency = eta;
    e.electronic_noise = v_el;
    e.negative_excess_noise = e.excess_noise < 0.0;
    return e;
}
}  // namespace detail

/// Pooled over both quadratures and all states.
inline ChannelEstimate estimate_channel(const MomentStats& s, double eta, double v_el, double va) {
    return detail::estimate_from(s.cross(), s.alice_second(), s.bob_second(), eta, v_el, va);
}

inline ChannelEstimate estimate_channel_x(const MomentStats& s, double eta, double v_el, double va) {
    return detail::estimate_from(s.cross_x, s.alice_second_x, s.bob_second_x, eta, v_el, va);
}

inline ChannelEstimate estimate_channel_p(const MomentStats& s, double eta, double v_el, double va) {
    return detail::estimate_from(s.cross_p, s.alice_second_p, s.bob_second_p, eta, v_el, va);
}

}  // namespace cvqkd::estimation
