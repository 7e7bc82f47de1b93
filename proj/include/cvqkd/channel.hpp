#pragma once

// Fiber channel: attenuation, band-limited excess noise, laser/fiber phase drift, LO detuning.
//
// Envelope units are coherent amplitudes: a symbol of amplitude alpha appears as alpha after
// matched filtering with the unit-energy RRC. Excess noise eps (channel-input referred, SNU) is
// therefore injected with variance T eps / 4 per real component, i.e. T eps / 2 per heterodyne
// quadrature once the detector's sqrt(2) amplitude gain is applied.

#include <cmath>
#include <optional>
#include <random>
#include <vector>

#include "cvqkd/dsp.hpp"
#include "cvqkd/types.hpp"

namespace cvqkd::channel {

enum class PhaseModel {
    // Brownian phase, increments N(0, D dt) with D chosen so the RMS excursion over 1 ms equals
    // rate * 1 ms.
    wiener,
    // Phase integrated from an Ornstein-Uhlenbeck frequency with 1 ms correlation time, scaled to
    // the same 1 ms RMS excursion; smooth on the pilot-tracking time scale.
    integrated_ou,
};

struct ChannelParams {
    double length_km = 0.0;
    double attenuation_db_per_km = 0.2;
    std::optional<double> transmittance;  // overrides the length-derived value
    double excess_noise = 0.0;            // SNU, channel-input referred
    double phase_drift_rate = 0.0;        // rad/s
    PhaseModel phase_model = PhaseModel::wiener;
    double phase_calibration_time = 1e-3;  // s
    double freq_offset = 0.0;              // Hz
    long delay_samples = 0;
    double noise_center = 0.0;     // Hz, centre of the injected-noise band
    double noise_bandwidth = 0.0;  // Hz, two-sided; 0 injects white noise over the whole band
    std::uint64_t seed = 1;

    double effective_transmittance() const;

    void validate() const {
        if (length_km < 0.0 || attenuation_db_per_km < 0.0) throw Error(Stage::channel, "length and attenuation must be >= 0");
        const double t = effective_transmittance();
        if (!(t > 0.0 && t <= 1.0)) throw Error(Stage::channel, "transmittance must be in (0, 1]");
        if (excess_noise < 0.0) throw Error(Stage::channel, "excess noise must be >= 0");
        if (phase_drift_rate < 0.0) throw Error(Stage::channel, "phase drift rate must be >= 0");
        if (delay_samples < 0) throw Error(Stage::channel, "delay must be non-negative");
        if (noise_bandwidth < 0.0) throw Error(Stage::channel, "noise bandwidth must be >= 0");
    }
};

inline double fiber_transmittance(double length_km, double attenuation_db_per_km) {
    if (length_km < 0.0 || attenuation_db_per_km < 0.0) throw Error(Stage::channel, "length and attenuation must be >= 0");
    return std::pow(10.0, -attenuation_db_per_km * length_km / 10.0);
}

inline double ChannelParams::effective_transmittance() const {
    return transmittance ? *transmittance : fiber_transmittance(length_km, attenuation_db_per_km);
}

/// Phase process sampled at n points spaced dt apart, starting at 0.
inline std::vector<double> phase_drift(std::size_t n, double dt, double rate, PhaseModel model, double t_cal,
                                       std::mt19937_64& rng) {
    std::vector<double> phi(n, 0.0);
    if (rate == 0.0 || n == 0) return phi;
    std::normal_distribution<double> g(0.0, 1.0);
    const double excursion = rate * t_cal;  // RMS phase change over t_cal
    if (model == PhaseModel::wiener) {
        const double step = excursion * std::sqrt(dt / t_cal);
        for (std::size_t i = 1; i < n; ++i) phi[i] = phi[i - 1] + step * g(rng);
        return phi;
    }
    // Var[phi(t_cal) - phi(0)] = 2 s^2 tau^2 (t_cal/tau - 1 + e^{-t_cal/tau}) with tau = t_cal
    const double tau = t_cal;
    const double sigma = excursion / (tau * std::sqrt(2.0 * std::exp(-1.0)));
    const double a = std::exp(-dt / tau);
    const double kick = sigma * std::sqrt(1.0 - a * a);
    double w = sigma * g(rng);
    for (std::size_t i = 1; i < n; ++i) {
        phi[i] = phi[i - 1] + w * dt;
        w = a * w + kick * g(rng);
    }
    return phi;
}

struct ChannelOutput {
    Waveform field;
    std::vector<double> phase;  // applied drift, rad per sample
};

inline ChannelOutput propagate(const Waveform& field, const ChannelParams& p) {
    field.validate(Stage::channel);
    if (field.origin != Origin::optical_envelope) throw Error(Stage::channel, "channel input must be an optical envelope");
    p.validate();
    std::mt19937_64 rng(p.seed);
    const double t = p.effective_transmittance();
    const double fs = field.sample_rate;
    const std::size_t n = field.size();

    ChannelOutput out;
    out.field.sample_rate = fs;
    out.field.origin = Origin::optical_envelope;
    auto& y = out.field.samples;
    y.assign(n, cplx{});
    const double st = std::sqrt(t);
    for (std::size_t i = static_cast<std::size_t>(p.delay_samples); i < n; ++i) y[i] = st * field.samples[i - p.delay_samples];

    if (p.excess_noise > 0.0) {
        const double var = t * p.excess_noise / 4.0;
        if (p.noise_bandwidth > 0.0) {
            auto noise = dsp::complex_gaussian(n, var, rng);
            const double lo = p.noise_center - 0.5 * p.noise_bandwidth;
            const double hi = p.noise_center + 0.5 * p.noise_bandwidth;
            dsp::apply_frequency_response(noise, fs, [&](double f) { return (f >= lo && f <= hi) ? cplx(1.0) : cplx(0.0); });
            for (std::size_t i = 0; i < n; ++i) y[i] += noise[i];
        } else {
            auto noise = dsp::complex_gaussian(n, var, rng);
            for (std::size_t i = 0; i < n; ++i) y[i] += noise[i];
        }
    }

    out.phase = phase_drift(n, 1.0 / fs, p.phase_drift_rate, p.phase_model, p.phase_calibration_time, rng);
    const double w = -kTwoPi * p.freq_offset / fs;
    for (std::size_t i = 0; i < n; ++i) y[i] *= std::polar(1.0, out.phase[i] + w * static_cast<double>(i));
    return out;
}

}  // namespace cvqkd::channel
