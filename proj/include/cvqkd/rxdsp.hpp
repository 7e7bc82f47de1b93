#pragma once

// Receiver: heterodyne detector model, noise whitening, pilot-based frequency and phase recovery,
// matched filtering, delay alignment and block phase correction.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

#include "cvqkd/dsp.hpp"
#include "cvqkd/estimation.hpp"
#include "cvqkd/txdsp.hpp"
#include "cvqkd/types.hpp"

namespace cvqkd::rxdsp {

struct DetectorModel {
    double efficiency = 0.37;
    double electronic_noise = 0.20;  // SNU
    std::optional<txdsp::TransferFunction> response;
    int adc_bits = 12;          // 0 disables quantization
    double adc_clip_ratio = 6.0;
    double snu_scale = 1.0;     // output power per SNU
    bool shot_noise = true;     // false gives the noiseless diagnostic detector
    bool local_oscillator = true;

    void validate() const {
        if (!(efficiency > 0.0 && efficiency <= 1.0)) throw Error(Stage::rxdsp, "efficiency must be in (0, 1]");
        if (electronic_noise < 0.0) throw Error(Stage::rxdsp, "electronic noise must be >= 0");
        if (!(snu_scale > 0.0)) throw Error(Stage::rxdsp, "SNU scale must be positive");
    }
};

struct DetectorOutput {
    Waveform electrical;
    double overload_fraction = 0.0;
};

/// Complex heterodyne output sqrt(2 eta) E(t) + shot + electronic noise, through the detector
/// response, scaled by sqrt(snu_scale) and digitized. Per sample and quadrature the shot noise has
/// variance 1 and the electronic noise v_el, so a unit-energy matched filter sees them in SNU.
/// Without the LO both signal and shot noise vanish and only electronic noise is recorded.
inline DetectorOutput heterodyne_detect(const Waveform& field, const DetectorModel& det, std::mt19937_64& rng) {
    field.validate(Stage::rxdsp);
    det.validate();
    const std::size_t n = field.size();
    std::vector<cplx> y(n, cplx{});
    if (det.local_oscillator) {
        const double g = std::sqrt(2.0 * det.efficiency);
        for (std::size_t i = 0; i < n; ++i) y[i] = g * field.samples[i];
        if (det.shot_noise) {
            auto shot = dsp::complex_gaussian(n, 1.0, rng);
            for (std::size_t i = 0; i < n; ++i) y[i] += shot[i];
        }
    }
    if (det.electronic_noise > 0.0) {
        auto el = dsp::complex_gaussian(n, det.electronic_noise, rng);
        for (std::size_t i = 0; i < n; ++i) y[i] += el[i];
    }
    if (det.response) {
        const auto& h = *det.response;
        dsp::apply_frequency_response(y, field.sample_rate, [&](double f) { return h.at(f); });
    }
    const double s = std::sqrt(det.snu_scale);
    for (auto& v : y) v *= s;
    DetectorOutput out;
    if (det.adc_bits > 0) {
        const double rms = dsp::component_rms(y);
        if (rms > 0.0) out.overload_fraction = dsp::quantize(y, det.adc_bits, det.adc_clip_ratio * rms);
    }
    out.electrical.samples = std::move(y);
    out.electrical.sample_rate = field.sample_rate;
    out.electrical.origin = Origin::electrical;
    return out;
}

/// Zero-phase spectral mask proportional to 1/sqrt(PSD) below the cutoff and zero above.
struct WhiteningFilter {
    dsp::Psd smoothed;
    double cutoff = 0.0;
    double reference = 1.0;

    double gain(double f) const {
        if (std::abs(f) > cutoff) return 0.0;
        return std::sqrt(reference / smoothed.at(f));
    }
};

struct WhiteningOptions {
    double smoothing_hz = 200e6;  // moving-average width applied to the measured PSD
};

inline WhiteningFilter design_whitening(const dsp::Psd& shot_psd, double cutoff, const WhiteningOptions& opt = {}) {
    if (!(cutoff > 0.0)) throw Error(Stage::rxdsp, "whitening cutoff must be positive");
    for (std::size_t i = 0; i < shot_psd.density.size(); ++i)
        if (std::abs(shot_psd.frequency[i]) <= cutoff && !(shot_psd.density[i] > 0.0))
            throw Error(Stage::rxdsp, "non-positive PSD bin below the whitening cutoff");
    WhiteningFilter w;
    w.cutoff = cutoff;
    w.smoothed = shot_psd;
    const std::size_t n = shot_psd.density.size();
    const long half = std::max<long>(0, std::lround(0.5 * opt.smoothing_hz / shot_psd.bin_width));
    std::vector<double> prefix(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + shot_psd.density[i];
    for (std::size_t i = 0; i < n; ++i) {
        const long lo = std::max<long>(0, static_cast<long>(i) - half);
        const long hi = std::min<long>(static_cast<long>(n) - 1, static_cast<long>(i) + half);
        w.smoothed.density[i] = (prefix[hi + 1] - prefix[lo]) / static_cast<double>(hi - lo + 1);
    }
    double acc = 0.0;
    std::size_t cnt = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (std::abs(w.smoothed.frequency[i]) <= cutoff) {
            acc += w.smoothed.density[i];
            ++cnt;
        }
    w.reference = acc / static_cast<double>(cnt);
    return w;
}

inline void apply_whitening(std::vector<cplx>& x, double fs, const WhiteningFilter& w) {
    dsp::apply_frequency_response(x, fs, [&](double f) { return cplx(w.gain(f)); });
}

struct PilotOptions {
    double band_low = -2.6e9;   // Hz, search band in the complex beat spectrum
    double band_high = -2.2e9;
    double lowpass_hz = 100e3;  // -3 dB point of the Gaussian phase low-pass
    double min_peak_db = 20.0;  // peak over median in-band bin power
};

struct PilotRecovery {
    double frequency = 0.0;      // Hz
    std::vector<double> phase;   // rad per sample, relative to exp(i 2 pi f n / fs)
    double peak_db = 0.0;
};

/// Pilot frequency from the windowed FFT peak with Gaussian interpolation, refined by the slope of
/// the low-passed pilot phase, and the residual phase trace.
inline PilotRecovery recover_frequency_and_phase(const Waveform& elec, const PilotOptions& opt = {}) {
    elec.validate(Stage::rxdsp);
    const double fs = elec.sample_rate;
    const std::size_t n = elec.size();
    const std::size_t len = dsp::fast_length(2 * n);
    std::vector<cplx> buf(len, cplx{});
    for (std::size_t i = 0; i < n; ++i) buf[i] = elec.samples[i] * (0.5 - 0.5 * std::cos(kTwoPi * i / n));
    dsp::fft(buf);
    long best = -1;
    double best_pow = 0.0;
    std::vector<double> band;
    for (std::size_t k = 0; k < len; ++k) {
        const double f = dsp::bin_frequency(k, len, fs);
        if (f < opt.band_low || f > opt.band_high) continue;
        const double p = std::norm(buf[k]);
        band.push_back(p);
        if (p > best_pow) {
            best_pow = p;
            best = static_cast<long>(k);
        }
    }
    if (best < 0 || band.size() < 8) throw Error(Stage::rxdsp, "pilot search band is empty");
    std::nth_element(band.begin(), band.begin() + band.size() / 2, band.end());
    PilotRecovery r;
    r.peak_db = 10.0 * std::log10(best_pow / band[band.size() / 2]);
    if (r.peak_db < opt.min_peak_db) throw Error(Stage::rxdsp, "no pilot peak above threshold");

    const double lm = std::log(std::norm(buf[(best + len - 1) % len]));
    const double l0 = std::log(std::norm(buf[best]));
    const double lp = std::log(std::norm(buf[(best + 1) % len]));
    const double denom = lm - 2.0 * l0 + lp;
    const double delta = denom != 0.0 ? 0.5 * (lm - lp) / denom : 0.0;
    const double coarse = dsp::bin_frequency(static_cast<std::size_t>(best), len, fs) + delta * fs / len;

    std::vector<cplx> z(elec.samples);
    dsp::mix(z, -coarse, fs);
    const double sigma_f = opt.lowpass_hz / std::sqrt(std::log(2.0));
    dsp::apply_frequency_response(
        z, fs,
        [&](double f) {
            const double u = f / sigma_f;
            return u * u > 80.0 ? cplx{} : cplx(std::exp(-0.5 * u * u));
        },
        n);
    std::vector<double> phase(n);
    double prev = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double a = std::arg(z[i]);
        phase[i] = i == 0 ? a : prev + std::remainder(a - prev, kTwoPi);
        prev = phase[i];
    }
    // least-squares slope over the central 80% of the record, away from the filter edges
    const std::size_t lo = n / 10, hi = n - n / 10;
    double st = 0.0, sp = 0.0, stt = 0.0, stp = 0.0;
    for (std::size_t i = lo; i < hi; ++i) {
        const double t = static_cast<double>(i);
        st += t;
        sp += phase[i];
        stt += t * t;
        stp += t * phase[i];
    }
    const double m = static_cast<double>(hi - lo);
    const double slope = (m * stp - st * sp) / (m * stt - st * st);  // rad per sample
    r.frequency = coarse + slope * fs / kTwoPi;
    r.phase.resize(n);
    for (std::size_t i = 0; i < n; ++i) r.phase[i] = phase[i] - slope * static_cast<double>(i);
    return r;
}

struct ReceiverOptions {
    int sps = 16;
    double roll_off = 0.2;               // matched RRC
    double pilot_to_quantum = 1.2e9;     // quantum centre minus pilot, Hz
    long max_lag = 1 << 15;               // samples
    std::size_t block_symbols = 10000;
    int phase_grid = 64;
    int states = 8;
    double min_correlation_ratio = 8.0;  // peak over RMS of the correlation
};

/// Whitening and matched filtering in one frequency-domain pass around the quantum band, then
/// down-conversion using the pilot frequency and phase. Output stays at the sample rate.
inline std::vector<cplx> receiver_front_end(const Waveform& elec, const WhiteningFilter* whitening, double quantum_freq,
                                            const std::vector<double>* phase, double roll_off, int sps) {
    std::vector<cplx> z(elec.samples);
    const double fs = elec.sample_rate;
    const double rs = fs / sps;
    dsp::apply_frequency_response(z, fs, [&](double f) {
        const double m = txdsp::rrc_response(f - quantum_freq, roll_off, rs, sps);
        if (m == 0.0) return cplx{};
        return cplx(whitening ? m * whitening->gain(f) : m);
    });
    const double w = -kTwoPi * quantum_freq / fs;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double ph = w * static_cast<double>(i) - (phase ? (*phase)[i] : 0.0);
        z[i] *= std::polar(1.0, ph);
    }
    return z;
}

struct Alignment {
    long lag = 0;
    double peak_ratio = 0.0;
};

/// Integer-sample delay maximizing |sum_k conj(a_k) z[lag + k sps]| over 0 <= lag <= max_lag.
inline Alignment find_lag(const std::vector<cplx>& z, const std::vector<cplx>& reference, int sps, long max_lag) {
    const std::size_t nref = reference.size();
    const long max_shift = max_lag / sps + 1;
    Alignment best;
    double best_val = -1.0;
    double sum_sq = 0.0;
    std::size_t count = 0;
    for (int r = 0; r < sps; ++r) {
        std::vector<cplx> s;
        for (std::size_t i = static_cast<std::size_t>(r); i < z.size(); i += sps) s.push_back(z[i]);
        const std::size_t len = dsp::fast_length(s.size() + nref);
        std::vector<cplx> a(len, cplx{}), b(len, cplx{});
        std::copy(s.begin(), s.end(), a.begin());
        std::copy(reference.begin(), reference.end(), b.begin());
        dsp::fft(a);
        dsp::fft(b);
        for (std::size_t k = 0; k < len; ++k) a[k] *= std::conj(b[k]);
        dsp::ifft(a);
        for (long d = 0; d <= max_shift && d < static_cast<long>(len); ++d) {
            const long lag = r + d * sps;
            if (lag > max_lag) break;
            const double v = std::abs(a[d]);
            sum_sq += v * v;
            ++count;
            if (v > best_val) {
                best_val = v;
                best.lag = lag;
            }
        }
    }
    const double rms = std::sqrt(std::max(sum_sq - best_val * best_val, 0.0) / std::max<std::size_t>(count - 1, 1));
    best.peak_ratio = rms > 0.0 ? best_val / rms : std::numeric_limits<double>::infinity();
    return best;
}

/// Rotation phi maximizing Re(e^{i phi} c) searched on a grid of `grid` angles across the window
/// [centre - pi/M, centre + pi/M) and refined by golden section. Sets `edge` when the optimum sits
/// on the window boundary, i.e. the block phase is ambiguous by a multiple of 2 pi / M.
inline double block_phase(cplx c, double centre, int states, int grid, bool& edge) {
    const double half = kPi / states;
    const double step = 2.0 * half / grid;
    auto score = [&](double phi) { return -std::real(std::polar(1.0, phi) * c); };
    int best = 0;
    double best_v = std::numeric_limits<double>::infinity();
    for (int i = 0; i < grid; ++i) {
        const double v = score(centre - half + i * step);
        if (v < best_v) {
            best_v = v;
            best = i;
        }
    }
    edge = best == 0 || best == grid - 1;
    double a = centre - half + (best - 1) * step, b = centre - half + (best + 1) * step;
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = b - g * (b - a), x2 = a + g * (b - a);
    double f1 = score(x1), f2 = score(x2);
    while (b - a > 1e-10) {
        if (f1 < f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = score(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = score(x2);
        }
    }
    return 0.5 * (a + b);
}

/// Full receiver chain of one record: whitening, down-conversion by the pilot-derived quantum
/// frequency with pilot phase correction, matched filter, lag search against Alice's symbols,
/// decimation, block phase correction and SNU normalization.
inline MeasuredFrame demodulate_and_align(const Waveform& elec, const PilotRecovery& pilot,
                                          const WhiteningFilter* whitening, const SymbolFrame& tx,
                                          const ReceiverOptions& opt, double snu_scale = 1.0) {
    elec.validate(Stage::rxdsp);
    if (pilot.phase.size() != elec.size()) throw Error(Stage::rxdsp, "pilot phase trace length mismatch");
    const double fq = pilot.frequency + opt.pilot_to_quantum;
    const std::vector<cplx> z = receiver_front_end(elec, whitening, fq, &pilot.phase, opt.roll_off, opt.sps);

    const Alignment al = find_lag(z, tx.symbols, opt.sps, opt.max_lag);
    if (al.peak_ratio < opt.min_correlation_ratio)
        throw Error(Stage::rxdsp, "correlation peak below significance threshold; alignment failed");

    MeasuredFrame m;
    m.lag = al.lag;
    m.frequency_estimate = pilot.frequency;
    m.snu_scale = snu_scale;
    const std::size_t avail = al.lag < static_cast<long>(z.size()) ? (z.size() - 1 - al.lag) / opt.sps + 1 : 0;
    const std::size_t count = std::min(avail, tx.symbols.size());
    if (count == 0) throw Error(Stage::rxdsp, "no symbols overlap after alignment");
    m.samples.resize(count);
    m.indices.assign(tx.indices.begin(), tx.indices.begin() + count);
    m.phase_trace.resize(count);
    for (std::size_t k = 0; k < count; ++k) {
        const std::size_t i = al.lag + k * opt.sps;
        m.samples[k] = z[i];
        m.phase_trace[k] = pilot.phase[i];
    }

    cplx total{};
    for (std::size_t k = 0; k < count; ++k) total += std::conj(tx.symbols[k]) * m.samples[k];
    double centre = -std::arg(total);
    for (std::size_t start = 0; start < count;) {
        std::size_t end = std::min(count, start + opt.block_symbols);
        if (count - end < opt.block_symbols / 2) end = count;  // short remainder joins this block
        cplx c{};
        for (std::size_t k = start; k < end; ++k) c += std::conj(tx.symbols[k]) * m.samples[k];
        bool edge = false;
        const double phi = block_phase(c, centre, opt.states, opt.phase_grid, edge);
        m.phase_ambiguity_flagged = m.phase_ambiguity_flagged || edge;
        const cplx rot = std::polar(1.0 / std::sqrt(snu_scale), phi);
        for (std::size_t k = start; k < end; ++k) m.samples[k] *= rot;
        centre = phi;
        start = end;
    }
    return m;
}

/// Symbol-rate samples of a noise-only record passed through the same front end.
inline std::vector<cplx> calibration_samples(const Waveform& elec, const WhiteningFilter* whitening,
                                             double quantum_freq, double roll_off, int sps, std::size_t guard) {
    const std::vector<cplx> z = receiver_front_end(elec, whitening, quantum_freq, nullptr, roll_off, sps);
    std::vector<cplx> out;
    for (std::size_t i = guard; i + guard < z.size(); i += sps) out.push_back(z[i]);
    return out;
}

/// Error vector magnitude after the least-squares complex gain between measured and reference
/// symbols: RMS error over RMS scaled reference.
inline double evm(const std::vector<cplx>& measured, const std::vector<cplx>& reference) {
    const std::size_t n = std::min(measured.size(), reference.size());
    cplx num{};
    double den = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        num += std::conj(reference[k]) * measured[k];
        den += std::norm(reference[k]);
    }
    const cplx g = num / den;
    double e = 0.0;
    for (std::size_t k = 0; k < n; ++k) e += std::norm(measured[k] - g * reference[k]);
    return std::sqrt(e / (std::norm(g) * den));
}

}  // namespace cvqkd::rxdsp
