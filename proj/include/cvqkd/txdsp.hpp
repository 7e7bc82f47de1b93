#pragma once

// Transmitter: symbol generation, RRC shaping with digital up-shift, pre-emphasis, pilot insertion,
// DAC quantization and the IQ-modulator envelope model.

#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cvqkd/dsp.hpp"
#include "cvqkd/protocol.hpp"
#include "cvqkd/types.hpp"

namespace cvqkd::txdsp {

/// Sampled complex frequency response. Grids that start at f >= 0 describe real filters and are
/// extended to negative frequencies by conjugate symmetry.
struct TransferFunction {
    std::vector<double> frequency;  // Hz, strictly increasing
    std::vector<cplx> response;

    void validate(Stage stage) const {
        if (frequency.size() < 2 || frequency.size() != response.size())
            throw Error(stage, "transfer function needs at least two matching frequency/response points");
        for (std::size_t i = 1; i < frequency.size(); ++i)
            if (!(frequency[i] > frequency[i - 1])) throw Error(stage, "transfer function grid must increase");
        for (const auto& r : response)
            if (!std::isfinite(r.real()) || !std::isfinite(r.imag())) throw Error(stage, "transfer function not finite");
    }

    cplx at(double f) const {
        if (f < 0.0 && frequency.front() >= 0.0) return std::conj(at(-f));
        if (f <= frequency.front()) return response.front();
        if (f >= frequency.back()) return response.back();
        const auto it = std::upper_bound(frequency.begin(), frequency.end(), f);
        const std::size_t i = static_cast<std::size_t>(it - frequency.begin());
        const double w = (f - frequency[i - 1]) / (frequency[i] - frequency[i - 1]);
        return (1.0 - w) * response[i - 1] + w * response[i];
    }

    double magnitude_db(double f) const { return 20.0 * std::log10(std::abs(at(f))); }
};

/// Tabulates a response function on [0, max_freq].
template <class F>
TransferFunction tabulate(F&& h, double max_freq, std::size_t points = 4097) {
    TransferFunction t;
    for (std::size_t i = 0; i < points; ++i) {
        const double f = max_freq * i / (points - 1);
        t.frequency.push_back(f);
        t.response.push_back(h(f));
    }
    return t;
}

/// Second-order maximally flat low-pass magnitude, |H|^2 = 1 / (1 + (f/f3)^4), zero phase.
inline TransferFunction second_order_lowpass(double f3db, double max_freq) {
    if (!(f3db > 0.0)) throw Error(Stage::txdsp, "3 dB frequency must be positive");
    return tabulate([&](double f) { return cplx(1.0 / std::sqrt(1.0 + std::pow(f / f3db, 4))); }, max_freq);
}

/// First-order low-pass magnitude, |H|^2 = 1 / (1 + (f/f3)^2), zero phase.
inline TransferFunction one_pole_lowpass(double f3db, double max_freq) {
    if (!(f3db > 0.0)) throw Error(Stage::txdsp, "3 dB frequency must be positive");
    return tabulate([&](double f) { return cplx(1.0 / std::sqrt(1.0 + std::pow(f / f3db, 2))); }, max_freq);
}

inline TransferFunction flat_response(double max_freq) {
    return {{0.0, max_freq}, {cplx(1.0), cplx(1.0)}};
}

/// Two-column (Hz, dB) or three-column (Hz, re, im) CSV; '#' lines are comments.
inline TransferFunction load_transfer_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Stage::config, "cannot open transfer function file " + path);
    TransferFunction t;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        for (auto& ch : line)
            if (ch == ',') ch = ' ';
        std::istringstream ss(line);
        std::vector<double> v;
        double x;
        while (ss >> x) v.push_back(x);
        if (v.size() == 2) {
            t.frequency.push_back(v[0]);
            t.response.push_back(std::pow(10.0, v[1] / 20.0));
        } else if (v.size() == 3) {
            t.frequency.push_back(v[0]);
            t.response.push_back({v[1], v[2]});
        } else if (!v.empty()) {
            throw Error(Stage::config, "transfer function rows need 2 or 3 columns: " + line);
        }
    }
    t.validate(Stage::config);
    return t;
}

inline SymbolFrame generate_symbols(std::uint64_t seed, std::size_t n, const protocol::Constellation& c,
                                    double symbol_rate = 1.5625e9) {
    if (n == 0) throw Error(Stage::txdsp, "symbol count must be positive");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> pick(0, c.states - 1);
    SymbolFrame f;
    f.symbol_rate = symbol_rate;
    f.symbols.resize(n);
    f.indices.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        f.indices[i] = pick(rng);
        f.symbols[i] = c.points[f.indices[i]];
    }
    return f;
}

/// Unit-energy root-raised-cosine taps spanning `span` symbols (span*sps + 1 taps).
inline std::vector<double> rrc_taps(double beta, int span, int sps) {
    if (!(beta > 0.0 && beta <= 1.0)) throw Error(Stage::txdsp, "roll-off must be in (0, 1]");
    if (span <= 0 || span % 2 != 0) throw Error(Stage::txdsp, "RRC span must be a positive even symbol count");
    if (sps < 2) throw Error(Stage::txdsp, "RRC needs at least 2 samples per symbol");
    const int n = span * sps + 1;
    std::vector<double> h(n);
    const double edge = 1.0 / (4.0 * beta);
    for (int i = 0; i < n; ++i) {
        const double t = static_cast<double>(i - n / 2) / sps;
        double v;
        if (t == 0.0) {
            v = 1.0 - beta + 4.0 * beta / kPi;
        } else if (std::abs(std::abs(t) - edge) < 1e-12) {
            v = beta / std::sqrt(2.0) *
                ((1.0 + 2.0 / kPi) * std::sin(kPi / (4.0 * beta)) + (1.0 - 2.0 / kPi) * std::cos(kPi / (4.0 * beta)));
        } else {
            const double num = std::sin(kPi * t * (1.0 - beta)) + 4.0 * beta * t * std::cos(kPi * t * (1.0 + beta));
            const double den = kPi * t * (1.0 - 16.0 * beta * beta * t * t);
            v = num / den;
        }
        h[i] = v;
    }
    double e = 0.0;
    for (double v : h) e += v * v;
    for (double& v : h) v /= std::sqrt(e);
    return h;
}

/// Frequency response of the same unit-energy RRC at sample rate symbol_rate * sps, without the
/// truncation of the tap design.
inline double rrc_response(double f, double beta, double symbol_rate, int sps) {
    const double a = std::abs(f);
    const double lo = 0.5 * (1.0 - beta) * symbol_rate;
    const double hi = 0.5 * (1.0 + beta) * symbol_rate;
    if (a >= hi) return 0.0;
    const double g = std::sqrt(static_cast<double>(sps));
    if (a <= lo) return g;
    return g * std::cos(0.5 * kPi * (a - lo) / (beta * symbol_rate));
}

/// Zero-stuffs to fs = symbol_rate * sps, filters with the RRC and shifts to f_shift. The pulse of
/// symbol k peaks at sample k*sps.
inline Waveform shape_and_shift(const SymbolFrame& frame, int sps, const std::vector<double>& taps, double f_shift,
                                double fs, double roll_off) {
    if (std::abs(fs - frame.symbol_rate * sps) > 1e-6 * fs)
        throw Error(Stage::txdsp, "sample rate must equal symbol rate times samples per symbol");
    if (std::abs(f_shift) + 0.5 * frame.symbol_rate * (1.0 + roll_off) > 0.5 * fs)
        throw Error(Stage::txdsp, "shifted signal band exceeds the Nyquist band (aliasing)");
    std::vector<cplx> up(frame.symbols.size() * sps, cplx{});
    for (std::size_t k = 0; k < frame.symbols.size(); ++k) up[k * sps] = frame.symbols[k];
    Waveform w;
    w.samples = dsp::convolve_same(up, taps);
    w.sample_rate = fs;
    w.origin = Origin::baseband;
    dsp::mix(w.samples, f_shift, fs);
    return w;
}

struct PreemphasisOptions {
    int taps = 257;
    double reference_hz = 0.0;  // frequency where the filter gain is 1
    double floor_db = -20.0;    // refuse to invert below this level relative to DC
    std::size_t design_points = 8192;
};

struct FirFilter {
    std::vector<double> taps;
    double sample_rate = 0.0;

    cplx response(double f) const { return dsp::fir_response(taps, f, sample_rate); }
};

/// Linear-phase FIR approximating |H(ref)| / |H(f)| on |f| <= band_edge (held constant beyond),
/// by frequency sampling of the inverse magnitude on a dense grid and a Hann-windowed truncation.
inline FirFilter design_preemphasis(const TransferFunction& tx, double band_edge, double fs,
                                    const PreemphasisOptions& opt = {}) {
    tx.validate(Stage::txdsp);
    if (opt.taps % 2 == 0 || opt.taps < 3) throw Error(Stage::txdsp, "pre-emphasis needs an odd tap count >= 3");
    const double dc = std::abs(tx.at(0.0));
    const double floor = dc * std::pow(10.0, opt.floor_db / 20.0);
    for (int i = 0; i <= 1000; ++i) {
        const double f = band_edge * i / 1000.0;
        if (std::abs(tx.at(f)) < floor)
            throw Error(Stage::txdsp, "transmitter response below the inversion floor at " + std::to_string(f) + " Hz");
    }
    const double ref = std::abs(tx.at(opt.reference_hz));
    auto desired = [&](double f) {
        const double ff = std::min(std::abs(f), band_edge);
        return ref / std::abs(tx.at(ff));
    };
    const std::size_t n = opt.design_points;
    std::vector<cplx> spec(n);
    for (std::size_t k = 0; k < n; ++k) spec[k] = desired(dsp::bin_frequency(k, n, fs));
    dsp::ifft(spec);
    FirFilter fir;
    fir.sample_rate = fs;
    const int half = opt.taps / 2;
    fir.taps.resize(opt.taps);
    for (int i = -half; i <= half; ++i) {
        const double w = 0.5 + 0.5 * std::cos(kPi * i / (half + 1));
        fir.taps[i + half] = w * spec[(i + static_cast<long>(n)) % n].real();
    }
    const double g = std::abs(fir.response(opt.reference_hz));
    for (auto& t : fir.taps) t *= 1.0 / g;
    return fir;
}

inline Waveform apply_fir(const Waveform& in, const FirFilter& fir) {
    Waveform out = in;
    out.samples = dsp::convolve_same(in.samples, fir.taps);
    return out;
}

struct DacOptions {
    int bits = 10;              // 0 disables quantization
    double clip_ratio = 4.9;    // full scale in units of the per-component RMS
    double clip_warning = 1e-4;  // clipped-component fraction reported as excessive
};

struct TxWaveform {
    Waveform drive;
    double full_scale = 0.0;
    double clipped_fraction = 0.0;
    bool clipping_excessive = false;
};

/// Pre-emphasizes the quantum path, adds the pilot tone and quantizes I and Q.
inline TxWaveform assemble_tx_waveform(const Waveform& quantum, double pilot_freq, double pilot_amplitude,
                                       const std::optional<FirFilter>& preemphasis, const DacOptions& dac = {},
                                       double pilot_phase = 0.0) {
    quantum.validate(Stage::txdsp);
    if (std::abs(pilot_freq) >= 0.5 * quantum.sample_rate)
        throw Error(Stage::txdsp, "pilot frequency outside the DAC Nyquist band");
    if (pilot_amplitude < 0.0) throw Error(Stage::txdsp, "pilot amplitude must be non-negative");
    TxWaveform out;
    out.drive = preemphasis ? apply_fir(quantum, *preemphasis) : quantum;
    out.drive.origin = Origin::rf;
    if (pilot_amplitude > 0.0) {
        const double w = kTwoPi * pilot_freq / quantum.sample_rate;
        for (std::size_t n = 0; n < out.drive.samples.size(); ++n)
            out.drive.samples[n] += std::polar(pilot_amplitude, w * static_cast<double>(n) + pilot_phase);
    }
    if (dac.bits > 0) {
        out.full_scale = dac.clip_ratio * dsp::component_rms(out.drive.samples);
        out.clipped_fraction = dsp::quantize(out.drive.samples, dac.bits, out.full_scale);
        out.clipping_excessive = out.clipped_fraction > dac.clip_warning;
    }
    return out;
}

struct ModulatorModel {
    double v_pi = 4.0;                   // V
    double suppression_db = std::numeric_limits<double>::infinity();  // signal/image sideband power
    double carrier_leakage_db = -std::numeric_limits<double>::infinity();  // carrier power relative to signal
    std::optional<TransferFunction> response;  // electrical-to-optical transfer applied to the drive
    double peak_depth = 0.1;              // max mu(t) the drive is scaled to
    double weak_limit = 0.3;

    void validate() const {
        if (!(v_pi > 0.0)) throw Error(Stage::txdsp, "V_pi must be positive");
        if (suppression_db < 0.0) throw Error(Stage::txdsp, "sideband suppression must be non-negative");
        if (!(peak_depth > 0.0)) throw Error(Stage::txdsp, "modulation depth must be positive");
        if (peak_depth >= 0.5 * kPi) throw Error(Stage::txdsp, "overdrive: modulation depth reaches pi/2");
    }
};

struct ModulatedField {
    Waveform envelope;
    double volts_per_unit = 0.0;  // drive scaling used
    double max_depth = 0.0;
    bool weak_regime = true;
};

/// Optical envelope of the CS-SSB IQ modulator. The drive r(t)e^{i theta(t)} is scaled to volts so
/// max mu(t) = peak_depth, mu = r pi / (2 V_pi), and mapped to J1(mu) e^{i theta}. The image
/// sideband is the conjugate (mirror) envelope at the configured suppression and the residual
/// carrier a constant at the configured leakage. `reference_amplitude` is the modulus, after the
/// modulator response, that must produce a coherent amplitude alpha_target under the small-signal
/// gain J1(mu) ~ mu/2.
inline ModulatedField iq_modulate(const Waveform& drive, const ModulatorModel& model, double alpha_target,
                                  double reference_amplitude) {
    model.validate();
    drive.validate(Stage::txdsp);
    if (!(reference_amplitude > 0.0)) throw Error(Stage::txdsp, "reference drive amplitude must be positive");
    std::vector<cplx> d = drive.samples;
    if (model.response) {
        const auto& h = *model.response;
        dsp::apply_frequency_response(d, drive.sample_rate, [&](double f) { return h.at(f); });
    }
    double peak = 0.0;
    for (const auto& v : d) peak = std::max(peak, std::abs(v));
    if (!(peak > 0.0)) throw Error(Stage::txdsp, "drive is identically zero");
    const double volts = model.peak_depth * 2.0 * model.v_pi / (kPi * peak);
    const double mu_per_unit = volts * kPi / (2.0 * model.v_pi);

    ModulatedField out;
    out.volts_per_unit = volts;
    out.max_depth = model.peak_depth;
    out.weak_regime = model.peak_depth < model.weak_limit;
    const double scale = alpha_target / (0.5 * mu_per_unit * reference_amplitude);
    std::vector<cplx> e(d.size());
    double signal_power = 0.0;
    for (std::size_t n = 0; n < d.size(); ++n) {
        const double r = std::abs(d[n]);
        const double mu = mu_per_unit * r;
        e[n] = r > 0.0 ? scale * std::cyl_bessel_j(1.0, mu) * (d[n] / r) : cplx{};
        signal_power += std::norm(e[n]);
    }
    signal_power /= static_cast<double>(d.size());
    const bool image = std::isfinite(model.suppression_db);
    const bool carrier = std::isfinite(model.carrier_leakage_db);
    const double k_image = image ? std::pow(10.0, -model.suppression_db / 20.0) : 0.0;
    const cplx c = carrier ? cplx(std::sqrt(signal_power * std::pow(10.0, model.carrier_leakage_db / 10.0))) : cplx{};
    out.envelope.samples.resize(e.size());
    for (std::size_t n = 0; n < e.size(); ++n) out.envelope.samples[n] = e[n] + k_image * std::conj(e[n]) + c;
    out.envelope.sample_rate = drive.sample_rate;
    out.envelope.origin = Origin::optical_envelope;
    return out;
}

}  // namespace cvqkd::txdsp
