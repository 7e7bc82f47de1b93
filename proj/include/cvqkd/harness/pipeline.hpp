#pragma once

// Scenario runner: transmitter -> channel -> receiver -> estimation -> key rate.
//
// Frames are simulated in independent chunks (own seeds, own pilot recovery and alignment) so
// that memory stays bounded; moments are merged across chunks in a fixed order.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cvqkd/channel.hpp"
#include "cvqkd/estimation.hpp"
#include "cvqkd/harness/config.hpp"
#include "cvqkd/keyrate/key_rate.hpp"
#include "cvqkd/protocol.hpp"
#include "cvqkd/rxdsp.hpp"
#include "cvqkd/txdsp.hpp"

namespace cvqkd::harness {

enum class SeedStream : std::uint64_t { symbols = 1, channel, detector, calibration_vacuum, calibration_electronic, psd };

/// Deterministic per-(run, frame, chunk, stream) seed.
inline std::uint64_t derive_seed(std::uint64_t run_seed, std::uint64_t frame, std::uint64_t chunk, SeedStream s) {
    std::seed_seq seq{static_cast<std::uint32_t>(run_seed), static_cast<std::uint32_t>(run_seed >> 32),
                      static_cast<std::uint32_t>(frame), static_cast<std::uint32_t>(chunk),
                      static_cast<std::uint32_t>(s)};
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

/// Fixed (run-independent of the data) parts of the transmitter and receiver.
struct Setup {
    ScenarioConfig config;
    protocol::Constellation constellation;
    double alpha = 0.0;
    double sideband_fraction = 1.0;
    double fs = 0.0;
    std::vector<double> taps;
    std::optional<txdsp::FirFilter> preemphasis;
    txdsp::ModulatorModel modulator;
    rxdsp::DetectorModel detector;
    channel::ChannelParams channel;
    rxdsp::ReceiverOptions receiver;
    rxdsp::PilotOptions pilot;
    double pilot_amplitude = 0.0;
    double envelope_correction = 1.0;  // back-to-back amplitude calibration
    std::optional<rxdsp::WhiteningFilter> whitening;
};

inline std::optional<txdsp::TransferFunction> response_from(double f3db, const std::string& csv, double fs) {
    if (!csv.empty()) return txdsp::load_transfer_csv(csv);
    if (f3db > 0.0) return txdsp::second_order_lowpass(f3db, 0.5 * fs);
    return std::nullopt;
}

inline Setup make_setup(const ScenarioConfig& cfg) {
    cfg.validate();
    Setup s;
    s.config = cfg;
    const auto& tx = cfg.tx;
    s.constellation = protocol::build_constellation(cfg.protocol.states, cfg.protocol.modulation_variance);
    s.alpha = s.constellation.amplitude;
    s.sideband_fraction = protocol::sideband_model(cfg.protocol.sideband_suppression_db).amplitude_fraction;
    s.fs = tx.symbol_rate_hz * tx.samples_per_symbol;
    s.taps = txdsp::rrc_taps(tx.roll_off, tx.rrc_span, tx.samples_per_symbol);

    s.modulator.v_pi = tx.v_pi;
    s.modulator.peak_depth = tx.peak_depth;
    s.modulator.suppression_db =
        tx.image_sideband ? cfg.protocol.sideband_suppression_db : std::numeric_limits<double>::infinity();
    s.modulator.carrier_leakage_db = tx.carrier_leakage_db;
    s.modulator.response = response_from(tx.response_f3db_hz, tx.response_csv, s.fs);
    if (tx.preemphasis && s.modulator.response) {
        txdsp::PreemphasisOptions po;
        po.taps = tx.preemphasis_taps;
        po.reference_hz = tx.shift_hz;
        s.preemphasis = txdsp::design_preemphasis(*s.modulator.response, tx.preemphasis_band_hz, s.fs, po);
    }

    s.detector.efficiency = cfg.detector.efficiency;
    s.detector.electronic_noise = cfg.detector.electronic_noise_snu;
    s.detector.response = response_from(cfg.detector.response_f3db_hz, cfg.detector.response_csv, s.fs);
    s.detector.adc_bits = cfg.detector.adc_bits;
    s.detector.snu_scale = cfg.detector.snu_scale;
    s.detector.shot_noise = cfg.detector.shot_noise;

    const auto& ch = cfg.channel;
    s.channel.length_km = ch.length_km;
    s.channel.attenuation_db_per_km = ch.att_db_per_km;
    if (ch.transmittance > 0.0) s.channel.transmittance = ch.transmittance;
    s.channel.excess_noise = ch.epsilon_snu;
    s.channel.phase_drift_rate = ch.phase_drift_rad_per_s;
    s.channel.phase_model = ch.phase_model == "wiener" ? channel::PhaseModel::wiener : channel::PhaseModel::integrated_ou;
    s.channel.freq_offset = ch.freq_offset_hz;
    s.channel.delay_samples = ch.delay_samples;
    if (ch.band_limited_noise) {
        s.channel.noise_center = tx.shift_hz;
        s.channel.noise_bandwidth = tx.symbol_rate_hz * (1.0 + tx.roll_off);
    }

    s.receiver.sps = tx.samples_per_symbol;
    s.receiver.roll_off = tx.roll_off;
    s.receiver.pilot_to_quantum = tx.shift_hz - tx.pilot_hz;
    s.receiver.max_lag = cfg.rx.max_lag_samples;
    s.receiver.block_symbols = static_cast<std::size_t>(cfg.rx.block_symbols);
    s.receiver.phase_grid = cfg.rx.phase_grid;
    s.receiver.states = cfg.protocol.states;
    s.pilot.band_low = cfg.rx.pilot_band_low_hz;
    s.pilot.band_high = cfg.rx.pilot_band_high_hz;
    s.pilot.lowpass_hz = cfg.rx.pilot_lowpass_hz;

    // pilot power set relative to the quantum waveform power (alpha^2 / sps per sample)
    const double quantum_power = s.alpha * s.alpha / tx.samples_per_symbol;
    s.pilot_amplitude = std::sqrt(quantum_power * db_to_linear(tx.pilot_to_quantum_db));
    return s;
}

/// Optical envelope of one chunk of symbols, before the back-to-back correction.
inline Waveform transmit(const Setup& s, const SymbolFrame& frame, txdsp::TxWaveform* diag = nullptr) {
    const auto& tx = s.config.tx;
    const Waveform q = txdsp::shape_and_shift(frame, tx.samples_per_symbol, s.taps, tx.shift_hz, s.fs, tx.roll_off);
    txdsp::DacOptions dac;
    dac.bits = tx.dac_bits;
    dac.clip_ratio = tx.dac_clip_ratio;
    txdsp::TxWaveform drive = txdsp::assemble_tx_waveform(q, tx.pilot_hz, s.pilot_amplitude, s.preemphasis, dac);
    double ref = s.alpha;
    if (s.modulator.response) ref *= std::abs(s.modulator.response->at(tx.shift_hz));
    txdsp::ModulatedField field = txdsp::iq_modulate(drive.drive, s.modulator, s.alpha, ref);
    if (diag) *diag = std::move(drive);
    for (auto& v : field.envelope.samples) v *= s.envelope_correction;
    return std::move(field.envelope);
}

/// Least-squares complex gain of matched-filtered envelope samples against the symbols.
inline cplx envelope_gain(const Setup& s, const Waveform& env, const SymbolFrame& frame) {
    std::vector<cplx> z(env.samples);
    dsp::mix(z, -s.config.tx.shift_hz, s.fs);
    const double rs = s.config.tx.symbol_rate_hz;
    dsp::apply_frequency_response(z, s.fs, [&](double f) {
        return cplx(txdsp::rrc_response(f, s.config.tx.roll_off, rs, s.config.tx.samples_per_symbol));
    });
    const int sps = s.config.tx.samples_per_symbol;
    cplx num{};
    double den = 0.0;
    const std::size_t guard = static_cast<std::size_t>(s.config.tx.rrc_span);
    for (std::size_t k = guard; k + guard < frame.symbols.size(); ++k) {
        num += std::conj(frame.symbols[k]) * z[k * sps];
        den += std::norm(frame.symbols[k]);
    }
    return num / den;
}

/// Back-to-back calibration of Alice's amplitude: scales the envelope so matched filtering returns
/// the nominal alpha per symbol.
inline void calibrate_back_to_back(Setup& s) {
    s.envelope_correction = 1.0;
    const auto frame = txdsp::generate_symbols(derive_seed(s.config.run.seed, 0xB2B, 0, SeedStream::symbols),
                                               static_cast<std::size_t>(std::min<long>(s.config.run.chunk_symbols, 50000)),
                                               s.constellation, s.config.tx.symbol_rate_hz);
    const Waveform env = transmit(s, frame);
    s.envelope_correction = 1.0 / std::abs(envelope_gain(s, env, frame));
}

struct Calibration {
    double snu_scale = 1.0;
    double electronic_noise = 0.0;
    long symbols = 0;
};

/// Whitening filter from a shot-noise capture (vacuum input, LO on).
inline void calibrate_whitening(Setup& s) {
    if (!s.config.rx.whitening) return;
    std::mt19937_64 rng(derive_seed(s.config.run.seed, 0, 0, SeedStream::psd));
    Waveform vac;
    vac.samples.assign(std::size_t{1} << s.config.rx.psd_capture_log2, cplx{});
    vac.sample_rate = s.fs;
    vac.origin = Origin::optical_envelope;
    rxdsp::DetectorModel det = s.detector;
    det.shot_noise = true;
    const auto out = rxdsp::heterodyne_detect(vac, det, rng);
    const auto segment = static_cast<std::size_t>(std::lround(s.fs / s.config.rx.psd_bin_hz));
    const dsp::Psd psd = dsp::welch_psd(out.electrical.samples, s.fs, segment);
    s.whitening = rxdsp::design_whitening(psd, s.config.rx.whitening_cutoff_hz);
}

/// SNU scale and electronic noise from vacuum and electronic-only captures through the receiver
/// front end, sized `factor` times the data.
inline Calibration calibrate_snu(const Setup& s, long data_symbols) {
    const int sps = s.config.tx.samples_per_symbol;
    const long want = std::max<long>(static_cast<long>(s.config.rx.calibration_factor * data_symbols), 100000);
    const long chunk = s.config.run.chunk_symbols;
    std::vector<cplx> vac_all, el_all;
    long done = 0;
    for (std::uint64_t c = 0; done < want; ++c) {
        const long n = std::min(chunk, want - done) + 2 * s.config.tx.rrc_span;
        Waveform zero;
        zero.samples.assign(static_cast<std::size_t>(n) * sps, cplx{});
        zero.sample_rate = s.fs;
        zero.origin = Origin::optical_envelope;
        std::mt19937_64 rv(derive_seed(s.config.run.seed, 0, c, SeedStream::calibration_vacuum));
        std::mt19937_64 re(derive_seed(s.config.run.seed, 0, c, SeedStream::calibration_electronic));
        // the shot-noise unit is defined with shot noise present, even for a noiseless data detector
        rxdsp::DetectorModel on = s.detector;
        on.shot_noise = true;
        const auto vac = rxdsp::heterodyne_detect(zero, on, rv);
        rxdsp::DetectorModel off = on;
        off.local_oscillator = false;
        const auto el = rxdsp::heterodyne_detect(zero, off, re);
        const auto* w = s.whitening ? &*s.whitening : nullptr;
        const double fq = s.config.tx.shift_hz - s.config.channel.freq_offset_hz;
        auto a = rxdsp::calibration_samples(vac.electrical, w, fq, s.config.tx.roll_off, sps, s.taps.size());
        auto b = rxdsp::calibration_samples(el.electrical, w, fq, s.config.tx.roll_off, sps, s.taps.size());
        vac_all.insert(vac_all.end(), a.begin(), a.end());
        el_all.insert(el_all.end(), b.begin(), b.end());
        done += static_cast<long>(a.size());
    }
    Calibration cal;
    cal.symbols = done;
    const auto r = estimation::calibrate_snu(vac_all, el_all);
    cal.snu_scale = r.snu_scale;
    cal.electronic_noise = r.electronic_noise;
    return cal;
}

struct ChunkDiagnostics {
    long lag = 0;
    double frequency_estimate = 0.0;
    double frequency_error = 0.0;
    bool phase_ambiguity = false;
    double dac_clipping = 0.0;
    double adc_overload = 0.0;
    double evm = 0.0;
};

struct ChunkResult {
    MeasuredFrame frame;
    ChunkDiagnostics diag;
};

/// Simulates one independent chunk end to end and returns the aligned, SNU-normalized frame.
inline ChunkResult simulate_chunk(const Setup& s, const Calibration& cal, std::uint64_t frame_index,
                                  std::uint64_t chunk_index, long n_symbols) {
    const std::uint64_t seed = s.config.run.seed;
    const auto symbols = txdsp::generate_symbols(derive_seed(seed, frame_index, chunk_index, SeedStream::symbols),
                                                 static_cast<std::size_t>(n_symbols), s.constellation,
                                                 s.config.tx.symbol_rate_hz);
    txdsp::TxWaveform drive;
    const Waveform env = transmit(s, symbols, &drive);
    channel::ChannelParams cp = s.channel;
    cp.seed = derive_seed(seed, frame_index, chunk_index, SeedStream::channel);
    const auto ch = channel::propagate(env, cp);
    std::mt19937_64 rng(derive_seed(seed, frame_index, chunk_index, SeedStream::detector));
    const auto det = rxdsp::heterodyne_detect(ch.field, s.detector, rng);
    const auto pilot = rxdsp::recover_frequency_and_phase(det.electrical, s.pilot);
    ChunkResult r;
    r.frame = rxdsp::demodulate_and_align(det.electrical, pilot, s.whitening ? &*s.whitening : nullptr, symbols,
                                          s.receiver, cal.snu_scale);
    r.diag.lag = r.frame.lag;
    r.diag.frequency_estimate = pilot.frequency;
    r.diag.frequency_error = pilot.frequency - (s.config.tx.pilot_hz - s.config.channel.freq_offset_hz);
    r.diag.phase_ambiguity = r.frame.phase_ambiguity_flagged;
    r.diag.dac_clipping = drive.clipped_fraction;
    r.diag.adc_overload = det.overload_fraction;
    const std::size_t guard = static_cast<std::size_t>(s.config.tx.rrc_span);
    if (r.frame.samples.size() > 2 * guard) {
        const std::size_t end = r.frame.samples.size() - guard;
        std::vector<cplx> meas(r.frame.samples.begin() + guard, r.frame.samples.begin() + end);
        std::vector<cplx> ref(symbols.symbols.begin() + guard, symbols.symbols.begin() + end);
        r.diag.evm = rxdsp::evm(meas, ref);
    }
    return r;
}

struct FrameResult {
    std::optional<estimation::MomentAccumulator> accumulator;
    estimation::MomentStats moments;
    estimation::ChannelEstimate estimate;
    std::vector<std::vector<double>> joint;  // counts (k, z)
    std::vector<ChunkDiagnostics> chunks;
    long symbols = 0;
};

using FrameSink = std::function<void(std::uint64_t frame, std::uint64_t chunk, const MeasuredFrame&)>;

/// Runs one frame of `n_symbols` in chunks; the first `disclosed_fraction` of each chunk feeds the
/// moment estimate, the rest (or everything when the fraction is 1) feeds the key-map statistics.
/// `sink` receives each chunk trimmed to its usable symbols.
inline FrameResult simulate_frame(const Setup& s, const Calibration& cal, std::uint64_t frame_index, long n_symbols,
                                  const FrameSink& sink = {}) {
    estimation::MomentAccumulator acc(s.constellation);
    const int m = s.constellation.states;
    FrameResult fr;
    fr.joint.assign(m, std::vector<double>(m, 0.0));
    const long chunk = s.config.run.chunk_symbols;
    const double frac = s.config.estimation.disclosed_fraction;
    long done = 0;
    for (std::uint64_t c = 0; done < n_symbols; ++c) {
        const long want = std::min(chunk, n_symbols - done);
        // extra symbols cover the alignment delay and filter edges
        const long extra = s.config.channel.delay_samples / s.config.tx.samples_per_symbol + 2 * s.config.tx.rrc_span;
        ChunkResult r = simulate_chunk(s, cal, frame_index, c, want + extra);
        const std::size_t guard = static_cast<std::size_t>(s.config.tx.rrc_span);
        const std::size_t usable = std::min<std::size_t>(r.frame.samples.size() - guard, guard + want);
        const std::size_t cut = guard + static_cast<std::size_t>(std::ceil(frac * static_cast<double>(usable - guard)));
        for (std::size_t k = guard; k < usable; ++k) {
            const int idx = r.frame.indices[k];
            if (k < cut) acc.add(r.frame.samples[k], idx);
            if (frac >= 1.0 || k >= cut) fr.joint[idx][protocol::key_map(r.frame.samples[k], m)] += 1.0;
        }
        if (sink) {
            MeasuredFrame t = r.frame;
            auto trim = [&](auto& v) { v = std::decay_t<decltype(v)>(v.begin() + guard, v.begin() + usable); };
            trim(t.samples);
            trim(t.indices);
            trim(t.phase_trace);
            sink(frame_index, c, t);
        }
        done += static_cast<long>(usable - guard);
        fr.chunks.push_back(r.diag);
    }
    fr.symbols = done;
    fr.moments = acc.stats(true);
    fr.accumulator = std::move(acc);
    fr.estimate = estimation::estimate_channel(fr.moments, s.config.detector.efficiency, cal.electronic_noise,
                                               s.config.protocol.modulation_variance);
    return fr;
}

struct RunReport {
    std::string config_hash;
    std::string name;
    Calibration calibration;
    std::vector<FrameResult> frames;
    estimation::MomentStats moments;  // merged over frames
    estimation::ChannelEstimate estimate;
    std::vector<double> excess_noise_series;
    std::optional<keyrate::KeyRateResult> key_rate;
    double seconds_simulation = 0.0;
    double seconds_key_rate = 0.0;
};

struct KeyRateRequest {
    protocol::Constellation constellation;
    estimation::ChannelEstimate estimate;
    double sideband_fraction = 1.0;
    double beta = 0.95;
    double symbol_rate = 1.5625e9;
    int cutoff = 10;
    bool trusted_detector = true;
    bool check_cutoff = false;
    double cutoff_tolerance = 0.01;
    int max_cutoff = 16;
    keyrate::FrankWolfeOptions fw;
    std::optional<std::vector<std::vector<double>>> joint;  // empirical (k, z) counts; Gaussian model if absent
};

/// Clamps T-hat into (0, 1) and eps-hat to >= 0 before the key-rate problem is built.
inline estimation::ChannelEstimate handoff(estimation::ChannelEstimate e) {
    e.transmittance = std::clamp(e.transmittance, 1e-9, 1.0 - 1e-9);
    e.excess_noise = e.clamped_excess_noise();
    return e;
}

inline keyrate::KeyRateResult compute_key_rate(const KeyRateRequest& req) {
    const auto est = handoff(req.estimate);
    auto solve = [&](int cutoff) {
        keyrate::ProblemOptions po;
        po.cutoff = cutoff;
        po.trusted_detector = req.trusted_detector;
        po.sideband_fraction = req.sideband_fraction;
        const auto problem = keyrate::build_problem(req.constellation, est, po);
        const auto joint = req.joint ? *req.joint
                                     : keyrate::gaussian_joint_distribution(req.constellation, est.transmittance,
                                                                            est.excess_noise, est.efficiency,
                                                                            est.electronic_noise);
        const auto ec = protocol::ec_leakage(joint, req.beta);
        return keyrate::asymptotic_key_rate(problem, ec, req.symbol_rate, req.fw);
    };
    keyrate::KeyRateResult r = solve(req.cutoff);
    r.cutoff = req.cutoff;
    if (!req.check_cutoff) return r;
    // raise N_c until K(N_c) and K(N_c + 2) agree to 1%
    for (int nc = req.cutoff;; nc += 2) {
        keyrate::KeyRateResult next = solve(nc + 2);
        next.cutoff = nc + 2;
        const double denom = std::max(std::abs(r.bits_per_symbol), 1e-300);
        r.cutoff_delta = std::abs(r.bits_per_symbol - next.bits_per_symbol) / denom;
        if (r.cutoff_delta <= req.cutoff_tolerance || nc + 2 >= req.max_cutoff) return r;
        r = std::move(next);
    }
}

inline RunReport run_scenario(const ScenarioConfig& cfg, bool with_key_rate = true, const FrameSink& sink = {}) {
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    Setup s = make_setup(cfg);
    calibrate_back_to_back(s);
    calibrate_whitening(s);
    RunReport rep;
    rep.config_hash = config_hash(cfg);
    rep.name = cfg.name;
    rep.calibration = calibrate_snu(s, cfg.run.symbols);
    for (int f = 0; f < cfg.run.frames; ++f) {
        FrameResult fr = simulate_frame(s, rep.calibration, static_cast<std::uint64_t>(f), cfg.run.symbols, sink);
        rep.excess_noise_series.push_back(fr.estimate.excess_noise);
        rep.frames.push_back(std::move(fr));
    }
    estimation::MomentAccumulator merged(s.constellation);
    for (const auto& f : rep.frames) merged.merge(*f.accumulator);
    rep.moments = merged.stats(true);
    rep.estimate = estimation::estimate_channel(rep.moments, cfg.detector.efficiency, rep.calibration.electronic_noise,
                                                cfg.protocol.modulation_variance);
    const auto t1 = clock::now();
    rep.seconds_simulation = std::chrono::duration<double>(t1 - t0).count();
    if (with_key_rate && cfg.keyrate.enabled) {
        KeyRateRequest req;
        req.constellation = s.constellation;
        req.estimate = rep.estimate;
        req.sideband_fraction = s.sideband_fraction;
        req.beta = cfg.keyrate.beta;
        req.symbol_rate = cfg.tx.symbol_rate_hz;
        req.cutoff = cfg.keyrate.cutoff;
        req.trusted_detector = cfg.keyrate.trusted_detector;
        req.check_cutoff = cfg.keyrate.check_cutoff;
        req.fw.gap_tolerance = cfg.keyrate.gap_tolerance;
        req.fw.max_iterations = cfg.keyrate.max_iterations;
        std::vector<std::vector<double>> joint(s.constellation.states, std::vector<double>(s.constellation.states, 0.0));
        for (const auto& f : rep.frames)
            for (int k = 0; k < s.constellation.states; ++k)
                for (int z = 0; z < s.constellation.states; ++z) joint[k][z] += f.joint[k][z];
        req.joint = joint;
        rep.key_rate = compute_key_rate(req);
    }
    rep.seconds_key_rate = std::chrono::duration<double>(clock::now() - t1).count();
    return rep;
}

}  // namespace cvqkd::harness
