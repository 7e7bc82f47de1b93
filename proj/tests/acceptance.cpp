// Acceptance run: one pass/fail line per criterion, followed by its measured values.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "cvqkd/harness/report.hpp"
#include "cvqkd/harness/reproduce.hpp"

using namespace cvqkd;
using namespace cvqkd::harness;
namespace fs = std::filesystem;

namespace {

struct Check {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct Criterion {
    int number = 0;
    std::string title;
    std::vector<Check> checks;
    std::vector<std::string> notes;
    double seconds = 0.0;

    void check(const std::string& name, bool pass, const std::string& detail) { checks.push_back({name, pass, detail}); }
    void note(const std::string& s) { notes.push_back(s); }
};

std::string fmt(const char* f, double a) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

template <class... A>
std::string fmt(const char* f, A... a) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, a...);
    return buf;
}

struct Context {
    fs::path config_dir = CVQKD_CONFIG_DIR;
    fs::path out_dir;
    std::ostream* log = &std::cerr;

    ScenarioConfig config(const std::string& name) const {
        ScenarioConfig c = load_config((config_dir / (name + ".cfg")).string());
        c.run.output_dir = (out_dir / name).string();
        return c;
    }
    void progress(const std::string& s) const { *log << "  .. " << s << std::endl; }
};

// ---------------------------------------------------------------------------------------------

void sideband(const Context&, Criterion& c) {
    const double d = protocol::sideband_model(19.4).amplitude_fraction;
    const double independent = 1.0 / std::sqrt(1.0 + std::pow(10.0, -1.94));
    c.check("d", std::abs(d - 0.9943) <= 1e-4, fmt("d = %.6f (target 0.9943 +- 0.0001)", d));
    c.check("closed_form", std::abs(d - independent) <= 1e-12, fmt("closed form 1/sqrt(1 + 10^-1.94) = %.6f", independent));
}

void table2(const Context& ctx, Criterion& c) {
    const ScenarioConfig cfg = ctx.config("table2");
    auto rows = table2_forward(cfg);
    ctx.progress("table2: simulating " + std::to_string(cfg.run.symbols) + " symbols");
    const RunReport rep = run_scenario(cfg, false);
    attach_simulated(rows, rep.moments);
    const auto s = summarize_table2(rows);
    write_atomic(ctx.out_dir / "table2.csv", table2_csv(rows, config_hash(cfg)));
    long min_count = std::numeric_limits<long>::max();
    for (const auto& st : rep.moments.states) min_count = std::min<long>(min_count, static_cast<long>(st.count));
    int beyond2 = 0;
    for (const auto& r : rows)
        if (std::abs(r.simulated - r.forward) / r.sigma > 2.0) ++beyond2;
    c.check("forward", s.forward_ok, fmt("forward model vs 32 paper entries: max |delta| = %.4f (<= 0.006)", s.max_forward_delta));
    c.check("simulated", s.simulated_ok,
            fmt("pipeline vs forward model: max |z| = %.2f over 32 entries (<= 3), %d beyond 2 sigma", s.max_abs_z, beyond2));
    c.note(fmt("symbols per state >= %ld; T-hat = %.4f, eps-hat = %.4f", min_count, rep.estimate.transmittance,
               rep.estimate.excess_noise));
    c.note(fmt("max |simulated - paper| over first moments = %.4f", s.max_first_moment_delta));
}

// spread of the estimator under the linear signal model, for scaling the tolerances
double linear_model_sigma_eps(double t, double eps, double va, double eta, double v_el, std::size_t n, int reps) {
    const auto con = protocol::build_constellation(8, va);
    std::mt19937_64 rng(12345);
    std::uniform_int_distribution<int> pick(0, 7);
    std::normal_distribution<double> g(0.0, std::sqrt(1.0 + v_el + eta * t * eps / 2.0));
    const double gain = std::sqrt(eta * t / 2.0);
    double s1 = 0.0, s2 = 0.0;
    for (int r = 0; r < reps; ++r) {
        estimation::MomentAccumulator acc(con);
        for (std::size_t i = 0; i < n; ++i) {
            const int k = pick(rng);
            const cplx a = 2.0 * con.points[k];
            acc.add({gain * a.real() + g(rng), gain * a.imag() + g(rng)}, k);
        }
        const double e = estimation::estimate_channel(acc.stats(), eta, v_el, va).excess_noise;
        s1 += e;
        s2 += e * e;
    }
    return std::sqrt((s2 - s1 * s1 / reps) / (reps - 1));
}

void recovery(const Context& ctx, Criterion& c) {
    const char* names[2] = {"table1_row1", "table1_row2"};
    const char* tags[2] = {"25km", "50km"};
    const double eps_tol[2] = {0.003, 0.008};
    for (int i = 0; i < 2; ++i) {
        const ScenarioConfig cfg = ctx.config(names[i]);
        ctx.progress(std::string("recovery: ") + names[i]);
        const RunReport rep = run_scenario(cfg, false);
        const double t = cfg.channel.transmittance, eps = cfg.channel.epsilon_snu;
        const auto& e = rep.estimate;
        const double rel_t = std::abs(e.transmittance - t) / t;
        const double de = std::abs(e.excess_noise - eps);
        c.check(std::string("T_") + tags[i], rel_t <= 0.01,
                fmt("%s: T-hat = %.4f vs %.2f, |dT|/T = %.4f (<= 0.01)", tags[i], e.transmittance, t, rel_t));
        c.check(std::string("eps_") + tags[i], de <= eps_tol[i],
                fmt("%s: eps-hat = %.4f vs %.3f, |d eps| = %.4f (<= %.3f)", tags[i], e.excess_noise, eps, de, eps_tol[i]));
        long total = 0;
        for (const auto& st : rep.moments.states) total += static_cast<long>(st.count);
        const double sig = linear_model_sigma_eps(t, eps, cfg.protocol.modulation_variance, cfg.detector.efficiency,
                                                  cfg.detector.electronic_noise_snu, static_cast<std::size_t>(total), 40);
        const double needed = static_cast<double>(total) * std::pow(3.0 * sig / eps_tol[i], 2);
        c.note(fmt("%s: %ld symbols; linear-model sigma(eps-hat) = %.4f, so |d eps| = %.2f sigma; "
                   "3 sigma <= %.3f needs ~%.2g symbols",
                   tags[i], total, sig, de / sig, eps_tol[i], needed));
    }
}

double sample_variance(const std::vector<double>& v) {
    double m = 0.0, s = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
}

void spread(const Context& ctx, Criterion& c) {
    std::map<std::string, double> var;
    for (const char* name : {"spread_25km", "spread_50km"}) {
        const ScenarioConfig cfg = ctx.config(name);
        ctx.progress(std::string("spread: ") + name);
        const RunReport rep = run_scenario(cfg, false);
        write_report(rep, cfg, ctx.out_dir / name);
        var[name] = sample_variance(rep.excess_noise_series);
        double mean = 0.0;
        for (double v : rep.excess_noise_series) mean += v;
        mean /= static_cast<double>(rep.excess_noise_series.size());
        c.note(fmt("%s: %zu frames x %ld symbols, mean eps-hat = %.4f, sd = %.4f", name, rep.excess_noise_series.size(),
                   cfg.run.symbols, mean, std::sqrt(var[name])));
    }
    c.check("variance_order", var["spread_50km"] > var["spread_25km"],
            fmt("Var(eps-hat) 50.4 km = %.3g > 25.8 km = %.3g (ratio %.2f)", var["spread_50km"], var["spread_25km"],
                var["spread_50km"] / var["spread_25km"]));
}

// ---------------------------------------------------------------------------------------------

struct RowProblem {
    keyrate::KeyRateProblem problem;
    protocol::EcAccounting ec;
    double symbol_rate = 0.0;
};

RowProblem row_problem(const Context& ctx, int row, int cutoff) {
    const ScenarioConfig cfg = ctx.config(row == 0 ? "table1_row1" : "table1_row2");
    const Setup s = make_setup(cfg);
    estimation::ChannelEstimate e{cfg.channel.transmittance, cfg.channel.epsilon_snu, cfg.protocol.modulation_variance,
                                  cfg.detector.efficiency, cfg.detector.electronic_noise_snu, false};
    e = handoff(e);
    keyrate::ProblemOptions po;
    po.cutoff = cutoff;
    po.trusted_detector = cfg.keyrate.trusted_detector;
    po.sideband_fraction = s.sideband_fraction;
    RowProblem r{keyrate::build_problem(s.constellation, e, po), {}, cfg.tx.symbol_rate_hz};
    r.ec = protocol::ec_leakage(keyrate::gaussian_joint_distribution(s.constellation, e.transmittance, e.excess_noise,
                                                                     e.efficiency, e.electronic_noise),
                                cfg.keyrate.beta);
    return r;
}

std::map<int, keyrate::KeyRateResult> g_row_rates;  // row -> result at N_c = 10, gap 1e-5

void engine(const Context& ctx, Criterion& c) {
    double sum_err = 0.0;
    for (int m : {4, 8, 12})
        for (double nd : {0.0, keyrate::detector_noise_photons(0.37, 0.20)}) {
            const auto regions = keyrate::region_operators(m, 10, nd);
            CMatrix sum = CMatrix::Zero(11, 11);
            for (const auto& r : regions) sum += r;
            sum_err = std::max(sum_err, (sum - CMatrix::Identity(11, 11)).cwiseAbs().maxCoeff());
        }
    c.check("completeness", sum_err <= 1e-10,
            fmt("max |sum_j R_j - I| = %.2e over M = 4, 8, 12 and both POVMs (<= 1e-10)", sum_err));

    ctx.progress("engine: row 1 problem at N_c = 10");
    const RowProblem rp = row_problem(ctx, 0, 10);
    const auto& p = rp.problem;
    {
        keyrate::RelativeEntropyObjective f(p);
        const int n = f.dim();
        const CMatrix rho = 0.9 * p.channel_state + 0.1 * CMatrix::Identity(n, n) / n;
        const auto fv = f.value_and_gradient(rho);
        std::mt19937_64 rng(77);
        std::normal_distribution<double> g;
        double worst = 0.0;
        for (int trial = 0; trial < 6; ++trial) {
            CMatrix d(n, n);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) d(i, j) = cplx{g(rng), g(rng)};
            d = hermitian_part(d);
            d -= d.trace().real() / n * CMatrix::Identity(n, n);
            d /= d.norm();
            const double h = 1e-5;
            const double fd = (f.value(rho + h * d) - f.value(rho - h * d)) / (2.0 * h);
            const double an = (fv.gradient * d).trace().real();
            worst = std::max(worst, std::abs(fd - an) / std::max(std::abs(an), 1e-12));
        }
        c.check("gradient", worst <= 1e-4, fmt("gradient vs central differences: max relative error %.2e (<= 1e-4)", worst));
    }

    ctx.progress("engine: Frank-Wolfe at gap 1e-5");
    keyrate::FrankWolfeOptions fo;
    fo.gap_tolerance = 1e-5;
    const auto t0 = std::chrono::steady_clock::now();
    const auto fw = keyrate::minimize_relative_entropy(p, fo);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool monotone = true, below = true;
    for (std::size_t i = 0; i < fw.primal_history.size(); ++i) {
        if (i > 0 && fw.primal_history[i] > fw.primal_history[i - 1] + 1e-12) monotone = false;
        if (fw.bound_history[i] > fw.primal_history[i] + 1e-12) below = false;
    }
    c.check("fw_monotone", monotone, fmt("primal non-increasing over %d iterations", fw.iterations));
    c.check("fw_bound", below, fmt("certified bound <= primal at every iterate (final %.6f <= %.6f)", fw.lower_bound, fw.primal));
    c.check("fw_gap", fw.gap() <= 1e-5, fmt("final gap %.2e bits (<= 1e-5), %.0f s", fw.gap(), secs));
    const auto k10 = keyrate::asymptotic_key_rate(fw, rp.ec, rp.symbol_rate);
    g_row_rates[0] = k10;

    ctx.progress("engine: N_c = 12");
    const RowProblem rp12 = row_problem(ctx, 0, 12);
    const auto k12 = keyrate::asymptotic_key_rate(rp12.problem, rp12.ec, rp12.symbol_rate, fo);
    const double delta = std::abs(k10.bits_per_symbol - k12.bits_per_symbol) / k10.bits_per_symbol;
    c.check("cutoff", delta <= 0.01,
            fmt("K(N_c=10) = %.8f, K(N_c=12) = %.8f bits/symbol, relative change %.2e (<= 0.01)", k10.bits_per_symbol,
                k12.bits_per_symbol, delta));
}

void rate_bands(const Context& ctx, Criterion& c) {
    const char* tags[2] = {"row1", "row2"};
    for (int row = 0; row < 2; ++row) {
        if (!g_row_rates.count(row)) {
            ctx.progress(std::string("rates: table 1 ") + tags[row]);
            const RowProblem rp = row_problem(ctx, row, 10);
            keyrate::FrankWolfeOptions fo;
            fo.gap_tolerance = 1e-5;
            g_row_rates[row] = keyrate::asymptotic_key_rate(rp.problem, rp.ec, rp.symbol_rate, fo);
        }
        const auto& k = g_row_rates[row];
        const double paper = paper::kTable1[row].key_rate_mbps;
        const double mbps = k.bits_per_second / 1e6;
        c.check(tags[row], std::abs(mbps / paper - 1.0) <= 0.2,
                fmt("%.1f km: K = %.3f Mbps vs %.2f (+-20%%: %.2f..%.2f), gap %.1e", paper::kTable1[row].distance_km, mbps,
                    paper, 0.8 * paper, 1.2 * paper, k.gap));
    }
    ctx.progress("rates: 4-PSK and 8-PSK at 25 km");
    TheoryParams tp;
    tp.gap_tolerance = 1e-4;
    const double t = fiber_transmittance(25.0, tp.att_db_per_km);
    const auto k4 = optimize_modulation_variance(4, t, tp);
    const auto k8 = optimize_modulation_variance(8, t, tp);
    const double ratio = k8.result.bits_per_second / k4.result.bits_per_second;
    c.check("ratio", ratio >= 2.0, fmt("K(8-PSK)/K(4-PSK) at 25 km = %.3f (>= 2.0; paper 2.32)", ratio));
    c.note(fmt("4-PSK: V_A = %.3f, %.3f Mbps; 8-PSK: V_A = %.3f, %.3f Mbps", k4.modulation_variance,
               k4.result.bits_per_second / 1e6, k8.modulation_variance, k8.result.bits_per_second / 1e6));
}

// ---------------------------------------------------------------------------------------------

double chunk_evm(const RunReport& r) {
    double acc = 0.0;
    int n = 0;
    for (const auto& f : r.frames)
        for (const auto& ch : f.chunks) {
            acc += ch.evm * ch.evm;
            ++n;
        }
    return std::sqrt(acc / n);
}

void loopback(const Context& ctx, Criterion& c) {
    ScenarioConfig quiet = ctx.config("loopback");
    quiet.detector.shot_noise = false;
    ctx.progress("loopback: noiseless detector");
    const RunReport a = run_scenario(quiet, false);
    const double e = chunk_evm(a);
    c.check("evm", e <= 0.01, fmt("EVM = %.3f%% with shot noise off (<= 1%%)", 100.0 * e));

    ctx.progress("loopback: shot-noise-limited detector");
    const ScenarioConfig cfg = ctx.config("loopback");
    const RunReport b = run_scenario(cfg, false);
    c.check("eps", std::abs(b.estimate.excess_noise) <= 0.01,
            fmt("eps-hat = %.4f SNU (|eps-hat| <= 0.01), T-hat = %.4f", b.estimate.excess_noise, b.estimate.transmittance));

    const ScenarioConfig def = ctx.config("table1_row1");
    Setup s = make_setup(def);
    double lo = 1e9, hi = -1e9;
    const auto& h = *s.modulator.response;
    const double ref = std::abs(h.at(def.tx.shift_hz));
    for (double f = 0.0; f <= 3.3e9; f += 5e6) {
        const double g = 20.0 * std::log10(std::abs(s.preemphasis->response(f) * h.at(f)) / ref);
        lo = std::min(lo, g);
        hi = std::max(hi, g);
    }
    c.check("preemphasis", lo >= -0.5 && hi <= 0.5,
            fmt("pre-emphasized %.2f GHz transmitter over 0..3.3 GHz: %+.3f..%+.3f dB (+-0.5)", def.tx.response_f3db_hz / 1e9,
                lo, hi));

    calibrate_whitening(s);
    std::mt19937_64 rng(derive_seed(99, 0, 0, SeedStream::psd));
    Waveform vac;
    vac.samples.assign(std::size_t{1} << 22, cplx{});
    vac.sample_rate = s.fs;
    vac.origin = Origin::optical_envelope;
    auto cap = rxdsp::heterodyne_detect(vac, s.detector, rng).electrical.samples;
    lo = 1e9;
    hi = -1e9;
    for (double f = 0.0; f <= def.rx.whitening_cutoff_hz; f += 5e6)
        for (double sg : {-1.0, 1.0}) {
            const double g = 20.0 * std::log10(s.whitening->gain(sg * f) * std::abs(s.detector.response->at(sg * f)));
            lo = std::min(lo, g);
            hi = std::max(hi, g);
        }
    const double design_ripple = hi - lo;
    rxdsp::apply_whitening(cap, s.fs, *s.whitening);
    const auto psd = dsp::welch_psd(cap, s.fs, 1 << 12);
    // 50 MHz bands
    std::map<long, std::pair<double, int>> bands;
    for (std::size_t j = 0; j < psd.frequency.size(); ++j) {
        const double f = psd.frequency[j];
        if (std::abs(f) < 25e6 || std::abs(f) > def.rx.whitening_cutoff_hz - 25e6) continue;
        auto& b = bands[std::lround(std::floor(f / 50e6))];
        b.first += psd.density[j];
        ++b.second;
    }
    double mlo = 1e300, mhi = 0.0;
    for (const auto& [k, v] : bands) {
        const double d = v.first / v.second;
        mlo = std::min(mlo, d);
        mhi = std::max(mhi, d);
    }
    const double measured = 10.0 * std::log10(mhi / mlo);
    c.check("whitening", design_ripple <= 1.0 && measured <= 1.0,
            fmt("whitened shot-noise PSD up to %.2f GHz: design %.3f dB peak-to-peak, measured %.3f dB (within +-0.5)",
                def.rx.whitening_cutoff_hz / 1e9, design_ripple, measured));
}

// ---------------------------------------------------------------------------------------------

struct SyncRun {
    double frequency_error = 0.0;
    long lag = 0;
    double rms_deg = 0.0;
    double pilot_snr_db = 0.0;
    std::vector<double> sweep_deg;
};

// post-filter pilot SNR: line power around the peak over the noise density times the noise
// bandwidth of the Gaussian phase low-pass
double pilot_snr_db(const std::vector<cplx>& y, double fs, double f_pilot, const rxdsp::PilotOptions& po) {
    std::vector<cplx> x(y);
    const std::size_t n = dsp::fast_length(x.size());
    x.resize(n, cplx{});
    dsp::fft(x);
    const double norm = 1.0 / (static_cast<double>(y.size()) * static_cast<double>(y.size()));
    std::vector<double> band;
    double line = 0.0;
    int line_bins = 0;
    for (std::size_t k = 0; k < n; ++k) {
        const double f = dsp::bin_frequency(k, n, fs);
        const double p = std::norm(x[k]) * norm;
        if (std::abs(f - f_pilot) <= 3e6) {
            line += p;
            ++line_bins;
        } else if (f >= po.band_low && f <= po.band_high) {
            band.push_back(p);
        }
    }
    std::nth_element(band.begin(), band.begin() + band.size() / 2, band.end());
    // median of an exponential periodogram is ln 2 times its mean
    const double per_bin = band[band.size() / 2] / std::log(2.0);
    const double len = static_cast<double>(y.size());
    const double density = per_bin * len / fs;
    // zero padding spreads the line over n / len times as many bins
    const double pilot = (line - per_bin * line_bins) * len / static_cast<double>(n);
    const double sigma_f = po.lowpass_hz / std::sqrt(std::log(2.0));
    return 10.0 * std::log10(pilot / (density * sigma_f * std::sqrt(kPi)));
}

SyncRun sync_run(const ScenarioConfig& cfg, std::uint64_t seed, const std::vector<double>& sweep = {}) {
    Setup s = make_setup(cfg);
    calibrate_back_to_back(s);
    const auto frame = txdsp::generate_symbols(derive_seed(seed, 0, 0, SeedStream::symbols),
                                               static_cast<std::size_t>(cfg.run.symbols), s.constellation,
                                               cfg.tx.symbol_rate_hz);
    const Waveform env = transmit(s, frame);
    channel::ChannelParams cp = s.channel;
    cp.seed = derive_seed(seed, 0, 0, SeedStream::channel);
    const auto ch = channel::propagate(env, cp);
    std::mt19937_64 rng(derive_seed(seed, 0, 0, SeedStream::detector));
    const auto det = rxdsp::heterodyne_detect(ch.field, s.detector, rng);
    const double f_nominal = cfg.tx.pilot_hz - cfg.channel.freq_offset_hz;

    SyncRun out;
    out.pilot_snr_db = pilot_snr_db(det.electrical.samples, s.fs, f_nominal, s.pilot);
    auto residual = [&](const rxdsp::PilotRecovery& pil) {
        const std::size_t n = pil.phase.size();
        const double df = pil.frequency - f_nominal;
        const std::size_t lo = n / 10, hi = n - n / 10;
        std::vector<double> err(n);
        double mean = 0.0;
        for (std::size_t i = lo; i < hi; ++i) {
            err[i] = pil.phase[i] + kTwoPi * df * static_cast<double>(i) / s.fs - ch.phase[i];
            mean += err[i];
        }
        mean /= static_cast<double>(hi - lo);
        double acc = 0.0;
        for (std::size_t i = lo; i < hi; ++i) acc += (err[i] - mean) * (err[i] - mean);
        return std::sqrt(acc / static_cast<double>(hi - lo)) * 180.0 / kPi;
    };
    const auto pilot = rxdsp::recover_frequency_and_phase(det.electrical, s.pilot);
    out.frequency_error = pilot.frequency - f_nominal;
    out.rms_deg = residual(pilot);
    for (double bw : sweep) {
        rxdsp::PilotOptions po = s.pilot;
        po.lowpass_hz = bw;
        out.sweep_deg.push_back(residual(rxdsp::recover_frequency_and_phase(det.electrical, po)));
    }
    const auto m = rxdsp::demodulate_and_align(det.electrical, pilot, nullptr, frame, s.receiver);
    out.lag = m.lag;
    return out;
}

void sync(const Context& ctx, Criterion& c) {
    ScenarioConfig base = ctx.config("sync");
    // frequency and delay without phase drift, an offset off the nominal grid
    ScenarioConfig still = base;
    still.channel.phase_drift_rad_per_s = 0.0;
    still.channel.freq_offset_hz = 2.78e9 + 12.3e3;
    double worst_f = 0.0;
    bool lag_ok = true;
    std::string lags;
    for (std::uint64_t seed : {11u, 12u, 13u}) {
        ctx.progress("sync: offset and delay, seed " + std::to_string(seed));
        const SyncRun r = sync_run(still, seed);
        worst_f = std::max(worst_f, std::abs(r.frequency_error));
        lag_ok = lag_ok && r.lag == base.channel.delay_samples;
        lags += (lags.empty() ? "" : ", ") + std::to_string(r.lag);
    }
    c.check("frequency", worst_f <= 1e3,
            fmt("offset 2.78 GHz + 12.3 kHz: max |f-hat - f| = %.1f Hz over 3 records (<= 1 kHz)", worst_f));
    c.check("delay", lag_ok, fmt("injected %ld samples, recovered %s", base.channel.delay_samples, lags.c_str()));

    // set the pilot level for a 40 dB post-filter SNR, then track the Wiener drift
    ScenarioConfig drift = base;
    ctx.progress("sync: pilot level");
    const double snr0 = sync_run(drift, 21).pilot_snr_db;
    drift.tx.pilot_to_quantum_db += 40.0 - snr0;
    const std::vector<double> sweep = {0.1e6, 0.3e6, 1e6, 3e6, 10e6};
    ctx.progress("sync: Wiener drift");
    const SyncRun r = sync_run(drift, 22, sweep);
    c.check("phase_rms", r.rms_deg <= 0.5,
            fmt("%.0f rad/s Wiener drift, pilot SNR %.1f dB: residual %.3f deg RMS (<= 0.5; stretch 0.2)",
                base.channel.phase_drift_rad_per_s, r.pilot_snr_db, r.rms_deg));
    std::string sw;
    std::size_t best = 0;
    for (std::size_t i = 0; i < sweep.size(); ++i) {
        sw += fmt("%s%.1f MHz: %.2f", i ? ", " : "", sweep[i] / 1e6, r.sweep_deg[i]);
        if (r.sweep_deg[i] < r.sweep_deg[best]) best = i;
    }
    c.note("phase low-pass sweep (deg RMS): " + sw);
    c.note(fmt("best in sweep %.2f deg at %.1f MHz; pilot-to-quantum ratio used %.1f dB", r.sweep_deg[best],
               sweep[best] / 1e6, drift.tx.pilot_to_quantum_db));
    ScenarioConfig ou = drift;
    ou.channel.phase_model = "integrated_ou";
    ctx.progress("sync: integrated-OU drift");
    c.note(fmt("same pilot with the integrated-OU drift model: %.3f deg RMS", sync_run(ou, 23).rms_deg));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    std::string waive_list, only_list, out_dir;
    app.add_option("--waive", waive_list, "comma list of criterion:check names whose failure does not fail the run");
    app.add_option("--only", only_list, "comma list of criterion numbers to run");
    app.add_option("--out", out_dir, "artifact directory (default: a temporary directory)");
    CLI11_PARSE(app, argc, argv);

    auto split = [](const std::string& s) {
        std::vector<std::string> out;
        std::stringstream ss(s);
        for (std::string item; std::getline(ss, item, ',');)
            if (!item.empty()) out.push_back(item);
        return out;
    };
    const auto waived_v = split(waive_list);
    const std::set<std::string> waived(waived_v.begin(), waived_v.end());
    std::set<int> only;
    for (const auto& s : split(only_list)) only.insert(std::stoi(s));

    Context ctx;
    ctx.out_dir = out_dir.empty() ? fs::temp_directory_path() / "cvqkd_acceptance" : fs::path(out_dir);
    fs::create_directories(ctx.out_dir);

    using Fn = void (*)(const Context&, Criterion&);
    const std::vector<std::tuple<int, const char*, Fn>> all = {
        {1, "sideband correction", sideband},  {2, "moment table", table2},        {3, "estimator recovery", recovery},
        {4, "excess-noise spread", spread},    {5, "key-rate engine", engine},     {6, "rate bands", rate_bands},
        {7, "DSP loopback", loopback},         {8, "synchronization", sync},
    };

    bool failed = false;
    std::vector<Criterion> done;
    for (const auto& [num, title, fn] : all) {
        if (!only.empty() && !only.count(num)) continue;
        Criterion c;
        c.number = num;
        c.title = title;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            fn(ctx, c);
        } catch (const std::exception& e) {
            c.check("run", false, std::string("error: ") + e.what());
        }
        c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        done.push_back(std::move(c));
    }

    for (const auto& c : done) {
        std::vector<std::string> misses, waived_misses;
        for (const auto& k : c.checks) {
            if (k.pass) continue;
            const std::string id = std::to_string(c.number) + ":" + k.name;
            (waived.count(id) ? waived_misses : misses).push_back(id);
        }
        const bool pass = misses.empty() && waived_misses.empty();
        std::string status = pass ? "PASS" : "FAIL";
        std::string suffix;
        if (!pass && misses.empty()) {
            suffix = " [waived:";
            for (const auto& w : waived_misses) suffix += " " + w;
            suffix += "]";
        }
        if (!misses.empty()) failed = true;
        std::printf("%s  criterion %d: %s (%.1f s)%s\n", status.c_str(), c.number, c.title.c_str(), c.seconds,
                    suffix.c_str());
        for (const auto& k : c.checks)
            std::printf("      %-4s %-14s %s\n", k.pass ? "ok" : "miss", k.name.c_str(), k.detail.c_str());
        for (const auto& n : c.notes) std::printf("           %s\n", n.c_str());
    }
    std::fflush(stdout);
    return failed ? 4 : 0;
}
