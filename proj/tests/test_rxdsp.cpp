#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "cvqkd/channel.hpp"
#include "cvqkd/rxdsp.hpp"

using namespace cvqkd;
using namespace cvqkd::rxdsp;

namespace {

constexpr double kRs = 1.5625e9;
constexpr int kSps = 16;
constexpr double kFs = kRs * kSps;

Waveform vacuum(std::size_t n) {
    Waveform w;
    w.sample_rate = kFs;
    w.origin = Origin::optical_envelope;
    w.samples.assign(n, cplx{});
    return w;
}

DetectorModel plain(double v_el) {
    DetectorModel d;
    d.electronic_noise = v_el;
    d.adc_bits = 0;
    return d;
}

double component_variance(const std::vector<cplx>& x, bool imag = false) {
    double m = 0.0, s = 0.0;
    for (const auto& v : x) {
        const double r = imag ? v.imag() : v.real();
        m += r;
        s += r * r;
    }
    m /= x.size();
    return s / x.size() - m * m;
}

dsp::Psd flat_psd(double level) {
    dsp::Psd p;
    const std::size_t n = 4096;
    p.bin_width = kFs / n;
    for (std::size_t j = 0; j < n; ++j) {
        p.frequency.push_back(-0.5 * kFs + j * p.bin_width);
        p.density.push_back(level);
    }
    return p;
}

// Quantum band at 1.6 GHz plus a pilot tone at 0.4 GHz, as an optical envelope.
struct Loop {
    SymbolFrame tx;
    Waveform field;
};

Loop loopback_field(std::size_t symbols, std::uint64_t seed) {
    Loop l;
    const auto c = protocol::build_constellation(8, 1.19);
    l.tx = txdsp::generate_symbols(seed, symbols, c, kRs);
    l.field = txdsp::shape_and_shift(l.tx, kSps, txdsp::rrc_taps(0.2, 32, kSps), 1.6e9, kFs, 0.2);
    const double pilot = std::sqrt(100.0 * l.field.mean_power());
    for (std::size_t i = 0; i < l.field.size(); ++i)
        l.field.samples[i] += std::polar(pilot, kTwoPi * 0.4e9 * static_cast<double>(i) / kFs);
    l.field.origin = Origin::optical_envelope;
    return l;
}

MeasuredFrame run_loopback(const Loop& l, double extra_phase, long delay) {
    channel::ChannelParams p;
    p.freq_offset = 2.78e9;
    p.delay_samples = delay;
    Waveform f = l.field;
    for (auto& v : f.samples) v *= std::polar(1.0, extra_phase);
    const auto ch = channel::propagate(f, p);
    DetectorModel d = plain(0.0);
    d.efficiency = 1.0;
    d.shot_noise = false;
    std::mt19937_64 rng(1);
    const auto e = heterodyne_detect(ch.field, d, rng).electrical;
    const auto pilot = recover_frequency_and_phase(e);
    ReceiverOptions o;
    return demodulate_and_align(e, pilot, nullptr, l.tx, o);
}

}  // namespace

TEST(Detector, VacuumVarianceIsShotPlusElectronic) {
    const std::size_t n = 400000;
    std::mt19937_64 rng(1);
    const auto y = heterodyne_detect(vacuum(n), plain(0.2), rng).electrical.samples;
    const double sigma = 1.2 * std::sqrt(2.0 / n);
    EXPECT_NEAR(component_variance(y), 1.2, 3.0 * sigma);
    EXPECT_NEAR(component_variance(y, true), 1.2, 3.0 * sigma);

    DetectorModel scaled = plain(0.2);
    scaled.snu_scale = 2.5;
    std::mt19937_64 rng2(1);
    const auto z = heterodyne_detect(vacuum(n), scaled, rng2).electrical.samples;
    EXPECT_NEAR(component_variance(z) / component_variance(y), 2.5, 1e-12);
}

TEST(Detector, CoherentToneMeanMatchesEfficiency) {
    const std::size_t n = 200000;
    Waveform w = vacuum(n);
    const cplx alpha{0.6, -0.3};
    std::fill(w.samples.begin(), w.samples.end(), alpha);
    std::mt19937_64 rng(2);
    const auto y = heterodyne_detect(w, plain(0.0), rng).electrical.samples;
    cplx mean{};
    for (const auto& v : y) mean += v;
    mean /= static_cast<double>(n);
    const cplx expect = std::sqrt(2.0 * 0.37) * alpha;
    EXPECT_NEAR(mean.real(), expect.real(), 3.0 / std::sqrt(n));
    EXPECT_NEAR(mean.imag(), expect.imag(), 3.0 / std::sqrt(n));
    // per-quadrature SNR of the tone: 2 eta |Re alpha|^2 over unit shot noise
    EXPECT_NEAR(component_variance(y), 1.0, 3.0 * std::sqrt(2.0 / n));
}

TEST(Detector, NoLocalOscillatorRecordsOnlyElectronicNoise) {
    Waveform w = vacuum(100000);
    std::fill(w.samples.begin(), w.samples.end(), cplx{5.0, 0.0});
    DetectorModel d = plain(0.2);
    d.local_oscillator = false;
    std::mt19937_64 rng(3);
    const auto y = heterodyne_detect(w, d, rng).electrical.samples;
    EXPECT_NEAR(component_variance(y), 0.2, 3.0 * 0.2 * std::sqrt(2.0 / 100000));
}

TEST(Detector, BeatFrequenciesOfPilotAndQuantum) {
    const std::size_t n = 1 << 16;
    Waveform w = vacuum(n);
    for (std::size_t i = 0; i < n; ++i)
        w.samples[i] = std::polar(1.0, kTwoPi * 1.6e9 * i / kFs) + std::polar(3.0, kTwoPi * 0.4e9 * i / kFs);
    channel::ChannelParams p;
    p.freq_offset = 2.78e9;
    DetectorModel d = plain(0.0);
    d.shot_noise = false;
    std::mt19937_64 rng(4);
    auto y = heterodyne_detect(channel::propagate(w, p).field, d, rng).electrical.samples;
    dsp::fft(y);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + 2, order.end(),
                      [&](std::size_t a, std::size_t b) { return std::norm(y[a]) > std::norm(y[b]); });
    EXPECT_NEAR(dsp::bin_frequency(order[0], n, kFs), -2.38e9, kFs / n);
    EXPECT_NEAR(dsp::bin_frequency(order[1], n, kFs), -1.18e9, kFs / n);
}

TEST(Detector, RejectsBadModel) {
    std::mt19937_64 rng(5);
    DetectorModel d;
    d.efficiency = 0.0;
    EXPECT_THROW(heterodyne_detect(vacuum(16), d, rng), Error);
    d = DetectorModel{};
    d.snu_scale = 0.0;
    EXPECT_THROW(heterodyne_detect(vacuum(16), d, rng), Error);
}

TEST(Whitening, FlattensRolledOffDetector) {
    DetectorModel d = plain(0.2);
    d.response = txdsp::second_order_lowpass(3.2e9, kFs / 2);
    std::mt19937_64 rng(6);
    const auto cap = heterodyne_detect(vacuum(1 << 20), d, rng).electrical.samples;
    const auto psd = dsp::welch_psd(cap, kFs, 1 << 15);
    const auto w = design_whitening(psd, 2.71e9);
    double lo = 1e9, hi = -1e9;
    for (double f = 50e6; f <= 2.71e9; f += 10e6)
        for (double s : {-1.0, 1.0}) {
            const double g = w.gain(s * f) * std::abs(d.response->at(s * f));
            lo = std::min(lo, 20.0 * std::log10(g));
            hi = std::max(hi, 20.0 * std::log10(g));
        }
    EXPECT_LE(hi - lo, 0.5);
    EXPECT_EQ(w.gain(2.78e9), 0.0);
    EXPECT_EQ(w.gain(-2.78e9), 0.0);
}

TEST(Whitening, FlatPsdIsAllPass) {
    const auto w = design_whitening(flat_psd(3.7), 2.71e9);
    for (double f : {-2.7e9, -1e9, 0.0, 1.5e9, 2.7e9}) EXPECT_NEAR(w.gain(f), 1.0, 1e-12);
}

TEST(Whitening, InverseSquareRootRule) {
    auto p = flat_psd(1.0);
    for (std::size_t j = 0; j < p.frequency.size(); ++j)
        if (std::abs(p.frequency[j] - 2e9) < 0.5e9) p.density[j] = 0.5;
    const auto w = design_whitening(p, 2.71e9);
    // magnitude goes as PSD^-1/2: +1.5 dB on the 10 log10 scale of the dip, +3 dB as a power gain
    const double g = w.gain(2e9) / w.gain(0.5e9);
    EXPECT_NEAR(10.0 * std::log10(g), 1.5, 0.2);
    EXPECT_NEAR(g * g * 0.5, 1.0, 1e-12);
}

TEST(Whitening, RejectsNonPositiveBins) {
    auto p = flat_psd(1.0);
    p.density[p.density.size() / 2] = 0.0;
    EXPECT_THROW(design_whitening(p, 2.71e9), Error);
    EXPECT_THROW(design_whitening(flat_psd(1.0), 0.0), Error);
}

TEST(Pilot, FrequencyWithinOneKilohertz) {
    const std::size_t n = 1 << 20;
    const double f = -2.38e9 + 12.3e3;
    Waveform w = vacuum(n);
    w.origin = Origin::electrical;
    std::mt19937_64 rng(7);
    const auto noise = dsp::complex_gaussian(n, 1.0, rng);
    for (std::size_t i = 0; i < n; ++i) w.samples[i] = std::polar(10.0, kTwoPi * f * i / kFs + 0.4) + noise[i];
    const auto r = recover_frequency_and_phase(w);
    EXPECT_LE(std::abs(r.frequency - f), 1e3);
    EXPECT_GT(r.peak_db, 20.0);
}

TEST(Pilot, NoiselessConstantPhase) {
    const std::size_t n = 1 << 20;
    const double f = -2.38e9 + 5e3;
    Waveform w = vacuum(n);
    w.origin = Origin::electrical;
    for (std::size_t i = 0; i < n; ++i) w.samples[i] = std::polar(1.0, kTwoPi * f * i / kFs + 0.7);
    const auto r = recover_frequency_and_phase(w);
    double lo = 1e9, hi = -1e9;
    for (std::size_t i = n / 10; i < n - n / 10; ++i) {
        lo = std::min(lo, r.phase[i]);
        hi = std::max(hi, r.phase[i]);
    }
    EXPECT_LT(hi - lo, 1e-6);
}

TEST(Pilot, MissingPilotRejected) {
    Waveform w = vacuum(1 << 16);
    w.origin = Origin::electrical;
    std::mt19937_64 rng(8);
    w.samples = dsp::complex_gaussian(w.size(), 1.0, rng);
    EXPECT_THROW(recover_frequency_and_phase(w), Error);
}

TEST(Alignment, RecoversInjectedLag) {
    const std::size_t symbols = 4096;
    std::mt19937_64 rng(9);
    const auto ref = dsp::complex_gaussian(symbols, 0.5, rng);
    std::vector<cplx> z = dsp::complex_gaussian(symbols * kSps + 20000, 0.5, rng);
    for (std::size_t k = 0; k < symbols; ++k) z[12345 + k * kSps] += 3.0 * ref[k];
    const auto a = find_lag(z, ref, kSps, 1 << 15);
    EXPECT_EQ(a.lag, 12345);
    EXPECT_GT(a.peak_ratio, 8.0);
}

TEST(FrontEnd, LinearTimeInvariant) {
    std::mt19937_64 rng(10);
    Waveform a = vacuum(1 << 14), b = vacuum(1 << 14), s = vacuum(1 << 14);
    a.samples = dsp::complex_gaussian(a.size(), 1.0, rng);
    b.samples = dsp::complex_gaussian(b.size(), 1.0, rng);
    for (std::size_t i = 0; i < s.size(); ++i) s.samples[i] = 2.0 * a.samples[i] - 0.5 * b.samples[i];
    auto p = flat_psd(1.0);
    for (std::size_t j = 0; j < p.frequency.size(); ++j) p.density[j] = 1.0 + std::pow(p.frequency[j] / 3e9, 2);
    const auto w = design_whitening(p, 2.71e9);
    const auto za = receiver_front_end(a, &w, -1.18e9, nullptr, 0.2, kSps);
    const auto zb = receiver_front_end(b, &w, -1.18e9, nullptr, 0.2, kSps);
    const auto zs = receiver_front_end(s, &w, -1.18e9, nullptr, 0.2, kSps);
    for (std::size_t i = 0; i < zs.size(); ++i) ASSERT_NEAR(std::abs(zs[i] - (2.0 * za[i] - 0.5 * zb[i])), 0.0, 1e-10);
}

TEST(FrontEnd, VacuumSamplesAreWhiteAndInSnu) {
    const std::size_t symbols = 200000;
    DetectorModel d = plain(0.2);
    std::mt19937_64 rng(11);
    const auto e = heterodyne_detect(vacuum(symbols * kSps), d, rng).electrical;
    const auto x = calibration_samples(e, nullptr, -1.18e9, 0.2, kSps, 512);
    const double n = static_cast<double>(x.size());
    const double var = component_variance(x);
    EXPECT_NEAR(var, 1.2, 3.0 * 1.2 * std::sqrt(2.0 / n));
    EXPECT_NEAR(component_variance(x, true), 1.2, 3.0 * 1.2 * std::sqrt(2.0 / n));
    double c0 = 0.0;
    for (const auto& v : x) c0 += std::norm(v);
    for (std::size_t lag = 1; lag <= 8; ++lag) {
        cplx c{};
        for (std::size_t i = lag; i < x.size(); ++i) c += x[i] * std::conj(x[i - lag]);
        EXPECT_LE(std::abs(c) / c0, 0.02) << lag;
    }
}

TEST(Loopback, NoiselessChainIsExact) {
    const auto l = loopback_field(1 << 15, 12);
    const auto m = run_loopback(l, 0.0, 12345);
    EXPECT_EQ(m.lag, 12345);
    // interior only: the 100 kHz phase low-pass needs a few microseconds to settle at the record ends
    const std::size_t lo = m.samples.size() / 8, hi = m.samples.size() - lo;
    const std::vector<cplx> got(m.samples.begin() + lo, m.samples.begin() + hi);
    const std::vector<cplx> ref(l.tx.symbols.begin() + lo, l.tx.symbols.begin() + hi);
    EXPECT_LE(evm(got, ref), 0.01);
    for (std::size_t k = 0; k < m.samples.size(); ++k) ASSERT_EQ(m.indices[k], l.tx.indices[k]);
    EXPECT_NEAR(m.frequency_estimate, -2.38e9, 1e3);
}

TEST(Loopback, ConstantRotationRemoved) {
    const auto l = loopback_field(8192, 13);
    const auto a = run_loopback(l, 0.0, 100);
    const auto b = run_loopback(l, 1.1, 100);
    ASSERT_EQ(a.samples.size(), b.samples.size());
    double worst = 0.0;
    for (std::size_t k = 0; k < a.samples.size(); ++k)
        worst = std::max(worst, std::abs(std::arg(b.samples[k] * std::conj(a.samples[k]))));
    EXPECT_LE(worst, 0.01);
}

TEST(Evm, ScaleInvariantAndZeroForExactCopy) {
    std::mt19937_64 rng(14);
    const auto ref = dsp::complex_gaussian(1000, 1.0, rng);
    std::vector<cplx> m(ref);
    for (auto& v : m) v *= std::polar(0.3, 0.9);
    EXPECT_NEAR(evm(m, ref), 0.0, 1e-12);
}
