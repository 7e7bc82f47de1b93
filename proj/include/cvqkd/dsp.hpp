#pragma once

// FFT helpers and frequency-domain filtering shared by the transmitter, channel and receiver.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <span>
#include <vector>

#include <fftw3.h>

#include "cvqkd/common.hpp"

namespace cvqkd::dsp {

// FFTW's planner is not thread-safe; plan creation and destruction are serialized.
inline std::mutex& planner_mutex() {
    static std::mutex mu;
    return mu;
}

/// In-place complex FFT plan of fixed length. Unnormalized in both directions.
class FftPlan {
public:
    FftPlan(std::size_t n, int sign) : n_(n), buffer_(fftw_alloc_complex(n), fftw_free) {
        std::lock_guard<std::mutex> lock(planner_mutex());
        plan_ = fftw_plan_dft_1d(static_cast<int>(n), buffer_.get(), buffer_.get(), sign, FFTW_ESTIMATE);
        if (!plan_) throw Error(Stage::io, "fftw plan creation failed");
    }
    FftPlan(const FftPlan&) = delete;
    FftPlan& operator=(const FftPlan&) = delete;
    ~FftPlan() {
        std::lock_guard<std::mutex> lock(planner_mutex());
        fftw_destroy_plan(plan_);
    }

    std::size_t size() const { return n_; }

    void execute(std::vector<cplx>& data) {
        if (data.size() != n_) throw Error(Stage::io, "fft length mismatch");
        std::copy(data.begin(), data.end(), reinterpret_cast<cplx*>(buffer_.get()));
        fftw_execute(plan_);
        std::copy_n(reinterpret_cast<cplx*>(buffer_.get()), n_, data.begin());
    }

private:
    std::size_t n_;
    std::unique_ptr<fftw_complex, decltype(&fftw_free)> buffer_;
    fftw_plan plan_ = nullptr;
};

/// Per-thread plan cache keyed by length and direction.
inline FftPlan& cached_plan(std::size_t n, int sign) {
    thread_local std::map<std::pair<std::size_t, int>, std::unique_ptr<FftPlan>> cache;
    const std::pair<std::size_t, int> key{n, sign};
    auto it = cache.find(key);
    if (it != cache.end()) return *it->second;
    if (cache.size() >= 16) cache.clear();  // bounds memory
    return *cache.emplace(key, std::make_unique<FftPlan>(n, sign)).first->second;
}

inline void fft(std::vector<cplx>& x) { cached_plan(x.size(), FFTW_FORWARD).execute(x); }

inline void ifft(std::vector<cplx>& x) {
    cached_plan(x.size(), FFTW_BACKWARD).execute(x);
    const double s = 1.0 / x.size();
    for (auto& v : x) v *= s;
}

/// Smallest 2^a 3^b 5^c >= n with b <= 1 and c <= 2.
inline std::size_t fast_length(std::size_t n) {
    std::size_t best = std::numeric_limits<std::size_t>::max();
    for (std::size_t odd : {1, 3, 5, 15, 25, 75}) {
        std::size_t v = odd;
        while (v < n) v <<= 1;
        best = std::min(best, v);
    }
    return best;
}

/// Frequency of bin k of an n-point FFT at sample rate fs, in [-fs/2, fs/2).
inline double bin_frequency(std::size_t k, std::size_t n, double fs) {
    const double kk = k < (n + 1) / 2 ? static_cast<double>(k) : static_cast<double>(k) - static_cast<double>(n);
    return kk * fs / n;
}

/// Applies H(f) to x by zero-padded FFT (linear, not circular); output has the input length and
/// no delay for zero-phase masks.
inline void apply_frequency_response(std::vector<cplx>& x, double fs, const std::function<cplx(double)>& h,
                                     std::size_t guard = 0) {
    const std::size_t n = x.size();
    const std::size_t len = fast_length(n + guard);
    std::vector<cplx> buf(len, cplx{});
    std::copy(x.begin(), x.end(), buf.begin());
    cached_plan(len, FFTW_FORWARD).execute(buf);
    for (std::size_t k = 0; k < len; ++k) buf[k] *= h(bin_frequency(k, len, fs));
    cached_plan(len, FFTW_BACKWARD).execute(buf);
    const double s = 1.0 / len;
    for (std::size_t i = 0; i < n; ++i) x[i] = buf[i] * s;
}

namespace detail {
// Spectra of recently used tap sets, keyed by FFT length and tap values.
inline const std::vector<cplx>& tap_spectrum(std::span<const double> taps, std::size_t len) {
    using Key = std::pair<std::size_t, std::vector<double>>;
    thread_local std::map<Key, std::vector<cplx>> cache;
    Key key{len, std::vector<double>(taps.begin(), taps.end())};
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    if (cache.size() >= 8) cache.clear();
    std::vector<cplx> b(len, cplx{});
    for (std::size_t k = 0; k < taps.size(); ++k) b[k] = taps[k];
    cached_plan(len, FFTW_FORWARD).execute(b);
    return cache.emplace(std::move(key), std::move(b)).first->second;
}
}  // namespace detail

/// Linear convolution with odd-length taps, centered ("same" mode): output[n] = sum_k h[k] x[n + c - k].
inline std::vector<cplx> convolve_same(std::span<const cplx> x, std::span<const double> taps) {
    if (taps.size() % 2 == 0) throw Error(Stage::io, "centered convolution needs odd tap count");
    const std::size_t n = x.size();
    const std::size_t c = taps.size() / 2;
    const std::size_t len = fast_length(n + taps.size());
    std::vector<cplx> a(len, cplx{});
    std::copy(x.begin(), x.end(), a.begin());
    cached_plan(len, FFTW_FORWARD).execute(a);
    const std::vector<cplx>& b = detail::tap_spectrum(taps, len);
    for (std::size_t k = 0; k < len; ++k) a[k] *= b[k];
    cached_plan(len, FFTW_BACKWARD).execute(a);
    std::vector<cplx> out(n);
    const double s = 1.0 / len;
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i + c] * s;
    return out;
}

/// Frequency response sum_k h[k] e^{-i 2 pi f (k - c)/fs} of centered real taps.
inline cplx fir_response(std::span<const double> taps, double f, double fs) {
    const double c = 0.5 * (static_cast<double>(taps.size()) - 1.0);
    cplx acc{};
    for (std::size_t k = 0; k < taps.size(); ++k) acc += taps[k] * std::polar(1.0, -kTwoPi * f * (k - c) / fs);
    return acc;
}

/// Two-sided power spectral density by Welch averaging with a Hann window and 50% overlap.
struct Psd {
    std::vector<double> frequency;  // ascending, Hz
    std::vector<double> density;    // power per Hz
    double bin_width = 0.0;

    /// Linear interpolation, clamped at the ends.
    double at(double f) const {
        if (f <= frequency.front()) return density.front();
        if (f >= frequency.back()) return density.back();
        const auto it = std::upper_bound(frequency.begin(), frequency.end(), f);
        const std::size_t i = static_cast<std::size_t>(it - frequency.begin());
        const double w = (f - frequency[i - 1]) / (frequency[i] - frequency[i - 1]);
        return (1.0 - w) * density[i - 1] + w * density[i];
    }
};

inline Psd welch_psd(std::span<const cplx> x, double fs, std::size_t segment) {
    if (segment < 8 || x.size() < segment) throw Error(Stage::rxdsp, "record shorter than one PSD segment");
    std::vector<double> window(segment);
    double wpow = 0.0;
    for (std::size_t i = 0; i < segment; ++i) {
        window[i] = 0.5 - 0.5 * std::cos(kTwoPi * i / segment);
        wpow += window[i] * window[i];
    }
    FftPlan plan(segment, FFTW_FORWARD);
    std::vector<double> acc(segment, 0.0);
    std::vector<cplx> buf(segment);
    std::size_t count = 0;
    for (std::size_t start = 0; start + segment <= x.size(); start += segment / 2) {
        for (std::size_t i = 0; i < segment; ++i) buf[i] = x[start + i] * window[i];
        plan.execute(buf);
        for (std::size_t k = 0; k < segment; ++k) acc[k] += std::norm(buf[k]);
        ++count;
    }
    Psd psd;
    psd.bin_width = fs / segment;
    psd.frequency.resize(segment);
    psd.density.resize(segment);
    // reorder to ascending frequency
    for (std::size_t j = 0; j < segment; ++j) {
        const std::size_t k = (j + (segment + 1) / 2) % segment;
        psd.frequency[j] = bin_frequency(k, segment, fs);
        psd.density[j] = acc[k] / (count * wpow * fs);
    }
    return psd;
}

/// Complex Gaussian samples with variance `component_variance` in each of the real and imaginary parts.
inline std::vector<cplx> complex_gaussian(std::size_t n, double component_variance, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, std::sqrt(component_variance));
    std::vector<cplx> out(n);
    for (auto& v : out) v = {g(rng), g(rng)};
    return out;
}

/// Uniform mid-rise quantizer on [-full_scale, full_scale] applied to I and Q separately; returns
/// the fraction of components that clipped.
inline double quantize(std::vector<cplx>& x, int bits, double full_scale) {
    if (bits <= 0) return 0.0;
    if (!(full_scale > 0.0)) throw Error(Stage::txdsp, "quantizer full scale must be positive");
    const double levels = std::ldexp(1.0, bits);
    const double step = 2.0 * full_scale / levels;
    const double top = full_scale - 0.5 * step;
    std::size_t clipped = 0;
    auto q = [&](double v) {
        double r = (std::floor(v / step) + 0.5) * step;
        if (r > top) {
            r = top;
            if (v > full_scale) ++clipped;
        } else if (r < -top) {
            r = -top;
            if (v < -full_scale) ++clipped;
        }
        return r;
    };
    for (auto& v : x) v = {q(v.real()), q(v.imag())};
    return x.empty() ? 0.0 : static_cast<double>(clipped) / (2.0 * x.size());
}

inline double component_rms(std::span<const cplx> x) {
    double acc = 0.0;
    for (const auto& v : x) acc += std::norm(v);
    return x.empty() ? 0.0 : std::sqrt(acc / (2.0 * x.size()));
}

/// Multiplies x[n] by exp(i 2 pi f n / fs + i phase0).
inline void mix(std::vector<cplx>& x, double f, double fs, double phase0 = 0.0) {
    const double w = kTwoPi * f / fs;
    for (std::size_t n = 0; n < x.size(); ++n) x[n] *= std::polar(1.0, w * static_cast<double>(n) + phase0);
}

}  // namespace cvqkd::dsp
