#pragma once

// Sample buffers shared across the transmitter, channel and receiver chains.

#include <cstdint>
#include <string>
#include <vector>

#include "cvqkd/common.hpp"

namespace cvqkd {

enum class Origin { baseband, rf, optical_envelope, electrical };

inline const char* to_string(Origin o) {
    switch (o) {
        case Origin::baseband: return "baseband";
        case Origin::rf: return "rf";
        case Origin::optical_envelope: return "optical-envelope";
        case Origin::electrical: return "electrical";
    }
    return "unknown";
}

inline Origin origin_from_string(const std::string& s) {
    if (s == "baseband") return Origin::baseband;
    if (s == "rf") return Origin::rf;
    if (s == "optical-envelope") return Origin::optical_envelope;
    if (s == "electrical") return Origin::electrical;
    throw Error(Stage::io, "unknown waveform origin '" + s + "'");
}

struct Waveform {
    std::vector<cplx> samples;
    double sample_rate = 0.0;  // Hz
    Origin origin = Origin::baseband;

    std::size_t size() const { return samples.size(); }
    double duration() const { return samples.size() / sample_rate; }

    double mean_power() const {
        double acc = 0.0;
        for (const auto& s : samples) acc += std::norm(s);
        return samples.empty() ? 0.0 : acc / samples.size();
    }

    void validate(Stage stage) const {
        if (!(sample_rate > 0.0)) throw Error(stage, "waveform sample rate must be positive");
        if (samples.empty()) throw Error(stage, "waveform is empty");
    }
};

struct SymbolFrame {
    std::vector<cplx> symbols;
    std::vector<int> indices;
    double symbol_rate = 0.0;  // Hz
};

/// Heterodyne outcomes at symbol rate in SNU (x_B + i p_B), aligned to Alice's indices.
struct MeasuredFrame {
    std::vector<cplx> samples;
    std::vector<int> indices;
    double frequency_estimate = 0.0;  // Hz
    std::vector<double> phase_trace;  // rad, one entry per symbol
    long lag = 0;                      // samples at the ADC rate
    double snu_scale = 1.0;
    bool phase_ambiguity_flagged = false;
};

}  // namespace cvqkd
