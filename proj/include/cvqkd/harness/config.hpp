#pragma once

// Scenario configuration: JSON sections with defaults, strict key checking and a content hash.

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>
#include <string>

#include <openssl/evp.h>

#include "json.hpp"

#include "cvqkd/common.hpp"

namespace cvqkd::harness {

using json = nlohmann::json;

struct ProtocolConfig {
    int states = 8;
    double modulation_variance = 1.19;
    double sideband_suppression_db = 19.4;
};

struct TxConfig {
    double symbol_rate_hz = 1.5625e9;
    int samples_per_symbol = 16;
    double roll_off = 0.2;
    int rrc_span = 32;
    double shift_hz = 1.6e9;
    double pilot_hz = 0.4e9;
    double pilot_to_quantum_db = 20.0;
    bool preemphasis = true;
    int preemphasis_taps = 257;
    double preemphasis_band_hz = 3.3e9;
    double response_f3db_hz = 1.23e9;  // <= 0 for a flat transmitter
    std::string response_csv;
    int dac_bits = 10;
    double dac_clip_ratio = 4.9;
    double v_pi = 4.0;
    double peak_depth = 0.1;
    double carrier_leakage_db = -20.0;
    bool image_sideband = true;  // image at the protocol's suppression ratio
};

struct ChannelConfig {
    double length_km = 25.8;
    double att_db_per_km = 0.2;
    double transmittance = 0.34;  // <= 0 derives T from length and attenuation
    double epsilon_snu = 0.028;
    double phase_drift_rad_per_s = 1e4;
    std::string phase_model = "wiener";
    double freq_offset_hz = 2.78e9;
    long delay_samples = 0;
    bool band_limited_noise = true;
};

struct DetectorConfig {
    double efficiency = 0.37;
    double electronic_noise_snu = 0.20;
    double response_f3db_hz = 3.5e9;  // <= 0 for a flat detector
    std::string response_csv;
    int adc_bits = 12;
    double snu_scale = 1.0;
    bool shot_noise = true;
};

struct RxConfig {
    bool whitening = true;
    double whitening_cutoff_hz = 2.71e9;
    int psd_capture_log2 = 20;
    double psd_bin_hz = 1e6;
    double pilot_band_low_hz = -2.6e9;
    double pilot_band_high_hz = -2.2e9;
    double pilot_lowpass_hz = 100e3;
    int block_symbols = 10000;
    int phase_grid = 64;
    long max_lag_samples = 32768;
    double calibration_factor = 2.0;  // calibration symbols per data symbol
};

struct EstimationConfig {
    double disclosed_fraction = 0.1;
};

struct KeyRateConfig {
    bool enabled = true;
    int cutoff = 10;
    double beta = 0.95;
    double gap_tolerance = 1e-5;
    int max_iterations = 300;
    bool trusted_detector = true;
    bool check_cutoff = false;
};

struct RunConfig {
    long symbols = 1000000;
    long chunk_symbols = 100000;
    int frames = 1;
    std::uint64_t seed = 1;
    std::string output_dir = "out";
};

struct ScenarioConfig {
    std::string name = "scenario";
    ProtocolConfig protocol;
    TxConfig tx;
    ChannelConfig channel;
    DetectorConfig detector;
    RxConfig rx;
    EstimationConfig estimation;
    KeyRateConfig keyrate;
    RunConfig run;

    void validate() const;
};

namespace detail {

inline void check_keys(const json& j, const std::string& section, const std::set<std::string>& allowed) {
    if (!j.is_object()) throw Error(Stage::config, "section '" + section + "' must be an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key())) throw Error(Stage::config, "unknown key '" + section + "." + it.key() + "'");
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& section) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw Error(Stage::config, "bad type for '" + section + "." + key + "'");
    }
}

}  // namespace detail

#define CVQKD_FIELDS_PROTOCOL(X) X(states) X(modulation_variance) X(sideband_suppression_db)
#define CVQKD_FIELDS_TX(X)                                                                                       \
    X(symbol_rate_hz) X(samples_per_symbol) X(roll_off) X(rrc_span) X(shift_hz) X(pilot_hz) X(pilot_to_quantum_db) \
    X(preemphasis) X(preemphasis_taps) X(preemphasis_band_hz) X(response_f3db_hz) X(response_csv) X(dac_bits)      \
    X(dac_clip_ratio) X(v_pi) X(peak_depth) X(carrier_leakage_db) X(image_sideband)
#define CVQKD_FIELDS_CHANNEL(X)                                                                                 \
    X(length_km) X(att_db_per_km) X(transmittance) X(epsilon_snu) X(phase_drift_rad_per_s) X(phase_model)         \
    X(freq_offset_hz) X(delay_samples) X(band_limited_noise)
#define CVQKD_FIELDS_DETECTOR(X) \
    X(efficiency) X(electronic_noise_snu) X(response_f3db_hz) X(response_csv) X(adc_bits) X(snu_scale) X(shot_noise)
#define CVQKD_FIELDS_RX(X)                                                                                     \
    X(whitening) X(whitening_cutoff_hz) X(psd_capture_log2) X(psd_bin_hz) X(pilot_band_low_hz)                  \
    X(pilot_band_high_hz) X(pilot_lowpass_hz) X(block_symbols) X(phase_grid) X(max_lag_samples) X(calibration_factor)
#define CVQKD_FIELDS_ESTIMATION(X) X(disclosed_fraction)
#define CVQKD_FIELDS_KEYRATE(X) \
    X(enabled) X(cutoff) X(beta) X(gap_tolerance) X(max_iterations) X(trusted_detector) X(check_cutoff)
#define CVQKD_FIELDS_RUN(X) X(symbols) X(chunk_symbols) X(frames) X(seed) X(output_dir)

#define CVQKD_NAME(f) #f,
#define CVQKD_READ(f) detail::read(j, #f, c.f, section);
#define CVQKD_WRITE(f) j[#f] = c.f;

#define CVQKD_SECTION(Type, FIELDS)                                                 \
    inline void from_section(const json& j, Type& c, const std::string& section) { \
        detail::check_keys(j, section, {FIELDS(CVQKD_NAME)});                       \
        FIELDS(CVQKD_READ)                                                          \
    }                                                                               \
    inline json to_section(const Type& c) {                                         \
        json j = json::object();                                                    \
        FIELDS(CVQKD_WRITE)                                                         \
        return j;                                                                   \
    }

CVQKD_SECTION(ProtocolConfig, CVQKD_FIELDS_PROTOCOL)
CVQKD_SECTION(TxConfig, CVQKD_FIELDS_TX)
CVQKD_SECTION(ChannelConfig, CVQKD_FIELDS_CHANNEL)
CVQKD_SECTION(DetectorConfig, CVQKD_FIELDS_DETECTOR)
CVQKD_SECTION(RxConfig, CVQKD_FIELDS_RX)
CVQKD_SECTION(EstimationConfig, CVQKD_FIELDS_ESTIMATION)
CVQKD_SECTION(KeyRateConfig, CVQKD_FIELDS_KEYRATE)
CVQKD_SECTION(RunConfig, CVQKD_FIELDS_RUN)

inline ScenarioConfig config_from_json(const json& j) {
    detail::check_keys(j, "<root>",
                       {"name", "protocol", "tx", "channel", "detector", "rx", "estimation", "keyrate", "run"});
    ScenarioConfig c;
    detail::read(j, "name", c.name, "<root>");
    if (j.contains("protocol")) from_section(j["protocol"], c.protocol, "protocol");
    if (j.contains("tx")) from_section(j["tx"], c.tx, "tx");
    if (j.contains("channel")) from_section(j["channel"], c.channel, "channel");
    if (j.contains("detector")) from_section(j["detector"], c.detector, "detector");
    if (j.contains("rx")) from_section(j["rx"], c.rx, "rx");
    if (j.contains("estimation")) from_section(j["estimation"], c.estimation, "estimation");
    if (j.contains("keyrate")) from_section(j["keyrate"], c.keyrate, "keyrate");
    if (j.contains("run")) from_section(j["run"], c.run, "run");
    c.validate();
    return c;
}

inline json config_to_json(const ScenarioConfig& c) {
    json j;
    j["name"] = c.name;
    j["protocol"] = to_section(c.protocol);
    j["tx"] = to_section(c.tx);
    j["channel"] = to_section(c.channel);
    j["detector"] = to_section(c.detector);
    j["rx"] = to_section(c.rx);
    j["estimation"] = to_section(c.estimation);
    j["keyrate"] = to_section(c.keyrate);
    j["run"] = to_section(c.run);
    return j;
}

inline ScenarioConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Stage::config, "cannot open config " + path);
    json j;
    try {
        j = json::parse(in, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw Error(Stage::config, std::string("config parse error: ") + e.what());
    }
    return config_from_json(j);
}

inline std::string sha256_hex(const std::string& data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw Error(Stage::io, "sha256 failed");
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    return os.str();
}

/// Hash of the fully defaulted configuration, excluding the output directory.
inline std::string config_hash(const ScenarioConfig& c) {
    json j = config_to_json(c);
    j["run"].erase("output_dir");
    return sha256_hex(j.dump()).substr(0, 16);
}

inline void ScenarioConfig::validate() const {
    auto fail = [](const std::string& m) { throw Error(Stage::config, m); };
    if (!(protocol.states == 4 || protocol.states == 8 || protocol.states == 12)) fail("protocol.states must be 4, 8 or 12");
    if (!(protocol.modulation_variance > 0.0)) fail("protocol.modulation_variance must be positive");
    if (protocol.sideband_suppression_db < 0.0) fail("protocol.sideband_suppression_db must be >= 0");
    if (tx.samples_per_symbol < 2) fail("tx.samples_per_symbol must be >= 2");
    if (!(tx.roll_off > 0.0 && tx.roll_off <= 1.0)) fail("tx.roll_off must be in (0, 1]");
    if (channel.phase_model != "wiener" && channel.phase_model != "integrated_ou")
        fail("channel.phase_model must be 'wiener' or 'integrated_ou'");
    if (channel.epsilon_snu < 0.0) fail("channel.epsilon_snu must be >= 0");
    if (channel.transmittance > 1.0) fail("channel.transmittance must be <= 1");
    if (!(detector.efficiency > 0.0 && detector.efficiency <= 1.0)) fail("detector.efficiency must be in (0, 1]");
    if (detector.electronic_noise_snu < 0.0) fail("detector.electronic_noise_snu must be >= 0");
    if (!(estimation.disclosed_fraction > 0.0 && estimation.disclosed_fraction <= 1.0))
        fail("estimation.disclosed_fraction must be in (0, 1]");
    if (!(keyrate.beta >= 0.0 && keyrate.beta <= 1.0)) fail("keyrate.beta must be in [0, 1]");
    if (keyrate.cutoff < 2) fail("keyrate.cutoff must be >= 2");
    if (run.symbols <= 0 || run.chunk_symbols <= 0 || run.frames <= 0) fail("run sizes must be positive");
    if (rx.calibration_factor <= 0.0) fail("rx.calibration_factor must be positive");
}

}  // namespace cvqkd::harness
