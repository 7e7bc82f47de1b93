#pragma once

// JSON and CSV serialization of estimates, key-rate results and run reports, with atomic writes.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "json.hpp"

#include "cvqkd/harness/config.hpp"
#include "cvqkd/harness/frame_io.hpp"
#include "cvqkd/harness/pipeline.hpp"

namespace cvqkd::harness {

inline std::string base64_encode(const std::string& raw) {
    std::string out(4 * ((raw.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                  reinterpret_cast<const unsigned char*>(raw.data()), static_cast<int>(raw.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

inline std::string base64_decode(const std::string& text) {
    if (text.size() % 4 != 0) throw Error(Stage::io, "base64 length is not a multiple of 4");
    std::string out(3 * text.size() / 4, '\0');
    const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                  reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
    if (n < 0) throw Error(Stage::io, "invalid base64");
    std::size_t pad = 0;
    if (!text.empty() && text.back() == '=') ++pad;
    if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
    out.resize(static_cast<std::size_t>(n) - pad);
    return out;
}

/// Complex matrix as {rows, cols, data}: base64 of row-major little-endian (re, im) doubles.
inline json matrix_to_json(const CMatrix& m) {
    std::string raw;
    raw.reserve(static_cast<std::size_t>(m.size()) * 16);
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            bytes::put_f64(raw, m(r, c).real());
            bytes::put_f64(raw, m(r, c).imag());
        }
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", base64_encode(raw)}};
}

inline CMatrix matrix_from_json(const json& j) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const std::string raw = base64_decode(j.at("data").get<std::string>());
    if (raw.size() != static_cast<std::size_t>(rows * cols) * 16) throw Error(Stage::io, "matrix payload size mismatch");
    CMatrix m(rows, cols);
    bytes::Reader rd(raw);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) {
            const double re = rd.f64();
            m(r, c) = {re, rd.f64()};
        }
    return m;
}

inline json to_json(const estimation::ChannelEstimate& e) {
    return {{"transmittance", e.transmittance},
            {"excess_noise", e.excess_noise},
            {"modulation_variance", e.modulation_variance},
            {"efficiency", e.efficiency},
            {"electronic_noise", e.electronic_noise},
            {"negative_excess_noise", e.negative_excess_noise}};
}

inline estimation::ChannelEstimate estimate_from_json(const json& j) {
    estimation::ChannelEstimate e;
    try {
        e.transmittance = j.at("transmittance").get<double>();
        e.excess_noise = j.at("excess_noise").get<double>();
        e.modulation_variance = j.at("modulation_variance").get<double>();
        e.efficiency = j.at("efficiency").get<double>();
        e.electronic_noise = j.at("electronic_noise").get<double>();
    } catch (const json::exception& ex) {
        throw Error(Stage::config, std::string("bad channel estimate: ") + ex.what());
    }
    e.negative_excess_noise = e.excess_noise < 0.0;
    return e;
}

inline json to_json(const estimation::MomentStats& m) {
    json states = json::array();
    for (std::size_t k = 0; k < m.states.size(); ++k) {
        const auto& s = m.states[k];
        states.push_back({{"state", k},
                          {"mean_x", s.mean_x},
                          {"mean_p", s.mean_p},
                          {"second_x", s.second_x},
                          {"second_p", s.second_p},
                          {"count", s.count}});
    }
    return {{"states", states},
            {"cross_x", m.cross_x},
            {"cross_p", m.cross_p},
            {"alice_second_x", m.alice_second_x},
            {"alice_second_p", m.alice_second_p},
            {"bob_second_x", m.bob_second_x},
            {"bob_second_p", m.bob_second_p},
            {"total", m.total}};
}

inline json to_json(const protocol::EcAccounting& ec) {
    return {{"efficiency", ec.efficiency},
            {"entropy_z", ec.entropy_z},
            {"conditional_entropy", ec.conditional_entropy},
            {"mutual_information", ec.mutual_information},
            {"leakage", ec.leakage},
            {"pass_probability", ec.pass_probability}};
}

inline json to_json(const keyrate::KeyRateResult& r) {
    return {{"primal_bits", r.primal},
            {"lower_bound_bits", r.lower_bound},
            {"gap_bits", r.gap},
            {"leakage_bits", r.leakage},
            {"ec", to_json(r.ec)},
            {"bits_per_symbol", r.bits_per_symbol},
            {"bits_per_second", r.bits_per_second},
            {"no_key", r.no_key},
            {"iterations", r.iterations},
            {"converged", r.converged},
            {"stalled", r.stalled},
            {"cutoff", r.cutoff},
            {"cutoff_delta", r.cutoff_delta}};
}

inline json to_json(const keyrate::KeyRateProblem& p) {
    json alphas = json::array();
    for (auto a : p.alphas) alphas.push_back({a.real(), a.imag()});
    json constraints = json::array();
    for (const auto& c : p.constraints.constraints) {
        json terms = json::array();
        for (const auto& t : c.terms) terms.push_back({{"row", t.row}, {"col", t.col}, {"block", matrix_to_json(t.block)}});
        constraints.push_back({{"target", c.target}, {"terms", terms}});
    }
    return {{"states", p.states},
            {"cutoff", p.cutoff},
            {"alphas", alphas},
            {"probabilities", p.probabilities},
            {"transmittance", p.transmittance},
            {"output_excess", p.output_excess},
            {"efficiency", p.efficiency},
            {"electronic_noise", p.electronic_noise},
            {"trusted_detector", p.trusted_detector},
            {"gram", matrix_to_json(p.gram)},
            {"constraints", constraints}};
}

inline json summarize(const std::vector<ChunkDiagnostics>& chunks) {
    double max_ferr = 0.0, max_dac = 0.0, max_adc = 0.0, evm = 0.0;
    int ambiguous = 0;
    json lags = json::array();
    for (const auto& c : chunks) {
        max_ferr = std::max(max_ferr, std::abs(c.frequency_error));
        max_dac = std::max(max_dac, c.dac_clipping);
        max_adc = std::max(max_adc, c.adc_overload);
        evm += c.evm;
        ambiguous += c.phase_ambiguity ? 1 : 0;
        lags.push_back(c.lag);
    }
    return {{"records", chunks.size()},
            {"max_abs_frequency_error_hz", max_ferr},
            {"phase_ambiguity_records", ambiguous},
            {"max_dac_clipping", max_dac},
            {"max_adc_overload", max_adc},
            {"mean_evm", chunks.empty() ? 0.0 : evm / static_cast<double>(chunks.size())},
            {"lags", lags}};
}

/// Report JSON. Timing lives under "timing" so the remaining fields are byte-identical across
/// reruns with the same configuration.
inline json to_json(const RunReport& r, const ScenarioConfig& cfg) {
    json frames = json::array();
    for (std::size_t f = 0; f < r.frames.size(); ++f) {
        const auto& fr = r.frames[f];
        frames.push_back({{"frame", f},
                          {"symbols", fr.symbols},
                          {"estimate", to_json(fr.estimate)},
                          {"diagnostics", summarize(fr.chunks)}});
    }
    json j;
    j["config_hash"] = r.config_hash;
    j["name"] = r.name;
    j["seed"] = cfg.run.seed;
    j["config"] = config_to_json(cfg);
    j["calibration"] = {{"snu_scale", r.calibration.snu_scale},
                        {"electronic_noise", r.calibration.electronic_noise},
                        {"symbols", r.calibration.symbols}};
    j["estimate"] = to_json(r.estimate);
    j["moments"] = to_json(r.moments);
    j["excess_noise_series"] = r.excess_noise_series;
    j["frames"] = frames;
    j["key_rate"] = r.key_rate ? to_json(*r.key_rate) : json(nullptr);
    j["timing"] = {{"simulation_s", r.seconds_simulation}, {"key_rate_s", r.seconds_key_rate}};
    return j;
}

inline std::string csv_number(double v) {
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
}

inline std::string moments_csv(const estimation::MomentStats& m, const std::string& hash) {
    std::ostringstream os;
    os << "# config_hash=" << hash << "\n";
    os << "state,mean_x,mean_p,second_x,second_p,count\n";
    for (std::size_t k = 0; k < m.states.size(); ++k) {
        const auto& s = m.states[k];
        os << k << ',' << csv_number(s.mean_x) << ',' << csv_number(s.mean_p) << ',' << csv_number(s.second_x) << ','
           << csv_number(s.second_p) << ',' << s.count << "\n";
    }
    return os.str();
}

inline std::string excess_noise_csv(const RunReport& r) {
    std::ostringstream os;
    os << "# config_hash=" << r.config_hash << "\n";
    os << "frame,transmittance,excess_noise\n";
    for (std::size_t f = 0; f < r.frames.size(); ++f)
        os << f << ',' << csv_number(r.frames[f].estimate.transmittance) << ','
           << csv_number(r.frames[f].estimate.excess_noise) << "\n";
    return os.str();
}

/// Writes report.json, moments.csv and excess_noise.csv under `dir`.
inline void write_report(const RunReport& r, const ScenarioConfig& cfg, const std::filesystem::path& dir) {
    write_atomic(dir / "report.json", to_json(r, cfg).dump(2) + "\n");
    write_atomic(dir / "moments.csv", moments_csv(r.moments, r.config_hash));
    write_atomic(dir / "excess_noise.csv", excess_noise_csv(r));
}

}  // namespace cvqkd::harness
