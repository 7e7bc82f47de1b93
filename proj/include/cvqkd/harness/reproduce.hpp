#pragma once

// Reproduction targets: the two-row key-rate table, the 8x4 moment table, the rate-vs-distance
// comparison of M-PSK protocols, and the system key-rate curve with its two operating points.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/tools/minima.hpp>

#include "cvqkd/harness/report.hpp"

namespace cvqkd::harness {

namespace paper {

struct Table1Row {
    double distance_km;
    double modulation_variance;
    double excess_noise;
    double transmittance;
    double key_rate_mbps;
};

inline constexpr std::array<Table1Row, 2> kTable1 = {{{25.8, 1.19, 0.028, 0.34, 31.05}, {50.4, 1.22, 0.033, 0.11, 5.05}}};

/// Per state: <x_B>, <p_B>, <x_B^2>, <p_B^2>.
inline constexpr std::array<std::array<double, 4>, 8> kTable2 = {{
    {0.3859, 3.62e-4, 1.3507, 1.2020},
    {0.2737, 0.2741, 1.2769, 1.2757},
    {-8.76e-4, 0.3872, 1.2019, 1.3509},
    {-0.2744, 0.2739, 1.2756, 1.2756},
    {-0.3876, -5.87e-4, 1.3518, 1.2012},
    {-0.2745, -0.2735, 1.2757, 1.2761},
    {-6.26e-4, -0.3877, 1.2008, 1.3517},
    {0.2731, -0.2741, 1.2759, 1.2760},
}};

inline constexpr double kSymbolRate = 1.5625e9;
inline constexpr double kFig3ExcessNoise = 0.031;
inline constexpr double kRatioAt25km = 2.32;
inline constexpr std::array<long, 2> kFrameSymbols = {80000000, 128000000};

}  // namespace paper

inline const char* kQuantityNames[4] = {"mean_x", "mean_p", "second_x", "second_p"};

struct ReproduceOptions {
    std::filesystem::path config_dir = "configs";
    std::filesystem::path out_dir = "out";
    std::optional<std::uint64_t> seed;
    bool paper_scale = false;
    std::vector<int> states = {4, 8, 12};
    std::vector<double> distances_km;  // empty: 0..60 km in 5 km steps
    bool optimize_each_point = false;
    std::ostream* log = nullptr;
};

inline ScenarioConfig bundled_config(const ReproduceOptions& o, const std::string& name) {
    ScenarioConfig cfg = load_config((o.config_dir / (name + ".cfg")).string());
    if (o.seed) cfg.run.seed = *o.seed;
    cfg.run.output_dir = o.out_dir.string();
    return cfg;
}

inline void note(const ReproduceOptions& o, const std::string& msg) {
    if (o.log) *o.log << msg << std::endl;
}

// ---------------------------------------------------------------------------------------------
// theory curves

struct TheoryParams {
    double excess_noise = paper::kFig3ExcessNoise;
    double efficiency = 0.37;
    double electronic_noise = 0.20;
    double beta = 0.95;
    double att_db_per_km = 0.2;
    double symbol_rate = paper::kSymbolRate;
    double sideband_fraction = 1.0;
    int cutoff = 10;
    double gap_tolerance = 1e-5;
    double search_gap_tolerance = 1e-4;
    double va_low = 0.2;
    double va_high = 3.0;
    int max_search_evaluations = 12;
};

inline double fiber_transmittance(double km, double db_per_km) { return std::pow(10.0, -db_per_km * km / 10.0); }

/// Least-squares attenuation (dB/km, through the origin) matching the two table transmittances.
inline double table1_attenuation() {
    double la = 0.0, ll = 0.0;
    for (const auto& r : paper::kTable1) {
        la += r.distance_km * -10.0 * std::log10(r.transmittance);
        ll += r.distance_km * r.distance_km;
    }
    return la / ll;
}

inline keyrate::KeyRateResult theory_key_rate(int m, double t, double va, const TheoryParams& p, double gap) {
    KeyRateRequest req;
    req.constellation = protocol::build_constellation(m, va);
    req.estimate.transmittance = t;
    req.estimate.excess_noise = p.excess_noise;
    req.estimate.modulation_variance = va;
    req.estimate.efficiency = p.efficiency;
    req.estimate.electronic_noise = p.electronic_noise;
    req.sideband_fraction = p.sideband_fraction;
    req.beta = p.beta;
    req.symbol_rate = p.symbol_rate;
    req.cutoff = p.cutoff;
    req.fw.gap_tolerance = gap;
    return compute_key_rate(req);
}

struct OptimizedRate {
    double modulation_variance = 0.0;
    keyrate::KeyRateResult result;
    int evaluations = 0;
};

/// Maximizes K over V_A by Brent's method at a loose gap, then solves once at full tolerance.
inline OptimizedRate optimize_modulation_variance(int m, double t, const TheoryParams& p) {
    OptimizedRate o;
    auto f = [&](double va) {
        ++o.evaluations;
        return -theory_key_rate(m, t, va, p, p.search_gap_tolerance).bits_per_symbol;
    };
    std::uintmax_t iters = static_cast<std::uintmax_t>(p.max_search_evaluations);
    const auto best = boost::math::tools::brent_find_minima(f, p.va_low, p.va_high, 12, iters);
    o.modulation_variance = best.first;
    o.result = theory_key_rate(m, t, o.modulation_variance, p, p.gap_tolerance);
    return o;
}

// ---------------------------------------------------------------------------------------------
// table2

struct Table2Entry {
    int state = 0;
    int quantity = 0;
    double paper = 0.0;
    double forward = 0.0;
    double simulated = std::numeric_limits<double>::quiet_NaN();
    double sigma = std::numeric_limits<double>::quiet_NaN();
};

inline double quantity(const estimation::StateMoments& s, int q) {
    switch (q) {
        case 0: return s.mean_x;
        case 1: return s.mean_p;
        case 2: return s.second_x;
        default: return s.second_p;
    }
}

/// Standard error of one sample moment of a Gaussian quadrature with mean mu and variance v.
inline double moment_sigma(double mu, double v, bool second, double n) {
    if (n <= 0.0) return std::numeric_limits<double>::quiet_NaN();
    return second ? std::sqrt((2.0 * v * v + 4.0 * mu * mu * v) / n) : std::sqrt(v / n);
}

inline std::vector<Table2Entry> table2_forward(const ScenarioConfig& cfg) {
    const auto c = protocol::build_constellation(cfg.protocol.states, cfg.protocol.modulation_variance);
    const auto fm = estimation::forward_moments(c, {cfg.channel.transmittance, cfg.channel.epsilon_snu,
                                                    cfg.detector.efficiency, cfg.detector.electronic_noise_snu});
    std::vector<Table2Entry> out;
    for (int k = 0; k < 8; ++k)
        for (int q = 0; q < 4; ++q) out.push_back({k, q, paper::kTable2[k][q], quantity(fm.states[k], q)});
    return out;
}

inline void attach_simulated(std::vector<Table2Entry>& rows, const estimation::MomentStats& sim) {
    for (auto& r : rows) {
        const auto& s = sim.states[r.state];
        r.simulated = quantity(s, r.quantity);
        const bool second = r.quantity >= 2;
        const double mu = r.quantity % 2 == 0 ? s.mean_x : s.mean_p;
        const double v = (r.quantity % 2 == 0 ? s.second_x : s.second_p) - mu * mu;
        r.sigma = moment_sigma(mu, v, second, static_cast<double>(s.count));
    }
}

inline std::string table2_csv(const std::vector<Table2Entry>& rows, const std::string& hash) {
    std::ostringstream os;
    os.precision(8);
    os << "# config_hash=" << hash << "\n";
    os << "state,quantity,paper,forward,delta_forward,simulated,sigma,z\n";
    for (const auto& r : rows) {
        os << r.state << ',' << kQuantityNames[r.quantity] << ',' << r.paper << ',' << r.forward << ','
           << r.forward - r.paper << ',';
        if (std::isnan(r.simulated))
            os << ",,\n";
        else
            os << r.simulated << ',' << r.sigma << ',' << (r.simulated - r.forward) / r.sigma << "\n";
    }
    return os.str();
}

struct Table2Summary {
    double max_forward_delta = 0.0;
    double max_first_moment_delta = 0.0;  // simulated vs paper
    double max_abs_z = 0.0;
    bool forward_ok = false;
    bool simulated_ok = false;
};

inline Table2Summary summarize_table2(const std::vector<Table2Entry>& rows) {
    Table2Summary s;
    for (const auto& r : rows) {
        s.max_forward_delta = std::max(s.max_forward_delta, std::abs(r.forward - r.paper));
        if (!std::isnan(r.simulated)) {
            s.max_abs_z = std::max(s.max_abs_z, std::abs(r.simulated - r.forward) / r.sigma);
            if (r.quantity < 2) s.max_first_moment_delta = std::max(s.max_first_moment_delta, std::abs(r.simulated - r.paper));
        }
    }
    s.forward_ok = s.max_forward_delta <= 0.006;
    s.simulated_ok = s.max_abs_z <= 3.0;
    return s;
}

// ---------------------------------------------------------------------------------------------
// targets

struct TargetResult {
    json summary;
    bool pass = true;
};

inline TargetResult reproduce_table2(const ReproduceOptions& o) {
    ScenarioConfig cfg = bundled_config(o, "table2");
    if (o.paper_scale) cfg.run.symbols = paper::kFrameSymbols[0];
    const std::string hash = config_hash(cfg);
    auto rows = table2_forward(cfg);
    note(o, "table2: simulating " + std::to_string(cfg.run.symbols) + " symbols");
    const RunReport rep = run_scenario(cfg, false);
    attach_simulated(rows, rep.moments);
    const auto s = summarize_table2(rows);
    write_atomic(o.out_dir / "table2.csv", table2_csv(rows, hash));
    write_report(rep, cfg, o.out_dir / "table2_run");
    TargetResult t;
    t.summary = {{"target", "table2"},
                 {"config_hash", hash},
                 {"max_abs_forward_minus_paper", s.max_forward_delta},
                 {"max_abs_first_moment_simulated_minus_paper", s.max_first_moment_delta},
                 {"max_abs_z_simulated_vs_forward", s.max_abs_z},
                 {"forward_within_0.006", s.forward_ok},
                 {"simulated_within_3_sigma", s.simulated_ok}};
    t.pass = s.forward_ok && s.simulated_ok;
    return t;
}

struct Table1Result {
    std::array<ScenarioConfig, 2> configs;
    std::array<std::string, 2> hashes;
    std::array<double, 2> parameter_mbps{};
    std::array<double, 2> simulated_mbps{};
    std::array<estimation::ChannelEstimate, 2> estimates;
};

inline json to_json(const Table1Result& r) {
    json rows = json::array();
    for (int i = 0; i < 2; ++i)
        rows.push_back({{"distance_km", paper::kTable1[i].distance_km},
                        {"config_hash", r.hashes[i]},
                        {"paper_mbps", paper::kTable1[i].key_rate_mbps},
                        {"parameter_mbps", r.parameter_mbps[i]},
                        {"simulated_mbps", r.simulated_mbps[i]},
                        {"transmittance_hat", r.estimates[i].transmittance},
                        {"excess_noise_hat", r.estimates[i].excess_noise}});
    return {{"target", "table1"}, {"rows", rows}};
}

inline Table1Result run_table1(const ReproduceOptions& o) {
    Table1Result r;
    for (int i = 0; i < 2; ++i) {
        ScenarioConfig cfg = bundled_config(o, i == 0 ? "table1_row1" : "table1_row2");
        if (o.paper_scale) cfg.run.symbols = paper::kFrameSymbols[i];
        r.configs[i] = cfg;
        r.hashes[i] = config_hash(cfg);
        const Setup s = make_setup(cfg);
        KeyRateRequest req;
        req.constellation = s.constellation;
        req.estimate = {cfg.channel.transmittance, cfg.channel.epsilon_snu, cfg.protocol.modulation_variance,
                        cfg.detector.efficiency, cfg.detector.electronic_noise_snu, false};
        req.sideband_fraction = s.sideband_fraction;
        req.beta = cfg.keyrate.beta;
        req.symbol_rate = cfg.tx.symbol_rate_hz;
        req.cutoff = cfg.keyrate.cutoff;
        req.fw.gap_tolerance = cfg.keyrate.gap_tolerance;
        req.fw.max_iterations = cfg.keyrate.max_iterations;
        note(o, "table1: parameter-level key rate, row " + std::to_string(i + 1));
        r.parameter_mbps[i] = compute_key_rate(req).bits_per_second / 1e6;
        note(o, "table1: simulated run, row " + std::to_string(i + 1));
        const RunReport rep = run_scenario(cfg, true);
        write_report(rep, cfg, o.out_dir / (i == 0 ? "table1_row1" : "table1_row2"));
        r.simulated_mbps[i] = rep.key_rate ? rep.key_rate->bits_per_second / 1e6 : 0.0;
        r.estimates[i] = rep.estimate;
    }
    return r;
}

inline TargetResult reproduce_table1(const ReproduceOptions& o) {
    const Table1Result r = run_table1(o);
    std::ostringstream os;
    os.precision(6);
    os << "# config_hash=" << r.hashes[0] << "," << r.hashes[1] << "\n";
    os << "distance_km,paper_mbps,parameter_mbps,simulated_mbps,transmittance_hat,excess_noise_hat\n";
    TargetResult t;
    for (int i = 0; i < 2; ++i) {
        os << paper::kTable1[i].distance_km << ',' << paper::kTable1[i].key_rate_mbps << ',' << r.parameter_mbps[i] << ','
           << r.simulated_mbps[i] << ',' << r.estimates[i].transmittance << ',' << r.estimates[i].excess_noise << "\n";
        if (std::abs(r.parameter_mbps[i] / paper::kTable1[i].key_rate_mbps - 1.0) > 0.2) t.pass = false;
    }
    write_atomic(o.out_dir / "table1.csv", os.str());
    t.summary = to_json(r);
    write_atomic(o.out_dir / "table1.json", t.summary.dump(2) + "\n");
    return t;
}

inline std::vector<double> fig3_distances(const ReproduceOptions& o) {
    if (!o.distances_km.empty()) return o.distances_km;
    std::vector<double> d;
    for (int km = 0; km <= 60; km += 5) d.push_back(km);
    return d;
}

inline TargetResult reproduce_fig3(const ReproduceOptions& o) {
    TheoryParams p;
    const auto distances = fig3_distances(o);
    json rows = json::array();
    std::ostringstream os;
    os.precision(8);
    os << "states,distance_km,transmittance,modulation_variance,bits_per_symbol,mbps\n";
    std::map<int, std::vector<double>> rates;
    for (int m : o.states) {
        std::optional<double> shared_va;
        if (!o.optimize_each_point) {
            note(o, "fig3: optimizing V_A for " + std::to_string(m) + "-PSK at 25 km");
            shared_va = optimize_modulation_variance(m, fiber_transmittance(25.0, p.att_db_per_km), p).modulation_variance;
        }
        for (double km : distances) {
            const double t = fiber_transmittance(km, p.att_db_per_km);
            double va;
            keyrate::KeyRateResult k;
            if (shared_va) {
                va = *shared_va;
                k = theory_key_rate(m, t, va, p, p.gap_tolerance);
            } else {
                const auto best = optimize_modulation_variance(m, t, p);
                va = best.modulation_variance;
                k = best.result;
            }
            note(o, "fig3: " + std::to_string(m) + "-PSK " + std::to_string(km) + " km -> " +
                        std::to_string(k.bits_per_second / 1e6) + " Mbps");
            os << m << ',' << km << ',' << t << ',' << va << ',' << k.bits_per_symbol << ',' << k.bits_per_second / 1e6
               << "\n";
            rows.push_back({{"states", m}, {"distance_km", km}, {"modulation_variance", va}, {"mbps", k.bits_per_second / 1e6}});
            rates[m].push_back(k.bits_per_second);
        }
    }
    TargetResult t;
    bool monotone = true;
    for (const auto& [m, r] : rates)
        for (std::size_t i = 1; i < r.size(); ++i)
            if (distances[i] > distances[i - 1] && r[i] > 0.0 && !(r[i] < r[i - 1])) monotone = false;
    t.summary = {{"target", "fig3"}, {"points", rows}, {"monotone_in_distance", monotone}};
    const auto at25 = std::find(distances.begin(), distances.end(), 25.0);
    if (rates.count(4) && rates.count(8) && at25 != distances.end()) {
        const std::size_t i = static_cast<std::size_t>(at25 - distances.begin());
        const double ratio = rates[8][i] / rates[4][i];
        t.summary["ratio_8psk_over_4psk_at_25km"] = ratio;
        t.summary["paper_ratio"] = paper::kRatioAt25km;
        if (ratio < 2.0) t.pass = false;
    }
    if (!monotone) t.pass = false;
    write_atomic(o.out_dir / "fig3.csv", os.str());
    write_atomic(o.out_dir / "fig3.json", t.summary.dump(2) + "\n");
    return t;
}

/// Loads an earlier table1.json from the output directory when its hashes match the current
/// configs; a mismatch is refused rather than silently recomputed.
inline std::optional<json> matching_table1(const ReproduceOptions& o) {
    const auto path = o.out_dir / "table1.json";
    if (!std::filesystem::exists(path)) return std::nullopt;
    const json j = json::parse(read_file(path));
    for (int i = 0; i < 2; ++i) {
        ScenarioConfig cfg = bundled_config(o, i == 0 ? "table1_row1" : "table1_row2");
        if (o.paper_scale) cfg.run.symbols = paper::kFrameSymbols[i];
        const std::string have = j.at("rows").at(i).at("config_hash").get<std::string>();
        if (have != config_hash(cfg))
            throw Error(Stage::io, "refusing to compare: " + path.string() + " has config hash " + have +
                                       " but the current configuration hashes to " + config_hash(cfg));
    }
    return j;
}

inline TargetResult reproduce_fig10(const ReproduceOptions& o) {
    std::optional<json> t1 = matching_table1(o);
    if (!t1) t1 = reproduce_table1(o).summary;
    TheoryParams p;
    p.excess_noise = 0.5 * (paper::kTable1[0].excess_noise + paper::kTable1[1].excess_noise);
    const double va = 0.5 * (paper::kTable1[0].modulation_variance + paper::kTable1[1].modulation_variance);
    p.sideband_fraction = protocol::sideband_model(19.4).amplitude_fraction;
    p.att_db_per_km = table1_attenuation();
    std::ostringstream os;
    os.precision(8);
    os << "kind,distance_km,transmittance,mbps\n";
    json curve = json::array();
    for (double km : fig3_distances(o)) {
        const double t = fiber_transmittance(km, p.att_db_per_km);
        const auto k = theory_key_rate(8, t, va, p, p.gap_tolerance);
        note(o, "fig10: theory " + std::to_string(km) + " km -> " + std::to_string(k.bits_per_second / 1e6) + " Mbps");
        os << "theory," << km << ',' << t << ',' << k.bits_per_second / 1e6 << "\n";
        curve.push_back({{"distance_km", km}, {"mbps", k.bits_per_second / 1e6}});
    }
    json points = json::array();
    for (std::size_t i = 0; i < 2; ++i) {
        const json& row = t1->at("rows").at(i);
        const double km = paper::kTable1[i].distance_km;
        const double t = paper::kTable1[i].transmittance;
        os << "simulated," << km << ',' << t << ',' << row.at("simulated_mbps").get<double>() << "\n";
        os << "paper," << km << ',' << t << ',' << row.at("paper_mbps").get<double>() << "\n";
        points.push_back(row);
    }
    TargetResult r;
    r.summary = {{"target", "fig10"},
                 {"modulation_variance", va},
                 {"excess_noise", p.excess_noise},
                 {"attenuation_db_per_km", p.att_db_per_km},
                 {"curve", curve},
                 {"points", points}};
    write_atomic(o.out_dir / "fig10.csv", os.str());
    write_atomic(o.out_dir / "fig10.json", r.summary.dump(2) + "\n");
    return r;
}

inline TargetResult reproduce(const std::string& target, const ReproduceOptions& o) {
    if (target == "table1") return reproduce_table1(o);
    if (target == "table2") return reproduce_table2(o);
    if (target == "fig3") return reproduce_fig3(o);
    if (target == "fig10") return reproduce_fig10(o);
    throw Error(Stage::config, "unknown reproduce target '" + target + "' (table1, table2, fig3, fig10)");
}

}  // namespace cvqkd::harness
