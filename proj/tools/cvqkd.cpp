// Command-line front end: simulate, estimate, keyrate, reproduce.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "cvqkd/harness/reproduce.hpp"

#ifndef CVQKD_CONFIG_DIR
#define CVQKD_CONFIG_DIR "configs"
#endif

using namespace cvqkd;
using namespace cvqkd::harness;

namespace {

enum Exit { ok = 0, config_error = 2, stage_failure = 3, acceptance_miss = 4 };

struct Common {
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    bool paper_scale = false;
    std::string config;
};

ScenarioConfig scenario(const Common& c) {
    ScenarioConfig cfg = c.config.empty() ? ScenarioConfig{} : load_config(c.config);
    if (c.seed) cfg.run.seed = *c.seed;
    if (!c.out_dir.empty()) cfg.run.output_dir = c.out_dir;
    return cfg;
}

std::filesystem::path out_dir(const Common& c, const ScenarioConfig& cfg) {
    return c.out_dir.empty() ? std::filesystem::path(cfg.run.output_dir) : std::filesystem::path(c.out_dir);
}

MeasuredFrame read_frame_csv(const std::filesystem::path& path) {
    std::istringstream in(read_file(path));
    MeasuredFrame m;
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#' || line.rfind("k,", 0) == 0) continue;
        int k;
        double x, p;
        char c1, c2;
        std::istringstream ls(line);
        if (!(ls >> k >> c1 >> x >> c2 >> p) || c1 != ',' || c2 != ',')
            throw Error(Stage::io, path.string() + ":" + std::to_string(lineno) + ": expected k,x_B,p_B");
        m.samples.emplace_back(x, p);
        m.indices.push_back(k);
        m.phase_trace.push_back(0.0);
    }
    return m;
}

MeasuredFrame read_any_frame(const std::filesystem::path& path) {
    return path.extension() == ".csv" ? read_frame_csv(path) : read_measured(path);
}

int run_simulate(const Common& c, const std::string& cfg_path, bool save_frames) {
    Common cc = c;
    cc.config = cfg_path;
    ScenarioConfig cfg = scenario(cc);
    if (c.paper_scale) cfg.run.symbols = cfg.channel.length_km > 40.0 ? paper::kFrameSymbols[1] : paper::kFrameSymbols[0];
    const auto dir = out_dir(c, cfg);
    FrameSink sink;
    if (save_frames)
        sink = [&](std::uint64_t f, std::uint64_t ch, const MeasuredFrame& m) {
            write_measured(dir / "frames" / ("frame" + std::to_string(f) + "_chunk" + std::to_string(ch) + ".cvqf"), m);
        };
    const RunReport rep = run_scenario(cfg, true, sink);
    write_report(rep, cfg, dir);
    std::cout << "config_hash " << rep.config_hash << "\n";
    std::cout << "T_hat " << rep.estimate.transmittance << "  eps_hat " << rep.estimate.excess_noise << " SNU\n";
    if (rep.key_rate)
        std::cout << "K " << rep.key_rate->bits_per_second / 1e6 << " Mbps (" << rep.key_rate->bits_per_symbol
                  << " bits/symbol)\n";
    std::cout << "report written to " << (dir / "report.json").string() << "\n";
    return ok;
}

int run_estimate(const Common& c, const std::vector<std::string>& frames) {
    const ScenarioConfig cfg = scenario(c);
    const auto constellation = protocol::build_constellation(cfg.protocol.states, cfg.protocol.modulation_variance);
    estimation::MomentAccumulator acc(constellation);
    for (const auto& path : frames) {
        const MeasuredFrame m = read_any_frame(path);
        for (std::size_t i = 0; i < m.samples.size(); ++i) {
            if (m.indices[i] < 0 || m.indices[i] >= constellation.states)
                throw Error(Stage::estimation, path + ": state index out of range");
            acc.add(m.samples[i], m.indices[i]);
        }
    }
    const auto stats = acc.stats(true);
    const auto est = estimation::estimate_channel(stats, cfg.detector.efficiency, cfg.detector.electronic_noise_snu,
                                                  cfg.protocol.modulation_variance);
    json j = to_json(est);
    j["config_hash"] = config_hash(cfg);
    j["moments"] = to_json(stats);
    write_atomic(out_dir(c, cfg) / "estimate.json", j.dump(2) + "\n");
    std::cout << to_json(est).dump(2) << "\n";
    return ok;
}

int run_keyrate(const Common& c, const std::string& estimate_path, bool check_cutoff, const std::string& problem_out) {
    const ScenarioConfig cfg = scenario(c);
    json j;
    try {
        j = json::parse(read_file(estimate_path));
    } catch (const json::parse_error& e) {
        throw Error(Stage::config, std::string("estimate parse error: ") + e.what());
    }
    const auto est = estimate_from_json(j.contains("estimate") ? j.at("estimate") : j);
    const Setup s = make_setup(cfg);
    KeyRateRequest req;
    req.constellation = protocol::build_constellation(cfg.protocol.states, est.modulation_variance);
    req.estimate = est;
    req.sideband_fraction = s.sideband_fraction;
    req.beta = cfg.keyrate.beta;
    req.symbol_rate = cfg.tx.symbol_rate_hz;
    req.cutoff = cfg.keyrate.cutoff;
    req.trusted_detector = cfg.keyrate.trusted_detector;
    req.check_cutoff = check_cutoff || cfg.keyrate.check_cutoff;
    req.fw.gap_tolerance = cfg.keyrate.gap_tolerance;
    req.fw.max_iterations = cfg.keyrate.max_iterations;
    if (!problem_out.empty()) {
        keyrate::ProblemOptions po;
        po.cutoff = req.cutoff;
        po.trusted_detector = req.trusted_detector;
        po.sideband_fraction = req.sideband_fraction;
        write_atomic(problem_out, to_json(keyrate::build_problem(req.constellation, handoff(est), po)).dump() + "\n");
    }
    const auto r = compute_key_rate(req);
    json out = to_json(r);
    out["config_hash"] = config_hash(cfg);
    write_atomic(out_dir(c, cfg) / "key_rate.json", out.dump(2) + "\n");
    std::cout << out.dump(2) << "\n";
    return ok;
}

int run_reproduce(const Common& c, const std::string& target, const std::string& config_dir,
                  const std::vector<int>& states, const std::vector<double>& distances) {
    ReproduceOptions o;
    o.config_dir = config_dir;
    o.out_dir = c.out_dir.empty() ? std::filesystem::path("out") : std::filesystem::path(c.out_dir);
    o.seed = c.seed;
    o.paper_scale = c.paper_scale;
    o.optimize_each_point = c.paper_scale;
    if (!states.empty()) o.states = states;
    o.distances_km = distances;
    o.log = &std::cerr;
    const TargetResult r = reproduce(target, o);
    std::cout << r.summary.dump(2) << "\n";
    std::cout << target << (r.pass ? ": within acceptance" : ": ACCEPTANCE MISS") << "\n";
    return r.pass ? ok : acceptance_miss;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"M-PSK CV-QKD simulator and key-rate toolkit"};
    app.require_subcommand(1);
    app.fallthrough();
    Common common;
    app.add_option("--seed", common.seed, "Override the run seed");
    app.add_option("--out-dir", common.out_dir, "Output directory");
    app.add_flag("--paper-scale", common.paper_scale, "Use the full frame sizes instead of desk-scale runs");

    auto* sim = app.add_subcommand("simulate", "Run a scenario end to end");
    std::string cfg_path;
    bool save_frames = false;
    sim->add_option("config", cfg_path, "Scenario config (JSON)")->required()->check(CLI::ExistingFile);
    sim->add_flag("--save-frames", save_frames, "Write every measured chunk as a frame file");

    auto* est = app.add_subcommand("estimate", "Estimate T and eps from measured frame files (.cvqf or .csv)");
    std::vector<std::string> frames;
    est->add_option("frames", frames, "Frame files")->required()->check(CLI::ExistingFile);
    est->add_option("--config", common.config, "Scenario config supplying V_A, eta and v_el");

    auto* kr = app.add_subcommand("keyrate", "Asymptotic key rate from a channel estimate");
    std::string estimate_path, problem_out;
    bool check_cutoff = false;
    kr->add_option("estimate", estimate_path, "ChannelEstimate JSON")->required()->check(CLI::ExistingFile);
    kr->add_option("--config", common.config, "Scenario config supplying protocol and key-rate settings");
    kr->add_flag("--check-cutoff", check_cutoff, "Raise the Fock cutoff until the rate converges to 1%");
    kr->add_option("--problem-out", problem_out, "Also write the key-rate problem as JSON");

    auto* rep = app.add_subcommand("reproduce", "Regenerate a table or figure (table1, table2, fig3, fig10)");
    std::string target, config_dir = CVQKD_CONFIG_DIR;
    std::vector<int> states;
    std::vector<double> distances;
    rep->add_option("target", target, "table1 | table2 | fig3 | fig10")
        ->required()
        ->check(CLI::IsMember({"table1", "table2", "fig3", "fig10"}));
    rep->add_option("--config-dir", config_dir, "Directory holding the bundled configs");
    rep->add_option("--states", states, "fig3: constellation sizes")->delimiter(',');
    rep->add_option("--distances", distances, "fig3/fig10: distances in km")->delimiter(',');

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? ok : config_error;
    }

    try {
        if (*sim) return run_simulate(common, cfg_path, save_frames);
        if (*est) return run_estimate(common, frames);
        if (*kr) return run_keyrate(common, estimate_path, check_cutoff, problem_out);
        if (*rep) return run_reproduce(common, target, config_dir, states, distances);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.stage() == Stage::config ? config_error : stage_failure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return stage_failure;
    }
    return ok;
}
