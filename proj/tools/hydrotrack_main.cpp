// hydrotrack command-line tool: seeded single-trial simulation, Monte Carlo
// batches, and offline estimation from two-channel WAV recordings.

#include <CLI11.hpp>

#include <hydrotrack/hydrotrack.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace hydrotrack;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfigError = 2;
constexpr int kExitDiverged = 3;

std::string iso_utc_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Seed precedence: command-line flag > HYDROTRACK_SEED > config file.
std::uint64_t resolve_seed(const ParsedConfig& cfg, const std::optional<std::uint64_t>& flag_seed) {
    if (flag_seed) return *flag_seed;
    if (const char* env = std::getenv("HYDROTRACK_SEED")) {
        char* end = nullptr;
        const unsigned long long v = std::strtoull(env, &end, 10);
        if (end == env || *end != '\0')
            throw ConfigError(std::string("HYDROTRACK_SEED is not an integer: '") + env + "'");
        return static_cast<std::uint64_t>(v);
    }
    return cfg.scenario.seed;
}

void ensure_out_dir(const std::string& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw ConfigError(out_dir + ": cannot create output directory (" + ec.message() + ")");
}

int cmd_simulate(const std::string& config_path, const std::string& out_dir,
                 const std::optional<std::uint64_t>& seed_flag) {
    ParsedConfig cfg = parse_config(config_path);
    if (cfg.motions.size() != 1 || cfg.initializers.size() != 1)
        throw ConfigError(config_path + ": simulate requires a single motion and a single initializer");
    cfg.scenario.seed = resolve_seed(cfg, seed_flag);

    RunManifest manifest;
    manifest.command = "simulate";
    manifest.master_seed = cfg.scenario.seed;
    manifest.started_utc = iso_utc_now();

    ensure_out_dir(out_dir);
    const TrialResult trial = run_trial(cfg.scenario, derive_seed(cfg.scenario.seed, 0));

    const std::string trial_path = (fs::path(out_dir) / "trial.csv").string();
    write_trial_csv(trial_path, trial);
    manifest.finished_utc = iso_utc_now();
    manifest.config = config_snapshot(cfg);
    manifest.outputs = {trial_path};
    write_manifest((fs::path(out_dir) / "manifest.json").string(), manifest);

    if (trial.diag.diverged) {
        std::cerr << "hydrotrack: filter diverged during the run (results written)\n";
        return kExitDiverged;
    }
    return kExitOk;
}

int cmd_montecarlo(const std::string& config_path, const std::string& out_dir,
                   const std::optional<std::uint64_t>& seed_flag, std::optional<int> trials_flag,
                   std::optional<int> parallel_flag, bool keep_trials) {
    ParsedConfig cfg = parse_config(config_path);
    cfg.scenario.seed = resolve_seed(cfg, seed_flag);
    if (trials_flag) cfg.trials = *trials_flag;
    if (cfg.trials < 1) throw ConfigError("montecarlo: trials must be >= 1");
    if (parallel_flag) cfg.parallel = *parallel_flag;
    if (cfg.parallel < 0) throw ConfigError("montecarlo: parallel must be >= 0");

    RunManifest manifest;
    manifest.command = "montecarlo";
    manifest.master_seed = cfg.scenario.seed;
    manifest.started_utc = iso_utc_now();

    ensure_out_dir(out_dir);
    std::vector<CellStats> cells;
    std::vector<std::string> outputs;

    for (SourceMotion motion : cfg.motions) {
        for (InitializerKind init : cfg.initializers) {
            ScenarioConfig sc = cfg.scenario;
            sc.source.kind = motion;
            sc.initializer = init;
            if (cfg.filter_model_auto) sc.filter_model = auto_filter_model(motion);
            const std::vector<TrialResult> results = run_batch_trials(sc, cfg.trials, cfg.parallel);
            cells.push_back(summarize_trials(sc, results));
            if (keep_trials) {
                const fs::path dir = fs::path(out_dir) / "trials";
                fs::create_directories(dir);
                for (std::size_t i = 0; i < results.size(); ++i) {
                    const std::string name = std::string(source_motion_name(motion)) + "_" +
                                             initializer_name(init) + "_" + std::to_string(i) + ".csv";
                    const std::string p = (dir / name).string();
                    write_trial_csv(p, results[i]);
                    outputs.push_back(p);
                }
            }
        }
    }

    const std::string csv_path = (fs::path(out_dir) / "summary.csv").string();
    const std::string json_path = (fs::path(out_dir) / "summary.json").string();
    write_summary_csv(csv_path, cells);
    {
        std::ofstream out(json_path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write: " + json_path);
        out << summary_json(cells, cfg.scenario.seed).dump(2) << "\n";
    }
    outputs.insert(outputs.begin(), {csv_path, json_path});

    manifest.finished_utc = iso_utc_now();
    manifest.config = config_snapshot(cfg);
    manifest.outputs = outputs;
    write_manifest((fs::path(out_dir) / "manifest.json").string(), manifest);
    return kExitOk;
}

int cmd_estimate(const std::string& wav_path, const std::string& track_path,
                 const std::string& config_path, const std::string& out_dir,
                 const std::optional<std::uint64_t>& seed_flag, const std::string& anchor_flag) {
    ParsedConfig cfg = parse_config(config_path);
    if (cfg.motions.size() != 1 || cfg.initializers.size() != 1)
        throw ConfigError(config_path + ": estimate requires a single motion and a single initializer");
    cfg.scenario.seed = resolve_seed(cfg, seed_flag);

    Vec3 anchor = cfg.scenario.anchor;
    if (!anchor_flag.empty()) {
        std::stringstream ss(anchor_flag);
        std::string cell;
        std::vector<double> vals;
        while (std::getline(ss, cell, ',')) vals.push_back(std::strtod(cell.c_str(), nullptr));
        if (vals.size() != 3) throw ConfigError("--anchor expects 'x,y,z'");
        anchor = Vec3(vals[0], vals[1], vals[2]);
    }

    const SampledFrame wav = read_wav_float32_stereo(wav_path);
    const std::vector<MobileTrackSample> track = read_mobile_track_csv(track_path);

    RunManifest manifest;
    manifest.command = "estimate";
    manifest.master_seed = cfg.scenario.seed;
    manifest.started_utc = iso_utc_now();

    ensure_out_dir(out_dir);
    const EstimateOutput result = run_estimate_pipeline(wav, track, cfg, anchor);

    const std::string trial_path = (fs::path(out_dir) / "trial.csv").string();
    write_estimate_csv(trial_path, result.steps);
    manifest.finished_utc = iso_utc_now();
    manifest.config = config_snapshot(cfg);
    manifest.outputs = {trial_path};
    write_manifest((fs::path(out_dir) / "manifest.json").string(), manifest);

    if (result.diverged) {
        std::cerr << "hydrotrack: filter diverged during the run (results written)\n";
        return kExitDiverged;
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hydrotrack: close-range underwater acoustic source localization toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_dir, wav_path, track_path, anchor_flag;
    std::optional<std::uint64_t> seed_flag;
    std::optional<int> trials_flag, parallel_flag;
    bool keep_trials = false;

    auto* sim = app.add_subcommand("simulate", "Run one seeded trial and write trial.csv");
    sim->add_option("--config", config_path, "scenario config file")->required();
    sim->add_option("--out", out_dir, "output directory")->required();
    sim->add_option("--seed", seed_flag, "master seed override");

    auto* mc = app.add_subcommand("montecarlo", "Run seeded Monte Carlo batches and write summaries");
    mc->add_option("--config", config_path, "scenario config file")->required();
    mc->add_option("--out", out_dir, "output directory")->required();
    mc->add_option("--seed", seed_flag, "master seed override");
    mc->add_option("--trials", trials_flag, "trials per (motion, initializer) cell");
    mc->add_option("--parallel", parallel_flag, "worker threads (0 = hardware)");
    mc->add_flag("--keep-trials", keep_trials, "write per-trial CSVs");

    auto* est = app.add_subcommand("estimate", "Process a 2-channel float WAV recording offline");
    est->add_option("--wav", wav_path, "RIFF/WAVE file, IEEE float 32-bit, 2 channels")->required();
    est->add_option("--track", track_path, "mobile receiver track CSV (t_s,px,py,pz,vx,vy,vz)")->required();
    est->add_option("--config", config_path, "scenario config file")->required();
    est->add_option("--out", out_dir, "output directory")->required();
    est->add_option("--seed", seed_flag, "master seed override");
    est->add_option("--anchor", anchor_flag, "fixed hydrophone position 'x,y,z' (overrides config)");

    auto* ref = app.add_subcommand("config-reference", "Print the configuration key reference");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfigError;
    }

    try {
        if (ref->parsed()) {
            std::cout << config_reference();
            return kExitOk;
        }
        if (sim->parsed()) return cmd_simulate(config_path, out_dir, seed_flag);
        if (mc->parsed())
            return cmd_montecarlo(config_path, out_dir, seed_flag, trials_flag, parallel_flag, keep_trials);
        if (est->parsed())
            return cmd_estimate(wav_path, track_path, config_path, out_dir, seed_flag, anchor_flag);
    } catch (const ConfigError& e) {
        std::cerr << "hydrotrack: " << e.what() << "\n";
        return kExitConfigError;
    } catch (const WavFormatError& e) {
        std::cerr << "hydrotrack: " << e.what() << "\n";
        return kExitConfigError;
    } catch (const std::invalid_argument& e) {
        std::cerr << "hydrotrack: " << e.what() << "\n";
        return kExitConfigError;
    } catch (const std::exception& e) {
        std::cerr << "hydrotrack: " << e.what() << "\n";
        return 1;
    }
    return kExitOk;
}
