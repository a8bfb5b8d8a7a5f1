#pragma once

// Configuration parsing, result serialization (CSV/JSON), WAV ingestion for
// the offline DSP mode, and the estimate pipeline that ties them together.

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hydrotrack/dsp.hpp"
#include "hydrotrack/init.hpp"
#include "hydrotrack/montecarlo.hpp"
#include "hydrotrack/ukf.hpp"

namespace hydrotrack {

constexpr const char* kToolVersion = "0.1.0";

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class WavFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Numbers are serialized with 9 significant digits: enough to round-trip the
// metrics while keeping files diffable.
inline std::string format_g9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// Config file
// ---------------------------------------------------------------------------
//
// Structured key-value text, '#' comments, one [section] per group:
// [source], [receiver], [noise], [filter], [initializer], [run].
// Unknown sections or keys are hard errors.

struct ParsedConfig {
    ScenarioConfig scenario;  // first sweep entry applied
    std::vector<SourceMotion> motions;
    std::vector<InitializerKind> initializers;
    bool filter_model_auto = true;
    int trials = 100;
    int parallel = 0;  // 0 = hardware concurrency
    double window_s = 1.0;
    BandSpec band{900.0, 2100.0, 4};
};

// Filter layout used for a given true motion when [filter] model = auto.
inline ModelKind auto_filter_model(SourceMotion m) {
    switch (m) {
        case SourceMotion::Static: return ModelKind::Static;
        case SourceMotion::Cv:
        case SourceMotion::Straight: return ModelKind::Cv;
        // gentle accelerations track better under the cv model with its
        // white-noise-acceleration slack; model = ca stays selectable for
        // strongly maneuvering sources
        case SourceMotion::Ca: return ModelKind::Cv;
        case SourceMotion::Turn:
        case SourceMotion::Arc:
        case SourceMotion::UShape: return ModelKind::Ctrv;
    }
    return ModelKind::Cv;
}

namespace detail {

struct RawEntry {
    std::string value;
    int line = 0;
    bool consumed = false;
};

struct RawConfig {
    std::string path;
    std::map<std::string, std::map<std::string, RawEntry>> sections;

    [[noreturn]] void fail(int line, const std::string& msg) const {
        throw ConfigError(path + ":" + std::to_string(line) + ": " + msg);
    }
};

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline RawConfig read_raw_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path + ": cannot open config file");
    RawConfig raw;
    raw.path = path;
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        if (t.front() == '[') {
            if (t.back() != ']') raw.fail(lineno, "malformed section header");
            section = trim(t.substr(1, t.size() - 2));
            if (section.empty()) raw.fail(lineno, "empty section name");
            raw.sections[section];
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) raw.fail(lineno, "expected key = value");
        if (section.empty()) raw.fail(lineno, "key outside of a section");
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (key.empty()) raw.fail(lineno, "empty key");
        auto [it, inserted] = raw.sections[section].emplace(key, RawEntry{value, lineno, false});
        if (!inserted) raw.fail(lineno, "duplicate key '" + key + "' in [" + section + "]");
    }
    return raw;
}

// Typed access with consumption tracking; anything left unconsumed is an
// unknown (likely mistyped) key.
class ConfigReader {
public:
    explicit ConfigReader(RawConfig raw) : raw_(std::move(raw)) {}

    std::optional<std::pair<std::string, int>> find(const std::string& sec, const std::string& key) {
        auto s = raw_.sections.find(sec);
        if (s == raw_.sections.end()) return std::nullopt;
        auto k = s->second.find(key);
        if (k == s->second.end()) return std::nullopt;
        k->second.consumed = true;
        return std::make_pair(k->second.value, k->second.line);
    }

    double number(const std::string& sec, const std::string& key, double def) {
        auto e = find(sec, key);
        if (!e) return def;
        return parse_number(sec, key, e->first, e->second);
    }

    long integer(const std::string& sec, const std::string& key, long def) {
        auto e = find(sec, key);
        if (!e) return def;
        char* end = nullptr;
        const long v = std::strtol(e->first.c_str(), &end, 10);
        if (end == e->first.c_str() || *end != '\0')
            raw_.fail(e->second, "[" + sec + "] " + key + ": not an integer: '" + e->first + "'");
        return v;
    }

    std::string str(const std::string& sec, const std::string& key, const std::string& def) {
        auto e = find(sec, key);
        return e ? e->first : def;
    }

    Vec3 vec3(const std::string& sec, const std::string& key, const Vec3& def) {
        auto e = find(sec, key);
        if (!e) return def;
        const auto parts = split_list(e->first);
        if (parts.size() != 3)
            raw_.fail(e->second, "[" + sec + "] " + key + ": expected three comma-separated numbers");
        Vec3 v;
        for (int i = 0; i < 3; ++i) v[i] = parse_number(sec, key, parts[static_cast<std::size_t>(i)], e->second);
        return v;
    }

    std::vector<std::string> list(const std::string& sec, const std::string& key, const std::string& def) {
        auto e = find(sec, key);
        return split_list(e ? e->first : def);
    }

    [[noreturn]] void range_error(const std::string& sec, const std::string& key, const std::string& what) {
        int line = 0;
        auto s = raw_.sections.find(sec);
        if (s != raw_.sections.end()) {
            auto k = s->second.find(key);
            if (k != s->second.end()) line = k->second.line;
        }
        raw_.fail(line, "[" + sec + "] " + key + " " + what);
    }

    void require(bool ok, const std::string& sec, const std::string& key, const std::string& what) {
        if (!ok) range_error(sec, key, what);
    }

    void finish() const {
        static const std::vector<std::string> known = {"source", "receiver", "noise",
                                                       "filter", "initializer", "run"};
        for (const auto& [sec, keys] : raw_.sections) {
            if (std::find(known.begin(), known.end(), sec) == known.end()) {
                int line = keys.empty() ? 0 : keys.begin()->second.line;
                raw_.fail(line, "unknown section [" + sec + "]");
            }
            for (const auto& [key, entry] : keys)
                if (!entry.consumed) raw_.fail(entry.line, "unknown key '" + key + "' in [" + sec + "]");
        }
    }

private:
    double parse_number(const std::string& sec, const std::string& key, const std::string& text, int line) {
        char* end = nullptr;
        const double v = std::strtod(text.c_str(), &end);
        if (end == text.c_str() || *end != '\0')
            raw_.fail(line, "[" + sec + "] " + key + ": not a number: '" + text + "'");
        return v;
    }

    static std::vector<std::string> split_list(const std::string& text) {
        std::vector<std::string> out;
        std::string cur;
        std::stringstream ss(text);
        while (std::getline(ss, cur, ',')) {
            cur = trim(cur);
            if (!cur.empty()) out.push_back(cur);
        }
        return out;
    }

    RawConfig raw_;
};

inline SourceMotion parse_source_motion(ConfigReader& r, const std::string& name) {
    if (name == "static") return SourceMotion::Static;
    if (name == "cv") return SourceMotion::Cv;
    if (name == "ca") return SourceMotion::Ca;
    if (name == "turn") return SourceMotion::Turn;
    if (name == "straight") return SourceMotion::Straight;
    if (name == "arc") return SourceMotion::Arc;
    if (name == "u_shape") return SourceMotion::UShape;
    r.range_error("source", "motion", "has unknown value '" + name + "'");
}

inline InitializerKind parse_initializer(ConfigReader& r, const std::string& name) {
    if (name == "naive") return InitializerKind::Naive;
    if (name == "random") return InitializerKind::RandomSphere;
    if (name == "tdoa_ls") return InitializerKind::TdoaLs;
    if (name == "lc_map") return InitializerKind::LcMap;
    r.range_error("initializer", "kind", "has unknown value '" + name + "'");
}

}  // namespace detail

inline ParsedConfig parse_config(const std::string& path) {
    detail::ConfigReader r(detail::read_raw_config(path));
    ParsedConfig out;
    ScenarioConfig& sc = out.scenario;

    // [source]
    for (const std::string& name : r.list("source", "motion", "static"))
        out.motions.push_back(detail::parse_source_motion(r, name));
    if (out.motions.empty()) r.range_error("source", "motion", "must list at least one motion");
    sc.source.kind = out.motions.front();
    sc.source.speed = r.number("source", "speed", sc.source.speed);
    r.require(sc.source.speed >= 0.0, "source", "speed", "out of range (must be >= 0)");
    sc.source.accel = r.number("source", "accel", sc.source.accel);
    sc.source.turn_radius = r.number("source", "turn_radius", sc.source.turn_radius);
    r.require(sc.source.turn_radius > 0.0, "source", "turn_radius", "out of range (must be > 0)");
    sc.source.leg_m = r.number("source", "leg", 10.0);
    r.require(sc.source.leg_m > 0.0, "source", "leg", "out of range (must be > 0)");

    // [receiver]
    {
        const std::string p = r.str("receiver", "path", "helix");
        if (p == "helix") sc.receiver.kind = ReceiverPath::Helix;
        else if (p == "circle") sc.receiver.kind = ReceiverPath::Circle;
        else if (p == "square") sc.receiver.kind = ReceiverPath::Square;
        else if (p == "spiral") sc.receiver.kind = ReceiverPath::Spiral;
        else if (p == "lawnmower") sc.receiver.kind = ReceiverPath::Lawnmower;
        else r.range_error("receiver", "path", "has unknown value '" + p + "'");
    }
    sc.receiver.radius = r.number("receiver", "radius", sc.receiver.radius);
    r.require(sc.receiver.radius > 0.0, "receiver", "radius", "out of range (must be > 0)");
    sc.receiver.period_s = r.number("receiver", "period", sc.receiver.period_s);
    r.require(sc.receiver.period_s > 0.0, "receiver", "period", "out of range (must be > 0)");
    sc.receiver.pitch_m = r.number("receiver", "pitch", 0.5);
    sc.receiver.side_m = r.number("receiver", "side", 8.0);
    r.require(sc.receiver.side_m > 0.0, "receiver", "side", "out of range (must be > 0)");
    sc.receiver.speed_mps = r.number("receiver", "speed", 0.5);
    r.require(sc.receiver.speed_mps > 0.0, "receiver", "speed", "out of range (must be > 0)");
    sc.receiver.spiral_growth = r.number("receiver", "spiral_growth", 0.05);
    r.require(sc.receiver.spiral_growth >= 0.0, "receiver", "spiral_growth", "out of range (must be >= 0)");
    sc.receiver.leg_m = r.number("receiver", "leg", 10.0);
    r.require(sc.receiver.leg_m > 0.0, "receiver", "leg", "out of range (must be > 0)");
    sc.receiver.spacing_m = r.number("receiver", "spacing", 2.0);
    r.require(sc.receiver.spacing_m > 0.0, "receiver", "spacing", "out of range (must be > 0)");
    sc.receiver.depth_offset = r.number("receiver", "depth_offset", -0.23);
    sc.anchor = r.vec3("receiver", "anchor", Vec3(0.0, 0.0, -0.96));

    // [noise]
    sc.noise.sigma_rd = r.number("noise", "sigma_rd", 0.1);
    r.require(sc.noise.sigma_rd >= 0.0, "noise", "sigma_rd", "out of range (must be >= 0)");
    sc.noise.sigma_rrd = r.number("noise", "sigma_rrd", 0.05);
    r.require(sc.noise.sigma_rrd >= 0.0, "noise", "sigma_rrd", "out of range (must be >= 0)");
    sc.noise.awgn_snr_db = r.number("noise", "awgn_snr_db", 20.0);
    sc.acoustics.sound_speed = r.number("noise", "c", 1500.0);
    r.require(sc.acoustics.sound_speed > 0.0, "noise", "c", "out of range (must be > 0)");
    sc.acoustics.carrier_hz = r.number("noise", "f0", 1500.0);
    r.require(sc.acoustics.carrier_hz > 0.0, "noise", "f0", "out of range (must be > 0)");
    out.band.f_lo = r.number("noise", "band_lo", 900.0);
    out.band.f_hi = r.number("noise", "band_hi", 2100.0);
    r.require(out.band.f_lo > 0.0 && out.band.f_lo < out.band.f_hi, "noise", "band_lo",
              "out of range (must satisfy 0 < band_lo < band_hi)");
    out.band.order = static_cast<int>(r.integer("noise", "band_order", 4));
    r.require(out.band.order >= 1, "noise", "band_order", "out of range (must be >= 1)");

    // [filter]
    {
        const std::string m = r.str("filter", "model", "auto");
        out.filter_model_auto = (m == "auto");
        if (m == "auto") sc.filter_model = auto_filter_model(sc.source.kind);
        else if (m == "static") sc.filter_model = ModelKind::Static;
        else if (m == "cv") sc.filter_model = ModelKind::Cv;
        else if (m == "ca") sc.filter_model = ModelKind::Ca;
        else if (m == "ctrv") sc.filter_model = ModelKind::Ctrv;
        else r.range_error("filter", "model", "has unknown value '" + m + "'");
    }
    sc.process_noise.accel_psd = r.number("filter", "accel_psd", sc.process_noise.accel_psd);
    r.require(sc.process_noise.accel_psd >= 0.0, "filter", "accel_psd", "out of range (must be >= 0)");
    sc.process_noise.static_pos_rw = r.number("filter", "static_pos_rw", sc.process_noise.static_pos_rw);
    r.require(sc.process_noise.static_pos_rw >= 0.0, "filter", "static_pos_rw", "out of range (must be >= 0)");
    sc.process_noise.jerk_psd = r.number("filter", "jerk_psd", sc.process_noise.jerk_psd);
    r.require(sc.process_noise.jerk_psd >= 0.0, "filter", "jerk_psd", "out of range (must be >= 0)");
    sc.process_noise.bias_pos_rw = r.number("filter", "bias_pos_rw", sc.process_noise.bias_pos_rw);
    r.require(sc.process_noise.bias_pos_rw >= 0.0, "filter", "bias_pos_rw", "out of range (must be >= 0)");
    sc.process_noise.bias_vel_rw = r.number("filter", "bias_vel_rw", sc.process_noise.bias_vel_rw);
    r.require(sc.process_noise.bias_vel_rw >= 0.0, "filter", "bias_vel_rw", "out of range (must be >= 0)");
    sc.process_noise.turn_rw = r.number("filter", "turn_rw", sc.process_noise.turn_rw);
    r.require(sc.process_noise.turn_rw >= 0.0, "filter", "turn_rw", "out of range (must be >= 0)");
    {
        const std::string g = r.str("filter", "gating", "gate");
        if (g == "gate") sc.outlier_policy = OutlierPolicy::Gate;
        else if (g == "inflate") sc.outlier_policy = OutlierPolicy::InflateR;
        else if (g == "off") sc.outlier_policy = OutlierPolicy::Off;
        else r.range_error("filter", "gating", "has unknown value '" + g + "' (gate|inflate|off)");
    }
    sc.gate_sigma = r.number("filter", "gate_sigma", 3.0);
    r.require(sc.gate_sigma > 0.0, "filter", "gate_sigma", "out of range (must be > 0)");
    sc.ut.alpha = r.number("filter", "alpha", 1.0);
    r.require(sc.ut.alpha > 0.0 && sc.ut.alpha <= 1.0, "filter", "alpha", "out of range (must be in (0, 1])");
    sc.ut.beta = r.number("filter", "beta", 2.0);
    {
        const std::string k = r.str("filter", "kappa", "auto");
        if (k != "auto") {
            char* end = nullptr;
            const double v = std::strtod(k.c_str(), &end);
            if (end == k.c_str() || *end != '\0')
                r.range_error("filter", "kappa", "must be a number or 'auto'");
            sc.ut.kappa = v;
        }
    }
    sc.filter_depth_min = r.number("filter", "depth_min", -30.0);
    sc.filter_depth_max = r.number("filter", "depth_max", 0.0);
    r.require(sc.filter_depth_min < sc.filter_depth_max, "filter", "depth_min",
              "out of range (must be < depth_max)");
    sc.r_floor = r.number("filter", "r_floor", 1e-3);
    r.require(sc.r_floor >= 0.0, "filter", "r_floor", "out of range (must be >= 0)");
    sc.p0.pos_var = r.number("filter", "p0_pos_var", 16.0);
    r.require(sc.p0.pos_var > 0.0, "filter", "p0_pos_var", "out of range (must be > 0)");
    sc.p0.vel_var = r.number("filter", "p0_vel_var", 1.0);
    r.require(sc.p0.vel_var > 0.0, "filter", "p0_vel_var", "out of range (must be > 0)");
    sc.p0.pos_bias_var = r.number("filter", "p0_pos_bias_var", 0.01);
    r.require(sc.p0.pos_bias_var > 0.0, "filter", "p0_pos_bias_var", "out of range (must be > 0)");
    sc.p0.vel_bias_var = r.number("filter", "p0_vel_bias_var", 0.01);
    r.require(sc.p0.vel_bias_var > 0.0, "filter", "p0_vel_bias_var", "out of range (must be > 0)");

    // [initializer]
    for (const std::string& name : r.list("initializer", "kind", "lc_map"))
        out.initializers.push_back(detail::parse_initializer(r, name));
    if (out.initializers.empty()) r.range_error("initializer", "kind", "must list at least one kind");
    sc.initializer = out.initializers.front();
    sc.lcmap.m_pos = static_cast<int>(r.integer("initializer", "m_pos", 512));
    r.require(sc.lcmap.m_pos >= 1, "initializer", "m_pos", "out of range (must be >= 1)");
    sc.lcmap.m_vel = static_cast<int>(r.integer("initializer", "m_vel", 32));
    r.require(sc.lcmap.m_vel >= 1, "initializer", "m_vel", "out of range (must be >= 1)");
    sc.lcmap.lambda = r.number("initializer", "lambda", 1.0);
    r.require(sc.lcmap.lambda >= 0.0, "initializer", "lambda", "out of range (must be >= 0)");
    sc.lcmap.eps_fim = r.number("initializer", "eps_fim", 1e-6);
    r.require(sc.lcmap.eps_fim > 0.0, "initializer", "eps_fim", "out of range (must be > 0)");
    sc.lcmap.max_radius = r.number("initializer", "max_radius", 30.0);
    r.require(sc.lcmap.max_radius > 0.0, "initializer", "max_radius", "out of range (must be > 0)");
    sc.lcmap.depth_min = r.number("initializer", "depth_min", -30.0);
    sc.lcmap.depth_max = r.number("initializer", "depth_max", 0.0);
    r.require(sc.lcmap.depth_min < sc.lcmap.depth_max, "initializer", "depth_min",
              "out of range (must be < depth_max)");
    sc.lcmap.v_max = r.number("initializer", "v_max", 3.0);
    r.require(sc.lcmap.v_max > 0.0, "initializer", "v_max", "out of range (must be > 0)");
    sc.burst_frames = static_cast<int>(r.integer("initializer", "burst_frames", 10));
    r.require(sc.burst_frames >= 1, "initializer", "burst_frames", "out of range (must be >= 1)");
    sc.lcmap.polish_iters = static_cast<int>(r.integer("initializer", "polish_iters", 10));
    r.require(sc.lcmap.polish_iters >= 0, "initializer", "polish_iters", "out of range (must be >= 0)");

    // [run]
    sc.duration = r.number("run", "duration", 120.0);
    r.require(sc.duration > 0.0, "run", "duration", "out of range (must be > 0)");
    sc.meas_rate = r.number("run", "meas_rate", 5.0);
    r.require(sc.meas_rate > 0.0, "run", "meas_rate", "out of range (must be > 0)");
    sc.init_radius = r.number("run", "init_radius", 20.0);
    r.require(sc.init_radius > 0.0, "run", "init_radius", "out of range (must be > 0)");
    sc.init_depth_min = r.number("run", "init_depth_min", -10.0);
    sc.init_depth_max = r.number("run", "init_depth_max", 0.0);
    r.require(sc.init_depth_min < sc.init_depth_max, "run", "init_depth_min",
              "out of range (must be < init_depth_max)");
    sc.keepout_m = r.number("run", "keepout", 1.0);
    r.require(sc.keepout_m >= 0.0, "run", "keepout", "out of range (must be >= 0)");
    sc.dwell_s = r.number("run", "dwell", 5.0);
    r.require(sc.dwell_s >= 0.0, "run", "dwell", "out of range (must be >= 0)");
    out.trials = static_cast<int>(r.integer("run", "trials", 100));
    r.require(out.trials >= 1, "run", "trials", "out of range (must be >= 1)");
    out.parallel = static_cast<int>(r.integer("run", "parallel", 0));
    r.require(out.parallel >= 0, "run", "parallel", "out of range (must be >= 0)");
    sc.seed = static_cast<std::uint64_t>(r.integer("run", "seed", 1));
    out.window_s = r.number("run", "window", 1.0);
    r.require(out.window_s > 0.0, "run", "window", "out of range (must be > 0)");

    r.finish();
    return out;
}

// Generated key reference: every key, its default, and its constraint.
inline std::string config_reference() {
    std::ostringstream os;
    os << "hydrotrack configuration reference (key = default  # constraint / meaning)\n\n";
    os << "[source]\n"
          "  motion = static        # static|cv|ca|turn|straight|arc|u_shape; comma list sweeps (montecarlo)\n"
          "  speed = 0.25           # m/s, >= 0\n"
          "  accel = 0.001          # m/s^2 along heading (ca)\n"
          "  turn_radius = 5        # m, > 0 (turn/arc/u_shape)\n"
          "  leg = 10               # m, > 0 (u_shape straight legs)\n\n";
    os << "[receiver]\n"
          "  path = helix           # helix|circle|square|spiral|lawnmower\n"
          "  radius = 8             # m, > 0\n"
          "  period = 15            # s per revolution, > 0\n"
          "  pitch = 0.5            # m rise per revolution (helix)\n"
          "  side = 8               # m, > 0 (square)\n"
          "  speed = 0.5            # m/s, > 0 (square/lawnmower)\n"
          "  spiral_growth = 0.05   # m/s, >= 0\n"
          "  leg = 10               # m, > 0 (lawnmower)\n"
          "  spacing = 2            # m, > 0 (lawnmower)\n"
          "  depth_offset = -0.23   # m, mobile depth relative to anchor\n"
          "  anchor = 0,0,-0.96     # m, fixed hydrophone position\n\n";
    os << "[noise]\n"
          "  sigma_rd = 0.1         # m, >= 0\n"
          "  sigma_rrd = 0.05       # m/s, >= 0\n"
          "  awgn_snr_db = 20       # waveform-mode SNR; >= 300 disables noise\n"
          "  c = 1500               # m/s, > 0\n"
          "  f0 = 1500              # Hz, > 0, source tone\n"
          "  band_lo = 900          # Hz, DSP band-pass lower edge\n"
          "  band_hi = 2100         # Hz, upper edge (band_lo < band_hi < fs/2)\n"
          "  band_order = 4         # Butterworth prototype order, >= 1\n\n";
    os << "[filter]\n"
          "  model = auto           # auto|static|cv|ca|ctrv; auto matches the source motion\n"
          "  accel_psd = 1e-4       # (m/s^2)^2*s, >= 0 (cv/ctrv kinematics)\n"
          "  static_pos_rw = 1e-4   # m^2/s, >= 0 (static model position walk)\n"
          "  jerk_psd = 1e-5        # (m/s^3)^2*s, >= 0 (ca model)\n"
          "  bias_pos_rw = 1e-6     # m^2/s, >= 0\n"
          "  bias_vel_rw = 1e-6     # (m/s)^2/s, >= 0\n"
          "  turn_rw = 3e-5         # (rad/s^2)^2*s, >= 0 (ctrv)\n"
          "  gating = gate          # gate|inflate|off\n"
          "  gate_sigma = 3         # Mahalanobis gate, > 0\n"
          "  alpha = 1              # UT spread, in (0, 1]\n"
          "  beta = 2               # UT prior weighting\n"
          "  kappa = auto           # UT secondary scaling; auto = max(3 - n, -2n/3)\n"
          "  depth_min = -30        # m, filter depth window lower edge (state projection)\n  depth_max = 0          # m, filter depth window upper edge\n  r_floor = 1e-3         # lower bound on the filter's measurement sigmas\n"
          "  p0_pos_var = 16        # m^2, > 0\n"
          "  p0_vel_var = 1         # (m/s)^2, > 0\n"
          "  p0_pos_bias_var = 0.01 # m^2, > 0\n"
          "  p0_vel_bias_var = 0.01 # (m/s)^2, > 0\n\n";
    os << "[initializer]\n"
          "  kind = lc_map          # naive|random|tdoa_ls|lc_map; comma list sweeps (montecarlo)\n"
          "  m_pos = 512            # locus position candidates, >= 1\n"
          "  m_vel = 32             # velocity candidates per position, >= 1\n"
          "  lambda = 1             # Fisher-information weight, >= 0\n"
          "  eps_fim = 1e-6         # FIM conditioning jitter, > 0\n"
          "  max_radius = 30        # m, candidate radius bound, > 0\n"
          "  depth_min = -30        # m, candidate depth window\n"
          "  depth_max = 0          # m, must exceed depth_min\n"
          "  v_max = 3              # m/s, candidate speed bound, > 0\n"
          "  burst_frames = 10      # initialization burst length, >= 1\n"
          "  polish_iters = 10      # Gauss-Newton polish cap, >= 0\n\n";
    os << "[run]\n"
          "  duration = 120         # s, > 0\n"
          "  meas_rate = 5          # Hz, > 0\n"
          "  init_radius = 20       # m, source start sampling ball, > 0\n  init_depth_min = -10   # m, start depth window lower edge\n  init_depth_max = 0     # m, start depth window upper edge\n"
          "  keepout = 1            # m, exclusion around receivers, >= 0\n"
          "  dwell = 5              # s convergence dwell; 0 = first crossing\n"
          "  trials = 100           # >= 1 (montecarlo)\n"
          "  parallel = 0           # worker threads; 0 = hardware concurrency\n"
          "  seed = 1               # master seed (flag > HYDROTRACK_SEED > config)\n"
          "  window = 1             # s, estimate-mode processing window, > 0\n";
    return os.str();
}

// Deterministic snapshot of the resolved configuration, for the manifest.
inline nlohmann::ordered_json config_snapshot(const ParsedConfig& cfg) {
    nlohmann::ordered_json j;
    const ScenarioConfig& sc = cfg.scenario;
    {
        nlohmann::ordered_json s;
        std::vector<std::string> motions;
        for (SourceMotion m : cfg.motions) motions.emplace_back(source_motion_name(m));
        s["motion"] = motions;
        s["speed"] = sc.source.speed;
        s["accel"] = sc.source.accel;
        s["turn_radius"] = sc.source.turn_radius;
        s["leg"] = sc.source.leg_m;
        j["source"] = s;
    }
    {
        nlohmann::ordered_json s;
        s["path"] = receiver_path_name(sc.receiver.kind);
        s["radius"] = sc.receiver.radius;
        s["period"] = sc.receiver.period_s;
        s["pitch"] = sc.receiver.pitch_m;
        s["side"] = sc.receiver.side_m;
        s["speed"] = sc.receiver.speed_mps;
        s["spiral_growth"] = sc.receiver.spiral_growth;
        s["leg"] = sc.receiver.leg_m;
        s["spacing"] = sc.receiver.spacing_m;
        s["depth_offset"] = sc.receiver.depth_offset;
        s["anchor"] = {sc.anchor.x(), sc.anchor.y(), sc.anchor.z()};
        j["receiver"] = s;
    }
    {
        nlohmann::ordered_json s;
        s["sigma_rd"] = sc.noise.sigma_rd;
        s["sigma_rrd"] = sc.noise.sigma_rrd;
        s["awgn_snr_db"] = sc.noise.awgn_snr_db;
        s["c"] = sc.acoustics.sound_speed;
        s["f0"] = sc.acoustics.carrier_hz;
        s["band_lo"] = cfg.band.f_lo;
        s["band_hi"] = cfg.band.f_hi;
        s["band_order"] = cfg.band.order;
        j["noise"] = s;
    }
    {
        nlohmann::ordered_json s;
        s["model"] = cfg.filter_model_auto ? "auto" : model_name(sc.filter_model);
        s["accel_psd"] = sc.process_noise.accel_psd;
        s["static_pos_rw"] = sc.process_noise.static_pos_rw;
        s["jerk_psd"] = sc.process_noise.jerk_psd;
        s["bias_pos_rw"] = sc.process_noise.bias_pos_rw;
        s["bias_vel_rw"] = sc.process_noise.bias_vel_rw;
        s["turn_rw"] = sc.process_noise.turn_rw;
        s["gating"] = sc.outlier_policy == OutlierPolicy::Gate
                          ? "gate"
                          : (sc.outlier_policy == OutlierPolicy::InflateR ? "inflate" : "off");
        s["gate_sigma"] = sc.gate_sigma;
        s["alpha"] = sc.ut.alpha;
        s["beta"] = sc.ut.beta;
        if (sc.ut.kappa) s["kappa"] = *sc.ut.kappa;
        else s["kappa"] = "auto";
        s["depth_min"] = sc.filter_depth_min;
        s["depth_max"] = sc.filter_depth_max;
        s["r_floor"] = sc.r_floor;
        s["p0_pos_var"] = sc.p0.pos_var;
        s["p0_vel_var"] = sc.p0.vel_var;
        s["p0_pos_bias_var"] = sc.p0.pos_bias_var;
        s["p0_vel_bias_var"] = sc.p0.vel_bias_var;
        j["filter"] = s;
    }
    {
        nlohmann::ordered_json s;
        std::vector<std::string> kinds;
        for (InitializerKind k : cfg.initializers) kinds.emplace_back(initializer_name(k));
        s["kind"] = kinds;
        s["m_pos"] = sc.lcmap.m_pos;
        s["m_vel"] = sc.lcmap.m_vel;
        s["lambda"] = sc.lcmap.lambda;
        s["eps_fim"] = sc.lcmap.eps_fim;
        s["max_radius"] = sc.lcmap.max_radius;
        s["depth_min"] = sc.lcmap.depth_min;
        s["depth_max"] = sc.lcmap.depth_max;
        s["v_max"] = sc.lcmap.v_max;
        s["burst_frames"] = sc.burst_frames;
        s["polish_iters"] = sc.lcmap.polish_iters;
        j["initializer"] = s;
    }
    {
        nlohmann::ordered_json s;
        s["duration"] = sc.duration;
        s["meas_rate"] = sc.meas_rate;
        s["init_radius"] = sc.init_radius;
        s["init_depth_min"] = sc.init_depth_min;
        s["init_depth_max"] = sc.init_depth_max;
        s["keepout"] = sc.keepout_m;
        s["dwell"] = sc.dwell_s;
        s["trials"] = cfg.trials;
        s["parallel"] = cfg.parallel;
        s["seed"] = sc.seed;
        s["window"] = cfg.window_s;
        j["run"] = s;
    }
    return j;
}

// ---------------------------------------------------------------------------
// WAV I/O: RIFF/WAVE, IEEE float 32-bit, 2 channels
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::string& s, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u16(std::string& s, std::uint16_t v) {
    for (int i = 0; i < 2; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(const std::string& s, std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[off + static_cast<std::size_t>(i)]);
    return v;
}

inline std::uint16_t get_u16(const std::string& s, std::size_t off) {
    return static_cast<std::uint16_t>(static_cast<unsigned char>(s[off]) |
                                      (static_cast<unsigned char>(s[off + 1]) << 8));
}

}  // namespace detail

inline void write_wav_float32_stereo(const std::string& path, const SampledFrame& frame) {
    frame.validate();
    const std::uint32_t n = static_cast<std::uint32_t>(frame.size());
    const std::uint32_t rate = static_cast<std::uint32_t>(std::llround(frame.fs));
    const std::uint32_t data_bytes = n * 2 * 4;

    std::string buf;
    buf.reserve(44 + data_bytes);
    buf += "RIFF";
    detail::put_u32(buf, 36 + data_bytes);
    buf += "WAVE";
    buf += "fmt ";
    detail::put_u32(buf, 16);
    detail::put_u16(buf, 3);  // IEEE float
    detail::put_u16(buf, 2);
    detail::put_u32(buf, rate);
    detail::put_u32(buf, rate * 2 * 4);
    detail::put_u16(buf, 8);
    detail::put_u16(buf, 32);
    buf += "data";
    detail::put_u32(buf, data_bytes);
    for (std::uint32_t i = 0; i < n; ++i) {
        for (const std::vector<double>* ch : {&frame.ch1, &frame.ch2}) {
            const float f = static_cast<float>((*ch)[i]);
            char raw[4];
            std::memcpy(raw, &f, 4);
            buf.append(raw, 4);
        }
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write WAV file: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline SampledFrame read_wav_float32_stereo(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw WavFormatError(path + ": cannot open WAV file");
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string buf = ss.str();

    if (buf.size() < 12 || buf.compare(0, 4, "RIFF") != 0 || buf.compare(8, 4, "WAVE") != 0)
        throw WavFormatError(path + ": not a RIFF/WAVE file (riff_header)");

    bool have_fmt = false;
    std::uint16_t tag = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    std::size_t data_off = 0, data_len = 0;

    std::size_t off = 12;
    while (off + 8 <= buf.size()) {
        const std::string id = buf.substr(off, 4);
        const std::uint32_t len = detail::get_u32(buf, off + 4);
        const std::size_t body = off + 8;
        if (body + len > buf.size()) throw WavFormatError(path + ": truncated chunk (" + id + ")");
        if (id == "fmt ") {
            if (len < 16) throw WavFormatError(path + ": fmt chunk too short (fmt_size)");
            tag = detail::get_u16(buf, body);
            channels = detail::get_u16(buf, body + 2);
            rate = detail::get_u32(buf, body + 4);
            bits = detail::get_u16(buf, body + 14);
            have_fmt = true;
        } else if (id == "data") {
            data_off = body;
            data_len = len;
        }
        off = body + len + (len % 2);  // chunks are word-aligned
    }
    if (!have_fmt) throw WavFormatError(path + ": missing fmt chunk (fmt)");
    if (tag != 3) throw WavFormatError(path + ": unsupported encoding, need IEEE float (format_tag)");
    if (channels != 2) throw WavFormatError(path + ": need exactly 2 channels (channels)");
    if (bits != 32) throw WavFormatError(path + ": need 32-bit samples (bits_per_sample)");
    if (data_off == 0) throw WavFormatError(path + ": missing data chunk (data)");
    if (rate == 0) throw WavFormatError(path + ": zero sample rate (sample_rate)");

    const std::size_t n = data_len / 8;  // 2 channels x 4 bytes
    SampledFrame frame;
    frame.fs = static_cast<double>(rate);
    frame.ch1.resize(n);
    frame.ch2.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        float f1, f2;
        std::memcpy(&f1, buf.data() + data_off + i * 8, 4);
        std::memcpy(&f2, buf.data() + data_off + i * 8 + 4, 4);
        frame.ch1[i] = f1;
        frame.ch2[i] = f2;
    }
    return frame;
}

// ---------------------------------------------------------------------------
// Result CSV / JSON
// ---------------------------------------------------------------------------

inline constexpr const char* kTrialCsvHeader =
    "t_s,px,py,pz,vx,vy,vz,est_px,est_py,est_pz,est_vx,est_vy,est_vz,b_p,b_v,err_m,gated";
inline constexpr const char* kEstimateCsvHeader =
    "t_s,px,py,pz,vx,vy,vz,est_px,est_py,est_pz,est_vx,est_vy,est_vz,b_p,b_v,gated";
inline constexpr const char* kSummaryCsvHeader =
    "motion,initializer,threshold_m,trials,converged,success_rate,mean_convergence_s,"
    "median_convergence_s,rmse_mean_m,rmse_median_m,rmse_p90_m";

namespace detail {

inline void append_state_columns(std::string& row, const StateVector& est) {
    const Vec3 p = position_of(est);
    const Vec3 v = velocity_of(est);
    for (int i = 0; i < 3; ++i) row += "," + format_g9(p[i]);
    for (int i = 0; i < 3; ++i) row += "," + format_g9(v[i]);
    row += "," + format_g9(pos_bias_of(est));
    row += "," + format_g9(vel_bias_of(est));
}

}  // namespace detail

inline void write_trial_csv(const std::string& path, const TrialResult& trial) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write: " + path);
    out << kTrialCsvHeader << "\n";
    for (const TrialStep& s : trial.steps) {
        std::string row = format_g9(s.t);
        for (int i = 0; i < 3; ++i) row += "," + format_g9(s.truth.position[i]);
        for (int i = 0; i < 3; ++i) row += "," + format_g9(s.truth.velocity[i]);
        detail::append_state_columns(row, s.estimate);
        row += "," + format_g9(s.error_m);
        row += s.gated ? ",1" : ",0";
        out << row << "\n";
    }
}

struct EstimateStep {
    double t = 0.0;
    StateVector estimate;
    bool gated = false;
};

inline void write_estimate_csv(const std::string& path, const std::vector<EstimateStep>& steps) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write: " + path);
    out << kEstimateCsvHeader << "\n";
    for (const EstimateStep& s : steps) {
        std::string row = format_g9(s.t);
        row += ",,,,,,";  // truth columns intentionally empty
        detail::append_state_columns(row, s.estimate);
        row += s.gated ? ",1" : ",0";
        out << row << "\n";
    }
}

inline void write_summary_csv(const std::string& path, const std::vector<CellStats>& cells) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write: " + path);
    out << kSummaryCsvHeader << "\n";
    for (const CellStats& c : cells) {
        for (std::size_t k = 0; k < kSuccessThresholds.size(); ++k) {
            std::string row = c.motion + "," + c.initializer + "," + format_g9(kSuccessThresholds[k]);
            row += "," + std::to_string(c.trials);
            row += "," + std::to_string(c.converged_count[k]);
            row += "," + format_g9(c.success_rate[k]);
            row += "," + (std::isfinite(c.mean_convergence_s[k]) ? format_g9(c.mean_convergence_s[k]) : "");
            row += "," + (std::isfinite(c.median_convergence_s[k]) ? format_g9(c.median_convergence_s[k]) : "");
            row += "," + (std::isfinite(c.rmse_mean) ? format_g9(c.rmse_mean) : "");
            row += "," + (std::isfinite(c.rmse_median) ? format_g9(c.rmse_median) : "");
            row += "," + (std::isfinite(c.rmse_p90) ? format_g9(c.rmse_p90) : "");
            out << row << "\n";
        }
    }
}

inline nlohmann::ordered_json summary_json(const std::vector<CellStats>& cells, std::uint64_t seed) {
    nlohmann::ordered_json j;
    j["thresholds_m"] = kSuccessThresholds;
    j["master_seed"] = seed;
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const CellStats& c : cells) {
        nlohmann::ordered_json e;
        e["motion"] = c.motion;
        e["initializer"] = c.initializer;
        e["trials"] = c.trials;
        e["diverged"] = c.diverged;
        e["success_rate"] = c.success_rate;
        e["converged_count"] = c.converged_count;
        auto opt_arr = [](const std::array<double, 6>& a) {
            nlohmann::ordered_json out = nlohmann::ordered_json::array();
            for (double v : a) {
                if (std::isfinite(v)) out.push_back(v);
                else out.push_back(nullptr);
            }
            return out;
        };
        e["mean_convergence_s"] = opt_arr(c.mean_convergence_s);
        e["median_convergence_s"] = opt_arr(c.median_convergence_s);
        e["rmse_mean_m"] = std::isfinite(c.rmse_mean) ? nlohmann::ordered_json(c.rmse_mean) : nullptr;
        e["rmse_median_m"] = std::isfinite(c.rmse_median) ? nlohmann::ordered_json(c.rmse_median) : nullptr;
        e["rmse_p90_m"] = std::isfinite(c.rmse_p90) ? nlohmann::ordered_json(c.rmse_p90) : nullptr;
        arr.push_back(e);
    }
    j["cells"] = arr;
    return j;
}

struct RunManifest {
    std::string command;
    std::uint64_t master_seed = 0;
    std::string started_utc;
    std::string finished_utc;
    nlohmann::ordered_json config;
    std::vector<std::string> outputs;
};

inline void write_manifest(const std::string& path, const RunManifest& m) {
    nlohmann::ordered_json j;
    j["tool"] = "hydrotrack";
    j["version"] = kToolVersion;
    j["command"] = m.command;
    j["master_seed"] = m.master_seed;
    j["started_utc"] = m.started_utc;
    j["finished_utc"] = m.finished_utc;
    j["config"] = m.config;
    j["outputs"] = m.outputs;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write: " + path);
    out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Mobile receiver track (estimate mode)
// ---------------------------------------------------------------------------

struct MobileTrackSample {
    double t = 0.0;
    Vec3 p{Vec3::Zero()};
    Vec3 v{Vec3::Zero()};
};

inline std::vector<MobileTrackSample> read_mobile_track_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path + ": cannot open mobile track CSV");
    std::string line;
    if (!std::getline(in, line)) throw ConfigError(path + ": empty mobile track CSV");
    if (detail::trim(line) != "t_s,px,py,pz,vx,vy,vz")
        throw ConfigError(path + ": mobile track header must be 't_s,px,py,pz,vx,vy,vz'");
    std::vector<MobileTrackSample> out;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = detail::trim(line);
        if (t.empty()) continue;
        std::stringstream ss(t);
        std::string cell;
        std::vector<double> vals;
        while (std::getline(ss, cell, ',')) {
            char* end = nullptr;
            const double v = std::strtod(cell.c_str(), &end);
            if (end == cell.c_str() || *end != '\0')
                throw ConfigError(path + ":" + std::to_string(lineno) + ": bad number '" + cell + "'");
            vals.push_back(v);
        }
        if (vals.size() != 7)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected 7 columns");
        MobileTrackSample s;
        s.t = vals[0];
        s.p = Vec3(vals[1], vals[2], vals[3]);
        s.v = Vec3(vals[4], vals[5], vals[6]);
        if (!out.empty() && s.t <= out.back().t)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": time must be strictly increasing (t_s)");
        out.push_back(s);
    }
    if (out.size() < 2) throw ConfigError(path + ": mobile track needs at least two samples");
    return out;
}

inline ReceiverPair interpolate_track(const Vec3& anchor, const std::vector<MobileTrackSample>& track,
                                      double t) {
    ReceiverPair rx;
    rx.p_fixed = anchor;
    if (t <= track.front().t) {
        rx.p_mobile = track.front().p;
        rx.v_mobile = track.front().v;
        return rx;
    }
    if (t >= track.back().t) {
        rx.p_mobile = track.back().p;
        rx.v_mobile = track.back().v;
        return rx;
    }
    std::size_t hi = 1;
    while (track[hi].t < t) ++hi;
    const MobileTrackSample& a = track[hi - 1];
    const MobileTrackSample& b = track[hi];
    const double f = (t - a.t) / (b.t - a.t);
    rx.p_mobile = a.p + f * (b.p - a.p);
    rx.v_mobile = a.v + f * (b.v - a.v);
    return rx;
}

// ---------------------------------------------------------------------------
// Offline estimate pipeline: WAV -> band-pass -> TDOA/FDOA -> UKF
// ---------------------------------------------------------------------------

struct EstimateOutput {
    std::vector<EstimateStep> steps;
    std::vector<MeasurementFrame> measurements;
    bool diverged = false;
};

inline EstimateOutput run_estimate_pipeline(const SampledFrame& wav,
                                            const std::vector<MobileTrackSample>& track,
                                            const ParsedConfig& cfg, const Vec3& anchor) {
    wav.validate();
    const ScenarioConfig& sc = cfg.scenario;
    const double fs = wav.fs;
    const std::size_t n_window = static_cast<std::size_t>(std::llround(cfg.window_s * fs));
    const std::size_t hop = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fs / sc.meas_rate)));
    if (n_window < 16) throw ConfigError("estimate: processing window too short for this sample rate");
    if (wav.size() < n_window) throw ConfigError("estimate: recording shorter than one processing window");

    TdoaTrack unwrap_track(1.0 / sc.acoustics.carrier_hz);
    EstimateOutput out;

    for (std::size_t start = 0; start + n_window <= wav.size(); start += hop) {
        SampledFrame frame;
        frame.fs = fs;
        frame.t0 = static_cast<double>(start) / fs;
        frame.ch1.assign(wav.ch1.begin() + static_cast<std::ptrdiff_t>(start),
                         wav.ch1.begin() + static_cast<std::ptrdiff_t>(start + n_window));
        frame.ch2.assign(wav.ch2.begin() + static_cast<std::ptrdiff_t>(start),
                         wav.ch2.begin() + static_cast<std::ptrdiff_t>(start + n_window));

        const double t_mid = frame.t0 + 0.5 * cfg.window_s;
        const ReceiverPair rx = interpolate_track(anchor, track, t_mid);

        const SampledFrame filtered = bandpass_zero_phase(frame, cfg.band);
        const double lag_span = (rx.baseline() * 1.5 + 1.0) / sc.acoustics.sound_speed;
        const int max_lag = std::min<int>(static_cast<int>(n_window) - 1,
                                          static_cast<int>(std::ceil(lag_span * fs)) + 8);
        const TdoaEstimate tdoa = estimate_tdoa_xcorr(filtered, max_lag);
        const double unwrapped = unwrap_tdoa(unwrap_track, tdoa.tdoa_s);
        const FdoaEstimate fdoa = estimate_fdoa_phase_slope(filtered, cfg.band);

        MeasurementFrame m;
        m.t = t_mid;
        m.rd = rd_of_tdoa(unwrapped, sc.acoustics);
        m.rrd = rrd_of_fdoa(fdoa.value, sc.acoustics);
        m.rx = rx;
        m.quality = fdoa.quality;
        out.measurements.push_back(m);
    }
    if (out.measurements.empty()) throw ConfigError("estimate: no complete processing windows in recording");

    Burst burst;
    const std::size_t k_burst =
        std::min<std::size_t>(static_cast<std::size_t>(sc.burst_frames), out.measurements.size());
    burst.frames.assign(out.measurements.begin(),
                        out.measurements.begin() + static_cast<std::ptrdiff_t>(k_burst));

    Rng rng_init(derive_seed(sc.seed, 1));
    const MeasurementNoise rm = sc.filter_noise();
    InitResult init = run_initializer(sc.initializer, burst, sc.lcmap, rm, rng_init, sc.filter_model, sc.p0);

    GaussianState state = init.state;
    auto project_depth = [&]() {
        state.mean.x[2] = std::clamp(state.mean.x[2], sc.filter_depth_min, sc.filter_depth_max);
    };
    project_depth();
    out.steps.push_back({out.measurements.front().t, state.mean, false});
    for (std::size_t i = 1; i < out.measurements.size(); ++i) {
        bool gated = false;
        if (!out.diverged) {
            const double dt = out.measurements[i].t - out.measurements[i - 1].t;
            try {
                GaussianState pred = ukf_predict(state, dt, sc.process_noise, sc.ut);
                UpdateDiagnostics ud;
                state = ukf_update(pred, out.measurements[i], rm, sc.ut, &ud, sc.outlier_policy,
                                   sc.gate_sigma);
                project_depth();
                gated = ud.gated;
            } catch (const FilterDivergenceError&) {
                out.diverged = true;
            }
        }
        out.steps.push_back({out.measurements[i].t, state.mean, gated});
    }
    return out;
}

}  // namespace hydrotrack
