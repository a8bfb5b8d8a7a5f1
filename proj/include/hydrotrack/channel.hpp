#pragma once

// Scenario-to-observation synthesis at two fidelities: direct noisy RD/RRD
// measurements for Monte Carlo batches, and full two-channel waveforms
// (delay, Doppler, inverse-distance attenuation, AWGN) for DSP validation.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "hydrotrack/common.hpp"
#include "hydrotrack/dsp.hpp"
#include "hydrotrack/geometry.hpp"

namespace hydrotrack {

struct NoiseSpec {
    double sigma_rd = 0.1;       // m, std of additive RD noise
    double sigma_rrd = 0.05;     // m/s, std of additive RRD noise
    double awgn_snr_db = 20.0;   // per-channel SNR in waveform mode
    std::uint64_t seed = 0;

    void validate() const {
        if (sigma_rd < 0.0 || sigma_rrd < 0.0)
            throw std::invalid_argument("NoiseSpec: sigmas must be >= 0");
    }
};

// SNR at or above this is treated as a noiseless channel.
constexpr double kNoiselessSnrDb = 300.0;

// Near-field clamp for the 1/d amplitude law.
constexpr double kAttenuationRefDist = 0.1;  // m

struct MeasurementFrame {
    double t = 0.0;       // s
    double rd = 0.0;      // m
    double rrd = 0.0;     // m/s
    ReceiverPair rx;      // receiver geometry snapshot at t
    double quality = 1.0; // in (0, 1]
};

inline MeasurementFrame simulate_measurement(const SourceKinematics& src, const ReceiverPair& rx,
                                             const NoiseSpec& noise, Rng& rng, double t = 0.0) {
    noise.validate();
    MeasurementFrame m;
    m.t = t;
    m.rx = rx;
    m.rd = range_difference(src, rx) + noise.sigma_rd * rng.normal();
    m.rrd = range_rate_difference(src, rx) + noise.sigma_rrd * rng.normal();
    m.quality = 1.0;
    return m;
}

enum class ProbeKind {
    Tone,   // narrowband carrier at f0
    Chirp,  // linear sweep, for unambiguous delay measurements
};

struct ProbeSpec {
    ProbeKind kind = ProbeKind::Tone;
    double chirp_f_lo = 0.0;  // Hz; defaults to 0.8*f0 .. 1.2*f0 when zero
    double chirp_f_hi = 0.0;
};

// Synthesizes one frame with kinematics frozen at the frame start: each
// channel is the source waveform evaluated at the emission time
//   tau_i(t) = (1 - rdot_i/c) * t - d_i/c,
// which carries both the propagation delay and the instantaneous Doppler
// scaling, then scaled by 1/max(d_i, d_ref) plus white Gaussian noise.
inline SampledFrame synthesize_waveforms(const SourceKinematics& src, const ReceiverPair& rx,
                                         const AcousticConstants& k, const NoiseSpec& noise, double fs,
                                         double duration, Rng& rng, const ProbeSpec& probe = {}) {
    k.validate();
    noise.validate();
    detail::check_pair(rx);
    if (!(fs > 2.0 * k.carrier_hz)) throw std::invalid_argument("synthesize_waveforms: need fs > 2*f0");
    if (!(duration > 0.0)) throw std::invalid_argument("synthesize_waveforms: duration must be > 0");

    const Vec3 u_m = detail::los_unit(rx.p_mobile, src.position, "mobile");
    const Vec3 u_f = detail::los_unit(rx.p_fixed, src.position, "fixed");
    const double d_m = (src.position - rx.p_mobile).norm();
    const double d_f = (src.position - rx.p_fixed).norm();
    const double rdot_m = (src.velocity - rx.v_mobile).dot(u_m);
    const double rdot_f = src.velocity.dot(u_f);

    double f_top = k.carrier_hz;
    double f_lo = k.carrier_hz, f_hi = k.carrier_hz;
    if (probe.kind == ProbeKind::Chirp) {
        f_lo = probe.chirp_f_lo > 0.0 ? probe.chirp_f_lo : 0.8 * k.carrier_hz;
        f_hi = probe.chirp_f_hi > 0.0 ? probe.chirp_f_hi : 1.2 * k.carrier_hz;
        if (!(f_lo < f_hi)) throw std::invalid_argument("synthesize_waveforms: chirp band inverted");
        f_top = f_hi;
    }
    const double max_doppler = 1.0 + std::max(std::abs(rdot_m), std::abs(rdot_f)) / k.sound_speed;
    if (f_top * max_doppler >= 0.5 * fs)
        throw std::invalid_argument("synthesize_waveforms: Doppler-shifted signal would alias");

    const double chirp_rate = probe.kind == ProbeKind::Chirp ? (f_hi - f_lo) / duration : 0.0;
    auto waveform = [&](double tau) {
        if (probe.kind == ProbeKind::Chirp)
            return std::sin(kTwoPi * (f_lo * tau + 0.5 * chirp_rate * tau * tau));
        return std::sin(kTwoPi * k.carrier_hz * tau);
    };

    const std::size_t n = static_cast<std::size_t>(std::llround(duration * fs));
    if (n < 2) throw std::invalid_argument("synthesize_waveforms: duration too short for fs");

    SampledFrame frame;
    frame.fs = fs;
    frame.ch1.resize(n);
    frame.ch2.resize(n);

    const double amp_f = 1.0 / std::max(d_f, kAttenuationRefDist);
    const double amp_m = 1.0 / std::max(d_m, kAttenuationRefDist);
    const double scale_f = 1.0 - rdot_f / k.sound_speed;
    const double scale_m = 1.0 - rdot_m / k.sound_speed;

    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / fs;
        frame.ch1[i] = amp_f * waveform(scale_f * t - d_f / k.sound_speed);
        frame.ch2[i] = amp_m * waveform(scale_m * t - d_m / k.sound_speed);
    }
    if (noise.awgn_snr_db < kNoiselessSnrDb) {
        const double snr = std::pow(10.0, noise.awgn_snr_db / 10.0);
        const double sig_f = std::sqrt(0.5 * amp_f * amp_f / snr);
        const double sig_m = std::sqrt(0.5 * amp_m * amp_m / snr);
        for (std::size_t i = 0; i < n; ++i) frame.ch1[i] += sig_f * rng.normal();
        for (std::size_t i = 0; i < n; ++i) frame.ch2[i] += sig_m * rng.normal();
    }
    return frame;
}

}  // namespace hydrotrack
