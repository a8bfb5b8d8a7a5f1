#pragma once

// Waveform front-end: zero-phase Butterworth band-pass, normalized
// cross-correlation TDOA with sub-sample refinement, narrowband TDOA
// unwrapping, and cross-channel FDOA estimation.

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "hydrotrack/common.hpp"

namespace hydrotrack {

using cplx = std::complex<double>;

// One synchronized two-channel block. Channel 1 is the fixed hydrophone,
// channel 2 the mobile one.
struct SampledFrame {
    std::vector<double> ch1;
    std::vector<double> ch2;
    double fs = 0.0;  // Hz
    double t0 = 0.0;  // frame start, s

    std::size_t size() const { return ch1.size(); }

    void validate() const {
        if (ch1.size() != ch2.size()) throw std::invalid_argument("SampledFrame: channel lengths differ");
        if (ch1.size() < 2) throw std::invalid_argument("SampledFrame: need at least 2 samples");
        if (!(fs > 0.0)) throw std::invalid_argument("SampledFrame: fs must be > 0");
    }
};

struct BandSpec {
    double f_lo = 0.0;  // Hz
    double f_hi = 0.0;  // Hz
    int order = 4;      // analog prototype order; the band-pass transform doubles the pole count

    void validate(double fs) const {
        if (!(order >= 1)) throw std::invalid_argument("BandSpec: order must be >= 1");
        if (!(f_lo > 0.0 && f_lo < f_hi && f_hi < 0.5 * fs))
            throw std::invalid_argument("BandSpec: need 0 < f_lo < f_hi < fs/2");
    }
};

// ---------------------------------------------------------------------------
// Butterworth band-pass, second-order sections
// ---------------------------------------------------------------------------

struct Biquad {
    double b0 = 1.0, b1 = 0.0, b2 = 0.0;  // numerator
    double a1 = 0.0, a2 = 0.0;            // denominator (a0 == 1)
};

struct SosFilter {
    std::vector<Biquad> sections;
    double max_pole_radius = 0.0;

    // Samples for the impulse response to decay below 0.1 % of its envelope.
    int settling_samples() const {
        if (max_pole_radius <= 0.0) return 1;
        if (max_pole_radius >= 1.0) return 1 << 24;
        const double n = std::log(1e-3) / std::log(max_pole_radius);
        return std::max(1, static_cast<int>(std::ceil(n)));
    }

    // Direct form II transposed, zero initial state.
    void apply_forward(std::vector<double>& x) const {
        for (const Biquad& s : sections) {
            double z1 = 0.0, z2 = 0.0;
            for (double& v : x) {
                const double in = v;
                const double out = s.b0 * in + z1;
                z1 = s.b1 * in - s.a1 * out + z2;
                z2 = s.b2 * in - s.a2 * out;
                v = out;
            }
        }
    }
};

// Pole-placement design via the analog prototype, low-pass -> band-pass
// transform, and bilinear mapping. `order` is the prototype order, so the
// returned cascade has 2*order poles (the MATLAB/scipy convention for
// "order-N Butterworth band-pass").
inline SosFilter design_butterworth_bandpass(const BandSpec& band, double fs) {
    band.validate(fs);
    const int n = band.order;
    const double k_bl = 2.0 * fs;  // bilinear constant
    const double w_lo = k_bl * std::tan(kPi * band.f_lo / fs);
    const double w_hi = k_bl * std::tan(kPi * band.f_hi / fs);
    const double w0 = std::sqrt(w_lo * w_hi);
    const double bw = w_hi - w_lo;

    // Representative analog band-pass poles, one per conjugate pair.
    std::vector<cplx> reps;
    auto lp_to_bp = [&](const cplx& p_lp) {
        const cplx half = 0.5 * bw * p_lp;
        const cplx disc = std::sqrt(half * half - cplx(w0 * w0, 0.0));
        return std::pair<cplx, cplx>(half + disc, half - disc);
    };
    for (int k = 1; k <= n / 2; ++k) {
        const double theta = kPi * (2.0 * k + n - 1.0) / (2.0 * n);
        const cplx p_lp(std::cos(theta), std::sin(theta));  // upper half plane
        auto [s1, s2] = lp_to_bp(p_lp);
        reps.push_back(s1);
        reps.push_back(s2);
    }
    std::vector<cplx> real_axis_poles;  // analog, from an odd prototype's real pole
    if (n % 2 == 1) {
        auto [s1, s2] = lp_to_bp(cplx(-1.0, 0.0));
        if (std::abs(s1.imag()) > 1e-9 * std::abs(s1)) {
            reps.push_back(s1.imag() > 0 ? s1 : std::conj(s1));  // conjugate pair
        } else {
            real_axis_poles.push_back(s1);
            real_axis_poles.push_back(s2);
        }
    }

    auto bilinear = [&](const cplx& s) { return (k_bl + s) / (k_bl - s); };

    SosFilter f;
    for (const cplx& s : reps) {
        const cplx z = bilinear(s);
        Biquad q;
        q.b0 = 1.0;
        q.b1 = 0.0;
        q.b2 = -1.0;  // one zero at z=+1 (s=0), one at z=-1 (s=inf)
        q.a1 = -2.0 * z.real();
        q.a2 = std::norm(z);
        f.sections.push_back(q);
        f.max_pole_radius = std::max(f.max_pole_radius, std::abs(z));
    }
    if (!real_axis_poles.empty()) {
        const double z1 = bilinear(real_axis_poles[0]).real();
        const double z2 = bilinear(real_axis_poles[1]).real();
        Biquad q;
        q.b0 = 1.0;
        q.b1 = 0.0;
        q.b2 = -1.0;
        q.a1 = -(z1 + z2);
        q.a2 = z1 * z2;
        f.sections.push_back(q);
        f.max_pole_radius = std::max({f.max_pole_radius, std::abs(z1), std::abs(z2)});
    }

    // Normalize to unit gain at the band center.
    const double fc = fs / kPi * std::atan(w0 / k_bl);
    const cplx ejw = std::exp(cplx(0.0, -kTwoPi * fc / fs));
    cplx h(1.0, 0.0);
    for (const Biquad& q : f.sections) {
        h *= (q.b0 + q.b1 * ejw + q.b2 * ejw * ejw) / (1.0 + q.a1 * ejw + q.a2 * ejw * ejw);
    }
    const double g = std::abs(h);
    if (!(g > 0.0)) throw std::runtime_error("Butterworth design failed: zero center-band gain");
    const double per_section = std::pow(1.0 / g, 1.0 / static_cast<double>(f.sections.size()));
    for (Biquad& q : f.sections) {
        q.b0 *= per_section;
        q.b1 *= per_section;
        q.b2 *= per_section;
    }
    return f;
}

namespace detail {

// Forward-backward filtering with odd-reflection edge padding.
inline std::vector<double> filtfilt(const SosFilter& f, const std::vector<double>& x, int pad) {
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(x.size());
    std::vector<double> ext;
    ext.reserve(x.size() + 2 * pad);
    for (int i = pad; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
    ext.insert(ext.end(), x.begin(), x.end());
    for (int i = 1; i <= pad; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

    f.apply_forward(ext);
    std::reverse(ext.begin(), ext.end());
    f.apply_forward(ext);
    std::reverse(ext.begin(), ext.end());

    return std::vector<double>(ext.begin() + pad, ext.begin() + pad + n);
}

}  // namespace detail

// Applies the band-pass forward and backward to both channels: zero net group
// delay, so inter-channel delays of in-band components are preserved.
inline SampledFrame bandpass_zero_phase(const SampledFrame& frame, const BandSpec& band) {
    frame.validate();
    const SosFilter f = design_butterworth_bandpass(band, frame.fs);
    const int pad = 3 * f.settling_samples();
    if (static_cast<int>(frame.size()) <= pad)
        throw std::invalid_argument("bandpass_zero_phase: frame shorter than 3x the filter settling length");
    SampledFrame out;
    out.fs = frame.fs;
    out.t0 = frame.t0;
    out.ch1 = detail::filtfilt(f, frame.ch1, pad);
    out.ch2 = detail::filtfilt(f, frame.ch2, pad);
    return out;
}

// ---------------------------------------------------------------------------
// TDOA via normalized cross-correlation
// ---------------------------------------------------------------------------

struct TdoaEstimate {
    double tdoa_s = 0.0;
    double peak_correlation = 0.0;
    // Set when the two largest correlation peaks are within 1 % of each other
    // (typical for narrowband tones, whose correlation repeats every period).
    bool ambiguous_peak = false;
};

namespace detail {

inline std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

// Linear cross-correlation c[l] = sum_n ch1[n] * ch2[n+l] for |l| <= max_lag,
// returned as a vector indexed by l + max_lag.
inline std::vector<double> cross_correlation(const std::vector<double>& a, const std::vector<double>& b,
                                             int max_lag) {
    const std::size_t n = a.size();
    const std::size_t m = next_pow2(n + static_cast<std::size_t>(max_lag) + 1);
    std::vector<double> pa(m, 0.0), pb(m, 0.0);
    std::copy(a.begin(), a.end(), pa.begin());
    std::copy(b.begin(), b.end(), pb.begin());

    Eigen::FFT<double> fft;
    std::vector<cplx> fa, fb;
    fft.fwd(fa, pa);
    fft.fwd(fb, pb);
    for (std::size_t i = 0; i < m; ++i) fa[i] = std::conj(fa[i]) * fb[i];
    std::vector<cplx> c;
    fft.inv(c, fa);

    std::vector<double> out(2 * static_cast<std::size_t>(max_lag) + 1);
    for (int l = -max_lag; l <= max_lag; ++l) {
        const std::size_t idx = l >= 0 ? static_cast<std::size_t>(l) : m + static_cast<std::size_t>(l);
        out[static_cast<std::size_t>(l + max_lag)] = c[idx].real();
    }
    return out;
}

}  // namespace detail

// Peak of the energy-normalized cross-correlation over |lag| <= max_lag, with
// parabolic sub-sample refinement. Positive TDOA means channel 2 lags
// channel 1 (the mobile hydrophone hears the source later).
inline TdoaEstimate estimate_tdoa_xcorr(const SampledFrame& frame, int max_lag) {
    frame.validate();
    if (max_lag < 1 || max_lag >= static_cast<int>(frame.size()))
        throw std::invalid_argument("estimate_tdoa_xcorr: need 1 <= max_lag < frame length");

    double e1 = 0.0, e2 = 0.0;
    for (double v : frame.ch1) e1 += v * v;
    for (double v : frame.ch2) e2 += v * v;
    if (!(e1 > 0.0) || !(e2 > 0.0))
        throw std::invalid_argument("estimate_tdoa_xcorr: zero-energy channel");

    std::vector<double> r = detail::cross_correlation(frame.ch1, frame.ch2, max_lag);
    const double norm = std::sqrt(e1) * std::sqrt(e2);
    for (double& v : r) v /= norm;

    std::size_t peak = 0;
    for (std::size_t i = 1; i < r.size(); ++i)
        if (r[i] > r[peak]) peak = i;

    // Ambiguity check against the best competing local maximum.
    double runner_up = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i + 1 < r.size(); ++i) {
        if (i == peak) continue;
        if (r[i] >= r[i - 1] && r[i] >= r[i + 1]) runner_up = std::max(runner_up, r[i]);
    }

    TdoaEstimate est;
    est.peak_correlation = r[peak];
    est.ambiguous_peak = std::isfinite(runner_up) && r[peak] > 0.0 &&
                         (r[peak] - runner_up) < 0.01 * std::abs(r[peak]);

    double lag = static_cast<double>(peak) - max_lag;
    if (peak > 0 && peak + 1 < r.size()) {
        const double denom = r[peak - 1] - 2.0 * r[peak] + r[peak + 1];
        if (std::abs(denom) > 1e-30) {
            double delta = 0.5 * (r[peak - 1] - r[peak + 1]) / denom;
            delta = std::clamp(delta, -0.5, 0.5);
            lag += delta;
        }
    }
    est.tdoa_s = lag / frame.fs;
    return est;
}

// ---------------------------------------------------------------------------
// Narrowband TDOA unwrapping
// ---------------------------------------------------------------------------

// For continuous tones the cross-correlation delay is ambiguous modulo the
// tone period T0. The track keeps the previous unwrapped delay and shifts
// each new measurement by the integer multiple of T0 that lands closest.
struct TdoaTrack {
    double period_s = 0.0;  // T0 = 1/f0
    bool initialized = false;
    double last_unwrapped = 0.0;

    explicit TdoaTrack(double t0_period = 0.0) : period_s(t0_period) {}
};

inline double unwrap_tdoa(TdoaTrack& track, double measured_s) {
    if (!(track.period_s > 0.0)) throw std::invalid_argument("TdoaTrack: period must be > 0");
    if (!track.initialized) {
        track.initialized = true;
        track.last_unwrapped = measured_s;
        return measured_s;
    }
    const double q = (track.last_unwrapped - measured_s) / track.period_s;
    const double n_lo = std::floor(q);
    const double n_hi = n_lo + 1.0;
    const double r_lo = std::abs(measured_s + n_lo * track.period_s - track.last_unwrapped);
    const double r_hi = std::abs(measured_s + n_hi * track.period_s - track.last_unwrapped);
    double n;
    if (r_lo < r_hi) {
        n = n_lo;
    } else if (r_hi < r_lo) {
        n = n_hi;
    } else {
        n = std::abs(n_lo) <= std::abs(n_hi) ? n_lo : n_hi;  // tie: smaller |n|
    }
    const double unwrapped = measured_s + n * track.period_s;
    track.last_unwrapped = unwrapped;
    return unwrapped;
}

// ---------------------------------------------------------------------------
// FDOA estimation
// ---------------------------------------------------------------------------

enum class FdoaMethod {
    // Rotation rate of the in-band analytic cross-signal across sub-blocks.
    // Equals the inter-channel frequency offset exactly for tones; this is
    // the estimator the RD/RRD pipeline uses.
    CrossPhaseRotation,
    // Literal linear slope of the cross-spectral phase over frequency. For a
    // stationary tone pair this recovers inter-channel *delay*, not a
    // frequency offset; kept selectable for comparison.
    SpectralPhaseSlope,
};

struct FdoaEstimate {
    double value = 0.0;    // Hz for CrossPhaseRotation, seconds-equivalent slope/2pi for SpectralPhaseSlope
    double quality = 1.0;  // in (0, 1]; inverse residual of the phase fit
};

namespace detail {

// Minimum in-band energy fraction for either channel before the estimate is
// considered meaningful.
constexpr double kMinBandEnergyFraction = 1e-12;
// Cross-spectral bins below this fraction of the in-band peak are ignored.
constexpr double kBinMagnitudeFraction = 0.1;

struct BandBins {
    std::vector<cplx> s1, s2;  // full spectra
    std::size_t k_lo = 0, k_hi = 0;
};

inline BandBins band_spectra(const SampledFrame& frame, const BandSpec& band) {
    frame.validate();
    band.validate(frame.fs);
    const std::size_t n = frame.size();
    Eigen::FFT<double> fft;
    BandBins out;
    std::vector<double> x1 = frame.ch1, x2 = frame.ch2;
    fft.fwd(out.s1, x1);
    fft.fwd(out.s2, x2);
    out.k_lo = static_cast<std::size_t>(std::ceil(band.f_lo * n / frame.fs));
    out.k_hi = static_cast<std::size_t>(std::floor(band.f_hi * n / frame.fs));
    out.k_lo = std::max<std::size_t>(out.k_lo, 1);
    out.k_hi = std::min(out.k_hi, n / 2);
    if (out.k_lo > out.k_hi) throw std::invalid_argument("FDOA: band contains no DFT bins at this frame length");

    double tot1 = 0.0, tot2 = 0.0, in1 = 0.0, in2 = 0.0;
    for (std::size_t k = 0; k < out.s1.size(); ++k) {
        tot1 += std::norm(out.s1[k]);
        tot2 += std::norm(out.s2[k]);
    }
    for (std::size_t k = out.k_lo; k <= out.k_hi; ++k) {
        in1 += std::norm(out.s1[k]);
        in2 += std::norm(out.s2[k]);
    }
    if (!(tot1 > 0.0) || !(tot2 > 0.0) || in1 < kMinBandEnergyFraction * tot1 ||
        in2 < kMinBandEnergyFraction * tot2)
        throw std::invalid_argument("FDOA: insufficient in-band energy");
    return out;
}

}  // namespace detail

inline FdoaEstimate estimate_fdoa_phase_slope(const SampledFrame& frame, const BandSpec& band,
                                              FdoaMethod method = FdoaMethod::CrossPhaseRotation,
                                              int sub_blocks = 32) {
    detail::BandBins bins = detail::band_spectra(frame, band);
    const std::size_t n = frame.size();

    if (method == FdoaMethod::SpectralPhaseSlope) {
        // Weighted LS fit of the unwrapped cross-phase over the retained bins.
        double peak = 0.0;
        for (std::size_t k = bins.k_lo; k <= bins.k_hi; ++k)
            peak = std::max(peak, std::abs(bins.s1[k] * std::conj(bins.s2[k])));
        std::vector<double> freq, phase, w;
        double prev = 0.0;
        bool first = true;
        for (std::size_t k = bins.k_lo; k <= bins.k_hi; ++k) {
            const cplx g = bins.s1[k] * std::conj(bins.s2[k]);
            if (std::abs(g) < detail::kBinMagnitudeFraction * peak) continue;
            double ph = std::arg(g);
            if (!first) ph = prev + wrap_angle(ph - prev);
            first = false;
            prev = ph;
            freq.push_back(static_cast<double>(k) * frame.fs / static_cast<double>(n));
            phase.push_back(ph);
            w.push_back(std::abs(g));
        }
        FdoaEstimate est;
        if (freq.size() < 2) {  // single usable bin: no slope information
            est.value = 0.0;
            est.quality = 1.0;
            return est;
        }
        double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
        for (std::size_t i = 0; i < freq.size(); ++i) {
            sw += w[i];
            sx += w[i] * freq[i];
            sy += w[i] * phase[i];
            sxx += w[i] * freq[i] * freq[i];
            sxy += w[i] * freq[i] * phase[i];
        }
        const double denom = sw * sxx - sx * sx;
        const double slope = denom != 0.0 ? (sw * sxy - sx * sy) / denom : 0.0;
        const double intercept = sw != 0.0 ? (sy - slope * sx) / sw : 0.0;
        double rss = 0.0;
        for (std::size_t i = 0; i < freq.size(); ++i) {
            const double r = phase[i] - (intercept + slope * freq[i]);
            rss += w[i] * r * r;
        }
        est.value = slope / kTwoPi;
        est.quality = 1.0 / (1.0 + std::sqrt(rss / sw));
        return est;
    }

    // CrossPhaseRotation: analytic band-limited signals, then the rotation
    // rate of a1 * conj(a2) measured over sub-block mean phasors.
    std::vector<cplx> a1(n, cplx(0, 0)), a2(n, cplx(0, 0));
    for (std::size_t k = bins.k_lo; k <= bins.k_hi; ++k) {
        a1[k] = 2.0 * bins.s1[k];
        a2[k] = 2.0 * bins.s2[k];
    }
    Eigen::FFT<double> fft;
    std::vector<cplx> t1, t2;
    fft.inv(t1, a1);
    fft.inv(t2, a2);

    const int blocks = std::max(2, std::min<int>(sub_blocks, static_cast<int>(n) / 2));
    const std::size_t blen = n / static_cast<std::size_t>(blocks);
    std::vector<cplx> phasor(static_cast<std::size_t>(blocks), cplx(0, 0));
    for (int b = 0; b < blocks; ++b) {
        cplx acc(0, 0);
        const std::size_t start = static_cast<std::size_t>(b) * blen;
        for (std::size_t i = start; i < start + blen; ++i) acc += t1[i] * std::conj(t2[i]);
        phasor[static_cast<std::size_t>(b)] = acc;
    }
    cplx rot(0, 0);
    for (int b = 0; b + 1 < blocks; ++b) rot += phasor[b + 1] * std::conj(phasor[b]);
    const double t_block = static_cast<double>(blen) / frame.fs;
    const double dphi = std::arg(rot);

    FdoaEstimate est;
    est.value = dphi / (kTwoPi * t_block);
    double rss = 0.0;
    int cnt = 0;
    for (int b = 0; b + 1 < blocks; ++b) {
        const cplx step = phasor[b + 1] * std::conj(phasor[b]);
        if (std::abs(step) <= 0.0) continue;
        const double r = wrap_angle(std::arg(step) - dphi);
        rss += r * r;
        ++cnt;
    }
    est.quality = cnt > 0 ? 1.0 / (1.0 + std::sqrt(rss / cnt)) : 1.0;
    return est;
}

}  // namespace hydrotrack
