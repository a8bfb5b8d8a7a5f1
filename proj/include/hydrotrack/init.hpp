#pragma once

// Filter initialization from early measurement bursts: the Naive,
// Random-Sphere, and TDOA-LS baselines, and the locus-conditioned MAP
// scheme that samples the first-frame TDOA hyperboloid and scores
// candidates by measurement residual minus a log-det Fisher information
// conditioning term.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "hydrotrack/channel.hpp"
#include "hydrotrack/common.hpp"
#include "hydrotrack/geometry.hpp"
#include "hydrotrack/motion.hpp"
#include "hydrotrack/ukf.hpp"

namespace hydrotrack {

class EmptyLocusError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InfeasibleBoundsError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class InitializerKind { Naive, RandomSphere, TdoaLs, LcMap };

inline const char* initializer_name(InitializerKind k) {
    switch (k) {
        case InitializerKind::Naive: return "naive";
        case InitializerKind::RandomSphere: return "random";
        case InitializerKind::TdoaLs: return "tdoa_ls";
        case InitializerKind::LcMap: return "lc_map";
    }
    return "?";
}

struct Burst {
    std::vector<MeasurementFrame> frames;

    void validate() const {
        if (frames.empty()) throw std::invalid_argument("Burst: needs at least one frame");
        for (std::size_t i = 1; i < frames.size(); ++i)
            if (frames[i].t < frames[i - 1].t) throw std::invalid_argument("Burst: frames must be time-ordered");
    }
};

struct LcMapConfig {
    int m_pos = 512;            // candidate positions on the TDOA locus
    int m_vel = 32;             // velocity candidates per position
    double lambda = 1.0;        // weight of the Fisher-information term
    double eps_fim = 1e-6;      // conditioning jitter added to the FIM
    double max_radius = 30.0;   // candidate radius bound around the receiver midpoint, m
    double depth_min = -30.0;   // candidate depth window, m; submerged sources only
    double depth_max = 0.0;
    double v_max = 3.0;         // speed bound for velocity candidates, m/s
    int polish_iters = 10;      // Gauss-Newton polish cap on the winner
    double polish_trust_m = 5.0;

    void validate() const {
        if (m_pos < 1 || m_vel < 1) throw std::invalid_argument("LcMapConfig: m_pos/m_vel must be >= 1");
        if (!(lambda >= 0.0)) throw std::invalid_argument("LcMapConfig: lambda must be >= 0");
        if (!(eps_fim > 0.0)) throw std::invalid_argument("LcMapConfig: eps_fim must be > 0");
        if (!(max_radius > 0.0)) throw std::invalid_argument("LcMapConfig: max_radius must be > 0");
        if (!(depth_min < depth_max)) throw std::invalid_argument("LcMapConfig: empty depth window");
        if (!(v_max > 0.0)) throw std::invalid_argument("LcMapConfig: v_max must be > 0");
    }
};

// Diagonal initial covariance entries for each state family. The bias and
// higher-order priors are deliberately tight: loose ones let those states
// soak up the very residuals that drive position convergence, and a loose
// acceleration or turn-rate prior lets a poor initial position launch the
// extrapolated state.
struct InitialCovariance {
    double pos_var = 16.0;        // (4 m)^2
    double vel_var = 1.0;         // (1 m/s)^2
    double accel_var = 4e-4;      // (0.02 m/s^2)^2
    double speed_var = 1.0;       // ctrv horizontal speed
    double heading_var = 0.27;    // (30 deg)^2
    double turn_var = 0.0025;     // (0.05 rad/s)^2
    double pos_bias_var = 0.01;   // (0.1 m)^2
    double vel_bias_var = 0.01;   // (0.1 m/s)^2
};

// Builds a layout-tagged state around (p, v) with zero biases and the given
// diagonal covariance template.
inline GaussianState make_gaussian_state(ModelKind model, const Vec3& p, const Vec3& v,
                                         const InitialCovariance& p0 = {}) {
    StateVector s(model);
    s.x.segment<3>(0) = p;
    Eigen::VectorXd d(state_dim(model));
    switch (model) {
        case ModelKind::Static:
            d << p0.pos_var, p0.pos_var, p0.pos_var, p0.pos_bias_var;
            break;
        case ModelKind::Cv:
            s.x.segment<3>(3) = v;
            d << p0.pos_var, p0.pos_var, p0.pos_var, p0.vel_var, p0.vel_var, p0.vel_var, p0.pos_bias_var,
                p0.vel_bias_var;
            break;
        case ModelKind::Ca:
            s.x.segment<3>(3) = v;
            d << p0.pos_var, p0.pos_var, p0.pos_var, p0.vel_var, p0.vel_var, p0.vel_var, p0.accel_var,
                p0.accel_var, p0.accel_var, p0.pos_bias_var, p0.vel_bias_var;
            break;
        case ModelKind::Ctrv: {
            const double speed_h = std::hypot(v.x(), v.y());
            s.x[3] = speed_h;
            s.x[4] = speed_h > 1e-9 ? std::atan2(v.y(), v.x()) : 0.0;
            s.x[5] = 0.0;
            s.x[6] = v.z();
            d << p0.pos_var, p0.pos_var, p0.pos_var, p0.speed_var, p0.heading_var, p0.turn_var, p0.vel_var,
                p0.pos_bias_var, p0.vel_bias_var;
            break;
        }
    }
    return GaussianState(std::move(s), d.asDiagonal());
}

struct InitResult {
    GaussianState state;
    bool converged = true;       // TDOA-LS iteration cap flag
    bool fallback_naive = false; // LC-MAP had no usable candidate
};

// Midpoint between the hydrophones, zero velocity.
inline InitResult init_naive(const ReceiverPair& rx, ModelKind model, const InitialCovariance& p0 = {}) {
    detail::check_pair(rx);
    const Vec3 mid = 0.5 * (rx.p_fixed + rx.p_mobile);
    return {make_gaussian_state(model, mid, Vec3::Zero(), p0)};
}

// ---------------------------------------------------------------------------
// TDOA locus sampling
// ---------------------------------------------------------------------------

namespace detail {

inline void orthonormal_complement(const Vec3& axis, Vec3& n1, Vec3& n2) {
    const Vec3 seed = std::abs(axis.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
    n1 = axis.cross(seed).normalized();
    n2 = axis.cross(n1).normalized();
}

}  // namespace detail

// Uniform samples on the hyperboloid sheet { p : ||p - p_m|| - ||p - p_f|| = rd },
// parameterized by range along the baseline axis and azimuth about it, kept
// within max_radius of the receiver midpoint and inside the depth window.
inline std::vector<Vec3> sample_tdoa_locus(double rd, const ReceiverPair& rx, int m,
                                           const LcMapConfig& cfg, Rng& rng) {
    detail::check_pair(rx);
    cfg.validate();
    if (m < 1) throw std::invalid_argument("sample_tdoa_locus: m must be >= 1");
    const double baseline = rx.baseline();
    if (std::abs(rd) >= baseline)
        throw EmptyLocusError("sample_tdoa_locus: |rd| >= baseline, locus is empty");

    const Vec3 mid = 0.5 * (rx.p_fixed + rx.p_mobile);
    const Vec3 axis = (rx.p_mobile - rx.p_fixed) / baseline;
    Vec3 n1, n2;
    detail::orthonormal_complement(axis, n1, n2);

    const double a = 0.5 * rd;  // signed semi-axis
    const double c_half = 0.5 * baseline;
    const double b = std::sqrt(std::max(c_half * c_half - a * a, 0.0));
    if (cfg.max_radius <= std::abs(a))
        throw InfeasibleBoundsError("sample_tdoa_locus: radius bound smaller than the locus vertex");
    // distance^2 from mid = a^2 + c_half^2 * sinh^2(mu)
    const double sinh_max = std::sqrt(cfg.max_radius * cfg.max_radius - a * a) / c_half;

    std::vector<Vec3> out;
    out.reserve(static_cast<std::size_t>(m));
    const int max_attempts = 256 * m;
    int attempts = 0;
    while (static_cast<int>(out.size()) < m) {
        if (++attempts > max_attempts)
            throw InfeasibleBoundsError("sample_tdoa_locus: depth window rejects all candidates");
        const double sh = rng.uniform(0.0, sinh_max);
        const double mu_cosh = std::sqrt(1.0 + sh * sh);
        const double psi = rng.uniform(0.0, kTwoPi);
        const Vec3 p = mid - a * mu_cosh * axis + b * sh * (std::cos(psi) * n1 + std::sin(psi) * n2);
        if (p.z() < cfg.depth_min || p.z() > cfg.depth_max) continue;
        out.push_back(p);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

// Random candidates on spheres around the receiver midpoint, keeping the one
// whose predicted RD best matches the first measurement. The sphere radius
// is redrawn per candidate; the residual selection supplies the consistency
// that a literal sphere cannot.
inline InitResult init_random_sphere(const Burst& burst, const ReceiverPair& rx, const LcMapConfig& cfg,
                                     Rng& rng, ModelKind model, const InitialCovariance& p0 = {}) {
    burst.validate();
    cfg.validate();
    detail::check_pair(rx);
    const double rd1 = burst.frames.front().rd;
    const Vec3 mid = 0.5 * (rx.p_fixed + rx.p_mobile);

    double best_resid = std::numeric_limits<double>::infinity();
    Vec3 best = mid;
    for (int i = 0; i < cfg.m_pos; ++i) {
        const double radius = rng.uniform(0.5, cfg.max_radius);
        Vec3 dir(rng.normal(), rng.normal(), rng.normal());
        if (dir.norm() < 1e-12) continue;
        const Vec3 p = mid + radius * dir.normalized();
        double resid;
        try {
            resid = std::abs(range_difference({p, Vec3::Zero()}, rx) - rd1);
        } catch (const DegenerateGeometryError&) {
            continue;
        }
        if (resid < best_resid) {
            best_resid = resid;
            best = p;
        }
    }
    return {make_gaussian_state(model, best, Vec3::Zero(), p0)};
}

// Damped Gauss-Newton on r(p) = RD(p) - rd from the midpoint start. One TDOA
// equation underdetermines p; the damping plus the start point select the
// solution on the locus nearest the midpoint.
inline InitResult init_tdoa_ls(const Burst& burst, const ReceiverPair& rx, ModelKind model,
                               const InitialCovariance& p0 = {}, int max_iters = 50,
                               double step_tol = 1e-3) {
    burst.validate();
    detail::check_pair(rx);
    const double rd1 = burst.frames.front().rd;

    Vec3 p = 0.5 * (rx.p_fixed + rx.p_mobile);
    double damping = 1e-3;
    bool converged = false;
    for (int it = 0; it < max_iters; ++it) {
        const double resid = range_difference({p, Vec3::Zero()}, rx) - rd1;
        if (std::abs(resid) < 1e-9) {
            converged = true;
            break;
        }
        const Vec3 u_m = detail::los_unit(rx.p_mobile, p, "mobile");
        const Vec3 u_f = detail::los_unit(rx.p_fixed, p, "fixed");
        const Vec3 g = u_m - u_f;
        const double gtg = g.squaredNorm();
        if (gtg < 1e-18) break;  // stationary direction; cannot improve
        const Vec3 step = -(resid / (gtg + damping)) * g;
        const Vec3 cand = p + step;
        double cand_resid;
        try {
            cand_resid = range_difference({cand, Vec3::Zero()}, rx) - rd1;
        } catch (const DegenerateGeometryError&) {
            damping *= 10.0;
            continue;
        }
        if (std::abs(cand_resid) <= std::abs(resid)) {
            p = cand;
            damping = std::max(damping * 0.5, 1e-9);
            if (step.norm() < step_tol) {
                converged = true;
                break;
            }
        } else {
            damping *= 10.0;
        }
    }
    InitResult r{make_gaussian_state(model, p, Vec3::Zero(), p0)};
    r.converged = converged;
    return r;
}

// ---------------------------------------------------------------------------
// LC-MAP
// ---------------------------------------------------------------------------

// Quadratic measurement residual of a constant-velocity candidate over the
// burst; the candidate position is anchored at the first frame time.
inline double lcmap_cost(const Vec3& p, const Vec3& v, const Burst& burst, const MeasurementNoise& noise) {
    burst.validate();
    const Eigen::Matrix2d r_inv = noise.R.inverse();
    const double t0 = burst.frames.front().t;
    double cost = 0.0;
    for (const MeasurementFrame& f : burst.frames) {
        const Vec3 pk = p + v * (f.t - t0);
        const Vec2 zh = predict_measurement({pk, v}, f.rx);
        const Vec2 dz(f.rd - zh[0], f.rrd - zh[1]);
        cost += dz.dot(r_inv * dz);
    }
    return cost;
}

// Fisher information of (p, v) accumulated over the burst:
// F = sum_k H_k^T R^-1 H_k with H_k the measurement Jacobian at frame k.
inline Eigen::Matrix<double, 6, 6> lcmap_fim(const Vec3& p, const Vec3& v, const Burst& burst,
                                             const MeasurementNoise& noise) {
    burst.validate();
    const Eigen::Matrix2d r_inv = noise.R.inverse();
    const double t0 = burst.frames.front().t;
    Eigen::Matrix<double, 6, 6> fim = Eigen::Matrix<double, 6, 6>::Zero();
    for (const MeasurementFrame& f : burst.frames) {
        const Vec3 pk = p + v * (f.t - t0);
        const Eigen::Matrix<double, 2, 6> h = measurement_jacobian({pk, v}, f.rx);
        fim += h.transpose() * r_inv * h;
    }
    return fim;
}

namespace detail {

inline double logdet_spd(const Eigen::Matrix<double, 6, 6>& m, bool& ok) {
    Eigen::LLT<Eigen::Matrix<double, 6, 6>> llt(m);
    if (llt.info() != Eigen::Success) {
        ok = false;
        return 0.0;
    }
    ok = true;
    double ld = 0.0;
    for (int i = 0; i < 6; ++i) ld += std::log(llt.matrixL()(i, i));
    return 2.0 * ld;
}

// Gauss-Newton polish of the winning candidate on the burst residual alone.
// Steps that increase the cost are rejected and the total position move is
// trust-region limited so the candidate stays near the sampled locus.
inline void lcmap_polish(Vec3& p, Vec3& v, const Burst& burst, const MeasurementNoise& noise,
                         const LcMapConfig& cfg) {
    const Vec3 p_start = p;
    const Eigen::Matrix2d r_inv = noise.R.inverse();
    const double t0 = burst.frames.front().t;
    double damping = 1e-3;
    double cost = lcmap_cost(p, v, burst, noise);
    for (int it = 0; it < cfg.polish_iters; ++it) {
        Eigen::Matrix<double, 6, 6> jtj = Eigen::Matrix<double, 6, 6>::Zero();
        Eigen::Matrix<double, 6, 1> jtr = Eigen::Matrix<double, 6, 1>::Zero();
        for (const MeasurementFrame& f : burst.frames) {
            const double dt = f.t - t0;
            const Vec3 pk = p + v * dt;
            Eigen::Matrix<double, 2, 6> h;
            Vec2 zh;
            try {
                h = measurement_jacobian({pk, v}, f.rx);
                zh = predict_measurement({pk, v}, f.rx);
            } catch (const DegenerateGeometryError&) {
                return;
            }
            // chain rule through the back-propagation p_k = p + v*dt
            Eigen::Matrix<double, 2, 6> j;
            j.block<2, 3>(0, 0) = h.block<2, 3>(0, 0);
            j.block<2, 3>(0, 3) = h.block<2, 3>(0, 0) * dt + h.block<2, 3>(0, 3);
            const Vec2 dz(f.rd - zh[0], f.rrd - zh[1]);
            jtj += j.transpose() * r_inv * j;
            jtr += j.transpose() * r_inv * dz;
        }
        const Eigen::Matrix<double, 6, 6> lhs =
            jtj + damping * Eigen::Matrix<double, 6, 6>::Identity();
        const Eigen::Matrix<double, 6, 1> step = lhs.ldlt().solve(jtr);
        if (!step.allFinite() || step.norm() < 1e-9) break;
        Vec3 p_new = p + step.head<3>();
        Vec3 v_new = v + step.tail<3>();
        if ((p_new - p_start).norm() > cfg.polish_trust_m) break;
        double cost_new;
        try {
            cost_new = lcmap_cost(p_new, v_new, burst, noise);
        } catch (const DegenerateGeometryError&) {
            break;
        }
        if (cost_new < cost) {
            p = p_new;
            v = v_new;
            cost = cost_new;
            damping = std::max(damping * 0.5, 1e-9);
        } else {
            damping *= 10.0;
        }
    }
}

}  // namespace detail

// Per-candidate scoring trace, mainly for tests and tuning.
struct LcMapDiagnostics {
    std::vector<double> scores;
    std::vector<double> costs;
    bool all_logdet_finite = true;
    double best_score = std::numeric_limits<double>::quiet_NaN();
    double best_cost = std::numeric_limits<double>::quiet_NaN();
};

// Locus-conditioned MAP initialization: positions sampled on the first-frame
// TDOA hyperboloid, velocities with the radial-difference component matched
// to the burst-mean RRD, scored by J(p,v) - lambda*logdet(F + eps*I).
inline InitResult init_lcmap(const Burst& burst, const LcMapConfig& cfg, const MeasurementNoise& noise,
                             Rng& rng, ModelKind model, const InitialCovariance& p0 = {},
                             LcMapDiagnostics* diag = nullptr) {
    burst.validate();
    cfg.validate();
    const MeasurementFrame& first = burst.frames.front();
    detail::check_pair(first.rx);

    std::vector<Vec3> positions = sample_tdoa_locus(first.rd, first.rx, cfg.m_pos, cfg, rng);

    double rrd_mean = 0.0;
    for (const MeasurementFrame& f : burst.frames) rrd_mean += f.rrd;
    rrd_mean /= static_cast<double>(burst.frames.size());

    struct Candidate {
        Vec3 p, v;
        double score;
    };
    std::vector<Candidate> scored;
    scored.reserve(static_cast<std::size_t>(cfg.m_pos) * static_cast<std::size_t>(cfg.m_vel));

    double best_score = std::numeric_limits<double>::infinity();
    int best_idx = -1;

    // Spread of the sampled velocity cloud around each position's best-fit
    // velocity; candidates stay inside the v_max ball either way.
    const double v_spread = std::min(0.5, cfg.v_max);

    for (const Vec3& p : positions) {
        // Best-fit velocity for this position: the burst's RRD equations are
        // linear in v (rrd_k = v . g_k - v_mk . u_mk with g_k = u_mk - u_fk),
        // so a small regularized least squares pins all three components
        // whenever the burst geometry allows. This is the burst analogue of
        // matching the radial-difference component of the first frame.
        // ridge shrinks the burst's weakly observed velocity directions
        // toward zero instead of letting them run to the speed clamp
        Eigen::Matrix3d ata =
            0.01 * static_cast<double>(burst.frames.size()) * Eigen::Matrix3d::Identity();
        Vec3 atb = Vec3::Zero();
        bool degenerate = false;
        const double t0 = first.t;
        for (const MeasurementFrame& f : burst.frames) {
            Vec3 u_m, u_f;
            try {
                // geometry evaluated at the un-propagated candidate: the burst
                // drift is second order for the velocity solve
                u_m = detail::los_unit(f.rx.p_mobile, p, "mobile");
                u_f = detail::los_unit(f.rx.p_fixed, p, "fixed");
            } catch (const DegenerateGeometryError&) {
                degenerate = true;
                break;
            }
            const Vec3 g = u_m - u_f;
            const double target = f.rrd + f.rx.v_mobile.dot(u_m);
            ata += g * g.transpose();
            atb += g * target;
        }
        (void)t0;
        if (degenerate) continue;
        Vec3 v_fit = ata.ldlt().solve(atb);
        if (v_fit.norm() > cfg.v_max) v_fit *= cfg.v_max / v_fit.norm();

        for (int j = 0; j < cfg.m_vel; ++j) {
            Vec3 v = v_fit;
            if (j > 0) {
                Vec3 dir(rng.normal(), rng.normal(), rng.normal());
                const double nrm = dir.norm();
                if (nrm > 1e-12) v += v_spread * std::cbrt(rng.uniform()) * dir / nrm;
                if (v.norm() > cfg.v_max) v *= cfg.v_max / v.norm();
            }
            double cost, ld;
            bool ld_ok = false;
            try {
                cost = lcmap_cost(p, v, burst, noise);
                Eigen::Matrix<double, 6, 6> fim = lcmap_fim(p, v, burst, noise);
                fim += cfg.eps_fim * Eigen::Matrix<double, 6, 6>::Identity();
                ld = detail::logdet_spd(fim, ld_ok);
            } catch (const DegenerateGeometryError&) {
                continue;
            }
            if (diag) diag->all_logdet_finite = diag->all_logdet_finite && ld_ok && std::isfinite(ld);
            if (!ld_ok || !std::isfinite(cost) || !std::isfinite(ld)) continue;
            const double score = cost - cfg.lambda * ld;
            scored.push_back({p, v, score});
            if (diag) {
                diag->scores.push_back(score);
                diag->costs.push_back(cost);
            }
            if (score < best_score) {
                best_score = score;
                best_idx = static_cast<int>(scored.size()) - 1;
            }
        }
    }

    if (best_idx < 0) {
        InitResult r = init_naive(first.rx, model, p0);
        r.fallback_naive = true;
        return r;
    }

    Vec3 p_best = scored[static_cast<std::size_t>(best_idx)].p;
    Vec3 v_best = scored[static_cast<std::size_t>(best_idx)].v;
    if (cfg.polish_iters > 0) detail::lcmap_polish(p_best, v_best, burst, noise, cfg);
    if (diag) {
        diag->best_score = scored[static_cast<std::size_t>(best_idx)].score;
        diag->best_cost = lcmap_cost(p_best, v_best, burst, noise);
    }

    // Initial covariance from the spread of the best 5 % of candidates,
    // floored at the defaults.
    const std::size_t n_top = std::max<std::size_t>(2, scored.size() / 20);
    std::vector<std::size_t> order(scored.size());
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(n_top, order.size())),
                      order.end(),
                      [&](std::size_t a, std::size_t b) { return scored[a].score < scored[b].score; });

    Vec3 mean_p = Vec3::Zero(), mean_v = Vec3::Zero();
    const std::size_t n_used = std::min(n_top, order.size());
    for (std::size_t i = 0; i < n_used; ++i) {
        mean_p += scored[order[i]].p;
        mean_v += scored[order[i]].v;
    }
    mean_p /= static_cast<double>(n_used);
    mean_v /= static_cast<double>(n_used);
    Vec3 var_p = Vec3::Zero(), var_v = Vec3::Zero();
    for (std::size_t i = 0; i < n_used; ++i) {
        var_p += (scored[order[i]].p - mean_p).cwiseAbs2();
        var_v += (scored[order[i]].v - mean_v).cwiseAbs2();
    }
    var_p /= static_cast<double>(n_used);
    var_v /= static_cast<double>(n_used);

    InitialCovariance scaled = p0;
    scaled.pos_var = std::max(var_p.maxCoeff(), p0.pos_var);
    scaled.vel_var = std::max(var_v.maxCoeff(), p0.vel_var);
    scaled.speed_var = std::max(var_v.head<2>().maxCoeff(), p0.speed_var);

    return {make_gaussian_state(model, p_best, v_best, scaled)};
}

// Dispatch helper used by the harness and the CLI.
inline InitResult run_initializer(InitializerKind kind, const Burst& burst, const LcMapConfig& cfg,
                                  const MeasurementNoise& noise, Rng& rng, ModelKind model,
                                  const InitialCovariance& p0 = {}) {
    burst.validate();
    const ReceiverPair& rx = burst.frames.front().rx;
    switch (kind) {
        case InitializerKind::Naive: return init_naive(rx, model, p0);
        case InitializerKind::RandomSphere: return init_random_sphere(burst, rx, cfg, rng, model, p0);
        case InitializerKind::TdoaLs: return init_tdoa_ls(burst, rx, model, p0);
        case InitializerKind::LcMap: return init_lcmap(burst, cfg, noise, rng, model, p0);
    }
    throw std::invalid_argument("run_initializer: unknown initializer");
}

}  // namespace hydrotrack
