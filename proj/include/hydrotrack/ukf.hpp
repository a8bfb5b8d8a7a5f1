#pragma once

// Unscented Kalman filter over the RD/RRD measurement model: scaled
// sigma-point generation, unscented transform through a motion model, and
// the measurement update with additive bias states.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "hydrotrack/channel.hpp"
#include "hydrotrack/geometry.hpp"
#include "hydrotrack/motion.hpp"

namespace hydrotrack {

class FilterDivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct UtParams {
    // alpha = 1 keeps the spread moderate; smaller alpha values give the
    // center point a large negative weight that corrupts the innovation
    // covariance on this measurement model. The kappa default follows the
    // classic 3 - n but is clamped at -2n/3 so the center covariance weight
    // never goes negative (it would for the 11-state layout).
    double alpha = 1.0;
    double beta = 2.0;
    std::optional<double> kappa;

    double resolve_kappa(int n) const {
        return kappa.value_or(std::max(3.0 - static_cast<double>(n), -2.0 / 3.0 * static_cast<double>(n)));
    }

    double lambda(int n) const {
        const double k = resolve_kappa(n);
        const double l = alpha * alpha * (n + k) - n;
        if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("UtParams: alpha must be in (0, 1]");
        if (!(n + l > 0.0)) throw std::invalid_argument("UtParams: n + lambda must be > 0");
        return l;
    }
};

struct GaussianState {
    StateVector mean;
    Eigen::MatrixXd cov;

    GaussianState() = default;
    GaussianState(StateVector m, Eigen::MatrixXd p) : mean(std::move(m)), cov(std::move(p)) {
        if (cov.rows() != mean.dim() || cov.cols() != mean.dim())
            throw std::invalid_argument("GaussianState: covariance size does not match state");
    }
};

struct MeasurementNoise {
    Eigen::Matrix2d R = (Eigen::Matrix2d() << 0.01, 0.0, 0.0, 0.0025).finished();

    static MeasurementNoise from_sigmas(double sigma_rd, double sigma_rrd) {
        MeasurementNoise m;
        m.R << sigma_rd * sigma_rd, 0.0, 0.0, sigma_rrd * sigma_rrd;
        return m;
    }
};

// Maximum absolute jitter added to a covariance diagonal before the filter
// declares divergence instead of silently continuing.
constexpr double kMaxCovJitter = 1e-9;

// Symmetrize and factor into a matrix square root M with M M^T = P, via a
// pivoted LDLT so rank-deficient covariances (pinned state dimensions with
// zero variance) factor exactly instead of needing jitter. Escalating
// diagonal jitter up to max_jitter repairs mildly indefinite inputs before
// giving up.
inline std::optional<Eigen::MatrixXd> cholesky_with_jitter(Eigen::MatrixXd p, double max_jitter = kMaxCovJitter) {
    p = 0.5 * (p + p.transpose()).eval();
    if (!p.allFinite()) return std::nullopt;
    const int n = static_cast<int>(p.rows());

    double jitter = 0.0;
    for (;;) {
        Eigen::LDLT<Eigen::MatrixXd> ldlt(p + jitter * Eigen::MatrixXd::Identity(n, n));
        if (ldlt.info() == Eigen::Success) {
            Eigen::VectorXd d = ldlt.vectorD();
            const double dmax = d.maxCoeff();
            if (dmax >= 0.0 && d.minCoeff() >= -1e-12 * std::max(dmax, 1.0)) {
                for (int i = 0; i < n; ++i) d[i] = std::max(d[i], 0.0);
                Eigen::MatrixXd root = Eigen::MatrixXd(ldlt.matrixL()) * d.cwiseSqrt().asDiagonal();
                return ldlt.transpositionsP().transpose() * root;
            }
        }
        jitter = jitter == 0.0 ? 1e-12 : jitter * 10.0;
        if (jitter > max_jitter) break;
    }
    return std::nullopt;
}

struct SigmaPoints {
    std::vector<Eigen::VectorXd> points;  // 2n+1 columns
    Eigen::VectorXd w_mean;
    Eigen::VectorXd w_cov;
};

inline SigmaPoints sigma_points(const GaussianState& state, const UtParams& params) {
    const int n = state.mean.dim();
    const double lambda = params.lambda(n);
    auto chol = cholesky_with_jitter(state.cov);
    if (!chol) throw FilterDivergenceError("sigma_points: covariance is not positive semidefinite");
    const Eigen::MatrixXd scaled = std::sqrt(n + lambda) * (*chol);

    SigmaPoints sp;
    sp.points.reserve(2 * n + 1);
    sp.points.push_back(state.mean.x);
    for (int i = 0; i < n; ++i) {
        sp.points.push_back(state.mean.x + scaled.col(i));
        sp.points.push_back(state.mean.x - scaled.col(i));
    }
    sp.w_mean = Eigen::VectorXd::Constant(2 * n + 1, 1.0 / (2.0 * (n + lambda)));
    sp.w_cov = sp.w_mean;
    sp.w_mean[0] = lambda / (n + lambda);
    sp.w_cov[0] = sp.w_mean[0] + (1.0 - params.alpha * params.alpha + params.beta);
    return sp;
}

namespace detail {

// Weighted mean of transformed points; the heading dimension (if any) is
// averaged relative to the first point so wrap-around cannot corrupt it.
inline Eigen::VectorXd ut_mean(const std::vector<Eigen::VectorXd>& pts, const Eigen::VectorXd& w,
                               int angle_idx) {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(pts[0].size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
        Eigen::VectorXd d = pts[i] - pts[0];
        if (angle_idx >= 0) d[angle_idx] = wrap_angle(d[angle_idx]);
        mean += w[static_cast<int>(i)] * d;
    }
    mean += pts[0];
    if (angle_idx >= 0) mean[angle_idx] = wrap_angle(mean[angle_idx]);
    return mean;
}

inline Eigen::VectorXd residual(const Eigen::VectorXd& a, const Eigen::VectorXd& b, int angle_idx) {
    Eigen::VectorXd d = a - b;
    if (angle_idx >= 0) d[angle_idx] = wrap_angle(d[angle_idx]);
    return d;
}

}  // namespace detail

// Prediction: unscented transform through the motion model, plus Q.
inline GaussianState ukf_predict(const GaussianState& state, double dt, const ProcessNoiseSpec& noise,
                                 const UtParams& params) {
    const SigmaPoints sp = sigma_points(state, params);
    const ModelKind model = state.mean.model;
    const int angle_idx = heading_index(model);

    std::vector<Eigen::VectorXd> prop;
    prop.reserve(sp.points.size());
    for (const auto& p : sp.points) prop.push_back(propagate(StateVector(model, p), dt).x);

    Eigen::VectorXd mean = detail::ut_mean(prop, sp.w_mean, angle_idx);
    Eigen::MatrixXd cov = process_noise(noise, dt, model);
    for (std::size_t i = 0; i < prop.size(); ++i) {
        const Eigen::VectorXd d = detail::residual(prop[i], mean, angle_idx);
        cov += sp.w_cov[static_cast<int>(i)] * d * d.transpose();
    }
    return GaussianState(StateVector(model, mean), 0.5 * (cov + cov.transpose()));
}

// Sigma points closer to a hydrophone than this are pushed out radially
// before evaluating the measurement function, preserving filter continuity
// near degenerate geometry.
constexpr double kSigmaPointPushIn = 1e-6;   // trigger distance, m
constexpr double kSigmaPointPushOut = 1e-3;  // resulting distance, m

// Measurement function h(x) = [RD + b_p, RRD + b_v] for one state layout.
inline Vec2 measurement_model(const StateVector& s, const ReceiverPair& rx) {
    SourceKinematics kin = kinematics_of(s);
    const Vec3 anchors[2] = {rx.p_fixed, rx.p_mobile};
    const Vec3 others[2] = {rx.p_mobile, rx.p_fixed};
    for (int i = 0; i < 2; ++i) {
        const Vec3 d = kin.position - anchors[i];
        if (d.norm() < kSigmaPointPushIn) {
            Vec3 dir = d;
            if (dir.norm() < 1e-12) {
                dir = anchors[i] - others[i];
                if (dir.norm() < 1e-12) dir = Vec3::UnitZ();
            }
            kin.position = anchors[i] + kSigmaPointPushOut * dir.normalized();
        }
    }
    Vec2 z = predict_measurement(kin, rx);
    z[0] += pos_bias_of(s);
    z[1] += vel_bias_of(s);
    return z;
}

enum class OutlierPolicy {
    Gate,      // reject frames whose innovation Mahalanobis distance exceeds the gate
    InflateR,  // scale R by 1/quality instead of gating
    Off,
};

struct UpdateDiagnostics {
    Vec2 innovation = Vec2::Zero();
    Eigen::Matrix2d innovation_cov = Eigen::Matrix2d::Identity();
    double mahalanobis = 0.0;
    bool gated = false;
};

inline GaussianState ukf_update(const GaussianState& state, const MeasurementFrame& z,
                                const MeasurementNoise& noise, const UtParams& params,
                                UpdateDiagnostics* diag = nullptr,
                                OutlierPolicy policy = OutlierPolicy::Gate, double gate_sigma = 3.0) {
    const SigmaPoints sp = sigma_points(state, params);
    const ModelKind model = state.mean.model;
    const int angle_idx = heading_index(model);

    std::vector<Vec2> zs;
    zs.reserve(sp.points.size());
    for (const auto& p : sp.points) zs.push_back(measurement_model(StateVector(model, p), z.rx));

    Vec2 z_pred = Vec2::Zero();
    for (std::size_t i = 0; i < zs.size(); ++i) z_pred += sp.w_mean[static_cast<int>(i)] * zs[i];

    Eigen::Matrix2d r = noise.R;
    if (policy == OutlierPolicy::InflateR) r /= std::max(z.quality, 1e-3);

    Eigen::Matrix2d s_cov = r;
    Eigen::MatrixXd cross = Eigen::MatrixXd::Zero(state.mean.dim(), 2);
    for (std::size_t i = 0; i < zs.size(); ++i) {
        const Vec2 dz = zs[i] - z_pred;
        const Eigen::VectorXd dx = detail::residual(sp.points[i], state.mean.x, angle_idx);
        s_cov += sp.w_cov[static_cast<int>(i)] * dz * dz.transpose();
        cross += sp.w_cov[static_cast<int>(i)] * dx * dz.transpose();
    }

    const Vec2 innovation(z.rd - z_pred[0], z.rrd - z_pred[1]);
    const Eigen::Matrix2d s_inv = s_cov.inverse();
    const double md2 = innovation.dot(s_inv * innovation);

    if (diag) {
        diag->innovation = innovation;
        diag->innovation_cov = s_cov;
        diag->mahalanobis = md2 > 0.0 ? std::sqrt(md2) : 0.0;
        diag->gated = false;
    }

    if (policy == OutlierPolicy::Gate && md2 > gate_sigma * gate_sigma) {
        if (diag) diag->gated = true;
        return state;  // frame rejected; prior carries through
    }

    const Eigen::MatrixXd gain = cross * s_inv;
    Eigen::VectorXd mean = state.mean.x + gain * innovation;
    if (angle_idx >= 0) mean[angle_idx] = wrap_angle(mean[angle_idx]);
    Eigen::MatrixXd cov = state.cov - gain * s_cov * gain.transpose();
    cov = 0.5 * (cov + cov.transpose()).eval();

    if (!mean.allFinite() || !cholesky_with_jitter(cov))
        throw FilterDivergenceError("ukf_update: posterior covariance is not repairable");

    return GaussianState(StateVector(model, std::move(mean)), std::move(cov));
}

}  // namespace hydrotrack
