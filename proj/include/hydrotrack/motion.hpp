#pragma once

// Filter state layouts and nonlinear propagation for static, constant
// velocity, constant acceleration, and coordinated-turn source dynamics.
//
// Layouts (position always first):
//   Static: [px py pz b_p]                                   n = 4
//   Cv:     [px py pz vx vy vz b_p b_v]                      n = 8
//   Ca:     [px py pz vx vy vz ax ay az b_p b_v]             n = 11
//   Ctrv:   [x y z speed_h heading turn_rate v_z b_p b_v]    n = 9
//
// b_p / b_v are additive measurement biases; the motion function leaves them
// untouched (they evolve only through process noise).

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

#include "hydrotrack/common.hpp"
#include "hydrotrack/geometry.hpp"

namespace hydrotrack {

enum class ModelKind { Static, Cv, Ca, Ctrv };

// Below this turn rate the coordinated-turn update switches to its
// straight-line limit to avoid 0/0.
constexpr double kTurnRateEps = 1e-6;  // rad/s

inline int state_dim(ModelKind m) {
    switch (m) {
        case ModelKind::Static: return 4;
        case ModelKind::Cv: return 8;
        case ModelKind::Ca: return 11;
        case ModelKind::Ctrv: return 9;
    }
    return 0;
}

inline const char* model_name(ModelKind m) {
    switch (m) {
        case ModelKind::Static: return "static";
        case ModelKind::Cv: return "cv";
        case ModelKind::Ca: return "ca";
        case ModelKind::Ctrv: return "ctrv";
    }
    return "?";
}

struct StateVector {
    ModelKind model = ModelKind::Cv;
    Eigen::VectorXd x;

    StateVector() = default;
    explicit StateVector(ModelKind m) : model(m), x(Eigen::VectorXd::Zero(state_dim(m))) {}
    StateVector(ModelKind m, Eigen::VectorXd v) : model(m), x(std::move(v)) {
        if (x.size() != state_dim(m)) throw std::invalid_argument("StateVector: size does not match layout");
    }

    int dim() const { return static_cast<int>(x.size()); }
};

inline int pos_bias_index(ModelKind m) {
    switch (m) {
        case ModelKind::Static: return 3;
        case ModelKind::Cv: return 6;
        case ModelKind::Ca: return 9;
        case ModelKind::Ctrv: return 7;
    }
    return -1;
}

// -1 when the layout carries no velocity bias (static source model).
inline int vel_bias_index(ModelKind m) {
    switch (m) {
        case ModelKind::Static: return -1;
        case ModelKind::Cv: return 7;
        case ModelKind::Ca: return 10;
        case ModelKind::Ctrv: return 8;
    }
    return -1;
}

// Index of the heading entry, or -1 (used for angle-aware averaging).
inline int heading_index(ModelKind m) { return m == ModelKind::Ctrv ? 4 : -1; }

inline Vec3 position_of(const StateVector& s) { return s.x.segment<3>(0); }

inline Vec3 velocity_of(const StateVector& s) {
    switch (s.model) {
        case ModelKind::Static: return Vec3::Zero();
        case ModelKind::Cv:
        case ModelKind::Ca: return s.x.segment<3>(3);
        case ModelKind::Ctrv: {
            const double sp = s.x[3], th = s.x[4];
            return {sp * std::cos(th), sp * std::sin(th), s.x[6]};
        }
    }
    return Vec3::Zero();
}

inline double pos_bias_of(const StateVector& s) { return s.x[pos_bias_index(s.model)]; }

inline double vel_bias_of(const StateVector& s) {
    const int i = vel_bias_index(s.model);
    return i >= 0 ? s.x[i] : 0.0;
}

inline SourceKinematics kinematics_of(const StateVector& s) {
    return {position_of(s), velocity_of(s)};
}

// Nonlinear motion function. Biases are never touched here.
inline StateVector propagate(const StateVector& s, double dt) {
    if (!(dt > 0.0)) throw std::invalid_argument("propagate: dt must be > 0");
    StateVector out = s;
    switch (s.model) {
        case ModelKind::Static:
            break;
        case ModelKind::Cv:
            out.x.segment<3>(0) += s.x.segment<3>(3) * dt;
            break;
        case ModelKind::Ca:
            out.x.segment<3>(0) += s.x.segment<3>(3) * dt + 0.5 * dt * dt * s.x.segment<3>(6);
            out.x.segment<3>(3) += s.x.segment<3>(6) * dt;
            break;
        case ModelKind::Ctrv: {
            const double sp = s.x[3], th = s.x[4], om = s.x[5];
            if (std::abs(om) > kTurnRateEps) {
                // exact circular arc in the horizontal plane
                out.x[0] += sp / om * (std::sin(th + om * dt) - std::sin(th));
                out.x[1] += sp / om * (std::cos(th) - std::cos(th + om * dt));
            } else {
                out.x[0] += sp * std::cos(th) * dt;
                out.x[1] += sp * std::sin(th) * dt;
            }
            out.x[2] += s.x[6] * dt;
            out.x[4] = wrap_angle(th + om * dt);
            break;
        }
    }
    return out;
}

struct ProcessNoiseSpec {
    double accel_psd = 1e-4;      // white-noise acceleration intensity (cv/ctrv), (m/s^2)^2 * s
    double static_pos_rw = 1e-4;  // m^2/s position random walk for the static model
    double jerk_psd = 1e-5;       // white-noise jerk intensity (ca), (m/s^3)^2 * s
    double bias_pos_rw = 1e-6;    // m^2/s random walk on b_p
    double bias_vel_rw = 1e-6;    // (m/s)^2/s random walk on b_v
    double turn_rw = 3e-5;        // (rad/s^2)^2 * s, coordinated-turn rate noise

    void validate() const {
        if (accel_psd < 0 || static_pos_rw < 0 || jerk_psd < 0 || bias_pos_rw < 0 || bias_vel_rw < 0 ||
            turn_rw < 0)
            throw std::invalid_argument("ProcessNoiseSpec: intensities must be >= 0");
    }
};

// Discrete process noise Q(n x n): white-noise-acceleration blocks per axis
// for the kinematic states, independent random walks for the biases.
inline Eigen::MatrixXd process_noise(const ProcessNoiseSpec& spec, double dt, ModelKind m) {
    spec.validate();
    if (!(dt > 0.0)) throw std::invalid_argument("process_noise: dt must be > 0");
    const int n = state_dim(m);
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(n, n);
    const double dt2 = dt * dt, dt3 = dt2 * dt, dt4 = dt3 * dt;

    switch (m) {
        case ModelKind::Static:
            for (int i = 0; i < 3; ++i) q(i, i) = spec.static_pos_rw * dt;
            break;
        case ModelKind::Cv:
            for (int i = 0; i < 3; ++i) {
                q(i, i) = spec.accel_psd * dt4 / 4.0;
                q(i, i + 3) = q(i + 3, i) = spec.accel_psd * dt3 / 2.0;
                q(i + 3, i + 3) = spec.accel_psd * dt2;
            }
            break;
        case ModelKind::Ca: {
            // white-noise jerk: G = [dt^3/6, dt^2/2, dt]
            const double g0 = dt3 / 6.0, g1 = dt2 / 2.0, g2 = dt;
            for (int i = 0; i < 3; ++i) {
                const int p = i, v = i + 3, a = i + 6;
                q(p, p) = spec.jerk_psd * g0 * g0;
                q(p, v) = q(v, p) = spec.jerk_psd * g0 * g1;
                q(p, a) = q(a, p) = spec.jerk_psd * g0 * g2;
                q(v, v) = spec.jerk_psd * g1 * g1;
                q(v, a) = q(a, v) = spec.jerk_psd * g1 * g2;
                q(a, a) = spec.jerk_psd * g2 * g2;
            }
            break;
        }
        case ModelKind::Ctrv:
            // horizontal position driven by longitudinal acceleration noise,
            // (heading, turn_rate) by turn acceleration, (z, v_z) by vertical
            // acceleration; cross terms with heading-dependent geometry are
            // dropped so Q stays state-independent
            q(0, 0) = q(1, 1) = spec.accel_psd * dt4 / 4.0;
            q(3, 3) = spec.accel_psd * dt2;                       // speed_h
            q(4, 4) = spec.turn_rw * dt4 / 4.0;                   // heading
            q(4, 5) = q(5, 4) = spec.turn_rw * dt3 / 2.0;
            q(5, 5) = spec.turn_rw * dt2;                         // turn rate
            q(2, 2) = spec.accel_psd * dt4 / 4.0;                 // z
            q(2, 6) = q(6, 2) = spec.accel_psd * dt3 / 2.0;
            q(6, 6) = spec.accel_psd * dt2;                       // v_z
            break;
    }
    q(pos_bias_index(m), pos_bias_index(m)) = spec.bias_pos_rw * dt;
    if (vel_bias_index(m) >= 0) q(vel_bias_index(m), vel_bias_index(m)) = spec.bias_vel_rw * dt;
    return q;
}

}  // namespace hydrotrack
