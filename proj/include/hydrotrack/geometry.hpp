#pragma once

// World-frame kinematic types and the exact range-difference / range-rate-
// difference measurement model shared by the simulator, the initializers,
// and the filter.
//
// Conventions: the fixed hydrophone is mounted on the structure and never
// moves; the mobile hydrophone rides the surveillance vehicle. RD and RRD
// (meters, m/s) are the canonical internal measurement units; TDOA/FDOA in
// seconds/Hz exist only at the DSP boundary.

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

#include "hydrotrack/common.hpp"

namespace hydrotrack {

using Vec3 = Eigen::Vector3d;
using Vec2 = Eigen::Vector2d;

// Source closer to a receiver than this is treated as sitting on top of it:
// the line-of-sight unit vector is undefined and downstream Jacobians would
// blow up, so this is an explicit error rather than a clamped value.
constexpr double kDegenerateRangeM = 1e-9;

class DegenerateGeometryError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

struct ReceiverPair {
    Vec3 p_fixed{Vec3::Zero()};   // anchor hydrophone, m
    Vec3 p_mobile{Vec3::Zero()};  // vehicle hydrophone, m
    Vec3 v_mobile{Vec3::Zero()};  // m/s; the fixed hydrophone has zero velocity

    double baseline() const { return (p_mobile - p_fixed).norm(); }
};

struct SourceKinematics {
    Vec3 position{Vec3::Zero()};  // m
    Vec3 velocity{Vec3::Zero()};  // m/s
};

struct AcousticConstants {
    double sound_speed = 1500.0;  // c, m/s (isovelocity water column)
    double carrier_hz = 1500.0;   // f0, source tone frequency

    void validate() const {
        if (!(sound_speed > 0.0)) throw std::invalid_argument("AcousticConstants: sound_speed must be > 0");
        if (!(carrier_hz > 0.0)) throw std::invalid_argument("AcousticConstants: carrier_hz must be > 0");
    }
};

namespace detail {

inline void check_pair(const ReceiverPair& rx) {
    if (!(rx.baseline() > 0.0))
        throw std::invalid_argument("ReceiverPair: hydrophones coincide (baseline must be > 0)");
}

// Unit vector from a receiver to the source.
inline Vec3 los_unit(const Vec3& receiver, const Vec3& source, const char* which) {
    const Vec3 d = source - receiver;
    const double n = d.norm();
    if (n < kDegenerateRangeM)
        throw DegenerateGeometryError(std::string("source coincides with the ") + which + " hydrophone");
    return d / n;
}

}  // namespace detail

// RD = ||p_s - p_m|| - ||p_s - p_f||. Bounded in magnitude by the baseline.
inline double range_difference(const SourceKinematics& src, const ReceiverPair& rx) {
    detail::check_pair(rx);
    const double d_m = (src.position - rx.p_mobile).norm();
    const double d_f = (src.position - rx.p_fixed).norm();
    if (d_m < kDegenerateRangeM)
        throw DegenerateGeometryError("source coincides with the mobile hydrophone");
    if (d_f < kDegenerateRangeM)
        throw DegenerateGeometryError("source coincides with the fixed hydrophone");
    return d_m - d_f;
}

// RRD = (v_s - v_m) . u_m - v_s . u_f, the time derivative of RD.
inline double range_rate_difference(const SourceKinematics& src, const ReceiverPair& rx) {
    detail::check_pair(rx);
    const Vec3 u_m = detail::los_unit(rx.p_mobile, src.position, "mobile");
    const Vec3 u_f = detail::los_unit(rx.p_fixed, src.position, "fixed");
    return (src.velocity - rx.v_mobile).dot(u_m) - src.velocity.dot(u_f);
}

// RD/RRD <-> TDOA/FDOA scalings.
inline double tdoa_of(double rd_m, const AcousticConstants& k) {
    k.validate();
    return rd_m / k.sound_speed;
}

inline double fdoa_of(double rrd_mps, const AcousticConstants& k) {
    k.validate();
    return rrd_mps * k.carrier_hz / k.sound_speed;
}

inline double rd_of_tdoa(double tdoa_s, const AcousticConstants& k) {
    k.validate();
    return tdoa_s * k.sound_speed;
}

inline double rrd_of_fdoa(double fdoa_hz, const AcousticConstants& k) {
    k.validate();
    return fdoa_hz * k.sound_speed / k.carrier_hz;
}

// The filter's measurement function before bias addition: h = (RD, RRD).
inline Vec2 predict_measurement(const SourceKinematics& src, const ReceiverPair& rx) {
    return {range_difference(src, rx), range_rate_difference(src, rx)};
}

// 2x6 Jacobian of (RD, RRD) with respect to (p_s, v_s).
//
//   dRD/dp  = u_m - u_f            dRD/dv  = 0
//   dRRD/dp = (I - u_m u_m^T)(v_s - v_m)/d_m - (I - u_f u_f^T) v_s / d_f
//   dRRD/dv = u_m - u_f
inline Eigen::Matrix<double, 2, 6> measurement_jacobian(const SourceKinematics& src, const ReceiverPair& rx) {
    detail::check_pair(rx);
    const Vec3 dm = src.position - rx.p_mobile;
    const Vec3 df = src.position - rx.p_fixed;
    const double d_m = dm.norm();
    const double d_f = df.norm();
    if (d_m < kDegenerateRangeM || d_f < kDegenerateRangeM)
        throw DegenerateGeometryError("measurement Jacobian undefined at a receiver position");
    const Vec3 u_m = dm / d_m;
    const Vec3 u_f = df / d_f;

    const Eigen::Matrix3d proj_m = (Eigen::Matrix3d::Identity() - u_m * u_m.transpose()) / d_m;
    const Eigen::Matrix3d proj_f = (Eigen::Matrix3d::Identity() - u_f * u_f.transpose()) / d_f;

    Eigen::Matrix<double, 2, 6> H = Eigen::Matrix<double, 2, 6>::Zero();
    H.block<1, 3>(0, 0) = (u_m - u_f).transpose();
    H.block<1, 3>(1, 0) =
        ((src.velocity - rx.v_mobile).transpose() * proj_m) - (src.velocity.transpose() * proj_f);
    H.block<1, 3>(1, 3) = (u_m - u_f).transpose();
    return H;
}

}  // namespace hydrotrack
