#include <catch2/catch_amalgamated.hpp>

#include <hydrotrack/ukf.hpp>

#include "test_util.hpp"

using namespace hydrotrack;
using Catch::Approx;

namespace {

Eigen::MatrixXd random_psd(int n, Rng& rng, double scale = 1.0) {
    Eigen::MatrixXd a(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) a(i, j) = rng.normal();
    return scale * (a * a.transpose()) + 1e-6 * Eigen::MatrixXd::Identity(n, n);
}

GaussianState random_cv_state(Rng& rng) {
    StateVector s(ModelKind::Cv);
    s.x.segment<3>(0) = test_util::random_vec(rng, 10.0);
    s.x.segment<3>(3) = test_util::random_vec(rng, 1.0);
    s.x[6] = rng.uniform(-0.5, 0.5);
    s.x[7] = rng.uniform(-0.2, 0.2);
    return GaussianState(s, random_psd(8, rng, 0.5));
}

// Minimal reference UKF over (p, v) with a bias-free measurement model,
// kept independent of the library's update path.
struct ReducedUpdate {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

ReducedUpdate reference_update(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                               const MeasurementFrame& z, const Eigen::Matrix2d& r,
                               const UtParams& params) {
    const int n = static_cast<int>(mean.size());
    const double lambda = params.lambda(n);
    const Eigen::MatrixXd l = *cholesky_with_jitter(cov);
    std::vector<Eigen::VectorXd> pts{mean};
    for (int i = 0; i < n; ++i) {
        pts.push_back(mean + std::sqrt(n + lambda) * l.col(i));
        pts.push_back(mean - std::sqrt(n + lambda) * l.col(i));
    }
    std::vector<double> wm(pts.size(), 1.0 / (2.0 * (n + lambda))), wc = wm;
    wm[0] = lambda / (n + lambda);
    wc[0] = wm[0] + (1.0 - params.alpha * params.alpha + params.beta);

    std::vector<Vec2> zs;
    for (const auto& p : pts)
        zs.push_back(predict_measurement({p.head<3>(), p.segment<3>(3)}, z.rx));
    Vec2 z_pred = Vec2::Zero();
    for (std::size_t i = 0; i < zs.size(); ++i) z_pred += wm[i] * zs[i];
    Eigen::Matrix2d s_cov = r;
    Eigen::MatrixXd cross = Eigen::MatrixXd::Zero(n, 2);
    for (std::size_t i = 0; i < zs.size(); ++i) {
        const Vec2 dz = zs[i] - z_pred;
        s_cov += wc[i] * dz * dz.transpose();
        cross += wc[i] * (pts[i] - mean) * dz.transpose();
    }
    const Eigen::MatrixXd gain = cross * s_cov.inverse();
    const Vec2 innovation(z.rd - z_pred[0], z.rrd - z_pred[1]);
    return {mean + gain * innovation, cov - gain * s_cov * gain.transpose()};
}

}  // namespace

TEST_CASE("sigma points reconstruct their source distribution", "[ukf]") {
    UtParams params;
    SECTION("point count is 2n+1") {
        Rng rng(1);
        const GaussianState s = random_cv_state(rng);
        CHECK(sigma_points(s, params).points.size() == 17);
    }
    SECTION("identity covariance, zero mean: symmetric points") {
        GaussianState s(StateVector(ModelKind::Cv), Eigen::MatrixXd::Identity(8, 8));
        const SigmaPoints sp = sigma_points(s, params);
        CHECK(sp.points[0].norm() == 0.0);
        for (int i = 0; i < 8; ++i)
            CHECK((sp.points[1 + 2 * i] + sp.points[2 + 2 * i]).norm() == Approx(0.0).margin(1e-12));
    }
    SECTION("weighted mean and covariance round-trip") {
        Rng rng(2);
        for (int trial = 0; trial < 50; ++trial) {
            const GaussianState s = random_cv_state(rng);
            const SigmaPoints sp = sigma_points(s, params);
            Eigen::VectorXd mean = Eigen::VectorXd::Zero(8);
            for (std::size_t i = 0; i < sp.points.size(); ++i) mean += sp.w_mean[i] * sp.points[i];
            CHECK((mean - s.mean.x).norm() < 1e-9);
            Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(8, 8);
            for (std::size_t i = 0; i < sp.points.size(); ++i) {
                const Eigen::VectorXd d = sp.points[i] - mean;
                cov += sp.w_cov[i] * d * d.transpose();
            }
            CHECK((cov - s.cov).norm() < 1e-9);
        }
    }
    SECTION("non-PSD covariance is an explicit error") {
        GaussianState s(StateVector(ModelKind::Cv), -Eigen::MatrixXd::Identity(8, 8));
        CHECK_THROWS_AS(sigma_points(s, params), FilterDivergenceError);
    }
}

TEST_CASE("prediction through the unscented transform", "[ukf]") {
    UtParams params;
    ProcessNoiseSpec zero_q;
    zero_q.accel_psd = 0.0;
    zero_q.static_pos_rw = 0.0;
    zero_q.jerk_psd = 0.0;
    zero_q.bias_pos_rw = 0.0;
    zero_q.bias_vel_rw = 0.0;
    zero_q.turn_rw = 0.0;

    SECTION("static model with zero Q is the identity") {
        Rng rng(3);
        StateVector s(ModelKind::Static);
        s.x << 1, 2, 3, 0.1;
        GaussianState g(s, random_psd(4, rng));
        const GaussianState out = ukf_predict(g, 0.5, zero_q, params);
        CHECK((out.mean.x - g.mean.x).norm() < 1e-12);
        CHECK((out.cov - g.cov).norm() < 1e-9);
    }
    SECTION("UT is exact on the linear cv model") {
        Rng rng(4);
        for (int i = 0; i < 25; ++i) {
            const GaussianState g = random_cv_state(rng);
            const double dt = rng.uniform(0.1, 2.0);
            const GaussianState out = ukf_predict(g, dt, zero_q, params);

            Eigen::MatrixXd f = Eigen::MatrixXd::Identity(8, 8);
            f(0, 3) = f(1, 4) = f(2, 5) = dt;
            CHECK((out.mean.x - f * g.mean.x).norm() < 1e-12);
            CHECK((out.cov - f * g.cov * f.transpose()).norm() < 1e-9);
        }
    }
    SECTION("covariance trace grows under positive Q") {
        Rng rng(5);
        ProcessNoiseSpec q;
        const GaussianState g = random_cv_state(rng);
        const GaussianState out = ukf_predict(g, 0.2, q, params);
        const GaussianState out0 = ukf_predict(g, 0.2, zero_q, params);
        CHECK(out.cov.trace() > out0.cov.trace());
    }
}

TEST_CASE("measurement update", "[ukf]") {
    UtParams params;
    Rng rng(6);
    ReceiverPair rx{{0, 0, -1}, {5, 0, -1}, {0, 0.5, 0}};

    SECTION("zero innovation with tiny R leaves the mean in place") {
        GaussianState g = random_cv_state(rng);
        g.mean.x.segment<3>(0) << 8, 3, -2;  // comfortably away from both receivers
        MeasurementFrame z;
        z.rx = rx;
        // probe the UT-predicted measurement, then feed it back exactly
        z.rd = 0.0;
        z.rrd = 0.0;
        MeasurementNoise tiny = MeasurementNoise::from_sigmas(1e-4, 1e-4);
        UpdateDiagnostics probe;
        ukf_update(g, z, tiny, params, &probe, OutlierPolicy::Off);
        z.rd = -probe.innovation[0];
        z.rrd = -probe.innovation[1];
        const GaussianState out = ukf_update(g, z, tiny, params, nullptr, OutlierPolicy::Off);
        CHECK((position_of(out.mean) - position_of(g.mean)).norm() < 1e-6);
    }
    SECTION("posterior trace never exceeds the prior trace") {
        for (int i = 0; i < 50; ++i) {
            GaussianState g = random_cv_state(rng);
            g.mean.x.segment<3>(0) += Vec3(10, 10, 0);  // keep clear of receivers
            MeasurementFrame z;
            z.rx = rx;
            const Vec2 h = measurement_model(g.mean, rx);
            z.rd = h[0] + 0.05 * rng.normal();
            z.rrd = h[1] + 0.02 * rng.normal();
            MeasurementNoise r = MeasurementNoise::from_sigmas(0.1, 0.05);
            UpdateDiagnostics diag;
            const GaussianState out = ukf_update(g, z, r, params, &diag, OutlierPolicy::Off);
            CHECK(out.cov.trace() <= g.cov.trace() + 1e-9);
            CHECK(cholesky_with_jitter(out.cov).has_value());
            CHECK((out.cov - out.cov.transpose()).norm() < 1e-10);
        }
    }
    SECTION("update is invariant to rigid scene translation") {
        for (int i = 0; i < 25; ++i) {
            GaussianState g = random_cv_state(rng);
            g.mean.x.segment<3>(0) += Vec3(12, -8, 0);
            MeasurementFrame z;
            z.rx = rx;
            const Vec2 h = measurement_model(g.mean, rx);
            z.rd = h[0] + 0.1;
            z.rrd = h[1] - 0.05;
            MeasurementNoise r = MeasurementNoise::from_sigmas(0.1, 0.05);
            const GaussianState out = ukf_update(g, z, r, params, nullptr, OutlierPolicy::Off);

            const Vec3 shift = test_util::random_vec(rng, 50.0);
            GaussianState gs = g;
            gs.mean.x.segment<3>(0) += shift;
            MeasurementFrame zs = z;
            zs.rx.p_fixed += shift;
            zs.rx.p_mobile += shift;
            const GaussianState outs = ukf_update(gs, zs, r, params, nullptr, OutlierPolicy::Off);
            CHECK((position_of(outs.mean) - position_of(out.mean) - shift).norm() < 1e-8);
            CHECK((outs.cov - out.cov).norm() < 1e-8);
        }
    }
    SECTION("gating rejects gross outliers and keeps the prior") {
        GaussianState g = random_cv_state(rng);
        g.mean.x.segment<3>(0) << 10, 5, -3;
        g.cov = 0.01 * Eigen::MatrixXd::Identity(8, 8);
        MeasurementFrame z;
        z.rx = rx;
        const Vec2 h = measurement_model(g.mean, rx);
        z.rd = h[0] + 50.0;  // absurd innovation
        z.rrd = h[1];
        MeasurementNoise r = MeasurementNoise::from_sigmas(0.1, 0.05);
        UpdateDiagnostics diag;
        const GaussianState out = ukf_update(g, z, r, params, &diag, OutlierPolicy::Gate, 3.0);
        CHECK(diag.gated);
        CHECK((out.mean.x - g.mean.x).norm() == 0.0);
        CHECK(diag.mahalanobis > 3.0);
    }
}

TEST_CASE("pinned bias states reduce to the bias-free filter", "[ukf]") {
    UtParams params;
    Rng rng(7);
    ReceiverPair rx{{0, 0, -1}, {4, 2, -1}, {0.2, 0.4, 0}};

    for (int trial = 0; trial < 20; ++trial) {
        GaussianState g = random_cv_state(rng);
        g.mean.x.segment<3>(0) += Vec3(9, 9, 0);
        // pin the biases: zero mean, zero variance, zero cross terms
        g.mean.x[6] = g.mean.x[7] = 0.0;
        g.cov.row(6).setZero();
        g.cov.col(6).setZero();
        g.cov.row(7).setZero();
        g.cov.col(7).setZero();

        MeasurementFrame z;
        z.rx = rx;
        const Vec2 h = measurement_model(g.mean, rx);
        z.rd = h[0] + 0.2;
        z.rrd = h[1] - 0.1;
        MeasurementNoise r = MeasurementNoise::from_sigmas(0.1, 0.05);

        const GaussianState out = ukf_update(g, z, r, params, nullptr, OutlierPolicy::Off);
        const ReducedUpdate ref =
            reference_update(g.mean.x.head<6>(), g.cov.topLeftCorner<6, 6>(), z, r.R, params);

        CHECK((out.mean.x.head<6>() - ref.mean).norm() < 1e-10);
        CHECK((out.cov.topLeftCorner<6, 6>() - ref.cov).norm() < 1e-9);
        CHECK(out.mean.x[6] == 0.0);
        CHECK(out.mean.x[7] == 0.0);
        CHECK(out.cov.row(6).norm() == 0.0);
        CHECK(out.cov.row(7).norm() == 0.0);
    }
}

TEST_CASE("sigma points near a receiver are pushed out, not crashed", "[ukf]") {
    UtParams params;
    ReceiverPair rx{{0, 0, 0}, {5, 0, 0}, Vec3::Zero()};
    StateVector s(ModelKind::Cv);
    s.x.segment<3>(0) << 0, 0, 0;  // mean exactly on the fixed receiver
    GaussianState g(s, 1e-8 * Eigen::MatrixXd::Identity(8, 8));
    MeasurementFrame z;
    z.rx = rx;
    z.rd = -4.0;
    z.rrd = 0.0;
    MeasurementNoise r;
    CHECK_NOTHROW(ukf_update(g, z, r, params, nullptr, OutlierPolicy::Off));
}
