#include <catch2/catch_amalgamated.hpp>

#include <hydrotrack/montecarlo.hpp>

#include "test_util.hpp"

using namespace hydrotrack;
using Catch::Approx;

namespace {

// Small, fast scenario for harness-level checks.
ScenarioConfig quick_config() {
    ScenarioConfig cfg;
    cfg.duration = 30.0;
    cfg.lcmap.m_pos = 64;
    cfg.lcmap.m_vel = 8;
    cfg.seed = 9;
    return cfg;
}

}  // namespace

TEST_CASE("receiver trajectories", "[montecarlo]") {
    ReceiverPathConfig cfg;
    const Vec3 anchor(0, 0, -0.96);

    SECTION("helix advances one pitch per revolution") {
        const ReceiverPair a = receiver_trajectory(cfg, anchor, 0.0);
        const ReceiverPair b = receiver_trajectory(cfg, anchor, cfg.period_s);
        CHECK((b.p_mobile.head<2>() - a.p_mobile.head<2>()).norm() < 1e-9);
        CHECK(b.p_mobile.z() - a.p_mobile.z() == Approx(cfg.pitch_m).epsilon(1e-12));
        CHECK(a.p_fixed == anchor);
    }
    SECTION("circle speed is constant 2*pi*r/T") {
        cfg.kind = ReceiverPath::Circle;
        const double expected = kTwoPi * cfg.radius / cfg.period_s;
        for (double t : {0.0, 7.3, 31.0, 59.9})
            CHECK(receiver_trajectory(cfg, anchor, t).v_mobile.norm() == Approx(expected).epsilon(1e-12));
    }
    SECTION("square path is continuous at corners") {
        cfg.kind = ReceiverPath::Square;
        const double corner_t = cfg.side_m / cfg.speed_mps;  // first corner
        const double eps = 1e-7;
        const Vec3 before = receiver_trajectory(cfg, anchor, corner_t - eps).p_mobile;
        const Vec3 after = receiver_trajectory(cfg, anchor, corner_t + eps).p_mobile;
        CHECK((after - before).norm() < 2.0 * cfg.speed_mps * eps + 1e-9);
    }
    SECTION("numeric velocity matches analytic velocity away from corners") {
        Rng rng(5);
        const double h = 1e-4;
        for (ReceiverPath kind : {ReceiverPath::Helix, ReceiverPath::Circle, ReceiverPath::Square,
                                  ReceiverPath::Spiral, ReceiverPath::Lawnmower}) {
            cfg.kind = kind;
            int checked = 0;
            for (int i = 0; i < 60 && checked < 25; ++i) {
                const double t = rng.uniform(1.0, 100.0);
                const Vec3 v0 = receiver_trajectory(cfg, anchor, t).v_mobile;
                const Vec3 vm = receiver_trajectory(cfg, anchor, t - h).v_mobile;
                const Vec3 vp = receiver_trajectory(cfg, anchor, t + h).v_mobile;
                if ((vp - vm).norm() > 1e-3) continue;  // straddles a corner
                const Vec3 numeric = (receiver_trajectory(cfg, anchor, t + h).p_mobile -
                                      receiver_trajectory(cfg, anchor, t - h).p_mobile) /
                                     (2.0 * h);
                CHECK((numeric - v0).norm() < 1e-6);
                ++checked;
            }
            CHECK(checked > 0);
        }
    }
}

TEST_CASE("source trajectories", "[montecarlo]") {
    SourceMotionConfig cfg;
    const Vec3 p0(3, -4, -1);

    SECTION("static source never moves") {
        cfg.kind = SourceMotion::Static;
        for (double t : {0.0, 13.0, 120.0}) {
            const SourceKinematics s = source_trajectory(cfg, p0, 1.0, t);
            CHECK(s.position == p0);
            CHECK(s.velocity.norm() == 0.0);
        }
    }
    SECTION("cv displacement is linear in time") {
        cfg.kind = SourceMotion::Cv;
        cfg.speed = 0.5;
        const SourceKinematics s = source_trajectory(cfg, p0, 0.0, 10.0);
        CHECK((s.position - p0).isApprox(Vec3(5.0, 0.0, 0.0), 1e-12));
    }
    SECTION("turn keeps constant speed") {
        cfg.kind = SourceMotion::Turn;
        for (double t : {0.0, 9.7, 48.0, 119.0}) {
            const SourceKinematics s = source_trajectory(cfg, p0, 0.7, t);
            CHECK(s.velocity.norm() == Approx(cfg.speed).margin(1e-9));
        }
    }
    SECTION("numeric velocity matches analytic for every motion") {
        Rng rng(6);
        const double h = 1e-4;
        for (SourceMotion kind : {SourceMotion::Static, SourceMotion::Cv, SourceMotion::Ca,
                                  SourceMotion::Turn, SourceMotion::Straight, SourceMotion::Arc,
                                  SourceMotion::UShape}) {
            cfg.kind = kind;
            int checked = 0;
            for (int i = 0; i < 40 && checked < 15; ++i) {
                const double t = rng.uniform(0.5, 110.0);
                const double heading = rng.uniform(0.0, kTwoPi);
                const Vec3 vm = source_trajectory(cfg, p0, heading, t - h).velocity;
                const Vec3 vp = source_trajectory(cfg, p0, heading, t + h).velocity;
                if ((vp - vm).norm() > 1e-3) continue;  // segment boundary
                const Vec3 numeric = (source_trajectory(cfg, p0, heading, t + h).position -
                                      source_trajectory(cfg, p0, heading, t - h).position) /
                                     (2.0 * h);
                CHECK((numeric - source_trajectory(cfg, p0, heading, t).velocity).norm() < 1e-6);
                ++checked;
            }
            CHECK(checked > 0);
        }
    }
    SECTION("u-shape is continuous across its three segments") {
        cfg.kind = SourceMotion::UShape;
        cfg.speed = 0.5;
        const double t1 = cfg.leg_m / cfg.speed;
        const double t2 = t1 + kPi * cfg.turn_radius / cfg.speed;
        for (double tc : {t1, t2}) {
            const Vec3 a = source_trajectory(cfg, p0, 0.3, tc - 1e-7).position;
            const Vec3 b = source_trajectory(cfg, p0, 0.3, tc + 1e-7).position;
            CHECK((a - b).norm() < 1e-6);
        }
    }
}

TEST_CASE("convergence time with a dwell window", "[montecarlo]") {
    SECTION("constant sub-threshold error converges immediately") {
        const std::vector<double> t{0.0, 0.2, 0.4, 0.6};
        const std::vector<double> e{0.5, 0.5, 0.5, 0.5};
        const auto tau = convergence_time(t, e, 1.0, 5.0);
        REQUIRE(tau.has_value());
        CHECK(*tau == 0.0);
    }
    SECTION("hand-enumerated dwell rejection") {
        // at 5 Hz: 2, 2, 0.8, 1.2, 0.5, 0.4 -> the dip at index 2 fails the
        // 0.4 s dwell (index 3 rises), the run from index 4 holds
        const std::vector<double> t{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
        const std::vector<double> e{2.0, 2.0, 0.8, 1.2, 0.5, 0.4};
        const auto tau = convergence_time(t, e, 1.0, 0.4);
        REQUIRE(tau.has_value());
        CHECK(*tau == Approx(0.8));
    }
    SECTION("never below threshold yields no value") {
        const std::vector<double> t{0.0, 0.2, 0.4};
        const std::vector<double> e{2.0, 1.7, 1.2};
        CHECK_FALSE(convergence_time(t, e, 1.0, 0.4).has_value());
    }
    SECTION("zero dwell recovers first crossing") {
        const std::vector<double> t{0.0, 0.2, 0.4, 0.6};
        const std::vector<double> e{2.0, 0.9, 3.0, 3.0};
        const auto tau = convergence_time(t, e, 1.0, 0.0);
        REQUIRE(tau.has_value());
        CHECK(*tau == Approx(0.2));
    }
}

TEST_CASE("trials are deterministic and well-formed", "[montecarlo]") {
    ScenarioConfig cfg = quick_config();

    SECTION("same seed twice gives identical results") {
        const TrialResult a = run_trial(cfg, 1234);
        const TrialResult b = run_trial(cfg, 1234);
        REQUIRE(a.steps.size() == b.steps.size());
        for (std::size_t i = 0; i < a.steps.size(); ++i) {
            CHECK(a.steps[i].error_m == b.steps[i].error_m);
            CHECK(a.steps[i].estimate.x == b.steps[i].estimate.x);
        }
        CHECK(a.convergence_1m() == b.convergence_1m());
    }
    SECTION("row count and timestamps") {
        const TrialResult r = run_trial(cfg, 77);
        CHECK(r.steps.size() == static_cast<std::size_t>(cfg.duration * cfg.meas_rate) + 1);
        for (std::size_t i = 1; i < r.steps.size(); ++i) CHECK(r.steps[i].t > r.steps[i - 1].t);
        for (const TrialStep& s : r.steps) CHECK(s.error_m >= 0.0);
    }
    SECTION("success flags mirror convergence times") {
        const TrialResult r = run_trial(cfg, 31);
        for (std::size_t k = 0; k < kSuccessThresholds.size(); ++k)
            CHECK(r.success[k] == r.convergence_s[k].has_value());
    }
}

TEST_CASE("batches aggregate deterministically", "[montecarlo]") {
    ScenarioConfig cfg = quick_config();
    cfg.duration = 20.0;

    SECTION("single-trial success rate is 0 or 1") {
        const CellStats c = run_batch(cfg, 1, 1);
        for (double rate : c.success_rate) CHECK((rate == 0.0 || rate == 1.0));
    }
    SECTION("success rate is monotone in the threshold") {
        const CellStats c = run_batch(cfg, 16, 2);
        for (std::size_t k = 1; k < kSuccessThresholds.size(); ++k)
            CHECK(c.success_rate[k] >= c.success_rate[k - 1]);
    }
    SECTION("summary is independent of the worker count and repeatable") {
        const CellStats a = run_batch(cfg, 12, 1);
        const CellStats b = run_batch(cfg, 12, 2);
        const CellStats c = run_batch(cfg, 12, 3);
        CHECK(a.success_rate == b.success_rate);
        CHECK(a.success_rate == c.success_rate);
        for (std::size_t k = 0; k < 6; ++k) {
            if (std::isfinite(a.mean_convergence_s[k])) {
                CHECK(a.mean_convergence_s[k] == b.mean_convergence_s[k]);
                CHECK(a.mean_convergence_s[k] == c.mean_convergence_s[k]);
            }
        }
        CHECK(a.rmse_mean == b.rmse_mean);
    }
    SECTION("growing the batch keeps earlier trial seeds stable") {
        const std::vector<TrialResult> small = run_batch_trials(cfg, 4, 2);
        const std::vector<TrialResult> large = run_batch_trials(cfg, 8, 2);
        for (std::size_t i = 0; i < small.size(); ++i)
            CHECK(small[i].steps.back().error_m == large[i].steps.back().error_m);
    }
}
