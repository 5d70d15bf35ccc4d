#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "rareflow/data_io.hpp"
#include "rareflow/errors.hpp"
#include "rareflow/normalizer.hpp"

using namespace rareflow;

namespace {

namespace fs = std::filesystem;

struct TempFile {
    fs::path path;
    explicit TempFile(const std::string& name, const std::string& content)
        : path(fs::temp_directory_path() / name) {
        std::ofstream out(path);
        out << content;
    }
    ~TempFile() { fs::remove(path); }
};

// Two vehicles driving +x: leader (id 2) ahead of follower (id 1). The
// leader's acceleration column carries accel(frame).
std::string straight_tracks(int frames, double v_follow, double v_lead, double accel_lead) {
    std::string csv = "frame,id,x,xVelocity,xAcceleration,precedingId\n";
    char buf[160];
    const double dt = 1.0 / 25.0;
    for (int f = 0; f < frames; ++f) {
        const double t = f * dt;
        std::snprintf(buf, sizeof(buf), "%d,1,%.8f,%.8f,0,2\n", f, 50.0 + v_follow * t, v_follow);
        csv += buf;
        const double v = v_lead + accel_lead * t;
        std::snprintf(buf, sizeof(buf), "%d,2,%.8f,%.8f,%.8f,0\n", f,
                      120.0 + v_lead * t + 0.5 * accel_lead * t * t, v, accel_lead);
        csv += buf;
    }
    return csv;
}

}  // namespace

TEST_CASE("load_tracks_csv parses a hand-written table") {
    TempFile file("rf_tracks_small.csv",
                  "frame,id,x,xVelocity,xAcceleration,precedingId\n"
                  "0,1,10.0,20.0,0.1,2\n"
                  "0,2,40.0,21.0,-0.2,0\n"
                  "1,1,10.8,20.0,0.1,2\n");
    const TrackTable t = load_tracks_csv(file.path.string());
    REQUIRE(t.rows.size() == 3);
    CHECK(t.rows[0].frame == 0);
    CHECK(t.rows[1].x == doctest::Approx(40.0));
    CHECK(t.rows[1].preceding_id == 0);
    CHECK(t.malformed == 0);
}

TEST_CASE("missing column is reported by name") {
    TempFile file("rf_tracks_missing.csv", "frame,id,x,xVelocity,precedingId\n0,1,1,2,0\n");
    try {
        load_tracks_csv(file.path.string());
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("xAcceleration") != std::string::npos);
    }
}

TEST_CASE("malformed rows are skipped and counted; too many aborts") {
    std::string csv = "frame,id,x,xVelocity,xAcceleration,precedingId\n";
    for (int i = 0; i < 400; ++i) csv += std::to_string(i) + ",1,1.0,2.0,0.0,0\n";
    csv += "401,1,not_a_number,2.0,0.0,0\n";
    TempFile ok("rf_tracks_one_bad.csv", csv);
    const TrackTable t = load_tracks_csv(ok.path.string());
    CHECK(t.malformed == 1);
    CHECK(t.rows.size() == 400);

    std::string bad = "frame,id,x,xVelocity,xAcceleration,precedingId\n";
    for (int i = 0; i < 50; ++i) bad += std::to_string(i) + ",1,1.0,2.0,0.0,0\n";
    for (int i = 0; i < 10; ++i) bad += "x,y,z,w,v,u\n";
    TempFile many("rf_tracks_many_bad.csv", bad);
    CHECK_THROWS_AS(load_tracks_csv(many.path.string()), TooManyMalformed);

    CHECK_THROWS_AS(load_tracks_csv("/nonexistent/path.csv"), FileNotFound);
}

TEST_CASE("extract: constant-speed pair gives constant scenes, zero maneuvers") {
    TempFile file("rf_tracks_const.csv", straight_tracks(100, 18.0, 20.0, 0.0));
    const TrackTable t = load_tracks_csv(file.path.string());
    ExtractConfig cfg;
    cfg.min_duration = 50;
    cfg.step_stride = 25;
    const ExtractResult r = extract_car_following(t, cfg);
    REQUIRE(r.samples.size() == 3);  // frames 0, 25, 50 (75 has no +25 target)
    for (const CfSample& s : r.samples) {
        CHECK(s.scene.v_av == doctest::Approx(18.0));
        CHECK(s.scene.v_lead == doctest::Approx(20.0));
        CHECK(s.scene.gap > 0.0);
        CHECK(s.maneuver.a_cmd == doctest::Approx(0.0));
    }
    // gap at frame 0 is 120 - 50 = 70
    CHECK(r.samples[0].scene.gap == doctest::Approx(70.0));
}

TEST_CASE("extract: braking leader yields the brake rate as the maneuver") {
    TempFile file("rf_tracks_brake.csv", straight_tracks(100, 18.0, 22.0, -2.0));
    const TrackTable t = load_tracks_csv(file.path.string());
    ExtractConfig cfg;
    cfg.min_duration = 50;
    cfg.step_stride = 25;
    const ExtractResult r = extract_car_following(t, cfg);
    REQUIRE(!r.samples.empty());
    for (const CfSample& s : r.samples) {
        CHECK(s.maneuver.a_cmd == doctest::Approx(-2.0).epsilon(1e-6));
    }
    // the follower has no preceding vehicle of its own recorded as a pair
    // (the leader's precedingId is 0), so only follower->leader samples exist
    CHECK(r.samples.size() == 3);
}

TEST_CASE("extract: no persistent pair raises NoPairsFound") {
    TempFile file("rf_tracks_short.csv", straight_tracks(20, 18.0, 20.0, 0.0));
    const TrackTable t = load_tracks_csv(file.path.string());
    ExtractConfig cfg;
    cfg.min_duration = 50;
    CHECK_THROWS_AS(extract_car_following(t, cfg), NoPairsFound);
}

TEST_CASE("extraction is deterministic and summary bounds are exact") {
    // time-varying lead acceleration so the maneuver column is not constant
    std::string csv = "frame,id,x,xVelocity,xAcceleration,precedingId\n";
    char buf[160];
    for (int f = 0; f < 120; ++f) {
        const double t = f / 25.0;
        std::snprintf(buf, sizeof(buf), "%d,1,%.8f,19.0,0,2\n", f, 50.0 + 19.0 * t);
        csv += buf;
        std::snprintf(buf, sizeof(buf), "%d,2,%.8f,21.0,%.8f,0\n", f, 120.0 + 21.0 * t,
                      -1.5 + 0.01 * f);
        csv += buf;
    }
    TempFile file("rf_tracks_det.csv", csv);
    const TrackTable t = load_tracks_csv(file.path.string());
    ExtractConfig cfg;
    cfg.min_duration = 50;
    cfg.step_stride = 10;
    const ExtractResult a = extract_car_following(t, cfg);
    const ExtractResult b = extract_car_following(t, cfg);
    REQUIRE(a.samples.size() == b.samples.size());
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        CHECK(a.samples[i].scene.gap == b.samples[i].scene.gap);
        CHECK(a.samples[i].maneuver.a_cmd == b.samples[i].maneuver.a_cmd);
    }

    const Mat table = samples_to_matrix(a.samples);
    const DataSummary summary = summarize_samples(table);
    double mmin = a.samples[0].maneuver.a_cmd, mmax = mmin;
    for (const CfSample& s : a.samples) {
        mmin = std::min(mmin, s.maneuver.a_cmd);
        mmax = std::max(mmax, s.maneuver.a_cmd);
    }
    CHECK(summary.m_min == mmin);
    CHECK(summary.m_max == mmax);
    CHECK(summary.count == a.samples.size());
}

TEST_CASE("synthetic generator: fit with the generating K recovers the density") {
    SynthConfig cfg;
    SynthComponent a;
    a.weight = 0.6;
    a.mean = {25.0, 24.0, 35.0};
    a.cov = {{{4.0, 0.3, 0.0}, {0.3, 4.0, 0.0}, {0.0, 0.0, 49.0}}};
    SynthComponent b;
    b.weight = 0.4;
    b.mean = {28.0, 23.0, 22.0};
    b.cov = {{{2.0, 0.0, 0.0}, {0.0, 2.0, 0.0}, {0.0, 0.0, 16.0}}};
    cfg.components = {a, b};
    cfg.accel_rho = 0.7;
    cfg.accel_sigma = 0.45;
    cfg.accel_speed_gain = 0.08;  // exercises the speed-coupled covariance terms
    cfg.accel_v_ref = 24.0;
    cfg.count = 40000;

    Rng rng(2025);
    const SynthResult synth = synth_naturalistic(cfg, rng);
    REQUIRE(synth.samples.size() == cfg.count);
    REQUIRE(synth.generating_joint.has_value());

    // normalize, fit with the generating component count, and compare mean
    // log-likelihood against the exact density on held-out draws
    const Mat raw = samples_to_matrix(synth.samples);
    const Normalizer norm = fit_normalizer(raw);
    Mat train(raw.rows(), kJointDim);
    for (std::size_t i = 0; i < raw.rows(); ++i) {
        const Vec z = normalize(norm, std::span<const double>(raw.row(i), kJointDim));
        for (std::size_t j = 0; j < kJointDim; ++j) train(i, j) = z[j];
    }
    GmmConfig gc;
    gc.seed = 3;
    const GmmFit fit = fit_gmm(train, 2, gc);

    Rng eval_rng(77);
    const SynthResult eval = synth_naturalistic(cfg, eval_rng);
    double fit_ll = 0.0, true_ll = 0.0;
    double log_jac = 0.0;
    for (double s : norm.scale) log_jac += std::log(s);
    for (std::size_t i = 0; i < 10000; ++i) {
        const auto row = joint_to_array(eval.samples[i].maneuver, eval.samples[i].scene);
        const Vec z = normalize(norm, row);
        fit_ll += fit.model.log_pdf(z) - log_jac;  // back to physical units
        true_ll += synth.generating_joint->log_pdf(row);
    }
    fit_ll /= 10000.0;
    true_ll /= 10000.0;
    CHECK(std::abs(fit_ll - true_ll) < 0.05);
}

TEST_CASE("zero-noise synthetic maneuvers sit on the mean-reversion target") {
    SynthConfig cfg;
    SynthComponent c;
    c.weight = 1.0;
    c.mean = {25.0, 25.0, 30.0};
    c.cov = {{{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 4.0}}};
    cfg.components = {c};
    cfg.accel_sigma = 0.0;
    cfg.count = 100;
    Rng rng(5);
    const SynthResult r = synth_naturalistic(cfg, rng);
    CHECK_FALSE(r.generating_joint.has_value());
    for (const CfSample& s : r.samples) {
        CHECK(s.scene.a_lead == 0.0);
        CHECK(s.maneuver.a_cmd == cfg.accel_rho * s.scene.a_lead);
    }
}

TEST_CASE("synthetic generation is reproducible for a fixed seed") {
    SynthConfig cfg = SynthConfig{};
    SynthComponent c;
    c.weight = 1.0;
    c.mean = {25.0, 25.0, 30.0};
    c.cov = {{{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 4.0}}};
    cfg.components = {c};
    cfg.count = 500;
    Rng r1(9), r2(9);
    const SynthResult a = synth_naturalistic(cfg, r1);
    const SynthResult b = synth_naturalistic(cfg, r2);
    for (std::size_t i = 0; i < cfg.count; ++i) {
        CHECK(a.samples[i].scene.gap == b.samples[i].scene.gap);
        CHECK(a.samples[i].maneuver.a_cmd == b.samples[i].maneuver.a_cmd);
    }
}

TEST_CASE("samples CSV round-trips") {
    std::vector<CfSample> samples;
    Rng rng(13);
    for (int i = 0; i < 50; ++i) {
        samples.push_back(CfSample{Scene{rng.uniform(0, 40), rng.uniform(0, 40),
                                         rng.uniform(1, 100), rng.uniform(-4, 2)},
                                   Maneuver{rng.uniform(-4, 2)}});
    }
    const auto path = fs::temp_directory_path() / "rf_samples_roundtrip.csv";
    write_samples_csv(path.string(), samples);
    const auto back = read_samples_csv(path.string());
    REQUIRE(back.size() == samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        CHECK(back[i].scene.v_av == samples[i].scene.v_av);
        CHECK(back[i].scene.gap == samples[i].scene.gap);
        CHECK(back[i].maneuver.a_cmd == samples[i].maneuver.a_cmd);
    }
    fs::remove(path);
}
