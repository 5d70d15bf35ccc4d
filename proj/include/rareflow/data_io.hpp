#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rareflow/gmm.hpp"
#include "rareflow/linalg.hpp"
#include "rareflow/rng.hpp"
#include "rareflow/types.hpp"

namespace rareflow {

// One longitudinal track record in the drone-dataset schema.
struct TrackRow {
    std::int64_t frame = 0;
    std::int64_t id = 0;
    double x = 0.0;               // longitudinal position, m
    double x_velocity = 0.0;      // m/s
    double x_acceleration = 0.0;  // m/s^2
    std::int64_t preceding_id = 0;  // 0 = no vehicle ahead
};

struct ColumnMap {
    std::string frame = "frame";
    std::string id = "id";
    std::string x = "x";
    std::string x_velocity = "xVelocity";
    std::string x_acceleration = "xAcceleration";
    std::string preceding_id = "precedingId";
};

struct TrackTable {
    std::vector<TrackRow> rows;
    std::uint64_t malformed = 0;
    std::uint64_t data_lines = 0;
};

// Parses the CSV, skipping and counting malformed rows; more than 1% malformed
// raises TooManyMalformed. A missing required column is named in the error.
TrackTable load_tracks_csv(const std::string& path, const ColumnMap& columns = {});

struct CfSample {
    Scene scene;
    Maneuver maneuver;
};

struct ExtractConfig {
    std::int64_t min_duration = 50;  // frames a pair must persist
    double frame_rate = 25.0;        // Hz
    std::int64_t step_stride = 25;   // frames between samples
};

struct ExtractResult {
    std::vector<CfSample> samples;
    std::uint64_t skipped_nonpositive_gap = 0;
};

// For every (follower, leader) pair persisting at least min_duration frames,
// emits one sample per stride: the scene at the frame plus the leader
// acceleration one stride later as the maneuver taken from that scene.
ExtractResult extract_car_following(const TrackTable& tracks, const ExtractConfig& cfg);

// Ground-truth generator when no recorded data is available: scene variables
// (v_av, v_lead, gap) from a Gaussian mixture, lead acceleration from a
// mean-reverting process m = rho * a_lead + kappa * (v_ref - v_lead) + noise.
// The speed term keeps lead speeds anchored to a cruise speed instead of
// letting them random-walk; kappa = 0 reverts acceleration to zero only.
struct SynthComponent {
    double weight = 1.0;
    std::array<double, 3> mean{};                 // v_av, v_lead, gap
    std::array<std::array<double, 3>, 3> cov{};
    double accel_bias = 0.0;  // regime offset both a_lead and m revert to, m/s^2
};

struct SynthConfig {
    std::vector<SynthComponent> components;
    double accel_rho = 0.7;
    double accel_sigma = 0.45;  // innovation std dev; 0 gives deterministic reversion
    double accel_speed_gain = 0.0;  // kappa, 1/s
    double accel_v_ref = 25.0;      // cruise speed the lead reverts to, m/s
    std::uint64_t count = 100000;
};

struct SynthResult {
    std::vector<CfSample> samples;
    // Exact generating density over the joint layout; absent only in the
    // degenerate zero-noise configuration.
    std::optional<Gmm> generating_joint;
};

SynthResult synth_naturalistic(const SynthConfig& cfg, Rng& rng);

// Joint-layout matrix [m, v_av, v_lead, gap, a_lead] from samples.
Mat samples_to_matrix(const std::vector<CfSample>& samples);

// Samples CSV round trip (columns: v_av, v_lead, gap, a_lead, m).
void write_samples_csv(const std::string& path, const std::vector<CfSample>& samples);
std::vector<CfSample> read_samples_csv(const std::string& path);

}  // namespace rareflow
