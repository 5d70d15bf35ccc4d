#pragma once

#include <functional>

#include "rareflow/types.hpp"

namespace rareflow {

// Intelligent Driver Model parameters for the AV controller, plus the hard
// deceleration cap b_m that makes the controller collision-capable.
struct IdmParams {
    double v0 = 33.3;      // desired speed, m/s
    double t_headway = 1.5;  // desired time headway, s
    double a_max = 1.5;    // maximum acceleration, m/s^2
    double b_comf = 1.67;  // comfortable deceleration, m/s^2
    double s0 = 2.0;       // jam distance, m
    double delta = 4.0;    // acceleration exponent
    double b_m = 4.5;      // hard deceleration cap, m/s^2 (+inf disables it)
};

struct SimConfig {
    double dt = 1.0;  // timestep, s
    int horizon = 10;  // steps per scenario
    bool stop_on_collision = true;
};

// IDM acceleration for the following (AV) vehicle, clamped below at -b_m.
// Requires gap > 0; callers must check for collision first.
double idm_accel(const Scene& s, const IdmParams& p);

// One kinematic step: AV acceleration from IDM, lead acceleration from the
// maneuver; speeds update first and clamp at zero, positions advance with the
// new speeds (semi-implicit Euler).
Scene step(const Scene& s, const Maneuver& m, const SimConfig& cfg, const IdmParams& p);

struct ManeuverDraw {
    Maneuver maneuver;
    StepLogDensities logs;
};

using ManeuverSource = std::function<ManeuverDraw(const Scene&)>;

// Rolls out up to cfg.horizon steps, stopping early at first contact when
// stop_on_collision is set; records the scenes traversed, the minimum TTC,
// and the per-step log-density terms supplied by the source.
Scenario rollout(const Scene& s1, const ManeuverSource& source, const SimConfig& cfg,
                 const IdmParams& p);

}  // namespace rareflow
