#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

namespace rareflow {

// Joint sample layout: [maneuver, v_av, v_lead, gap, a_lead].
inline constexpr std::size_t kSceneDim = 4;
inline constexpr std::size_t kJointDim = 5;
inline constexpr std::size_t kManeuverIndex = 0;
inline constexpr std::array<std::size_t, kSceneDim> kSceneDims = {1, 2, 3, 4};

// Instantaneous state of one car-following scene. Speeds are nonnegative in
// any live scene; gap may go nonpositive only in a terminal (collision) scene.
struct Scene {
    double v_av = 0.0;    // AV speed, m/s
    double v_lead = 0.0;  // leading-vehicle speed, m/s
    double gap = 0.0;     // bumper-to-bumper distance, m
    double a_lead = 0.0;  // current leading-vehicle acceleration, m/s^2
};

// Continuous background-vehicle action: commanded lead acceleration for the
// next step.
struct Maneuver {
    double a_cmd = 0.0;  // m/s^2
};

// Log densities recorded at one accepted maneuver, all in the shared
// normalized coordinates (p = naturalistic, q = proposal).
struct StepLogDensities {
    double log_p_ms = 0.0;
    double log_p_s = 0.0;
    double log_q_ms = 0.0;
    double log_q_s = 0.0;
};

struct InitialLogDensities {
    double log_p_s = 0.0;
    double log_q_s = 0.0;
};

// One rolled-out test case: initial scene plus the maneuver sequence, the
// traversed scenes, the outcome flag, and the per-step density terms the
// estimator consumes. |scenes| == |maneuvers| + 1 and
// |step_logs| == |maneuvers| always.
struct Scenario {
    Scene initial;
    std::vector<Maneuver> maneuvers;
    std::vector<Scene> scenes;
    bool collided = false;
    double min_ttc = 0.0;
    std::optional<InitialLogDensities> initial_log;
    std::vector<StepLogDensities> step_logs;
};

inline std::array<double, kSceneDim> scene_to_array(const Scene& s) {
    return {s.v_av, s.v_lead, s.gap, s.a_lead};
}

inline Scene scene_from_array(std::span<const double> a) {
    return Scene{a[0], a[1], a[2], a[3]};
}

inline std::array<double, kJointDim> joint_to_array(const Maneuver& m, const Scene& s) {
    return {m.a_cmd, s.v_av, s.v_lead, s.gap, s.a_lead};
}

// One row per timestep: step, v_av, v_lead, gap, a_lead, a_cmd, ttc, collided.
// The final scene has no maneuver; its a_cmd cell is left empty. TTC values
// are capped at ttc_cap so the file stays finite.
void write_scenario_csv(std::ostream& out, const Scenario& sc, double ttc_cap);

}  // namespace rareflow
