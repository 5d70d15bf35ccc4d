#pragma once

#include <cstdint>

#include "rareflow/density.hpp"
#include "rareflow/idm.hpp"
#include "rareflow/normalizer.hpp"
#include "rareflow/types.hpp"

namespace rareflow {

struct SamplerConfig {
    double m_min = -1.0;  // maneuver bounds, from the data summary
    double m_max = 1.0;
    int envelope_grid = 48;       // grid points for the envelope search
    double envelope_margin = 1.2;  // multiplicative safety factor
    int max_rejections = 10000;   // cap per step / per initial draw
    // Defensive share of the naturalistic conditional blended into the
    // proposal conditional; bounds each per-step likelihood ratio by
    // 1/defensive_epsilon. Zero leaves the proposal untouched.
    double defensive_epsilon = 0.0;
};

// Joint density over (m, s) plus its state marginal, both in normalized
// coordinates. Either the learned proposal or the naturalistic model.
struct DensityPair {
    const DensityModel* joint = nullptr;
    const DensityModel* marginal = nullptr;
};

struct StepDraw {
    Maneuver maneuver;
    int rejections = 0;
    StepLogDensities logs;
};

// Per-run accept-reject accounting. The envelope-violation rate must stay
// below 0.1% for a run to count as valid; an under-estimated envelope biases
// sampling silently, so the counter is mandatory.
struct SamplerStats {
    std::uint64_t candidates = 0;
    std::uint64_t accepted = 0;
    std::uint64_t envelope_violations = 0;
    std::uint64_t initial_draws = 0;
    std::uint64_t initial_rejected = 0;

    void merge(const SamplerStats& o) {
        candidates += o.candidates;
        accepted += o.accepted;
        envelope_violations += o.envelope_violations;
        initial_draws += o.initial_draws;
        initial_rejected += o.initial_rejected;
    }
    double acceptance_rate() const {
        return candidates == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(candidates);
    }
    double violation_rate() const {
        return candidates == 0 ? 0.0
                               : static_cast<double>(envelope_violations) / static_cast<double>(candidates);
    }
    bool valid() const { return violation_rate() < 1e-3; }
};

// Draws an initial scene from the state density (normalized space), mapping it
// back to physical coordinates; redraws up to max_rejections when the scene
// falls outside the observed data box.
Scene sample_initial_state(const DensityModel& state_density, const Normalizer& joint_norm,
                           const DataSummary& box, int max_rejections, SamplerStats& stats,
                           Rng& rng);

// Envelope bound M(s) >= conditional density of m given s (in physical
// maneuver units): margin times the grid maximum of the joint/marginal ratio
// over [m_min, m_max].
double conditional_envelope(const Scene& s, const DensityPair& proposal,
                            const Normalizer& joint_norm, const SamplerConfig& cfg);

// Accept-reject step: uniform candidate over the maneuver bounds, uniform
// height under M(s), accept when the height falls below the conditional. On
// acceptance evaluates the naturalistic pair as well and records all four log
// densities for the estimator.
StepDraw sample_maneuver(const Scene& s, const DensityPair& proposal, const DensityPair& natural,
                         const Normalizer& joint_norm, const SamplerConfig& cfg,
                         SamplerStats& stats, Rng& rng);

// Adapts sample_maneuver to the rollout callback interface. stats and rng must
// outlive the returned callback; each rollout owns its own rng stream.
ManeuverSource maneuver_source(const DensityPair& proposal, const DensityPair& natural,
                               const Normalizer& joint_norm, const SamplerConfig& cfg,
                               SamplerStats* stats, Rng* rng);

}  // namespace rareflow
