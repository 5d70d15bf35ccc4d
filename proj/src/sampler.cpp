#include "rareflow/sampler.hpp"

#include <array>
#include <cmath>
#include <string>

#include "rareflow/errors.hpp"

namespace rareflow {

namespace {

// Conditional density of the maneuver given the scene, in physical maneuver
// units: exp(log joint - log marginal) divided by the maneuver scale (the
// affine Jacobian of the normalization).
struct ConditionalEval {
    const DensityPair* pair;
    const Normalizer* norm;
    std::array<double, kJointDim> z;  // normalized joint point, scene part fixed
    double log_marginal = 0.0;
    double log_m_scale = 0.0;

    ConditionalEval(const DensityPair& p, const Normalizer& n, const Scene& s)
        : pair(&p), norm(&n) {
        const auto joint = joint_to_array(Maneuver{0.0}, s);
        for (std::size_t i = 0; i < kJointDim; ++i) {
            z[i] = (joint[i] - n.shift[i]) / n.scale[i];
        }
        const std::span<const double> scene_z(z.data() + 1, kSceneDim);
        log_marginal = p.marginal->log_pdf(scene_z);
        log_m_scale = std::log(n.scale[kManeuverIndex]);
    }

    double log_joint(double m) {
        z[kManeuverIndex] = (m - norm->shift[kManeuverIndex]) / norm->scale[kManeuverIndex];
        return pair->joint->log_pdf(z);
    }

    double density(double m) { return std::exp(log_joint(m) - log_marginal - log_m_scale); }
};

}  // namespace

Scene sample_initial_state(const DensityModel& state_density, const Normalizer& joint_norm,
                           const DataSummary& box, int max_rejections, SamplerStats& stats,
                           Rng& rng) {
    if (state_density.dim() != kSceneDim) {
        throw DimensionMismatch("sample_initial_state: state density must cover the scene");
    }
    const Normalizer scene_norm = joint_norm.slice(kSceneDims);
    std::array<double, kSceneDim> z{};
    std::array<double, kSceneDim> raw{};
    for (int attempt = 0; attempt < max_rejections; ++attempt) {
        state_density.sample(rng, z);
        denormalize_into(scene_norm, z, raw);
        const Scene s = scene_from_array(raw);
        stats.initial_draws += 1;
        if (box.scene_in_box(s)) return s;
        stats.initial_rejected += 1;
    }
    throw DegenerateFlow("sample_initial_state: exhausted " + std::to_string(max_rejections) +
                         " draws without hitting the data box");
}

double conditional_envelope(const Scene& s, const DensityPair& proposal,
                            const Normalizer& joint_norm, const SamplerConfig& cfg) {
    if (cfg.envelope_grid < 16) throw InvalidInput("conditional_envelope: grid must be >= 16");
    if (!(cfg.m_min < cfg.m_max)) throw InvalidInput("conditional_envelope: bad maneuver bounds");
    ConditionalEval cond(proposal, joint_norm, s);
    const double step = (cfg.m_max - cfg.m_min) / static_cast<double>(cfg.envelope_grid - 1);
    double peak = 0.0;
    for (int i = 0; i < cfg.envelope_grid; ++i) {
        const double m = cfg.m_min + step * static_cast<double>(i);
        peak = std::max(peak, cond.density(m));
    }
    const double bound = cfg.envelope_margin * peak;
    if (!std::isfinite(bound)) throw NonFinite("conditional_envelope: non-finite bound");
    return bound;
}

StepDraw sample_maneuver(const Scene& s, const DensityPair& proposal, const DensityPair& natural,
                         const Normalizer& joint_norm, const SamplerConfig& cfg,
                         SamplerStats& stats, Rng& rng) {
    const double bound = conditional_envelope(s, proposal, joint_norm, cfg);
    if (bound <= 0.0) {
        throw MaxRejectionsExceeded("sample_maneuver: zero envelope, acceptance impossible");
    }

    ConditionalEval cond(proposal, joint_norm, s);
    for (int attempt = 0; attempt < cfg.max_rejections; ++attempt) {
        const double m = rng.uniform(cfg.m_min, cfg.m_max);
        const double log_q_ms = cond.log_joint(m);
        const double density = std::exp(log_q_ms - cond.log_marginal - cond.log_m_scale);
        stats.candidates += 1;
        if (density > bound) stats.envelope_violations += 1;
        const double height = rng.uniform(0.0, bound);
        if (height <= density) {
            stats.accepted += 1;
            StepDraw draw;
            draw.maneuver = Maneuver{m};
            draw.rejections = attempt;
            draw.logs.log_q_ms = log_q_ms;
            draw.logs.log_q_s = cond.log_marginal;
            ConditionalEval nat(natural, joint_norm, s);
            draw.logs.log_p_ms = nat.log_joint(m);
            draw.logs.log_p_s = nat.log_marginal;
            return draw;
        }
    }
    throw MaxRejectionsExceeded("sample_maneuver: no acceptance after " +
                                std::to_string(cfg.max_rejections) + " candidates");
}

ManeuverSource maneuver_source(const DensityPair& proposal, const DensityPair& natural,
                               const Normalizer& joint_norm, const SamplerConfig& cfg,
                               SamplerStats* stats, Rng* rng) {
    return [proposal, natural, norm = joint_norm, cfg, stats, rng](const Scene& s) {
        StepDraw draw = sample_maneuver(s, proposal, natural, norm, cfg, *stats, *rng);
        return ManeuverDraw{draw.maneuver, draw.logs};
    };
}

}  // namespace rareflow
