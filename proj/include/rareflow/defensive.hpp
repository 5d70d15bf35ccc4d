#pragma once

#include <cmath>

#include "rareflow/density.hpp"

namespace rareflow {

// Defensive mixture around a learned proposal: with probability epsilon the
// sample comes from the defensive density (normally the naturalistic model
// itself, in the same normalized space). The floor epsilon * defensive(x)
// bounds every likelihood ratio naturalistic/proposal by 1/epsilon, which
// guarantees the absolute continuity the reweighted estimator needs and keeps
// the effective sample size from collapsing when the learned tilt is extreme.
class DefensiveMixture : public DensityModel {
public:
    DefensiveMixture(const DensityModel& core, const DensityModel& defensive, double epsilon)
        : core_(&core), defensive_(&defensive), epsilon_(epsilon) {}

    std::size_t dim() const override { return core_->dim(); }

    double log_pdf(std::span<const double> x) const override {
        const double log_def = std::log(epsilon_) + defensive_->log_pdf(x);
        if (epsilon_ >= 1.0) return defensive_->log_pdf(x);
        const double log_core = std::log1p(-epsilon_) + core_->log_pdf(x);
        const double hi = std::max(log_core, log_def);
        if (!std::isfinite(hi)) return hi;  // both underflowed
        return hi + std::log(std::exp(log_core - hi) + std::exp(log_def - hi));
    }

    void sample(Rng& rng, std::span<double> out) const override {
        if (rng.uniform() < epsilon_) {
            defensive_->sample(rng, out);
        } else {
            core_->sample(rng, out);
        }
    }

private:
    const DensityModel* core_;
    const DensityModel* defensive_;
    double epsilon_;
};

}  // namespace rareflow
