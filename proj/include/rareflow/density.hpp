#pragma once

#include <cstddef>
#include <span>

#include "rareflow/rng.hpp"

namespace rareflow {

// Contract shared by the naturalistic model and the learned proposal:
// log-density evaluation and sampling, both in normalized coordinates.
// Implementations are immutable after construction; concurrent callers each
// hold their own Rng.
class DensityModel {
public:
    virtual ~DensityModel() = default;
    virtual std::size_t dim() const = 0;
    virtual double log_pdf(std::span<const double> x) const = 0;
    virtual void sample(Rng& rng, std::span<double> out) const = 0;
};

}  // namespace rareflow
