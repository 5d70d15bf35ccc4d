#pragma once

#include <cmath>
#include <limits>

#include "rareflow/types.hpp"

namespace rareflow {

struct RiskConfig {
    double ttc_cap = 99.0;             // reported in place of infinite TTC
    double risky_ttc_threshold = 10.0;  // diagnostic cutoff, seconds
};

// Time-to-collision under constant-velocity projection: gap over closing
// speed. Infinite when not closing, zero at or past contact.
inline double ttc(const Scene& s) {
    if (s.gap <= 0.0) return 0.0;
    const double closing = s.v_av - s.v_lead;
    if (closing <= 0.0) return std::numeric_limits<double>::infinity();
    return s.gap / closing;
}

// Smooth risk indicator exp(-ttc): 1 at contact, 0 when not closing,
// strictly decreasing in TTC.
inline double risk_weight(const Scene& s) { return std::exp(-ttc(s)); }

// Hard collision indicator; the gap = 0 boundary counts as collision.
inline bool is_collision(const Scene& s) { return s.gap <= 0.0; }

}  // namespace rareflow
