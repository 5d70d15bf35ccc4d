#pragma once

#include <array>
#include <span>

#include "rareflow/linalg.hpp"
#include "rareflow/types.hpp"

namespace rareflow {

// Per-dimension affine z-score map. Every scale is strictly positive;
// normalize/denormalize are exact inverses up to roundoff.
struct Normalizer {
    Vec shift;  // sample means
    Vec scale;  // sample standard deviations

    std::size_t dim() const { return shift.size(); }

    Normalizer slice(std::span<const std::size_t> dims) const;
};

// shift = sample mean, scale = sample standard deviation (n-1 denominator),
// per dimension. Requires at least two rows and no constant dimension.
Normalizer fit_normalizer(const Mat& samples);

Vec normalize(const Normalizer& n, std::span<const double> x);
Vec denormalize(const Normalizer& n, std::span<const double> z);

void normalize_into(const Normalizer& n, std::span<const double> x, std::span<double> out);
void denormalize_into(const Normalizer& n, std::span<const double> z, std::span<double> out);

// Maneuver bounds and the per-dimension scene box observed in the data.
struct DataSummary {
    double m_min = 0.0;
    double m_max = 0.0;
    std::array<double, kSceneDim> scene_min{};
    std::array<double, kSceneDim> scene_max{};
    std::uint64_t count = 0;

    bool scene_in_box(const Scene& s) const {
        const auto a = scene_to_array(s);
        for (std::size_t i = 0; i < kSceneDim; ++i) {
            if (a[i] < scene_min[i] || a[i] > scene_max[i]) return false;
        }
        return true;
    }
};

// Summarizes a joint-layout sample table: maneuver bounds are the exact
// min/max of column 0, the scene box the min/max of the remaining columns.
DataSummary summarize_samples(const Mat& joint_samples);

}  // namespace rareflow
