#include "rareflow/normalizer.hpp"

#include <cmath>
#include <string>

#include "rareflow/errors.hpp"

namespace rareflow {

Normalizer Normalizer::slice(std::span<const std::size_t> dims) const {
    Normalizer out;
    out.shift.reserve(dims.size());
    out.scale.reserve(dims.size());
    for (std::size_t d : dims) {
        out.shift.push_back(shift.at(d));
        out.scale.push_back(scale.at(d));
    }
    return out;
}

Normalizer fit_normalizer(const Mat& samples) {
    const std::size_t n = samples.rows();
    const std::size_t d = samples.cols();
    if (n < 2) throw TooFewSamples("fit_normalizer: need at least 2 samples, got " + std::to_string(n));

    Normalizer out;
    out.shift.assign(d, 0.0);
    out.scale.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = samples.row(i);
        for (std::size_t j = 0; j < d; ++j) out.shift[j] += row[j];
    }
    for (double& s : out.shift) s /= static_cast<double>(n);

    for (std::size_t i = 0; i < n; ++i) {
        const double* row = samples.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            const double dev = row[j] - out.shift[j];
            out.scale[j] += dev * dev;
        }
    }
    for (std::size_t j = 0; j < d; ++j) {
        out.scale[j] = std::sqrt(out.scale[j] / static_cast<double>(n - 1));
        if (out.scale[j] <= 0.0) {
            throw ConstantDimension("fit_normalizer: dimension " + std::to_string(j) +
                                    " has zero standard deviation");
        }
    }
    return out;
}

void normalize_into(const Normalizer& n, std::span<const double> x, std::span<double> out) {
    if (x.size() != n.dim() || out.size() != n.dim()) {
        throw DimensionMismatch("normalize: expected dimension " + std::to_string(n.dim()));
    }
    for (std::size_t j = 0; j < x.size(); ++j) out[j] = (x[j] - n.shift[j]) / n.scale[j];
}

void denormalize_into(const Normalizer& n, std::span<const double> z, std::span<double> out) {
    if (z.size() != n.dim() || out.size() != n.dim()) {
        throw DimensionMismatch("denormalize: expected dimension " + std::to_string(n.dim()));
    }
    for (std::size_t j = 0; j < z.size(); ++j) out[j] = z[j] * n.scale[j] + n.shift[j];
}

Vec normalize(const Normalizer& n, std::span<const double> x) {
    Vec out(x.size());
    normalize_into(n, x, out);
    return out;
}

Vec denormalize(const Normalizer& n, std::span<const double> z) {
    Vec out(z.size());
    denormalize_into(n, z, out);
    return out;
}

DataSummary summarize_samples(const Mat& joint_samples) {
    if (joint_samples.cols() != kJointDim) {
        throw DimensionMismatch("summarize_samples: expected joint-layout columns");
    }
    if (joint_samples.rows() == 0) throw EmptyData("summarize_samples: no rows");

    DataSummary s;
    s.count = joint_samples.rows();
    s.m_min = s.m_max = joint_samples(0, kManeuverIndex);
    for (std::size_t j = 0; j < kSceneDim; ++j) {
        s.scene_min[j] = s.scene_max[j] = joint_samples(0, kSceneDims[j]);
    }
    for (std::size_t i = 1; i < joint_samples.rows(); ++i) {
        const double m = joint_samples(i, kManeuverIndex);
        s.m_min = std::min(s.m_min, m);
        s.m_max = std::max(s.m_max, m);
        for (std::size_t j = 0; j < kSceneDim; ++j) {
            const double v = joint_samples(i, kSceneDims[j]);
            s.scene_min[j] = std::min(s.scene_min[j], v);
            s.scene_max[j] = std::max(s.scene_max[j], v);
        }
    }
    if (!(s.m_min < s.m_max)) {
        throw ConstantDimension("summarize_samples: maneuver column is constant");
    }
    return s;
}

}  // namespace rareflow
