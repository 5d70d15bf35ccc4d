#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "rareflow/types.hpp"

namespace rareflow {

// Inverse standard-normal CDF (rational approximation, absolute error below
// 1e-8 over (0, 1)).
double inverse_normal_cdf(double p);

struct PlannerInput {
    double p = 0.0;     // anticipated event rate, (0, 1]
    double b = 0.2;     // relative half-width threshold
    double beta = 0.05;  // significance; z = Phi^-1(1 - beta/2)
};

// Minimum sample count so that the relative half-width of the level-(1-beta)
// confidence interval stays within b: ceil((1-p)/p * z^2 / b^2).
std::uint64_t required_n(const PlannerInput& in);

// One consumed scenario from the estimator's point of view.
struct IsSample {
    double log_ratio = 0.0;  // log of the naturalistic/proposal likelihood ratio
    bool hit = false;        // hard event indicator
};

// Order-independent streaming accumulator over per-scenario contributions
// x = weight * indicator; merging partials is associative.
struct WeightedMoments {
    std::uint64_t n = 0;
    double sum = 0.0;
    double sum_sq = 0.0;
    double w_sum = 0.0;
    double w_sq_sum = 0.0;
    double w_min = 0.0;
    double w_max = 0.0;
    std::uint64_t hits = 0;

    void add(double weight, bool hit);
    void merge(const WeightedMoments& o);
};

struct EstimationReport {
    std::uint64_t n = 0;
    double estimate = 0.0;
    double variance = 0.0;   // variance of the estimator (s^2 / n)
    double std_error = 0.0;
    double omega = 0.0;      // relative half-width at confidence 1 - beta
    double beta = 0.05;
    double z = 0.0;
    std::uint64_t hits = 0;
    double weight_min = 0.0;
    double weight_max = 0.0;
    double weight_mean = 0.0;
    double n_eff = 0.0;      // (sum w)^2 / sum w^2
    double wall_clock_s = 0.0;
};

EstimationReport finalize_report(const WeightedMoments& m, double beta, double wall_clock_s = 0.0);

// Sample mean of the indicators; omega is +inf when the estimate is zero.
EstimationReport crude_estimate(std::span<const std::uint8_t> outcomes, double beta = 0.05);

// Log likelihood ratio of one scenario: initial-state term plus the per-step
// terms over the traversed prefix, accumulated in log space.
double scenario_log_ratio(const Scenario& sc);

// Mean of exp(log_ratio) * indicator with the weighted sample variance; with
// all-unit ratios this reduces bit-for-bit to crude_estimate.
EstimationReport is_estimate(std::span<const IsSample> samples, double beta = 0.05);

struct TraceRow {
    std::uint64_t n = 0;
    double estimate = 0.0;
    double omega = 0.0;
};

// Running (n, estimate, omega) every `interval` scenarios plus a final row.
std::vector<TraceRow> convergence_trace(std::span<const IsSample> samples, std::uint64_t interval,
                                        double beta = 0.05);

}  // namespace rareflow
