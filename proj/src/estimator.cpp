#include "rareflow/estimator.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "rareflow/errors.hpp"

namespace rareflow {

double inverse_normal_cdf(double p) {
    if (!(p > 0.0 && p < 1.0)) throw InvalidInput("inverse_normal_cdf: p must be in (0, 1)");

    // Acklam's rational approximation with one Halley refinement step.
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    const double plow = 0.02425;
    double x;
    if (p < plow) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - plow) {
        const double q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    // Halley step against the exact CDF via erfc.
    const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
    const double u = e * std::sqrt(2.0 * M_PI) * std::exp(x * x / 2.0);
    x = x - u / (1.0 + x * u / 2.0);
    return x;
}

std::uint64_t required_n(const PlannerInput& in) {
    if (!(in.p > 0.0 && in.p <= 1.0)) throw InvalidInput("required_n: P must be in (0, 1]");
    if (!(in.b > 0.0)) throw InvalidInput("required_n: b must be positive");
    if (!(in.beta > 0.0 && in.beta < 1.0)) throw InvalidInput("required_n: beta must be in (0, 1)");
    const double z = inverse_normal_cdf(1.0 - in.beta / 2.0);
    const double bound = (1.0 - in.p) / in.p * z * z / (in.b * in.b);
    return static_cast<std::uint64_t>(std::ceil(bound));
}

void WeightedMoments::add(double weight, bool hit) {
    const double x = hit ? weight : 0.0;
    if (n == 0) {
        w_min = weight;
        w_max = weight;
    } else {
        w_min = std::min(w_min, weight);
        w_max = std::max(w_max, weight);
    }
    n += 1;
    sum += x;
    sum_sq += x * x;
    w_sum += weight;
    w_sq_sum += weight * weight;
    hits += hit ? 1u : 0u;
}

void WeightedMoments::merge(const WeightedMoments& o) {
    if (o.n == 0) return;
    if (n == 0) {
        *this = o;
        return;
    }
    n += o.n;
    sum += o.sum;
    sum_sq += o.sum_sq;
    w_sum += o.w_sum;
    w_sq_sum += o.w_sq_sum;
    w_min = std::min(w_min, o.w_min);
    w_max = std::max(w_max, o.w_max);
    hits += o.hits;
}

EstimationReport finalize_report(const WeightedMoments& m, double beta, double wall_clock_s) {
    if (m.n == 0) throw EmptyStream("finalize_report: no scenarios consumed");
    EstimationReport r;
    r.n = m.n;
    r.beta = beta;
    r.z = inverse_normal_cdf(1.0 - beta / 2.0);
    const double n = static_cast<double>(m.n);
    r.estimate = m.sum / n;
    if (m.n >= 2) {
        const double s2 = std::max(0.0, (m.sum_sq - n * r.estimate * r.estimate) / (n - 1.0));
        r.variance = s2 / n;
        r.std_error = std::sqrt(r.variance);
    } else {
        r.variance = std::numeric_limits<double>::infinity();
        r.std_error = std::numeric_limits<double>::infinity();
    }
    r.omega = r.estimate > 0.0 ? r.z * r.std_error / r.estimate
                               : std::numeric_limits<double>::infinity();
    r.hits = m.hits;
    r.weight_min = m.w_min;
    r.weight_max = m.w_max;
    r.weight_mean = m.w_sum / n;
    r.n_eff = m.w_sq_sum > 0.0 ? m.w_sum * m.w_sum / m.w_sq_sum : 0.0;
    r.wall_clock_s = wall_clock_s;
    return r;
}

EstimationReport crude_estimate(std::span<const std::uint8_t> outcomes, double beta) {
    if (outcomes.empty()) throw EmptyStream("crude_estimate: empty stream");
    WeightedMoments m;
    for (std::uint8_t o : outcomes) m.add(1.0, o != 0);
    return finalize_report(m, beta);
}

double scenario_log_ratio(const Scenario& sc) {
    if (!sc.initial_log.has_value()) {
        throw MissingTerms("scenario_log_ratio: initial-state log densities missing");
    }
    if (sc.step_logs.size() != sc.maneuvers.size()) {
        throw MissingTerms("scenario_log_ratio: per-step terms do not match maneuver count");
    }
    // paired differences keep like magnitudes together, and make the ratio
    // exactly zero when proposal and naturalistic densities coincide
    double acc = sc.initial_log->log_p_s - sc.initial_log->log_q_s;
    for (const StepLogDensities& t : sc.step_logs) {
        acc += (t.log_p_ms - t.log_q_ms) + (t.log_q_s - t.log_p_s);
    }
    return acc;
}

EstimationReport is_estimate(std::span<const IsSample> samples, double beta) {
    if (samples.empty()) throw EmptyStream("is_estimate: empty stream");
    WeightedMoments m;
    for (const IsSample& s : samples) {
        const double w = std::exp(s.log_ratio);
        if (!std::isfinite(w)) {
            throw NonFiniteWeight("is_estimate: non-finite likelihood ratio exp(" +
                                  std::to_string(s.log_ratio) + ")");
        }
        m.add(w, s.hit);
    }
    return finalize_report(m, beta);
}

std::vector<TraceRow> convergence_trace(std::span<const IsSample> samples, std::uint64_t interval,
                                        double beta) {
    std::vector<TraceRow> out;
    if (interval == 0) throw InvalidInput("convergence_trace: interval must be positive");
    WeightedMoments m;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double w = std::exp(samples[i].log_ratio);
        if (!std::isfinite(w)) throw NonFiniteWeight("convergence_trace: non-finite ratio");
        m.add(w, samples[i].hit);
        if (m.n % interval == 0 || i + 1 == samples.size()) {
            const EstimationReport r = finalize_report(m, beta);
            out.push_back(TraceRow{r.n, r.estimate, r.omega});
        }
    }
    return out;
}

}  // namespace rareflow
