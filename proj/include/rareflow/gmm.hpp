#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rareflow/density.hpp"
#include "rareflow/linalg.hpp"

#include "json.hpp"

namespace rareflow {

// Full-covariance Gaussian mixture. Weights sum to one; every covariance is
// symmetric positive definite (its Cholesky factor is cached on finalize()).
class Gmm : public DensityModel {
public:
    Gmm() = default;
    Gmm(std::vector<double> weights, std::vector<Vec> means, std::vector<Mat> covariances);

    std::size_t components() const { return weights_.size(); }
    std::size_t dim() const override { return means_.empty() ? 0 : means_[0].size(); }

    const std::vector<double>& weights() const { return weights_; }
    const std::vector<Vec>& means() const { return means_; }
    const std::vector<Mat>& covariances() const { return covariances_; }

    // log sum_k w_k N(x; mu_k, Sigma_k), evaluated through log-sum-exp.
    double log_pdf(std::span<const double> x) const override;

    // Per-component log w_k + log N(x; mu_k, Sigma_k); out has `components()`
    // entries. Feeds EM responsibilities and diagnostics.
    void component_log_pdfs(std::span<const double> x, std::span<double> out) const;

    // Component by weight, then mu + L z.
    void sample(Rng& rng, std::span<double> out) const override;

    // Mixture mean per dimension (for sampling sanity checks).
    Vec mean() const;

    // Recomputes Cholesky factors and per-component constants. Throws
    // SingularComponent if any covariance is not positive definite.
    void finalize();

private:
    std::vector<double> weights_;
    std::vector<Vec> means_;
    std::vector<Mat> covariances_;
    std::vector<Mat> chol_;       // lower factors
    std::vector<double> log_norm_;  // log w_k - (d/2)log(2pi) - (1/2)log|Sigma_k|
    std::vector<double> cum_weights_;
};

struct GmmConfig {
    int max_iter = 200;
    double tol = 1e-6;      // relative mean log-likelihood change
    int restarts = 3;
    std::uint64_t seed = 1;
    double reg_floor = 1e-6;  // added to covariance diagonals each M step
};

struct GmmFit {
    Gmm model;
    std::vector<double> loglik_trace;  // mean log-likelihood per iteration (best restart)
    double mean_loglik = 0.0;
    int best_restart = 0;
};

// EM fit with k-means++-style mean seeding; best of `restarts` initializations
// by final mean log-likelihood. Requires at least 10*K*dim samples.
GmmFit fit_gmm(const Mat& data, int k, const GmmConfig& cfg);

inline double gmm_log_pdf(const Gmm& g, std::span<const double> x) { return g.log_pdf(x); }

inline Vec gmm_sample(const Gmm& g, Rng& rng) {
    Vec out(g.dim());
    g.sample(rng, out);
    return out;
}

// Exact marginal over the given dimensions: same weights, sub-vectors of
// means, sub-blocks of covariances.
Gmm gmm_marginal(const Gmm& g, std::span<const std::size_t> dims);

nlohmann::json gmm_to_json(const Gmm& g);
Gmm gmm_from_json(const nlohmann::json& j);
void save_gmm(const Gmm& g, const std::string& path, const nlohmann::json& extra = {});
Gmm load_gmm(const std::string& path);

}  // namespace rareflow
