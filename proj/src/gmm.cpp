#include "rareflow/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include "rareflow/errors.hpp"

namespace rareflow {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454836;

double log_sum_exp(std::span<const double> v) {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : v) m = std::max(m, x);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

}  // namespace

Gmm::Gmm(std::vector<double> weights, std::vector<Vec> means, std::vector<Mat> covariances)
    : weights_(std::move(weights)), means_(std::move(means)), covariances_(std::move(covariances)) {
    finalize();
}

void Gmm::finalize() {
    const std::size_t k = weights_.size();
    if (k == 0 || means_.size() != k || covariances_.size() != k) {
        throw ShapeMismatch("Gmm: weights/means/covariances counts disagree");
    }
    const std::size_t d = means_[0].size();
    double wsum = 0.0;
    for (double w : weights_) {
        if (w < 0.0) throw InvalidInput("Gmm: negative component weight");
        wsum += w;
    }
    if (std::abs(wsum - 1.0) > 1e-10) throw InvalidInput("Gmm: weights do not sum to 1");

    chol_.assign(k, Mat());
    log_norm_.assign(k, 0.0);
    cum_weights_.assign(k, 0.0);
    double acc = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
        if (means_[c].size() != d || covariances_[c].rows() != d || covariances_[c].cols() != d) {
            throw ShapeMismatch("Gmm: component shape mismatch");
        }
        if (!cholesky_lower(covariances_[c], chol_[c], 1e-13)) {
            throw SingularComponent("Gmm: covariance of component " + std::to_string(c) +
                                    " is not positive definite");
        }
        const double logw = weights_[c] > 0.0 ? std::log(weights_[c])
                                              : -std::numeric_limits<double>::infinity();
        log_norm_[c] = logw - 0.5 * static_cast<double>(d) * kLogTwoPi - 0.5 * chol_log_det(chol_[c]);
        acc += weights_[c];
        cum_weights_[c] = acc;
    }
    cum_weights_.back() = 1.0;
}

void Gmm::component_log_pdfs(std::span<const double> x, std::span<double> out) const {
    const std::size_t d = dim();
    if (x.size() != d) throw DimensionMismatch("gmm: input dimension mismatch");
    if (out.size() != components()) throw ShapeMismatch("gmm: output size mismatch");
    double diff[16];
    Vec heap;
    double* buf = diff;
    if (d > 16) {
        heap.resize(d);
        buf = heap.data();
    }
    for (std::size_t c = 0; c < components(); ++c) {
        for (std::size_t j = 0; j < d; ++j) buf[j] = x[j] - means_[c][j];
        out[c] = log_norm_[c] -
                 0.5 * chol_quadratic_form(chol_[c], std::span<const double>(buf, d));
    }
}

double Gmm::log_pdf(std::span<const double> x) const {
    double terms[32];
    std::vector<double> heap;
    double* buf = terms;
    if (components() > 32) {
        heap.resize(components());
        buf = heap.data();
    }
    component_log_pdfs(x, std::span<double>(buf, components()));
    return log_sum_exp(std::span<const double>(buf, components()));
}

void Gmm::sample(Rng& rng, std::span<double> out) const {
    const double u = rng.uniform();
    std::size_t c = 0;
    while (c + 1 < cum_weights_.size() && u >= cum_weights_[c]) ++c;
    const std::size_t d = dim();
    Vec z(d);
    for (auto& v : z) v = rng.normal();
    chol_affine(chol_[c], means_[c], z, out);
}

Vec Gmm::mean() const {
    Vec m(dim(), 0.0);
    for (std::size_t c = 0; c < components(); ++c) {
        for (std::size_t j = 0; j < dim(); ++j) m[j] += weights_[c] * means_[c][j];
    }
    return m;
}

namespace {

// One restart of EM. Returns the per-iteration mean log-likelihood trace.
std::vector<double> run_em(const Mat& data, int k, const GmmConfig& cfg, Rng& rng, Gmm& model) {
    const std::size_t n = data.rows();
    const std::size_t d = data.cols();
    const std::size_t kk = static_cast<std::size_t>(k);

    // k-means++-style seeding: first mean uniform, later means proportional
    // to squared distance from the nearest chosen mean.
    std::vector<Vec> means;
    means.reserve(kk);
    Vec min_d2(n, std::numeric_limits<double>::infinity());
    {
        const std::size_t first = rng.uniform_index(n);
        means.emplace_back(data.row(first), data.row(first) + d);
    }
    while (means.size() < kk) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double* row = data.row(i);
            double d2 = 0.0;
            const Vec& m = means.back();
            for (std::size_t j = 0; j < d; ++j) {
                const double dv = row[j] - m[j];
                d2 += dv * dv;
            }
            min_d2[i] = std::min(min_d2[i], d2);
            total += min_d2[i];
        }
        std::size_t pick = 0;
        if (total > 0.0) {
            double target = rng.uniform() * total;
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                acc += min_d2[i];
                if (acc >= target) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = rng.uniform_index(n);
        }
        means.emplace_back(data.row(pick), data.row(pick) + d);
    }

    // Shared initial covariance: data covariance plus the floor.
    Vec mean0(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = data.row(i);
        for (std::size_t j = 0; j < d; ++j) mean0[j] += row[j];
    }
    for (double& v : mean0) v /= static_cast<double>(n);
    Mat cov0(d, d);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = data.row(i);
        for (std::size_t a = 0; a < d; ++a) {
            const double da = row[a] - mean0[a];
            for (std::size_t b = 0; b <= a; ++b) cov0(a, b) += da * (row[b] - mean0[b]);
        }
    }
    for (std::size_t a = 0; a < d; ++a) {
        for (std::size_t b = 0; b <= a; ++b) {
            cov0(a, b) /= static_cast<double>(n);
            cov0(b, a) = cov0(a, b);
        }
        cov0(a, a) += cfg.reg_floor;
    }

    std::vector<double> weights(kk, 1.0 / static_cast<double>(kk));
    std::vector<Mat> covs(kk, cov0);
    model = Gmm(weights, means, covs);

    std::vector<double> trace;
    Mat resp(n, kk);
    Vec comp(kk);

    double prev_ll = -std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < cfg.max_iter; ++iter) {
        // E step.
        double ll = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double* row = data.row(i);
            model.component_log_pdfs(std::span<const double>(row, d), comp);
            double best = -std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < kk; ++c) best = std::max(best, comp[c]);
            double s = 0.0;
            for (std::size_t c = 0; c < kk; ++c) s += std::exp(comp[c] - best);
            const double row_ll = best + std::log(s);
            ll += row_ll;
            for (std::size_t c = 0; c < kk; ++c) resp(i, c) = std::exp(comp[c] - row_ll);
        }
        ll /= static_cast<double>(n);
        trace.push_back(ll);

        if (iter > 0) {
            const double rel = std::abs(ll - prev_ll) / std::max(1.0, std::abs(prev_ll));
            if (rel < cfg.tol) break;
        }
        prev_ll = ll;

        // M step.
        std::vector<double> nk(kk, 0.0);
        for (std::size_t c = 0; c < kk; ++c) {
            for (std::size_t i = 0; i < n; ++i) nk[c] += resp(i, c);
        }
        std::vector<Vec> new_means(kk, Vec(d, 0.0));
        for (std::size_t c = 0; c < kk; ++c) {
            if (nk[c] <= 0.0) {
                throw SingularComponent("fit_gmm: component " + std::to_string(c) +
                                        " lost all responsibility");
            }
            for (std::size_t i = 0; i < n; ++i) {
                const double r = resp(i, c);
                if (r == 0.0) continue;
                const double* row = data.row(i);
                for (std::size_t j = 0; j < d; ++j) new_means[c][j] += r * row[j];
            }
            for (double& v : new_means[c]) v /= nk[c];
        }
        std::vector<Mat> new_covs(kk, Mat(d, d));
        for (std::size_t c = 0; c < kk; ++c) {
            Mat& cov = new_covs[c];
            for (std::size_t i = 0; i < n; ++i) {
                const double r = resp(i, c);
                if (r == 0.0) continue;
                const double* row = data.row(i);
                for (std::size_t a = 0; a < d; ++a) {
                    const double da = row[a] - new_means[c][a];
                    for (std::size_t b = 0; b <= a; ++b) {
                        cov(a, b) += r * da * (row[b] - new_means[c][b]);
                    }
                }
            }
            for (std::size_t a = 0; a < d; ++a) {
                for (std::size_t b = 0; b <= a; ++b) {
                    cov(a, b) /= nk[c];
                    cov(b, a) = cov(a, b);
                }
                cov(a, a) += cfg.reg_floor;
            }
        }
        std::vector<double> new_weights(kk);
        for (std::size_t c = 0; c < kk; ++c) new_weights[c] = nk[c] / static_cast<double>(n);
        double wsum = 0.0;
        for (double w : new_weights) wsum += w;
        for (double& w : new_weights) w /= wsum;

        model = Gmm(new_weights, new_means, new_covs);
    }
    return trace;
}

}  // namespace

GmmFit fit_gmm(const Mat& data, int k, const GmmConfig& cfg) {
    if (k < 1) throw InvalidInput("fit_gmm: K must be >= 1");
    const std::size_t n = data.rows();
    const std::size_t d = data.cols();
    const std::size_t need = 10 * static_cast<std::size_t>(k) * d;
    if (n < need) {
        throw TooFewSamples("fit_gmm: need at least " + std::to_string(need) + " samples, got " +
                            std::to_string(n));
    }

    GmmFit best;
    best.mean_loglik = -std::numeric_limits<double>::infinity();
    for (int r = 0; r < std::max(1, cfg.restarts); ++r) {
        Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(r)));
        Gmm model;
        std::vector<double> trace = run_em(data, k, cfg, rng, model);
        if (!trace.empty() && trace.back() > best.mean_loglik) {
            best.model = std::move(model);
            best.loglik_trace = std::move(trace);
            best.mean_loglik = best.loglik_trace.back();
            best.best_restart = r;
        }
    }
    return best;
}

Gmm gmm_marginal(const Gmm& g, std::span<const std::size_t> dims) {
    if (dims.empty()) throw EmptyDims("gmm_marginal: empty dimension set");
    for (std::size_t d : dims) {
        if (d >= g.dim()) throw DimensionMismatch("gmm_marginal: dimension index out of range");
    }
    std::vector<Vec> means;
    std::vector<Mat> covs;
    means.reserve(g.components());
    covs.reserve(g.components());
    for (std::size_t c = 0; c < g.components(); ++c) {
        Vec m(dims.size());
        Mat cov(dims.size(), dims.size());
        for (std::size_t a = 0; a < dims.size(); ++a) {
            m[a] = g.means()[c][dims[a]];
            for (std::size_t b = 0; b < dims.size(); ++b) {
                cov(a, b) = g.covariances()[c](dims[a], dims[b]);
            }
        }
        means.push_back(std::move(m));
        covs.push_back(std::move(cov));
    }
    return Gmm(g.weights(), means, covs);
}

nlohmann::json gmm_to_json(const Gmm& g) {
    nlohmann::json j;
    j["format_version"] = 1;
    j["kind"] = "gmm";
    j["dim"] = g.dim();
    j["K"] = g.components();
    j["weights"] = g.weights();
    nlohmann::json means = nlohmann::json::array();
    for (const auto& m : g.means()) means.push_back(m);
    j["means"] = means;
    nlohmann::json covs = nlohmann::json::array();
    for (const auto& c : g.covariances()) {
        nlohmann::json cm = nlohmann::json::array();
        for (std::size_t a = 0; a < c.rows(); ++a) {
            cm.push_back(std::vector<double>(c.row(a), c.row(a) + c.cols()));
        }
        covs.push_back(cm);
    }
    j["covariances"] = covs;
    return j;
}

Gmm gmm_from_json(const nlohmann::json& j) {
    if (!j.contains("format_version") || j.value("kind", "") != "gmm") {
        throw DataError("gmm_from_json: not a gmm model file");
    }
    const std::size_t k = j.at("K").get<std::size_t>();
    const std::size_t d = j.at("dim").get<std::size_t>();
    std::vector<double> weights = j.at("weights").get<std::vector<double>>();
    std::vector<Vec> means;
    for (const auto& m : j.at("means")) means.push_back(m.get<Vec>());
    std::vector<Mat> covs;
    for (const auto& cm : j.at("covariances")) {
        Mat cov(d, d);
        for (std::size_t a = 0; a < d; ++a) {
            const auto row = cm.at(a).get<std::vector<double>>();
            for (std::size_t b = 0; b < d; ++b) cov(a, b) = row.at(b);
        }
        covs.push_back(std::move(cov));
    }
    if (weights.size() != k || means.size() != k || covs.size() != k) {
        throw DataError("gmm_from_json: component count mismatch");
    }
    return Gmm(std::move(weights), std::move(means), std::move(covs));
}

void save_gmm(const Gmm& g, const std::string& path, const nlohmann::json& extra) {
    nlohmann::json j = gmm_to_json(g);
    if (!extra.is_null() && !extra.empty()) j["fit"] = extra;
    std::ofstream out(path);
    if (!out) throw DataError("save_gmm: cannot open " + path);
    out << j.dump(2) << '\n';
}

Gmm load_gmm(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FileNotFound("load_gmm: cannot open " + path);
    nlohmann::json j;
    in >> j;
    return gmm_from_json(j);
}

}  // namespace rareflow
