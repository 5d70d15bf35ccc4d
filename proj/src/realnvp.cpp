#include "rareflow/realnvp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "rareflow/errors.hpp"

namespace rareflow {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454836;

struct MaskSplit {
    std::vector<std::size_t> pass;         // mask == 1
    std::vector<std::size_t> transformed;  // mask == 0
};

MaskSplit split_mask(const CouplingLayer& layer) {
    MaskSplit s;
    for (std::size_t i = 0; i < layer.mask.size(); ++i) {
        (layer.mask[i] ? s.pass : s.transformed).push_back(i);
    }
    if (s.pass.empty() || s.transformed.empty()) {
        throw ShapeMismatch("coupling layer: mask must keep and transform at least one coordinate");
    }
    if (layer.scale_net.in_dim() != s.pass.size() ||
        layer.scale_net.out_dim() != s.transformed.size() ||
        layer.translation_net.in_dim() != s.pass.size() ||
        layer.translation_net.out_dim() != s.transformed.size()) {
        throw ShapeMismatch("coupling layer: net shapes do not match mask split");
    }
    return s;
}

}  // namespace

double soft_clamp(double a, double bound) {
    const double knee = bound - 1.0;
    if (a > knee) return knee + std::tanh(a - knee);
    if (a < -knee) return -knee - std::tanh(-a - knee);
    return a;
}

double soft_clamp_grad(double a, double bound) {
    const double knee = bound - 1.0;
    if (a > knee) {
        const double t = std::tanh(a - knee);
        return 1.0 - t * t;
    }
    if (a < -knee) {
        const double t = std::tanh(-a - knee);
        return 1.0 - t * t;
    }
    return 1.0;
}

void Flow::validate() const {
    if (data_dim < 2) throw ShapeMismatch("flow: data dimension must be at least 2");
    if (scale_clamp <= 1.0) throw InvalidInput("flow: scale clamp must exceed 1");
    std::vector<bool> touched(data_dim, false);
    for (const auto& layer : layers) {
        if (layer.mask.size() != data_dim) throw ShapeMismatch("flow: mask length mismatch");
        const MaskSplit s = split_mask(layer);
        for (std::size_t i : s.transformed) touched[i] = true;
    }
    for (std::size_t i = 0; i < data_dim; ++i) {
        if (!touched[i]) {
            throw ShapeMismatch("flow: coordinate " + std::to_string(i) +
                                " is never transformed");
        }
    }
}

Flow make_flow(std::size_t dim, std::size_t num_layers, std::span<const std::size_t> hidden,
               double scale_clamp, Rng& rng) {
    if (dim < 2) throw InvalidInput("make_flow: dimension must be at least 2");
    if (num_layers < dim) {
        throw InvalidInput("make_flow: need at least dim layers so every coordinate is transformed");
    }
    Flow flow;
    flow.data_dim = dim;
    flow.scale_clamp = scale_clamp;
    for (std::size_t k = 0; k < num_layers; ++k) {
        CouplingLayer layer;
        layer.mask.assign(dim, 1);
        layer.mask[k % dim] = 0;
        layer.scale_net = make_mlp(dim - 1, hidden, 1, rng, /*zero_last=*/true);
        layer.translation_net = make_mlp(dim - 1, hidden, 1, rng, /*zero_last=*/true);
        flow.layers.push_back(std::move(layer));
    }
    flow.validate();
    return flow;
}

double coupling_forward(const CouplingLayer& layer, double scale_clamp,
                        std::span<const double> x, std::span<double> y) {
    const MaskSplit s = split_mask(layer);
    if (x.size() != layer.mask.size() || y.size() != x.size()) {
        throw DimensionMismatch("coupling_forward: dimension mismatch");
    }
    Vec u(s.pass.size());
    for (std::size_t i = 0; i < s.pass.size(); ++i) u[i] = x[s.pass[i]];

    Vec a, mu;
    mlp_forward(layer.scale_net, u, a);
    mlp_forward(layer.translation_net, u, mu);

    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i];
    double logdet = 0.0;
    for (std::size_t i = 0; i < s.transformed.size(); ++i) {
        const double alpha = soft_clamp(a[i], scale_clamp);
        const std::size_t j = s.transformed[i];
        y[j] = x[j] * std::exp(alpha) + mu[i];
        logdet += alpha;
        if (!std::isfinite(y[j])) throw NonFinite("coupling_forward: non-finite output");
    }
    return logdet;
}

void coupling_inverse(const CouplingLayer& layer, double scale_clamp, std::span<const double> y,
                      std::span<double> x) {
    const MaskSplit s = split_mask(layer);
    if (y.size() != layer.mask.size() || x.size() != y.size()) {
        throw DimensionMismatch("coupling_inverse: dimension mismatch");
    }
    Vec u(s.pass.size());
    for (std::size_t i = 0; i < s.pass.size(); ++i) u[i] = y[s.pass[i]];

    Vec a, mu;
    mlp_forward(layer.scale_net, u, a);
    mlp_forward(layer.translation_net, u, mu);

    for (std::size_t i = 0; i < y.size(); ++i) x[i] = y[i];
    for (std::size_t i = 0; i < s.transformed.size(); ++i) {
        const double alpha = soft_clamp(a[i], scale_clamp);
        const std::size_t j = s.transformed[i];
        x[j] = (y[j] - mu[i]) * std::exp(-alpha);
        if (!std::isfinite(x[j])) throw NonFinite("coupling_inverse: non-finite output");
    }
}

double flow_forward(const Flow& flow, std::span<const double> x, std::span<double> z) {
    if (x.size() != flow.data_dim || z.size() != flow.data_dim) {
        throw DimensionMismatch("flow_forward: dimension mismatch");
    }
    Vec cur(x.begin(), x.end());
    Vec next(flow.data_dim);
    double logdet = 0.0;
    for (const auto& layer : flow.layers) {
        logdet += coupling_forward(layer, flow.scale_clamp, cur, next);
        cur.swap(next);
    }
    std::copy(cur.begin(), cur.end(), z.begin());
    return logdet;
}

void flow_inverse(const Flow& flow, std::span<const double> z, std::span<double> x) {
    if (z.size() != flow.data_dim || x.size() != flow.data_dim) {
        throw DimensionMismatch("flow_inverse: dimension mismatch");
    }
    Vec cur(z.begin(), z.end());
    Vec next(flow.data_dim);
    for (auto it = flow.layers.rbegin(); it != flow.layers.rend(); ++it) {
        coupling_inverse(*it, flow.scale_clamp, cur, next);
        cur.swap(next);
    }
    std::copy(cur.begin(), cur.end(), x.begin());
}

double flow_log_pdf(const Flow& flow, std::span<const double> x) {
    Vec z(flow.data_dim);
    const double logdet = flow_forward(flow, x, z);
    double sq = 0.0;
    for (double v : z) sq += v * v;
    const double logpz = -0.5 * static_cast<double>(flow.data_dim) * kLogTwoPi - 0.5 * sq;
    const double lp = logpz + logdet;
    if (std::isnan(lp)) throw NonFinite("flow_log_pdf: non-finite log density");
    return lp;
}

Vec flow_sample(const Flow& flow, Rng& rng) {
    Vec z(flow.data_dim);
    for (double& v : z) v = rng.normal();
    Vec x(flow.data_dim);
    flow_inverse(flow, z, x);
    return x;
}

double Flow::log_pdf(std::span<const double> x) const { return flow_log_pdf(*this, x); }

void Flow::sample(Rng& rng, std::span<double> out) const {
    const Vec x = flow_sample(*this, rng);
    std::copy(x.begin(), x.end(), out.begin());
}

FlowGrads FlowGrads::zeros_like(const Flow& flow) {
    FlowGrads g;
    for (const auto& layer : flow.layers) {
        g.scale.push_back(MlpGrads::zeros_like(layer.scale_net));
        g.translation.push_back(MlpGrads::zeros_like(layer.translation_net));
    }
    return g;
}

void FlowGrads::zero() {
    for (auto& g : scale) g.zero();
    for (auto& g : translation) g.zero();
}

void FlowGrads::scale_all(double s) {
    for (auto& g : scale) g.scale(s);
    for (auto& g : translation) g.scale(s);
}

namespace {

// Forward caches for one sample, one entry per layer.
struct LayerCache {
    Vec input;   // full layer input
    Vec u;       // pass-through slice feeding the nets
    Vec a_raw;   // scale net output before the clamp
    Vec alpha;   // clamped scale
    Vec mu;      // translation net output
    Tape scale_tape;
    Tape trans_tape;
};

// Weighted NLL of one sample plus everything needed for the backward pass.
double forward_cached(const Flow& flow, std::span<const double> x,
                      std::vector<LayerCache>& caches, Vec& z) {
    caches.resize(flow.layers.size());
    Vec cur(x.begin(), x.end());
    double logdet = 0.0;
    for (std::size_t k = 0; k < flow.layers.size(); ++k) {
        const CouplingLayer& layer = flow.layers[k];
        const MaskSplit s = split_mask(layer);
        LayerCache& cache = caches[k];
        cache.input = cur;
        cache.u.resize(s.pass.size());
        for (std::size_t i = 0; i < s.pass.size(); ++i) cache.u[i] = cur[s.pass[i]];
        mlp_forward(layer.scale_net, cache.u, cache.a_raw, &cache.scale_tape);
        mlp_forward(layer.translation_net, cache.u, cache.mu, &cache.trans_tape);
        cache.alpha.resize(cache.a_raw.size());
        for (std::size_t i = 0; i < s.transformed.size(); ++i) {
            cache.alpha[i] = soft_clamp(cache.a_raw[i], flow.scale_clamp);
            const std::size_t j = s.transformed[i];
            cur[j] = cur[j] * std::exp(cache.alpha[i]) + cache.mu[i];
            logdet += cache.alpha[i];
        }
    }
    z = cur;
    double sq = 0.0;
    for (double v : z) sq += v * v;
    return 0.5 * sq + 0.5 * static_cast<double>(flow.data_dim) * kLogTwoPi - logdet;
}

// Backpropagates d(weight * nll)/d(params) for one sample into grads.
void backward_cached(const Flow& flow, const std::vector<LayerCache>& caches, const Vec& z,
                     double weight, FlowGrads& grads) {
    Vec g(flow.data_dim);
    for (std::size_t i = 0; i < z.size(); ++i) g[i] = weight * z[i];

    for (std::size_t k = flow.layers.size(); k-- > 0;) {
        const CouplingLayer& layer = flow.layers[k];
        const MaskSplit s = split_mask(layer);
        const LayerCache& cache = caches[k];

        Vec g_alpha(s.transformed.size());
        Vec g_mu(s.transformed.size());
        for (std::size_t i = 0; i < s.transformed.size(); ++i) {
            const std::size_t j = s.transformed[i];
            const double ea = std::exp(cache.alpha[i]);
            // y_j = x_j e^a + mu; the loss also holds -weight * sum(alpha).
            g_alpha[i] = g[j] * cache.input[j] * ea - weight;
            g_mu[i] = g[j];
            g[j] *= ea;  // becomes dL/dx_j for the transformed coordinate
        }
        for (std::size_t i = 0; i < s.transformed.size(); ++i) {
            g_alpha[i] *= soft_clamp_grad(cache.a_raw[i], flow.scale_clamp);
        }

        const Vec gu_scale = mlp_backward(layer.scale_net, cache.scale_tape, g_alpha, grads.scale[k]);
        const Vec gu_trans =
            mlp_backward(layer.translation_net, cache.trans_tape, g_mu, grads.translation[k]);
        for (std::size_t i = 0; i < s.pass.size(); ++i) {
            g[s.pass[i]] += gu_scale[i] + gu_trans[i];
        }
    }
}

}  // namespace

double flow_batch_loss(const Flow& flow, const Mat& samples, std::span<const double> weights) {
    if (samples.rows() != weights.size()) throw ShapeMismatch("flow loss: sample/weight counts");
    if (samples.rows() == 0) throw EmptyData("flow loss: empty batch");
    double total = 0.0;
    for (std::size_t i = 0; i < samples.rows(); ++i) {
        const std::span<const double> x(samples.row(i), flow.data_dim);
        total += weights[i] * (-flow_log_pdf(flow, x));
    }
    return total / static_cast<double>(samples.rows());
}

double flow_batch_loss_grads(const Flow& flow, const Mat& samples,
                             std::span<const double> weights, FlowGrads& grads) {
    if (samples.rows() != weights.size()) throw ShapeMismatch("flow loss: sample/weight counts");
    if (samples.rows() == 0) throw EmptyData("flow loss: empty batch");
    grads.zero();
    std::vector<LayerCache> caches;
    Vec z;
    double total = 0.0;
    for (std::size_t i = 0; i < samples.rows(); ++i) {
        const std::span<const double> x(samples.row(i), flow.data_dim);
        total += weights[i] * forward_cached(flow, x, caches, z);
        backward_cached(flow, caches, z, weights[i], grads);
    }
    const double inv_n = 1.0 / static_cast<double>(samples.rows());
    grads.scale_all(inv_n);
    return total * inv_n;
}

TrainResult train_flow(Flow& flow, const Mat& samples, std::span<const double> weights,
                       const TrainConfig& cfg) {
    if (samples.rows() == 0) throw EmptyData("train_flow: no samples");
    if (samples.rows() != weights.size()) throw ShapeMismatch("train_flow: sample/weight counts");
    if (samples.cols() != flow.data_dim) throw DimensionMismatch("train_flow: sample dimension");
    for (double w : weights) {
        if (!(w > 0.0) || w > 1.0) throw InvalidInput("train_flow: weights must lie in (0, 1]");
    }
    flow.scale_clamp = cfg.scale_clamp;
    flow.validate();

    TrainResult result;
    if (cfg.epochs <= 0) return result;

    std::vector<AdamState> adam_scale, adam_trans;
    for (const auto& layer : flow.layers) {
        adam_scale.push_back(AdamState::zeros_like(layer.scale_net));
        adam_trans.push_back(AdamState::zeros_like(layer.translation_net));
    }

    const std::size_t n = samples.rows();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(cfg.seed);

    FlowGrads grads = FlowGrads::zeros_like(flow);
    std::vector<LayerCache> caches;
    Vec z;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // Fisher-Yates with the run's own stream keeps training deterministic.
        for (std::size_t i = n - 1; i > 0; --i) {
            const std::size_t j = rng.uniform_index(i + 1);
            std::swap(order[i], order[j]);
        }
        double epoch_loss = 0.0;
        std::size_t start = 0;
        while (start < n) {
            const std::size_t stop = std::min(n, start + cfg.batch_size);
            const std::size_t bn = stop - start;
            grads.zero();
            double batch_loss = 0.0;
            for (std::size_t bi = start; bi < stop; ++bi) {
                const std::size_t idx = order[bi];
                const std::span<const double> x(samples.row(idx), flow.data_dim);
                const double nll = forward_cached(flow, x, caches, z);
                batch_loss += weights[idx] * nll;
                backward_cached(flow, caches, z, weights[idx], grads);
            }
            grads.scale_all(1.0 / static_cast<double>(bn));
            epoch_loss += batch_loss;
            for (std::size_t k = 0; k < flow.layers.size(); ++k) {
                adam_step(flow.layers[k].scale_net, grads.scale[k], adam_scale[k], cfg.lr);
                adam_step(flow.layers[k].translation_net, grads.translation[k], adam_trans[k],
                          cfg.lr);
            }
            start = stop;
        }
        epoch_loss /= static_cast<double>(n);
        if (!std::isfinite(epoch_loss)) {
            throw DivergedLoss("train_flow: non-finite loss at epoch " + std::to_string(epoch));
        }
        result.loss_trace.push_back(epoch_loss);
    }
    return result;
}

nlohmann::json flow_to_json(const Flow& flow) {
    nlohmann::json j;
    j["format_version"] = 1;
    j["kind"] = "realnvp";
    j["dim"] = flow.data_dim;
    j["scale_clamp"] = flow.scale_clamp;
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& layer : flow.layers) {
        nlohmann::json lj;
        lj["mask"] = layer.mask;
        lj["scale_net"] = mlp_to_json(layer.scale_net);
        lj["translation_net"] = mlp_to_json(layer.translation_net);
        layers.push_back(std::move(lj));
    }
    j["layers"] = layers;
    return j;
}

Flow flow_from_json(const nlohmann::json& j) {
    if (j.value("kind", "") != "realnvp") throw DataError("flow_from_json: not a flow model file");
    Flow flow;
    flow.data_dim = j.at("dim").get<std::size_t>();
    flow.scale_clamp = j.at("scale_clamp").get<double>();
    for (const auto& lj : j.at("layers")) {
        CouplingLayer layer;
        layer.mask = lj.at("mask").get<std::vector<std::uint8_t>>();
        layer.scale_net = mlp_from_json(lj.at("scale_net"));
        layer.translation_net = mlp_from_json(lj.at("translation_net"));
        flow.layers.push_back(std::move(layer));
    }
    flow.validate();
    return flow;
}

void save_flow(const Flow& flow, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("save_flow: cannot open " + path);
    out << flow_to_json(flow).dump(2) << '\n';
}

Flow load_flow(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FileNotFound("load_flow: cannot open " + path);
    nlohmann::json j;
    in >> j;
    return flow_from_json(j);
}

}  // namespace rareflow
