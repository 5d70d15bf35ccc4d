#include "rareflow/mlp.hpp"

#include <cmath>
#include <fstream>

#include "rareflow/errors.hpp"

namespace rareflow {

namespace {

inline double activate(Activation a, double x) {
    switch (a) {
        case Activation::kLeakyRelu:
            return x >= 0.0 ? x : kLeakyReluSlope * x;
        case Activation::kTanh:
            return std::tanh(x);
        case Activation::kIdentity:
            return x;
    }
    return x;
}

inline double activate_grad(Activation a, double pre) {
    switch (a) {
        case Activation::kLeakyRelu:
            return pre >= 0.0 ? 1.0 : kLeakyReluSlope;
        case Activation::kTanh: {
            const double t = std::tanh(pre);
            return 1.0 - t * t;
        }
        case Activation::kIdentity:
            return 1.0;
    }
    return 1.0;
}

std::string act_name(Activation a) {
    switch (a) {
        case Activation::kLeakyRelu:
            return "leaky_relu";
        case Activation::kTanh:
            return "tanh";
        case Activation::kIdentity:
            return "identity";
    }
    return "identity";
}

Activation act_from_name(const std::string& s) {
    if (s == "leaky_relu") return Activation::kLeakyRelu;
    if (s == "tanh") return Activation::kTanh;
    if (s == "identity") return Activation::kIdentity;
    throw DataError("mlp_from_json: unknown activation " + s);
}

}  // namespace

Mlp make_mlp(std::size_t in, std::span<const std::size_t> hidden, std::size_t out, Rng& rng,
             bool zero_last) {
    Mlp net;
    std::size_t prev = in;
    for (std::size_t h = 0; h < hidden.size(); ++h) {
        DenseLayer layer;
        layer.weights = Mat(hidden[h], prev);
        layer.bias.assign(hidden[h], 0.0);
        layer.act = (h % 2 == 0) ? Activation::kLeakyRelu : Activation::kTanh;
        const double bound = std::sqrt(6.0 / static_cast<double>(prev + hidden[h]));
        for (double& w : layer.weights.data()) w = rng.uniform(-bound, bound);
        net.layers.push_back(std::move(layer));
        prev = hidden[h];
    }
    DenseLayer last;
    last.weights = Mat(out, prev);
    last.bias.assign(out, 0.0);
    last.act = Activation::kIdentity;
    if (!zero_last) {
        const double bound = std::sqrt(6.0 / static_cast<double>(prev + out));
        for (double& w : last.weights.data()) w = rng.uniform(-bound, bound);
    }
    net.layers.push_back(std::move(last));
    return net;
}

void mlp_forward(const Mlp& net, std::span<const double> x, Vec& y, Tape* tape) {
    if (net.layers.empty()) throw ShapeMismatch("mlp_forward: empty network");
    if (x.size() != net.in_dim()) throw DimensionMismatch("mlp_forward: input dimension mismatch");

    if (tape) {
        tape->input.assign(x.begin(), x.end());
        tape->pre.resize(net.layers.size());
        tape->out.resize(net.layers.size());
    }

    Vec cur(x.begin(), x.end());
    Vec next;
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        const DenseLayer& layer = net.layers[li];
        const std::size_t rows = layer.weights.rows();
        const std::size_t cols = layer.weights.cols();
        if (cur.size() != cols) throw DimensionMismatch("mlp_forward: layer dimension mismatch");
        next.assign(rows, 0.0);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* w = layer.weights.row(r);
            double s = layer.bias[r];
            for (std::size_t c = 0; c < cols; ++c) s += w[c] * cur[c];
            next[r] = s;
        }
        if (tape) tape->pre[li] = next;
        for (std::size_t r = 0; r < rows; ++r) {
            next[r] = activate(layer.act, next[r]);
            if (!std::isfinite(next[r])) {
                throw NonFiniteActivation("mlp_forward: non-finite activation at layer " +
                                          std::to_string(li));
            }
        }
        if (tape) tape->out[li] = next;
        cur.swap(next);
    }
    y = std::move(cur);
}

MlpGrads MlpGrads::zeros_like(const Mlp& net) {
    MlpGrads g;
    for (const auto& layer : net.layers) {
        g.d_weights.emplace_back(layer.weights.rows(), layer.weights.cols());
        g.d_bias.emplace_back(layer.bias.size(), 0.0);
    }
    return g;
}

void MlpGrads::zero() {
    for (auto& m : d_weights) std::fill(m.data().begin(), m.data().end(), 0.0);
    for (auto& b : d_bias) std::fill(b.begin(), b.end(), 0.0);
}

void MlpGrads::scale(double s) {
    for (auto& m : d_weights) {
        for (double& v : m.data()) v *= s;
    }
    for (auto& b : d_bias) {
        for (double& v : b) v *= s;
    }
}

Vec mlp_backward(const Mlp& net, const Tape& tape, std::span<const double> upstream,
                 MlpGrads& acc) {
    const std::size_t nl = net.layers.size();
    if (tape.pre.size() != nl || tape.out.size() != nl || tape.input.size() != net.in_dim()) {
        throw TapeMismatch("mlp_backward: tape does not match network");
    }
    if (upstream.size() != net.out_dim()) throw DimensionMismatch("mlp_backward: upstream size");
    if (acc.d_weights.size() != nl) throw ShapeMismatch("mlp_backward: grad accumulator shape");

    Vec delta(upstream.begin(), upstream.end());
    for (std::size_t li = nl; li-- > 0;) {
        const DenseLayer& layer = net.layers[li];
        const std::size_t rows = layer.weights.rows();
        const std::size_t cols = layer.weights.cols();
        if (tape.pre[li].size() != rows) throw TapeMismatch("mlp_backward: tape layer shape");

        // d/d(pre) = upstream * act'(pre)
        for (std::size_t r = 0; r < rows; ++r) delta[r] *= activate_grad(layer.act, tape.pre[li][r]);

        const Vec& below = (li == 0) ? tape.input : tape.out[li - 1];
        Mat& dw = acc.d_weights[li];
        Vec& db = acc.d_bias[li];
        for (std::size_t r = 0; r < rows; ++r) {
            double* dwr = dw.row(r);
            const double dr = delta[r];
            for (std::size_t c = 0; c < cols; ++c) dwr[c] += dr * below[c];
            db[r] += dr;
        }

        Vec prev(cols, 0.0);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* w = layer.weights.row(r);
            const double dr = delta[r];
            for (std::size_t c = 0; c < cols; ++c) prev[c] += dr * w[c];
        }
        delta.swap(prev);
    }
    return delta;
}

AdamState AdamState::zeros_like(const Mlp& net) {
    AdamState s;
    for (const auto& layer : net.layers) {
        s.m_w.emplace_back(layer.weights.rows(), layer.weights.cols());
        s.v_w.emplace_back(layer.weights.rows(), layer.weights.cols());
        s.m_b.emplace_back(layer.bias.size(), 0.0);
        s.v_b.emplace_back(layer.bias.size(), 0.0);
    }
    return s;
}

void adam_step(Mlp& net, const MlpGrads& grads, AdamState& state, double lr) {
    if (grads.d_weights.size() != net.layers.size() || state.m_w.size() != net.layers.size()) {
        throw ShapeMismatch("adam_step: shapes do not match network");
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        DenseLayer& layer = net.layers[li];
        if (!grads.d_weights[li].same_shape(layer.weights) ||
            grads.d_bias[li].size() != layer.bias.size()) {
            throw ShapeMismatch("adam_step: gradient shape mismatch at layer " + std::to_string(li));
        }
        auto& w = layer.weights.data();
        const auto& gw = grads.d_weights[li].data();
        auto& mw = state.m_w[li].data();
        auto& vw = state.v_w[li].data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            mw[i] = state.beta1 * mw[i] + (1.0 - state.beta1) * gw[i];
            vw[i] = state.beta2 * vw[i] + (1.0 - state.beta2) * gw[i] * gw[i];
            w[i] -= lr * (mw[i] / bc1) / (std::sqrt(vw[i] / bc2) + state.eps);
        }
        auto& b = layer.bias;
        const auto& gb = grads.d_bias[li];
        auto& mb = state.m_b[li];
        auto& vb = state.v_b[li];
        for (std::size_t i = 0; i < b.size(); ++i) {
            mb[i] = state.beta1 * mb[i] + (1.0 - state.beta1) * gb[i];
            vb[i] = state.beta2 * vb[i] + (1.0 - state.beta2) * gb[i] * gb[i];
            b[i] -= lr * (mb[i] / bc1) / (std::sqrt(vb[i] / bc2) + state.eps);
        }
    }
}

namespace {

// Forward pass with Kahan-compensated dot products. The finite-difference
// probe divides out a 1e-5 step, so plain double accumulation noise in wide
// layers would swamp small gradients; the production forward stays uncompensated.
double sum_of_outputs_compensated(const Mlp& net, std::span<const double> x) {
    Vec cur(x.begin(), x.end());
    Vec next;
    for (const DenseLayer& layer : net.layers) {
        const std::size_t rows = layer.weights.rows();
        const std::size_t cols = layer.weights.cols();
        next.assign(rows, 0.0);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* w = layer.weights.row(r);
            double s = layer.bias[r];
            double comp = 0.0;
            for (std::size_t c = 0; c < cols; ++c) {
                const double term = w[c] * cur[c] - comp;
                const double t = s + term;
                comp = (t - s) - term;
                s = t;
            }
            next[r] = activate(layer.act, s);
        }
        cur.swap(next);
    }
    double s = 0.0, comp = 0.0;
    for (double v : cur) {
        const double term = v - comp;
        const double t = s + term;
        comp = (t - s) - term;
        s = t;
    }
    return s;
}

}  // namespace

double grad_check(const Mlp& net, std::span<const double> x, double h,
                  std::size_t max_checked) {
    Tape tape;
    Vec y;
    mlp_forward(net, x, y, &tape);
    MlpGrads analytic = MlpGrads::zeros_like(net);
    Vec ones(net.out_dim(), 1.0);
    mlp_backward(net, tape, ones, analytic);

    std::size_t total = 0;
    for (const auto& layer : net.layers) total += layer.weights.data().size() + layer.bias.size();
    const std::size_t stride = total <= max_checked ? 1 : (total + max_checked - 1) / max_checked;

    Mlp probe = net;
    double worst = 0.0;
    std::size_t counter = 0;
    auto check_param = [&](double& slot, double analytic_g) {
        if (counter++ % stride != 0) return;
        const double saved = slot;
        slot = saved + h;
        const double fp = sum_of_outputs_compensated(probe, x);
        slot = saved - h;
        const double fm = sum_of_outputs_compensated(probe, x);
        slot = saved;
        const double fd = (fp - fm) / (2.0 * h);
        const double rel = std::abs(analytic_g - fd) / (std::abs(analytic_g) + 1e-12);
        worst = std::max(worst, rel);
    };
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        auto& w = probe.layers[li].weights.data();
        const auto& gw = analytic.d_weights[li].data();
        for (std::size_t i = 0; i < w.size(); ++i) check_param(w[i], gw[i]);
        auto& b = probe.layers[li].bias;
        const auto& gb = analytic.d_bias[li];
        for (std::size_t i = 0; i < b.size(); ++i) check_param(b[i], gb[i]);
    }
    return worst;
}

nlohmann::json mlp_to_json(const Mlp& net) {
    nlohmann::json j;
    j["format_version"] = 1;
    j["kind"] = "mlp";
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& layer : net.layers) {
        nlohmann::json lj;
        lj["out"] = layer.weights.rows();
        lj["in"] = layer.weights.cols();
        lj["activation"] = act_name(layer.act);
        lj["weights"] = layer.weights.data();  // row-major
        lj["bias"] = layer.bias;
        layers.push_back(std::move(lj));
    }
    j["layers"] = layers;
    return j;
}

Mlp mlp_from_json(const nlohmann::json& j) {
    if (j.value("kind", "") != "mlp") throw DataError("mlp_from_json: not an mlp payload");
    Mlp net;
    for (const auto& lj : j.at("layers")) {
        DenseLayer layer;
        const std::size_t rows = lj.at("out").get<std::size_t>();
        const std::size_t cols = lj.at("in").get<std::size_t>();
        layer.weights = Mat(rows, cols);
        const auto w = lj.at("weights").get<std::vector<double>>();
        if (w.size() != rows * cols) throw DataError("mlp_from_json: weight size mismatch");
        layer.weights.data() = w;
        layer.bias = lj.at("bias").get<Vec>();
        if (layer.bias.size() != rows) throw DataError("mlp_from_json: bias size mismatch");
        layer.act = act_from_name(lj.at("activation").get<std::string>());
        net.layers.push_back(std::move(layer));
    }
    if (net.layers.empty()) throw DataError("mlp_from_json: no layers");
    return net;
}

void save_mlp(const Mlp& net, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("save_mlp: cannot open " + path);
    out << mlp_to_json(net).dump(2) << '\n';
}

Mlp load_mlp(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FileNotFound("load_mlp: cannot open " + path);
    nlohmann::json j;
    in >> j;
    return mlp_from_json(j);
}

}  // namespace rareflow
