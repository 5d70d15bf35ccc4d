#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rareflow/linalg.hpp"
#include "rareflow/rng.hpp"

#include "json.hpp"

namespace rareflow {

inline constexpr double kLeakyReluSlope = 0.01;

enum class Activation { kLeakyRelu, kTanh, kIdentity };

struct DenseLayer {
    Mat weights;  // out x in, row-major
    Vec bias;
    Activation act = Activation::kIdentity;
};

// Plain feed-forward net. Mutable while training, frozen (and then safely
// shareable) afterwards.
struct Mlp {
    std::vector<DenseLayer> layers;

    std::size_t in_dim() const { return layers.front().weights.cols(); }
    std::size_t out_dim() const { return layers.back().weights.rows(); }
};

// hidden layers alternate LeakyReLU / Tanh starting with LeakyReLU; the output
// layer is linear. Weights init uniform in +-sqrt(6/(fan_in+fan_out)), biases
// zero. zero_last zeroes the output layer (coupling nets start as identity).
Mlp make_mlp(std::size_t in, std::span<const std::size_t> hidden, std::size_t out, Rng& rng,
             bool zero_last = false);

// Cached activations from one forward pass, enough to run backward.
struct Tape {
    Vec input;
    std::vector<Vec> pre;  // pre-activation per layer
    std::vector<Vec> out;  // post-activation per layer
};

// y = layers applied in order; fills tape when given. Throws
// NonFiniteActivation if any activation output is non-finite.
void mlp_forward(const Mlp& net, std::span<const double> x, Vec& y, Tape* tape = nullptr);

struct MlpGrads {
    std::vector<Mat> d_weights;
    std::vector<Vec> d_bias;

    static MlpGrads zeros_like(const Mlp& net);
    void zero();
    void scale(double s);
};

// Reverse-mode gradients of <upstream, y> with respect to all parameters and
// the input; parameter gradients are accumulated (+=) into acc.
Vec mlp_backward(const Mlp& net, const Tape& tape, std::span<const double> upstream,
                 MlpGrads& acc);

struct AdamState {
    std::vector<Mat> m_w, v_w;
    std::vector<Vec> m_b, v_b;
    std::int64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static AdamState zeros_like(const Mlp& net);
};

// Bias-corrected Adam update; increments the step counter.
void adam_step(Mlp& net, const MlpGrads& grads, AdamState& state, double lr);

// Max over parameters of |analytic - central difference| / (|analytic| + 1e-12)
// for the scalar objective sum(outputs). Nets with more than max_checked
// parameters are probed on an evenly strided subset; the default covers every
// parameter of any net small enough to finish in test time.
double grad_check(const Mlp& net, std::span<const double> x, double h,
                  std::size_t max_checked = 1u << 20);

nlohmann::json mlp_to_json(const Mlp& net);
Mlp mlp_from_json(const nlohmann::json& j);
void save_mlp(const Mlp& net, const std::string& path);
Mlp load_mlp(const std::string& path);

}  // namespace rareflow
