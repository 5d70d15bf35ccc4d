#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rareflow/density.hpp"
#include "rareflow/linalg.hpp"
#include "rareflow/mlp.hpp"

#include "json.hpp"

namespace rareflow {

// Affine coupling layer: coordinates with mask 1 pass through unchanged and
// feed the scale/translation nets; coordinates with mask 0 are transformed
// x*exp(alpha)+mu. Net input width equals the pass-through count, output width
// the transformed count.
struct CouplingLayer {
    std::vector<std::uint8_t> mask;  // 1 = pass-through, 0 = transformed
    Mlp scale_net;
    Mlp translation_net;
};

// Bounded scale output: identity on |a| <= bound-1, tanh saturation beyond,
// so |clamped| < bound and small scales are untouched.
double soft_clamp(double a, double bound);
double soft_clamp_grad(double a, double bound);

// Invertible map between data space and a standard-normal latent. The forward
// direction runs data -> latent through the layers in order; sampling uses the
// exact algebraic inverse. Immutable once trained.
class Flow : public DensityModel {
public:
    std::vector<CouplingLayer> layers;
    std::size_t data_dim = 0;
    double scale_clamp = 5.0;

    std::size_t dim() const override { return data_dim; }
    double log_pdf(std::span<const double> x) const override;
    void sample(Rng& rng, std::span<double> out) const override;

    void validate() const;
};

// Cycling one-coordinate masks: layer k transforms coordinate k mod dim. Net
// output layers are zero-initialized so the flow starts as the identity.
Flow make_flow(std::size_t dim, std::size_t num_layers, std::span<const std::size_t> hidden,
               double scale_clamp, Rng& rng);

// y from x (pass-through copied, transformed scaled/shifted); returns the
// layer's log |det J| (sum of clamped scale outputs).
double coupling_forward(const CouplingLayer& layer, double scale_clamp,
                        std::span<const double> x, std::span<double> y);

// Exact algebraic inverse of coupling_forward.
void coupling_inverse(const CouplingLayer& layer, double scale_clamp, std::span<const double> y,
                      std::span<double> x);

// Pushes x through all layers into z; returns the accumulated log |det J|.
double flow_forward(const Flow& flow, std::span<const double> x, std::span<double> z);

// Latent -> data through the layer inverses in reverse order.
void flow_inverse(const Flow& flow, std::span<const double> z, std::span<double> x);

double flow_log_pdf(const Flow& flow, std::span<const double> x);

Vec flow_sample(const Flow& flow, Rng& rng);

// Mean over the batch of weight * (-log p_z(z) - sum log|det J|).
double flow_batch_loss(const Flow& flow, const Mat& samples, std::span<const double> weights);

struct FlowGrads {
    std::vector<MlpGrads> scale;
    std::vector<MlpGrads> translation;

    static FlowGrads zeros_like(const Flow& flow);
    void zero();
    void scale_all(double s);
};

// Analytic gradient of flow_batch_loss with respect to every net parameter;
// returns the loss value.
double flow_batch_loss_grads(const Flow& flow, const Mat& samples,
                             std::span<const double> weights, FlowGrads& grads);

struct TrainConfig {
    int epochs = 60;
    std::size_t batch_size = 512;
    double lr = 1e-3;
    std::uint64_t seed = 1;
    double scale_clamp = 5.0;
};

struct TrainResult {
    std::vector<double> loss_trace;  // mean weighted NLL per epoch
};

// Adam on the weighted negative log-likelihood. Weights lie in (0, 1]; batch
// gradients are averaged and the weights are not renormalized per batch.
// Deterministic for a fixed seed.
TrainResult train_flow(Flow& flow, const Mat& samples, std::span<const double> weights,
                       const TrainConfig& cfg);

nlohmann::json flow_to_json(const Flow& flow);
Flow flow_from_json(const nlohmann::json& j);
void save_flow(const Flow& flow, const std::string& path);
Flow load_flow(const std::string& path);

}  // namespace rareflow
