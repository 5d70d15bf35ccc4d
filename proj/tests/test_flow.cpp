#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "rareflow/errors.hpp"
#include "rareflow/realnvp.hpp"
#include "test_stats.hpp"

using namespace rareflow;

namespace {

constexpr double kLogTwoPi = 1.8378770664093454836;

Mlp constant_net(std::size_t in, double value) {
    Mlp net;
    DenseLayer layer;
    layer.weights = Mat(1, in);
    layer.bias = {value};
    layer.act = Activation::kIdentity;
    net.layers.push_back(layer);
    return net;
}

Flow identity_flow(std::size_t dim, std::size_t layers = 0) {
    Rng rng(1);
    const std::vector<std::size_t> hidden = {8};
    return make_flow(dim, layers == 0 ? dim : layers, hidden, 5.0, rng);
}

// make_flow zero-initializes the output layers; perturbing them gives a
// nontrivial but well-conditioned transport for the Jacobian checks.
Flow perturbed_flow(std::size_t dim, std::uint64_t seed, double spread = 0.15) {
    Rng rng(seed);
    const std::vector<std::size_t> hidden = {8};
    Flow flow = make_flow(dim, 2 * dim, hidden, 5.0, rng);
    for (auto& layer : flow.layers) {
        for (Mlp* net : {&layer.scale_net, &layer.translation_net}) {
            auto& last = net->layers.back();
            for (double& w : last.weights.data()) w = rng.uniform(-spread, spread);
            for (double& b : last.bias) b = rng.uniform(-spread, spread);
        }
    }
    return flow;
}

// Shared trained 2-D fixture: data x ~ N(2,1), y ~ N(0,1), weights
// exp(-max(x,0)). The exponential tilt of a Gaussian is the closed-form
// oracle: exp(-x) N(2,1) is proportional to N(1,1).
const Flow& trained_fixture() {
    static const Flow flow = [] {
        Rng data_rng(100);
        const std::size_t n = 4000;
        Mat samples(n, 2);
        Vec weights(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double x = 2.0 + data_rng.normal();
            samples(i, 0) = x;
            samples(i, 1) = data_rng.normal();
            weights[i] = std::exp(-std::max(x, 0.0));
        }
        Rng init(7);
        const std::vector<std::size_t> hidden = {16, 16};
        Flow f = make_flow(2, 4, hidden, 5.0, init);
        TrainConfig cfg;
        cfg.epochs = 60;
        cfg.batch_size = 256;
        cfg.lr = 3e-3;
        cfg.seed = 11;
        train_flow(f, samples, weights, cfg);
        return f;
    }();
    return flow;
}

}  // namespace

TEST_CASE("soft clamp: identity inside, bounded outside, exact at the hand point") {
    CHECK(soft_clamp(0.0, 5.0) == 0.0);
    CHECK(soft_clamp(std::log(2.0), 5.0) == std::log(2.0));
    CHECK(soft_clamp(-3.9, 5.0) == -3.9);
    CHECK(std::abs(soft_clamp(80.0, 5.0)) <= 5.0);
    CHECK(std::abs(soft_clamp(-80.0, 5.0)) <= 5.0);
    CHECK(std::abs(soft_clamp(4.7, 5.0)) < 4.7);  // saturation has begun
    CHECK(soft_clamp_grad(0.5, 5.0) == 1.0);
    CHECK(soft_clamp_grad(100.0, 5.0) < 1e-6);
}

TEST_CASE("coupling layer at identity init") {
    const Flow flow = identity_flow(3);
    Vec y(3);
    const double logdet = coupling_forward(flow.layers[0], flow.scale_clamp, Vec{1.0, -2.0, 0.5}, y);
    CHECK(y == Vec{1.0, -2.0, 0.5});
    CHECK(logdet == 0.0);
    Vec x(3);
    coupling_inverse(flow.layers[0], flow.scale_clamp, Vec{1.0, -2.0, 0.5}, x);
    CHECK(x == Vec{1.0, -2.0, 0.5});
}

TEST_CASE("coupling layer hand case: constant nets") {
    CouplingLayer layer;
    layer.mask = {1, 0};
    layer.scale_net = constant_net(1, std::log(2.0));
    layer.translation_net = constant_net(1, 3.0);
    Vec y(2);
    const double logdet = coupling_forward(layer, 5.0, Vec{5.0, 1.0}, y);
    CHECK(y[0] == 5.0);
    CHECK(y[1] == doctest::Approx(2.0 * 1.0 + 3.0).epsilon(1e-15));
    CHECK(logdet == doctest::Approx(std::log(2.0)).epsilon(1e-15));

    Vec x(2);
    coupling_inverse(layer, 5.0, Vec{5.0, 5.0}, x);
    CHECK(x[0] == 5.0);
    CHECK(x[1] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("coupling logdet matches a finite-difference Jacobian in 3-D") {
    const Flow flow = perturbed_flow(3, 21);
    Rng rng(5);
    for (int rep = 0; rep < 10; ++rep) {
        Vec x(3);
        for (double& v : x) v = rng.uniform(-2.0, 2.0);
        Vec y(3);
        const double logdet = coupling_forward(flow.layers[0], flow.scale_clamp, x, y);
        const double h = 1e-5;
        std::vector<std::vector<double>> jac(3, std::vector<double>(3));
        for (int j = 0; j < 3; ++j) {
            Vec xp = x, xm = x;
            xp[j] += h;
            xm[j] -= h;
            Vec yp(3), ym(3);
            coupling_forward(flow.layers[0], flow.scale_clamp, xp, yp);
            coupling_forward(flow.layers[0], flow.scale_clamp, xm, ym);
            for (int i = 0; i < 3; ++i) jac[i][j] = (yp[i] - ym[i]) / (2.0 * h);
        }
        const double fd_logdet = std::log(std::abs(testutil::dense_det(jac)));
        CHECK(logdet == doctest::Approx(fd_logdet).epsilon(1e-4));
    }
}

TEST_CASE("inverse composes with forward to the identity") {
    for (std::size_t dim : {2u, 3u, 5u}) {
        const Flow flow = perturbed_flow(dim, 40 + dim);
        Rng rng(9 + dim);
        for (int rep = 0; rep < 200; ++rep) {
            Vec x(dim);
            for (double& v : x) v = rng.uniform(-3.0, 3.0);
            Vec z(dim), back(dim);
            flow_forward(flow, x, z);
            flow_inverse(flow, z, back);
            for (std::size_t j = 0; j < dim; ++j) {
                CHECK(std::abs(back[j] - x[j]) < 1e-10);
            }
        }
    }
}

TEST_CASE("identity flow log-density is the standard normal") {
    const Flow flow = identity_flow(2);
    CHECK(flow_log_pdf(flow, Vec{0.0, 0.0}) == doctest::Approx(-kLogTwoPi).epsilon(1e-12));
    Rng rng(3);
    for (int rep = 0; rep < 50; ++rep) {
        Vec x = {rng.uniform(-3, 3), rng.uniform(-3, 3)};
        const double expect = -kLogTwoPi - 0.5 * (x[0] * x[0] + x[1] * x[1]);
        CHECK(flow_log_pdf(flow, x) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("full-flow analytic logdet matches the finite-difference Jacobian") {
    for (std::size_t dim : {2u, 3u, 5u}) {
        const Flow flow = perturbed_flow(dim, 60 + dim);
        Rng rng(13 + dim);
        for (int rep = 0; rep < 5; ++rep) {
            Vec x(dim);
            for (double& v : x) v = rng.uniform(-2.0, 2.0);
            Vec z(dim);
            const double logdet = flow_forward(flow, x, z);
            const double h = 1e-5;
            std::vector<std::vector<double>> jac(dim, std::vector<double>(dim));
            for (std::size_t j = 0; j < dim; ++j) {
                Vec xp = x, xm = x;
                xp[j] += h;
                xm[j] -= h;
                Vec zp(dim), zm(dim);
                flow_forward(flow, xp, zp);
                flow_forward(flow, xm, zm);
                for (std::size_t i = 0; i < dim; ++i) jac[i][j] = (zp[i] - zm[i]) / (2.0 * h);
            }
            const double fd = std::log(std::abs(testutil::dense_det(jac)));
            CHECK(logdet == doctest::Approx(fd).epsilon(1e-3));
        }
    }
}

TEST_CASE("identity-flow samples are standard normal (KS) and reproducible") {
    const Flow flow = identity_flow(2);
    const std::size_t n = 10000;
    std::vector<double> c0, c1;
    Rng rng(17);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec x = flow_sample(flow, rng);
        c0.push_back(x[0]);
        c1.push_back(x[1]);
    }
    for (const auto* coord : {&c0, &c1}) {
        const double d = testutil::ks_statistic(*coord, testutil::normal_cdf);
        CHECK(testutil::ks_pvalue(d, n) > 0.01);
    }

    Rng r1(23), r2(23);
    for (int i = 0; i < 20; ++i) {
        CHECK(flow_sample(flow, r1) == flow_sample(flow, r2));
    }
}

TEST_CASE("sampling then scoring stays finite for 1e5 draws") {
    const Flow& flow = trained_fixture();
    Rng rng(29);
    for (int i = 0; i < 100000; ++i) {
        const Vec x = flow_sample(flow, rng);
        CHECK(std::isfinite(flow_log_pdf(flow, x)));
    }
}

TEST_CASE("zero training epochs leave the flow unchanged") {
    Flow flow = identity_flow(2);
    Mat samples(16, 2);
    Rng rng(31);
    for (auto& v : samples.data()) v = rng.normal();
    Vec weights(16, 1.0);
    TrainConfig cfg;
    cfg.epochs = 0;
    const TrainResult res = train_flow(flow, samples, weights, cfg);
    CHECK(res.loss_trace.empty());
    CHECK(flow_log_pdf(flow, Vec{0.3, -0.4}) ==
          doctest::Approx(-kLogTwoPi - 0.5 * (0.09 + 0.16)).epsilon(1e-12));
}

TEST_CASE("training input validation") {
    Flow flow = identity_flow(2);
    Mat samples(4, 2);
    Vec bad_weights = {0.5, 0.0, 0.5, 0.5};  // zero weight out of range
    TrainConfig cfg;
    CHECK_THROWS_AS(train_flow(flow, samples, bad_weights, cfg), InvalidInput);
    Vec short_weights = {1.0};
    CHECK_THROWS_AS(train_flow(flow, samples, short_weights, cfg), ShapeMismatch);
    Mat empty(0, 2);
    Vec none;
    CHECK_THROWS_AS(train_flow(flow, empty, none, cfg), EmptyData);
}

TEST_CASE("uniform weights reduce to maximum likelihood on Gaussian data") {
    Rng data_rng(41);
    const std::size_t n = 3000;
    Mat samples(n, 2);
    for (auto& v : samples.data()) v = data_rng.normal();
    Vec weights(n, 1.0);
    Rng init(43);
    const std::vector<std::size_t> hidden = {16, 16};
    Flow flow = make_flow(2, 4, hidden, 5.0, init);
    TrainConfig cfg;
    cfg.epochs = 40;
    cfg.batch_size = 256;
    cfg.lr = 2e-3;
    cfg.seed = 47;
    const TrainResult res = train_flow(flow, samples, weights, cfg);
    REQUIRE(res.loss_trace.size() == 40);
    for (double l : res.loss_trace) CHECK(std::isfinite(l));
    // ML on standard-normal data: density at the origin near the closed form
    CHECK(flow_log_pdf(flow, Vec{0.0, 0.0}) == doctest::Approx(-kLogTwoPi).epsilon(0.055));
    // training loss should end below its start
    CHECK(res.loss_trace.back() <= res.loss_trace.front());
}

TEST_CASE("risk-weighted training concentrates mass where weight*density peaks") {
    const Flow& flow = trained_fixture();

    // Oracle: grid argmax of exp(-x) N(x; 2, 1) (= N(1,1), argmax exactly 1).
    double best_x = 0.0, best_v = -1.0;
    for (double x = -2.0; x <= 4.0; x += 0.001) {
        const double v = std::exp(-std::max(x, 0.0)) * testutil::normal_pdf(x - 2.0);
        if (v > best_v) {
            best_v = v;
            best_x = x;
        }
    }
    CHECK(std::abs(best_x - 1.0) < 0.01);

    // Mode of the trained flow's first coordinate from a sample histogram.
    Rng rng(51);
    const std::size_t n = 50000;
    const double lo = -2.0, hi = 4.0;
    const std::size_t bins = 30;
    std::vector<double> counts(bins, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec x = flow_sample(flow, rng);
        if (x[0] >= lo && x[0] < hi) {
            counts[static_cast<std::size_t>((x[0] - lo) / (hi - lo) * bins)] += 1.0;
        }
    }
    std::size_t mode_bin = 0;
    for (std::size_t b = 1; b < bins; ++b) {
        if (counts[b] > counts[mode_bin]) mode_bin = b;
    }
    const double mode = lo + (hi - lo) * (static_cast<double>(mode_bin) + 0.5) / bins;
    CHECK(std::abs(mode - best_x) < 0.2);
}

TEST_CASE("trained flow integrates to one over a covering grid") {
    const Flow& flow = trained_fixture();
    const double lo = -7.0, hi = 9.0;
    const int n = 240;
    const double h = (hi - lo) / n;
    double acc = 0.0;
    for (int i = 0; i <= n; ++i) {
        for (int j = 0; j <= n; ++j) {
            const double wx = (i == 0 || i == n) ? 0.5 : 1.0;
            const double wy = (j == 0 || j == n) ? 0.5 : 1.0;
            acc += wx * wy * std::exp(flow_log_pdf(flow, Vec{lo + i * h, lo + j * h}));
        }
    }
    acc *= h * h;
    CHECK(acc == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("importance-sampling self-consistency recovers a region volume") {
    const Flow& flow = trained_fixture();
    Rng rng(57);
    const std::size_t n = 200000;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const Vec x = flow_sample(flow, rng);
        if (x[0] >= 0.0 && x[0] <= 1.5 && x[1] >= -0.75 && x[1] <= 0.75) {
            acc += std::exp(-flow_log_pdf(flow, x));
        }
    }
    const double volume = acc / static_cast<double>(n);
    CHECK(volume == doctest::Approx(1.5 * 1.5).epsilon(0.05));
}

TEST_CASE("trained flow stays invertible to 1e-5 over 1000 points") {
    const Flow& flow = trained_fixture();
    Rng rng(61);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        Vec x = {rng.uniform(-3.0, 5.0), rng.uniform(-4.0, 4.0)};
        Vec z(2), back(2);
        flow_forward(flow, x, z);
        flow_inverse(flow, z, back);
        worst = std::max(worst, std::max(std::abs(back[0] - x[0]), std::abs(back[1] - x[1])));
    }
    CHECK(worst < 1e-5);
}

TEST_CASE("weighted-loss analytic gradient matches finite differences") {
    Flow flow = perturbed_flow(2, 73);
    Rng rng(79);
    Mat batch(6, 2);
    Vec weights(6);
    for (std::size_t i = 0; i < 6; ++i) {
        batch(i, 0) = rng.uniform(-2, 2);
        batch(i, 1) = rng.uniform(-2, 2);
        weights[i] = rng.uniform(0.05, 1.0);
    }
    FlowGrads grads = FlowGrads::zeros_like(flow);
    flow_batch_loss_grads(flow, batch, weights, grads);

    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t k = 0; k < flow.layers.size(); ++k) {
        auto check = [&](double& slot, double g) {
            const double saved = slot;
            slot = saved + h;
            const double fp = flow_batch_loss(flow, batch, weights);
            slot = saved - h;
            const double fm = flow_batch_loss(flow, batch, weights);
            slot = saved;
            const double fd = (fp - fm) / (2.0 * h);
            worst = std::max(worst, std::abs(g - fd) / (std::abs(g) + 1e-12));
        };
        for (std::size_t li = 0; li < flow.layers[k].scale_net.layers.size(); ++li) {
            auto& w = flow.layers[k].scale_net.layers[li].weights.data();
            for (std::size_t i = 0; i < w.size(); ++i) check(w[i], grads.scale[k].d_weights[li].data()[i]);
            auto& b = flow.layers[k].scale_net.layers[li].bias;
            for (std::size_t i = 0; i < b.size(); ++i) check(b[i], grads.scale[k].d_bias[li][i]);
        }
        for (std::size_t li = 0; li < flow.layers[k].translation_net.layers.size(); ++li) {
            auto& w = flow.layers[k].translation_net.layers[li].weights.data();
            for (std::size_t i = 0; i < w.size(); ++i)
                check(w[i], grads.translation[k].d_weights[li].data()[i]);
            auto& b = flow.layers[k].translation_net.layers[li].bias;
            for (std::size_t i = 0; i < b.size(); ++i) check(b[i], grads.translation[k].d_bias[li][i]);
        }
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("cycling masks cover every coordinate within any dim-length window") {
    for (std::size_t dim : {2u, 4u, 5u}) {
        const Flow flow = identity_flow(dim, 2 * dim + 1);
        flow.validate();
        for (std::size_t start = 0; start + dim <= flow.layers.size(); ++start) {
            std::vector<bool> touched(dim, false);
            for (std::size_t k = start; k < start + dim; ++k) {
                for (std::size_t j = 0; j < dim; ++j) {
                    if (flow.layers[k].mask[j] == 0) touched[j] = true;
                }
            }
            for (bool t : touched) CHECK(t);
        }
    }
}

TEST_CASE("flow persistence round-trips log densities exactly") {
    const Flow& flow = trained_fixture();
    const auto path = std::filesystem::temp_directory_path() / "rareflow_test_flow.json";
    save_flow(flow, path.string());
    const Flow back = load_flow(path.string());
    Rng rng(83);
    for (int i = 0; i < 20; ++i) {
        Vec x = {rng.uniform(-3, 4), rng.uniform(-3, 3)};
        CHECK(back.log_pdf(x) == flow.log_pdf(x));
    }
    std::filesystem::remove(path);
}

TEST_CASE("flow construction guards") {
    Rng rng(1);
    const std::vector<std::size_t> hidden = {4};
    CHECK_THROWS_AS(make_flow(1, 4, hidden, 5.0, rng), InvalidInput);
    CHECK_THROWS_AS(make_flow(5, 3, hidden, 5.0, rng), InvalidInput);
    Flow bad = make_flow(3, 3, hidden, 5.0, rng);
    bad.layers[1].mask = {1, 1, 1};  // transforms nothing
    CHECK_THROWS_AS(bad.validate(), ShapeMismatch);
}
