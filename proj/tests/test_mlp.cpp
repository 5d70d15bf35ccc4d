#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "rareflow/errors.hpp"
#include "rareflow/mlp.hpp"

using namespace rareflow;

namespace {

Mlp tiny_linear(double w, double b) {
    Mlp net;
    DenseLayer layer;
    layer.weights = Mat(1, 1);
    layer.weights(0, 0) = w;
    layer.bias = {b};
    layer.act = Activation::kIdentity;
    net.layers.push_back(layer);
    return net;
}

}  // namespace

TEST_CASE("all-zero parameters give zero outputs through every activation") {
    Rng rng(1);
    const std::vector<std::size_t> hidden = {8, 8};
    Mlp net = make_mlp(3, hidden, 2, rng);
    for (auto& layer : net.layers) {
        std::fill(layer.weights.data().begin(), layer.weights.data().end(), 0.0);
        std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
    }
    Vec y;
    mlp_forward(net, Vec{1.0, -2.0, 3.0}, y);
    CHECK(y == Vec{0.0, 0.0});
}

TEST_CASE("identity-configured linear layer passes input through") {
    Mlp net;
    DenseLayer layer;
    layer.weights = Mat::identity(4);
    layer.bias.assign(4, 0.0);
    layer.act = Activation::kIdentity;
    net.layers.push_back(layer);
    const Vec x = {0.5, -1.5, 2.0, 7.0};
    Vec y;
    mlp_forward(net, x, y);
    CHECK(y == x);
}

TEST_CASE("random 2-3-1 net matches a hand-rolled matrix oracle") {
    Rng rng(5);
    const std::vector<std::size_t> hidden = {3};
    const Mlp net = make_mlp(2, hidden, 1, rng);
    for (int rep = 0; rep < 25; ++rep) {
        const Vec x = {rng.uniform(-2, 2), rng.uniform(-2, 2)};
        // layer 1: LeakyReLU(W1 x + b1); layer 2: identity(W2 h + b2)
        Vec h(3);
        for (int r = 0; r < 3; ++r) {
            double s = net.layers[0].bias[r];
            s += net.layers[0].weights(r, 0) * x[0] + net.layers[0].weights(r, 1) * x[1];
            h[r] = s >= 0 ? s : kLeakyReluSlope * s;
        }
        double expect = net.layers[1].bias[0];
        for (int r = 0; r < 3; ++r) expect += net.layers[1].weights(0, r) * h[r];
        Vec y;
        mlp_forward(net, x, y);
        CHECK(y[0] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("forward is deterministic and validates dimensions") {
    Rng rng(2);
    const std::vector<std::size_t> hidden = {16};
    const Mlp net = make_mlp(4, hidden, 3, rng);
    const Vec x = {0.1, 0.2, 0.3, 0.4};
    Vec y1, y2;
    mlp_forward(net, x, y1);
    mlp_forward(net, x, y2);
    CHECK(y1 == y2);
    Vec y;
    CHECK_THROWS_AS(mlp_forward(net, Vec{1.0}, y), DimensionMismatch);
}

TEST_CASE("forward flags non-finite activations") {
    Mlp net = tiny_linear(1e308, 0.0);
    Vec y;
    CHECK_THROWS_AS(mlp_forward(net, Vec{1e10}, y), NonFiniteActivation);
}

TEST_CASE("backward hand case: y = w x + b") {
    const Mlp net = tiny_linear(2.5, 0.7);
    Tape tape;
    Vec y;
    mlp_forward(net, Vec{3.0}, y, &tape);
    MlpGrads g = MlpGrads::zeros_like(net);
    const Vec dx = mlp_backward(net, tape, Vec{1.0}, g);
    CHECK(g.d_weights[0](0, 0) == doctest::Approx(3.0));  // dw = x
    CHECK(g.d_bias[0][0] == doctest::Approx(1.0));        // db = 1
    CHECK(dx[0] == doctest::Approx(2.5));                 // dx = w
}

TEST_CASE("zero upstream gives zero gradients") {
    Rng rng(3);
    const std::vector<std::size_t> hidden = {8};
    const Mlp net = make_mlp(3, hidden, 2, rng);
    Tape tape;
    Vec y;
    mlp_forward(net, Vec{1.0, 2.0, 3.0}, y, &tape);
    MlpGrads g = MlpGrads::zeros_like(net);
    const Vec dx = mlp_backward(net, tape, Vec{0.0, 0.0}, g);
    for (const auto& m : g.d_weights) {
        for (double v : m.data()) CHECK(v == 0.0);
    }
    for (double v : dx) CHECK(v == 0.0);
}

TEST_CASE("backward matches central differences on a 5-16-16-1 net") {
    Rng rng(11);
    const std::vector<std::size_t> hidden = {16, 16};
    const Mlp net = make_mlp(5, hidden, 1, rng);
    Rng xr(12);
    Vec x(5);
    for (double& v : x) v = xr.uniform(-1.5, 1.5);
    CHECK(grad_check(net, x, 1e-5) < 1e-4);
}

TEST_CASE("tape mismatch is rejected") {
    Rng rng(4);
    const std::vector<std::size_t> h1 = {8};
    const std::vector<std::size_t> h2 = {9};
    const Mlp a = make_mlp(3, h1, 1, rng);
    const Mlp b = make_mlp(3, h2, 1, rng);
    Tape tape;
    Vec y;
    mlp_forward(a, Vec{1, 2, 3}, y, &tape);
    MlpGrads g = MlpGrads::zeros_like(b);
    CHECK_THROWS_AS(mlp_backward(b, tape, Vec{1.0}, g), TapeMismatch);
}

TEST_CASE("adam: zero gradient leaves parameters, moments decay after impulse") {
    Mlp net = tiny_linear(1.0, 0.0);
    AdamState st = AdamState::zeros_like(net);
    MlpGrads zero = MlpGrads::zeros_like(net);
    adam_step(net, zero, st, 1e-3);
    CHECK(net.layers[0].weights(0, 0) == 1.0);
    CHECK(net.layers[0].bias[0] == 0.0);

    MlpGrads g = MlpGrads::zeros_like(net);
    g.d_weights[0](0, 0) = 2.0;
    adam_step(net, g, st, 1e-3);
    const double m_after_impulse = st.m_w[0](0, 0);
    adam_step(net, zero, st, 1e-3);
    CHECK(std::abs(st.m_w[0](0, 0)) < std::abs(m_after_impulse));
}

TEST_CASE("adam first step moves by -lr * sign(g)") {
    for (double g0 : {3.7, -0.02, 11.0}) {
        Mlp net = tiny_linear(0.5, 0.0);
        AdamState st = AdamState::zeros_like(net);
        MlpGrads g = MlpGrads::zeros_like(net);
        g.d_weights[0](0, 0) = g0;
        const double lr = 1e-3;
        adam_step(net, g, st, lr);
        const double delta = net.layers[0].weights(0, 0) - 0.5;
        CHECK(delta == doctest::Approx(-lr * (g0 > 0 ? 1.0 : -1.0)).epsilon(1e-6));
        CHECK(st.step == 1);
    }
}

TEST_CASE("adam descends a 1-D quadratic monotonically for 100 steps") {
    Mlp net = tiny_linear(10.0, 0.0);  // parameter w, target 3
    AdamState st = AdamState::zeros_like(net);
    auto loss = [&]() {
        const double w = net.layers[0].weights(0, 0);
        return 0.5 * (w - 3.0) * (w - 3.0);
    };
    double prev = loss();
    for (int i = 0; i < 100; ++i) {
        MlpGrads g = MlpGrads::zeros_like(net);
        g.d_weights[0](0, 0) = net.layers[0].weights(0, 0) - 3.0;
        adam_step(net, g, st, 1e-2);
        const double cur = loss();
        CHECK(cur <= prev);
        prev = cur;
    }
}

TEST_CASE("adam rejects mismatched shapes") {
    Mlp net = tiny_linear(1.0, 0.0);
    Rng rng(6);
    const std::vector<std::size_t> hidden = {4};
    const Mlp other = make_mlp(2, hidden, 1, rng);
    AdamState st = AdamState::zeros_like(net);
    MlpGrads g = MlpGrads::zeros_like(other);
    CHECK_THROWS_AS(adam_step(net, g, st, 1e-3), ShapeMismatch);
}

TEST_CASE("grad_check across the architecture matrix") {
    Rng rng(31);
    Rng xr(32);
    for (const std::size_t width : {std::size_t{4}, std::size_t{16}, std::size_t{512}}) {
        for (const int depth : {1, 2}) {
            std::vector<std::size_t> hidden(static_cast<std::size_t>(depth), width);
            const Mlp net = make_mlp(4, hidden, 1, rng);
            const std::size_t cap = width >= 512 ? 2048 : (1u << 20);
            const int inputs = width >= 512 ? 3 : 20;
            for (int rep = 0; rep < inputs; ++rep) {
                Vec x(4);
                for (double& v : x) v = xr.uniform(-1.5, 1.5);
                CHECK(grad_check(net, x, 1e-5, cap) < 1e-4);
            }
        }
    }
}

TEST_CASE("grad_check is ~0 on linear nets and degrades with large h") {
    const Mlp lin = tiny_linear(1.7, -0.3);
    CHECK(grad_check(lin, Vec{0.8}, 1e-5) < 1e-10);

    Mlp net;
    DenseLayer layer;
    layer.weights = Mat(1, 1);
    layer.weights(0, 0) = 1.2;
    layer.bias = {0.3};
    layer.act = Activation::kTanh;
    net.layers.push_back(layer);
    const double fine = grad_check(net, Vec{0.9}, 1e-5);
    const double coarse = grad_check(net, Vec{0.9}, 1e-1);
    CHECK(fine < 1e-6);
    CHECK(coarse > 10.0 * fine);
}

TEST_CASE("activation derivatives match finite differences pointwise") {
    // single-unit nets isolate the activation functions
    for (const Activation act : {Activation::kLeakyRelu, Activation::kTanh}) {
        Mlp net;
        DenseLayer layer;
        layer.weights = Mat(1, 1);
        layer.weights(0, 0) = 1.0;
        layer.bias = {0.0};
        layer.act = act;
        net.layers.push_back(layer);
        for (double x : {-1.3, -0.4, 0.25, 0.9, 2.0}) {  // away from the kink
            Tape tape;
            Vec y;
            mlp_forward(net, Vec{x}, y, &tape);
            MlpGrads g = MlpGrads::zeros_like(net);
            const Vec dx = mlp_backward(net, tape, Vec{1.0}, g);
            const double h = 1e-6;
            Vec yp, ym;
            mlp_forward(net, Vec{x + h}, yp);
            mlp_forward(net, Vec{x - h}, ym);
            CHECK(dx[0] == doctest::Approx((yp[0] - ym[0]) / (2 * h)).epsilon(1e-6));
        }
    }
}

TEST_CASE("JSON persistence round-trips parameters exactly") {
    Rng rng(77);
    const std::vector<std::size_t> hidden = {8, 8};
    const Mlp net = make_mlp(3, hidden, 2, rng);
    const auto path = std::filesystem::temp_directory_path() / "rareflow_test_mlp.json";
    save_mlp(net, path.string());
    const Mlp back = load_mlp(path.string());
    REQUIRE(back.layers.size() == net.layers.size());
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        CHECK(back.layers[li].weights.data() == net.layers[li].weights.data());
        CHECK(back.layers[li].bias == net.layers[li].bias);
        CHECK(back.layers[li].act == net.layers[li].act);
    }
    std::filesystem::remove(path);
}
