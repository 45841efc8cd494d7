#include <gtest/gtest.h>

#include <random>

#include "codenn/net.hpp"

using namespace codenn;

namespace {

LayerSpec fc_layer(int out, const std::string& name = "") {
    LayerSpec s;
    s.kind = LayerKind::Fc;
    s.out_features = out;
    s.name = name;
    return s;
}

LayerSpec relu_layer() {
    LayerSpec s;
    s.kind = LayerKind::Relu;
    return s;
}

Tensor randu(std::vector<int> shape, std::mt19937_64& rng, float lo = -1.0f,
             float hi = 1.0f) {
    std::uniform_real_distribution<float> dist(lo, hi);
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = dist(rng);
    return t;
}

// Independent double-precision forward pass for gradient checking.
struct RefMlp {
    std::vector<std::vector<double>> w1, w2;
    std::vector<double> b1, b2;

    double loss(const std::vector<double>& x, int label) const {
        std::vector<double> h(w1.size());
        for (std::size_t o = 0; o < w1.size(); ++o) {
            double acc = b1[o];
            for (std::size_t i = 0; i < x.size(); ++i) acc += w1[o][i] * x[i];
            h[o] = acc > 0 ? acc : 0;
        }
        std::vector<double> z(w2.size());
        double maxz = -1e300;
        for (std::size_t o = 0; o < w2.size(); ++o) {
            double acc = b2[o];
            for (std::size_t i = 0; i < h.size(); ++i) acc += w2[o][i] * h[i];
            z[o] = acc;
            maxz = std::max(maxz, acc);
        }
        double denom = 0;
        for (double v : z) denom += std::exp(v - maxz);
        return -(z[label] - maxz - std::log(denom));
    }
};

} // namespace

TEST(Infer, ScalarFcMultiply) {
    NetworkSpec net;
    net.input_shape = {1};
    net.classes = 1;
    net.layers = {fc_layer(1)};
    Params params(1);
    params[0].weight = Tensor({1, 1}, {2.0f});
    params[0].bias = Tensor({1}, {0.0f});
    Tensor out = infer(net, params, Tensor({1}, {3.0f}));
    EXPECT_FLOAT_EQ(out.data[0], 6.0f);
}

TEST(Infer, ReluClampsNegatives) {
    NetworkSpec net;
    net.input_shape = {3};
    net.classes = 3;
    net.layers = {relu_layer()};
    Params params(1);
    Tensor out = infer(net, params, Tensor({3}, {-1.0f, 0.0f, 2.0f}));
    EXPECT_FLOAT_EQ(out.data[0], 0.0f);
    EXPECT_FLOAT_EQ(out.data[1], 0.0f);
    EXPECT_FLOAT_EQ(out.data[2], 2.0f);
}

TEST(Infer, MaxPool2x2) {
    NetworkSpec net;
    net.input_shape = {1, 2, 2};
    net.classes = 1;
    LayerSpec mp;
    mp.kind = LayerKind::MaxPool;
    mp.pool_h = mp.pool_w = 2;
    mp.pool_stride = 2;
    net.layers = {mp};
    Params params(1);
    Tensor out = infer(net, params, Tensor({1, 2, 2}, {1, 2, 3, 4}));
    ASSERT_EQ(out.shape, (std::vector<int>{1, 1, 1}));
    EXPECT_FLOAT_EQ(out.data[0], 4.0f);
}

TEST(Infer, DeterministicAcrossCalls) {
    std::mt19937_64 rng(1);
    NetworkSpec net;
    net.input_shape = {1, 6, 6};
    net.classes = 4;
    LayerSpec conv;
    conv.kind = LayerKind::Conv;
    conv.out_channels = 2;
    conv.kernel_h = conv.kernel_w = 3;
    conv.stride = 1;
    conv.padding = 1;
    LayerSpec mp;
    mp.kind = LayerKind::MaxPool;
    mp.pool_h = mp.pool_w = 2;
    mp.pool_stride = 2;
    net.layers = {conv, relu_layer(), mp, fc_layer(4)};
    Params params(4);
    params[0].weight = randu({2, 1, 3, 3}, rng);
    params[0].bias = randu({2}, rng);
    params[3].weight = randu({4, 18}, rng);
    params[3].bias = randu({4}, rng);

    Tensor x = randu({1, 6, 6}, rng);
    Tensor a = infer(net, params, x);
    Tensor b = infer(net, params, x);
    EXPECT_EQ(a.data, b.data);
}

TEST(Infer, ShapeMismatchNamesTheLayer) {
    NetworkSpec net;
    net.input_shape = {3};
    net.classes = 2;
    net.layers = {fc_layer(2, "head")};
    Params params(1);
    params[0].weight = Tensor({2, 4}, std::vector<float>(8, 0.1f));  // wrong in-dim
    try {
        infer(net, params, Tensor({3}, {1, 2, 3}));
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("head"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("layer 0"), std::string::npos);
    }
}

TEST(ShapeAlgebra, ConvFormula) {
    LayerSpec conv;
    conv.kind = LayerKind::Conv;
    conv.out_channels = 5;
    conv.kernel_h = 3;
    conv.kernel_w = 2;
    conv.stride = 2;
    conv.padding = 1;
    auto out = layer_output_shape(conv, {3, 11, 8}, 0);
    EXPECT_EQ(out[0], 5);
    EXPECT_EQ(out[1], (11 + 2 * 1 - 3) / 2 + 1);
    EXPECT_EQ(out[2], (8 + 2 * 1 - 2) / 2 + 1);
}

TEST(ShapeAlgebra, KernelMustFitPaddedInput) {
    LayerSpec conv;
    conv.kind = LayerKind::Conv;
    conv.out_channels = 1;
    conv.kernel_h = conv.kernel_w = 5;
    auto call = [&] { layer_output_shape(conv, {1, 3, 3}, 0); };
    EXPECT_THROW(call(), ShapeError);
}

TEST(Validate, RejectsEmptyAndMismatchedNetworks) {
    NetworkSpec empty;
    empty.input_shape = {4};
    empty.classes = 2;
    EXPECT_THROW(validate(empty), ParseError);

    NetworkSpec bad;
    bad.input_shape = {4};
    bad.classes = 3;
    bad.layers = {fc_layer(2)};  // 2 outputs for 3 classes
    EXPECT_THROW(validate(bad), ParseError);
}

TEST(Backprop, FcChainRule) {
    NetworkSpec net;
    net.input_shape = {1};
    net.classes = 1;
    net.layers = {fc_layer(1)};
    Params params(1);
    params[0].weight = Tensor({1, 1}, {2.0f});

    ForwardTrace trace = forward_trace(net, params, Tensor({1}, {3.0f}));
    Gradients g = backprop(net, params, trace, Tensor({1}, {1.0f}));
    EXPECT_FLOAT_EQ(g.param_grads[0].weight.data[0], 3.0f);
    EXPECT_FLOAT_EQ(g.input_grad.data[0], 2.0f);
}

TEST(Backprop, ReluMasksUpstream) {
    NetworkSpec net;
    net.input_shape = {2};
    net.classes = 2;
    net.layers = {relu_layer()};
    Params params(1);
    ForwardTrace trace = forward_trace(net, params, Tensor({2}, {-1.0f, 2.0f}));
    Gradients g = backprop(net, params, trace, Tensor({2}, {5.0f, 5.0f}));
    EXPECT_FLOAT_EQ(g.input_grad.data[0], 0.0f);
    EXPECT_FLOAT_EQ(g.input_grad.data[1], 5.0f);
}

TEST(Backprop, MissingForwardRecordFails) {
    NetworkSpec net;
    net.input_shape = {2};
    net.classes = 2;
    net.layers = {relu_layer()};
    Params params(1);
    ForwardTrace empty;
    EXPECT_THROW(backprop(net, params, empty, Tensor({2}, {1, 1})),
                 std::invalid_argument);
}

TEST(Backprop, MlpMatchesFiniteDifferences) {
    std::mt19937_64 rng(12);
    NetworkSpec net;
    net.input_shape = {4};
    net.classes = 2;
    net.layers = {fc_layer(3), relu_layer(), fc_layer(2)};
    Params params(3);
    params[0].weight = randu({3, 4}, rng);
    params[0].bias = randu({3}, rng);
    params[2].weight = randu({2, 3}, rng);
    params[2].bias = randu({2}, rng);
    Tensor x = randu({4}, rng);
    const int label = 1;

    // analytic gradient through the float substrate
    ForwardTrace trace = forward_trace(net, params, x);
    const Tensor& logits = trace.acts.back();
    double maxz = std::max(logits.data[0], logits.data[1]);
    double denom = std::exp(logits.data[0] - maxz) + std::exp(logits.data[1] - maxz);
    Tensor loss_grad({2});
    for (int i = 0; i < 2; ++i) {
        loss_grad.data[i] = static_cast<float>(
            std::exp(logits.data[i] - maxz) / denom - (i == label ? 1.0 : 0.0));
    }
    Gradients g = backprop(net, params, trace, loss_grad);

    // independent double-precision oracle
    RefMlp ref;
    ref.w1.assign(3, std::vector<double>(4));
    ref.w2.assign(2, std::vector<double>(3));
    ref.b1.assign(3, 0);
    ref.b2.assign(2, 0);
    for (int o = 0; o < 3; ++o) {
        for (int i = 0; i < 4; ++i) ref.w1[o][i] = params[0].weight.data[o * 4 + i];
        ref.b1[o] = params[0].bias.data[o];
    }
    for (int o = 0; o < 2; ++o) {
        for (int i = 0; i < 3; ++i) ref.w2[o][i] = params[2].weight.data[o * 3 + i];
        ref.b2[o] = params[2].bias.data[o];
    }
    std::vector<double> xd(x.data.begin(), x.data.end());

    const double h = 1e-4;
    auto check = [&](double* slot, float analytic) {
        double keep = *slot;
        *slot = keep + h;
        double up = ref.loss(xd, label);
        *slot = keep - h;
        double down = ref.loss(xd, label);
        *slot = keep;
        double fd = (up - down) / (2 * h);
        EXPECT_NEAR(analytic, fd, 1e-5 * std::max(1.0, std::abs(fd)));
    };
    for (int o = 0; o < 3; ++o) {
        for (int i = 0; i < 4; ++i) {
            check(&ref.w1[o][i], g.param_grads[0].weight.data[o * 4 + i]);
        }
        check(&ref.b1[o], g.param_grads[0].bias.data[o]);
    }
    for (int o = 0; o < 2; ++o) {
        for (int i = 0; i < 3; ++i) {
            check(&ref.w2[o][i], g.param_grads[2].weight.data[o * 3 + i]);
        }
        check(&ref.b2[o], g.param_grads[2].bias.data[o]);
    }
}

TEST(Backprop, ConvPoolBnMatchesCentralDifferencesOnLoss) {
    // every differentiable layer kind in one stack, checked against finite
    // differences of the float loss itself at a loose-but-meaningful tolerance
    std::mt19937_64 rng(5);
    NetworkSpec net;
    net.input_shape = {1, 5, 5};
    net.classes = 2;
    LayerSpec conv;
    conv.kind = LayerKind::Conv;
    conv.out_channels = 2;
    conv.kernel_h = conv.kernel_w = 3;
    conv.padding = 1;
    LayerSpec bn;
    bn.kind = LayerKind::BatchNorm;
    bn.bn_scale = {1.3f, 0.7f};
    bn.bn_bias = {0.1f, -0.2f};
    LayerSpec mp;
    mp.kind = LayerKind::MaxPool;
    mp.pool_h = mp.pool_w = 2;
    mp.pool_stride = 2;
    net.layers = {conv, bn, relu_layer(), mp, fc_layer(2)};
    Params params(5);
    params[0].weight = randu({2, 1, 3, 3}, rng);
    params[0].bias = randu({2}, rng);
    params[4].weight = randu({2, 8}, rng);
    params[4].bias = randu({2}, rng);
    Tensor x = randu({1, 5, 5}, rng, 0.0f, 1.0f);
    const int label = 0;

    auto loss_of = [&](const Params& p) {
        Tensor logits = infer(net, p, x);
        double maxz = std::max(logits.data[0], logits.data[1]);
        double denom =
            std::exp(logits.data[0] - maxz) + std::exp(logits.data[1] - maxz);
        return -(static_cast<double>(logits.data[label]) - maxz - std::log(denom));
    };

    ForwardTrace trace = forward_trace(net, params, x);
    const Tensor& logits = trace.acts.back();
    double maxz = std::max(logits.data[0], logits.data[1]);
    double denom = std::exp(logits.data[0] - maxz) + std::exp(logits.data[1] - maxz);
    Tensor loss_grad({2});
    for (int i = 0; i < 2; ++i) {
        loss_grad.data[i] = static_cast<float>(
            std::exp(logits.data[i] - maxz) / denom - (i == label ? 1.0 : 0.0));
    }
    Gradients g = backprop(net, params, trace, loss_grad);

    const float h = 5e-3f;
    std::uniform_int_distribution<std::size_t> pick_layer(0, 1);
    for (int rep = 0; rep < 24; ++rep) {
        std::size_t layer = pick_layer(rng) == 0 ? 0 : 4;
        std::uniform_int_distribution<std::size_t> pick(
            0, params[layer].weight.numel() - 1);
        std::size_t i = pick(rng);
        Params p = params;
        p[layer].weight.data[i] += h;
        double up = loss_of(p);
        p[layer].weight.data[i] = params[layer].weight.data[i] - h;
        double down = loss_of(p);
        double fd = (up - down) / (2.0 * h);
        EXPECT_NEAR(g.param_grads[layer].weight.data[i], fd,
                    2e-3 * std::max(1.0, std::abs(fd)));
    }
}

TEST(Accuracy, PerfectOneHotClassifier) {
    // fc with identity weights echoes the one-hot input
    NetworkSpec net;
    net.input_shape = {3};
    net.classes = 3;
    net.layers = {fc_layer(3)};
    Params params(1);
    params[0].weight = Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    std::vector<Tensor> xs;
    std::vector<int> ys;
    for (int c = 0; c < 3; ++c) {
        Tensor t({3});
        t.data[c] = 1.0f;
        xs.push_back(t);
        ys.push_back(c);
    }
    EXPECT_DOUBLE_EQ(accuracy(net, params, xs, ys, 3), 1.0);
}

TEST(Accuracy, ConstantLogitsTieBreakToClassZero) {
    NetworkSpec net;
    net.input_shape = {1};
    net.classes = 2;
    net.layers = {fc_layer(2)};
    Params params(1);
    params[0].weight = Tensor({2, 1}, {0.0f, 0.0f});
    std::vector<Tensor> xs(4, Tensor({1}, {1.0f}));
    std::vector<int> ys(4, 1);
    EXPECT_DOUBLE_EQ(accuracy(net, params, xs, ys, 4), 0.0);
}

TEST(Accuracy, FractionOfFirstN) {
    NetworkSpec net;
    net.input_shape = {2};
    net.classes = 2;
    net.layers = {fc_layer(2)};
    Params params(1);
    params[0].weight = Tensor({2, 2}, {1, 0, 0, 1});
    std::vector<Tensor> xs = {Tensor({2}, {1, 0}), Tensor({2}, {0, 1}),
                              Tensor({2}, {1, 0}), Tensor({2}, {9, 0})};
    std::vector<int> ys = {0, 1, 1, 0};  // first three: correct, correct, wrong
    EXPECT_NEAR(accuracy(net, params, xs, ys, 3), 2.0 / 3.0, 1e-12);
}

TEST(Accuracy, EmptyDatasetFails) {
    NetworkSpec net;
    net.input_shape = {1};
    net.classes = 1;
    net.layers = {fc_layer(1)};
    Params params(1);
    params[0].weight = Tensor({1, 1}, {1.0f});
    std::vector<Tensor> xs;
    std::vector<int> ys;
    EXPECT_THROW(accuracy(net, params, xs, ys, 0), std::invalid_argument);
}

TEST(Backprop, DeterministicAcrossCalls) {
    std::mt19937_64 rng(8);
    NetworkSpec net;
    net.input_shape = {4};
    net.classes = 2;
    net.layers = {fc_layer(3), relu_layer(), fc_layer(2)};
    Params params(3);
    params[0].weight = randu({3, 4}, rng);
    params[2].weight = randu({2, 3}, rng);
    Tensor x = randu({4}, rng);
    ForwardTrace t1 = forward_trace(net, params, x);
    ForwardTrace t2 = forward_trace(net, params, x);
    Gradients g1 = backprop(net, params, t1, Tensor({2}, {1.0f, -1.0f}));
    Gradients g2 = backprop(net, params, t2, Tensor({2}, {1.0f, -1.0f}));
    EXPECT_EQ(g1.param_grads[0].weight.data, g2.param_grads[0].weight.data);
    EXPECT_EQ(g1.input_grad.data, g2.input_grad.data);
}
