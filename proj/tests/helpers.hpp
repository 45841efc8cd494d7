#pragma once

// Shared builders for the test suites: toy datasets, toy models, and random
// encoded networks.

#include <random>
#include <vector>

#include "codenn/bitwidth.hpp"
#include "codenn/model.hpp"
#include "codenn/training.hpp"

namespace codenn::testutil {

inline Tensor randu(std::vector<int> shape, std::mt19937_64& rng, float lo = -1.0f,
                    float hi = 1.0f) {
    std::uniform_real_distribution<float> dist(lo, hi);
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = dist(rng);
    return t;
}

inline void two_cluster_data(int n, uint64_t seed, std::vector<Tensor>& xs,
                             std::vector<int>& ys) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> noise(0.0f, 0.45f);
    for (int i = 0; i < n; ++i) {
        int label = i % 2;
        float cx = label ? 1.0f : -1.0f;
        xs.push_back(Tensor({2}, {cx + noise(rng), cx + noise(rng)}));
        ys.push_back(label);
    }
}

/// fc/relu stack: dims = {in, hidden..., classes}.
inline Model make_mlp(const std::vector<int>& dims, uint64_t seed) {
    Model m;
    m.seed = seed;
    m.net.input_shape = {dims.front()};
    m.net.classes = dims.back();
    std::mt19937_64 rng(seed);
    int in = dims.front();
    for (std::size_t i = 1; i < dims.size(); ++i) {
        LayerSpec fc;
        fc.kind = LayerKind::Fc;
        fc.out_features = dims[i];
        fc.name = "fc" + std::to_string(i);
        m.net.layers.push_back(fc);
        LayerParams p;
        float scale = std::sqrt(2.0f / static_cast<float>(in));
        p.weight = randu({dims[i], in}, rng, -scale, scale);
        p.bias = Tensor({dims[i]});
        m.params.push_back(std::move(p));
        m.enc_weights.emplace_back();
        if (i + 1 < dims.size()) {
            LayerSpec relu;
            relu.kind = LayerKind::Relu;
            m.net.layers.push_back(relu);
            m.params.emplace_back();
            m.enc_weights.emplace_back();
        }
        in = dims[i];
    }
    return m;
}

/// Random conv/bn/relu/pool/fc network with random parameters, plus random
/// inputs matching its shape. Weights and activations are then encoded.
inline Model random_encoded_net(uint64_t seed, std::vector<Tensor>& samples,
                                int sample_count = 10) {
    std::mt19937_64 rng(seed);
    auto pick = [&](int lo, int hi) {
        return std::uniform_int_distribution<int>(lo, hi)(rng);
    };

    Model m;
    m.seed = seed;
    int ch = pick(1, 2);
    int h = pick(6, 9);
    m.net.input_shape = {ch, h, h};
    m.net.classes = pick(3, 5);

    auto add = [&](LayerSpec spec, LayerParams p = {}) {
        m.net.layers.push_back(std::move(spec));
        m.params.push_back(std::move(p));
        m.enc_weights.emplace_back();
    };

    std::vector<int> shape = m.net.input_shape;
    int conv_blocks = pick(1, 2);
    for (int b = 0; b < conv_blocks; ++b) {
        LayerSpec conv;
        conv.kind = LayerKind::Conv;
        conv.out_channels = pick(2, 4);
        conv.kernel_h = conv.kernel_w = 3;
        conv.stride = 1;
        conv.padding = pick(0, 1);
        conv.name = "conv" + std::to_string(b);
        if (shape[1] + 2 * conv.padding < 3) break;
        LayerParams p;
        float scale = std::sqrt(2.0f / static_cast<float>(shape[0] * 9));
        p.weight = randu({conv.out_channels, shape[0], 3, 3}, rng, -scale, scale);
        p.bias = randu({conv.out_channels}, rng, -0.1f, 0.1f);
        shape = layer_output_shape(conv, shape, -1);
        add(conv, std::move(p));

        LayerSpec bn;
        bn.kind = LayerKind::BatchNorm;
        for (int c = 0; c < shape[0]; ++c) {
            bn.bn_scale.push_back(0.5f + 1.0f * std::uniform_real_distribution<float>(
                                             0.0f, 1.0f)(rng));
            bn.bn_bias.push_back(std::uniform_real_distribution<float>(-0.3f, 0.3f)(rng));
        }
        add(bn);

        LayerSpec relu;
        relu.kind = LayerKind::Relu;
        add(relu);

        if (shape[1] >= 4 && shape[1] % 2 == 0) {
            LayerSpec mp;
            mp.kind = LayerKind::MaxPool;
            mp.pool_h = mp.pool_w = 2;
            mp.pool_stride = 2;
            shape = layer_output_shape(mp, shape, -1);
            add(mp);
        }
    }

    int hidden = pick(4, 8);
    {
        LayerSpec fc;
        fc.kind = LayerKind::Fc;
        fc.out_features = hidden;
        fc.name = "fc_hidden";
        LayerParams p;
        int in = static_cast<int>(Tensor::numel_of(shape));
        float scale = std::sqrt(2.0f / static_cast<float>(in));
        p.weight = randu({hidden, in}, rng, -scale, scale);
        p.bias = randu({hidden}, rng, -0.1f, 0.1f);
        add(fc, std::move(p));
        LayerSpec relu;
        relu.kind = LayerKind::Relu;
        add(relu);
        shape = {hidden};
    }
    {
        LayerSpec fc;
        fc.kind = LayerKind::Fc;
        fc.out_features = m.net.classes;
        fc.name = "fc_out";
        LayerParams p;
        float scale = std::sqrt(2.0f / static_cast<float>(hidden));
        p.weight = randu({m.net.classes, hidden}, rng, -scale, scale);
        p.bias = randu({m.net.classes}, rng, -0.1f, 0.1f);
        add(fc, std::move(p));
    }
    validate(m.net);

    samples.clear();
    for (int i = 0; i < sample_count; ++i) {
        samples.push_back(randu(m.net.input_shape, rng, 0.0f, 1.0f));
    }
    encode_model_activations(m, samples, 3, seed + 101);
    encode_model_weights(m, 4, 3, seed + 202);
    return m;
}

} // namespace codenn::testutil
