#pragma once

#include <optional>
#include <vector>

#include "codenn/net.hpp"

namespace codenn {

/// A network plus its parameters. Conv/fc layers hold float master weights
/// in `params`; once a layer's weights are encoded, `enc_weights` carries the
/// codebook + index matrix and the float master is kept only as k-means input
/// for later re-fits at other bitwidths.
struct Model {
    NetworkSpec net;
    Params params;
    std::vector<std::optional<EncodedWeights>> enc_weights;
    uint64_t seed = 42;

    void sync_slots() {
        params.resize(net.layers.size());
        enc_weights.resize(net.layers.size());
    }
};

inline std::vector<int> weight_layer_indices(const NetworkSpec& net) {
    std::vector<int> out;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        if (net.layers[l].kind == LayerKind::Conv ||
            net.layers[l].kind == LayerKind::Fc) {
            out.push_back(static_cast<int>(l));
        }
    }
    return out;
}

inline std::vector<int> relu_layer_indices(const NetworkSpec& net) {
    std::vector<int> out;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        if (net.layers[l].kind == LayerKind::Relu) out.push_back(static_cast<int>(l));
    }
    return out;
}

inline std::vector<int> encode_layer_indices(const NetworkSpec& net) {
    std::vector<int> out;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        if (net.layers[l].kind == LayerKind::Encode) out.push_back(static_cast<int>(l));
    }
    return out;
}

/// Parameters with encoded weights decoded back to dense float tensors.
inline Params effective_params(const Model& m) {
    Params eff = m.params;
    for (std::size_t l = 0; l < m.net.layers.size(); ++l) {
        if (l < m.enc_weights.size() && m.enc_weights[l].has_value()) {
            eff[l].weight = decode_tensor(m.enc_weights[l]->indices,
                                          m.enc_weights[l]->codebook);
        }
    }
    return eff;
}

inline Tensor model_infer(const Model& m, const Tensor& input) {
    return infer(m.net, effective_params(m), input);
}

inline double model_accuracy(const Model& m, const std::vector<Tensor>& inputs,
                             const std::vector<int>& labels, std::size_t n) {
    return accuracy(m.net, effective_params(m), inputs, labels, n);
}

/// Replaces every relu with an encode layer whose zero-anchored codebook is
/// clustered from that relu's outputs over the sample batch. All activations
/// are captured in one sweep of the unmodified model, then the layers are
/// swapped, so every codebook reflects the same float network.
inline void encode_model_activations(Model& m, const std::vector<Tensor>& samples,
                                     const std::vector<int>& bits_per_relu,
                                     uint64_t seed) {
    m.sync_slots();
    std::vector<int> relus = relu_layer_indices(m.net);
    if (relus.size() != bits_per_relu.size()) {
        throw std::invalid_argument("encode_model_activations: expected " +
                                    std::to_string(relus.size()) +
                                    " bit entries, got " +
                                    std::to_string(bits_per_relu.size()));
    }
    Params eff = effective_params(m);
    std::vector<std::vector<float>> positives(relus.size());
    for (std::size_t r = 0; r < relus.size(); ++r) {
        positives[r] = capture_positive_activations(m.net, eff, samples, relus[r]);
    }
    for (std::size_t r = 0; r < relus.size(); ++r) {
        int l = relus[r];
        int bits = bits_per_relu[r];
        if (bits < 1) throw std::invalid_argument("activation bits must be >= 1");
        LayerSpec& spec = m.net.layers[l];
        spec.kind = LayerKind::Encode;
        spec.enc_bits = bits;
        spec.codebook = codebook_from_positive_samples(positives[r], 1 << bits,
                                                       seed + static_cast<uint64_t>(l));
    }
}

inline void encode_model_activations(Model& m, const std::vector<Tensor>& samples,
                                     int bits, uint64_t seed) {
    std::vector<int> per(relu_layer_indices(m.net).size(), bits);
    encode_model_activations(m, samples, per, seed);
}

/// K-means encodes the weights of every conv/fc layer at the given bitwidths.
inline void encode_model_weights(Model& m, const std::vector<int>& bits_per_layer,
                                 uint64_t seed) {
    m.sync_slots();
    std::vector<int> layers = weight_layer_indices(m.net);
    if (layers.size() != bits_per_layer.size()) {
        throw std::invalid_argument("encode_model_weights: expected " +
                                    std::to_string(layers.size()) +
                                    " bit entries, got " +
                                    std::to_string(bits_per_layer.size()));
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
        int l = layers[i];
        int bits = bits_per_layer[i];
        if (bits < 1) throw std::invalid_argument("weight bits must be >= 1");
        if (m.params[l].weight.numel() == 0) {
            throw std::invalid_argument("encode_model_weights: " +
                                        layer_label(l, m.net.layers[l]) +
                                        " has no float weights");
        }
        auto [cb, enc] = encode_weights(m.params[l].weight, 1 << bits,
                                        seed + static_cast<uint64_t>(l));
        m.enc_weights[l] = EncodedWeights{std::move(cb), std::move(enc), bits};
    }
}

inline void encode_model_weights(Model& m, int conv_bits, int fc_bits,
                                 uint64_t seed) {
    std::vector<int> per;
    for (int l : weight_layer_indices(m.net)) {
        per.push_back(m.net.layers[l].kind == LayerKind::Conv ? conv_bits : fc_bits);
    }
    encode_model_weights(m, per, seed);
}

/// Rewrites the model into the form the hardware executes: conv/fc layers
/// lose their bias and are followed by a batch-norm layer carrying the folded
/// per-output scale/bias (scale*bias_orig + bias_bn). Inference on the folded
/// model is the bit-exact software reference for the pipeline simulator.
inline Model fold_for_hardware(const Model& m) {
    Model out;
    out.seed = m.seed;
    out.net.input_shape = m.net.input_shape;
    out.net.classes = m.net.classes;

    for (std::size_t l = 0; l < m.net.layers.size(); ++l) {
        const LayerSpec& spec = m.net.layers[l];
        if (spec.kind == LayerKind::Conv || spec.kind == LayerKind::Fc) {
            int outs = spec.kind == LayerKind::Conv ? spec.out_channels
                                                    : spec.out_features;
            LayerSpec folded = spec;
            out.net.layers.push_back(folded);
            LayerParams p = m.params[l];
            std::vector<float> bias(outs, 0.0f);
            if (!p.bias.data.empty()) {
                for (int i = 0; i < outs; ++i) bias[i] = p.bias.data[i];
            }
            p.bias = Tensor();
            out.params.push_back(std::move(p));
            out.enc_weights.push_back(l < m.enc_weights.size() ? m.enc_weights[l]
                                                               : std::nullopt);

            LayerSpec bn;
            bn.kind = LayerKind::BatchNorm;
            bn.name = spec.name.empty() ? "" : spec.name + "_bn";
            bn.bn_scale.assign(outs, 1.0f);
            bn.bn_bias = bias;
            if (l + 1 < m.net.layers.size() &&
                m.net.layers[l + 1].kind == LayerKind::BatchNorm) {
                const LayerSpec& src = m.net.layers[l + 1];
                for (int i = 0; i < outs; ++i) {
                    bn.bn_scale[i] = src.bn_scale[i];
                    bn.bn_bias[i] = bn_apply(src.bn_scale[i], src.bn_bias[i], bias[i]);
                }
                ++l;  // batch-norm absorbed
            }
            out.net.layers.push_back(std::move(bn));
            out.params.emplace_back();
            out.enc_weights.emplace_back();
        } else if (spec.kind == LayerKind::BatchNorm) {
            throw ParseError(layer_label(static_cast<int>(l), spec) +
                             ": batch-norm must directly follow a conv or fc layer");
        } else {
            out.net.layers.push_back(spec);
            out.params.push_back(l < m.params.size() ? m.params[l] : LayerParams{});
            out.enc_weights.push_back(l < m.enc_weights.size() ? m.enc_weights[l]
                                                               : std::nullopt);
        }
    }
    validate(out.net);
    return out;
}

} // namespace codenn
