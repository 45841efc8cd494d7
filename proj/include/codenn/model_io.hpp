#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "codenn/model.hpp"

namespace codenn {

namespace detail {

inline LayerKind kind_from_string(const std::string& s, int index) {
    if (s == "conv") return LayerKind::Conv;
    if (s == "fc") return LayerKind::Fc;
    if (s == "maxpool") return LayerKind::MaxPool;
    if (s == "batchnorm") return LayerKind::BatchNorm;
    if (s == "relu") return LayerKind::Relu;
    if (s == "encode") return LayerKind::Encode;
    throw ParseError("layer " + std::to_string(index) + ": unknown kind '" + s + "'");
}

inline Tensor tensor_from_flat(const nlohmann::json& j, std::vector<int> shape,
                               const std::string& what, int index) {
    std::vector<float> data;
    try {
        data = j.get<std::vector<float>>();
    } catch (const nlohmann::json::exception&) {
        throw ParseError("layer " + std::to_string(index) + ": field '" + what +
                         "' must be a flat number array");
    }
    if (data.size() != Tensor::numel_of(shape)) {
        throw ParseError("layer " + std::to_string(index) + ": field '" + what +
                         "' has " + std::to_string(data.size()) +
                         " values, expected " +
                         std::to_string(Tensor::numel_of(shape)) + " for shape " +
                         shape_string(shape));
    }
    return Tensor(std::move(shape), std::move(data));
}

} // namespace detail

/// Parses a network description (architecture plus parameters) from JSON.
/// Layer shapes are chained and every weight array checked against the shape
/// it must have at that position; errors carry the layer index and field.
inline Model parse_model(const nlohmann::json& root) {
    Model m;
    try {
        m.net.input_shape = root.at("input_shape").get<std::vector<int>>();
        m.net.classes = root.at("classes").get<int>();
        m.seed = root.value("seed", uint64_t{42});
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("model header: ") + e.what());
    }
    if (!root.contains("layers") || !root.at("layers").is_array() ||
        root.at("layers").empty()) {
        throw ParseError("model has an empty layer list");
    }

    std::vector<int> shape = m.net.input_shape;
    int index = 0;
    for (const auto& j : root.at("layers")) {
        LayerSpec spec;
        LayerParams params;
        std::optional<EncodedWeights> encoded;
        try {
            spec.kind = detail::kind_from_string(j.at("kind").get<std::string>(), index);
            spec.name = j.value("name", "");
            switch (spec.kind) {
                case LayerKind::Conv: {
                    spec.out_channels = j.at("out_channels").get<int>();
                    auto kernel = j.at("kernel").get<std::vector<int>>();
                    if (kernel.size() != 2) {
                        throw ParseError("layer " + std::to_string(index) +
                                         ": kernel must be [h, w]");
                    }
                    spec.kernel_h = kernel[0];
                    spec.kernel_w = kernel[1];
                    spec.stride = j.value("stride", 1);
                    spec.padding = j.value("padding", 0);
                    break;
                }
                case LayerKind::Fc:
                    spec.out_features = j.at("out_features").get<int>();
                    break;
                case LayerKind::MaxPool: {
                    auto window = j.at("window").get<std::vector<int>>();
                    if (window.size() != 2) {
                        throw ParseError("layer " + std::to_string(index) +
                                         ": window must be [h, w]");
                    }
                    spec.pool_h = window[0];
                    spec.pool_w = window[1];
                    spec.pool_stride = j.at("stride").get<int>();
                    break;
                }
                case LayerKind::BatchNorm:
                    spec.bn_scale = j.at("scale").get<std::vector<float>>();
                    spec.bn_bias = j.at("bias").get<std::vector<float>>();
                    break;
                case LayerKind::Relu:
                    break;
                case LayerKind::Encode: {
                    spec.codebook.values = j.at("codebook").get<std::vector<float>>();
                    if (!spec.codebook.strictly_ascending()) {
                        throw ParseError("layer " + std::to_string(index) +
                                         ": codebook must be strictly ascending");
                    }
                    spec.codebook.zero_anchored = j.value("zero_anchored", false);
                    if (spec.codebook.zero_anchored &&
                        spec.codebook.values.front() != 0.0f) {
                        throw ParseError("layer " + std::to_string(index) +
                                         ": zero-anchored codebook must start at 0");
                    }
                    spec.codebook.refresh_bitwidth();
                    spec.enc_bits = j.value("bits", spec.codebook.bitwidth);
                    break;
                }
            }
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("layer " + std::to_string(index) + ": " + e.what());
        }

        // chain the shape first so weight arrays can be checked in place
        std::vector<int> out_shape;
        try {
            out_shape = layer_output_shape(spec, shape, index);
        } catch (const ShapeError& e) {
            throw ParseError(e.what());
        }

        try {
            if (spec.kind == LayerKind::Conv || spec.kind == LayerKind::Fc) {
                std::vector<int> wshape =
                    spec.kind == LayerKind::Conv
                        ? std::vector<int>{spec.out_channels, shape[0], spec.kernel_h,
                                           spec.kernel_w}
                        : std::vector<int>{spec.out_features,
                                           static_cast<int>(Tensor::numel_of(shape))};
                int outs = wshape[0];
                if (j.contains("weight_codebook")) {
                    EncodedWeights ew;
                    ew.codebook.values =
                        j.at("weight_codebook").get<std::vector<float>>();
                    if (!ew.codebook.strictly_ascending()) {
                        throw ParseError("layer " + std::to_string(index) +
                                         ": weight codebook must be strictly ascending");
                    }
                    ew.codebook.refresh_bitwidth();
                    ew.bits = j.value("weight_bits", ew.codebook.bitwidth);
                    auto idx = j.at("weight_indices").get<std::vector<uint32_t>>();
                    if (idx.size() != Tensor::numel_of(wshape)) {
                        throw ParseError("layer " + std::to_string(index) +
                                         ": weight_indices length mismatch for shape " +
                                         shape_string(wshape));
                    }
                    for (uint32_t v : idx) {
                        if (v >= ew.codebook.size()) {
                            throw ParseError("layer " + std::to_string(index) +
                                             ": weight index out of codebook range");
                        }
                    }
                    ew.indices.shape = wshape;
                    ew.indices.indices = std::move(idx);
                    encoded = std::move(ew);
                } else {
                    params.weight =
                        detail::tensor_from_flat(j.at("weight"), wshape, "weight", index);
                }
                if (j.contains("bias")) {
                    params.bias =
                        detail::tensor_from_flat(j.at("bias"), {outs}, "bias", index);
                }
            }
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("layer " + std::to_string(index) + ": " + e.what());
        }

        shape = out_shape;
        m.net.layers.push_back(std::move(spec));
        m.params.push_back(std::move(params));
        m.enc_weights.push_back(std::move(encoded));
        ++index;
    }

    validate(m.net);
    return m;
}

inline Model read_model_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open: " + path);
    nlohmann::json root;
    try {
        in >> root;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    return parse_model(root);
}

inline nlohmann::ordered_json model_to_json(const Model& m) {
    nlohmann::ordered_json root;
    root["format"] = "codenn-model";
    root["version"] = 1;
    root["seed"] = m.seed;
    root["input_shape"] = m.net.input_shape;
    root["classes"] = m.net.classes;
    nlohmann::ordered_json layers = nlohmann::ordered_json::array();
    for (std::size_t l = 0; l < m.net.layers.size(); ++l) {
        const LayerSpec& spec = m.net.layers[l];
        nlohmann::ordered_json j;
        j["kind"] = to_string(spec.kind);
        if (!spec.name.empty()) j["name"] = spec.name;
        switch (spec.kind) {
            case LayerKind::Conv:
                j["out_channels"] = spec.out_channels;
                j["kernel"] = {spec.kernel_h, spec.kernel_w};
                j["stride"] = spec.stride;
                j["padding"] = spec.padding;
                break;
            case LayerKind::Fc:
                j["out_features"] = spec.out_features;
                break;
            case LayerKind::MaxPool:
                j["window"] = {spec.pool_h, spec.pool_w};
                j["stride"] = spec.pool_stride;
                break;
            case LayerKind::BatchNorm:
                j["scale"] = spec.bn_scale;
                j["bias"] = spec.bn_bias;
                break;
            case LayerKind::Relu:
                break;
            case LayerKind::Encode:
                j["codebook"] = spec.codebook.values;
                j["zero_anchored"] = spec.codebook.zero_anchored;
                j["bits"] = spec.enc_bits;
                break;
        }
        if (spec.kind == LayerKind::Conv || spec.kind == LayerKind::Fc) {
            if (l < m.enc_weights.size() && m.enc_weights[l].has_value()) {
                const EncodedWeights& ew = *m.enc_weights[l];
                j["weight_codebook"] = ew.codebook.values;
                j["weight_bits"] = ew.bits;
                j["weight_indices"] = ew.indices.indices;
            } else {
                j["weight"] = m.params[l].weight.data;
            }
            if (!m.params[l].bias.data.empty()) j["bias"] = m.params[l].bias.data;
        }
        layers.push_back(std::move(j));
    }
    root["layers"] = layers;
    return root;
}

inline void write_model_file(const std::string& path, const Model& m) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open for writing: " + path);
    out << model_to_json(m).dump(2) << "\n";
}

} // namespace codenn
