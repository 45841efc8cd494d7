#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "codenn/codebook.hpp"
#include "codenn/encoding.hpp"
#include "codenn/tensor.hpp"

namespace codenn {

enum class LayerKind { Conv, Fc, MaxPool, BatchNorm, Relu, Encode };

inline const char* to_string(LayerKind k) {
    switch (k) {
        case LayerKind::Conv: return "conv";
        case LayerKind::Fc: return "fc";
        case LayerKind::MaxPool: return "maxpool";
        case LayerKind::BatchNorm: return "batchnorm";
        case LayerKind::Relu: return "relu";
        case LayerKind::Encode: return "encode";
    }
    return "?";
}

/// One layer of a network description. Only the fields of the active kind
/// are meaningful. Batch-norm carries pre-folded per-channel scale/bias;
/// encode layers carry the activation codebook and its configured bitwidth.
struct LayerSpec {
    LayerKind kind = LayerKind::Fc;
    std::string name;

    // conv
    int out_channels = 0;
    int kernel_h = 0, kernel_w = 0;
    int stride = 1;
    int padding = 0;

    // fc
    int out_features = 0;

    // maxpool
    int pool_h = 0, pool_w = 0;
    int pool_stride = 1;

    // batchnorm
    std::vector<float> bn_scale, bn_bias;

    // encode
    Codebook codebook;
    int enc_bits = 0;
};

struct NetworkSpec {
    std::vector<LayerSpec> layers;
    std::vector<int> input_shape;
    int classes = 0;
};

struct LayerParams {
    Tensor weight;
    Tensor bias;
};

using Params = std::vector<LayerParams>;

inline std::string layer_label(int index, const LayerSpec& spec) {
    std::string s = "layer " + std::to_string(index) + " (" + to_string(spec.kind);
    if (!spec.name.empty()) s += " '" + spec.name + "'";
    return s + ")";
}

inline int conv_out_dim(int in, int pad, int kernel, int stride) {
    return (in + 2 * pad - kernel) / stride + 1;
}

inline std::vector<int> layer_output_shape(const LayerSpec& spec,
                                           const std::vector<int>& in,
                                           int index) {
    auto fail = [&](const std::string& msg) -> std::vector<int> {
        throw ShapeError(layer_label(index, spec) + ": " + msg + " (input " +
                         shape_string(in) + ")");
    };
    switch (spec.kind) {
        case LayerKind::Conv: {
            if (in.size() != 3) return fail("conv expects a CHW input");
            if (spec.stride < 1) return fail("stride must be >= 1");
            if (spec.out_channels < 1 || spec.kernel_h < 1 || spec.kernel_w < 1)
                return fail("bad kernel/channel attributes");
            int oh = conv_out_dim(in[1], spec.padding, spec.kernel_h, spec.stride);
            int ow = conv_out_dim(in[2], spec.padding, spec.kernel_w, spec.stride);
            if (in[1] + 2 * spec.padding < spec.kernel_h ||
                in[2] + 2 * spec.padding < spec.kernel_w || oh < 1 || ow < 1)
                return fail("kernel does not fit padded input");
            return {spec.out_channels, oh, ow};
        }
        case LayerKind::Fc: {
            if (spec.out_features < 1) return fail("out_features must be >= 1");
            return {spec.out_features};
        }
        case LayerKind::MaxPool: {
            if (in.size() != 3) return fail("maxpool expects a CHW input");
            if (spec.pool_stride < 1) return fail("stride must be >= 1");
            if (in[1] < spec.pool_h || in[2] < spec.pool_w)
                return fail("pooling window does not fit input");
            int oh = (in[1] - spec.pool_h) / spec.pool_stride + 1;
            int ow = (in[2] - spec.pool_w) / spec.pool_stride + 1;
            return {in[0], oh, ow};
        }
        case LayerKind::BatchNorm: {
            std::size_t ch = in.size() == 3 ? static_cast<std::size_t>(in[0])
                                            : Tensor::numel_of(in);
            if (spec.bn_scale.size() != ch || spec.bn_bias.size() != ch)
                return fail("scale/bias length " + std::to_string(spec.bn_scale.size()) +
                            " does not match channel count " + std::to_string(ch));
            return in;
        }
        case LayerKind::Relu:
            return in;
        case LayerKind::Encode:
            if (spec.codebook.empty()) return fail("encode layer has no codebook");
            return in;
    }
    return fail("unknown layer kind");
}

/// Validates that layer shapes chain from the declared input shape and that
/// the final layer emits exactly one logit per class.
inline void validate(const NetworkSpec& net) {
    if (net.layers.empty()) throw ParseError("network has no layers");
    if (net.input_shape.empty()) throw ParseError("network has no input shape");
    if (net.classes < 1) throw ParseError("network class count must be >= 1");
    std::vector<int> shape = net.input_shape;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        shape = layer_output_shape(net.layers[l], shape, static_cast<int>(l));
    }
    if (Tensor::numel_of(shape) != static_cast<std::size_t>(net.classes)) {
        throw ParseError("final layer output " + shape_string(shape) +
                         " does not match class count " +
                         std::to_string(net.classes));
    }
}

/// Output shape of every layer, index l holding the shape after layer l.
inline std::vector<std::vector<int>> layer_shapes(const NetworkSpec& net) {
    std::vector<std::vector<int>> shapes;
    std::vector<int> shape = net.input_shape;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        shape = layer_output_shape(net.layers[l], shape, static_cast<int>(l));
        shapes.push_back(shape);
    }
    return shapes;
}

// ---------------------------------------------------------------------------
// Shared traversal helpers. The convolution window order — output positions
// row-major, and channel-major then row-major within a window — is the one
// contract both the software reference and the hardware simulator follow, so
// their accumulations are bit-identical.
// ---------------------------------------------------------------------------

struct ConvGeometry {
    int in_c = 0, in_h = 0, in_w = 0;
    int k_h = 0, k_w = 0;
    int stride = 1, pad = 0;
    int out_h = 0, out_w = 0;

    int fold() const { return in_c * k_h * k_w; }
    int windows() const { return out_h * out_w; }
};

inline ConvGeometry conv_geometry(const LayerSpec& spec, const std::vector<int>& in) {
    ConvGeometry g;
    g.in_c = in[0];
    g.in_h = in[1];
    g.in_w = in[2];
    g.k_h = spec.kernel_h;
    g.k_w = spec.kernel_w;
    g.stride = spec.stride;
    g.pad = spec.padding;
    g.out_h = conv_out_dim(in[1], spec.padding, spec.kernel_h, spec.stride);
    g.out_w = conv_out_dim(in[2], spec.padding, spec.kernel_w, spec.stride);
    return g;
}

/// Copies one convolution window (zero padded) into `win`.
template <typename T>
inline void gather_window(const T* fmap, const ConvGeometry& g, int oy, int ox,
                          T zero, T* win) {
    int n = 0;
    for (int c = 0; c < g.in_c; ++c) {
        for (int ky = 0; ky < g.k_h; ++ky) {
            int iy = oy * g.stride - g.pad + ky;
            for (int kx = 0; kx < g.k_w; ++kx) {
                int ix = ox * g.stride - g.pad + kx;
                bool inside = iy >= 0 && iy < g.in_h && ix >= 0 && ix < g.in_w;
                win[n++] = inside
                               ? fmap[(static_cast<std::size_t>(c) * g.in_h + iy) *
                                          g.in_w + ix]
                               : zero;
            }
        }
    }
}

inline float bn_apply(float scale, float bias, float x) { return scale * x + bias; }

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

namespace detail {

inline void check_conv_params(const LayerSpec& spec, const LayerParams& p,
                              const ConvGeometry& g, int index) {
    std::vector<int> want = {spec.out_channels, g.in_c, g.k_h, g.k_w};
    if (p.weight.shape != want) {
        throw ShapeError(layer_label(index, spec) + ": weight shape " +
                         shape_string(p.weight.shape) + " does not match expected " +
                         shape_string(want));
    }
    if (!p.bias.data.empty() &&
        p.bias.numel() != static_cast<std::size_t>(spec.out_channels)) {
        throw ShapeError(layer_label(index, spec) + ": bias length mismatch");
    }
}

inline void check_fc_params(const LayerSpec& spec, const LayerParams& p,
                            std::size_t in_len, int index) {
    std::vector<int> want = {spec.out_features, static_cast<int>(in_len)};
    if (p.weight.shape != want) {
        throw ShapeError(layer_label(index, spec) + ": weight shape " +
                         shape_string(p.weight.shape) + " does not match expected " +
                         shape_string(want));
    }
    if (!p.bias.data.empty() &&
        p.bias.numel() != static_cast<std::size_t>(spec.out_features)) {
        throw ShapeError(layer_label(index, spec) + ": bias length mismatch");
    }
}

} // namespace detail

inline Tensor apply_layer(const LayerSpec& spec, const LayerParams& params,
                          const Tensor& in, int index) {
    std::vector<int> out_shape = layer_output_shape(spec, in.shape, index);
    switch (spec.kind) {
        case LayerKind::Conv: {
            ConvGeometry g = conv_geometry(spec, in.shape);
            detail::check_conv_params(spec, params, g, index);
            Tensor out(out_shape);
            const int fold = g.fold();
            std::vector<float> win(fold);
            const float* w = params.weight.data.data();
            const bool has_bias = !params.bias.data.empty();
            for (int oy = 0; oy < g.out_h; ++oy) {
                for (int ox = 0; ox < g.out_w; ++ox) {
                    gather_window(in.data.data(), g, oy, ox, 0.0f, win.data());
                    for (int oc = 0; oc < spec.out_channels; ++oc) {
                        const float* row = w + static_cast<std::size_t>(oc) * fold;
                        float acc = 0.0f;
                        for (int i = 0; i < fold; ++i) acc += row[i] * win[i];
                        if (has_bias) acc += params.bias.data[oc];
                        out.data[chw_index(oc, oy, ox, g.out_h, g.out_w)] = acc;
                    }
                }
            }
            return out;
        }
        case LayerKind::Fc: {
            detail::check_fc_params(spec, params, in.numel(), index);
            Tensor out(out_shape);
            const std::size_t n = in.numel();
            const float* w = params.weight.data.data();
            const bool has_bias = !params.bias.data.empty();
            for (int o = 0; o < spec.out_features; ++o) {
                const float* row = w + static_cast<std::size_t>(o) * n;
                float acc = 0.0f;
                for (std::size_t i = 0; i < n; ++i) acc += row[i] * in.data[i];
                if (has_bias) acc += params.bias.data[o];
                out.data[o] = acc;
            }
            return out;
        }
        case LayerKind::MaxPool: {
            Tensor out(out_shape);
            const int ch = in.shape[0], h = in.shape[1], w = in.shape[2];
            const int oh = out_shape[1], ow = out_shape[2];
            for (int c = 0; c < ch; ++c) {
                for (int oy = 0; oy < oh; ++oy) {
                    for (int ox = 0; ox < ow; ++ox) {
                        float best = -std::numeric_limits<float>::infinity();
                        for (int ky = 0; ky < spec.pool_h; ++ky) {
                            for (int kx = 0; kx < spec.pool_w; ++kx) {
                                int iy = oy * spec.pool_stride + ky;
                                int ix = ox * spec.pool_stride + kx;
                                best = std::max(best, in.data[chw_index(c, iy, ix, h, w)]);
                            }
                        }
                        out.data[chw_index(c, oy, ox, oh, ow)] = best;
                    }
                }
            }
            return out;
        }
        case LayerKind::BatchNorm: {
            Tensor out(out_shape);
            if (in.shape.size() == 3) {
                const int ch = in.shape[0];
                const std::size_t plane = in.numel() / ch;
                for (int c = 0; c < ch; ++c) {
                    for (std::size_t i = 0; i < plane; ++i) {
                        std::size_t idx = c * plane + i;
                        out.data[idx] =
                            bn_apply(spec.bn_scale[c], spec.bn_bias[c], in.data[idx]);
                    }
                }
            } else {
                for (std::size_t i = 0; i < in.numel(); ++i) {
                    out.data[i] = bn_apply(spec.bn_scale[i], spec.bn_bias[i], in.data[i]);
                }
            }
            return out;
        }
        case LayerKind::Relu: {
            Tensor out(out_shape);
            for (std::size_t i = 0; i < in.numel(); ++i) {
                out.data[i] = in.data[i] > 0.0f ? in.data[i] : 0.0f;
            }
            return out;
        }
        case LayerKind::Encode:
            return encoded_forward(in, spec.codebook);
    }
    throw ShapeError("unknown layer kind");
}

/// Activation record of one forward pass: acts[0] is the network input,
/// acts[l + 1] the output of layer l.
struct ForwardTrace {
    std::vector<Tensor> acts;
};

inline void check_input_shape(const NetworkSpec& net, const Tensor& input) {
    if (input.shape != net.input_shape) {
        throw ShapeError("input shape " + shape_string(input.shape) +
                         " does not match network input " +
                         shape_string(net.input_shape));
    }
}

inline ForwardTrace forward_trace(const NetworkSpec& net, const Params& params,
                                  const Tensor& input) {
    check_input_shape(net, input);
    if (params.size() != net.layers.size()) {
        throw ShapeError("params has " + std::to_string(params.size()) +
                         " entries for " + std::to_string(net.layers.size()) +
                         " layers");
    }
    ForwardTrace trace;
    trace.acts.reserve(net.layers.size() + 1);
    trace.acts.push_back(input);
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        trace.acts.push_back(apply_layer(net.layers[l], params[l], trace.acts.back(),
                                         static_cast<int>(l)));
    }
    return trace;
}

inline Tensor infer(const NetworkSpec& net, const Params& params, const Tensor& input) {
    check_input_shape(net, input);
    if (params.size() != net.layers.size()) {
        throw ShapeError("params has " + std::to_string(params.size()) +
                         " entries for " + std::to_string(net.layers.size()) +
                         " layers");
    }
    Tensor cur = input;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        cur = apply_layer(net.layers[l], params[l], cur, static_cast<int>(l));
    }
    return cur;
}

/// Per-layer parameter gradients plus, for encode layers, the gradient with
/// respect to the codebook entries.
struct Gradients {
    Params param_grads;                             // same shapes as params
    std::vector<std::vector<float>> codebook_grads; // per layer; empty unless encode
    Tensor input_grad;
};

inline Gradients backprop(const NetworkSpec& net, const Params& params,
                          const ForwardTrace& trace, const Tensor& loss_grad) {
    const std::size_t n_layers = net.layers.size();
    if (trace.acts.size() != n_layers + 1) {
        throw std::invalid_argument(
            "backprop: forward trace missing or does not match the network");
    }
    if (loss_grad.shape != trace.acts.back().shape) {
        throw ShapeError("backprop: loss gradient shape " +
                         shape_string(loss_grad.shape) +
                         " does not match network output " +
                         shape_string(trace.acts.back().shape));
    }

    Gradients g;
    g.param_grads.resize(n_layers);
    g.codebook_grads.resize(n_layers);

    Tensor delta = loss_grad;
    for (std::size_t li = n_layers; li-- > 0;) {
        const LayerSpec& spec = net.layers[li];
        const Tensor& in = trace.acts[li];
        const Tensor& out = trace.acts[li + 1];
        const int index = static_cast<int>(li);
        switch (spec.kind) {
            case LayerKind::Conv: {
                ConvGeometry geo = conv_geometry(spec, in.shape);
                detail::check_conv_params(spec, params[li], geo, index);
                const int fold = geo.fold();
                Tensor gw(params[li].weight.shape);
                Tensor gb = params[li].bias.data.empty()
                                ? Tensor()
                                : Tensor(params[li].bias.shape);
                Tensor gin(in.shape);
                std::vector<float> win(fold);
                const float* w = params[li].weight.data.data();
                for (int oy = 0; oy < geo.out_h; ++oy) {
                    for (int ox = 0; ox < geo.out_w; ++ox) {
                        gather_window(in.data.data(), geo, oy, ox, 0.0f, win.data());
                        for (int oc = 0; oc < spec.out_channels; ++oc) {
                            float d = delta.data[chw_index(oc, oy, ox, geo.out_h,
                                                           geo.out_w)];
                            if (d == 0.0f) continue;
                            float* gw_row =
                                gw.data.data() + static_cast<std::size_t>(oc) * fold;
                            const float* w_row =
                                w + static_cast<std::size_t>(oc) * fold;
                            int i = 0;
                            for (int c = 0; c < geo.in_c; ++c) {
                                for (int ky = 0; ky < geo.k_h; ++ky) {
                                    int iy = oy * geo.stride - geo.pad + ky;
                                    for (int kx = 0; kx < geo.k_w; ++kx, ++i) {
                                        int ix = ox * geo.stride - geo.pad + kx;
                                        gw_row[i] += d * win[i];
                                        if (iy >= 0 && iy < geo.in_h && ix >= 0 &&
                                            ix < geo.in_w) {
                                            gin.data[chw_index(c, iy, ix, geo.in_h,
                                                               geo.in_w)] +=
                                                d * w_row[i];
                                        }
                                    }
                                }
                            }
                            if (!gb.data.empty()) gb.data[oc] += d;
                        }
                    }
                }
                g.param_grads[li] = {std::move(gw), std::move(gb)};
                delta = std::move(gin);
                break;
            }
            case LayerKind::Fc: {
                detail::check_fc_params(spec, params[li], in.numel(), index);
                const std::size_t n = in.numel();
                Tensor gw(params[li].weight.shape);
                Tensor gb = params[li].bias.data.empty()
                                ? Tensor()
                                : Tensor(params[li].bias.shape);
                Tensor gin(in.shape);
                const float* w = params[li].weight.data.data();
                for (int o = 0; o < spec.out_features; ++o) {
                    float d = delta.data[o];
                    float* gw_row = gw.data.data() + static_cast<std::size_t>(o) * n;
                    const float* w_row = w + static_cast<std::size_t>(o) * n;
                    for (std::size_t i = 0; i < n; ++i) {
                        gw_row[i] += d * in.data[i];
                        gin.data[i] += d * w_row[i];
                    }
                    if (!gb.data.empty()) gb.data[o] += d;
                }
                g.param_grads[li] = {std::move(gw), std::move(gb)};
                delta = std::move(gin);
                break;
            }
            case LayerKind::MaxPool: {
                Tensor gin(in.shape);
                const int ch = in.shape[0], h = in.shape[1], w = in.shape[2];
                const int oh = out.shape[1], ow = out.shape[2];
                for (int c = 0; c < ch; ++c) {
                    for (int oy = 0; oy < oh; ++oy) {
                        for (int ox = 0; ox < ow; ++ox) {
                            // route to the first maximum in window scan order
                            float best = -std::numeric_limits<float>::infinity();
                            int by = 0, bx = 0;
                            for (int ky = 0; ky < spec.pool_h; ++ky) {
                                for (int kx = 0; kx < spec.pool_w; ++kx) {
                                    int iy = oy * spec.pool_stride + ky;
                                    int ix = ox * spec.pool_stride + kx;
                                    float v = in.data[chw_index(c, iy, ix, h, w)];
                                    if (v > best) {
                                        best = v;
                                        by = iy;
                                        bx = ix;
                                    }
                                }
                            }
                            gin.data[chw_index(c, by, bx, h, w)] +=
                                delta.data[chw_index(c, oy, ox, oh, ow)];
                        }
                    }
                }
                delta = std::move(gin);
                break;
            }
            case LayerKind::BatchNorm: {
                Tensor gin(in.shape);
                if (in.shape.size() == 3) {
                    const int ch = in.shape[0];
                    const std::size_t plane = in.numel() / ch;
                    for (int c = 0; c < ch; ++c) {
                        for (std::size_t i = 0; i < plane; ++i) {
                            std::size_t idx = c * plane + i;
                            gin.data[idx] = spec.bn_scale[c] * delta.data[idx];
                        }
                    }
                } else {
                    for (std::size_t i = 0; i < in.numel(); ++i) {
                        gin.data[i] = spec.bn_scale[i] * delta.data[i];
                    }
                }
                delta = std::move(gin);
                break;
            }
            case LayerKind::Relu: {
                Tensor gin(in.shape);
                for (std::size_t i = 0; i < in.numel(); ++i) {
                    gin.data[i] = in.data[i] > 0.0f ? delta.data[i] : 0.0f;
                }
                delta = std::move(gin);
                break;
            }
            case LayerKind::Encode: {
                g.codebook_grads[li] = codebook_gradient(delta, out, spec.codebook);
                delta = encoded_backward_input(delta, in, spec.codebook);
                break;
            }
        }
    }
    g.input_grad = std::move(delta);
    return g;
}

inline int argmax_class(const Tensor& logits) {
    int best = 0;
    for (std::size_t i = 1; i < logits.numel(); ++i) {
        if (logits.data[i] > logits.data[best]) best = static_cast<int>(i);
    }
    return best;
}

/// Fraction of the first n samples classified correctly; argmax ties go to
/// the lowest class index.
inline double accuracy(const NetworkSpec& net, const Params& params,
                       const std::vector<Tensor>& inputs,
                       const std::vector<int>& labels, std::size_t n) {
    if (inputs.empty() || labels.empty()) {
        throw std::invalid_argument("accuracy: empty dataset");
    }
    if (n > inputs.size() || n > labels.size()) {
        throw std::invalid_argument("accuracy: n exceeds dataset size");
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (argmax_class(infer(net, params, inputs[i])) == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

/// Collects the strictly positive values a layer emits over a sample batch.
inline std::vector<float> capture_positive_activations(
    const NetworkSpec& net, const Params& params,
    const std::vector<Tensor>& samples, int layer) {
    std::vector<float> positives;
    for (const Tensor& x : samples) {
        Tensor cur = x;
        for (int l = 0; l <= layer; ++l) {
            cur = apply_layer(net.layers[l], params[l], cur, l);
        }
        for (float v : cur.data) {
            if (v > 0.0f) positives.push_back(v);
        }
    }
    return positives;
}

/// Activation codebook for a ReLU layer: cluster the nonzero layer outputs
/// over a subsampled batch into K-1 centers and anchor the codebook at 0.
inline Codebook build_activation_codebook(const std::vector<Tensor>& samples,
                                          const NetworkSpec& net,
                                          const Params& params, int layer, int k,
                                          uint64_t seed, bool* all_zero = nullptr) {
    if (samples.empty()) {
        throw std::invalid_argument("build_activation_codebook: empty sample batch");
    }
    if (layer < 0 || layer >= static_cast<int>(net.layers.size()) ||
        net.layers[layer].kind != LayerKind::Relu) {
        throw std::invalid_argument(
            "build_activation_codebook: layer must be a relu layer");
    }
    std::vector<float> positives =
        capture_positive_activations(net, params, samples, layer);
    return codebook_from_positive_samples(positives, k, seed, all_zero);
}

} // namespace codenn
