#pragma once

#include <algorithm>
#include <vector>

#include "codenn/codebook.hpp"
#include "codenn/tensor.hpp"

namespace codenn {

/// Elementwise nearest-neighbor quantization: every output value is a
/// codebook entry.
inline Tensor encoded_forward(const Tensor& y, const Codebook& cb) {
    if (cb.empty()) throw std::invalid_argument("encoded_forward: empty codebook");
    Tensor out(y.shape);
    for (std::size_t i = 0; i < y.numel(); ++i) {
        out.data[i] = cb.values[encode_value(y.data[i], cb)];
    }
    return out;
}

/// Backward rule for the quantizer input: the upstream gradient passes
/// through unchanged where the pre-encoding value lies strictly between the
/// smallest and largest codebook entries, and is zeroed elsewhere.
inline Tensor encoded_backward_input(const Tensor& grad_out, const Tensor& y,
                                     const Codebook& cb) {
    if (grad_out.shape != y.shape) {
        throw ShapeError("encoded_backward_input: gradient shape " +
                         shape_string(grad_out.shape) + " does not match input " +
                         shape_string(y.shape));
    }
    const float lo = cb.min_value();
    const float hi = cb.max_value();
    Tensor out(y.shape);
    for (std::size_t i = 0; i < y.numel(); ++i) {
        out.data[i] = (lo < y.data[i] && y.data[i] < hi) ? grad_out.data[i] : 0.0f;
    }
    return out;
}

/// Gradient with respect to the codebook entries: each quantized output
/// contributes its upstream gradient to exactly the entry it equals.
inline std::vector<float> codebook_gradient(const Tensor& grad_out,
                                            const Tensor& y_star,
                                            const Codebook& cb) {
    if (grad_out.shape != y_star.shape) {
        throw ShapeError("codebook_gradient: shape mismatch");
    }
    std::vector<float> grad(cb.size(), 0.0f);
    const auto& c = cb.values;
    for (std::size_t i = 0; i < y_star.numel(); ++i) {
        auto it = std::lower_bound(c.begin(), c.end(), y_star.data[i]);
        if (it == c.end() || *it != y_star.data[i]) {
            throw std::invalid_argument(
                "codebook_gradient: value not present in codebook; inputs must "
                "come from encoded_forward");
        }
        grad[static_cast<std::size_t>(it - c.begin())] += grad_out.data[i];
    }
    return grad;
}

/// Pools the dense weight gradient per cluster: entry k accumulates the
/// gradients of every weight position assigned to codebook entry k. This is
/// the exact derivative of the shared-weight parameterization, and drives
/// codebook-only weight updates while assignments stay frozen.
inline std::vector<float> weight_codebook_gradient(const Tensor& grad_w,
                                                   const EncodedTensor& enc,
                                                   std::size_t codebook_size) {
    if (grad_w.shape != enc.shape) {
        throw ShapeError("weight_codebook_gradient: gradient shape " +
                         shape_string(grad_w.shape) +
                         " does not match encoded weights " +
                         shape_string(enc.shape));
    }
    std::vector<float> grad(codebook_size, 0.0f);
    for (std::size_t i = 0; i < enc.numel(); ++i) {
        if (enc.indices[i] >= codebook_size) {
            throw std::out_of_range("weight_codebook_gradient: index out of range");
        }
        grad[enc.indices[i]] += grad_w.data[i];
    }
    return grad;
}

} // namespace codenn
