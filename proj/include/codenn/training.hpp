#pragma once

#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "codenn/model.hpp"

namespace codenn {

/// Softmax cross-entropy; returns the loss and fills grad with
/// softmax(logits) - onehot(label).
inline double cross_entropy(const Tensor& logits, int label, Tensor& grad) {
    grad = Tensor(logits.shape);
    double maxv = -std::numeric_limits<double>::infinity();
    for (float v : logits.data) maxv = std::max(maxv, static_cast<double>(v));
    double denom = 0.0;
    for (float v : logits.data) denom += std::exp(static_cast<double>(v) - maxv);
    double loss = 0.0;
    for (std::size_t i = 0; i < logits.numel(); ++i) {
        double p = std::exp(static_cast<double>(logits.data[i]) - maxv) / denom;
        grad.data[i] = static_cast<float>(p);
        if (static_cast<int>(i) == label) {
            loss = -(static_cast<double>(logits.data[i]) - maxv - std::log(denom));
            grad.data[i] = static_cast<float>(p - 1.0);
        }
    }
    return loss;
}

struct FineTuneOptions {
    double epochs = 10.0;  // may be fractional; floor(epochs * steps_per_epoch) steps
    float lr = 0.01f;
    int batch = 32;
    uint64_t seed = 42;
};

struct FineTuneResult {
    std::size_t steps = 0;
    double final_loss = 0.0;
};

namespace detail {

inline void check_codebook_order(const Codebook& cb, const std::string& what) {
    if (!cb.strictly_ascending()) {
        throw DivergenceError("fine_tune: " + what +
                              " codebook lost its ascending order; entries are "
                              "never re-sorted, aborting");
    }
}

} // namespace detail

/// Restores ascending order after weight-codebook entries drifted past each
/// other during training. Values are sorted and the stored indices remapped
/// through the same permutation (exact duplicates merge), so every decoded
/// weight is preserved bit-exactly and the cluster partition stays frozen.
inline void canonicalize_weight_codebook(EncodedWeights& ew) {
    if (ew.codebook.strictly_ascending()) return;
    const std::size_t k = ew.codebook.values.size();
    std::vector<uint32_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](uint32_t a, uint32_t b) {
        return ew.codebook.values[a] < ew.codebook.values[b];
    });
    std::vector<uint32_t> rank_of(k);
    std::vector<float> sorted(k);
    for (std::size_t rank = 0; rank < k; ++rank) {
        sorted[rank] = ew.codebook.values[order[rank]];
        rank_of[order[rank]] = static_cast<uint32_t>(rank);
    }
    std::vector<uint32_t> merged_rank(k);
    std::vector<float> unique_vals;
    for (std::size_t rank = 0; rank < k; ++rank) {
        if (unique_vals.empty() || sorted[rank] != unique_vals.back()) {
            unique_vals.push_back(sorted[rank]);
        }
        merged_rank[rank] = static_cast<uint32_t>(unique_vals.size() - 1);
    }
    for (auto& idx : ew.indices.indices) idx = merged_rank[rank_of[idx]];
    ew.codebook.values = std::move(unique_vals);
    ew.codebook.refresh_bitwidth();
}

/// Minibatch SGD over softmax cross-entropy. Float weights and biases take
/// plain gradient steps. Encoded weight layers update codebook entries only,
/// from the per-cluster pooled gradient, with assignments frozen. Activation
/// codebooks update from their entry gradients; the 0 anchor of zero-anchored
/// codebooks is pinned and never moves. Codebooks are checked after every
/// step to still be strictly ascending.
inline FineTuneResult fine_tune(Model& m, const std::vector<Tensor>& inputs,
                                const std::vector<int>& labels,
                                const FineTuneOptions& opt) {
    if (inputs.empty() || inputs.size() != labels.size()) {
        throw std::invalid_argument("fine_tune: bad training set");
    }
    if (opt.batch < 1) throw std::invalid_argument("fine_tune: batch must be >= 1");
    m.sync_slots();

    const std::size_t n = inputs.size();
    const std::size_t steps_per_epoch =
        std::max<std::size_t>(1, n / static_cast<std::size_t>(opt.batch));
    const std::size_t total_steps =
        static_cast<std::size_t>(opt.epochs * static_cast<double>(steps_per_epoch));

    std::mt19937_64 rng(opt.seed);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    FineTuneResult result;
    const std::size_t n_layers = m.net.layers.size();

    for (std::size_t step = 0; step < total_steps; ++step) {
        if (step % steps_per_epoch == 0) {
            std::shuffle(order.begin(), order.end(), rng);
        }
        const std::size_t base = (step % steps_per_epoch) * opt.batch;
        const std::size_t take = std::min<std::size_t>(opt.batch, n - base);

        Params eff = effective_params(m);
        Params grad_sum(n_layers);
        for (std::size_t l = 0; l < n_layers; ++l) {
            if (eff[l].weight.numel()) grad_sum[l].weight = Tensor(eff[l].weight.shape);
            if (eff[l].bias.numel()) grad_sum[l].bias = Tensor(eff[l].bias.shape);
        }
        std::vector<std::vector<float>> cb_grad_sum(n_layers);
        for (std::size_t l = 0; l < n_layers; ++l) {
            if (m.net.layers[l].kind == LayerKind::Encode) {
                cb_grad_sum[l].assign(m.net.layers[l].codebook.size(), 0.0f);
            }
        }

        double batch_loss = 0.0;
        for (std::size_t bi = 0; bi < take; ++bi) {
            const std::size_t idx = order[base + bi];
            ForwardTrace trace = forward_trace(m.net, eff, inputs[idx]);
            Tensor loss_grad;
            batch_loss += cross_entropy(trace.acts.back(), labels[idx], loss_grad);
            Gradients g = backprop(m.net, eff, trace, loss_grad);
            for (std::size_t l = 0; l < n_layers; ++l) {
                for (std::size_t i = 0; i < grad_sum[l].weight.numel(); ++i) {
                    grad_sum[l].weight.data[i] += g.param_grads[l].weight.data[i];
                }
                for (std::size_t i = 0; i < grad_sum[l].bias.numel(); ++i) {
                    grad_sum[l].bias.data[i] += g.param_grads[l].bias.data[i];
                }
                for (std::size_t i = 0; i < cb_grad_sum[l].size(); ++i) {
                    cb_grad_sum[l][i] += g.codebook_grads[l][i];
                }
            }
        }
        batch_loss /= static_cast<double>(take);
        if (!std::isfinite(batch_loss)) {
            throw DivergenceError("fine_tune: loss became non-finite at step " +
                                  std::to_string(step) + " (lr=" +
                                  std::to_string(opt.lr) + ")");
        }
        result.final_loss = batch_loss;

        const float scale = opt.lr / static_cast<float>(take);
        for (std::size_t l = 0; l < n_layers; ++l) {
            LayerSpec& spec = m.net.layers[l];
            if (spec.kind == LayerKind::Conv || spec.kind == LayerKind::Fc) {
                if (m.enc_weights[l].has_value()) {
                    EncodedWeights& ew = *m.enc_weights[l];
                    std::vector<float> pooled = weight_codebook_gradient(
                        grad_sum[l].weight, ew.indices, ew.codebook.size());
                    for (std::size_t k = 0; k < pooled.size(); ++k) {
                        ew.codebook.values[k] -= scale * pooled[k];
                    }
                } else {
                    for (std::size_t i = 0; i < m.params[l].weight.numel(); ++i) {
                        m.params[l].weight.data[i] -= scale * grad_sum[l].weight.data[i];
                    }
                }
                for (std::size_t i = 0; i < m.params[l].bias.numel(); ++i) {
                    m.params[l].bias.data[i] -= scale * grad_sum[l].bias.data[i];
                }
            } else if (spec.kind == LayerKind::Encode) {
                for (std::size_t k = 0; k < cb_grad_sum[l].size(); ++k) {
                    if (spec.codebook.zero_anchored && k == 0) continue;  // pinned
                    spec.codebook.values[k] -= scale * cb_grad_sum[l][k];
                }
                detail::check_codebook_order(spec.codebook, "activation");
            }
        }
        ++result.steps;
    }
    for (auto& ew : m.enc_weights) {
        if (ew.has_value()) canonicalize_weight_codebook(*ew);
    }
    return result;
}

} // namespace codenn
