#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "codenn/model.hpp"
#include "codenn/training.hpp"

namespace codenn {

constexpr int kFloatBits = 32;

/// Per-layer encoding bitwidths: act_bits is indexed over encode layers in
/// network order, weight_bits over conv/fc layers. A weight entry of 32
/// means the layer still holds raw float weights.
struct BitwidthConfig {
    std::vector<int> act_bits;
    std::vector<int> weight_bits;

    bool operator==(const BitwidthConfig&) const = default;
};

inline BitwidthConfig current_config(const Model& m) {
    BitwidthConfig cfg;
    for (int l : encode_layer_indices(m.net)) {
        cfg.act_bits.push_back(m.net.layers[l].enc_bits);
    }
    for (int l : weight_layer_indices(m.net)) {
        bool enc = static_cast<std::size_t>(l) < m.enc_weights.size() &&
                   m.enc_weights[l].has_value();
        cfg.weight_bits.push_back(enc ? m.enc_weights[l]->bits : kFloatBits);
    }
    return cfg;
}

/// Storage model in bits: every weight matrix at its index bitwidth plus a
/// 2^b-entry float32 codebook, and one output feature map of streaming
/// buffer per encode layer at its index bitwidth plus its codebook.
/// Unencoded weight layers (bits = 32) count as raw floats with no codebook.
inline uint64_t memory_footprint(const Model& m, const BitwidthConfig& cfg) {
    std::vector<int> wl = weight_layer_indices(m.net);
    std::vector<int> el = encode_layer_indices(m.net);
    if (cfg.weight_bits.size() != wl.size() || cfg.act_bits.size() != el.size()) {
        throw std::invalid_argument("memory_footprint: config does not match network");
    }
    auto shapes = layer_shapes(m.net);
    uint64_t total = 0;
    for (std::size_t i = 0; i < wl.size(); ++i) {
        int l = wl[i];
        uint64_t count = m.enc_weights[l].has_value()
                             ? m.enc_weights[l]->indices.numel()
                             : m.params[l].weight.numel();
        int b = cfg.weight_bits[i];
        if (b < 1) throw std::invalid_argument("memory_footprint: bits must be >= 1");
        if (b >= kFloatBits) {
            total += count * kFloatBits;
        } else {
            total += count * static_cast<uint64_t>(b) +
                     (uint64_t{1} << b) * 32;
        }
    }
    for (std::size_t i = 0; i < el.size(); ++i) {
        int l = el[i];
        uint64_t elems = Tensor::numel_of(shapes[l]);
        int b = cfg.act_bits[i];
        if (b < 1 || b >= kFloatBits) {
            throw std::invalid_argument("memory_footprint: activation bits out of range");
        }
        total += elems * static_cast<uint64_t>(b) + (uint64_t{1} << b) * 32;
    }
    return total;
}

enum class SearchMode { Activations, Weights };

struct SearchStep {
    int iteration = 0;  // 1-based
    int layer = -1;     // network layer index
    int ordinal = -1;   // index into the mode's bit vector
    int new_bits = 0;
    uint64_t delta_mem_bits = 0;
    double delta_acc = 0.0;
    double reward = 0.0;
    BitwidthConfig config;
    uint64_t total_mem_bits = 0;
    double val_acc = 0.0;
};

struct SearchTrajectory {
    BitwidthConfig init_config;
    uint64_t init_mem_bits = 0;
    double init_acc = 0.0;
    std::vector<SearchStep> steps;
    std::string diagnostic;
};

struct CustomizeOptions {
    double acc_threshold = 0.0;    // stop once the best candidate falls below
    std::size_t val_count = 1000;
    uint64_t seed = 42;
    bool delta_vs_initial = false; // accuracy drops vs initial instead of current
    double epsilon = 1e-4;         // reward denominator floor
};

/// Deterministic rebuilds used both by the search and by config re-application.
inline Codebook rebuild_act_codebook(const std::vector<float>& positives, int bits,
                                     int net_layer, uint64_t seed) {
    return codebook_from_positive_samples(positives, 1 << bits,
                                          seed + static_cast<uint64_t>(net_layer));
}

inline EncodedWeights rebuild_weight_encoding(const Tensor& master, int bits,
                                              int net_layer, uint64_t seed) {
    auto [cb, enc] =
        encode_weights(master, 1 << bits, seed + static_cast<uint64_t>(net_layer));
    return EncodedWeights{std::move(cb), std::move(enc), bits};
}

/// Pre-encoding activation values (positives only) feeding each encode
/// layer, captured once per search phase and reused for every re-cluster.
struct ActSampleCache {
    std::vector<std::vector<float>> positives;  // per encode-layer ordinal
};

inline ActSampleCache capture_encode_inputs(const Model& m,
                                            const std::vector<Tensor>& samples) {
    ActSampleCache cache;
    Params eff = effective_params(m);
    for (int l : encode_layer_indices(m.net)) {
        if (l == 0) {
            throw std::invalid_argument("encode layer cannot be the first layer");
        }
        cache.positives.push_back(
            capture_positive_activations(m.net, eff, samples, l - 1));
    }
    return cache;
}

/// Rolls the model's activation codebooks to a trajectory configuration.
/// Layers still at their entry bitwidth get their entry codebook back;
/// layers the search reduced are rebuilt from the phase's sample cache,
/// which reproduces the exact candidate the trajectory committed.
inline void apply_act_config(Model& m, const std::vector<int>& act_bits,
                             const std::vector<int>& entry_bits,
                             const std::vector<Codebook>& entry_codebooks,
                             const ActSampleCache& cache, uint64_t seed) {
    std::vector<int> el = encode_layer_indices(m.net);
    for (std::size_t e = 0; e < el.size(); ++e) {
        int l = el[e];
        if (act_bits[e] == entry_bits[e]) {
            m.net.layers[l].codebook = entry_codebooks[e];
        } else {
            m.net.layers[l].codebook =
                rebuild_act_codebook(cache.positives[e], act_bits[e], l, seed);
        }
        m.net.layers[l].enc_bits = act_bits[e];
    }
}

inline void apply_weight_config(Model& m, const std::vector<int>& weight_bits,
                                uint64_t seed) {
    std::vector<int> wl = weight_layer_indices(m.net);
    for (std::size_t i = 0; i < wl.size(); ++i) {
        int l = wl[i];
        if (weight_bits[i] >= kFloatBits) {
            m.enc_weights[l].reset();
        } else {
            m.enc_weights[l] =
                rebuild_weight_encoding(m.params[l].weight, weight_bits[i], l, seed);
        }
    }
}

/// Greedy diminishing bitwidth search. Every iteration enumerates, for each
/// encodable layer l, the candidate bitwidths 1..b_l-1, rebuilds only that
/// layer's codebook, and scores the candidate by memory saved over accuracy
/// lost (floored at epsilon). The best candidate is committed and the loop
/// repeats until the best candidate's absolute accuracy falls below the
/// threshold or no candidate remains. No retraining happens inside the loop.
/// The model is left at the last committed configuration.
inline SearchTrajectory customize(Model& m, SearchMode mode,
                                  const std::vector<Tensor>& val_inputs,
                                  const std::vector<int>& val_labels,
                                  const ActSampleCache& act_cache,
                                  const CustomizeOptions& opt) {
    SearchTrajectory traj;
    traj.init_config = current_config(m);

    const std::size_t val_n = std::min(opt.val_count, val_inputs.size());
    if (val_n == 0) throw std::invalid_argument("customize: empty validation set");

    std::vector<int> target_layers = mode == SearchMode::Activations
                                         ? encode_layer_indices(m.net)
                                         : weight_layer_indices(m.net);
    if (mode == SearchMode::Activations &&
        act_cache.positives.size() != target_layers.size()) {
        throw std::invalid_argument("customize: activation sample cache missing");
    }
    if (mode == SearchMode::Weights) {
        for (int b : traj.init_config.weight_bits) {
            if (b >= kFloatBits) {
                throw std::invalid_argument(
                    "customize: weight search requires encoded weights");
            }
        }
    }

    BitwidthConfig cfg = traj.init_config;
    traj.init_mem_bits = memory_footprint(m, cfg);
    traj.init_acc = model_accuracy(m, val_inputs, val_labels, val_n);
    if (traj.init_acc < opt.acc_threshold) {
        traj.diagnostic = "initial accuracy " + std::to_string(traj.init_acc) +
                          " is already below threshold " +
                          std::to_string(opt.acc_threshold);
        return traj;
    }

    uint64_t cur_mem = traj.init_mem_bits;
    double cur_acc = traj.init_acc;

    for (int iteration = 1;; ++iteration) {
        struct Candidate {
            int ordinal, layer, bits;
            uint64_t mem;
            double acc, reward;
            Codebook act_cb;
            std::optional<EncodedWeights> weights;
        };
        std::optional<Candidate> best;

        std::vector<int>& bits_vec = mode == SearchMode::Activations
                                         ? cfg.act_bits
                                         : cfg.weight_bits;
        for (std::size_t ord = 0; ord < target_layers.size(); ++ord) {
            const int l = target_layers[ord];
            for (int b = 1; b < bits_vec[ord]; ++b) {
                Candidate cand;
                cand.ordinal = static_cast<int>(ord);
                cand.layer = l;
                cand.bits = b;

                BitwidthConfig trial = cfg;
                (mode == SearchMode::Activations ? trial.act_bits
                                                 : trial.weight_bits)[ord] = b;
                cand.mem = memory_footprint(m, trial);

                if (mode == SearchMode::Activations) {
                    cand.act_cb =
                        rebuild_act_codebook(act_cache.positives[ord], b, l, opt.seed);
                    Codebook saved = m.net.layers[l].codebook;
                    m.net.layers[l].codebook = cand.act_cb;
                    cand.acc = model_accuracy(m, val_inputs, val_labels, val_n);
                    m.net.layers[l].codebook = std::move(saved);
                } else {
                    cand.weights =
                        rebuild_weight_encoding(m.params[l].weight, b, l, opt.seed);
                    m.enc_weights[l].swap(cand.weights);
                    cand.acc = model_accuracy(m, val_inputs, val_labels, val_n);
                    m.enc_weights[l].swap(cand.weights);
                }

                const double ref_acc = opt.delta_vs_initial ? traj.init_acc : cur_acc;
                const double delta_acc = ref_acc - cand.acc;
                const uint64_t delta_mem = cur_mem - cand.mem;
                cand.reward = static_cast<double>(delta_mem) /
                              std::max(delta_acc, opt.epsilon);
                if (!best || cand.reward > best->reward) best = std::move(cand);
            }
        }

        if (!best) break;                         // all layers already at 1 bit
        if (best->acc < opt.acc_threshold) break; // taking it would cross the floor

        const double ref_acc = opt.delta_vs_initial ? traj.init_acc : cur_acc;
        SearchStep step;
        step.iteration = iteration;
        step.layer = best->layer;
        step.ordinal = best->ordinal;
        step.new_bits = best->bits;
        step.delta_mem_bits = cur_mem - best->mem;
        step.delta_acc = ref_acc - best->acc;
        step.reward = best->reward;

        if (mode == SearchMode::Activations) {
            m.net.layers[best->layer].codebook = std::move(best->act_cb);
            m.net.layers[best->layer].enc_bits = best->bits;
            cfg.act_bits[best->ordinal] = best->bits;
        } else {
            m.enc_weights[best->layer] = std::move(best->weights);
            cfg.weight_bits[best->ordinal] = best->bits;
        }
        cur_mem = best->mem;
        cur_acc = best->acc;
        step.config = cfg;
        step.total_mem_bits = cur_mem;
        step.val_acc = cur_acc;
        traj.steps.push_back(std::move(step));
    }
    return traj;
}

/// Lowest-memory trajectory entry whose validation accuracy still clears the
/// floor; falls back to the initial configuration.
inline BitwidthConfig select_config(const SearchTrajectory& traj, double floor) {
    for (std::size_t i = traj.steps.size(); i-- > 0;) {
        if (traj.steps[i].val_acc >= floor) return traj.steps[i].config;
    }
    return traj.init_config;
}

inline void write_trajectory_csv(const std::string& path,
                                 const SearchTrajectory& traj) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open for writing: " + path);
    out << "iteration,layer,new_bits,delta_mem_bits,delta_acc,reward,"
           "total_mem_bits,val_acc\n";
    out << "0,-1,-1,0,0,0," << traj.init_mem_bits << "," << traj.init_acc << "\n";
    for (const auto& s : traj.steps) {
        out << s.iteration << "," << s.layer << "," << s.new_bits << ","
            << s.delta_mem_bits << "," << s.delta_acc << "," << s.reward << ","
            << s.total_mem_bits << "," << s.val_acc << "\n";
    }
}

struct TwoPhaseOptions {
    int act_init_bits = 5;
    int conv_init_bits = 6;
    int fc_init_bits = 4;
    double select_floor = 0.0;
    int sample_count = 10;  // inputs used for activation capture
    CustomizeOptions search;
    FineTuneOptions finetune;
};

struct TwoPhaseResult {
    SearchTrajectory act_trajectory;
    SearchTrajectory weight_trajectory;
    BitwidthConfig act_config;
    BitwidthConfig weight_config;
    double float_acc = 0.0;
    double final_acc = 0.0;
};

/// Activation-first customization: encode activations, search their
/// bitwidths with weights kept at full precision, select and fine-tune; then
/// encode weights, search their bitwidths with activation bitwidths frozen,
/// select and fine-tune again.
inline TwoPhaseResult two_phase_customize(Model& m,
                                          const std::vector<Tensor>& train_x,
                                          const std::vector<int>& train_y,
                                          const std::vector<Tensor>& val_x,
                                          const std::vector<int>& val_y,
                                          const TwoPhaseOptions& opt) {
    TwoPhaseResult result;
    const std::size_t val_n = std::min(opt.search.val_count, val_x.size());
    result.float_acc = model_accuracy(m, val_x, val_y, val_n);

    std::vector<Tensor> samples(
        train_x.begin(),
        train_x.begin() + std::min<std::size_t>(opt.sample_count, train_x.size()));

    // Phase 1: activations.
    encode_model_activations(m, samples, opt.act_init_bits, opt.search.seed);
    std::vector<Codebook> entry_codebooks;
    for (int l : encode_layer_indices(m.net)) {
        entry_codebooks.push_back(m.net.layers[l].codebook);
    }
    ActSampleCache cache = capture_encode_inputs(m, samples);
    result.act_trajectory =
        customize(m, SearchMode::Activations, val_x, val_y, cache, opt.search);
    result.act_config = select_config(result.act_trajectory, opt.select_floor);
    apply_act_config(m, result.act_config.act_bits,
                     result.act_trajectory.init_config.act_bits, entry_codebooks,
                     cache, opt.search.seed);
    fine_tune(m, train_x, train_y, opt.finetune);

    // Phase 2: weights, activation bitwidths unchanged.
    encode_model_weights(m, opt.conv_init_bits, opt.fc_init_bits, opt.search.seed);
    ActSampleCache unused;
    result.weight_trajectory =
        customize(m, SearchMode::Weights, val_x, val_y, unused, opt.search);
    result.weight_config = select_config(result.weight_trajectory, opt.select_floor);
    apply_weight_config(m, result.weight_config.weight_bits, opt.search.seed);
    FineTuneOptions ft2 = opt.finetune;
    ft2.seed = opt.finetune.seed + 1;
    fine_tune(m, train_x, train_y, ft2);

    result.final_acc = model_accuracy(m, val_x, val_y, val_n);
    return result;
}

} // namespace codenn
