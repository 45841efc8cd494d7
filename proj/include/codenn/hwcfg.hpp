#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "codenn/bitwidth.hpp"
#include "codenn/model.hpp"

namespace codenn {

struct PlatformBudget {
    std::string name;
    int bram = 0;
    int dsp = 0;
    long long ff = 0;
    long long lut = 0;
    int bram_bits_per_block = 18432;  // 18Kb blocks
};

inline std::vector<PlatformBudget> builtin_platforms() {
    return {
        {"VCU108", 3456, 768, 1075200, 537600, 18432},
        {"ZC702", 280, 220, 106400, 53200, 18432},
        {"XC7S50", 120, 150, 65200, 32600, 18432},
    };
}

inline PlatformBudget find_platform(const std::string& name) {
    for (const auto& p : builtin_platforms()) {
        if (p.name == name) return p;
    }
    throw ParseError("unknown platform '" + name + "'");
}

enum class StageKind { Mvau, Mpu };

/// One pipeline stage of the streaming accelerator. Conv and fc layers map
/// to MVAU stages (decode, matrix-vector product, batch-norm, encode);
/// max-pool layers map to MPU stages operating directly on stream words.
struct StageConfig {
    StageKind kind = StageKind::Mvau;
    std::string name;
    int net_layer = -1;  // producing layer in the folded network

    bool input_encoded = false;
    Codebook input_cb;
    bool output_encoded = false;
    Codebook output_cb;
    int out_word_bits = 32;
    std::vector<int> out_shape;

    // mvau
    int out = 0;
    int in_fold = 0;
    int windows = 1;
    int pe = 1, simd = 1;
    Codebook weight_cb;
    EncodedTensor weight_idx;  // shape {out, in_fold}
    int weight_bits = 0;
    std::vector<float> out_scale, out_bias;  // folded batch-norm per output
    bool apply_relu = false;
    bool is_conv = false;
    ConvGeometry geo;

    // mpu
    int ch = 0, in_h = 0, in_w = 0;
    int pool = 0, pool_stride = 1;

    long long buffer_bits = 0;  // output streaming buffer, one frame deep
};

struct HardwareConfig {
    std::vector<StageConfig> stages;
    PlatformBudget platform;
    double clock_mhz = 152.0;
    bool fixed_point_acts = false;
    int fixed_act_bits = 8;
    uint64_t seed = 42;
    std::vector<int> input_shape;
    int classes = 0;
};

inline void check_divisibility(const StageConfig& s) {
    if (s.kind != StageKind::Mvau) return;
    if (s.pe < 1 || s.simd < 1 || s.out % s.pe != 0 || s.in_fold % s.simd != 0) {
        throw ShapeError("stage '" + s.name + "': PE=" + std::to_string(s.pe) +
                         " SIMD=" + std::to_string(s.simd) +
                         " must divide out=" + std::to_string(s.out) +
                         " and fold=" + std::to_string(s.in_fold));
    }
}

// ---------------------------------------------------------------------------
// Cycle model. Per window, the MVAU spends
//   ID  = fold/SIMD decode beats (0 when the input stream is raw),
//   VDP = (out/PE) * (fold/SIMD) multiply-accumulate beats,
//   OE  = (out/PE) * ceil(log2 K) binary-search encode beats
//         ((out/PE) plain write beats when the output is raw),
// and the three phases overlap, so a stage costs windows * max(ID, VDP, OE)
// cycles per frame. An MPU consumes one input word per cycle.
// ---------------------------------------------------------------------------

struct StageCycles {
    long long id = 0, vdp = 0, oe = 0;

    long long per_window() const { return std::max(id, std::max(vdp, oe)); }
};

inline StageCycles mvau_window_cycles(const StageConfig& s) {
    check_divisibility(s);
    StageCycles c;
    c.id = s.input_encoded ? s.in_fold / s.simd : 0;
    c.vdp = static_cast<long long>(s.out / s.pe) * (s.in_fold / s.simd);
    c.oe = s.output_encoded
               ? static_cast<long long>(s.out / s.pe) *
                     ceil_log2(s.output_cb.size())
               : static_cast<long long>(s.out / s.pe);
    return c;
}

inline long long stage_frame_cycles(const StageConfig& s) {
    if (s.kind == StageKind::Mpu) {
        return static_cast<long long>(s.ch) * s.in_h * s.in_w;
    }
    return static_cast<long long>(s.windows) * mvau_window_cycles(s).per_window();
}

/// Completion time of the last frame under layer-granular pipelining: a
/// stage starts frame f once it finished frame f-1 and its producer finished
/// frame f. With constant per-frame stage costs this equals
/// sum(costs) + (frames - 1) * max(costs).
inline long long pipeline_makespan(const std::vector<long long>& stage_costs,
                                   long long frames) {
    std::vector<long long> prev_done(stage_costs.size(), 0);
    for (long long f = 0; f < frames; ++f) {
        long long upstream = 0;
        for (std::size_t s = 0; s < stage_costs.size(); ++s) {
            long long start = std::max(upstream, prev_done[s]);
            prev_done[s] = start + stage_costs[s];
            upstream = prev_done[s];
        }
    }
    return prev_done.empty() ? 0 : prev_done.back();
}

// ---------------------------------------------------------------------------
// Resource model. DSP counts one MAC lane per slice: PE*SIMD per MVAU, none
// for pooling. BRAM sums, per stage, the packed weight indices, the weight
// codebook replicated per PE, input/output codebooks, the folded scale/bias
// pair per output, and the output stream buffer, rounded up to 18Kb blocks.
// FF/LUT are admitted linear proxies (real values require synthesis):
//   ff  = PE*SIMD*64 + PE*128 per MVAU stage
//   lut = PE*SIMD*(weight bits + input word bits)*4 + PE*64 per MVAU stage
// ---------------------------------------------------------------------------

struct ResourceEstimate {
    long long bram = 0;
    long long dsp = 0;
    long long ff_proxy = 0;
    long long lut_proxy = 0;

    bool fits(const PlatformBudget& p) const {
        return bram <= p.bram && dsp <= p.dsp && ff_proxy <= p.ff &&
               lut_proxy <= p.lut;
    }
};

inline long long bram_blocks_for_bits(long long bits, int bits_per_block) {
    return (bits + bits_per_block - 1) / bits_per_block;
}

inline long long stage_memory_bits(const StageConfig& s) {
    if (s.kind == StageKind::Mpu) return s.buffer_bits;
    long long bits = static_cast<long long>(s.out) * s.in_fold * s.weight_bits;
    bits += static_cast<long long>(s.pe) * s.weight_cb.size() * 32;
    if (s.input_encoded) bits += static_cast<long long>(s.input_cb.size()) * 32;
    if (s.output_encoded) bits += static_cast<long long>(s.output_cb.size()) * 32;
    bits += static_cast<long long>(s.out) * 2 * 32;  // folded scale and bias
    bits += s.buffer_bits;
    return bits;
}

inline int stage_input_word_bits(const StageConfig& s) {
    if (s.input_encoded) return std::max(1, static_cast<int>(s.input_cb.bitwidth));
    return 32;
}

inline ResourceEstimate estimate_resources(const HardwareConfig& hw) {
    ResourceEstimate r;
    for (const auto& s : hw.stages) {
        r.bram += bram_blocks_for_bits(stage_memory_bits(s),
                                       hw.platform.bram_bits_per_block);
        if (s.kind == StageKind::Mvau) {
            check_divisibility(s);
            r.dsp += static_cast<long long>(s.pe) * s.simd;
            r.ff_proxy += static_cast<long long>(s.pe) * s.simd * 64 +
                          static_cast<long long>(s.pe) * 128;
            r.lut_proxy += static_cast<long long>(s.pe) * s.simd *
                               (s.weight_bits + stage_input_word_bits(s)) * 4 +
                           static_cast<long long>(s.pe) * 64;
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// Parallelism selection: minimize the steady-state initiation interval
// (the largest per-stage frame cost) subject to the platform budget, over
// divisor pairs (PE | out, SIMD | fold) per MVAU stage.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<int> divisors(int n) {
    std::vector<int> d;
    for (int i = 1; i <= n; ++i) {
        if (n % i == 0) d.push_back(i);
    }
    return d;
}

struct AllocOption {
    int pe = 1, simd = 1;
    long long cycles = 0;  // frame cycles at this folding
    long long dsp = 0;
    long long bram = 0;    // blocks
};

inline std::vector<AllocOption> stage_alloc_options(const StageConfig& s,
                                                    int bits_per_block) {
    std::vector<AllocOption> opts;
    StageConfig probe = s;
    for (int pe : divisors(s.out)) {
        for (int simd : divisors(s.in_fold)) {
            probe.pe = pe;
            probe.simd = simd;
            AllocOption o;
            o.pe = pe;
            o.simd = simd;
            o.cycles = stage_frame_cycles(probe);
            o.dsp = static_cast<long long>(pe) * simd;
            o.bram = bram_blocks_for_bits(stage_memory_bits(probe), bits_per_block);
            opts.push_back(o);
        }
    }
    // canonical preference order: cheaper DSP, then BRAM, then smaller PE/SIMD
    std::sort(opts.begin(), opts.end(), [](const AllocOption& a, const AllocOption& b) {
        return std::tie(a.dsp, a.bram, a.pe, a.simd) <
               std::tie(b.dsp, b.bram, b.pe, b.simd);
    });
    return opts;
}

// Minimum total BRAM blocks reachable for stages s.. with a DSP budget, one
// option (cycles <= target) chosen per stage. Index 0 of the returned table
// is the whole-suffix answer; entry [dsp] = min bram using at most dsp DSPs.
inline bool suffix_feasible(const std::vector<std::vector<AllocOption>>& options,
                            long long target, long long dsp_budget,
                            long long bram_budget,
                            std::vector<std::vector<long long>>* table = nullptr) {
    const long long kInf = std::numeric_limits<long long>::max() / 4;
    std::vector<long long> next(dsp_budget + 1, 0);  // beyond last stage: 0 bram
    std::vector<std::vector<long long>> dp(options.size() + 1);
    dp[options.size()] = next;
    for (std::size_t s = options.size(); s-- > 0;) {
        std::vector<long long> cur(dsp_budget + 1, kInf);
        for (const auto& o : options[s]) {
            if (o.cycles > target || o.dsp > dsp_budget) continue;
            for (long long d = o.dsp; d <= dsp_budget; ++d) {
                long long rest = dp[s + 1][d - o.dsp];
                if (rest < kInf) cur[d] = std::min(cur[d], rest + o.bram);
            }
        }
        // allow unused budget: min over <= d
        for (long long d = 1; d <= dsp_budget; ++d) {
            cur[d] = std::min(cur[d], cur[d - 1]);
        }
        dp[s] = std::move(cur);
    }
    if (table) *table = dp;
    return dp[0][dsp_budget] <= bram_budget;
}

} // namespace detail

/// Picks (PE, SIMD) per MVAU stage so the largest per-stage frame cost is
/// minimal under the platform's DSP and BRAM budget, then the cheapest such
/// assignment. Throws InfeasibleError when even PE=SIMD=1 exceeds the budget.
inline void allocate_parallelism(HardwareConfig& hw) {
    std::vector<std::size_t> mvau_stages;
    long long mpu_max = 0;
    long long fixed_bram = 0;
    for (std::size_t i = 0; i < hw.stages.size(); ++i) {
        if (hw.stages[i].kind == StageKind::Mvau) {
            mvau_stages.push_back(i);
        } else {
            mpu_max = std::max(mpu_max, stage_frame_cycles(hw.stages[i]));
            fixed_bram += bram_blocks_for_bits(stage_memory_bits(hw.stages[i]),
                                               hw.platform.bram_bits_per_block);
        }
    }

    std::vector<std::vector<detail::AllocOption>> options;
    for (std::size_t i : mvau_stages) {
        options.push_back(detail::stage_alloc_options(
            hw.stages[i], hw.platform.bram_bits_per_block));
    }

    long long dsp_budget = hw.platform.dsp;
    const long long bram_budget = hw.platform.bram - fixed_bram;
    {
        // cap the DP dimension at the largest DSP count the stages can use
        long long useful = 0;
        for (const auto& opts : options) {
            long long mx = 0;
            for (const auto& o : opts) mx = std::max(mx, o.dsp);
            useful += mx;
        }
        dsp_budget = std::min(dsp_budget, useful);
    }

    // Baseline feasibility at minimum parallelism.
    {
        long long base_dsp = 0, base_bram = 0;
        for (std::size_t s = 0; s < options.size(); ++s) {
            const auto& o = options[s].front();  // (1,1) sorts first
            base_dsp += o.dsp;
            base_bram += o.bram;
        }
        if (base_dsp > dsp_budget || base_bram > bram_budget) {
            ResourceEstimate have;
            have.dsp = base_dsp;
            have.bram = base_bram + fixed_bram;
            throw InfeasibleError(
                "Exceeds Platform Constraints: minimum design needs " +
                std::to_string(have.bram) + " BRAM / " + std::to_string(have.dsp) +
                " DSP but platform '" + hw.platform.name + "' provides " +
                std::to_string(hw.platform.bram) + " / " +
                std::to_string(hw.platform.dsp));
        }
        if (options.empty()) return;
    }

    std::vector<long long> targets;
    for (const auto& opts : options) {
        for (const auto& o : opts) targets.push_back(o.cycles);
    }
    std::sort(targets.begin(), targets.end());
    targets.erase(std::unique(targets.begin(), targets.end()), targets.end());

    long long min_feasible = -1;
    for (long long t : targets) {
        if (detail::suffix_feasible(options, t, dsp_budget, bram_budget)) {
            min_feasible = t;
            break;
        }
    }
    if (min_feasible < 0) {
        throw InfeasibleError("Exceeds Platform Constraints: no feasible folding");
    }

    // Same initiation interval, cheapest folding: relax the target up to the
    // global bound set by fixed-cost stages.
    long long global_ii = std::max(min_feasible, mpu_max);
    long long target = min_feasible;
    for (long long t : targets) {
        if (t <= global_ii &&
            detail::suffix_feasible(options, t, dsp_budget, bram_budget)) {
            target = std::max(target, t);
        }
    }

    std::vector<std::vector<long long>> dp;
    detail::suffix_feasible(options, target, dsp_budget, bram_budget, &dp);
    long long dsp_left = dsp_budget;
    long long bram_left = bram_budget;
    for (std::size_t s = 0; s < options.size(); ++s) {
        const detail::AllocOption* chosen = nullptr;
        for (const auto& o : options[s]) {
            if (o.cycles > target || o.dsp > dsp_left || o.bram > bram_left) continue;
            long long rest_dsp = dsp_left - o.dsp;
            long long rest = dp[s + 1][rest_dsp];
            if (rest <= bram_left - o.bram) {
                chosen = &o;
                break;  // options are in canonical preference order
            }
        }
        if (!chosen) {
            throw InfeasibleError("Exceeds Platform Constraints: assignment failed");
        }
        hw.stages[mvau_stages[s]].pe = chosen->pe;
        hw.stages[mvau_stages[s]].simd = chosen->simd;
        dsp_left -= chosen->dsp;
        bram_left -= chosen->bram;
    }

    ResourceEstimate est = estimate_resources(hw);
    if (!est.fits(hw.platform)) {
        throw InfeasibleError("Exceeds Platform Constraints: estimate " +
                              std::to_string(est.bram) + " BRAM / " +
                              std::to_string(est.dsp) + " DSP over budget");
    }
}

// ---------------------------------------------------------------------------
// Lowering: folded model -> pipeline stages.
// ---------------------------------------------------------------------------

struct CompileOptions {
    PlatformBudget platform;
    double clock_mhz = 152.0;
    bool fixed_point_acts = false;  // raw activations at fixed_act_bits instead
    int fixed_act_bits = 8;
};

/// Translates a hardware-folded model (conv/fc + batch-norm pairs, optional
/// relu/encode, max-pool) into MVAU/MPU stages with stream wiring and buffer
/// sizing. Parallelism is left at PE=SIMD=1; run allocate_parallelism next.
inline HardwareConfig lower_model(const Model& folded, const CompileOptions& opt) {
    validate(folded.net);
    HardwareConfig hw;
    hw.platform = opt.platform;
    hw.clock_mhz = opt.clock_mhz;
    hw.fixed_point_acts = opt.fixed_point_acts;
    hw.fixed_act_bits = opt.fixed_act_bits;
    hw.seed = folded.seed;
    hw.input_shape = folded.net.input_shape;
    hw.classes = folded.net.classes;

    auto shapes = layer_shapes(folded.net);
    bool stream_encoded = false;
    Codebook stream_cb;
    int stream_bits = 32;

    const auto& layers = folded.net.layers;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const LayerSpec& spec = layers[l];
        if (spec.kind == LayerKind::Conv || spec.kind == LayerKind::Fc) {
            if (!folded.enc_weights[l].has_value()) {
                throw ParseError(layer_label(static_cast<int>(l), spec) +
                                 ": weights are not encoded; encode before compiling");
            }
            StageConfig s;
            s.kind = StageKind::Mvau;
            s.net_layer = static_cast<int>(l);
            s.name = spec.name.empty() ? std::string(to_string(spec.kind)) +
                                             std::to_string(l)
                                       : spec.name;
            s.input_encoded = stream_encoded;
            s.input_cb = stream_cb;

            const std::vector<int> in_shape =
                l == 0 ? folded.net.input_shape : shapes[l - 1];
            if (spec.kind == LayerKind::Conv) {
                s.is_conv = true;
                s.geo = conv_geometry(spec, in_shape);
                s.out = spec.out_channels;
                s.in_fold = s.geo.fold();
                s.windows = s.geo.windows();
            } else {
                s.out = spec.out_features;
                s.in_fold = static_cast<int>(Tensor::numel_of(in_shape));
                s.windows = 1;
            }
            const EncodedWeights& ew = *folded.enc_weights[l];
            s.weight_cb = ew.codebook;
            s.weight_bits = ew.bits;
            s.weight_idx.shape = {s.out, s.in_fold};
            s.weight_idx.indices = ew.indices.indices;

            if (l + 1 >= layers.size() ||
                layers[l + 1].kind != LayerKind::BatchNorm) {
                throw ParseError(layer_label(static_cast<int>(l), spec) +
                                 ": expected a folded batch-norm after this layer");
            }
            s.out_scale = layers[l + 1].bn_scale;
            s.out_bias = layers[l + 1].bn_bias;
            std::size_t last = l + 1;

            if (last + 1 < layers.size() &&
                layers[last + 1].kind == LayerKind::Relu) {
                s.apply_relu = true;
                ++last;
            } else if (last + 1 < layers.size() &&
                       layers[last + 1].kind == LayerKind::Encode) {
                ++last;
                if (opt.fixed_point_acts) {
                    if (!layers[last].codebook.zero_anchored) {
                        throw ParseError("fixed-point mode requires zero-anchored "
                                         "activation codebooks");
                    }
                    s.apply_relu = true;  // keep the nonlinearity, drop quantization
                } else {
                    s.output_encoded = true;
                    s.output_cb = layers[last].codebook;
                }
            }
            s.out_shape = shapes[last];

            bool is_final = last + 1 == layers.size();
            if (s.output_encoded) {
                s.out_word_bits = std::max(1, layers[last].enc_bits);
            } else {
                s.out_word_bits = (opt.fixed_point_acts && !is_final)
                                      ? opt.fixed_act_bits
                                      : 32;
            }
            s.buffer_bits = static_cast<long long>(Tensor::numel_of(s.out_shape)) *
                            s.out_word_bits;

            stream_encoded = s.output_encoded;
            stream_cb = s.output_cb;
            stream_bits = s.out_word_bits;
            hw.stages.push_back(std::move(s));
            l = last;
        } else if (spec.kind == LayerKind::MaxPool) {
            StageConfig s;
            s.kind = StageKind::Mpu;
            s.net_layer = static_cast<int>(l);
            s.name = spec.name.empty() ? "maxpool" + std::to_string(l) : spec.name;
            const std::vector<int> in_shape =
                l == 0 ? folded.net.input_shape : shapes[l - 1];
            s.ch = in_shape[0];
            s.in_h = in_shape[1];
            s.in_w = in_shape[2];
            s.pool = spec.pool_h;
            s.pool_stride = spec.pool_stride;
            if (spec.pool_h != spec.pool_w) {
                throw ParseError(layer_label(static_cast<int>(l), spec) +
                                 ": hardware pooling windows must be square");
            }
            s.input_encoded = stream_encoded;
            s.input_cb = stream_cb;
            s.output_encoded = stream_encoded;
            s.output_cb = stream_cb;
            s.out_shape = shapes[l];
            s.out_word_bits = stream_bits;
            s.buffer_bits = static_cast<long long>(Tensor::numel_of(s.out_shape)) *
                            s.out_word_bits;
            hw.stages.push_back(std::move(s));
        } else {
            throw ParseError(layer_label(static_cast<int>(l), spec) +
                             ": layer cannot start a hardware stage");
        }
    }
    return hw;
}

} // namespace codenn
