#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "codenn/hwcfg.hpp"

namespace codenn {

/// One frame's worth of words flowing between pipeline stages, either raw
/// float values or codebook indices.
struct Stream {
    int word_bits = 32;
    bool encoded = false;
    std::vector<float> values;
    std::vector<uint32_t> indices;
    int producer = -1, consumer = -1;

    std::size_t size() const { return encoded ? indices.size() : values.size(); }
};

struct WindowStream {
    int windows = 0;
    int fold = 0;
    std::vector<float> values;
    std::vector<uint32_t> indices;
    bool encoded = false;
};

/// Sliding-window reorder: emits convolution windows in row-major output
/// order; inside a window, elements run channel-major then row-major.
inline WindowStream swu_reorder(const Tensor& fmap, int kernel_h, int kernel_w,
                                int stride, int padding) {
    if (fmap.shape.size() != 3) throw ShapeError("swu_reorder expects a CHW tensor");
    LayerSpec probe;
    probe.kind = LayerKind::Conv;
    probe.out_channels = 1;
    probe.kernel_h = kernel_h;
    probe.kernel_w = kernel_w;
    probe.stride = stride;
    probe.padding = padding;
    layer_output_shape(probe, fmap.shape, -1);  // validates fit
    ConvGeometry g = conv_geometry(probe, fmap.shape);

    WindowStream ws;
    ws.windows = g.windows();
    ws.fold = g.fold();
    ws.values.resize(static_cast<std::size_t>(ws.windows) * ws.fold);
    for (int oy = 0; oy < g.out_h; ++oy) {
        for (int ox = 0; ox < g.out_w; ++ox) {
            std::size_t w = static_cast<std::size_t>(oy) * g.out_w + ox;
            gather_window(fmap.data.data(), g, oy, ox, 0.0f,
                          ws.values.data() + w * ws.fold);
        }
    }
    return ws;
}

namespace detail {

inline WindowStream swu_reorder_stream(const Stream& in, const ConvGeometry& g) {
    WindowStream ws;
    ws.windows = g.windows();
    ws.fold = g.fold();
    ws.encoded = in.encoded;
    if (in.size() != static_cast<std::size_t>(g.in_c) * g.in_h * g.in_w) {
        throw ShapeError("swu: stream word count does not match the feature map");
    }
    if (in.encoded) {
        ws.indices.resize(static_cast<std::size_t>(ws.windows) * ws.fold);
        for (int oy = 0; oy < g.out_h; ++oy) {
            for (int ox = 0; ox < g.out_w; ++ox) {
                std::size_t w = static_cast<std::size_t>(oy) * g.out_w + ox;
                gather_window(in.indices.data(), g, oy, ox, uint32_t{0},
                              ws.indices.data() + w * ws.fold);
            }
        }
    } else {
        ws.values.resize(static_cast<std::size_t>(ws.windows) * ws.fold);
        for (int oy = 0; oy < g.out_h; ++oy) {
            for (int ox = 0; ox < g.out_w; ++ox) {
                std::size_t w = static_cast<std::size_t>(oy) * g.out_w + ox;
                gather_window(in.values.data(), g, oy, ox, 0.0f,
                              ws.values.data() + w * ws.fold);
            }
        }
    }
    return ws;
}

} // namespace detail

struct MvauResult {
    Stream out;
    long long id = 0, vdp = 0, oe = 0;  // per-frame beat counts
    bool decode_overlapped = true;
};

/// Executes one MVAU stage on a window stream. Values are computed exactly
/// as the folded software reference does — decode, accumulate the dot
/// product in ascending fold order, apply the folded scale/bias, then the
/// optional relu and output encoding — while the beat counters follow the
/// PE/SIMD folding.
inline MvauResult mvau_execute(const StageConfig& s, const WindowStream& win) {
    check_divisibility(s);
    if (win.fold != s.in_fold ||
        win.windows != s.windows ||
        (win.encoded != s.input_encoded)) {
        throw ShapeError("mvau '" + s.name + "': window stream mismatch");
    }
    const std::size_t expect_words =
        static_cast<std::size_t>(s.windows) * s.in_fold;
    if ((s.input_encoded ? win.indices.size() : win.values.size()) != expect_words) {
        throw ShapeError("mvau '" + s.name + "': window stream word count");
    }
    if (s.input_encoded && s.geo.pad > 0 && s.input_cb.values.front() != 0.0f) {
        throw ShapeError("mvau '" + s.name +
                         "': padded encoded input needs a zero-anchored codebook");
    }

    // decode the weight matrix once; identical values to a per-MAC lookup
    std::vector<float> wdec(static_cast<std::size_t>(s.out) * s.in_fold);
    for (std::size_t i = 0; i < wdec.size(); ++i) {
        wdec[i] = decode_value(s.weight_idx.indices[i], s.weight_cb);
    }

    MvauResult r;
    r.out.encoded = s.output_encoded;
    r.out.word_bits = s.out_word_bits;
    const std::size_t out_elems = static_cast<std::size_t>(s.out) * s.windows;
    if (s.output_encoded) {
        r.out.indices.resize(out_elems);
    } else {
        r.out.values.resize(out_elems);
    }

    const int fold_beats = s.in_fold / s.simd;
    const int out_blocks = s.out / s.pe;
    const int enc_steps =
        s.output_encoded ? ceil_log2(s.output_cb.size()) : 1;

    std::vector<float> x(s.in_fold);
    std::vector<float> acc(s.pe);
    for (int w = 0; w < s.windows; ++w) {
        const std::size_t base = static_cast<std::size_t>(w) * s.in_fold;
        if (s.input_encoded) {
            for (int i = 0; i < s.in_fold; ++i) {
                x[i] = decode_value(win.indices[base + i], s.input_cb);
            }
            r.id += fold_beats;  // one SIMD-wide decode per beat
        } else {
            for (int i = 0; i < s.in_fold; ++i) x[i] = win.values[base + i];
        }

        for (int ob = 0; ob < out_blocks; ++ob) {
            for (int p = 0; p < s.pe; ++p) acc[p] = 0.0f;
            for (int fb = 0; fb < fold_beats; ++fb) {
                ++r.vdp;
                for (int p = 0; p < s.pe; ++p) {
                    const int row = p * out_blocks + ob;
                    const float* wr = wdec.data() +
                                      static_cast<std::size_t>(row) * s.in_fold;
                    float a = acc[p];
                    for (int lane = 0; lane < s.simd; ++lane) {
                        const int i = fb * s.simd + lane;
                        a += wr[i] * x[i];
                    }
                    acc[p] = a;
                }
            }
            r.oe += enc_steps;
            for (int p = 0; p < s.pe; ++p) {
                const int row = p * out_blocks + ob;
                float v = bn_apply(s.out_scale[row], s.out_bias[row], acc[p]);
                if (s.apply_relu) v = v > 0.0f ? v : 0.0f;
                // output position in CHW order: channel plane is one window map
                const std::size_t pos =
                    static_cast<std::size_t>(row) * s.windows + w;
                if (s.output_encoded) {
                    r.out.indices[pos] = encode_value(v, s.output_cb);
                } else {
                    r.out.values[pos] = v;
                }
            }
        }
    }
    r.decode_overlapped = r.id <= std::max(r.vdp, r.oe);
    return r;
}

struct MpuResult {
    Stream out;
    long long cycles = 0;
};

/// Max-pooling directly on stream words. On encoded streams the comparison
/// runs over indices; a sorted codebook makes that equivalent to comparing
/// the decoded values.
inline MpuResult mpu_execute(const StageConfig& s, const Stream& in) {
    if (in.encoded != s.input_encoded) {
        throw ShapeError("mpu '" + s.name + "': stream encoding mismatch");
    }
    if (s.input_encoded && !s.input_cb.strictly_ascending()) {
        throw ShapeError("mpu '" + s.name + "': codebook must be sorted ascending");
    }
    if (in.size() != static_cast<std::size_t>(s.ch) * s.in_h * s.in_w) {
        throw ShapeError("mpu '" + s.name + "': stream word count mismatch");
    }
    const int oh = (s.in_h - s.pool) / s.pool_stride + 1;
    const int ow = (s.in_w - s.pool) / s.pool_stride + 1;

    MpuResult r;
    r.cycles = in.size();  // one input word consumed per cycle
    r.out.encoded = in.encoded;
    r.out.word_bits = s.out_word_bits;
    if (in.encoded) {
        r.out.indices.resize(static_cast<std::size_t>(s.ch) * oh * ow);
    } else {
        r.out.values.resize(static_cast<std::size_t>(s.ch) * oh * ow);
    }
    for (int c = 0; c < s.ch; ++c) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                std::size_t opos = chw_index(c, oy, ox, oh, ow);
                if (in.encoded) {
                    uint32_t best = 0;
                    bool first = true;
                    for (int ky = 0; ky < s.pool; ++ky) {
                        for (int kx = 0; kx < s.pool; ++kx) {
                            uint32_t v = in.indices[chw_index(
                                c, oy * s.pool_stride + ky, ox * s.pool_stride + kx,
                                s.in_h, s.in_w)];
                            if (first || v > best) best = v;
                            first = false;
                        }
                    }
                    r.out.indices[opos] = best;
                } else {
                    float best = -std::numeric_limits<float>::infinity();
                    for (int ky = 0; ky < s.pool; ++ky) {
                        for (int kx = 0; kx < s.pool; ++kx) {
                            best = std::max(
                                best, in.values[chw_index(c, oy * s.pool_stride + ky,
                                                          ox * s.pool_stride + kx,
                                                          s.in_h, s.in_w)]);
                        }
                    }
                    r.out.values[opos] = best;
                }
            }
        }
    }
    return r;
}

struct StageReport {
    std::string name;
    StageKind kind = StageKind::Mvau;
    long long windows = 0;
    long long id = 0, vdp = 0, oe = 0;  // per-frame beat totals
    long long cycles = 0;               // per-frame stage cost
    bool decode_overlapped = true;
};

struct SimReport {
    std::vector<StageReport> stages;
    long long latency_cycles = 0;        // single-frame latency, sum of stage costs
    long long initiation_interval = 0;   // steady state, max stage cost
    long long frames = 0;
    long long makespan_cycles = 0;       // scheduled completion of the last frame
    double clock_mhz = 0.0;
    double throughput_fps = 0.0;
    ResourceEstimate resources;
    std::vector<std::vector<float>> logits;  // per frame
    long long offchip_input_bits_per_frame = 0;
    long long offchip_output_bits_per_frame = 0;
};

/// Runs frames through the stage pipeline. Values are exact (bit-identical
/// to inference on the folded model); timing uses per-stage frame costs and
/// a layer-granular overlap schedule: a stage starts frame f once it has
/// finished frame f-1 and its producer has finished frame f. Off-chip
/// traffic exists only at the first input and last output.
inline SimReport simulate_pipeline(const HardwareConfig& hw,
                                   const std::vector<Tensor>& frames) {
    if (hw.stages.empty()) throw ShapeError("simulate_pipeline: no stages");
    if (frames.empty()) throw ShapeError("simulate_pipeline: no input frames");

    SimReport report;
    report.frames = static_cast<long long>(frames.size());
    report.clock_mhz = hw.clock_mhz;
    report.resources = estimate_resources(hw);

    for (const Tensor& frame : frames) {
        if (frame.shape != hw.input_shape) {
            throw ShapeError("simulate_pipeline: frame shape " +
                             shape_string(frame.shape) + " does not match " +
                             shape_string(hw.input_shape));
        }
        Stream cur;
        cur.values = frame.data;
        cur.word_bits = 32;

        bool first_frame = report.stages.empty();
        std::vector<StageReport> stage_reports;
        for (const StageConfig& s : hw.stages) {
            StageReport sr;
            sr.name = s.name;
            sr.kind = s.kind;
            if (s.kind == StageKind::Mvau) {
                WindowStream win;
                if (s.is_conv) {
                    win = detail::swu_reorder_stream(cur, s.geo);
                } else {
                    win.windows = 1;
                    win.fold = s.in_fold;
                    win.encoded = cur.encoded;
                    win.values = cur.values;
                    win.indices = cur.indices;
                }
                MvauResult res = mvau_execute(s, win);
                sr.windows = s.windows;
                sr.id = res.id;
                sr.vdp = res.vdp;
                sr.oe = res.oe;
                sr.cycles = static_cast<long long>(s.windows) *
                            mvau_window_cycles(s).per_window();
                sr.decode_overlapped = res.decode_overlapped;
                cur = std::move(res.out);
            } else {
                MpuResult res = mpu_execute(s, cur);
                sr.windows = 0;
                sr.cycles = res.cycles;
                cur = std::move(res.out);
            }
            stage_reports.push_back(std::move(sr));
        }
        if (first_frame) report.stages = stage_reports;

        std::vector<float> logits;
        if (cur.encoded) {
            const Codebook& cb = hw.stages.back().output_cb;
            for (uint32_t idx : cur.indices) logits.push_back(decode_value(idx, cb));
        } else {
            logits = cur.values;
        }
        report.logits.push_back(std::move(logits));
    }

    long long max_cost = 0, sum_cost = 0;
    for (const auto& sr : report.stages) {
        sum_cost += sr.cycles;
        max_cost = std::max(max_cost, sr.cycles);
    }
    report.latency_cycles = sum_cost;
    report.initiation_interval = max_cost;
    report.throughput_fps = hw.clock_mhz * 1e6 / static_cast<double>(max_cost);

    std::vector<long long> costs;
    for (const auto& sr : report.stages) costs.push_back(sr.cycles);
    report.makespan_cycles = pipeline_makespan(costs, report.frames);

    report.offchip_input_bits_per_frame =
        static_cast<long long>(Tensor::numel_of(hw.input_shape)) * 32;
    report.offchip_output_bits_per_frame =
        static_cast<long long>(report.logits.front().size()) * 32;
    return report;
}

inline nlohmann::ordered_json report_to_json(const SimReport& r) {
    nlohmann::ordered_json j;
    j["clock_mhz"] = r.clock_mhz;
    j["frames"] = r.frames;
    j["latency_cycles"] = r.latency_cycles;
    j["initiation_interval"] = r.initiation_interval;
    j["makespan_cycles"] = r.makespan_cycles;
    j["throughput_fps"] = r.throughput_fps;
    j["overlap_model"] = "layer-granular";
    j["resources"] = {{"bram", r.resources.bram},
                      {"dsp", r.resources.dsp},
                      {"ff_proxy", r.resources.ff_proxy},
                      {"lut_proxy", r.resources.lut_proxy}};
    j["offchip"] = {{"input_bits_per_frame", r.offchip_input_bits_per_frame},
                    {"output_bits_per_frame", r.offchip_output_bits_per_frame}};
    nlohmann::ordered_json stages = nlohmann::ordered_json::array();
    for (const auto& s : r.stages) {
        stages.push_back({{"name", s.name},
                          {"kind", s.kind == StageKind::Mvau ? "mvau" : "mpu"},
                          {"windows", s.windows},
                          {"id", s.id},
                          {"vdp", s.vdp},
                          {"oe", s.oe},
                          {"cycles", s.cycles},
                          {"decode_overlapped", s.decode_overlapped}});
    }
    j["stages"] = stages;
    nlohmann::ordered_json logits = nlohmann::ordered_json::array();
    for (const auto& frame : r.logits) logits.push_back(frame);
    j["logits"] = logits;
    return j;
}

inline void write_sim_report(const std::string& path, const SimReport& r) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open for writing: " + path);
    out << report_to_json(r).dump(2) << "\n";
}

/// Per-layer decode/compute/encode cycle split.
inline void write_breakdown_csv(const std::string& path, const SimReport& r) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open for writing: " + path);
    out << "layer,name,id,vdp,oe\n";
    for (std::size_t i = 0; i < r.stages.size(); ++i) {
        const auto& s = r.stages[i];
        out << i << "," << s.name << "," << s.id << "," << s.vdp << "," << s.oe
            << "\n";
    }
}

} // namespace codenn
