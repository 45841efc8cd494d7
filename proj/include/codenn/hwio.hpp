#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "codenn/hwcfg.hpp"

namespace codenn {

// ---------------------------------------------------------------------------
// Index bit packing: index i occupies bits [i*b, (i+1)*b) of the stream,
// least-significant bit first within each byte. With b = 4, the indices
// 0,1,2,3 pack to bytes 0x10, 0x32.
// ---------------------------------------------------------------------------

inline std::vector<uint8_t> pack_indices(const uint32_t* idx, std::size_t count,
                                         int bits) {
    if (bits < 0 || bits > 24) throw ParseError("pack_indices: unsupported bitwidth");
    std::vector<uint8_t> out((count * bits + 7) / 8, 0);
    std::size_t bitpos = 0;
    const uint32_t mask = bits >= 32 ? ~0u : ((1u << bits) - 1);
    for (std::size_t i = 0; i < count; ++i) {
        uint32_t v = idx[i] & mask;
        if ((idx[i] & ~mask) != 0) {
            throw ParseError("pack_indices: index does not fit in " +
                             std::to_string(bits) + " bits");
        }
        for (int b = 0; b < bits; ++b, ++bitpos) {
            out[bitpos / 8] |= static_cast<uint8_t>(((v >> b) & 1) << (bitpos % 8));
        }
    }
    return out;
}

inline std::vector<uint32_t> unpack_indices(const uint8_t* bytes, std::size_t nbytes,
                                            int bits, std::size_t count) {
    if (bits < 0 || bits > 24) throw ParseError("unpack_indices: unsupported bitwidth");
    if ((count * bits + 7) / 8 > nbytes) {
        throw ParseError("unpack_indices: buffer too small");
    }
    std::vector<uint32_t> out(count, 0);
    std::size_t bitpos = 0;
    for (std::size_t i = 0; i < count; ++i) {
        uint32_t v = 0;
        for (int b = 0; b < bits; ++b, ++bitpos) {
            v |= static_cast<uint32_t>((bytes[bitpos / 8] >> (bitpos % 8)) & 1) << b;
        }
        out[i] = v;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Encoded weight container: magic "CDW1", u16 record count; per record
// u16 stage index, u8 bitwidth, u32 rows, u32 cols, then rows packed rows,
// each padded to a byte boundary.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::string& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline uint32_t get_u32(const std::string& buf, std::size_t& pos) {
    if (pos + 4 > buf.size()) throw ParseError("weight file truncated");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
    }
    pos += 4;
    return v;
}

} // namespace detail

struct WeightRecord {
    uint16_t stage = 0;
    uint8_t bits = 0;
    uint32_t rows = 0, cols = 0;
    std::vector<uint32_t> indices;  // rows*cols
};

inline std::string serialize_weights(const std::vector<WeightRecord>& records) {
    std::string buf = "CDW1";
    detail::put_u16(buf, static_cast<uint16_t>(records.size()));
    for (const auto& r : records) {
        detail::put_u16(buf, r.stage);
        buf.push_back(static_cast<char>(r.bits));
        detail::put_u32(buf, r.rows);
        detail::put_u32(buf, r.cols);
        for (uint32_t row = 0; row < r.rows; ++row) {
            auto packed = pack_indices(r.indices.data() +
                                           static_cast<std::size_t>(row) * r.cols,
                                       r.cols, r.bits);
            buf.append(reinterpret_cast<const char*>(packed.data()), packed.size());
        }
    }
    return buf;
}

inline std::vector<WeightRecord> parse_weights(const std::string& buf) {
    if (buf.size() < 6 || buf.compare(0, 4, "CDW1") != 0) {
        throw ParseError("bad weight file magic (expected CDW1)");
    }
    std::size_t pos = 4;
    uint16_t count = detail::get_u16(buf, pos);
    std::vector<WeightRecord> records(count);
    for (auto& r : records) {
        r.stage = detail::get_u16(buf, pos);
        if (pos >= buf.size()) throw ParseError("weight file truncated");
        r.bits = static_cast<uint8_t>(buf[pos++]);
        r.rows = detail::get_u32(buf, pos);
        r.cols = detail::get_u32(buf, pos);
        const std::size_t row_bytes = (static_cast<std::size_t>(r.cols) * r.bits + 7) / 8;
        r.indices.reserve(static_cast<std::size_t>(r.rows) * r.cols);
        for (uint32_t row = 0; row < r.rows; ++row) {
            if (pos + row_bytes > buf.size()) throw ParseError("weight file truncated");
            auto unpacked = unpack_indices(
                reinterpret_cast<const uint8_t*>(buf.data()) + pos, row_bytes,
                r.bits, r.cols);
            r.indices.insert(r.indices.end(), unpacked.begin(), unpacked.end());
            pos += row_bytes;
        }
    }
    return records;
}

// ---------------------------------------------------------------------------
// Emit / load the accelerator design directory: hwconfig.json describes the
// stages and references codebooks.cdx (record indices) and weights.bin.
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::ordered_json platform_to_json(const PlatformBudget& p) {
    return {{"name", p.name},   {"bram", p.bram}, {"dsp", p.dsp},
            {"ff", p.ff},       {"lut", p.lut},
            {"bram_bits_per_block", p.bram_bits_per_block}};
}

inline PlatformBudget platform_from_json(const nlohmann::json& j) {
    PlatformBudget p;
    p.name = j.at("name").get<std::string>();
    p.bram = j.at("bram").get<int>();
    p.dsp = j.at("dsp").get<int>();
    p.ff = j.at("ff").get<long long>();
    p.lut = j.at("lut").get<long long>();
    p.bram_bits_per_block = j.at("bram_bits_per_block").get<int>();
    return p;
}

} // namespace detail

inline void emit_hw_config(const HardwareConfig& hw, const std::string& dir) {
    ResourceEstimate est = estimate_resources(hw);
    if (!est.fits(hw.platform)) {
        throw InfeasibleError("Exceeds Platform Constraints: " +
                              std::to_string(est.bram) + " BRAM / " +
                              std::to_string(est.dsp) + " DSP over platform '" +
                              hw.platform.name + "'");
    }
    std::filesystem::create_directories(dir);

    std::vector<CdxRecord> cdx;
    std::vector<WeightRecord> weights;
    nlohmann::ordered_json stages = nlohmann::ordered_json::array();
    int last_act_record = -1;
    for (std::size_t si = 0; si < hw.stages.size(); ++si) {
        const StageConfig& s = hw.stages[si];
        nlohmann::ordered_json j;
        j["kind"] = s.kind == StageKind::Mvau ? "mvau" : "mpu";
        j["name"] = s.name;
        j["net_layer"] = s.net_layer;
        j["input_encoded"] = s.input_encoded;
        j["input_codebook"] = s.input_encoded ? last_act_record : -1;
        j["out_shape"] = s.out_shape;
        j["out_word_bits"] = s.out_word_bits;
        j["buffer_bits"] = s.buffer_bits;
        if (s.kind == StageKind::Mvau) {
            check_divisibility(s);
            int wrec = static_cast<int>(cdx.size());
            cdx.push_back({0, static_cast<uint8_t>(s.weight_cb.bitwidth),
                           s.weight_cb.values});
            WeightRecord wr;
            wr.stage = static_cast<uint16_t>(si);
            wr.bits = static_cast<uint8_t>(s.weight_bits);
            wr.rows = static_cast<uint32_t>(s.out);
            wr.cols = static_cast<uint32_t>(s.in_fold);
            wr.indices = s.weight_idx.indices;
            weights.push_back(std::move(wr));

            j["out"] = s.out;
            j["in_fold"] = s.in_fold;
            j["windows"] = s.windows;
            j["pe"] = s.pe;
            j["simd"] = s.simd;
            j["weight_bits"] = s.weight_bits;
            j["weight_codebook"] = wrec;
            j["scale"] = s.out_scale;
            j["bias"] = s.out_bias;
            j["apply_relu"] = s.apply_relu;
            j["is_conv"] = s.is_conv;
            if (s.is_conv) {
                j["geometry"] = {{"in_c", s.geo.in_c},   {"in_h", s.geo.in_h},
                                 {"in_w", s.geo.in_w},   {"k_h", s.geo.k_h},
                                 {"k_w", s.geo.k_w},     {"stride", s.geo.stride},
                                 {"pad", s.geo.pad},     {"out_h", s.geo.out_h},
                                 {"out_w", s.geo.out_w}};
            }
            if (s.output_encoded) {
                int arec = static_cast<int>(cdx.size());
                cdx.push_back({1, static_cast<uint8_t>(s.output_cb.bitwidth),
                               s.output_cb.values});
                j["output_encoded"] = true;
                j["output_codebook"] = arec;
                last_act_record = arec;
            } else {
                j["output_encoded"] = false;
                j["output_codebook"] = -1;
                last_act_record = -1;
            }
        } else {
            j["ch"] = s.ch;
            j["in_h"] = s.in_h;
            j["in_w"] = s.in_w;
            j["pool"] = s.pool;
            j["pool_stride"] = s.pool_stride;
            j["output_encoded"] = s.output_encoded;
            j["output_codebook"] = s.output_encoded ? last_act_record : -1;
        }
        stages.push_back(std::move(j));
    }

    nlohmann::ordered_json root;
    root["format"] = "codenn-hwconfig";
    root["version"] = 1;
    root["seed"] = hw.seed;
    root["platform"] = detail::platform_to_json(hw.platform);
    root["clock_mhz"] = hw.clock_mhz;
    root["fixed_point_acts"] = hw.fixed_point_acts;
    root["fixed_act_bits"] = hw.fixed_act_bits;
    root["input_shape"] = hw.input_shape;
    root["classes"] = hw.classes;
    root["files"] = {{"codebooks", "codebooks.cdx"}, {"weights", "weights.bin"}};
    root["stages"] = stages;

    const std::filesystem::path base(dir);
    {
        std::ofstream out(base / "hwconfig.json");
        if (!out) throw ParseError("cannot open for writing: hwconfig.json");
        out << root.dump(2) << "\n";
    }
    write_cdx_file((base / "codebooks.cdx").string(), cdx);
    {
        std::ofstream out(base / "weights.bin", std::ios::binary);
        if (!out) throw ParseError("cannot open for writing: weights.bin");
        std::string buf = serialize_weights(weights);
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    }
}

inline HardwareConfig load_hw_config(const std::string& dir) {
    const std::filesystem::path base(dir);
    std::ifstream in(base / "hwconfig.json");
    if (!in) throw ParseError("cannot open: " + (base / "hwconfig.json").string());
    nlohmann::json root;
    try {
        in >> root;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("hwconfig.json: " + std::string(e.what()));
    }
    if (root.value("format", "") != "codenn-hwconfig") {
        throw ParseError("hwconfig.json: unrecognized format field");
    }

    std::vector<CdxRecord> cdx =
        read_cdx_file((base / root.at("files").at("codebooks").get<std::string>())
                          .string());
    std::ifstream win(base / root.at("files").at("weights").get<std::string>(),
                      std::ios::binary);
    if (!win) throw ParseError("cannot open weights file");
    std::string wbuf((std::istreambuf_iterator<char>(win)),
                     std::istreambuf_iterator<char>());
    std::vector<WeightRecord> weights = parse_weights(wbuf);

    auto codebook_at = [&](int rec, bool activation) {
        if (rec < 0 || rec >= static_cast<int>(cdx.size())) {
            throw ParseError("hwconfig.json: codebook record " +
                             std::to_string(rec) + " out of range");
        }
        Codebook cb;
        cb.values = cdx[rec].values;
        cb.bitwidth = cdx[rec].bitwidth;
        cb.zero_anchored =
            activation && !cb.values.empty() && cb.values.front() == 0.0f;
        return cb;
    };

    HardwareConfig hw;
    hw.seed = root.value("seed", uint64_t{42});
    hw.platform = detail::platform_from_json(root.at("platform"));
    hw.clock_mhz = root.at("clock_mhz").get<double>();
    hw.fixed_point_acts = root.value("fixed_point_acts", false);
    hw.fixed_act_bits = root.value("fixed_act_bits", 8);
    hw.input_shape = root.at("input_shape").get<std::vector<int>>();
    hw.classes = root.at("classes").get<int>();

    std::size_t wrec_pos = 0;
    for (const auto& j : root.at("stages")) {
        StageConfig s;
        s.name = j.at("name").get<std::string>();
        s.net_layer = j.at("net_layer").get<int>();
        s.input_encoded = j.at("input_encoded").get<bool>();
        if (s.input_encoded) {
            s.input_cb = codebook_at(j.at("input_codebook").get<int>(), true);
        }
        s.out_shape = j.at("out_shape").get<std::vector<int>>();
        s.out_word_bits = j.at("out_word_bits").get<int>();
        s.buffer_bits = j.at("buffer_bits").get<long long>();
        if (j.at("kind").get<std::string>() == "mvau") {
            s.kind = StageKind::Mvau;
            s.out = j.at("out").get<int>();
            s.in_fold = j.at("in_fold").get<int>();
            s.windows = j.at("windows").get<int>();
            s.pe = j.at("pe").get<int>();
            s.simd = j.at("simd").get<int>();
            s.weight_bits = j.at("weight_bits").get<int>();
            s.weight_cb = codebook_at(j.at("weight_codebook").get<int>(), false);
            s.out_scale = j.at("scale").get<std::vector<float>>();
            s.out_bias = j.at("bias").get<std::vector<float>>();
            s.apply_relu = j.at("apply_relu").get<bool>();
            s.is_conv = j.at("is_conv").get<bool>();
            if (s.is_conv) {
                const auto& g = j.at("geometry");
                s.geo.in_c = g.at("in_c").get<int>();
                s.geo.in_h = g.at("in_h").get<int>();
                s.geo.in_w = g.at("in_w").get<int>();
                s.geo.k_h = g.at("k_h").get<int>();
                s.geo.k_w = g.at("k_w").get<int>();
                s.geo.stride = g.at("stride").get<int>();
                s.geo.pad = g.at("pad").get<int>();
                s.geo.out_h = g.at("out_h").get<int>();
                s.geo.out_w = g.at("out_w").get<int>();
            }
            s.output_encoded = j.at("output_encoded").get<bool>();
            if (s.output_encoded) {
                s.output_cb = codebook_at(j.at("output_codebook").get<int>(), true);
            }
            if (wrec_pos >= weights.size()) {
                throw ParseError("weights.bin has fewer records than MVAU stages");
            }
            const WeightRecord& wr = weights[wrec_pos++];
            if (static_cast<int>(wr.rows) != s.out ||
                static_cast<int>(wr.cols) != s.in_fold ||
                wr.bits != s.weight_bits) {
                throw ParseError("weights.bin record does not match stage '" +
                                 s.name + "'");
            }
            s.weight_idx.shape = {s.out, s.in_fold};
            s.weight_idx.indices = wr.indices;
            for (uint32_t v : s.weight_idx.indices) {
                if (v >= s.weight_cb.size()) {
                    throw ParseError("weight index out of codebook range in stage '" +
                                     s.name + "'");
                }
            }
            check_divisibility(s);
        } else {
            s.kind = StageKind::Mpu;
            s.ch = j.at("ch").get<int>();
            s.in_h = j.at("in_h").get<int>();
            s.in_w = j.at("in_w").get<int>();
            s.pool = j.at("pool").get<int>();
            s.pool_stride = j.at("pool_stride").get<int>();
            s.output_encoded = j.at("output_encoded").get<bool>();
            if (s.output_encoded) {
                s.output_cb = codebook_at(j.at("output_codebook").get<int>(), true);
            }
        }
        hw.stages.push_back(std::move(s));
    }
    return hw;
}

} // namespace codenn
