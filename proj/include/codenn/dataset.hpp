#pragma once

#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "codenn/tensor.hpp"

namespace codenn {

struct Dataset {
    std::vector<Tensor> images;
    std::vector<int> labels;

    std::size_t size() const { return images.size(); }
};

namespace detail {

inline std::string read_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open: " + path);
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
}

inline uint32_t be_u32(const std::string& buf, std::size_t pos) {
    return (static_cast<uint32_t>(static_cast<uint8_t>(buf[pos])) << 24) |
           (static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + 1])) << 16) |
           (static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + 2])) << 8) |
           static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + 3]));
}

// IDX container: big-endian magic 0x0000'TT'DD (type, dimension count),
// DD big-endian u32 dimensions, then raw data. Only u8 payloads (type 0x08)
// are supported here.
inline std::pair<std::vector<int>, std::string> read_idx_u8(const std::string& path) {
    std::string buf = read_binary(path);
    if (buf.size() < 4) throw ParseError(path + ": truncated IDX header");
    uint32_t magic = be_u32(buf, 0);
    if ((magic >> 16) != 0 || ((magic >> 8) & 0xff) != 0x08) {
        std::ostringstream os;
        os << path << ": bad IDX magic 0x" << std::hex << magic
           << " (expected unsigned-byte type 0x08)";
        throw ParseError(os.str());
    }
    int dims = static_cast<int>(magic & 0xff);
    if (dims < 1 || dims > 3) throw ParseError(path + ": unsupported IDX rank");
    if (buf.size() < 4 + 4 * static_cast<std::size_t>(dims)) {
        throw ParseError(path + ": truncated IDX dimension list");
    }
    std::vector<int> shape(dims);
    std::size_t expect = 1;
    for (int d = 0; d < dims; ++d) {
        shape[d] = static_cast<int>(be_u32(buf, 4 + 4 * d));
        expect *= static_cast<std::size_t>(shape[d]);
    }
    std::size_t header = 4 + 4 * static_cast<std::size_t>(dims);
    if (buf.size() - header != expect) {
        throw ParseError(path + ": expected " + std::to_string(header + expect) +
                         " bytes, got " + std::to_string(buf.size()));
    }
    return {shape, buf.substr(header)};
}

} // namespace detail

/// MNIST-style IDX pair: a rank-3 u8 image file and a rank-1 u8 label file.
/// Pixel values are scaled to [0, 1].
inline Dataset load_idx(const std::string& images_path,
                        const std::string& labels_path) {
    auto [ishape, idata] = detail::read_idx_u8(images_path);
    auto [lshape, ldata] = detail::read_idx_u8(labels_path);
    if (ishape.size() != 3) {
        throw ParseError(images_path + ": image file must be rank 3");
    }
    if (lshape.size() != 1 || lshape[0] != ishape[0]) {
        throw ParseError(labels_path + ": label count does not match image count");
    }
    Dataset ds;
    const int n = ishape[0], h = ishape[1], w = ishape[2];
    const std::size_t pixels = static_cast<std::size_t>(h) * w;
    for (int i = 0; i < n; ++i) {
        Tensor t({1, h, w});
        for (std::size_t p = 0; p < pixels; ++p) {
            t.data[p] =
                static_cast<float>(static_cast<uint8_t>(idata[i * pixels + p])) /
                255.0f;
        }
        ds.images.push_back(std::move(t));
        ds.labels.push_back(static_cast<int>(static_cast<uint8_t>(ldata[i])));
    }
    return ds;
}

/// CSV rows of "label,feature,feature,...". Features are taken as-is.
inline Dataset load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open: " + path);
    Dataset ds;
    std::string line;
    int lineno = 0;
    std::size_t width = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<float> row;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                row.push_back(std::stof(cell, &used));
                if (used != cell.size()) throw std::invalid_argument(cell);
            } catch (const std::exception&) {
                throw ParseError(path + ":" + std::to_string(lineno) +
                                 ": bad number '" + cell + "'");
            }
        }
        if (row.size() < 2) {
            throw ParseError(path + ":" + std::to_string(lineno) +
                             ": need a label and at least one feature");
        }
        if (width == 0) width = row.size();
        if (row.size() != width) {
            throw ParseError(path + ":" + std::to_string(lineno) +
                             ": row width differs from first row");
        }
        ds.labels.push_back(static_cast<int>(row[0]));
        std::vector<float> features(row.begin() + 1, row.end());
        const int n_features = static_cast<int>(features.size());
        ds.images.push_back(Tensor({n_features}, std::move(features)));
    }
    if (ds.images.empty()) throw ParseError(path + ": empty dataset");
    return ds;
}

inline void write_idx_images(const std::string& path,
                             const std::vector<Tensor>& images) {
    if (images.empty()) throw ParseError("write_idx_images: no images");
    const int h = images[0].shape[1], w = images[0].shape[2];
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot open for writing: " + path);
    auto put_be = [&](uint32_t v) {
        char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 8), static_cast<char>(v)};
        out.write(b, 4);
    };
    put_be(0x00000803);
    put_be(static_cast<uint32_t>(images.size()));
    put_be(static_cast<uint32_t>(h));
    put_be(static_cast<uint32_t>(w));
    for (const Tensor& t : images) {
        for (float v : t.data) {
            float c = std::min(1.0f, std::max(0.0f, v));
            out.put(static_cast<char>(static_cast<uint8_t>(c * 255.0f + 0.5f)));
        }
    }
}

inline void write_idx_labels(const std::string& path, const std::vector<int>& labels) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot open for writing: " + path);
    auto put_be = [&](uint32_t v) {
        char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 8), static_cast<char>(v)};
        out.write(b, 4);
    };
    put_be(0x00000801);
    put_be(static_cast<uint32_t>(labels.size()));
    for (int l : labels) out.put(static_cast<char>(static_cast<uint8_t>(l)));
}

// ---------------------------------------------------------------------------
// Synthetic digit images: a 7x5 pixel font rendered onto an HxW canvas with
// random shift, intensity jitter, and Gaussian noise. Deterministic per seed.
// ---------------------------------------------------------------------------

namespace detail {

inline const char* digit_glyph(int d) {
    static const char* font[10] = {
        "01110"
        "10001"
        "10011"
        "10101"
        "11001"
        "10001"
        "01110",  // 0
        "00100"
        "01100"
        "00100"
        "00100"
        "00100"
        "00100"
        "01110",  // 1
        "01110"
        "10001"
        "00001"
        "00010"
        "00100"
        "01000"
        "11111",  // 2
        "11111"
        "00010"
        "00100"
        "00010"
        "00001"
        "10001"
        "01110",  // 3
        "00010"
        "00110"
        "01010"
        "10010"
        "11111"
        "00010"
        "00010",  // 4
        "11111"
        "10000"
        "11110"
        "00001"
        "00001"
        "10001"
        "01110",  // 5
        "00110"
        "01000"
        "10000"
        "11110"
        "10001"
        "10001"
        "01110",  // 6
        "11111"
        "00001"
        "00010"
        "00100"
        "01000"
        "01000"
        "01000",  // 7
        "01110"
        "10001"
        "10001"
        "01110"
        "10001"
        "10001"
        "01110",  // 8
        "01110"
        "10001"
        "10001"
        "01111"
        "00001"
        "00010"
        "01100",  // 9
    };
    return font[d];
}

} // namespace detail

/// Deterministic MNIST-like classification set with values in [0, 1].
inline Dataset make_synth_digits(int count, int height, int width, uint64_t seed,
                                 float noise_sigma = 0.25f) {
    if (height < 9 || width < 7) {
        throw std::invalid_argument("make_synth_digits: canvas too small");
    }
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> pick_digit(0, 9);
    std::uniform_real_distribution<float> unit(0.0f, 1.0f);
    std::normal_distribution<float> noise(0.0f, noise_sigma);

    const int sy = std::max(1, (height - 2) / 7);
    const int sx = std::max(1, (width - 2) / 5);
    const int gh = 7 * sy, gw = 5 * sx;
    std::uniform_int_distribution<int> off_y(0, height - gh);
    std::uniform_int_distribution<int> off_x(0, width - gw);

    Dataset ds;
    for (int i = 0; i < count; ++i) {
        int digit = pick_digit(rng);
        const char* glyph = detail::digit_glyph(digit);
        float intensity = 0.6f + 0.4f * unit(rng);
        int oy = off_y(rng), ox = off_x(rng);
        Tensor img({1, height, width});
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                float v = 0.0f;
                int gy = (y - oy) / sy, gx = (x - ox) / sx;
                if (y >= oy && x >= ox && gy < 7 && gx < 5 &&
                    glyph[gy * 5 + gx] == '1') {
                    v = intensity;
                }
                v += noise(rng);
                img.data[chw_index(0, y, x, height, width)] =
                    std::min(1.0f, std::max(0.0f, v));
            }
        }
        ds.images.push_back(std::move(img));
        ds.labels.push_back(digit);
    }
    return ds;
}

} // namespace codenn
