#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "codenn/tensor.hpp"

namespace codenn {

inline int ceil_log2(std::size_t k) {
    int bits = 0;
    std::size_t capacity = 1;
    while (capacity < k) {
        capacity <<= 1;
        ++bits;
    }
    return bits;
}

/// Sorted set of representative values. Nearest-neighbor lookups against it
/// quantize a real number to one of K levels addressable with
/// ceil(log2 K) bits. Activation codebooks keep an exact 0 as their first
/// entry so that encoding doubles as the ReLU nonlinearity.
struct Codebook {
    std::vector<float> values;  // strictly ascending, no duplicates
    int bitwidth = 0;           // ceil(log2 values.size())
    bool zero_anchored = false;

    std::size_t size() const { return values.size(); }
    bool empty() const { return values.empty(); }

    float min_value() const { return values.front(); }
    float max_value() const { return values.back(); }

    void refresh_bitwidth() { bitwidth = ceil_log2(values.size()); }

    bool strictly_ascending() const {
        for (std::size_t i = 1; i < values.size(); ++i) {
            if (!(values[i - 1] < values[i])) return false;
        }
        return true;
    }
};

/// Integer index tensor addressing a codebook. Kept next to the codebook it
/// was produced with (see EncodedWeights); decoding takes both.
struct EncodedTensor {
    std::vector<int> shape;
    std::vector<uint32_t> indices;

    std::size_t numel() const { return indices.size(); }
};

struct EncodedWeights {
    Codebook codebook;
    EncodedTensor indices;
    int bits = 0;  // configured encoding bitwidth; codebook.size() <= 2^bits
};

/// Index of the codebook entry nearest to y; exact midpoints resolve to the
/// lower index, which makes the mapping monotone in y.
inline uint32_t encode_value(float y, const Codebook& cb) {
    const auto& c = cb.values;
    auto it = std::lower_bound(c.begin(), c.end(), y);
    if (it == c.begin()) return 0;
    if (it == c.end()) return static_cast<uint32_t>(c.size() - 1);
    std::size_t hi = static_cast<std::size_t>(it - c.begin());
    std::size_t lo = hi - 1;
    return (y - c[lo] <= c[hi] - y) ? static_cast<uint32_t>(lo)
                                    : static_cast<uint32_t>(hi);
}

inline float decode_value(uint32_t idx, const Codebook& cb) {
    if (idx >= cb.values.size()) {
        throw std::out_of_range("decode: index " + std::to_string(idx) +
                                " out of range for codebook of size " +
                                std::to_string(cb.values.size()));
    }
    return cb.values[idx];
}

inline Tensor decode_tensor(const EncodedTensor& enc, const Codebook& cb) {
    Tensor out(enc.shape);
    for (std::size_t i = 0; i < enc.indices.size(); ++i) {
        out.data[i] = decode_value(enc.indices[i], cb);
    }
    return out;
}

namespace detail {

// Assign every value to the nearest center, ties to the lowest center index.
inline void assign_labels(const std::vector<float>& values,
                          const std::vector<double>& centers,
                          std::vector<uint32_t>& labels) {
    for (std::size_t i = 0; i < values.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        uint32_t arg = 0;
        for (std::size_t k = 0; k < centers.size(); ++k) {
            double d = values[i] - centers[k];
            double d2 = d * d;
            if (d2 < best) {
                best = d2;
                arg = static_cast<uint32_t>(k);
            }
        }
        labels[i] = arg;
    }
}

inline std::vector<double> kmeanspp_init(const std::vector<float>& values,
                                         std::size_t k, std::mt19937_64& rng) {
    std::vector<double> centers;
    centers.reserve(k);
    std::uniform_int_distribution<std::size_t> first(0, values.size() - 1);
    centers.push_back(values[first(rng)]);

    std::vector<double> d2(values.size());
    while (centers.size() < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < values.size(); ++i) {
            double d = values[i] - centers.back();
            double dd = d * d;
            if (centers.size() == 1 || dd < d2[i]) d2[i] = dd;
            total += d2[i];
        }
        if (total == 0.0) break;  // every point already coincides with a center
        std::uniform_real_distribution<double> pick(0.0, total);
        double r = pick(rng);
        double acc = 0.0;
        std::size_t chosen = values.size() - 1;
        for (std::size_t i = 0; i < values.size(); ++i) {
            acc += d2[i];
            if (acc >= r) {
                chosen = i;
                break;
            }
        }
        centers.push_back(values[chosen]);
    }
    return centers;
}

} // namespace detail

/// Lloyd iterations seeded with k-means++ under an explicit RNG seed.
/// Empty clusters are dropped, so the returned codebook may hold fewer than
/// K entries; values come out sorted ascending and deduplicated.
/// `sse_log`, when given, records the within-cluster squared error after
/// every assignment step.
inline Codebook kmeans_codebook(const std::vector<float>& values, int k,
                                uint64_t seed,
                                std::vector<double>* sse_log = nullptr) {
    if (k < 1) throw std::invalid_argument("kmeans: K must be >= 1");
    if (values.empty()) throw std::invalid_argument("kmeans: no input values");
    for (float v : values) {
        if (!std::isfinite(v)) throw std::invalid_argument("kmeans: non-finite input");
    }

    std::mt19937_64 rng(seed);
    std::vector<double> centers =
        detail::kmeanspp_init(values, static_cast<std::size_t>(k), rng);

    std::vector<uint32_t> labels(values.size());
    std::vector<uint32_t> prev_labels;
    constexpr int kMaxIters = 300;
    for (int iter = 0; iter < kMaxIters; ++iter) {
        detail::assign_labels(values, centers, labels);
        if (sse_log) {
            double sse = 0.0;
            for (std::size_t i = 0; i < values.size(); ++i) {
                double d = values[i] - centers[labels[i]];
                sse += d * d;
            }
            sse_log->push_back(sse);
        }
        if (labels == prev_labels) break;
        prev_labels = labels;

        std::vector<double> sums(centers.size(), 0.0);
        std::vector<std::size_t> counts(centers.size(), 0);
        for (std::size_t i = 0; i < values.size(); ++i) {
            sums[labels[i]] += values[i];
            counts[labels[i]] += 1;
        }
        std::vector<double> next;
        next.reserve(centers.size());
        for (std::size_t c = 0; c < centers.size(); ++c) {
            if (counts[c] > 0) next.push_back(sums[c] / counts[c]);
        }
        if (next.size() != centers.size()) prev_labels.clear();  // cluster dropped
        centers = std::move(next);
    }

    std::vector<float> out;
    out.reserve(centers.size());
    for (double c : centers) out.push_back(static_cast<float>(c));
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());

    Codebook cb;
    cb.values = std::move(out);
    cb.refresh_bitwidth();
    return cb;
}

/// K-means over every element of W plus nearest-neighbor assignment.
inline std::pair<Codebook, EncodedTensor> encode_weights(const Tensor& w, int k,
                                                         uint64_t seed) {
    if (w.numel() == 0) throw std::invalid_argument("encode_weights: empty tensor");
    Codebook cb = kmeans_codebook(w.data, k, seed);
    EncodedTensor enc;
    enc.shape = w.shape;
    enc.indices.resize(w.numel());
    for (std::size_t i = 0; i < w.numel(); ++i) {
        enc.indices[i] = encode_value(w.data[i], cb);
    }
    return {cb, enc};
}

/// Activation codebook from already-collected positive sample values:
/// K-1 clusters over the positives plus an exact 0 entry in front.
/// Returns the degenerate [0] codebook when no positive samples exist.
inline Codebook codebook_from_positive_samples(const std::vector<float>& positives,
                                               int k, uint64_t seed,
                                               bool* all_zero = nullptr) {
    if (all_zero) *all_zero = positives.empty();
    Codebook cb;
    if (positives.empty()) {
        cb.values = {0.0f};
    } else {
        int clusters = std::max(1, k - 1);
        cb = kmeans_codebook(positives, clusters, seed);
        cb.values.insert(cb.values.begin(), 0.0f);
        // positives are strictly > 0, so their cluster means stay above the anchor
        cb.values.erase(std::unique(cb.values.begin(), cb.values.end()),
                        cb.values.end());
    }
    cb.zero_anchored = true;
    cb.refresh_bitwidth();
    return cb;
}

// ---------------------------------------------------------------------------
// Codebook container file: magic "CDX1", u16 record count, then per record
// u8 role (0 = weights, 1 = activations), u8 bitwidth, u16 K, and K
// little-endian float32 values in ascending order.
// ---------------------------------------------------------------------------

struct CdxRecord {
    uint8_t role = 0;  // 0 = weights, 1 = activations
    uint8_t bitwidth = 0;
    std::vector<float> values;
};

namespace detail {

inline void put_u16(std::string& buf, uint16_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_f32(std::string& buf, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int i = 0; i < 4; ++i) {
        buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
    }
}

inline uint16_t get_u16(const std::string& buf, std::size_t& pos) {
    if (pos + 2 > buf.size()) throw ParseError("codebook file truncated");
    uint16_t v = static_cast<uint8_t>(buf[pos]) |
                 (static_cast<uint16_t>(static_cast<uint8_t>(buf[pos + 1])) << 8);
    pos += 2;
    return v;
}

inline float get_f32(const std::string& buf, std::size_t& pos) {
    if (pos + 4 > buf.size()) throw ParseError("codebook file truncated");
    uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) {
        bits |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
    }
    pos += 4;
    float v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
}

} // namespace detail

inline std::string serialize_cdx(const std::vector<CdxRecord>& records) {
    std::string buf = "CDX1";
    if (records.size() > 0xffff) throw ParseError("too many codebook records");
    detail::put_u16(buf, static_cast<uint16_t>(records.size()));
    for (const auto& r : records) {
        if (r.values.size() > 0xffff) throw ParseError("codebook too large");
        buf.push_back(static_cast<char>(r.role));
        buf.push_back(static_cast<char>(r.bitwidth));
        detail::put_u16(buf, static_cast<uint16_t>(r.values.size()));
        for (float v : r.values) detail::put_f32(buf, v);
    }
    return buf;
}

inline std::vector<CdxRecord> parse_cdx(const std::string& buf) {
    if (buf.size() < 6 || buf.compare(0, 4, "CDX1") != 0) {
        throw ParseError("bad codebook file magic (expected CDX1)");
    }
    std::size_t pos = 4;
    uint16_t count = detail::get_u16(buf, pos);
    std::vector<CdxRecord> records(count);
    for (auto& r : records) {
        if (pos + 2 > buf.size()) throw ParseError("codebook file truncated");
        r.role = static_cast<uint8_t>(buf[pos++]);
        r.bitwidth = static_cast<uint8_t>(buf[pos++]);
        uint16_t k = detail::get_u16(buf, pos);
        r.values.resize(k);
        for (auto& v : r.values) v = detail::get_f32(buf, pos);
        for (std::size_t i = 1; i < r.values.size(); ++i) {
            if (!(r.values[i - 1] < r.values[i])) {
                throw ParseError("codebook values not strictly ascending");
            }
        }
    }
    return records;
}

inline void write_cdx_file(const std::string& path,
                           const std::vector<CdxRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot open for writing: " + path);
    std::string buf = serialize_cdx(records);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline std::vector<CdxRecord> read_cdx_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open: " + path);
    std::string buf((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
    return parse_cdx(buf);
}

} // namespace codenn
