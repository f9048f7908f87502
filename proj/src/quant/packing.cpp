#include <cstring>
#include <string>

#include "flexshift/errors.hpp"
#include "flexshift/quantizer.hpp"

namespace flexshift {
namespace {

constexpr char kMagic[4] = {'F', 'X', 'P', 'W'};

class BitWriter {
public:
    explicit BitWriter(std::vector<std::uint8_t>& out) : out_(out) {}
    void put(std::uint32_t value, int bits) {
        for (int b = bits - 1; b >= 0; --b) {
            if (used_ == 0) out_.push_back(0);
            if ((value >> b) & 1u) out_.back() |= static_cast<std::uint8_t>(0x80u >> used_);
            used_ = (used_ + 1) % 8;
        }
    }
    void align() { used_ = 0; }

private:
    std::vector<std::uint8_t>& out_;
    int used_ = 0;
};

class BitReader {
public:
    BitReader(std::span<const std::uint8_t> in, std::size_t byte_pos) : in_(in), pos_(byte_pos * 8) {}
    std::uint32_t get(int bits) {
        std::uint32_t v = 0;
        for (int b = 0; b < bits; ++b) {
            if (pos_ / 8 >= in_.size()) throw EncodingError("packed stream truncated");
            v = (v << 1) | ((in_[pos_ / 8] >> (7 - pos_ % 8)) & 1u);
            ++pos_;
        }
        return v;
    }
    std::size_t align() {
        pos_ = (pos_ + 7) / 8 * 8;
        return pos_ / 8;
    }

private:
    std::span<const std::uint8_t> in_;
    std::size_t pos_;
};

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(static_cast<std::uint64_t>(v) >> (8 * i)));
}

template <typename U>
U get_le(std::span<const std::uint8_t> in, std::size_t& pos) {
    if (pos + sizeof(U) > in.size()) throw EncodingError("packed stream header truncated");
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(in[pos + i]) << (8 * i);
    pos += sizeof(U);
    return static_cast<U>(v);
}

struct TableEntry {
    std::uint32_t filters;
    Shape shape;
    ExponentRange range;
};

std::vector<TableEntry> read_table(std::span<const std::uint8_t> stream, std::size_t& pos) {
    if (stream.size() < 4 || std::memcmp(stream.data(), kMagic, 4) != 0)
        throw EncodingError("not a packed weight stream");
    pos = 4;
    const auto version = get_le<std::uint16_t>(stream, pos);
    if (version != kPackedWeightsVersion) throw VersionError(version, kPackedWeightsVersion);
    const auto count = get_le<std::uint32_t>(stream, pos);
    std::vector<TableEntry> table;
    for (std::uint32_t l = 0; l < count; ++l) {
        TableEntry e;
        e.filters = get_le<std::uint32_t>(stream, pos);
        const auto rank = get_le<std::uint8_t>(stream, pos);
        for (int d = 0; d < rank; ++d) e.shape.push_back(get_le<std::uint32_t>(stream, pos));
        const int e_max = get_le<std::int8_t>(stream, pos);
        const int code_bits = get_le<std::uint8_t>(stream, pos);
        try {
            e.range = ExponentRange::ending_at(e_max, code_bits);
        } catch (const ConfigError& err) {
            throw EncodingError(std::string("layer ") + std::to_string(l) + ": " + err.what());
        }
        if (e.shape.empty() || e.shape[0] != e.filters)
            throw EncodingError("layer " + std::to_string(l) + ": filter count does not match shape");
        table.push_back(std::move(e));
    }
    return table;
}

}  // namespace

std::vector<std::uint8_t> pack_weights(const QuantizedModel& model) {
    std::vector<std::uint8_t> out(kMagic, kMagic + 4);
    put_le<std::uint16_t>(out, kPackedWeightsVersion);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.layers.size()));
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const auto& layer = model.layers[l];
        const auto& r = layer.range;
        if (ExponentRange::ending_at(r.e_max, r.code_bits) != r)
            throw EncodingError("layer " + std::to_string(l) + ": range is not the full code window ending at e_max");
        if (r.e_max < -128 || r.e_max > 127) throw EncodingError("e_max does not fit in a signed byte");
        if (layer.shape.empty() || layer.shape.size() > 255 || layer.shape[0] != layer.filters.size())
            throw EncodingError("layer " + std::to_string(l) + ": shape does not match filter list");
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(layer.filters.size()));
        put_le<std::uint8_t>(out, static_cast<std::uint8_t>(layer.shape.size()));
        for (auto d : layer.shape) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        put_le<std::int8_t>(out, static_cast<std::int8_t>(r.e_max));
        put_le<std::uint8_t>(out, static_cast<std::uint8_t>(r.code_bits));
    }
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const auto& layer = model.layers[l];
        const auto& r = layer.range;
        const std::size_t per = layer.filters.empty() ? 0 : shape_volume(layer.shape) / layer.filters.size();
        BitWriter bits(out);
        for (const auto& f : layer.filters) {
            if (f.k() > 3) throw EncodingError("k_i = " + std::to_string(f.k()) + " does not fit in 2 bits");
            bits.put(static_cast<std::uint32_t>(f.k()), 2);
        }
        for (const auto& f : layer.filters) {
            if (f.elements != per) throw EncodingError("filter size does not match layer shape");
            for (const auto& term : f.terms) {
                if (term.size() != per) throw EncodingError("term size does not match filter size");
                for (const auto& c : term) {
                    std::uint32_t code = 0;
                    if (!c.is_zero) {
                        if (c.exponent < r.e_min || c.exponent > r.e_max)
                            throw EncodingError("exponent " + std::to_string(c.exponent) + " outside [" +
                                                std::to_string(r.e_min) + ", " + std::to_string(r.e_max) + "]");
                        code = (c.sign < 0 ? 1u << (r.code_bits - 1) : 0u) |
                               static_cast<std::uint32_t>(c.exponent - r.e_min + 1);
                    }
                    bits.put(code, r.code_bits);
                }
            }
        }
        bits.align();
    }
    return out;
}

QuantizedModel unpack_weights(std::span<const std::uint8_t> stream) {
    std::size_t pos = 0;
    const auto table = read_table(stream, pos);
    QuantizedModel model;
    for (const auto& entry : table) {
        QuantizedLayer layer;
        layer.shape = entry.shape;
        layer.range = entry.range;
        const int cb = entry.range.code_bits;
        const std::size_t per = entry.filters ? shape_volume(entry.shape) / entry.filters : 0;
        BitReader bits(stream, pos);
        std::vector<std::size_t> ks;
        for (std::uint32_t f = 0; f < entry.filters; ++f) ks.push_back(bits.get(2));
        for (std::uint32_t f = 0; f < entry.filters; ++f) {
            QuantizedFilter q;
            q.elements = per;
            for (std::size_t j = 0; j < ks[f]; ++j) {
                std::vector<PowerOfTwoCode> term(per);
                for (auto& c : term) {
                    const std::uint32_t code = bits.get(cb);
                    const bool negative = (code >> (cb - 1)) & 1u;
                    const std::uint32_t mag = code & ((1u << (cb - 1)) - 1u);
                    if (mag == 0) {
                        if (negative) throw EncodingError("negative zero code");
                        c = PowerOfTwoCode::zero();
                    } else {
                        c = PowerOfTwoCode::of(negative ? -1 : 1, entry.range.e_min + static_cast<int>(mag) - 1);
                    }
                }
                q.terms.push_back(std::move(term));
            }
            layer.filters.push_back(std::move(q));
        }
        pos = bits.align();
        model.layers.push_back(std::move(layer));
    }
    if (pos != stream.size()) throw EncodingError("trailing bytes after packed weights");
    return model;
}

std::size_t packed_header_bytes(std::span<const std::uint8_t> stream) {
    std::size_t pos = 0;
    read_table(stream, pos);
    return pos;
}

}  // namespace flexshift
