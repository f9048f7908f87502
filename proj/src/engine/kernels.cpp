#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "flexshift/engine.hpp"

namespace flexshift {

template <typename T>
FixedPointTensor quantize_activations(const Tensor<T>& x, int f) {
    if (f < 0 || f > 7) throw ConfigError("activation frac bits must lie in [0, 7], got " + std::to_string(f));
    FixedPointTensor out;
    out.shape = x.shape();
    out.frac_bits = f;
    out.data.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = std::ldexp(static_cast<double>(x[i]), f);
        if (std::isnan(v)) throw NumericError("cannot quantize a NaN activation");
        // nearbyint follows the default round-to-nearest-even mode.
        out.data[i] = saturate_int8(static_cast<std::int64_t>(std::nearbyint(std::clamp(v, -256.0, 256.0))));
    }
    return out;
}

template FixedPointTensor quantize_activations(const Tensor<float>&, int);
template FixedPointTensor quantize_activations(const Tensor<double>&, int);

std::int64_t shift_round_half_even(std::int64_t v, int shift) {
    if (shift <= 0) return v * (std::int64_t{1} << -shift);
    if (shift >= 63) return 0;
    const std::int64_t q = v >> shift;  // floor
    const std::int64_t rem = v - q * (std::int64_t{1} << shift);
    const std::int64_t half = std::int64_t{1} << (shift - 1);
    if (rem > half || (rem == half && (q & 1))) return q + 1;
    return q;
}

std::int8_t requantize_value(std::int64_t v, int shift) {
    if (shift >= 0) return saturate_int8(shift_round_half_even(v, shift));
    if (v == 0) return 0;
    if (-shift > 8) return v < 0 ? -128 : 127;
    return saturate_int8(v * (std::int64_t{1} << -shift));
}

ShiftFilterBank decompose_filters(const QuantizedLayer& layer) {
    ShiftFilterBank bank;
    bank.filters = layer.filters.size();
    bank.volume = layer.shape.empty() || layer.shape[0] == 0 ? 0 : shape_volume(layer.shape) / layer.shape[0];
    bank.e_min = layer.range.e_min;
    bank.banks_of_filter.resize(bank.filters);
    for (std::size_t f = 0; f < bank.filters; ++f) {
        const auto& filter = layer.filters[f];
        if (filter.elements != bank.volume)
            throw ConfigError("filter " + std::to_string(f) + " has " + std::to_string(filter.elements) +
                              " weights, layer shape implies " + std::to_string(bank.volume));
        for (std::size_t j = 0; j < filter.k(); ++j) {
            ShiftBank b;
            b.source_filter = f;
            b.term = j;
            b.weights.resize(bank.volume);
            for (std::size_t e = 0; e < bank.volume; ++e) {
                const auto& code = filter.terms[j][e];
                if (code.is_zero) continue;
                const int shift = code.exponent - bank.e_min;
                if (shift < 0 || shift > 255)
                    throw ConfigError("exponent " + std::to_string(code.exponent) + " lies outside the layer range");
                b.weights[e] = {false, code.sign < 0, static_cast<std::uint8_t>(shift)};
            }
            bank.banks_of_filter[f].push_back(bank.banks.size());
            bank.banks.push_back(std::move(b));
        }
    }
    return bank;
}

std::uint64_t accumulator_bound(const ShiftFilterBank& bank) {
    std::uint64_t worst = 0;
    for (const auto& ids : bank.banks_of_filter) {
        std::uint64_t sum = 0;
        for (std::size_t id : ids)
            for (const auto& w : bank.banks[id].weights) {
                if (w.zero) continue;
                if (w.shift > 40) return std::numeric_limits<std::uint64_t>::max();
                sum += std::uint64_t{128} << w.shift;
            }
        worst = std::max(worst, sum);
    }
    return worst;
}

namespace {

struct Tap {
    std::size_t c, ky, kx;
    std::uint8_t shift;
    bool negative;
};

}  // namespace

Accumulator shift_conv2d(const FixedPointTensor& a, const ShiftFilterBank& bank, const ConvGeometry& g) {
    if (a.shape.size() != 3 || a.shape[0] != g.in_channels)
        throw ConfigError("shift convolution expects a (" + std::to_string(g.in_channels) + ",H,W) input, got " +
                          shape_string(a.shape));
    if (bank.volume != g.in_channels * g.kernel * g.kernel)
        throw ConfigError("filter volume " + std::to_string(bank.volume) + " does not match the convolution geometry");
    if (accumulator_bound(bank) > static_cast<std::uint64_t>(std::numeric_limits<std::int32_t>::max()))
        throw ConfigError("shift amounts allow the int32 accumulator to overflow");
    const std::size_t h = a.shape[1], w = a.shape[2], k = g.kernel;
    if (h + 2 * g.padding < k || w + 2 * g.padding < k || g.stride == 0)
        throw ConfigError("convolution window does not fit the input " + shape_string(a.shape));
    const std::size_t ho = (h + 2 * g.padding - k) / g.stride + 1;
    const std::size_t wo = (w + 2 * g.padding - k) / g.stride + 1;

    Accumulator out;
    out.shape = {bank.banks.size(), ho, wo};
    out.frac_bits = a.frac_bits - bank.e_min;
    out.data.assign(bank.banks.size() * ho * wo, 0);

    std::vector<Tap> taps;
    for (std::size_t b = 0; b < bank.banks.size(); ++b) {
        taps.clear();
        const auto& weights = bank.banks[b].weights;
        for (std::size_t e = 0; e < weights.size(); ++e)
            if (!weights[e].zero) taps.push_back({e / (k * k), (e / k) % k, e % k, weights[e].shift, weights[e].negative});
        std::int32_t* dst = out.data.data() + b * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox) {
                std::int32_t acc = 0;
                for (const Tap& t : taps) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + t.ky) -
                                              static_cast<std::ptrdiff_t>(g.padding);
                    const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + t.kx) -
                                              static_cast<std::ptrdiff_t>(g.padding);
                    if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(h) || ix >= static_cast<std::ptrdiff_t>(w))
                        continue;
                    const std::int32_t v = static_cast<std::int32_t>(
                                               a.data[(t.c * h + static_cast<std::size_t>(iy)) * w +
                                                      static_cast<std::size_t>(ix)])
                                           << t.shift;
                    acc = t.negative ? acc - v : acc + v;
                }
                dst[oy * wo + ox] = acc;
            }
    }
    return out;
}

Accumulator sum_banks(const Accumulator& bank_maps, const ShiftFilterBank& bank) {
    if (bank_maps.shape.size() != 3 || bank_maps.shape[0] != bank.banks.size())
        throw ConfigError("bank maps " + shape_string(bank_maps.shape) + " do not match " +
                          std::to_string(bank.banks.size()) + " banks");
    const std::size_t plane = bank_maps.shape[1] * bank_maps.shape[2];
    Accumulator out;
    out.shape = {bank.filters, bank_maps.shape[1], bank_maps.shape[2]};
    out.frac_bits = bank_maps.frac_bits;
    out.data.assign(bank.filters * plane, 0);
    for (std::size_t f = 0; f < bank.filters; ++f)
        for (std::size_t id : bank.banks_of_filter[f]) {
            const std::int32_t* src = bank_maps.data.data() + id * plane;
            std::int32_t* dst = out.data.data() + f * plane;
            for (std::size_t p = 0; p < plane; ++p) dst[p] += src[p];
        }
    return out;
}

FixedPointTensor requantize(const Accumulator& acc, int f_out) {
    FixedPointTensor out;
    out.shape = acc.shape;
    out.frac_bits = f_out;
    out.data.resize(acc.data.size());
    const int shift = acc.frac_bits - f_out;
    for (std::size_t i = 0; i < acc.data.size(); ++i) out.data[i] = requantize_value(acc.data[i], shift);
    return out;
}

// ---- calibration sidecar ----------------------------------------------------------------

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::uint32_t take(int n) {
        if (pos_ + static_cast<std::size_t>(n) > bytes_.size())
            throw EncodingError("calibration sidecar truncated at byte " + std::to_string(pos_));
        std::uint32_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }
    std::int8_t i8() { return static_cast<std::int8_t>(take(1)); }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> pack_calibration(const Calibration& c) {
    std::vector<std::uint8_t> out{'F', 'X', 'S', 'C'};
    put_u16(out, kCalibrationVersion);
    out.push_back(static_cast<std::uint8_t>(c.input_frac));
    put_u32(out, static_cast<std::uint32_t>(c.slots.size()));
    for (const auto& s : c.slots) {
        out.push_back(static_cast<std::uint8_t>(s.out_frac));
        put_u32(out, static_cast<std::uint32_t>(s.channels.size()));
        for (const auto& ch : s.channels) {
            out.push_back(static_cast<std::uint8_t>(ch.scale_sign));
            out.push_back(static_cast<std::uint8_t>(ch.scale_exp));
            put_u32(out, static_cast<std::uint32_t>(ch.bias));
        }
    }
    return out;
}

Calibration unpack_calibration(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), "FXSC", 4) != 0)
        throw EncodingError("not a calibration sidecar (bad magic)");
    Reader r(bytes.subspan(4));
    const auto version = static_cast<int>(r.take(2));
    if (version != kCalibrationVersion) throw VersionError(version, kCalibrationVersion);
    Calibration c;
    c.input_frac = r.i8();
    const std::uint32_t slots = r.take(4);
    for (std::uint32_t s = 0; s < slots; ++s) {
        SlotCalibration sc;
        sc.out_frac = r.i8();
        const std::uint32_t channels = r.take(4);
        if (static_cast<std::size_t>(channels) * 6 > r.remaining())
            throw EncodingError("calibration sidecar truncated in slot " + std::to_string(s));
        for (std::uint32_t ch = 0; ch < channels; ++ch) {
            ChannelAffine a;
            a.scale_sign = r.i8();
            a.scale_exp = r.i8();
            a.bias = static_cast<std::int32_t>(r.take(4));
            if (a.scale_sign < -1 || a.scale_sign > 1)
                throw EncodingError("calibration scale sign must be -1, 0 or 1");
            sc.channels.push_back(a);
        }
        c.slots.push_back(std::move(sc));
    }
    if (r.remaining() != 0) throw EncodingError("trailing bytes after calibration sidecar");
    return c;
}

}  // namespace flexshift
