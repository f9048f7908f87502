#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "flexshift/nn.hpp"
#include "flexshift/tensor.hpp"

namespace flexshift {

/// Exponents representable by a signed power-of-two code of `code_bits` bits: one sign bit,
/// and (code_bits - 1) bits selecting either zero or one of 2^(code_bits-1) - 1 exponents
/// ending at e_max.
struct ExponentRange {
    int e_max = 0;
    int e_min = -6;
    int code_bits = 4;

    static int exponent_count(int code_bits) { return (1 << (code_bits - 1)) - 1; }

    /// Range ending at the rounded log2 of the largest magnitude in a layer.
    static ExponentRange for_max_abs(double max_abs, int code_bits = 4);
    static ExponentRange ending_at(int e_max, int code_bits = 4);

    /// Throws ConfigError unless e_min < e_max and the exponents plus zero fit the code.
    void validate() const;

    friend bool operator==(const ExponentRange&, const ExponentRange&) = default;
};

struct PowerOfTwoCode {
    std::int8_t sign = 1;
    std::int16_t exponent = 0;
    bool is_zero = true;

    static PowerOfTwoCode zero() { return {}; }
    static PowerOfTwoCode of(int sign, int exponent) {
        return {static_cast<std::int8_t>(sign < 0 ? -1 : 1), static_cast<std::int16_t>(exponent), false};
    }
    double value() const;

    friend bool operator==(const PowerOfTwoCode&, const PowerOfTwoCode&) = default;
};

/// [log2 m] with ties (fractional part exactly one half) rounded up. Requires m > 0 and finite.
int round_log2(double magnitude);

/// Nearest signed power of two in the log domain, clamped to the range. Zero and values below
/// 2^(e_min - 1) map to the zero code.
PowerOfTwoCode round_pow2(double x, const ExponentRange& range);

struct QuantizedFilter {
    std::size_t elements = 0;
    std::vector<std::vector<PowerOfTwoCode>> terms;  // k_i tensors, each `elements` long

    std::size_t k() const { return terms.size(); }
    friend bool operator==(const QuantizedFilter&, const QuantizedFilter&) = default;
};

template <typename T>
struct ResidualRound {
    std::vector<T> residual;  // r_{i,j}
    double norm = 0.0;        // ||r_{i,j}||_2
    bool fired = false;       // gate j opened; always false for the final round
};

/// rounds[j] holds r_{i,j} for j = 0..k; rounds[k] is the residual left after quantization.
template <typename T>
struct ResidualTrace {
    std::vector<ResidualRound<T>> rounds;
};

/// Threshold-gated greedy quantization of one filter:
///   r_0 = w,  term_j = R(r_j) kept iff ||r_j||_2 > t_j,  r_{j+1} = r_j - kept_j * term_j.
/// Every round is gated independently, so a closed gate does not stop later rounds.
template <typename T>
std::pair<QuantizedFilter, ResidualTrace<T>> quantize_filter(std::span<const T> w, std::span<const double> thresholds,
                                                             int k, const ExponentRange& range);

/// Number of gates that fire for this filter.
template <typename T>
int effective_k(std::span<const T> w, std::span<const double> thresholds, int k, const ExponentRange& range);

template <typename T>
std::vector<T> dequantize(const QuantizedFilter& q);

struct QuantizedLayer {
    Shape shape;  // weight tensor shape; shape[0] filters
    ExponentRange range;
    std::vector<QuantizedFilter> filters;

    friend bool operator==(const QuantizedLayer&, const QuantizedLayer&) = default;
};

struct QuantizedModel {
    std::vector<QuantizedLayer> layers;
    friend bool operator==(const QuantizedModel&, const QuantizedModel&) = default;
};

template <typename T>
struct LayerQuantization {
    QuantizedLayer layer;
    std::vector<ResidualTrace<T>> traces;  // one per filter
};

/// Quantizes every filter (leading index) of a weight tensor with a range derived from its
/// largest magnitude.
template <typename T>
LayerQuantization<T> quantize_layer(const Tensor<T>& weight, std::span<const double> thresholds, int k,
                                    int code_bits = 4);

template <typename T>
Tensor<T> dequantize_layer(const QuantizedLayer& layer);

/// Quantizes every weight slot of a network. `thresholds` holds one row per slot, or a single
/// row shared by all slots.
template <typename T>
QuantizedModel quantize_network(const NetworkConfig& config, const Parameters<T>& params,
                                const std::vector<std::vector<double>>& thresholds, int k, int code_bits = 4);

/// Replaces every weight slot by its dequantized value.
template <typename T>
void apply_quantized_weights(const NetworkConfig& config, const QuantizedModel& model, Parameters<T>& params);

/// Packed weight stream, integers little-endian:
///   "FXPW" | u16 version | u32 layer count
///   per layer: u32 filter count, u8 rank, u32 dims[rank], i8 e_max, u8 code_bits
///   per layer payload, MSB-first bits, zero-padded to a byte:
///     2-bit k_i for every filter, then codes filter-major, term-major, element-major.
///   A code is a sign bit (1 = negative) followed by (code_bits - 1) bits: 0 for zero,
///   c >= 1 for exponent e_min + c - 1.
std::vector<std::uint8_t> pack_weights(const QuantizedModel& model);
QuantizedModel unpack_weights(std::span<const std::uint8_t> stream);

/// Bytes of magic, version and layer table at the front of a packed stream.
std::size_t packed_header_bytes(std::span<const std::uint8_t> stream);

inline constexpr std::uint16_t kPackedWeightsVersion = 1;

}  // namespace flexshift
