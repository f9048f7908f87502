#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "flexshift/nn.hpp"
#include "flexshift/quantizer.hpp"

namespace flexshift {

/// int8 activations; value = data[i] * 2^-frac_bits.
struct FixedPointTensor {
    Shape shape;
    std::vector<std::int8_t> data;
    int frac_bits = 0;
    friend bool operator==(const FixedPointTensor&, const FixedPointTensor&) = default;
};

/// int32 sums; value = data[i] * 2^-frac_bits.
struct Accumulator {
    Shape shape;
    std::vector<std::int32_t> data;
    int frac_bits = 0;
    friend bool operator==(const Accumulator&, const Accumulator&) = default;
};

/// x * 2^f rounded half to even, saturated to [-128, 127]. Requires f in [0, 7].
template <typename T>
FixedPointTensor quantize_activations(const Tensor<T>& x, int f);

/// Nearest integer to v * 2^-shift with ties to even; shift <= 0 is an exact left shift.
std::int64_t shift_round_half_even(std::int64_t v, int shift);

inline std::int8_t saturate_int8(std::int64_t v) {
    return static_cast<std::int8_t>(v < -128 ? -128 : (v > 127 ? 127 : v));
}

/// saturate_int8(v * 2^-shift rounded half to even), without overflow for large left shifts.
std::int8_t requantize_value(std::int64_t v, int shift);

/// One weight of a single-term filter: (-1)^negative * (activation << shift), or nothing.
struct ShiftWeight {
    bool zero = true;
    bool negative = false;
    std::uint8_t shift = 0;  // exponent - e_min
    friend bool operator==(const ShiftWeight&, const ShiftWeight&) = default;
};

struct ShiftBank {
    std::size_t source_filter = 0;
    std::size_t term = 0;
    std::vector<ShiftWeight> weights;
};

/// A layer's filters split into single-term filters; filter i with k_i terms owns k_i banks.
struct ShiftFilterBank {
    std::size_t filters = 0;
    std::size_t volume = 0;  // weights per filter
    int e_min = 0;
    std::vector<ShiftBank> banks;
    std::vector<std::vector<std::size_t>> banks_of_filter;
};

ShiftFilterBank decompose_filters(const QuantizedLayer& layer);

struct ConvGeometry {
    std::size_t in_channels = 0;
    std::size_t kernel = 1;
    std::size_t stride = 1;
    std::size_t padding = 0;
};

/// One output map per bank, (banks, Ho, Wo), from a (C, H, W) input. Products are shifts of the
/// activation integer, negated for negative weights, summed in int32; the result has
/// frac_bits = a.frac_bits - e_min. Throws ConfigError when int32 could overflow.
Accumulator shift_conv2d(const FixedPointTensor& a, const ShiftFilterBank& bank, const ConvGeometry& geometry);

/// Adds the bank maps of each source filter: (filters, Ho, Wo). Pruned filters give zero maps.
Accumulator sum_banks(const Accumulator& bank_maps, const ShiftFilterBank& bank);

/// Single rounding shift to f_out with ties to even, then saturation to int8.
FixedPointTensor requantize(const Accumulator& acc, int f_out);

/// Worst-case |accumulator| of a bank set for int8 inputs.
std::uint64_t accumulator_bound(const ShiftFilterBank& bank);

// ---- calibration and whole-network inference --------------------------------------------

/// Folded per-channel affine map applied to an accumulator: sign * 2^scale_exp * acc + bias,
/// with bias stored at the channel's output frac bits (acc frac - scale_exp).
struct ChannelAffine {
    std::int8_t scale_sign = 1;
    std::int8_t scale_exp = 0;
    std::int32_t bias = 0;
    friend bool operator==(const ChannelAffine&, const ChannelAffine&) = default;
};

/// Per weight slot (canonical slot order): frac bits of the requantized output (unused for
/// projections and the final layer) and one affine entry per output channel.
struct SlotCalibration {
    std::int8_t out_frac = 0;
    std::vector<ChannelAffine> channels;
    friend bool operator==(const SlotCalibration&, const SlotCalibration&) = default;
};

struct Calibration {
    std::int8_t input_frac = 0;
    std::vector<SlotCalibration> slots;
    friend bool operator==(const Calibration&, const Calibration&) = default;
};

inline constexpr std::uint16_t kCalibrationVersion = 1;

/// Sidecar layout, little-endian: "FXSC" | u16 version | i8 input_frac | u32 slots |
/// per slot: i8 out_frac, u32 channels, per channel (i8 scale_sign, i8 scale_exp, i32 bias).
std::vector<std::uint8_t> pack_calibration(const Calibration& c);
Calibration unpack_calibration(std::span<const std::uint8_t> bytes);

/// Negative slope used by the integer engine: the leaky slope rounded to a power of two.
int leaky_shift(double negative_slope);

/// Largest f in [0, 7] with the 99.9th percentile of |values| * 2^f <= 127.
int choose_frac_bits(std::vector<double> magnitudes);

/// Chooses per-layer frac bits on a calibration batch and folds batch-norm running statistics and
/// biases into per-channel power-of-two scales and integer biases.
Calibration calibrate(const NetworkConfig& config, const QuantizedModel& model, const Parameters<float>& params,
                      const Tensor<float>& images, BatchNormOptions bn = {});

/// Double-precision model of the engine: same activation rounding points, power-of-two BN scales
/// and leaky slope, but unrounded biases. Returns scores (N, classes).
Tensor<double> simulate_quantized(const NetworkConfig& config, const QuantizedModel& model,
                                  const Parameters<float>& params, const Calibration& calibration,
                                  const Tensor<float>& images, BatchNormOptions bn = {});

struct EnginePlan {
    NetworkConfig config;
    QuantizedModel model;
    Calibration calibration;
    std::vector<ShiftFilterBank> banks;  // per weight slot
};

/// Validates the network against the engine's fused stage pattern (conv/dense, optional
/// batch-norm, optional skip add, optional leaky ReLU) and checks accumulator headroom.
/// Throws ConfigError on a missing or mismatched calibration or possible overflow.
EnginePlan make_plan(const NetworkConfig& config, const QuantizedModel& model, const Calibration& calibration);
EnginePlan make_plan(const NetworkConfig& config, std::span<const std::uint8_t> packed_weights,
                     std::span<const std::uint8_t> calibration_sidecar);

struct InferenceResult {
    Tensor<double> scores;             // (N, classes)
    std::vector<std::size_t> labels;   // argmax, ties to the lowest index
};

/// Integer inference; identical results for any thread count.
InferenceResult run_inference(const EnginePlan& plan, const Tensor<float>& images, unsigned threads = 1);

}  // namespace flexshift
