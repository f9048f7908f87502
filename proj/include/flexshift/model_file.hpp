#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "flexshift/engine.hpp"
#include "flexshift/nn.hpp"

namespace flexshift {

inline constexpr std::uint16_t kModelFileVersion = 1;

struct Provenance {
    std::string mode;  // train mode
    int k = 0;
    int code_bits = 0;
    std::vector<double> lambda;
    double tau = 0.0;
    std::uint64_t seed = 0;
    std::size_t epochs = 0;
    double accuracy = 0.0;   // test accuracy measured when the file was written
    std::string config_hash;  // git blob SHA-1 of the canonical run config
    friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct ModelFile {
    NetworkConfig network;
    Provenance provenance;
    bool quantized = false;
    // full precision
    Parameters<float> params;
    Tensor<double> thresholds;  // (rows, k), may hold -inf
    // quantized
    std::vector<std::uint8_t> packed_weights;  // the quantizer's packed stream, unchanged
    std::vector<std::uint8_t> calibration;     // engine sidecar
    friend bool operator==(const ModelFile&, const ModelFile&) = default;
};

/// Layout, integers little-endian:
///   "FXSM" | u16 version | u8 kind (0 full precision, 1 quantized)
///   u32 n | n bytes network JSON | u32 n | n bytes provenance JSON
///   kind 0: u32 tensor count, per tensor u8 rank, u32 dims[rank], f32 data; the tensors are
///           weight, bias, gamma, beta, running_mean, running_var of every layer, then of every
///           projection. Then the thresholds as one tensor of f64 in the same layout.
///   kind 1: u32 n | packed weight stream | u32 n | calibration sidecar
std::vector<std::uint8_t> serialize_model(const ModelFile& model);
ModelFile parse_model(std::span<const std::uint8_t> bytes);

void save_model(const std::string& path, const ModelFile& model);
ModelFile load_model(const std::string& path);

std::string network_to_json(const NetworkConfig& network);
NetworkConfig network_from_json(const std::string& text);

}  // namespace flexshift
