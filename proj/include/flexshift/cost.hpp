#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "flexshift/network.hpp"
#include "flexshift/quantizer.hpp"

namespace flexshift {

struct LayerCost {
    std::string name;
    std::uint64_t weights = 0;
    std::uint64_t macs = 0;  // multiply-accumulates of the unquantized layer per inference
    std::uint64_t shifts = 0;
    std::uint64_t adds = 0;  // adds combining the terms of multi-term weights
    std::uint64_t multiplies = 0;
    std::uint64_t storage_bits = 0;
    double mean_k = 0.0;
};

/// Storage and per-inference operation counts. Only filter weights are counted; biases and
/// batch-norm parameters are excluded. Accumulation adds are common to every variant and left out.
struct CostReport {
    std::uint64_t storage_bits = 0;
    std::uint64_t shift_count = 0;
    std::uint64_t add_count = 0;
    std::uint64_t multiply_count = 0;
    std::uint64_t dsp_proxy = 0;  // multipliers
    std::uint64_t lut_proxy = 0;  // shifters and term adders
    double mean_k = 0.0;          // over all filters; 0 for baselines
    std::vector<LayerCost> layers;

    /// 10^6 bytes.
    double storage_mb() const { return static_cast<double>(storage_bits) / 8e6; }
};

/// 8 * (packed length - header length).
std::uint64_t storage_bits(const QuantizedModel& model);

/// Costs of a shift-based model. Every weight slot of `config` must be present in `model`.
CostReport cost_report(const NetworkConfig& config, const QuantizedModel& model);

/// Costs of a multiplier baseline storing every weight in `weight_bits` bits.
CostReport baseline_cost(const NetworkConfig& config, int weight_bits);

/// Per weight slot: output positions each filter is applied at, and the filter volume.
struct SlotGeometry {
    std::uint64_t positions = 0;
    std::uint64_t volume = 0;
    std::uint64_t filters = 0;
};
std::vector<SlotGeometry> slot_geometry(const NetworkConfig& config);

struct ParetoPoint {
    std::string model_id;
    double lambda0 = 0.0;
    double lambda1 = 0.0;
    std::uint64_t seed = 0;
    double accuracy = 0.0;
    std::uint64_t storage_bits = 0;
    std::uint64_t shifts = 0;
    std::uint64_t adds = 0;
    std::uint64_t multiplies = 0;
    double mean_k = 0.0;
};

enum class CostAxis { storage_bits, shifts };

/// Points not dominated under (higher accuracy, lower cost), sorted by cost; ties keep input order.
std::vector<ParetoPoint> pareto_front(const std::vector<ParetoPoint>& points, CostAxis axis = CostAxis::storage_bits);

void write_pareto_csv(std::ostream& out, const std::vector<ParetoPoint>& points);

}  // namespace flexshift
