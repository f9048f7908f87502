#include "flexshift/cost.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>

#include "flexshift/errors.hpp"

namespace flexshift {

std::uint64_t storage_bits(const QuantizedModel& model) {
    const auto bytes = pack_weights(model);
    return 8 * static_cast<std::uint64_t>(bytes.size() - packed_header_bytes(bytes));
}

std::vector<SlotGeometry> slot_geometry(const NetworkConfig& config) {
    const auto shapes = infer_shapes(config);
    const auto projections = projection_specs(config);
    std::vector<SlotGeometry> out;
    for (const auto& slot : weight_slots(config)) {
        SlotGeometry g;
        if (slot.owner == WeightSlot::Owner::layer) {
            const auto& spec = config.layers[slot.index];
            const Shape& y = shapes[slot.index + 1];
            g.filters = spec.out_channels;
            if (spec.kind == LayerKind::conv2d) {
                g.positions = y[1] * y[2];
                g.volume = spec.in_channels * spec.kernel * spec.kernel;
            } else {
                g.positions = 1;
                g.volume = spec.in_channels;
            }
        } else {
            const auto& p = *projections[slot.index];
            const Shape& y = shapes[config.skips[slot.index].to + 1];
            g.filters = p.out_channels;
            g.positions = y[1] * y[2];
            g.volume = p.in_channels;
        }
        out.push_back(g);
    }
    return out;
}

CostReport cost_report(const NetworkConfig& config, const QuantizedModel& model) {
    const auto slots = weight_slots(config);
    const auto geometry = slot_geometry(config);
    if (model.layers.size() != slots.size())
        throw ConfigError("quantized model has " + std::to_string(model.layers.size()) + " layers, network needs " +
                          std::to_string(slots.size()));
    CostReport report;
    std::uint64_t filters = 0, k_sum = 0;
    for (std::size_t s = 0; s < slots.size(); ++s) {
        const auto& layer = model.layers[s];
        const auto& g = geometry[s];
        if (layer.filters.size() != g.filters || shape_volume(layer.shape) != g.filters * g.volume)
            throw ConfigError("quantized layer " + slots[s].name + " does not match the network");
        LayerCost lc;
        lc.name = slots[s].name;
        lc.weights = g.filters * g.volume;
        lc.macs = lc.weights * g.positions;
        std::uint64_t layer_k = 0;
        for (const auto& f : layer.filters) {
            const std::uint64_t k = f.k();
            layer_k += k;
            lc.shifts += k * g.positions * g.volume;
            lc.adds += (k > 0 ? k - 1 : 0) * g.positions * g.volume;
        }
        QuantizedModel single;
        single.layers.push_back(layer);
        lc.storage_bits = storage_bits(single);
        lc.mean_k = static_cast<double>(layer_k) / static_cast<double>(g.filters);
        filters += g.filters;
        k_sum += layer_k;
        report.storage_bits += lc.storage_bits;
        report.shift_count += lc.shifts;
        report.add_count += lc.adds;
        report.layers.push_back(std::move(lc));
    }
    report.lut_proxy = report.shift_count + report.add_count;
    report.mean_k = filters ? static_cast<double>(k_sum) / static_cast<double>(filters) : 0.0;
    return report;
}

CostReport baseline_cost(const NetworkConfig& config, int weight_bits) {
    if (weight_bits <= 0) throw ConfigError("weight_bits must be positive");
    const auto slots = weight_slots(config);
    const auto geometry = slot_geometry(config);
    CostReport report;
    for (std::size_t s = 0; s < slots.size(); ++s) {
        const auto& g = geometry[s];
        LayerCost lc;
        lc.name = slots[s].name;
        lc.weights = g.filters * g.volume;
        lc.macs = lc.weights * g.positions;
        lc.multiplies = lc.macs;
        lc.storage_bits = lc.weights * static_cast<std::uint64_t>(weight_bits);
        report.storage_bits += lc.storage_bits;
        report.multiply_count += lc.multiplies;
        report.layers.push_back(std::move(lc));
    }
    report.dsp_proxy = report.multiply_count;
    return report;
}

std::vector<ParetoPoint> pareto_front(const std::vector<ParetoPoint>& points, CostAxis axis) {
    if (points.empty()) throw UsageError("pareto_front needs at least one point");
    auto cost = [axis](const ParetoPoint& p) { return axis == CostAxis::storage_bits ? p.storage_bits : p.shifts; };
    std::vector<std::size_t> order(points.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    // Cost ascending, accuracy descending within equal cost.
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (cost(points[a]) != cost(points[b])) return cost(points[a]) < cost(points[b]);
        return points[a].accuracy > points[b].accuracy;
    });
    std::vector<ParetoPoint> front;
    double best = -1.0;
    std::uint64_t best_cost = 0;
    for (std::size_t i : order) {
        const auto& p = points[i];
        // Dominated when an earlier point is at least as accurate and either cheaper or more accurate.
        const bool dominated =
            !front.empty() && (best > p.accuracy || (best == p.accuracy && best_cost < cost(p)));
        if (dominated) continue;
        front.push_back(p);
        if (p.accuracy > best) {
            best = p.accuracy;
            best_cost = cost(p);
        }
    }
    return front;
}

void write_pareto_csv(std::ostream& out, const std::vector<ParetoPoint>& points) {
    out << "model_id,lambda0,lambda1,seed,accuracy,storage_bits,shifts,adds,multiplies,mean_k\n";
    char buf[128];
    for (const auto& p : points) {
        out << p.model_id;
        std::snprintf(buf, sizeof buf, ",%.6g,%.6g,", p.lambda0, p.lambda1);
        out << buf << p.seed;
        std::snprintf(buf, sizeof buf, ",%.6f,", p.accuracy);
        out << buf << p.storage_bits << ',' << p.shifts << ',' << p.adds << ',' << p.multiplies;
        std::snprintf(buf, sizeof buf, ",%.6f\n", p.mean_k);
        out << buf;
    }
}

}  // namespace flexshift
