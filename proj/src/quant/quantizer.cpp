#include "flexshift/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "flexshift/errors.hpp"

namespace flexshift {

ExponentRange ExponentRange::ending_at(int e_max, int code_bits) {
    ExponentRange r;
    r.code_bits = code_bits;
    r.e_max = e_max;
    r.e_min = e_max - (exponent_count(code_bits) - 1);
    r.validate();
    return r;
}

ExponentRange ExponentRange::for_max_abs(double max_abs, int code_bits) {
    if (!std::isfinite(max_abs)) throw NumericError("non-finite weight magnitude");
    return ending_at(max_abs > 0 ? round_log2(max_abs) : 0, code_bits);
}

void ExponentRange::validate() const {
    if (code_bits < 3 || code_bits > 16)
        throw ConfigError("code_bits must be in [3, 16], got " + std::to_string(code_bits));
    if (e_min >= e_max) throw ConfigError("exponent range needs e_min < e_max");
    if (e_max - e_min + 1 > exponent_count(code_bits))
        throw ConfigError("exponent range [" + std::to_string(e_min) + ", " + std::to_string(e_max) +
                          "] does not fit " + std::to_string(code_bits) + "-bit codes");
}

double PowerOfTwoCode::value() const {
    return is_zero ? 0.0 : sign * std::ldexp(1.0, exponent);
}

int round_log2(double magnitude) {
    // magnitude = m * 2^e with m in [0.5, 1), so log2 = (e - 1) + log2(2m) with log2(2m) in [0, 1).
    // The fractional part reaches one half exactly when 2m >= sqrt(2); no double equals sqrt(2),
    // so comparing against its nearest double is exact.
    int e = 0;
    const double m = std::frexp(magnitude, &e);
    return (e - 1) + (2.0 * m >= M_SQRT2 ? 1 : 0);
}

PowerOfTwoCode round_pow2(double x, const ExponentRange& range) {
    if (x == 0.0) return PowerOfTwoCode::zero();
    const double mag = std::abs(x);
    if (mag < std::ldexp(1.0, range.e_min - 1)) return PowerOfTwoCode::zero();
    const int e = std::clamp(round_log2(mag), range.e_min, range.e_max);
    return PowerOfTwoCode::of(x < 0 ? -1 : 1, e);
}

template <typename T>
std::pair<QuantizedFilter, ResidualTrace<T>> quantize_filter(std::span<const T> w, std::span<const double> thresholds,
                                                             int k, const ExponentRange& range) {
    if (k < 0) throw UsageError("k must be non-negative");
    if (thresholds.size() < static_cast<std::size_t>(k)) throw UsageError("fewer thresholds than rounds");
    QuantizedFilter q;
    q.elements = w.size();
    ResidualTrace<T> trace;
    std::vector<T> r(w.begin(), w.end());
    for (int j = 0; j <= k; ++j) {
        ResidualRound<T> round;
        round.norm = l2_norm(std::span<const T>(r));
        round.residual = r;
        if (j < k && round.norm > thresholds[j]) {
            round.fired = true;
            std::vector<PowerOfTwoCode> term(r.size());
            for (std::size_t e = 0; e < r.size(); ++e) {
                term[e] = round_pow2(static_cast<double>(r[e]), range);
                r[e] = r[e] - static_cast<T>(term[e].value());
            }
            q.terms.push_back(std::move(term));
        }
        trace.rounds.push_back(std::move(round));
    }
    return {std::move(q), std::move(trace)};
}

template <typename T>
int effective_k(std::span<const T> w, std::span<const double> thresholds, int k, const ExponentRange& range) {
    return static_cast<int>(quantize_filter(w, thresholds, k, range).first.k());
}

template <typename T>
std::vector<T> dequantize(const QuantizedFilter& q) {
    std::vector<T> out(q.elements, T(0));
    for (const auto& term : q.terms)
        for (std::size_t e = 0; e < q.elements; ++e) out[e] = out[e] + static_cast<T>(term[e].value());
    return out;
}

template <typename T>
LayerQuantization<T> quantize_layer(const Tensor<T>& weight, std::span<const double> thresholds, int k,
                                    int code_bits) {
    if (weight.rank() < 1 || weight.dim(0) == 0) throw ConfigError("weight tensor has no filters");
    double max_abs = 0.0;
    for (T v : weight.data()) max_abs = std::max(max_abs, std::abs(static_cast<double>(v)));
    LayerQuantization<T> out;
    out.layer.shape = weight.shape();
    out.layer.range = ExponentRange::for_max_abs(max_abs, code_bits);
    const std::size_t filters = weight.dim(0);
    const std::size_t per = weight.size() / filters;
    for (std::size_t f = 0; f < filters; ++f) {
        auto [q, trace] = quantize_filter(std::span<const T>(weight.raw() + f * per, per), thresholds, k,
                                          out.layer.range);
        out.layer.filters.push_back(std::move(q));
        out.traces.push_back(std::move(trace));
    }
    return out;
}

template <typename T>
Tensor<T> dequantize_layer(const QuantizedLayer& layer) {
    Tensor<T> out(layer.shape);
    const std::size_t per = layer.filters.empty() ? 0 : out.size() / layer.filters.size();
    for (std::size_t f = 0; f < layer.filters.size(); ++f) {
        const auto values = dequantize<T>(layer.filters[f]);
        if (values.size() != per) throw EncodingError("filter size does not match layer shape");
        std::copy(values.begin(), values.end(), out.raw() + f * per);
    }
    return out;
}

template <typename T>
QuantizedModel quantize_network(const NetworkConfig& config, const Parameters<T>& params,
                                const std::vector<std::vector<double>>& thresholds, int k, int code_bits) {
    const auto slots = weight_slots(config);
    if (thresholds.size() != 1 && thresholds.size() != slots.size())
        throw ConfigError("need one threshold row or one per weight layer");
    QuantizedModel model;
    for (std::size_t s = 0; s < slots.size(); ++s) {
        const auto& t = thresholds.size() == 1 ? thresholds[0] : thresholds[s];
        model.layers.push_back(quantize_layer(params.weight(slots[s]), t, k, code_bits).layer);
    }
    return model;
}

template <typename T>
void apply_quantized_weights(const NetworkConfig& config, const QuantizedModel& model, Parameters<T>& params) {
    const auto slots = weight_slots(config);
    if (slots.size() != model.layers.size()) throw ConfigError("quantized model does not match network");
    for (std::size_t s = 0; s < slots.size(); ++s) {
        auto& w = params.weight(slots[s]);
        if (w.shape() != model.layers[s].shape)
            throw ConfigError("quantized layer " + slots[s].name + " has shape " + shape_string(model.layers[s].shape) +
                              ", expected " + shape_string(w.shape()));
        w = dequantize_layer<T>(model.layers[s]);
    }
}

#define FLEXSHIFT_INSTANTIATE(T)                                                                                   \
    template std::pair<QuantizedFilter, ResidualTrace<T>> quantize_filter<T>(std::span<const T>,                  \
                                                                             std::span<const double>, int,         \
                                                                             const ExponentRange&);                \
    template int effective_k<T>(std::span<const T>, std::span<const double>, int, const ExponentRange&);         \
    template std::vector<T> dequantize<T>(const QuantizedFilter&);                                               \
    template LayerQuantization<T> quantize_layer<T>(const Tensor<T>&, std::span<const double>, int, int);        \
    template Tensor<T> dequantize_layer<T>(const QuantizedLayer&);                                               \
    template QuantizedModel quantize_network<T>(const NetworkConfig&, const Parameters<T>&,                      \
                                                const std::vector<std::vector<double>>&, int, int);              \
    template void apply_quantized_weights<T>(const NetworkConfig&, const QuantizedModel&, Parameters<T>&);

FLEXSHIFT_INSTANTIATE(float)
FLEXSHIFT_INSTANTIATE(double)

}  // namespace flexshift
