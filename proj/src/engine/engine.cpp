#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <thread>

#include "flexshift/engine.hpp"

namespace flexshift {

int leaky_shift(double negative_slope) {
    if (!(negative_slope > 0.0 && negative_slope < 1.0))
        throw ConfigError("the integer engine needs a leaky slope in (0, 1), got " + std::to_string(negative_slope));
    const int shift = -round_log2(negative_slope);
    return std::max(shift, 1);
}

int choose_frac_bits(std::vector<double> magnitudes) {
    if (magnitudes.empty()) return 7;
    for (double& m : magnitudes) m = std::abs(m);
    const auto rank = static_cast<std::size_t>(std::ceil(0.999 * static_cast<double>(magnitudes.size()))) - 1;
    std::nth_element(magnitudes.begin(), magnitudes.begin() + static_cast<std::ptrdiff_t>(rank), magnitudes.end());
    const double p = magnitudes[rank];
    for (int f = 7; f > 0; --f)
        if (std::ldexp(p, f) <= 127.0) return f;
    return 0;
}

namespace {

// One fused integer stage: conv/dense [+ batch-norm] [+ skip add] [+ leaky ReLU] -> int8, or a
// pool / flatten on int8 data.
struct Stage {
    enum class Kind { fused, pool, flatten } kind = Kind::fused;
    std::size_t first = 0;  // first layer covered
    std::size_t layer = 0;
    std::size_t slot = 0;
    std::optional<std::size_t> bn;
    std::optional<std::size_t> skip;
    std::optional<std::size_t> projection_slot;
    int leaky = 0;  // right shift for negative values; 0 when absent
    bool final = false;
    bool dense = false;
    ConvGeometry geometry;
    ConvGeometry projection_geometry;
    std::size_t pool = 2;
};

struct StagePlan {
    std::vector<Stage> stages;
    std::vector<Shape> expected_weight_shapes;  // per slot
    std::vector<bool> saved_inputs;             // per layer: input needed by a skip
};

StagePlan build_stages(const NetworkConfig& config) {
    const auto shapes = infer_shapes(config);
    const auto projections = projection_specs(config);
    const auto slots = weight_slots(config);
    std::map<std::size_t, std::size_t> layer_slot, projection_slot;
    StagePlan plan;
    for (std::size_t s = 0; s < slots.size(); ++s) {
        if (slots[s].owner == WeightSlot::Owner::layer) {
            layer_slot[slots[s].index] = s;
            const auto& l = config.layers[slots[s].index];
            plan.expected_weight_shapes.push_back(l.kind == LayerKind::dense
                                                      ? Shape{l.out_channels, l.in_channels}
                                                      : Shape{l.out_channels, l.in_channels, l.kernel, l.kernel});
        } else {
            projection_slot[slots[s].index] = s;
            const auto& p = *projections[slots[s].index];
            plan.expected_weight_shapes.push_back({p.out_channels, p.in_channels, 1, 1});
        }
    }

    const std::size_t L = config.layers.size();
    plan.saved_inputs.assign(L, false);
    std::vector<bool> stage_start(L, false);
    for (std::size_t i = 0; i < L;) {
        const auto& l = config.layers[i];
        Stage st;
        st.first = i;
        stage_start[i] = true;
        if (l.has_weights()) {
            st.layer = i;
            st.slot = layer_slot.at(i);
            st.dense = l.kind == LayerKind::dense;
            st.geometry = st.dense ? ConvGeometry{l.in_channels, 1, 1, 0}
                                   : ConvGeometry{l.in_channels, l.kernel, l.stride, l.padding};
            std::size_t j = i + 1;
            if (j < L && config.layers[j].kind == LayerKind::batchnorm) st.bn = j++;
            for (std::size_t s = 0; s < config.skips.size(); ++s) {
                const auto to = config.skips[s].to;
                if (to == j - 1) {
                    if (st.skip) throw ConfigError("the integer engine supports one skip connection per stage");
                    st.skip = s;
                    if (projections[s]) {
                        st.projection_slot = projection_slot.at(s);
                        st.projection_geometry = {projections[s]->in_channels, 1, projections[s]->stride, 0};
                    }
                } else if (to >= i && to < j - 1) {
                    throw ConfigError("skip " + std::to_string(s) + " must join after the batch-norm of layer " +
                                      std::to_string(i));
                }
            }
            if (j < L && config.layers[j].kind == LayerKind::leaky_relu) st.leaky = leaky_shift(config.layers[j++].negative_slope);
            st.final = j == L;
            i = j;
        } else if (l.kind == LayerKind::maxpool) {
            st.kind = Stage::Kind::pool;
            st.pool = l.pool;
            ++i;
        } else if (l.kind == LayerKind::flatten) {
            st.kind = Stage::Kind::flatten;
            ++i;
        } else {
            throw ConfigError("layer " + std::to_string(i) + " (" + to_string(l.kind) +
                              ") must follow a conv or dense layer in the integer engine");
        }
        plan.stages.push_back(st);
    }
    for (std::size_t s = 0; s < config.skips.size(); ++s) {
        const auto& skip = config.skips[s];
        const bool joined = std::any_of(plan.stages.begin(), plan.stages.end(),
                                        [&](const Stage& st) { return st.skip == s; });
        if (!joined) throw ConfigError("skip " + std::to_string(s) + " does not end at a conv stage");
        if (!stage_start[skip.from])
            throw ConfigError("skip " + std::to_string(s) + " must start at a stage boundary");
        plan.saved_inputs[skip.from] = true;
    }
    if (plan.stages.empty() || !plan.stages.back().final || plan.stages.back().kind != Stage::Kind::fused)
        throw ConfigError("the integer engine needs the network to end with a conv or dense layer");
    if (shape_volume(shapes.back()) != config.classes)
        throw ConfigError("network output " + shape_string(shapes.back()) + " does not match " +
                          std::to_string(config.classes) + " classes");
    return plan;
}

// Power-of-two scale and unrounded bias of each output channel of a fused stage.
struct FoldedChannel {
    int sign = 1;
    int exp = 0;
    double bias = 0.0;
};

std::vector<FoldedChannel> fold_channels(const LayerParams<float>& conv, const LayerParams<float>* bn,
                                         std::size_t channels, BatchNormOptions options) {
    std::vector<FoldedChannel> out(channels);
    for (std::size_t c = 0; c < channels; ++c) {
        const double b = conv.bias.empty() ? 0.0 : conv.bias[c];
        if (!bn) {
            out[c].bias = b;
            continue;
        }
        const double scale = bn->gamma[c] / std::sqrt(static_cast<double>(bn->running_var[c]) + options.eps);
        FoldedChannel& f = out[c];
        if (scale == 0.0 || !std::isfinite(scale)) {
            if (!std::isfinite(scale)) throw NumericError("batch-norm scale is not finite");
            f.sign = 0;
        } else {
            f.sign = scale < 0 ? -1 : 1;
            f.exp = round_log2(std::abs(scale));
            if (f.exp < -60 || f.exp > 60) throw ConfigError("batch-norm scale 2^" + std::to_string(f.exp) + " is out of range");
        }
        f.bias = bn->beta[c] + f.sign * std::ldexp(1.0, f.exp) * (b - bn->running_mean[c]);
    }
    return out;
}

// Double convolution of one (C,H,W) sample with dequantized filters (O, volume).
std::vector<double> conv_double(const std::vector<double>& x, const Shape& shape, const Tensor<double>& w,
                                const ConvGeometry& g, Shape& out_shape) {
    const std::size_t h = shape[1], wd = shape[2], k = g.kernel, o = w.dim(0);
    const std::size_t ho = (h + 2 * g.padding - k) / g.stride + 1;
    const std::size_t wo = (wd + 2 * g.padding - k) / g.stride + 1;
    out_shape = {o, ho, wo};
    std::vector<double> y(o * ho * wo, 0.0);
    const std::size_t vol = g.in_channels * k * k;
    for (std::size_t f = 0; f < o; ++f)
        for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox) {
                double acc = 0.0;
                for (std::size_t e = 0; e < vol; ++e) {
                    const double wv = w[f * vol + e];
                    if (wv == 0.0) continue;
                    const std::size_t c = e / (k * k), ky = (e / k) % k, kx = e % k;
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.padding);
                    const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.padding);
                    if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(h) || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
                    acc += wv * x[(c * h + static_cast<std::size_t>(iy)) * wd + static_cast<std::size_t>(ix)];
                }
                y[(f * ho + oy) * wo + ox] = acc;
            }
    return y;
}

double round_to_grid(double v, int f) {
    const double q = std::nearbyint(std::clamp(std::ldexp(v, f), -256.0, 256.0));
    return std::ldexp(static_cast<double>(saturate_int8(static_cast<std::int64_t>(q))), -f);
}

const LayerParams<float>& slot_params(const NetworkConfig& config, const Parameters<float>& params, std::size_t slot) {
    const auto slots = weight_slots(config);
    const auto& s = slots.at(slot);
    return s.owner == WeightSlot::Owner::layer ? params.layers.at(s.index) : params.projections.at(s.index);
}

void check_model(const StagePlan& plan, const QuantizedModel& model) {
    if (model.layers.size() != plan.expected_weight_shapes.size())
        throw ConfigError("quantized model has " + std::to_string(model.layers.size()) + " layers, network has " +
                          std::to_string(plan.expected_weight_shapes.size()) + " weight slots");
    for (std::size_t s = 0; s < model.layers.size(); ++s)
        if (model.layers[s].shape != plan.expected_weight_shapes[s])
            throw ConfigError("quantized layer " + std::to_string(s) + " has shape " +
                              shape_string(model.layers[s].shape) + ", expected " +
                              shape_string(plan.expected_weight_shapes[s]));
}

// Runs the double model over a batch. When `calibrating`, chooses each stage's output frac
// bits from the batch and writes the folded channels into `cal`.
Tensor<double> simulate(const NetworkConfig& config, const QuantizedModel& model, const Parameters<float>& params,
                        Calibration& cal, const Tensor<float>& images, BatchNormOptions bn, bool calibrating) {
    const StagePlan plan = build_stages(config);
    check_model(plan, model);
    const std::size_t n = images.rank() == 0 ? 0 : images.dim(0);
    if (images.rank() != 4 || Shape(images.shape().begin() + 1, images.shape().end()) != config.input_shape)
        throw ConfigError("images " + shape_string(images.shape()) + " do not match the network input " +
                          shape_string(config.input_shape));
    const std::size_t slot_count = model.layers.size();
    std::vector<Tensor<double>> weights;
    for (const auto& layer : model.layers) weights.push_back(dequantize_layer<double>(layer));

    std::vector<std::vector<FoldedChannel>> folded(slot_count);
    for (const auto& st : plan.stages) {
        if (st.kind != Stage::Kind::fused) continue;
        const auto& lp = params.layers.at(st.layer);
        folded[st.slot] = fold_channels(lp, st.bn ? &params.layers.at(*st.bn) : nullptr,
                                        model.layers[st.slot].shape[0], bn);
        if (st.projection_slot)
            folded[*st.projection_slot] = fold_channels(slot_params(config, params, *st.projection_slot), nullptr,
                                                        model.layers[*st.projection_slot].shape[0], bn);
    }

    if (calibrating) {
        cal = Calibration{};
        cal.slots.resize(slot_count);
        std::vector<double> mags(images.data().begin(), images.data().end());
        cal.input_frac = static_cast<std::int8_t>(choose_frac_bits(std::move(mags)));
    } else if (cal.slots.size() != slot_count) {
        throw ConfigError("calibration covers " + std::to_string(cal.slots.size()) + " weight slots, model has " +
                          std::to_string(slot_count));
    }

    const std::size_t sample = shape_volume(config.input_shape);
    std::vector<std::vector<double>> act(n);
    for (std::size_t i = 0; i < n; ++i) {
        act[i].resize(sample);
        for (std::size_t e = 0; e < sample; ++e) act[i][e] = round_to_grid(images[i * sample + e], cal.input_frac);
    }
    Shape shape = config.input_shape;
    int frac = cal.input_frac;
    std::map<std::size_t, std::pair<std::vector<std::vector<double>>, std::pair<Shape, int>>> saved;
    Tensor<double> scores({n, config.classes});

    // Integer bias of a channel: the folded bias on the channel's output grid.
    auto int_bias = [](double bias, int out_frac_bits) {
        const double v = std::nearbyint(std::ldexp(bias, out_frac_bits));
        if (!(std::abs(v) <= static_cast<double>(std::numeric_limits<std::int32_t>::max())))
            throw ConfigError("folded bias does not fit an int32 at 2^-" + std::to_string(out_frac_bits));
        return static_cast<std::int32_t>(v);
    };

    for (const auto& st : plan.stages) {
        if (plan.saved_inputs[st.first]) saved[st.first] = {act, {shape, frac}};
        if (st.kind == Stage::Kind::pool) {
            const std::size_t c = shape[0], h = shape[1], w = shape[2], k = st.pool, ho = h / k, wo = w / k;
            for (auto& a : act) {
                std::vector<double> y(c * ho * wo);
                for (std::size_t cc = 0; cc < c; ++cc)
                    for (std::size_t oy = 0; oy < ho; ++oy)
                        for (std::size_t ox = 0; ox < wo; ++ox) {
                            double best = -std::numeric_limits<double>::infinity();
                            for (std::size_t dy = 0; dy < k; ++dy)
                                for (std::size_t dx = 0; dx < k; ++dx)
                                    best = std::max(best, a[(cc * h + oy * k + dy) * w + ox * k + dx]);
                            y[(cc * ho + oy) * wo + ox] = best;
                        }
                a = std::move(y);
            }
            shape = {c, ho, wo};
            continue;
        }
        if (st.kind == Stage::Kind::flatten) {
            shape = {shape_volume(shape)};
            continue;
        }

        const auto& ql = model.layers[st.slot];
        const std::size_t channels = ql.shape[0];
        const Shape in_shape = st.dense ? Shape{shape_volume(shape), 1, 1} : shape;
        auto& sc = cal.slots[st.slot];
        if (calibrating) {
            sc.channels.resize(channels);
            const int acc_frac = frac - ql.range.e_min;
            for (std::size_t c = 0; c < channels; ++c) {
                const auto& f = folded[st.slot][c];
                sc.channels[c] = {static_cast<std::int8_t>(f.sign), static_cast<std::int8_t>(f.exp),
                                  int_bias(f.bias, acc_frac - f.exp)};
            }
            if (st.projection_slot) {
                const auto& pl = model.layers[*st.projection_slot];
                auto& pc = cal.slots[*st.projection_slot];
                pc.channels.resize(pl.shape[0]);
                const int pfrac = saved.at(config.skips[*st.skip].from).second.second - pl.range.e_min;
                for (std::size_t c = 0; c < pl.shape[0]; ++c)
                    pc.channels[c] = {1, 0, int_bias(folded[*st.projection_slot][c].bias, pfrac)};
            }
        } else if (sc.channels.size() != channels) {
            throw ConfigError("calibration for slot " + std::to_string(st.slot) + " has " +
                              std::to_string(sc.channels.size()) + " channels, layer has " + std::to_string(channels));
        }

        Shape out_shape;
        std::vector<double> pre_all;
        for (std::size_t i = 0; i < n; ++i) {
            auto y = conv_double(act[i], in_shape, weights[st.slot], st.geometry, out_shape);
            const std::size_t plane = y.size() / channels;
            for (std::size_t c = 0; c < channels; ++c) {
                const auto& ch = sc.channels[c];
                const double s = ch.scale_sign * std::ldexp(1.0, ch.scale_exp);
                for (std::size_t p = 0; p < plane; ++p) y[c * plane + p] = s * y[c * plane + p] + folded[st.slot][c].bias;
            }
            if (st.skip) {
                const auto& src = saved.at(config.skips[*st.skip].from);
                const auto& sx = src.first[i];
                if (st.projection_slot) {
                    Shape ps;
                    auto py = conv_double(sx, src.second.first, weights[*st.projection_slot], st.projection_geometry, ps);
                    const std::size_t pp = py.size() / channels;
                    for (std::size_t c = 0; c < channels; ++c)
                        for (std::size_t p = 0; p < pp; ++p)
                            y[c * pp + p] += py[c * pp + p] + folded[*st.projection_slot][c].bias;
                } else {
                    for (std::size_t e = 0; e < y.size(); ++e) y[e] += sx[e];
                }
            }
            if (st.leaky)
                for (double& v : y)
                    if (v < 0) v = std::ldexp(v, -st.leaky);
            if (st.final) {
                for (std::size_t c = 0; c < config.classes; ++c) scores[i * config.classes + c] = y[c];
            } else if (calibrating) {
                pre_all.insert(pre_all.end(), y.begin(), y.end());
            }
            act[i] = std::move(y);
        }
        shape = st.dense ? Shape{channels} : out_shape;
        if (st.final) break;
        if (calibrating) sc.out_frac = static_cast<std::int8_t>(choose_frac_bits(std::move(pre_all)));
        if (sc.out_frac < 0 || sc.out_frac > 7) throw ConfigError("calibrated frac bits must lie in [0, 7]");
        frac = sc.out_frac;
        for (auto& a : act)
            for (double& v : a) v = round_to_grid(v, frac);
    }
    return scores;
}

}  // namespace

Calibration calibrate(const NetworkConfig& config, const QuantizedModel& model, const Parameters<float>& params,
                      const Tensor<float>& images, BatchNormOptions bn) {
    if (images.rank() == 0 || images.dim(0) == 0) throw ConfigError("calibration needs at least one image");
    Calibration cal;
    simulate(config, model, params, cal, images, bn, true);
    return cal;
}

Tensor<double> simulate_quantized(const NetworkConfig& config, const QuantizedModel& model,
                                  const Parameters<float>& params, const Calibration& calibration,
                                  const Tensor<float>& images, BatchNormOptions bn) {
    Calibration cal = calibration;
    return simulate(config, model, params, cal, images, bn, false);
}

namespace {

// Accumulator and alignment headroom checks, walking the int8 frac bits through the stages.
void plan_fracs(const NetworkConfig& config, const StagePlan& plan, const EnginePlan& ep) {
    const auto& cal = ep.calibration;
    if (cal.input_frac < 0 || cal.input_frac > 7) throw ConfigError("calibration input frac bits must lie in [0, 7]");
    std::map<std::size_t, int> saved;
    int frac = cal.input_frac;
    for (const auto& st : plan.stages) {
        if (plan.saved_inputs[st.first]) saved[st.first] = frac;
        if (st.kind != Stage::Kind::fused) continue;
        const auto& bank = ep.banks[st.slot];
        if (accumulator_bound(bank) > static_cast<std::uint64_t>(std::numeric_limits<std::int32_t>::max()))
            throw ConfigError("layer " + std::to_string(st.layer) + " shift amounts can overflow the int32 accumulator");
        const int acc_frac = frac - bank.e_min;
        int shortcut_lo = std::numeric_limits<int>::max(), shortcut_hi = std::numeric_limits<int>::min();
        if (st.skip) {
            const int from = saved.at(config.skips[*st.skip].from);
            if (st.projection_slot) {
                const auto& pb = ep.banks[*st.projection_slot];
                if (accumulator_bound(pb) > static_cast<std::uint64_t>(std::numeric_limits<std::int32_t>::max()))
                    throw ConfigError("skip " + std::to_string(*st.skip) + " projection can overflow the int32 accumulator");
                for (const auto& ch : cal.slots[*st.projection_slot].channels)
                    if (ch.scale_sign != 1 || ch.scale_exp != 0)
                        throw ConfigError("projection calibration must carry unit scales");
                shortcut_lo = shortcut_hi = from - pb.e_min;
            } else {
                shortcut_lo = shortcut_hi = from;
            }
        }
        for (const auto& ch : cal.slots[st.slot].channels) {
            const int f = acc_frac - ch.scale_exp;
            if (st.skip && (std::max(f, shortcut_hi) - std::min(f, shortcut_lo) > 28))
                throw ConfigError("layer " + std::to_string(st.layer) + " skip alignment shift is too large");
        }
        if (!st.final) {
            if (cal.slots[st.slot].out_frac < 0 || cal.slots[st.slot].out_frac > 7)
                throw ConfigError("calibrated frac bits must lie in [0, 7]");
            frac = cal.slots[st.slot].out_frac;
        }
    }
}

}  // namespace

EnginePlan make_plan(const NetworkConfig& config, const QuantizedModel& model, const Calibration& calibration) {
    const StagePlan sp = build_stages(config);
    check_model(sp, model);
    if (calibration.slots.empty() && !model.layers.empty())
        throw ConfigError("missing calibration: run calibration before integer inference");
    if (calibration.slots.size() != model.layers.size())
        throw ConfigError("calibration covers " + std::to_string(calibration.slots.size()) +
                          " weight slots, model has " + std::to_string(model.layers.size()));
    for (std::size_t s = 0; s < model.layers.size(); ++s)
        if (calibration.slots[s].channels.size() != model.layers[s].shape[0])
            throw ConfigError("calibration slot " + std::to_string(s) + " has the wrong channel count");
    EnginePlan plan{config, model, calibration, {}};
    for (const auto& layer : model.layers) plan.banks.push_back(decompose_filters(layer));
    plan_fracs(config, sp, plan);
    return plan;
}

EnginePlan make_plan(const NetworkConfig& config, std::span<const std::uint8_t> packed_weights,
                     std::span<const std::uint8_t> calibration_sidecar) {
    if (calibration_sidecar.empty()) throw ConfigError("missing calibration sidecar");
    return make_plan(config, unpack_weights(packed_weights), unpack_calibration(calibration_sidecar));
}

namespace {

struct Runner {
    const EnginePlan& plan;
    StagePlan stages;

    void run(const float* image, double* scores) const {
        const auto& config = plan.config;
        const auto& cal = plan.calibration;
        Tensor<float> x(config.input_shape, std::vector<float>(image, image + shape_volume(config.input_shape)));
        FixedPointTensor a = quantize_activations(x, cal.input_frac);
        std::map<std::size_t, FixedPointTensor> saved;

        for (std::size_t si = 0; si < stages.stages.size(); ++si) {
            const Stage& st = stages.stages[si];
            if (stages.saved_inputs[st.first]) saved[st.first] = a;
            if (st.kind == Stage::Kind::pool) {
                const std::size_t c = a.shape[0], h = a.shape[1], w = a.shape[2], k = st.pool, ho = h / k, wo = w / k;
                FixedPointTensor y{{c, ho, wo}, std::vector<std::int8_t>(c * ho * wo), a.frac_bits};
                for (std::size_t cc = 0; cc < c; ++cc)
                    for (std::size_t oy = 0; oy < ho; ++oy)
                        for (std::size_t ox = 0; ox < wo; ++ox) {
                            std::int8_t best = std::numeric_limits<std::int8_t>::min();
                            for (std::size_t dy = 0; dy < k; ++dy)
                                for (std::size_t dx = 0; dx < k; ++dx)
                                    best = std::max(best, a.data[(cc * h + oy * k + dy) * w + ox * k + dx]);
                            y.data[(cc * ho + oy) * wo + ox] = best;
                        }
                a = std::move(y);
                continue;
            }
            if (st.kind == Stage::Kind::flatten) {
                a.shape = {a.data.size()};
                continue;
            }

            FixedPointTensor in = a;
            if (st.dense) in.shape = {a.data.size(), 1, 1};
            const auto& bank = plan.banks[st.slot];
            const Accumulator acc = sum_banks(shift_conv2d(in, bank, st.geometry), bank);
            const std::size_t channels = bank.filters;
            const std::size_t plane = acc.data.size() / std::max<std::size_t>(channels, 1);
            const auto& affine = cal.slots[st.slot].channels;

            std::vector<std::int64_t> wide(acc.data.size());
            std::vector<int> wide_frac(channels);
            for (std::size_t c = 0; c < channels; ++c) {
                wide_frac[c] = acc.frac_bits - affine[c].scale_exp;
                for (std::size_t p = 0; p < plane; ++p)
                    wide[c * plane + p] =
                        affine[c].scale_sign * static_cast<std::int64_t>(acc.data[c * plane + p]) + affine[c].bias;
            }
            if (st.skip) {
                const FixedPointTensor& src = saved.at(config.skips[*st.skip].from);
                std::vector<std::int64_t> shortcut(wide.size());
                std::vector<int> shortcut_frac(channels, src.frac_bits);
                if (st.projection_slot) {
                    const auto& pb = plan.banks[*st.projection_slot];
                    const Accumulator pacc = sum_banks(shift_conv2d(src, pb, st.projection_geometry), pb);
                    const auto& paff = cal.slots[*st.projection_slot].channels;
                    for (std::size_t c = 0; c < channels; ++c) {
                        shortcut_frac[c] = pacc.frac_bits;
                        for (std::size_t p = 0; p < plane; ++p)
                            shortcut[c * plane + p] = static_cast<std::int64_t>(pacc.data[c * plane + p]) + paff[c].bias;
                    }
                } else {
                    for (std::size_t e = 0; e < wide.size(); ++e) shortcut[e] = src.data[e];
                }
                for (std::size_t c = 0; c < channels; ++c) {
                    const int common = std::max(wide_frac[c], shortcut_frac[c]);
                    for (std::size_t p = 0; p < plane; ++p) {
                        auto& v = wide[c * plane + p];
                        v = shift_round_half_even(v, wide_frac[c] - common) +
                            shift_round_half_even(shortcut[c * plane + p], shortcut_frac[c] - common);
                    }
                    wide_frac[c] = common;
                }
            }
            if (st.final) {
                for (std::size_t c = 0; c < channels; ++c)
                    for (std::size_t p = 0; p < plane; ++p) {
                        const std::int64_t v = wide[c * plane + p];
                        const int f = wide_frac[c] + (st.leaky && v < 0 ? st.leaky : 0);
                        scores[c * plane + p] = std::ldexp(static_cast<double>(v), -f);
                    }
                return;
            }
            const int f_out = cal.slots[st.slot].out_frac;
            FixedPointTensor y{st.dense ? Shape{channels} : acc.shape, std::vector<std::int8_t>(wide.size()), f_out};
            for (std::size_t c = 0; c < channels; ++c)
                for (std::size_t p = 0; p < plane; ++p) {
                    const std::int64_t v = wide[c * plane + p];
                    const int f = wide_frac[c] + (st.leaky && v < 0 ? st.leaky : 0);
                    y.data[c * plane + p] = requantize_value(v, f - f_out);
                }
            a = std::move(y);
        }
    }
};

}  // namespace

InferenceResult run_inference(const EnginePlan& plan, const Tensor<float>& images, unsigned threads) {
    const Runner runner{plan, build_stages(plan.config)};
    plan_fracs(plan.config, runner.stages, plan);
    const auto& input = plan.config.input_shape;
    if (images.rank() != 4 || Shape(images.shape().begin() + 1, images.shape().end()) != input)
        throw ConfigError("images " + shape_string(images.shape()) + " do not match the network input " +
                          shape_string(input));
    const std::size_t n = images.dim(0), sample = shape_volume(input), classes = plan.config.classes;
    InferenceResult result;
    result.scores = Tensor<double>({n, classes});
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));

    auto work = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) runner.run(images.raw() + i * sample, result.scores.raw() + i * classes);
    };
    if (threads == 1) {
        work(0, n);
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (n + threads - 1) / threads;
        std::vector<std::exception_ptr> errors(threads);
        for (unsigned t = 0; t < threads; ++t)
            pool.emplace_back([&, t] {
                try {
                    work(std::min(n, t * chunk), std::min(n, (t + 1) * chunk));
                } catch (...) {
                    errors[t] = std::current_exception();
                }
            });
        for (auto& th : pool) th.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }
    result.labels = argmax_rows(result.scores);
    return result;
}

}  // namespace flexshift
