#include "flexshift/network.hpp"

#include <stdexcept>

namespace flexshift {

std::string to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::batchnorm: return "batchnorm";
        case LayerKind::leaky_relu: return "leaky_relu";
        case LayerKind::maxpool: return "maxpool";
        case LayerKind::dense: return "dense";
        case LayerKind::flatten: return "flatten";
    }
    return "?";
}

LayerKind layer_kind_from_string(const std::string& s) {
    for (auto k : {LayerKind::conv2d, LayerKind::batchnorm, LayerKind::leaky_relu, LayerKind::maxpool,
                   LayerKind::dense, LayerKind::flatten})
        if (to_string(k) == s) return k;
    throw ConfigError("unknown layer kind '" + s + "'");
}

std::string to_string(NetworkStyle style) { return style == NetworkStyle::vgg ? "vgg" : "resnet"; }

NetworkStyle network_style_from_string(const std::string& s) {
    if (s == "vgg") return NetworkStyle::vgg;
    if (s == "resnet") return NetworkStyle::resnet;
    throw ConfigError("unknown network style '" + s + "'");
}

LayerSpec LayerSpec::conv(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                          std::size_t padding) {
    LayerSpec s;
    s.kind = LayerKind::conv2d;
    s.in_channels = in;
    s.out_channels = out;
    s.kernel = kernel;
    s.stride = stride;
    s.padding = padding;
    return s;
}

LayerSpec LayerSpec::batchnorm(std::size_t channels) {
    LayerSpec s;
    s.kind = LayerKind::batchnorm;
    s.in_channels = s.out_channels = channels;
    return s;
}

LayerSpec LayerSpec::leaky_relu(double slope) {
    LayerSpec s;
    s.kind = LayerKind::leaky_relu;
    s.negative_slope = slope;
    return s;
}

LayerSpec LayerSpec::maxpool(std::size_t pool) {
    LayerSpec s;
    s.kind = LayerKind::maxpool;
    s.pool = pool;
    return s;
}

LayerSpec LayerSpec::dense(std::size_t in, std::size_t out) {
    LayerSpec s;
    s.kind = LayerKind::dense;
    s.in_channels = in;
    s.out_channels = out;
    return s;
}

LayerSpec LayerSpec::flatten() { return LayerSpec{}; }

namespace {

std::string where(std::size_t i, const LayerSpec& l) {
    return "layer " + std::to_string(i) + " (" + to_string(l.kind) + ")";
}

Shape layer_output_shape(std::size_t i, const LayerSpec& l, const Shape& in) {
    switch (l.kind) {
        case LayerKind::conv2d: {
            if (in.size() != 3) throw ConfigError(where(i, l) + " expects a (C,H,W) input, got " + shape_string(in));
            if (l.kernel == 0 || l.stride == 0 || l.in_channels == 0 || l.out_channels == 0)
                throw ConfigError(where(i, l) + " has a zero kernel, stride or channel count");
            if (in[0] != l.in_channels)
                throw ConfigError(where(i, l) + " expects " + std::to_string(l.in_channels) + " channels, got " +
                                  std::to_string(in[0]));
            if (in[1] + 2 * l.padding < l.kernel || in[2] + 2 * l.padding < l.kernel)
                throw ConfigError(where(i, l) + " kernel larger than padded input");
            return {l.out_channels, (in[1] + 2 * l.padding - l.kernel) / l.stride + 1,
                    (in[2] + 2 * l.padding - l.kernel) / l.stride + 1};
        }
        case LayerKind::batchnorm:
            if (in.empty() || in[0] != l.out_channels)
                throw ConfigError(where(i, l) + " expects " + std::to_string(l.out_channels) + " channels, got " +
                                  shape_string(in));
            if (in.size() != 1 && in.size() != 3) throw ConfigError(where(i, l) + " expects rank 1 or 3 input");
            return in;
        case LayerKind::leaky_relu:
            if (!(l.negative_slope >= 0.0 && l.negative_slope < 1.0))
                throw ConfigError(where(i, l) + " negative slope must lie in [0, 1)");
            return in;
        case LayerKind::maxpool:
            if (in.size() != 3) throw ConfigError(where(i, l) + " expects a (C,H,W) input");
            if (l.pool == 0 || in[1] < l.pool || in[2] < l.pool)
                throw ConfigError(where(i, l) + " pool size does not fit the input " + shape_string(in));
            return {in[0], in[1] / l.pool, in[2] / l.pool};
        case LayerKind::dense:
            if (in.size() != 1) throw ConfigError(where(i, l) + " expects a flat input, got " + shape_string(in));
            if (in[0] != l.in_channels || l.out_channels == 0)
                throw ConfigError(where(i, l) + " expects " + std::to_string(l.in_channels) + " features, got " +
                                  std::to_string(in[0]));
            return {l.out_channels};
        case LayerKind::flatten: return {shape_volume(in)};
    }
    throw ConfigError(where(i, l) + " has an unknown kind");
}

}  // namespace

std::vector<Shape> infer_shapes(const NetworkConfig& config) {
    if (config.input_shape.size() != 3 || shape_volume(config.input_shape) == 0)
        throw ConfigError("network input shape must be a non-empty (C,H,W)");
    if (config.layers.empty()) throw ConfigError("network has no layers");
    std::vector<Shape> shapes{config.input_shape};
    for (std::size_t i = 0; i < config.layers.size(); ++i)
        shapes.push_back(layer_output_shape(i, config.layers[i], shapes.back()));
    const Shape& out = shapes.back();
    if (out.size() != 1 || out[0] != config.classes)
        throw ConfigError("network output " + shape_string(out) + " does not match class count " +
                          std::to_string(config.classes));
    projection_specs(config);  // validates skips
    return shapes;
}

std::vector<std::optional<ProjectionSpec>> projection_specs(const NetworkConfig& config) {
    std::vector<Shape> shapes{config.input_shape};
    for (std::size_t i = 0; i < config.layers.size(); ++i)
        shapes.push_back(layer_output_shape(i, config.layers[i], shapes.back()));

    std::vector<std::optional<ProjectionSpec>> out;
    for (std::size_t s = 0; s < config.skips.size(); ++s) {
        const auto& skip = config.skips[s];
        if (skip.from > skip.to || skip.to >= config.layers.size())
            throw ConfigError("skip " + std::to_string(s) + " must satisfy from <= to < layer count");
        const Shape& src = shapes[skip.from];
        const Shape& dst = shapes[skip.to + 1];
        if (src == dst) {
            out.emplace_back(std::nullopt);
            continue;
        }
        if (src.size() != 3 || dst.size() != 3)
            throw ConfigError("skip " + std::to_string(s) + " joins incompatible shapes " + shape_string(src) +
                              " and " + shape_string(dst));
        const std::size_t stride = src[1] / dst[1];
        if (stride == 0 || (src[1] - 1) / stride + 1 != dst[1] || (src[2] - 1) / stride + 1 != dst[2])
            throw ConfigError("skip " + std::to_string(s) + " spatial sizes " + shape_string(src) + " -> " +
                              shape_string(dst) + " are not related by an integer stride");
        out.emplace_back(ProjectionSpec{s, src[0], dst[0], stride});
    }
    return out;
}

std::vector<WeightSlot> weight_slots(const NetworkConfig& config) {
    std::vector<WeightSlot> slots;
    for (std::size_t i = 0; i < config.layers.size(); ++i)
        if (config.layers[i].has_weights())
            slots.push_back({WeightSlot::Owner::layer, i, "layer" + std::to_string(i)});
    const auto proj = projection_specs(config);
    for (std::size_t s = 0; s < proj.size(); ++s)
        if (proj[s]) slots.push_back({WeightSlot::Owner::projection, s, "skip" + std::to_string(s)});
    return slots;
}

namespace {

void conv_block(NetworkConfig& net, std::size_t in, std::size_t out, bool pool, std::size_t pool_size = 2) {
    net.layers.push_back(LayerSpec::conv(in, out, 3, 1, 1));
    net.layers.push_back(LayerSpec::batchnorm(out));
    net.layers.push_back(LayerSpec::leaky_relu());
    if (pool) net.layers.push_back(LayerSpec::maxpool(pool_size));
}

void residual_block(NetworkConfig& net, std::size_t in, std::size_t out, std::size_t stride) {
    const std::size_t first = net.layers.size();
    net.layers.push_back(LayerSpec::conv(in, out, 3, stride, 1));
    net.layers.push_back(LayerSpec::batchnorm(out));
    net.layers.push_back(LayerSpec::leaky_relu());
    net.layers.push_back(LayerSpec::conv(out, out, 3, 1, 1));
    net.layers.push_back(LayerSpec::batchnorm(out));
    net.skips.push_back({first, net.layers.size() - 1});
    net.layers.push_back(LayerSpec::leaky_relu());
}

}  // namespace

NetworkConfig preset_network(const std::string& id) {
    NetworkConfig net;
    net.id = id;
    net.classes = 10;
    if (id == "mnist-2conv") {
        net.input_shape = {1, 28, 28};
        conv_block(net, 1, 8, true);
        conv_block(net, 8, 16, true);
        net.layers.push_back(LayerSpec::flatten());
        net.layers.push_back(LayerSpec::dense(16 * 7 * 7, 10));
    } else if (id == "network-1") {
        // VGG, 7 conv layers, widest 64, ~0.08M weights (CIFAR-10).
        net.input_shape = {3, 32, 32};
        conv_block(net, 3, 16, false);
        conv_block(net, 16, 16, true);
        conv_block(net, 16, 32, false);
        conv_block(net, 32, 32, true);
        conv_block(net, 32, 32, false);
        conv_block(net, 32, 64, true);
        conv_block(net, 64, 64, true, 4);
        net.layers.push_back(LayerSpec::flatten());
        net.layers.push_back(LayerSpec::dense(64, 10));
    } else if (id == "network-2") {
        // ResNet-18 (17 conv + 1 dense), widest 128, ~0.7M weights (CIFAR-10).
        net.style = NetworkStyle::resnet;
        net.input_shape = {3, 32, 32};
        conv_block(net, 3, 16, false);
        const std::size_t widths[] = {16, 32, 64, 128};
        std::size_t in = 16;
        for (std::size_t stage = 0; stage < 4; ++stage) {
            residual_block(net, in, widths[stage], stage == 0 ? 1 : 2);
            residual_block(net, widths[stage], widths[stage], 1);
            in = widths[stage];
        }
        net.layers.push_back(LayerSpec::maxpool(4));
        net.layers.push_back(LayerSpec::flatten());
        net.layers.push_back(LayerSpec::dense(128, 10));
    } else if (id == "network-4") {
        // VGG, 4 conv layers, widest 64, ~0.03M weights (SVHN).
        net.input_shape = {3, 32, 32};
        conv_block(net, 3, 16, true);
        conv_block(net, 16, 32, true);
        conv_block(net, 32, 32, true);
        conv_block(net, 32, 64, true, 4);
        net.layers.push_back(LayerSpec::flatten());
        net.layers.push_back(LayerSpec::dense(64, 10));
    } else {
        throw ConfigError("unknown network preset '" + id + "'");
    }
    infer_shapes(net);
    return net;
}

std::vector<std::string> preset_ids() { return {"mnist-2conv", "network-1", "network-2", "network-4"}; }

}  // namespace flexshift
