#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "flexshift/tensor.hpp"

namespace flexshift {

enum class LayerKind { conv2d, batchnorm, leaky_relu, maxpool, dense, flatten };
enum class NetworkStyle { vgg, resnet };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& s);
std::string to_string(NetworkStyle style);
NetworkStyle network_style_from_string(const std::string& s);

struct LayerSpec {
    LayerKind kind = LayerKind::flatten;
    // conv2d: in/out channels; dense: in/out features; batchnorm: out_channels.
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t kernel = 0;
    std::size_t stride = 1;
    std::size_t padding = 0;
    double negative_slope = 0.01;
    std::size_t pool = 2;

    static LayerSpec conv(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride = 1,
                          std::size_t padding = 0);
    static LayerSpec batchnorm(std::size_t channels);
    static LayerSpec leaky_relu(double slope = 0.01);
    static LayerSpec maxpool(std::size_t pool = 2);
    static LayerSpec dense(std::size_t in, std::size_t out);
    static LayerSpec flatten();

    bool has_weights() const { return kind == LayerKind::conv2d || kind == LayerKind::dense; }
    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// The input of layer `from` is added to the output of layer `to` (from <= to).
/// When shapes differ a 1x1 projection convolution is inserted on the shortcut.
struct SkipConnection {
    std::size_t from = 0;
    std::size_t to = 0;
    friend bool operator==(const SkipConnection&, const SkipConnection&) = default;
};

struct NetworkConfig {
    std::string id;
    NetworkStyle style = NetworkStyle::vgg;
    Shape input_shape;  // (C, H, W)
    std::vector<LayerSpec> layers;
    std::vector<SkipConnection> skips;
    std::size_t classes = 0;
    friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

/// Per-sample shapes: element i is the input of layer i, the last is the network output.
/// Throws ConfigError when channels do not chain or a skip connection is not realizable.
std::vector<Shape> infer_shapes(const NetworkConfig& config);

struct ProjectionSpec {
    std::size_t skip = 0;  // index into NetworkConfig::skips
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t stride = 1;
};

/// Projection convolutions needed by the config's skip connections, in skip order.
std::vector<std::optional<ProjectionSpec>> projection_specs(const NetworkConfig& config);

/// A weight tensor holding convolution-style filters (one filter per leading index).
struct WeightSlot {
    enum class Owner { layer, projection } owner;
    std::size_t index;  // layer index or skip index
    std::string name;
};

/// Every filter-bearing tensor in canonical order: layers first (network order), then projections.
std::vector<WeightSlot> weight_slots(const NetworkConfig& config);

/// Presets "network-1", "network-2", "network-4" and "mnist-2conv".
NetworkConfig preset_network(const std::string& id);
std::vector<std::string> preset_ids();

}  // namespace flexshift
