#pragma once

#include <json.hpp>

#include "flexshift/network.hpp"

namespace flexshift::detail {

using json = nlohmann::json;

inline json network_json(const NetworkConfig& n) {
    json layers = json::array();
    for (const auto& l : n.layers)
        layers.push_back({{"kind", to_string(l.kind)},
                          {"in", l.in_channels},
                          {"out", l.out_channels},
                          {"kernel", l.kernel},
                          {"stride", l.stride},
                          {"padding", l.padding},
                          {"negative_slope", l.negative_slope},
                          {"pool", l.pool}});
    json skips = json::array();
    for (const auto& s : n.skips) skips.push_back(json::array({s.from, s.to}));
    return {{"id", n.id},         {"style", to_string(n.style)}, {"input_shape", n.input_shape},
            {"classes", n.classes}, {"layers", layers},           {"skips", skips}};
}

inline NetworkConfig network_from(const json& j) {
    try {
        NetworkConfig n;
        n.id = j.value("id", std::string("custom"));
        n.style = network_style_from_string(j.value("style", std::string("vgg")));
        n.input_shape = j.at("input_shape").get<Shape>();
        n.classes = j.at("classes").get<std::size_t>();
        for (const auto& l : j.at("layers")) {
            LayerSpec s;
            s.kind = layer_kind_from_string(l.at("kind").get<std::string>());
            s.in_channels = l.value("in", std::size_t{0});
            s.out_channels = l.value("out", std::size_t{0});
            s.kernel = l.value("kernel", std::size_t{0});
            s.stride = l.value("stride", std::size_t{1});
            s.padding = l.value("padding", std::size_t{0});
            s.negative_slope = l.value("negative_slope", 0.01);
            s.pool = l.value("pool", std::size_t{2});
            n.layers.push_back(s);
        }
        if (j.contains("skips"))
            for (const auto& s : j.at("skips")) n.skips.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>()});
        infer_shapes(n);
        return n;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad network description: ") + e.what());
    }
}

}  // namespace flexshift::detail
