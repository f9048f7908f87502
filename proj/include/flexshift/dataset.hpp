#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <vector>

#include "flexshift/tensor.hpp"

namespace flexshift {

struct Dataset {
    Tensor<float> images;  // (N, C, H, W)
    std::vector<std::uint8_t> labels;
    std::size_t classes = 0;

    std::size_t size() const { return labels.size(); }

    /// Images and labels at the given indices, in order.
    Dataset subset(std::span<const std::size_t> indices) const {
        Dataset out;
        out.classes = classes;
        Shape shape = images.shape();
        shape[0] = indices.size();
        out.images = Tensor<float>(shape);
        const std::size_t per = size() ? images.size() / size() : 0;
        for (std::size_t i = 0; i < indices.size(); ++i) {
            const float* src = images.raw() + indices[i] * per;
            std::copy(src, src + per, out.images.raw() + i * per);
            out.labels.push_back(labels[indices[i]]);
        }
        return out;
    }

    /// Contiguous range [begin, end).
    Dataset slice(std::size_t begin, std::size_t end) const {
        std::vector<std::size_t> idx;
        for (std::size_t i = begin; i < end; ++i) idx.push_back(i);
        return subset(idx);
    }

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct DatasetSplit {
    Dataset train;
    Dataset test;
};

}  // namespace flexshift
