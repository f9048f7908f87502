#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "flexshift/network.hpp"
#include "flexshift/tensor.hpp"

namespace flexshift {

template <typename T>
struct LayerParams {
    Tensor<T> weight;  // conv [O,C,K,K], dense [O,F]
    Tensor<T> bias;    // [O]
    Tensor<T> gamma;   // batchnorm [C]
    Tensor<T> beta;
    Tensor<T> running_mean;  // batchnorm buffers, not trained
    Tensor<T> running_var;
    friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

template <typename T>
struct Parameters {
    std::vector<LayerParams<T>> layers;
    std::vector<LayerParams<T>> projections;  // one per skip; empty when the shortcut is identity

    Tensor<T>& weight(const WeightSlot& slot) {
        return slot.owner == WeightSlot::Owner::layer ? layers[slot.index].weight : projections[slot.index].weight;
    }
    const Tensor<T>& weight(const WeightSlot& slot) const {
        return slot.owner == WeightSlot::Owner::layer ? layers[slot.index].weight : projections[slot.index].weight;
    }

    template <typename U>
    Parameters<U> cast() const;

    friend bool operator==(const Parameters&, const Parameters&) = default;
};

template <typename T>
template <typename U>
Parameters<U> Parameters<T>::cast() const {
    auto cast_layer = [](const LayerParams<T>& p) {
        LayerParams<U> out;
        out.weight = p.weight.template cast<U>();
        out.bias = p.bias.template cast<U>();
        out.gamma = p.gamma.template cast<U>();
        out.beta = p.beta.template cast<U>();
        out.running_mean = p.running_mean.template cast<U>();
        out.running_var = p.running_var.template cast<U>();
        return out;
    };
    Parameters<U> out;
    for (const auto& l : layers) out.layers.push_back(cast_layer(l));
    for (const auto& l : projections) out.projections.push_back(cast_layer(l));
    return out;
}

enum class ParamRole { weight, bias, bn_gamma, bn_beta };

template <typename T>
struct ParamRef {
    ParamRole role;
    Tensor<T>* tensor;
};

/// Trainable tensors in a fixed order (layers, then projections; weight, bias, gamma, beta).
/// Calling this on a parameter set and on its gradients yields matching sequences.
template <typename T>
std::vector<ParamRef<T>> trainable(Parameters<T>& params);

struct BatchNormOptions {
    double momentum = 0.1;
    double eps = 1e-5;
};

enum class Mode { train, infer };

template <typename T>
struct ForwardCache {
    std::vector<Tensor<T>> activations;  // [i] = input of layer i, back() = logits
    std::vector<Tensor<T>> bn_xhat;
    std::vector<std::vector<T>> bn_inv_std;
    std::vector<std::vector<T>> bn_batch_mean;
    std::vector<std::vector<T>> bn_batch_var;  // unbiased, for running statistics
    std::vector<std::vector<std::uint32_t>> pool_argmax;
    Mode mode = Mode::train;
    const void* owner = nullptr;
    bool valid = false;
};

/// Kaiming-normal weights (std sqrt(2/fan_in)), zero biases, BN gamma=1 beta=0.
/// Deterministic in the seed.
template <typename T>
Parameters<T> build_network(const NetworkConfig& config, std::uint64_t seed);

/// Logits (N, classes). Throws ConfigError on shape mismatch, NumericError on non-finite output.
template <typename T>
Tensor<T> forward(const NetworkConfig& config, const Parameters<T>& params, const Tensor<T>& batch, Mode mode,
                  ForwardCache<T>* cache = nullptr, BatchNormOptions bn = {});

template <typename T>
struct Gradients {
    Parameters<T> params;  // running statistics left empty
    Tensor<T> input;       // empty when not requested
};

/// Gradients of a scalar loss given dLoss/dlogits. Throws UsageError on a missing or foreign cache.
template <typename T>
Gradients<T> backward(const NetworkConfig& config, const Parameters<T>& params, const ForwardCache<T>& cache,
                      const Tensor<T>& logit_grad, bool want_input_grad = true, BatchNormOptions bn = {});

/// Folds the batch statistics recorded in a training-mode cache into the running statistics.
template <typename T>
void update_running_stats(Parameters<T>& params, const ForwardCache<T>& cache, BatchNormOptions bn = {});

template <typename T>
struct LossResult {
    double loss = 0.0;
    Tensor<T> grad;
};

/// Mean over the batch of -log softmax at the true class; grad = (softmax - onehot)/N.
template <typename T>
LossResult<T> cross_entropy(const Tensor<T>& logits, std::span<const std::uint8_t> labels);

/// Index of the largest score in each row, ties toward the lowest index.
template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& scores);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
struct AdamState {
    AdamConfig config;
    std::vector<Tensor<T>> m;
    std::vector<Tensor<T>> v;
    std::int64_t step = 0;
};

/// One bias-corrected Adam update of every tensor in `params`. Moments are created on the first call.
template <typename T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>* const> grads, AdamState<T>& state,
               double lr);

}  // namespace flexshift
