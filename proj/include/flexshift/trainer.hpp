#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "flexshift/cost.hpp"
#include "flexshift/dataset.hpp"
#include "flexshift/errors.hpp"
#include "flexshift/nn.hpp"
#include "flexshift/quantizer.hpp"

namespace flexshift {

// ---- per-filter pieces -------------------------------------------------------------------

/// sum_j lambda_j * ||r_j||_2 over the ungated greedy residuals r_0 = w, r_{j+1} = r_j - R(r_j),
/// for j < k.
template <typename T>
double reg_loss(std::span<const T> w, std::span<const double> lambda, int k, const ExponentRange& range);

/// Gradient of reg_loss: sum_j lambda_j * r_j / ||r_j|| (zero where ||r_j|| = 0).
template <typename T>
std::vector<double> reg_grad(std::span<const T> w, std::span<const double> lambda, int k, const ExponentRange& range);

/// Straight-through: the gradient reaching the quantized weights passes to the full-precision ones.
template <typename T>
std::vector<T> ste_weight_grad(std::span<const T> grad_wq) {
    return {grad_wq.begin(), grad_wq.end()};
}

/// Which residuals the threshold-gradient recursion runs over.
enum class GateTrace {
    hard,     // residuals of the hard-gated forward pass (training)
    relaxed,  // r_{l+1} = r_l - sigmoid((||r_l|| - t_l)/tau) R(r_l)
};

/// Which rounds contribute to dQ/dt.
enum class GateSum {
    all_rounds,    // every round 0..k-1
    fired_rounds,  // only rounds below the filter's k_i
};

struct ThresholdGradOptions {
    double tau = 1.0;
    GateTrace trace = GateTrace::hard;
    GateSum sum = GateSum::all_rounds;
};

/// dL/dt_j = <upstream, dQ/dt_j> for one filter, with every gate replaced by
/// sigmoid((||r_l|| - t_l)/tau) and dR(r)/dt taken as dr/dt. Returns k values.
template <typename T>
std::vector<double> threshold_grad(std::span<const T> w, std::span<const double> t, std::span<const T> upstream, int k,
                                   const ExponentRange& range, const ThresholdGradOptions& options = {});

// ---- training ----------------------------------------------------------------------------

enum class TrainMode {
    full_precision,  // no quantization
    lightnn,         // every round always fires; thresholds fixed at -inf, no regularization
    flexible,        // trainable thresholds and residual regularization
};

std::string to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& s);
std::string to_string(GateSum sum);
GateSum gate_sum_from_string(const std::string& s);

struct TrainConfig {
    TrainMode mode = TrainMode::flexible;
    int k = 2;
    int code_bits = 4;
    std::vector<double> lambda{0.0, 3e-5};
    std::vector<double> initial_thresholds;  // length k; empty means all zero
    bool per_layer_thresholds = false;
    double tau = 1.0;
    GateSum gate_sum = GateSum::all_rounds;
    double lr = 1e-3;
    bool lr_decay = true;  // x0.1 at 50% and again at 75% of the epochs
    std::size_t batch_size = 128;
    std::size_t epochs = 10;
    double clip_norm = 5.0;  // global gradient norm; <= 0 disables
    std::uint64_t seed = 1;
    bool record_wall_time = false;
    AdamConfig adam;
    BatchNormOptions bn;

    /// Throws ConfigError on inconsistent settings.
    void validate() const;
};

struct TrainState {
    NetworkConfig network;
    Parameters<float> params;  // full-precision master copy
    Tensor<double> thresholds;  // (rows, k); one row, or one per weight slot
    AdamState<float> adam;
    AdamState<double> adam_thresholds;
    std::int64_t epoch = 0;
    std::int64_t step = 0;
};

TrainState init_train_state(const NetworkConfig& network, const TrainConfig& config);

/// Threshold row used by weight slot `slot`.
std::vector<double> threshold_row(const TrainState& state, std::size_t slot);

/// The quantized weights the forward pass uses (hard gates); the master copy in full-precision mode.
QuantizedModel quantize_state(const TrainState& state, const TrainConfig& config);
Parameters<float> effective_params(const TrainState& state, const TrainConfig& config);

struct StepReport {
    double ce = 0.0;
    double reg = 0.0;
    double total = 0.0;  // ce + reg
    std::size_t correct = 0;
    std::size_t count = 0;
    double grad_norm = 0.0;  // before clipping
    std::vector<double> threshold_grads;  // flattened (rows, k), after clipping
};

/// One mini-batch: quantize, forward, loss, backward, Adam on weights, biases, BN and thresholds.
/// Throws DivergenceError on a non-finite loss or gradient.
StepReport train_step(TrainState& state, const TrainConfig& config, const Tensor<float>& images,
                      std::span<const std::uint8_t> labels, double lr);

struct EpochMetrics {
    std::int64_t epoch = 0;
    double ce = 0.0;
    double reg = 0.0;
    double total = 0.0;
    double train_acc = 0.0;
    double test_acc = 0.0;
    double mean_k = 0.0;
    std::vector<std::size_t> k_histogram;  // filters with k_i = 0..k
    double wall_seconds = 0.0;
};

/// Learning rate of an epoch after the step decay.
double learning_rate(const TrainConfig& config, std::int64_t epoch);

/// Sample order of an epoch; depends only on (seed, epoch, n).
std::vector<std::size_t> epoch_permutation(std::uint64_t seed, std::int64_t epoch, std::size_t n);

EpochMetrics train_epoch(TrainState& state, const TrainConfig& config, const Dataset& train, const Dataset* test);

/// Runs the remaining epochs of `config.epochs`, calling `on_epoch` after each.
std::vector<EpochMetrics> train(TrainState& state, const TrainConfig& config, const Dataset& train, const Dataset* test,
                                const std::function<void(const EpochMetrics&)>& on_epoch = {});

/// Top-1 accuracy with the quantized weights and running batch-norm statistics.
double evaluate(const TrainState& state, const TrainConfig& config, const Dataset& data);

/// Mean k_i over every filter of every weight slot, and the k_i histogram.
std::pair<double, std::vector<std::size_t>> k_statistics(const QuantizedModel& model, int k);

void write_metrics_header(std::ostream& out, int k);
void write_metrics_row(std::ostream& out, const EpochMetrics& m);

/// Raised when training produces a non-finite loss or gradient. `dump()` is a JSON snapshot of the
/// state at the failing step.
class DivergenceError : public NumericError {
public:
    DivergenceError(const std::string& what, std::string dump) : NumericError(what), dump_(std::move(dump)) {}
    const std::string& dump() const noexcept { return dump_; }

private:
    std::string dump_;
};

struct SweepCell {
    std::vector<double> lambda;
    std::uint64_t seed = 0;
    double accuracy = 0.0;
    double mean_k = 0.0;
    QuantizedModel model;
    CostReport cost;
    std::vector<EpochMetrics> metrics;
    std::string error;  // non-empty when the cell failed
};

/// Trains one model per (lambda, seed) pair, lambda-major. Failures are recorded and the sweep continues.
std::vector<SweepCell> sweep_lambda(const NetworkConfig& network, const TrainConfig& base,
                                    const std::vector<std::vector<double>>& lambdas,
                                    const std::vector<std::uint64_t>& seeds, const DatasetSplit& data);

ParetoPoint pareto_point(const std::string& model_id, const SweepCell& cell);

}  // namespace flexshift
