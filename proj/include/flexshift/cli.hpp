#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flexshift/dataset_io.hpp"
#include "flexshift/trainer.hpp"

namespace flexshift {

/// Command-line training defaults: the library defaults with 60 epochs.
inline TrainConfig cli_train_defaults() {
    TrainConfig t;
    t.epochs = 60;
    return t;
}

/// The MNIST subset shipped under data/, relative to the working directory.
inline DatasetSource bundled_mnist() {
    DatasetSource s;
    s.path = "data/mnist10k";
    return s;
}

/// Everything a command needs. Serialized as JSON; see README for the schema.
struct RunConfig {
    std::string network_name = "mnist-2conv";  // preset id, or "inline"
    NetworkConfig network = preset_network("mnist-2conv");
    DatasetSource dataset = bundled_mnist();
    TrainConfig train = cli_train_defaults();
    std::string out_dir = "run";
    std::size_t calibration_images = 512;
    unsigned threads = 1;
    std::vector<std::vector<double>> sweep_lambdas{{0.0, 1e-5}, {0.0, 3e-5}, {0.0, 1e-4}};
    std::vector<std::uint64_t> sweep_seeds{1, 2, 3};
    bool sweep_endpoints = false;  // also train LightNN-1 and LightNN-2 per seed

    /// Throws ConfigError: unknown preset, unresolvable dataset path, lambda length != k, ...
    void validate() const;
};

/// Defaults, overlaid by a JSON document. Unknown keys are errors.
RunConfig parse_run_config(const std::string& json_text);
/// Sorted keys, two-space indent, trailing newline.
std::string canonical_json(const RunConfig& config);

/// Overrides one dotted key ("train.epochs", "dataset.path", ...) with a JSON value; bare strings
/// that do not parse as JSON are taken as strings.
void apply_override(RunConfig& config, const std::string& key, const std::string& value);

/// SHA-1 of "blob <size>\0" + bytes, as git computes object ids.
std::string git_blob_sha1(std::span<const std::uint8_t> bytes);
std::string git_blob_sha1_of_file(const std::string& path);

struct Manifest {
    std::string command;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::vector<std::pair<std::string, std::string>> inputs;   // path, blob hash
    std::vector<std::pair<std::string, std::string>> outputs;  // path, blob hash
};
void write_manifest(const std::string& path, const Manifest& manifest);

// Commands. Each writes its artifacts and a manifest under config.out_dir and returns a one-line
// summary for stdout. Errors propagate as exceptions; see exit_code().

std::string cmd_train(const RunConfig& config);
/// Quantizes a trained model, calibrates the engine on the training split and records its test
/// accuracy. `thresholds` and `k` override the stored ones.
std::string cmd_quantize(const RunConfig& config, const std::string& model_in, const std::string& model_out,
                         const std::optional<std::vector<double>>& thresholds = std::nullopt,
                         std::optional<int> k = std::nullopt);
/// Integer-engine accuracy for quantized files, quantized-forward accuracy otherwise.
std::string cmd_eval(const RunConfig& config, const std::string& model_path);
std::string cmd_cost(const RunConfig& config, const std::string& model_path);
std::string cmd_sweep(const RunConfig& config);

/// 2 for usage and configuration errors, 3 for numeric failures, 1 for anything else.
int exit_code(const std::exception& e);

}  // namespace flexshift
