#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "flexshift/dataset.hpp"

namespace flexshift {

enum class DatasetKind { mnist_idx, cifar10_binary, synthetic };

std::string to_string(DatasetKind kind);
DatasetKind dataset_kind_from_string(const std::string& s);

struct DatasetSource {
    DatasetKind kind = DatasetKind::mnist_idx;
    // mnist_idx: directory holding train-/t10k- images and labels (optionally .gz).
    // cifar10_binary: directory holding data_batch_1..5.bin and test_batch.bin.
    std::string path;
    std::size_t train_limit = 0;  // 0 keeps everything
    std::size_t test_limit = 0;
    // Per-channel standardization after scaling pixels to [0, 1]; empty means the kind's default.
    std::vector<double> mean;
    std::vector<double> std;
    // synthetic
    std::uint64_t seed = 7;
    std::size_t train_size = 100;
    std::size_t test_size = 100;
    std::size_t classes = 10;
    Shape shape{1, 28, 28};

    friend bool operator==(const DatasetSource&, const DatasetSource&) = default;
};

/// Raw decoded records before normalization.
struct ByteImages {
    Shape shape;  // (N, C, H, W)
    std::vector<std::uint8_t> pixels;
    std::vector<std::uint8_t> labels;
};

/// Reads a whole file, inflating it when it starts with the gzip magic. Throws IngestionError.
std::vector<std::uint8_t> read_maybe_gzip(const std::string& path);

/// IDX image (magic 0x00000803) and label (0x00000801) files. Labels >= classes, short or long
/// files, and count mismatches raise IngestionError with the offending byte offset.
ByteImages parse_mnist_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels,
                           std::size_t classes = 10);

/// CIFAR-10 binary records: 1 label byte then 3072 pixel bytes (R, G, B planes of 32x32).
ByteImages parse_cifar10_binary(std::span<const std::uint8_t> bytes);

/// Pixels / 255, then (x - mean[c]) / std[c].
Dataset normalize(const ByteImages& raw, std::span<const double> mean, std::span<const double> std,
                  std::size_t classes);

/// Class-dependent blob patterns plus noise, deterministic in the seed.
ByteImages synthetic_bytes(std::uint64_t seed, std::size_t n, std::size_t classes, const Shape& shape);

/// Train and test splits in file order. Throws ConfigError for a bad source description.
DatasetSplit load_dataset(const DatasetSource& source);

/// Files a source reads, for manifests.
std::vector<std::string> dataset_files(const DatasetSource& source);

}  // namespace flexshift
