#include "flexshift/dataset_io.hpp"

#include <zlib.h>

#include <filesystem>
#include <fstream>
#include <random>

namespace flexshift {

std::string to_string(DatasetKind kind) {
    switch (kind) {
        case DatasetKind::mnist_idx: return "mnist-idx";
        case DatasetKind::cifar10_binary: return "cifar10-binary";
        case DatasetKind::synthetic: return "synthetic";
    }
    return "?";
}

DatasetKind dataset_kind_from_string(const std::string& s) {
    for (auto k : {DatasetKind::mnist_idx, DatasetKind::cifar10_binary, DatasetKind::synthetic})
        if (to_string(k) == s) return k;
    throw ConfigError("unknown dataset kind '" + s + "'");
}

std::vector<std::uint8_t> read_maybe_gzip(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestionError("cannot open " + path, 0);
    std::vector<std::uint8_t> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (raw.size() < 2 || raw[0] != 0x1f || raw[1] != 0x8b) return raw;

    z_stream zs{};
    if (inflateInit2(&zs, 15 + 16) != Z_OK) throw IngestionError("zlib initialization failed for " + path, 0);
    std::vector<std::uint8_t> out;
    std::uint8_t buf[1 << 16];
    zs.next_in = raw.data();
    zs.avail_in = static_cast<uInt>(raw.size());
    int rc = Z_OK;
    while (rc != Z_STREAM_END) {
        zs.next_out = buf;
        zs.avail_out = sizeof buf;
        rc = inflate(&zs, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            const auto at = static_cast<std::size_t>(zs.total_in);
            inflateEnd(&zs);
            throw IngestionError("corrupt or truncated gzip stream in " + path, at);
        }
        out.insert(out.end(), buf, buf + (sizeof buf - zs.avail_out));
        if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
            const auto at = static_cast<std::size_t>(zs.total_in);
            inflateEnd(&zs);
            throw IngestionError("truncated gzip stream in " + path, at);
        }
    }
    const bool trailing = zs.avail_in != 0;
    const auto at = static_cast<std::size_t>(zs.total_in);
    inflateEnd(&zs);
    if (trailing) throw IngestionError("trailing bytes after gzip stream in " + path, at);
    return out;
}

namespace {

std::uint32_t be32(std::span<const std::uint8_t> b, std::size_t at) {
    if (at + 4 > b.size()) throw IngestionError("IDX header truncated", b.size());
    return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
           std::uint32_t{b[at + 3]};
}

}  // namespace

ByteImages parse_mnist_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels,
                           std::size_t classes) {
    if (be32(images, 0) != 0x00000803) throw IngestionError("bad IDX image magic", 0);
    if (be32(labels, 0) != 0x00000801) throw IngestionError("bad IDX label magic", 0);
    const std::size_t n = be32(images, 4), rows = be32(images, 8), cols = be32(images, 12);
    const std::size_t nl = be32(labels, 4);
    if (nl != n) throw IngestionError("label count " + std::to_string(nl) + " differs from image count " + std::to_string(n), 4);
    const std::size_t want = 16 + n * rows * cols;
    if (images.size() < want) throw IngestionError("IDX image data truncated", images.size());
    if (images.size() > want) throw IngestionError("unexpected bytes after IDX image data", want);
    if (labels.size() < 8 + n) throw IngestionError("IDX label data truncated", labels.size());
    if (labels.size() > 8 + n) throw IngestionError("unexpected bytes after IDX label data", 8 + n);

    ByteImages out;
    out.shape = {n, 1, rows, cols};
    out.pixels.assign(images.begin() + 16, images.end());
    out.labels.assign(labels.begin() + 8, labels.end());
    for (std::size_t i = 0; i < n; ++i)
        if (out.labels[i] >= classes)
            throw IngestionError("label " + std::to_string(out.labels[i]) + " out of range", 8 + i);
    return out;
}

ByteImages parse_cifar10_binary(std::span<const std::uint8_t> bytes) {
    constexpr std::size_t record = 1 + 3072;
    const std::size_t n = bytes.size() / record;
    if (bytes.size() % record != 0) throw IngestionError("CIFAR-10 record truncated", n * record);
    ByteImages out;
    out.shape = {n, 3, 32, 32};
    out.pixels.reserve(n * 3072);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t label = bytes[i * record];
        if (label >= 10) throw IngestionError("label " + std::to_string(label) + " out of range", i * record);
        out.labels.push_back(label);
        out.pixels.insert(out.pixels.end(), bytes.begin() + static_cast<std::ptrdiff_t>(i * record + 1),
                          bytes.begin() + static_cast<std::ptrdiff_t>((i + 1) * record));
    }
    return out;
}

Dataset normalize(const ByteImages& raw, std::span<const double> mean, std::span<const double> std,
                  std::size_t classes) {
    const std::size_t channels = raw.shape.at(1), plane = raw.shape.at(2) * raw.shape.at(3);
    if (mean.size() != channels || std.size() != channels)
        throw ConfigError("normalization needs " + std::to_string(channels) + " mean and std values");
    for (double s : std)
        if (!(s > 0)) throw ConfigError("normalization std must be positive");
    Dataset d;
    d.classes = classes;
    d.labels = raw.labels;
    d.images = Tensor<float>(raw.shape);
    for (std::size_t i = 0; i < raw.pixels.size(); ++i) {
        const std::size_t c = (i / plane) % channels;
        d.images[i] = static_cast<float>((raw.pixels[i] / 255.0 - mean[c]) / std[c]);
    }
    return d;
}

ByteImages synthetic_bytes(std::uint64_t seed, std::size_t n, std::size_t classes, const Shape& shape) {
    if (shape.size() != 3 || classes == 0 || classes > 256) throw ConfigError("synthetic data needs (C,H,W) and 1..256 classes");
    const std::size_t c = shape[0], h = shape[1], w = shape[2];
    // One bright rectangle per class; the prototypes depend only on the seed.
    std::mt19937_64 proto(seed);
    struct Box {
        std::size_t y0, y1, x0, x1, channel;
    };
    std::vector<Box> boxes;
    for (std::size_t k = 0; k < classes; ++k) {
        const std::size_t y0 = proto() % h, x0 = proto() % w;
        boxes.push_back({y0, std::min(h, y0 + 1 + h / 3), x0, std::min(w, x0 + 1 + w / 3), proto() % c});
    }
    std::mt19937_64 rng(seed ^ (0x5DEECE66DULL * (n + 1)));
    ByteImages out;
    out.shape = {n, c, h, w};
    out.pixels.resize(n * c * h * w);
    for (std::size_t i = 0; i < n; ++i) {
        const auto label = static_cast<std::uint8_t>(rng() % classes);
        out.labels.push_back(label);
        const Box& b = boxes[label];
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) {
                    const bool lit = ch == b.channel && y >= b.y0 && y < b.y1 && x >= b.x0 && x < b.x1;
                    const int v = (lit ? 180 : 40) + static_cast<int>(rng() % 61) - 30;
                    out.pixels[((i * c + ch) * h + y) * w + x] = static_cast<std::uint8_t>(v);
                }
    }
    return out;
}

namespace {

namespace fs = std::filesystem;

std::string pick(const std::string& dir, const std::string& stem) {
    for (const char* suffix : {"", ".gz"}) {
        const auto p = fs::path(dir) / (stem + suffix);
        if (fs::exists(p)) return p.string();
    }
    throw ConfigError("dataset file " + (fs::path(dir) / stem).string() + "[.gz] not found");
}

std::vector<double> defaults_or(const std::vector<double>& given, std::vector<double> fallback) {
    return given.empty() ? fallback : given;
}

ByteImages limited(ByteImages raw, std::size_t limit) {
    if (limit == 0 || limit >= raw.labels.size()) return raw;
    const std::size_t per = raw.pixels.size() / raw.labels.size();
    raw.shape[0] = limit;
    raw.labels.resize(limit);
    raw.pixels.resize(limit * per);
    return raw;
}

ByteImages concat(std::vector<ByteImages> parts) {
    ByteImages out = std::move(parts.at(0));
    for (std::size_t i = 1; i < parts.size(); ++i) {
        out.shape[0] += parts[i].shape[0];
        out.pixels.insert(out.pixels.end(), parts[i].pixels.begin(), parts[i].pixels.end());
        out.labels.insert(out.labels.end(), parts[i].labels.begin(), parts[i].labels.end());
    }
    return out;
}

}  // namespace

std::vector<std::string> dataset_files(const DatasetSource& s) {
    switch (s.kind) {
        case DatasetKind::mnist_idx:
            return {pick(s.path, "train-images-idx3-ubyte"), pick(s.path, "train-labels-idx1-ubyte"),
                    pick(s.path, "t10k-images-idx3-ubyte"), pick(s.path, "t10k-labels-idx1-ubyte")};
        case DatasetKind::cifar10_binary: {
            std::vector<std::string> files;
            for (int b = 1; b <= 5; ++b) files.push_back(pick(s.path, "data_batch_" + std::to_string(b) + ".bin"));
            files.push_back(pick(s.path, "test_batch.bin"));
            return files;
        }
        case DatasetKind::synthetic: return {};
    }
    return {};
}

DatasetSplit load_dataset(const DatasetSource& s) {
    const auto files = dataset_files(s);
    ByteImages train, test;
    std::vector<double> mean, std;
    std::size_t classes = 10;
    switch (s.kind) {
        case DatasetKind::mnist_idx: {
            train = parse_mnist_idx(read_maybe_gzip(files[0]), read_maybe_gzip(files[1]));
            test = parse_mnist_idx(read_maybe_gzip(files[2]), read_maybe_gzip(files[3]));
            mean = defaults_or(s.mean, {0.1307});
            std = defaults_or(s.std, {0.3081});
            break;
        }
        case DatasetKind::cifar10_binary: {
            std::vector<ByteImages> parts;
            for (int b = 0; b < 5; ++b) parts.push_back(parse_cifar10_binary(read_maybe_gzip(files[b])));
            train = concat(std::move(parts));
            test = parse_cifar10_binary(read_maybe_gzip(files[5]));
            mean = defaults_or(s.mean, {0.4914, 0.4822, 0.4465});
            std = defaults_or(s.std, {0.2470, 0.2435, 0.2616});
            break;
        }
        case DatasetKind::synthetic: {
            classes = s.classes;
            // one stream so both splits share the class prototypes
            const ByteImages both = synthetic_bytes(s.seed, s.train_size + s.test_size, classes, s.shape);
            const std::size_t per = shape_volume(s.shape);
            train.shape = test.shape = both.shape;
            train.shape[0] = s.train_size;
            test.shape[0] = s.test_size;
            train.labels.assign(both.labels.begin(), both.labels.begin() + static_cast<std::ptrdiff_t>(s.train_size));
            train.pixels.assign(both.pixels.begin(), both.pixels.begin() + static_cast<std::ptrdiff_t>(s.train_size * per));
            test.labels.assign(both.labels.begin() + static_cast<std::ptrdiff_t>(s.train_size), both.labels.end());
            test.pixels.assign(both.pixels.begin() + static_cast<std::ptrdiff_t>(s.train_size * per), both.pixels.end());
            mean = defaults_or(s.mean, std::vector<double>(s.shape.at(0), 0.5));
            std = defaults_or(s.std, std::vector<double>(s.shape.at(0), 0.25));
            break;
        }
    }
    return {normalize(limited(std::move(train), s.train_limit), mean, std, classes),
            normalize(limited(std::move(test), s.test_limit), mean, std, classes)};
}

}  // namespace flexshift
