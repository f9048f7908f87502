#include <openssl/evp.h>

#include <cmath>
#include <fstream>
#include <limits>

#include "flexshift/cli.hpp"
#include "json_codec.hpp"

namespace flexshift {

using detail::json;

namespace {

json number(double v) {
    if (std::isinf(v)) return v < 0 ? "-inf" : "inf";
    return v;
}

json numbers(const std::vector<double>& v) {
    json out = json::array();
    for (double x : v) out.push_back(number(x));
    return out;
}

double to_number(const json& j) {
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
        if (s == "inf") return std::numeric_limits<double>::infinity();
        throw ConfigError("expected a number, got \"" + s + "\"");
    }
    return j.get<double>();
}

std::vector<double> to_numbers(const json& j) {
    std::vector<double> out;
    for (const auto& x : j) out.push_back(to_number(x));
    return out;
}

json to_json(const RunConfig& c) {
    const auto& t = c.train;
    const auto& d = c.dataset;
    json lambdas = json::array();
    for (const auto& l : c.sweep_lambdas) lambdas.push_back(numbers(l));
    return {
        {"network", c.network_name == "inline" ? detail::network_json(c.network) : json(c.network_name)},
        {"dataset",
         {{"kind", to_string(d.kind)},
          {"path", d.path},
          {"train_limit", d.train_limit},
          {"test_limit", d.test_limit},
          {"mean", d.mean},
          {"std", d.std},
          {"seed", d.seed},
          {"train_size", d.train_size},
          {"test_size", d.test_size},
          {"classes", d.classes},
          {"shape", d.shape}}},
        {"train",
         {{"mode", to_string(t.mode)},
          {"k", t.k},
          {"code_bits", t.code_bits},
          {"lambda", numbers(t.lambda)},
          {"initial_thresholds", numbers(t.initial_thresholds)},
          {"per_layer_thresholds", t.per_layer_thresholds},
          {"tau", t.tau},
          {"gate_sum", to_string(t.gate_sum)},
          {"lr", t.lr},
          {"lr_decay", t.lr_decay},
          {"batch_size", t.batch_size},
          {"epochs", t.epochs},
          {"clip_norm", t.clip_norm},
          {"seed", t.seed},
          {"record_wall_time", t.record_wall_time}}},
        {"out_dir", c.out_dir},
        {"calibration_images", c.calibration_images},
        {"threads", c.threads},
        {"sweep", {{"lambdas", lambdas}, {"seeds", c.sweep_seeds}, {"endpoints", c.sweep_endpoints}}},
    };
}

RunConfig from_json(const json& j) {
    RunConfig c;
    const auto& net = j.at("network");
    if (net.is_string()) {
        c.network_name = net.get<std::string>();
        c.network = preset_network(c.network_name);
    } else {
        c.network_name = "inline";
        c.network = detail::network_from(net);
    }
    const auto& d = j.at("dataset");
    c.dataset.kind = dataset_kind_from_string(d.at("kind").get<std::string>());
    c.dataset.path = d.at("path").get<std::string>();
    c.dataset.train_limit = d.at("train_limit").get<std::size_t>();
    c.dataset.test_limit = d.at("test_limit").get<std::size_t>();
    c.dataset.mean = d.at("mean").get<std::vector<double>>();
    c.dataset.std = d.at("std").get<std::vector<double>>();
    c.dataset.seed = d.at("seed").get<std::uint64_t>();
    c.dataset.train_size = d.at("train_size").get<std::size_t>();
    c.dataset.test_size = d.at("test_size").get<std::size_t>();
    c.dataset.classes = d.at("classes").get<std::size_t>();
    c.dataset.shape = d.at("shape").get<Shape>();
    const auto& t = j.at("train");
    c.train.mode = train_mode_from_string(t.at("mode").get<std::string>());
    c.train.k = t.at("k").get<int>();
    c.train.code_bits = t.at("code_bits").get<int>();
    c.train.lambda = to_numbers(t.at("lambda"));
    c.train.initial_thresholds = to_numbers(t.at("initial_thresholds"));
    c.train.per_layer_thresholds = t.at("per_layer_thresholds").get<bool>();
    c.train.tau = t.at("tau").get<double>();
    c.train.gate_sum = gate_sum_from_string(t.at("gate_sum").get<std::string>());
    c.train.lr = t.at("lr").get<double>();
    c.train.lr_decay = t.at("lr_decay").get<bool>();
    c.train.batch_size = t.at("batch_size").get<std::size_t>();
    c.train.epochs = t.at("epochs").get<std::size_t>();
    c.train.clip_norm = t.at("clip_norm").get<double>();
    c.train.seed = t.at("seed").get<std::uint64_t>();
    c.train.record_wall_time = t.at("record_wall_time").get<bool>();
    c.out_dir = j.at("out_dir").get<std::string>();
    c.calibration_images = j.at("calibration_images").get<std::size_t>();
    c.threads = j.at("threads").get<unsigned>();
    const auto& s = j.at("sweep");
    c.sweep_lambdas.clear();
    for (const auto& l : s.at("lambdas")) c.sweep_lambdas.push_back(to_numbers(l));
    c.sweep_seeds = s.at("seeds").get<std::vector<std::uint64_t>>();
    c.sweep_endpoints = s.at("endpoints").get<bool>();
    return c;
}

void check_keys(const json& given, const json& known, const std::string& where) {
    for (const auto& [key, value] : given.items()) {
        const std::string path = where.empty() ? key : where + "." + key;
        if (!known.contains(key)) throw ConfigError("unknown config key '" + path + "'");
        if (path == "network") continue;
        if (value.is_object() && known.at(key).is_object()) check_keys(value, known.at(key), path);
    }
}

RunConfig decode(const json& doc) {
    try {
        return from_json(doc);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
}

}  // namespace

void RunConfig::validate() const {
    train.validate();
    infer_shapes(network);
    if (calibration_images == 0) throw ConfigError("calibration_images must be positive");
    if (threads == 0) throw ConfigError("threads must be at least 1");
    Shape expected;
    std::size_t classes = 10;
    switch (dataset.kind) {
        case DatasetKind::mnist_idx: expected = {1, 28, 28}; break;
        case DatasetKind::cifar10_binary: expected = {3, 32, 32}; break;
        case DatasetKind::synthetic:
            expected = dataset.shape;
            classes = dataset.classes;
            if (dataset.train_size == 0 || dataset.test_size == 0)
                throw ConfigError("synthetic train_size and test_size must be positive");
            break;
    }
    if (expected != network.input_shape)
        throw ConfigError("dataset images " + shape_string(expected) + " do not match network input " +
                          shape_string(network.input_shape));
    if (classes != network.classes)
        throw ConfigError("dataset has " + std::to_string(classes) + " classes, network has " +
                          std::to_string(network.classes));
    dataset_files(dataset);  // every referenced file must exist
    for (const auto& l : sweep_lambdas)
        if (train.mode == TrainMode::flexible && l.size() != static_cast<std::size_t>(train.k))
            throw ConfigError("every sweep lambda needs " + std::to_string(train.k) + " entries");
}

RunConfig parse_run_config(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw ConfigError("config must be a JSON object");
    json merged = to_json(RunConfig{});
    check_keys(doc, merged, "");
    for (const auto& [key, value] : doc.items()) {
        if (value.is_object() && merged.at(key).is_object() && key != "network")
            merged[key].update(value);
        else
            merged[key] = value;
    }
    return decode(merged);
}

std::string canonical_json(const RunConfig& config) { return to_json(config).dump(2) + "\n"; }

void apply_override(RunConfig& config, const std::string& key, const std::string& value) {
    json doc = to_json(config);
    json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown config key '" + key + "'");
        node = &(*node)[part];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    try {
        *node = json::parse(value);
    } catch (const json::parse_error&) {
        *node = value;
    }
    config = decode(doc);
}

std::string git_blob_sha1(std::span<const std::uint8_t> bytes) {
    const std::string header = "blob " + std::to_string(bytes.size()) + '\0';
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    const bool ok = ctx && EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                    EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                    EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) == 1 &&
                    EVP_DigestFinal_ex(ctx, digest, &len) == 1;
    EVP_MD_CTX_free(ctx);
    if (!ok) throw Error("SHA-1 computation failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 15];
    }
    return out;
}

std::string git_blob_sha1_of_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path);
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return git_blob_sha1(bytes);
}

void write_manifest(const std::string& path, const Manifest& m) {
    json files_in = json::array(), files_out = json::array();
    for (const auto& [p, h] : m.inputs) files_in.push_back({{"path", p}, {"blob_sha1", h}});
    for (const auto& [p, h] : m.outputs) files_out.push_back({{"path", p}, {"blob_sha1", h}});
    const json doc = {{"command", m.command},
                      {"config_hash", m.config_hash},
                      {"seed", m.seed},
                      {"inputs", files_in},
                      {"outputs", files_out}};
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << doc.dump(2) << "\n";
    if (!out) throw InputError("cannot write " + path);
}

int exit_code(const std::exception& e) {
    if (dynamic_cast<const NumericError*>(&e)) return 3;
    if (dynamic_cast<const UsageError*>(&e) || dynamic_cast<const ConfigError*>(&e) ||
        dynamic_cast<const InputError*>(&e))
        return 2;
    return 1;
}

}  // namespace flexshift
