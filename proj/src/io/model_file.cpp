#include "flexshift/model_file.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json_codec.hpp"

namespace flexshift {

using detail::json;

std::string network_to_json(const NetworkConfig& network) { return detail::network_json(network).dump(); }

NetworkConfig network_from_json(const std::string& text) {
    try {
        return detail::network_from(json::parse(text));
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("network JSON does not parse: ") + e.what());
    }
}

namespace {

class Writer {
public:
    std::vector<std::uint8_t> out;

    void u8(std::uint8_t v) { out.push_back(v); }
    void u16(std::uint16_t v) { put(v, 2); }
    void u32(std::uint64_t v) {
        if (v > 0xffffffffULL) throw EncodingError("model component too large for a u32 length");
        put(v, 4);
    }
    void u64(std::uint64_t v) { put(v, 8); }
    void blob(std::span<const std::uint8_t> b) {
        u32(b.size());
        out.insert(out.end(), b.begin(), b.end());
    }
    void text(const std::string& s) { blob({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()}); }
    void tensor(const Tensor<float>& t) {
        header(t.shape(), t.size());
        for (float v : t.data()) u32(std::bit_cast<std::uint32_t>(v));
    }
    void tensor(const Tensor<double>& t) {
        header(t.shape(), t.size());
        for (double v : t.data()) u64(std::bit_cast<std::uint64_t>(v));
    }

private:
    void header(const Shape& shape, std::size_t count) {
        u8(static_cast<std::uint8_t>(shape.size()));
        for (auto d : shape) u32(d);
        u32(count);
    }
    void put(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

    std::uint64_t take(int n) {
        if (pos_ + static_cast<std::size_t>(n) > b_.size())
            throw EncodingError("model file truncated at byte " + std::to_string(pos_));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= std::uint64_t{b_[pos_ + i]} << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }
    std::vector<std::uint8_t> blob() {
        const auto n = static_cast<std::size_t>(take(4));
        if (n > b_.size() - pos_) throw EncodingError("model file truncated at byte " + std::to_string(pos_));
        std::vector<std::uint8_t> v(b_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                    b_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return v;
    }
    std::string text() {
        const auto v = blob();
        return {v.begin(), v.end()};
    }
    template <typename T, typename Bits>
    Tensor<T> tensor() {
        const auto rank = static_cast<std::size_t>(take(1));
        Shape shape(rank);
        for (auto& d : shape) d = static_cast<std::size_t>(take(4));
        const auto count = static_cast<std::size_t>(take(4));
        if (count * sizeof(T) > b_.size() - pos_) throw EncodingError("model file truncated in a tensor");
        std::vector<T> data(count);
        for (auto& v : data) v = std::bit_cast<T>(static_cast<Bits>(take(sizeof(T))));
        if (rank == 0 && count == 0) return {};
        if (count != shape_volume(shape)) throw EncodingError("tensor element count does not match its shape");
        return Tensor<T>(shape, std::move(data));
    }
    bool done() const { return pos_ == b_.size(); }

private:
    std::span<const std::uint8_t> b_;
    std::size_t pos_ = 0;
};

constexpr int kTensorsPerLayer = 6;

template <typename L, typename F>
void each_tensor(L& layer, F&& f) {
    f(layer.weight);
    f(layer.bias);
    f(layer.gamma);
    f(layer.beta);
    f(layer.running_mean);
    f(layer.running_var);
}

json provenance_json(const Provenance& p) {
    return {{"mode", p.mode},   {"k", p.k},         {"code_bits", p.code_bits}, {"lambda", p.lambda},
            {"tau", p.tau},     {"seed", p.seed},   {"epochs", p.epochs},       {"accuracy", p.accuracy},
            {"config_hash", p.config_hash}};
}

Provenance provenance_from(const json& j) {
    Provenance p;
    p.mode = j.at("mode").get<std::string>();
    p.k = j.at("k").get<int>();
    p.code_bits = j.at("code_bits").get<int>();
    p.lambda = j.at("lambda").get<std::vector<double>>();
    p.tau = j.at("tau").get<double>();
    p.seed = j.at("seed").get<std::uint64_t>();
    p.epochs = j.at("epochs").get<std::size_t>();
    p.accuracy = j.at("accuracy").get<double>();
    p.config_hash = j.at("config_hash").get<std::string>();
    return p;
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const ModelFile& m) {
    Writer w;
    for (char c : std::string("FXSM")) w.u8(static_cast<std::uint8_t>(c));
    w.u16(kModelFileVersion);
    w.u8(m.quantized ? 1 : 0);
    w.text(network_to_json(m.network));
    w.text(provenance_json(m.provenance).dump());
    if (m.quantized) {
        w.blob(m.packed_weights);
        w.blob(m.calibration);
    } else {
        w.u32((m.params.layers.size() + m.params.projections.size()) * kTensorsPerLayer);
        for (const auto& l : m.params.layers) each_tensor(l, [&](const Tensor<float>& t) { w.tensor(t); });
        for (const auto& l : m.params.projections) each_tensor(l, [&](const Tensor<float>& t) { w.tensor(t); });
        w.tensor(m.thresholds);
    }
    return std::move(w.out);
}

ModelFile parse_model(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), "FXSM", 4) != 0)
        throw EncodingError("not a model file (bad magic)");
    Reader r(bytes.subspan(4));
    const auto version = static_cast<int>(r.take(2));
    if (version != kModelFileVersion) throw VersionError(version, kModelFileVersion);
    const auto kind = r.take(1);
    if (kind > 1) throw EncodingError("unknown model kind " + std::to_string(kind));
    ModelFile m;
    m.quantized = kind == 1;
    m.network = network_from_json(r.text());
    try {
        m.provenance = provenance_from(json::parse(r.text()));
    } catch (const json::exception& e) {
        throw EncodingError(std::string("bad provenance record: ") + e.what());
    }
    if (m.quantized) {
        m.packed_weights = r.blob();
        m.calibration = r.blob();
    } else {
        const auto count = static_cast<std::size_t>(r.take(4));
        const std::size_t layers = m.network.layers.size(), skips = m.network.skips.size();
        if (count != (layers + skips) * kTensorsPerLayer)
            throw EncodingError("model file holds " + std::to_string(count) + " tensors, network needs " +
                                std::to_string((layers + skips) * kTensorsPerLayer));
        m.params.layers.resize(layers);
        m.params.projections.resize(skips);
        auto read = [&](Tensor<float>& t) { t = r.tensor<float, std::uint32_t>(); };
        for (auto& l : m.params.layers) each_tensor(l, read);
        for (auto& l : m.params.projections) each_tensor(l, read);
        m.thresholds = r.tensor<double, std::uint64_t>();
    }
    if (!r.done()) throw EncodingError("trailing bytes after model file");
    return m;
}

void save_model(const std::string& path, const ModelFile& model) {
    const auto bytes = serialize_model(model);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InputError("cannot write " + path);
}

ModelFile load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open model file " + path);
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_model(bytes);
}

}  // namespace flexshift
