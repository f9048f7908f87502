#include "doctest.h"

#include <cmath>
#include <limits>
#include <random>

#include "flexshift/errors.hpp"
#include "flexshift/quantizer.hpp"

using namespace flexshift;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Independent rounding oracle: log2 then round half up. Only trusted away from ties.
double oracle_round(double x, int e_min, int e_max) {
    if (x == 0.0 || std::abs(x) < std::ldexp(1.0, e_min - 1)) return 0.0;
    int e = static_cast<int>(std::floor(std::log2(std::abs(x)) + 0.5));
    e = std::max(e_min, std::min(e_max, e));
    return std::copysign(std::ldexp(1.0, e), x);
}

bool near_tie(double x) {
    const double l = std::log2(std::abs(x));
    return std::abs(l - std::floor(l) - 0.5) < 1e-9;
}

const ExponentRange kWide = ExponentRange::ending_at(30, 8);

}  // namespace

TEST_CASE("round_pow2 examples") {
    CHECK(round_pow2(1.0, kWide) == PowerOfTwoCode::of(1, 0));
    CHECK(round_pow2(0.75, kWide) == PowerOfTwoCode::of(1, 0));
    CHECK(round_pow2(-0.3, kWide) == PowerOfTwoCode::of(-1, -2));
    CHECK(round_pow2(0.0, kWide).is_zero);
    CHECK(round_pow2(-0.3, kWide).value() == -0.25);
}

TEST_CASE("round_pow2 agrees with the log2 oracle") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> lg(-40.0, 40.0);
    std::uniform_int_distribution<int> emax(-10, 10);
    int checked = 0;
    for (int i = 0; i < 200000; ++i) {
        const double x = (rng() & 1 ? -1.0 : 1.0) * std::exp2(lg(rng));
        if (near_tie(x)) continue;
        const auto r = ExponentRange::ending_at(emax(rng), 3 + static_cast<int>(rng() % 5));
        const double got = round_pow2(x, r).value();
        if (got != oracle_round(x, r.e_min, r.e_max)) {
            FAIL_CHECK("x=" << x << " got " << got);
            break;
        }
        ++checked;
    }
    CHECK(checked > 199000);
}

TEST_CASE("log-domain ties round up") {
    // Fractional log2 reaches 0.5 between the double just below sqrt(2) and the double above it.
    const double above = M_SQRT2;  // the nearest double exceeds sqrt(2)
    const double below = std::nextafter(above, 0.0);
    CHECK(round_log2(above) == 1);
    CHECK(round_log2(below) == 0);
    CHECK(round_log2(std::ldexp(above, -20)) == -19);
    CHECK(round_log2(std::ldexp(below, 7)) == 7);
    CHECK(round_log2(1.0) == 0);
    CHECK(round_log2(std::nextafter(1.0, 0.0)) == 0);
    CHECK(round_log2(std::numeric_limits<double>::denorm_min()) == -1074);
}

TEST_CASE("clamping and underflow") {
    const auto r = ExponentRange::ending_at(0, 4);
    CHECK(r.e_min == -6);
    CHECK(round_pow2(100.0, r) == PowerOfTwoCode::of(1, 0));
    CHECK(round_pow2(std::ldexp(1.0, -7), r) == PowerOfTwoCode::of(1, -6));
    CHECK(round_pow2(std::ldexp(0.99, -7), r).is_zero);
    CHECK(round_pow2(-std::ldexp(0.99, -7), r) == PowerOfTwoCode::zero());
}

TEST_CASE("exponent range construction") {
    CHECK(ExponentRange::for_max_abs(0.9).e_max == 0);
    CHECK(ExponentRange::for_max_abs(0.3).e_max == -2);
    CHECK(ExponentRange::for_max_abs(0.0).e_max == 0);
    CHECK(ExponentRange::ending_at(5, 5).e_min == 5 - 14);
    CHECK_THROWS_AS(ExponentRange::ending_at(0, 2), ConfigError);
    ExponentRange bad{0, -7, 4};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    ExponentRange flipped{-3, -2, 4};
    CHECK_THROWS_AS(flipped.validate(), ConfigError);
}

TEST_CASE("quantize_filter hand recursions") {
    const std::vector<double> w{0.75};
    SUBCASE("both gates open") {
        const std::vector<double> t{0, 0};
        auto [q, trace] = quantize_filter<double>(w, t, 2, kWide);
        REQUIRE(q.k() == 2);
        CHECK(q.terms[0][0] == PowerOfTwoCode::of(1, 0));
        CHECK(q.terms[1][0] == PowerOfTwoCode::of(-1, -2));
        CHECK(dequantize<double>(q)[0] == 0.75);
        REQUIRE(trace.rounds.size() == 3);
        CHECK(trace.rounds[0].norm == 0.75);
        CHECK(trace.rounds[1].residual[0] == -0.25);
        CHECK(trace.rounds[1].norm == 0.25);
        CHECK(trace.rounds[2].norm == 0.0);
        CHECK(trace.rounds[0].fired);
        CHECK(trace.rounds[1].fired);
        CHECK_FALSE(trace.rounds[2].fired);
    }
    SUBCASE("second gate closed") {
        const std::vector<double> t{0, 0.3};
        auto [q, trace] = quantize_filter<double>(w, t, 2, kWide);
        CHECK(q.k() == 1);
        CHECK(dequantize<double>(q)[0] == 1.0);
        CHECK_FALSE(trace.rounds[1].fired);
        CHECK(trace.rounds[2].residual[0] == -0.25);
    }
    SUBCASE("closed first gate does not stop the second") {
        const std::vector<double> t{1.0, 0.0};
        auto [q, trace] = quantize_filter<double>(w, t, 2, kWide);
        CHECK(q.k() == 1);
        CHECK(q.terms[0][0] == PowerOfTwoCode::of(1, 0));
        CHECK_FALSE(trace.rounds[0].fired);
        CHECK(trace.rounds[1].residual[0] == 0.75);
    }
}

TEST_CASE("effective_k special cases") {
    const std::vector<double> zeros(9, 0.0), t0{0, 0}, tinf{kInf, kInf};
    CHECK(effective_k<double>(zeros, t0, 2, kWide) == 0);
    CHECK(dequantize<double>(quantize_filter<double>(zeros, t0, 2, kWide).first) == zeros);
    const std::vector<double> w{0.3, -0.7, 0.11};
    CHECK(effective_k<double>(w, tinf, 2, kWide) == 0);
    CHECK(effective_k<double>(w, t0, 2, kWide) == 2);
    const std::vector<double> power{0.5};
    CHECK(effective_k<double>(power, t0, 2, kWide) == 1);
    const std::vector<double> t3{0, 0, 0};
    CHECK(effective_k<double>(w, t3, 3, kWide) == 3);
    CHECK(effective_k<double>(w, t3, 0, kWide) == 0);
    CHECK_THROWS_AS(quantize_filter<double>(w, t0, 3, kWide), UsageError);
}

TEST_CASE("residual contraction over a million scalars") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> lg(-12.0, 6.0);
    std::uniform_int_distribution<int> emax(-6, 4);
    std::size_t violations = 0, bound_violations = 0, bound_checked = 0;
    const std::vector<double> t{0, 0, 0};
    for (int i = 0; i < 1000000; ++i) {
        const double x = (rng() & 1 ? -1.0 : 1.0) * std::exp2(lg(rng));
        const auto r = ExponentRange::ending_at(emax(rng), 4);
        const std::vector<double> w{x};
        const auto trace = quantize_filter<double>(w, t, 3, r).second;
        for (std::size_t j = 0; j + 1 < trace.rounds.size(); ++j)
            if (trace.rounds[j + 1].norm > trace.rounds[j].norm) ++violations;
        const double l = std::log2(std::abs(x));
        if (l > r.e_min - 0.5 && l < r.e_max + 0.5) {
            ++bound_checked;
            if (std::abs(x - round_pow2(x, r).value()) > (M_SQRT2 - 1) * std::abs(x) * (1 + 1e-15)) ++bound_violations;
        }
    }
    CHECK(violations == 0);
    CHECK(bound_violations == 0);
    CHECK(bound_checked > 100000);
}

TEST_CASE("residual contraction for filters") {
    std::mt19937_64 rng(6);
    std::normal_distribution<double> n(0.0, 0.1);
    const std::vector<double> t{0, 0};
    for (int i = 0; i < 2000; ++i) {
        std::vector<float> w(1 + rng() % 40);
        double mx = 0;
        for (auto& v : w) {
            v = static_cast<float>(n(rng));
            mx = std::max(mx, std::abs(static_cast<double>(v)));
        }
        const auto trace = quantize_filter<float>(w, t, 2, ExponentRange::for_max_abs(mx)).second;
        for (std::size_t j = 0; j + 1 < trace.rounds.size(); ++j)
            REQUIRE(trace.rounds[j + 1].norm <= trace.rounds[j].norm);
    }
}

namespace {

// Draws sums of up to `terms` signed powers of two inside (e_min, e_max) whose greedy log-rounding
// decomposition reproduces the drawn terms, checked with the log2 oracle.
std::vector<double> representable_values(std::mt19937_64& rng, std::size_t count, int terms, int e_min, int e_max) {
    std::uniform_int_distribution<int> ex(e_min + 1, e_max - 1);
    std::vector<double> out;
    while (out.size() < count) {
        const int n = 1 + static_cast<int>(rng() % terms);
        std::vector<double> parts;
        double v = 0;
        for (int p = 0; p < n; ++p) {
            parts.push_back((rng() & 1 ? -1.0 : 1.0) * std::ldexp(1.0, ex(rng)));
            v += parts.back();
        }
        double r = v;
        bool greedy = true;
        for (double part : parts) {
            if (near_tie(r) || oracle_round(r, e_min, e_max) != part) {
                greedy = false;
                break;
            }
            r -= part;
        }
        if (greedy && r == 0.0) out.push_back(v);
    }
    return out;
}

}  // namespace

TEST_CASE("exact representation of greedy sums") {
    std::mt19937_64 rng(7);
    const auto r = ExponentRange::ending_at(0, 4);
    const std::vector<double> t{0, 0};
    for (double v : representable_values(rng, 10000, 2, r.e_min, r.e_max)) {
        const std::vector<double> w{v};
        REQUIRE(dequantize<double>(quantize_filter<double>(w, t, 2, r).first)[0] == v);
    }
    const auto wide = ExponentRange::ending_at(10, 6);
    const std::vector<double> t3{0, 0, 0};
    for (double v : representable_values(rng, 2000, 3, wide.e_min, wide.e_max)) {
        const std::vector<double> w{v};
        REQUIRE(dequantize<double>(quantize_filter<double>(w, t3, 3, wide).first)[0] == v);
    }
}

TEST_CASE("gate monotonicity") {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n(0.0, 0.2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 5000; ++i) {
        std::vector<double> w(1 + rng() % 12);
        for (auto& v : w) v = n(rng);
        std::vector<double> t{u(rng) * 0.5, u(rng) * 0.2};
        const int before = effective_k<double>(w, t, 2, kWide);
        t[rng() % 2] += u(rng) * 0.3;
        REQUIRE(effective_k<double>(w, t, 2, kWide) <= before);
    }
}

TEST_CASE("infinite thresholds reduce to pruning and to the unconditional recursion") {
    std::mt19937_64 rng(9);
    std::normal_distribution<float> n(0.0f, 0.3f);
    const std::vector<double> tpos{kInf, kInf, kInf}, tneg{-kInf, -kInf, -kInf};
    for (int i = 0; i < 500; ++i) {
        std::vector<float> w(1 + rng() % 30);
        double mx = 0;
        for (auto& v : w) {
            v = n(rng);
            mx = std::max(mx, std::abs(static_cast<double>(v)));
        }
        if (i % 17 == 0) std::fill(w.begin(), w.end(), 0.0f);
        const auto r = ExponentRange::for_max_abs(mx);
        CHECK(dequantize<float>(quantize_filter<float>(w, tpos, 3, r).first) == std::vector<float>(w.size(), 0.0f));
        for (int k = 0; k <= 3; ++k) {
            // Q_k(w) = Q_{k-1}(w) + Q_1(w - Q_{k-1}(w))
            std::vector<float> q(w.size(), 0.0f);
            for (int j = 0; j < k; ++j)
                for (std::size_t e = 0; e < w.size(); ++e)
                    q[e] = q[e] + static_cast<float>(oracle_round(static_cast<double>(w[e] - q[e]), r.e_min, r.e_max));
            const auto got = quantize_filter<float>(w, tneg, k, r).first;
            REQUIRE(got.k() == static_cast<std::size_t>(k));
            REQUIRE(dequantize<float>(got) == q);
        }
    }
}

TEST_CASE("dequantize") {
    QuantizedFilter empty;
    empty.elements = 4;
    CHECK(dequantize<double>(empty) == std::vector<double>(4, 0.0));
    QuantizedFilter q;
    q.elements = 1;
    q.terms = {{PowerOfTwoCode::of(1, 0)}, {PowerOfTwoCode::of(-1, -2)}};
    CHECK(dequantize<double>(q)[0] == 0.75);
}

TEST_CASE("quantize after dequantize is the identity on representable filters") {
    std::mt19937_64 rng(10);
    const auto r = ExponentRange::ending_at(0, 4);
    const std::vector<double> t{0, 0};
    int trials = 0;
    for (int i = 0; i < 3000; ++i) {
        const auto w = representable_values(rng, 1 + rng() % 5, 2, r.e_min, r.e_max);
        auto first = quantize_filter<double>(w, t, 2, r).first;
        auto again = quantize_filter<double>(dequantize<double>(first), t, 2, r).first;
        REQUIRE(again == first);
        ++trials;
    }
    CHECK(trials == 3000);
}

TEST_CASE("quantize_layer derives a range per layer") {
    Tensor<float> w({3, 2, 2, 2});
    std::mt19937_64 rng(12);
    std::normal_distribution<float> n(0.0f, 0.1f);
    for (auto& v : w.data()) v = n(rng);
    w[5] = 0.9f;
    const std::vector<double> t{0, 0};
    const auto lq = quantize_layer(w, t, 2);
    CHECK(lq.layer.range == ExponentRange::ending_at(0, 4));
    CHECK(lq.layer.filters.size() == 3);
    CHECK(lq.traces.size() == 3);
    CHECK(lq.layer.filters[1].elements == 8);
    const auto back = dequantize_layer<float>(lq.layer);
    CHECK(back.shape() == w.shape());
    for (std::size_t f = 0; f < 3; ++f) {
        const auto expect = dequantize<float>(lq.layer.filters[f]);
        for (std::size_t e = 0; e < 8; ++e) CHECK(back[f * 8 + e] == expect[e]);
    }
}

TEST_CASE("quantize_network covers every weight slot") {
    const auto net = preset_network("network-2");
    auto params = build_network<float>(net, 3);
    const std::vector<std::vector<double>> t{{0.0, 0.0}};
    const auto model = quantize_network(net, params, t, 2);
    CHECK(model.layers.size() == weight_slots(net).size());
    apply_quantized_weights(net, model, params);
    const auto again = quantize_network(net, params, t, 2);
    CHECK(pack_weights(again).size() == pack_weights(model).size());
    const std::vector<std::vector<double>> wrong(3, {0.0, 0.0});
    CHECK_THROWS_AS(quantize_network(net, params, wrong, 2), ConfigError);
}

namespace {

QuantizedModel random_model(std::mt19937_64& rng) {
    QuantizedModel m;
    const std::size_t layers = rng() % 4;
    for (std::size_t l = 0; l < layers; ++l) {
        QuantizedLayer layer;
        const std::size_t filters = rng() % 5;
        const std::size_t per = 1 + rng() % 13;
        layer.shape = {filters, per};
        if (rng() & 1) layer.shape = {filters, 1, per, 1};
        layer.range = ExponentRange::ending_at(static_cast<int>(rng() % 20) - 10, 3 + static_cast<int>(rng() % 4));
        for (std::size_t f = 0; f < filters; ++f) {
            QuantizedFilter q;
            q.elements = per;
            const std::size_t k = rng() % 4;
            for (std::size_t j = 0; j < k; ++j) {
                std::vector<PowerOfTwoCode> term(per);
                for (auto& c : term) {
                    if (rng() % 4 == 0) continue;
                    const int span = layer.range.e_max - layer.range.e_min + 1;
                    c = PowerOfTwoCode::of(rng() & 1 ? -1 : 1, layer.range.e_min + static_cast<int>(rng() % span));
                }
                q.terms.push_back(std::move(term));
            }
            layer.filters.push_back(std::move(q));
        }
        m.layers.push_back(std::move(layer));
    }
    return m;
}

}  // namespace

TEST_CASE("pack and unpack are inverse") {
    std::mt19937_64 rng(13);
    for (int i = 0; i < 2000; ++i) {
        const auto m = random_model(rng);
        const auto bytes = pack_weights(m);
        REQUIRE(unpack_weights(bytes) == m);
        REQUIRE(pack_weights(unpack_weights(bytes)) == bytes);
    }
}

TEST_CASE("packed stream sizes") {
    SUBCASE("no layers") {
        const auto bytes = pack_weights(QuantizedModel{});
        CHECK(bytes.size() == 10);
        CHECK(packed_header_bytes(bytes) == bytes.size());
    }
    SUBCASE("layer with no filters") {
        QuantizedModel m;
        m.layers.push_back({{0, 9}, ExponentRange::ending_at(0), {}});
        const auto bytes = pack_weights(m);
        CHECK(packed_header_bytes(bytes) == bytes.size());
        CHECK(unpack_weights(bytes) == m);
    }
    SUBCASE("1000-weight filter with one term") {
        Tensor<float> w({1, 1000});
        std::mt19937_64 rng(14);
        std::normal_distribution<float> n(0.0f, 0.1f);
        for (auto& v : w.data()) v = n(rng);
        const std::vector<double> t{0.0};
        QuantizedModel m;
        m.layers.push_back(quantize_layer(w, t, 1).layer);
        REQUIRE(m.layers[0].filters[0].k() == 1);
        const auto bytes = pack_weights(m);
        const std::size_t header = packed_header_bytes(bytes);
        CHECK(header == 10 + 4 + 1 + 2 * 4 + 2);
        // 4000 code bits plus the 2-bit k field, padded to a byte.
        CHECK(8 * (bytes.size() - header) == (4000 + 2 + 7) / 8 * 8);
    }
}

TEST_CASE("packed stream golden bytes") {
    QuantizedModel m;
    QuantizedFilter q;
    q.elements = 2;
    q.terms = {{PowerOfTwoCode::of(1, 0), PowerOfTwoCode::of(-1, -2)}};
    m.layers.push_back({{1, 2}, ExponentRange::ending_at(0, 4), {q}});
    const std::vector<std::uint8_t> expect{'F', 'X', 'P', 'W', 1, 0, 1, 0, 0, 0,  // magic, version, layers
                                           1, 0, 0, 0, 2, 1, 0, 0, 0, 2, 0, 0, 0,  // filters, rank, dims
                                           0x00, 4,                                  // e_max, code_bits
                                           0x5F, 0x40};  // k=01, +2^0 = 0111, -2^-2 = 1101, pad
    CHECK(pack_weights(m) == expect);
}

TEST_CASE("encoding errors") {
    QuantizedFilter q;
    q.elements = 1;
    q.terms = {{PowerOfTwoCode::of(1, 3)}};
    QuantizedModel m;
    m.layers.push_back({{1, 1}, ExponentRange::ending_at(0, 4), {q}});
    CHECK_THROWS_AS(pack_weights(m), EncodingError);
    m.layers[0].filters[0].terms[0][0] = PowerOfTwoCode::of(1, -7);
    CHECK_THROWS_AS(pack_weights(m), EncodingError);
    m.layers[0].filters[0].terms = std::vector<std::vector<PowerOfTwoCode>>(4, {PowerOfTwoCode::zero()});
    CHECK_THROWS_AS(pack_weights(m), EncodingError);

    m.layers[0].filters[0].terms = {{PowerOfTwoCode::of(1, 0)}};
    auto bytes = pack_weights(m);
    auto neg_zero = bytes;
    neg_zero.back() = 0x60;  // k=01 then code 1000
    CHECK_THROWS_AS(unpack_weights(neg_zero), EncodingError);
    auto truncated = bytes;
    truncated.pop_back();
    CHECK_THROWS_AS(unpack_weights(truncated), EncodingError);
    auto trailing = bytes;
    trailing.push_back(0);
    CHECK_THROWS_AS(unpack_weights(trailing), EncodingError);
    auto magic = bytes;
    magic[0] = 'X';
    CHECK_THROWS_AS(unpack_weights(magic), EncodingError);
    auto version = bytes;
    version[4] = 9;
    CHECK_THROWS_AS(unpack_weights(version), VersionError);
}
