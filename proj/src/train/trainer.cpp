#include "flexshift/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <random>
#include <tuple>

#include <json.hpp>

namespace flexshift {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string json_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return {};
}

nlohmann::json to_json_value(double v) {
    const auto special = json_number(v);
    return special.empty() ? nlohmann::json(v) : nlohmann::json(special);
}

std::string state_dump(const TrainState& state, const StepReport& report, const std::string& reason) {
    nlohmann::json j;
    j["reason"] = reason;
    j["epoch"] = state.epoch;
    j["step"] = state.step;
    j["ce_loss"] = to_json_value(report.ce);
    j["reg_loss"] = to_json_value(report.reg);
    j["grad_norm"] = to_json_value(report.grad_norm);
    auto& t = j["thresholds"] = nlohmann::json::array();
    for (double v : state.thresholds.data()) t.push_back(to_json_value(v));
    auto& w = j["weight_max_abs"] = nlohmann::json::object();
    const auto slots = weight_slots(state.network);
    for (const auto& s : slots) {
        double mx = 0.0;
        bool finite = true;
        for (float v : state.params.weight(s).data()) {
            finite = finite && std::isfinite(v);
            mx = std::max(mx, std::abs(static_cast<double>(v)));
        }
        w[s.name] = finite ? to_json_value(mx) : nlohmann::json("non-finite");
    }
    return j.dump(2);
}

bool quantized(const TrainConfig& c) { return c.mode != TrainMode::full_precision; }

}  // namespace

std::string to_string(TrainMode mode) {
    switch (mode) {
        case TrainMode::full_precision: return "full_precision";
        case TrainMode::lightnn: return "lightnn";
        case TrainMode::flexible: return "flexible";
    }
    return "?";
}

TrainMode train_mode_from_string(const std::string& s) {
    if (s == "full_precision") return TrainMode::full_precision;
    if (s == "lightnn") return TrainMode::lightnn;
    if (s == "flexible") return TrainMode::flexible;
    throw ConfigError("unknown training mode '" + s + "'");
}

std::string to_string(GateSum sum) { return sum == GateSum::all_rounds ? "all_rounds" : "fired_rounds"; }

GateSum gate_sum_from_string(const std::string& s) {
    if (s == "all_rounds") return GateSum::all_rounds;
    if (s == "fired_rounds") return GateSum::fired_rounds;
    throw ConfigError("unknown gate sum '" + s + "'");
}

void TrainConfig::validate() const {
    if (quantized(*this) && (k < 1 || k > 3)) throw ConfigError("k must be in [1, 3], got " + std::to_string(k));
    if (code_bits < 3 || code_bits > 16) throw ConfigError("code_bits must be in [3, 16]");
    if (mode == TrainMode::flexible) {
        if (lambda.size() != static_cast<std::size_t>(k))
            throw ConfigError("lambda has " + std::to_string(lambda.size()) + " entries, k is " + std::to_string(k));
        for (double l : lambda)
            if (!(l >= 0) || !std::isfinite(l)) throw ConfigError("lambda entries must be finite and non-negative");
        if (!initial_thresholds.empty() && initial_thresholds.size() != static_cast<std::size_t>(k))
            throw ConfigError("initial thresholds need k entries");
        for (double t : initial_thresholds)
            if (std::isnan(t)) throw ConfigError("threshold is NaN");
    }
    if (!(tau > 0) || !std::isfinite(tau)) throw ConfigError("tau must be positive");
    if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("learning rate must be positive");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (!std::isfinite(clip_norm)) throw ConfigError("clip norm must be finite");
}

TrainState init_train_state(const NetworkConfig& network, const TrainConfig& config) {
    config.validate();
    TrainState state;
    state.network = network;
    state.params = build_network<float>(network, config.seed);
    const std::size_t rows = config.per_layer_thresholds ? weight_slots(network).size() : 1;
    const std::size_t k = quantized(config) ? static_cast<std::size_t>(config.k) : 0;
    state.thresholds = Tensor<double>({rows, k}, 0.0);
    if (config.mode == TrainMode::lightnn) state.thresholds.fill(-kInf);
    if (config.mode == TrainMode::flexible && !config.initial_thresholds.empty())
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < k; ++j) state.thresholds[r * k + j] = config.initial_thresholds[j];
    state.adam.config = config.adam;
    state.adam_thresholds.config = config.adam;
    return state;
}

std::vector<double> threshold_row(const TrainState& state, std::size_t slot) {
    const std::size_t rows = state.thresholds.dim(0), k = state.thresholds.dim(1);
    const std::size_t r = rows == 1 ? 0 : slot;
    return {state.thresholds.raw() + r * k, state.thresholds.raw() + (r + 1) * k};
}

QuantizedModel quantize_state(const TrainState& state, const TrainConfig& config) {
    if (!quantized(config)) return {};
    QuantizedModel model;
    const auto slots = weight_slots(state.network);
    for (std::size_t s = 0; s < slots.size(); ++s)
        model.layers.push_back(
            quantize_layer(state.params.weight(slots[s]), threshold_row(state, s), config.k, config.code_bits).layer);
    return model;
}

Parameters<float> effective_params(const TrainState& state, const TrainConfig& config) {
    Parameters<float> p = state.params;
    if (quantized(config)) apply_quantized_weights(state.network, quantize_state(state, config), p);
    return p;
}

StepReport train_step(TrainState& state, const TrainConfig& config, const Tensor<float>& images,
                      std::span<const std::uint8_t> labels, double lr) {
    const auto& net = state.network;
    const auto slots = weight_slots(net);
    const bool flexible = config.mode == TrainMode::flexible;
    StepReport report;
    report.count = labels.size();

    // Quantize weights with hard gates.
    Parameters<float> qparams = state.params;
    std::vector<ExponentRange> ranges(slots.size());
    if (quantized(config)) {
        for (std::size_t s = 0; s < slots.size(); ++s) {
            auto lq = quantize_layer(state.params.weight(slots[s]), threshold_row(state, s), config.k, config.code_bits);
            ranges[s] = lq.layer.range;
            qparams.weight(slots[s]) = dequantize_layer<float>(lq.layer);
        }
    }

    ForwardCache<float> cache;
    Tensor<float> logits;
    try {
        logits = forward(net, qparams, images, Mode::train, &cache, config.bn);
    } catch (const NumericError& e) {
        throw DivergenceError(e.what(), state_dump(state, report, e.what()));
    }
    const auto ce = cross_entropy(logits, labels);
    report.ce = ce.loss;
    const auto predicted = argmax_rows(logits);
    for (std::size_t i = 0; i < labels.size(); ++i) report.correct += predicted[i] == labels[i];
    auto grads = backward(net, qparams, cache, ce.grad, false, config.bn);

    // Threshold gradients use the cross-entropy gradient at the quantized weights.
    const std::size_t rows = state.thresholds.dim(0);
    const std::size_t k = state.thresholds.dim(1);
    Tensor<double> tgrad({rows, k}, 0.0);
    if (flexible) {
        const ThresholdGradOptions opts{config.tau, GateTrace::hard, config.gate_sum};
        for (std::size_t s = 0; s < slots.size(); ++s) {
            const auto& w = state.params.weight(slots[s]);
            const auto& g = grads.params.weight(slots[s]);
            const auto t = threshold_row(state, s);
            const std::size_t filters = w.dim(0), per = w.size() / filters;
            double* row = tgrad.raw() + (rows == 1 ? 0 : s) * k;
            for (std::size_t f = 0; f < filters; ++f) {
                const auto d = threshold_grad(std::span<const float>(w.raw() + f * per, per), t,
                                              std::span<const float>(g.raw() + f * per, per), config.k, ranges[s], opts);
                for (std::size_t j = 0; j < k; ++j) row[j] += d[j];
            }
        }
    }

    // Residual regularization on the full-precision weights.
    bool any_lambda = false;
    for (double l : config.lambda) any_lambda = any_lambda || l != 0.0;
    if (flexible && any_lambda) {
        for (std::size_t s = 0; s < slots.size(); ++s) {
            const auto& w = state.params.weight(slots[s]);
            auto& g = grads.params.weight(slots[s]);
            const std::size_t filters = w.dim(0), per = w.size() / filters;
            for (std::size_t f = 0; f < filters; ++f) {
                const std::span<const float> wf(w.raw() + f * per, per);
                report.reg += reg_loss(wf, config.lambda, config.k, ranges[s]);
                const auto rg = reg_grad(wf, config.lambda, config.k, ranges[s]);
                for (std::size_t e = 0; e < per; ++e) g[f * per + e] += static_cast<float>(rg[e]);
            }
        }
    }
    report.total = report.ce + report.reg;

    auto prefs = trainable(state.params);
    auto grefs = trainable(grads.params);
    double sq = 0.0;
    for (const auto& r : grefs)
        for (float v : r.tensor->data()) sq += static_cast<double>(v) * v;
    for (double v : tgrad.data()) sq += v * v;
    report.grad_norm = std::sqrt(sq);
    if (!std::isfinite(report.total) || !std::isfinite(report.grad_norm))
        throw DivergenceError("non-finite loss or gradient at step " + std::to_string(state.step),
                              state_dump(state, report, "non-finite loss or gradient"));

    if (config.clip_norm > 0 && report.grad_norm > config.clip_norm) {
        const double scale = config.clip_norm / report.grad_norm;
        for (auto& r : grefs)
            for (float& v : r.tensor->data()) v = static_cast<float>(v * scale);
        for (double& v : tgrad.data()) v *= scale;
    }

    std::vector<Tensor<float>*> ptrs;
    std::vector<const Tensor<float>*> gptrs;
    for (std::size_t i = 0; i < prefs.size(); ++i) {
        ptrs.push_back(prefs[i].tensor);
        gptrs.push_back(grefs[i].tensor);
    }
    adam_step<float>(ptrs, gptrs, state.adam, lr);
    if (flexible) {
        Tensor<double>* tp[] = {&state.thresholds};
        const Tensor<double>* tg[] = {&tgrad};
        adam_step<double>(tp, tg, state.adam_thresholds, lr);
        for (double v : state.thresholds.data())
            if (std::isnan(v))
                throw DivergenceError("threshold became NaN", state_dump(state, report, "threshold became NaN"));
    }
    update_running_stats(state.params, cache, config.bn);
    report.threshold_grads.assign(tgrad.data().begin(), tgrad.data().end());
    ++state.step;
    return report;
}

double learning_rate(const TrainConfig& config, std::int64_t epoch) {
    double lr = config.lr;
    if (!config.lr_decay) return lr;
    const auto epochs = static_cast<std::int64_t>(config.epochs);
    if (2 * epoch >= epochs) lr *= 0.1;
    if (4 * epoch >= 3 * epochs) lr *= 0.1;
    return lr;
}

std::vector<std::size_t> epoch_permutation(std::uint64_t seed, std::int64_t epoch, std::size_t n) {
    std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(epoch) + 1);
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    // Fisher-Yates with a plain modulus so the order does not depend on the standard library.
    for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng() % i]);
    return p;
}

std::pair<double, std::vector<std::size_t>> k_statistics(const QuantizedModel& model, int k) {
    std::vector<std::size_t> hist(static_cast<std::size_t>(std::max(k, 0)) + 1, 0);
    std::size_t filters = 0, total = 0;
    for (const auto& layer : model.layers)
        for (const auto& f : layer.filters) {
            if (f.k() >= hist.size()) hist.resize(f.k() + 1, 0);
            ++hist[f.k()];
            ++filters;
            total += f.k();
        }
    return {filters ? static_cast<double>(total) / static_cast<double>(filters) : 0.0, hist};
}

double evaluate(const TrainState& state, const TrainConfig& config, const Dataset& data) {
    if (data.size() == 0) return 0.0;
    const auto params = effective_params(state, config);
    std::size_t correct = 0;
    constexpr std::size_t chunk = 256;
    for (std::size_t b = 0; b < data.size(); b += chunk) {
        const auto part = data.slice(b, std::min(data.size(), b + chunk));
        const auto pred = argmax_rows(forward<float>(state.network, params, part.images, Mode::infer, nullptr, config.bn));
        for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == part.labels[i];
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

EpochMetrics train_epoch(TrainState& state, const TrainConfig& config, const Dataset& train, const Dataset* test) {
    const auto start = std::chrono::steady_clock::now();
    if (train.size() == 0) throw InputError("training set is empty");
    EpochMetrics m;
    m.epoch = state.epoch;
    const double lr = learning_rate(config, state.epoch);
    const auto order = epoch_permutation(config.seed, state.epoch, train.size());
    std::size_t correct = 0;
    double ce = 0.0, reg = 0.0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
        const std::span<const std::size_t> idx(order.data() + b, std::min(config.batch_size, order.size() - b));
        const auto batch = train.subset(idx);
        const auto r = train_step(state, config, batch.images, batch.labels, lr);
        ce += r.ce * static_cast<double>(r.count);
        reg += r.reg * static_cast<double>(r.count);
        correct += r.correct;
    }
    const auto n = static_cast<double>(train.size());
    m.ce = ce / n;
    m.reg = reg / n;
    m.total = m.ce + m.reg;
    m.train_acc = static_cast<double>(correct) / n;
    ++state.epoch;
    std::tie(m.mean_k, m.k_histogram) = k_statistics(quantize_state(state, config), quantized(config) ? config.k : 0);
    if (test) m.test_acc = evaluate(state, config, *test);
    if (config.record_wall_time)
        m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return m;
}

std::vector<EpochMetrics> train(TrainState& state, const TrainConfig& config, const Dataset& train, const Dataset* test,
                                const std::function<void(const EpochMetrics&)>& on_epoch) {
    std::vector<EpochMetrics> out;
    while (state.epoch < static_cast<std::int64_t>(config.epochs)) {
        out.push_back(train_epoch(state, config, train, test));
        if (on_epoch) on_epoch(out.back());
    }
    return out;
}

void write_metrics_header(std::ostream& out, int k) {
    out << "epoch,ce_loss,reg_loss,total_loss,train_acc,test_acc,mean_k";
    for (int j = 0; j <= k; ++j) out << ",k" << j;
    out << ",wall_time\n";
}

void write_metrics_row(std::ostream& out, const EpochMetrics& m) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%lld,%.9g,%.9g,%.9g,%.6f,%.6f,%.6f", static_cast<long long>(m.epoch), m.ce, m.reg,
                  m.total, m.train_acc, m.test_acc, m.mean_k);
    out << buf;
    for (auto c : m.k_histogram) out << ',' << c;
    std::snprintf(buf, sizeof buf, ",%.3f\n", m.wall_seconds);
    out << buf;
}

std::vector<SweepCell> sweep_lambda(const NetworkConfig& network, const TrainConfig& base,
                                    const std::vector<std::vector<double>>& lambdas,
                                    const std::vector<std::uint64_t>& seeds, const DatasetSplit& data) {
    if (lambdas.empty() || seeds.empty()) throw ConfigError("sweep needs at least one lambda and one seed");
    std::vector<SweepCell> cells;
    for (const auto& lambda : lambdas)
        for (auto seed : seeds) {
            SweepCell cell;
            cell.lambda = lambda;
            cell.seed = seed;
            try {
                TrainConfig cfg = base;
                cfg.lambda = lambda;
                cfg.seed = seed;
                auto state = init_train_state(network, cfg);
                cell.metrics = train(state, cfg, data.train, nullptr);
                cell.accuracy = evaluate(state, cfg, data.test);
                cell.model = quantize_state(state, cfg);
                cell.mean_k = k_statistics(cell.model, cfg.k).first;
                cell.cost = quantized(cfg) ? cost_report(network, cell.model) : baseline_cost(network, 32);
            } catch (const Error& e) {
                cell.error = e.what();
            }
            cells.push_back(std::move(cell));
        }
    return cells;
}

ParetoPoint pareto_point(const std::string& model_id, const SweepCell& cell) {
    ParetoPoint p;
    p.model_id = model_id;
    p.lambda0 = cell.lambda.size() > 0 ? cell.lambda[0] : 0.0;
    p.lambda1 = cell.lambda.size() > 1 ? cell.lambda[1] : 0.0;
    p.seed = cell.seed;
    p.accuracy = cell.accuracy;
    p.storage_bits = cell.cost.storage_bits;
    p.shifts = cell.cost.shift_count;
    p.adds = cell.cost.add_count;
    p.multiplies = cell.cost.multiply_count;
    p.mean_k = cell.mean_k;
    return p;
}

}  // namespace flexshift
