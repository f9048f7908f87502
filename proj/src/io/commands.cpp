#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "flexshift/cli.hpp"
#include "flexshift/cost.hpp"
#include "flexshift/engine.hpp"
#include "flexshift/model_file.hpp"

namespace flexshift {

namespace fs = std::filesystem;

namespace {

std::string in_dir(const RunConfig& c, const std::string& name) { return (fs::path(c.out_dir) / name).string(); }

std::string config_hash(const RunConfig& c) {
    const std::string text = canonical_json(c);
    return git_blob_sha1({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

// Writes the canonical config next to the artifacts and returns a manifest seeded with it.
Manifest begin(const RunConfig& c, const std::string& command) {
    c.validate();
    fs::create_directories(c.out_dir);
    const std::string path = in_dir(c, "config.json");
    std::ofstream(path, std::ios::binary | std::ios::trunc) << canonical_json(c);
    Manifest m;
    m.command = command;
    m.config_hash = config_hash(c);
    m.seed = c.train.seed;
    for (const auto& f : dataset_files(c.dataset)) m.inputs.emplace_back(f, git_blob_sha1_of_file(f));
    m.outputs.emplace_back(path, git_blob_sha1_of_file(path));
    return m;
}

void finish(const RunConfig& c, Manifest& m, const std::vector<std::string>& outputs) {
    for (const auto& f : outputs) m.outputs.emplace_back(f, git_blob_sha1_of_file(f));
    write_manifest(in_dir(c, m.command + ".manifest.json"), m);
}

std::string fixed(double v, int digits = 6) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

// Training settings recorded in a model file, with the run config supplying the rest.
TrainConfig train_config_of(const RunConfig& c, const ModelFile& m) {
    TrainConfig t = c.train;
    t.mode = train_mode_from_string(m.provenance.mode);
    t.k = m.provenance.k;
    t.code_bits = m.provenance.code_bits;
    t.lambda = m.provenance.lambda;
    t.tau = m.provenance.tau;
    t.seed = m.provenance.seed;
    return t;
}

TrainState state_of(const ModelFile& m) {
    TrainState s;
    s.network = m.network;
    s.params = m.params;
    s.thresholds = m.thresholds;
    return s;
}

}  // namespace

std::string cmd_train(const RunConfig& c) {
    Manifest manifest = begin(c, "train");
    const auto split = load_dataset(c.dataset);
    TrainState state = init_train_state(c.network, c.train);

    const std::string metrics_path = in_dir(c, "metrics.csv");
    std::ofstream metrics(metrics_path, std::ios::binary | std::ios::trunc);
    write_metrics_header(metrics, c.train.k);
    std::vector<EpochMetrics> history;
    try {
        history = train(state, c.train, split.train, &split.test, [&](const EpochMetrics& m) {
            write_metrics_row(metrics, m);
            metrics.flush();
        });
    } catch (const DivergenceError& e) {
        std::ofstream(in_dir(c, "divergence.json"), std::ios::binary | std::ios::trunc) << e.dump() << "\n";
        throw;
    }
    metrics.close();

    ModelFile model;
    model.network = c.network;
    model.provenance = {to_string(c.train.mode), c.train.k, c.train.code_bits, c.train.lambda, c.train.tau,
                        c.train.seed, c.train.epochs,
                        history.empty() ? evaluate(state, c.train, split.test) : history.back().test_acc,
                        manifest.config_hash};
    model.params = state.params;
    model.thresholds = state.thresholds;
    const std::string model_path = in_dir(c, "model.fxsm");
    save_model(model_path, model);
    finish(c, manifest, {metrics_path, model_path});

    std::ostringstream os;
    os << "trained " << c.network.id << " for " << c.train.epochs << " epochs: test accuracy "
       << fixed(model.provenance.accuracy, 4);
    if (!history.empty()) os << ", mean k " << fixed(history.back().mean_k, 3);
    return os.str();
}

std::string cmd_quantize(const RunConfig& c, const std::string& model_in, const std::string& model_out,
                         const std::optional<std::vector<double>>& thresholds, std::optional<int> k) {
    Manifest manifest = begin(c, "quantize");
    manifest.inputs.emplace_back(model_in, git_blob_sha1_of_file(model_in));
    const ModelFile trained = load_model(model_in);
    if (trained.quantized) throw UsageError(model_in + " is already quantized");

    TrainConfig tc = train_config_of(c, trained);
    TrainState state = state_of(trained);
    if (tc.mode == TrainMode::full_precision) tc.mode = TrainMode::lightnn;  // plain post-training rounding
    if (k) tc.k = *k;
    if (tc.k < 1 || tc.k > 3) throw UsageError("k must lie in [1, 3]");
    const auto kk = static_cast<std::size_t>(tc.k);
    if (thresholds) {
        if (thresholds->size() != kk) throw UsageError("expected " + std::to_string(kk) + " thresholds");
        state.thresholds = Tensor<double>({1, kk}, *thresholds);
    } else if (state.thresholds.rank() != 2 || state.thresholds.dim(1) != kk) {
        if (tc.mode != TrainMode::lightnn)
            throw UsageError("stored thresholds do not cover k = " + std::to_string(kk) + "; pass thresholds");
        state.thresholds = Tensor<double>({1, kk}, -std::numeric_limits<double>::infinity());
    }

    const QuantizedModel model = quantize_state(state, tc);
    const auto split = load_dataset(c.dataset);
    const std::size_t n = std::min(c.calibration_images, split.train.size());
    const Calibration cal = calibrate(trained.network, model, trained.params, split.train.slice(0, n).images, tc.bn);
    const EnginePlan plan = make_plan(trained.network, model, cal);
    const auto result = run_inference(plan, split.test.images, c.threads);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < result.labels.size(); ++i) correct += result.labels[i] == split.test.labels[i];

    ModelFile out;
    out.network = trained.network;
    out.provenance = trained.provenance;
    out.provenance.k = tc.k;
    out.provenance.accuracy = split.test.size() ? static_cast<double>(correct) / static_cast<double>(split.test.size()) : 0.0;
    out.quantized = true;
    out.packed_weights = pack_weights(model);
    out.calibration = pack_calibration(cal);
    save_model(model_out, out);
    finish(c, manifest, {model_out});

    const auto report = cost_report(trained.network, model);
    return "quantized " + trained.network.id + ": engine test accuracy " + fixed(out.provenance.accuracy, 4) +
           ", storage " + fixed(report.storage_mb(), 4) + " MB, mean k " + fixed(report.mean_k, 3);
}

std::string cmd_eval(const RunConfig& c, const std::string& model_path) {
    Manifest manifest = begin(c, "eval");
    manifest.inputs.emplace_back(model_path, git_blob_sha1_of_file(model_path));
    const ModelFile m = load_model(model_path);
    if (m.network.input_shape != c.network.input_shape || m.network.classes != c.network.classes)
        throw ConfigError("model network does not match the dataset in the run config");
    const auto split = load_dataset(c.dataset);
    double accuracy = 0.0;
    std::string engine;
    if (m.quantized) {
        const auto plan = make_plan(m.network, m.packed_weights, m.calibration);
        const auto result = run_inference(plan, split.test.images, c.threads);
        std::size_t correct = 0;
        for (std::size_t i = 0; i < result.labels.size(); ++i) correct += result.labels[i] == split.test.labels[i];
        accuracy = split.test.size() ? static_cast<double>(correct) / static_cast<double>(split.test.size()) : 0.0;
        engine = "integer";
    } else {
        accuracy = evaluate(state_of(m), train_config_of(c, m), split.test);
        engine = "float";
    }
    const std::string path = in_dir(c, "eval.csv");
    std::ofstream(path, std::ios::binary | std::ios::trunc)
        << "model,engine,images,accuracy\n"
        << model_path << ',' << engine << ',' << split.test.size() << ',' << fixed(accuracy) << '\n';
    finish(c, manifest, {path});
    return "accuracy " + fixed(accuracy) + " (" + engine + " engine, " + std::to_string(split.test.size()) + " images)";
}

std::string cmd_cost(const RunConfig& c, const std::string& model_path) {
    Manifest manifest = begin(c, "cost");
    manifest.inputs.emplace_back(model_path, git_blob_sha1_of_file(model_path));
    const ModelFile m = load_model(model_path);
    const CostReport r = m.quantized ? cost_report(m.network, unpack_weights(m.packed_weights)) : baseline_cost(m.network, 32);
    const std::string path = in_dir(c, "cost.csv");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << "layer,weights,macs,storage_bits,shifts,adds,multiplies,mean_k\n";
    for (const auto& l : r.layers)
        out << l.name << ',' << l.weights << ',' << l.macs << ',' << l.storage_bits << ',' << l.shifts << ','
            << l.adds << ',' << l.multiplies << ',' << fixed(l.mean_k) << '\n';
    out << "total,,," << r.storage_bits << ',' << r.shift_count << ',' << r.add_count << ',' << r.multiply_count
        << ',' << fixed(r.mean_k) << '\n';
    out.close();
    finish(c, manifest, {path});
    return "storage " + fixed(r.storage_mb(), 4) + " MB, shifts " + std::to_string(r.shift_count) + ", adds " +
           std::to_string(r.add_count) + ", multiplies " + std::to_string(r.multiply_count) + ", dsp " +
           std::to_string(r.dsp_proxy) + ", lut " + std::to_string(r.lut_proxy);
}

std::string cmd_sweep(const RunConfig& c) {
    Manifest manifest = begin(c, "sweep");
    const auto split = load_dataset(c.dataset);
    std::vector<ParetoPoint> points;
    std::size_t failed = 0;
    auto collect = [&](const std::string& id, const std::vector<SweepCell>& cells) {
        for (const auto& cell : cells) {
            if (!cell.error.empty()) {
                ++failed;
                continue;
            }
            points.push_back(pareto_point(id, cell));
        }
    };
    collect("FL", sweep_lambda(c.network, c.train, c.sweep_lambdas, c.sweep_seeds, split));
    if (c.sweep_endpoints) {
        TrainConfig l = c.train;
        l.mode = TrainMode::lightnn;
        for (int k : {1, 2}) {
            l.k = k;
            collect("L-" + std::to_string(k), sweep_lambda(c.network, l, {std::vector<double>(k, 0.0)}, c.sweep_seeds, split));
        }
    }
    const std::string all_path = in_dir(c, "pareto.csv"), front_path = in_dir(c, "pareto_front.csv");
    {
        std::ofstream all(all_path, std::ios::binary | std::ios::trunc);
        write_pareto_csv(all, points);
        std::ofstream front(front_path, std::ios::binary | std::ios::trunc);
        if (!points.empty()) write_pareto_csv(front, pareto_front(points));
    }
    finish(c, manifest, {all_path, front_path});
    std::string summary = std::to_string(points.size()) + " sweep points written";
    if (failed) summary += ", " + std::to_string(failed) + " cells failed";
    return summary;
}

}  // namespace flexshift
