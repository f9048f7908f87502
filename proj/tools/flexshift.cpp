// flexshift: train, quantize, evaluate and cost flexible-k power-of-two networks.
//
// Settings are resolved in this order, later wins: built-in defaults, --config file, --set
// key=value pairs (in the order given), then the named flags.

#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "flexshift/cli.hpp"

using namespace flexshift;

namespace {

struct CommonOptions {
    std::string config_path;
    std::vector<std::string> sets;
    std::vector<std::pair<std::string, std::string>> flags;  // dotted key, JSON value
};

void add_common(CLI::App* cmd, CommonOptions& o) {
    cmd->add_option("--config", o.config_path, "JSON run config")->check(CLI::ExistingFile);
    cmd->add_option("--set", o.sets, "override a config key, e.g. --set train.tau=0.5");
    auto flag = [&](const std::string& name, const std::string& key, const std::string& help, bool quote) {
        cmd->add_option_function<std::string>(
            name,
            [&o, key, quote](const std::string& v) { o.flags.emplace_back(key, quote ? "\"" + v + "\"" : v); },
            help);
    };
    flag("--network", "network", "preset network id", true);
    flag("--data", "dataset.path", "dataset directory", true);
    flag("--data-kind", "dataset.kind", "mnist-idx, cifar10-binary or synthetic", true);
    flag("--train-limit", "dataset.train_limit", "use only the first N training images", false);
    flag("--test-limit", "dataset.test_limit", "use only the first N test images", false);
    flag("--mode", "train.mode", "full_precision, lightnn or flexible", true);
    flag("--epochs", "train.epochs", "training epochs", false);
    flag("--lr", "train.lr", "learning rate", false);
    flag("--batch-size", "train.batch_size", "minibatch size", false);
    flag("--tau", "train.tau", "gate temperature", false);
    flag("--seed", "train.seed", "random seed", false);
    flag("--clip-norm", "train.clip_norm", "global gradient norm clip, <= 0 disables", false);
    flag("--lambda", "train.lambda", "regularization coefficients as a JSON list, e.g. [0,3e-5]", false);
    flag("--out-dir", "out_dir", "artifact directory", true);
    flag("--threads", "threads", "inference threads", false);
}

RunConfig resolve(const CommonOptions& o) {
    RunConfig config;
    if (!o.config_path.empty()) {
        std::ifstream in(o.config_path);
        std::stringstream text;
        text << in.rdbuf();
        config = parse_run_config(text.str());
    }
    for (const auto& s : o.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
        apply_override(config, s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto& [key, value] : o.flags) apply_override(config, key, value);
    return config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Flexible-k power-of-two quantized CNNs: training, shift-add inference, cost reports"};
    app.require_subcommand(1);

    CommonOptions train_opts, quant_opts, eval_opts, cost_opts, sweep_opts, config_opts;
    auto* train = app.add_subcommand("train", "train a network; writes metrics.csv and model.fxsm");
    add_common(train, train_opts);
    train->add_option_function<int>("--k", [&](int k) { train_opts.flags.emplace_back("train.k", std::to_string(k)); },
                                    "maximum terms per weight");

    std::string model_in, model_out, thresholds;
    int quant_k = 0;
    auto* quantize = app.add_subcommand("quantize", "quantize a trained model and calibrate the integer engine");
    add_common(quantize, quant_opts);
    quantize->add_option("--model", model_in, "trained model file")->required()->check(CLI::ExistingFile);
    quantize->add_option("--output", model_out, "quantized model file")->required();
    quantize->add_option("--thresholds", thresholds, "threshold vector as a JSON list, e.g. [0,0.1]");
    quantize->add_option("--k", quant_k, "terms per weight (default: as trained)");

    std::string eval_model, cost_model;
    auto* eval = app.add_subcommand("eval", "test accuracy of a model file");
    add_common(eval, eval_opts);
    eval->add_option("--model", eval_model, "model file")->required()->check(CLI::ExistingFile);

    auto* cost = app.add_subcommand("cost", "storage and operation counts of a model file");
    add_common(cost, cost_opts);
    cost->add_option("--model", cost_model, "model file")->required()->check(CLI::ExistingFile);

    auto* sweep = app.add_subcommand("sweep", "train over a lambda grid and seeds; writes pareto.csv");
    add_common(sweep, sweep_opts);

    auto* show = app.add_subcommand("config", "print the resolved run config");
    add_common(show, config_opts);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        std::string summary;
        if (*train) {
            summary = cmd_train(resolve(train_opts));
        } else if (*quantize) {
            std::optional<std::vector<double>> t;
            if (!thresholds.empty()) {
                RunConfig scratch;
                apply_override(scratch, "train.initial_thresholds", thresholds);
                t = scratch.train.initial_thresholds;
            }
            summary = cmd_quantize(resolve(quant_opts), model_in, model_out, t,
                                   quant_k > 0 ? std::optional<int>(quant_k) : std::nullopt);
        } else if (*eval) {
            summary = cmd_eval(resolve(eval_opts), eval_model);
        } else if (*cost) {
            summary = cmd_cost(resolve(cost_opts), cost_model);
        } else if (*sweep) {
            summary = cmd_sweep(resolve(sweep_opts));
        } else if (*show) {
            std::cout << canonical_json(resolve(config_opts));
            return 0;
        }
        std::cout << summary << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "flexshift: " << e.what() << "\n";
        return exit_code(e);
    }
}
