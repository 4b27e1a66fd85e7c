#include <iomanip>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "experiment.hpp"
#include "fimc/errors.hpp"
#include "fimc/metrics.hpp"

namespace {

using namespace fimc;

// Flags that map one-to-one onto config keys.
const char* const kOverrides[] = {"data-dir", "out",        "seed",       "missing-rate",
                                  "dirichlet-alpha", "rounds", "epochs",     "k-neighbors",
                                  "gamma1",   "gamma2",     "ablation",   "repeats"};

int cmd_run(const std::string& config_path, const std::map<std::string, std::string>& flags) {
    cli::ExperimentConfig config = config_path.empty() ? cli::ExperimentConfig{}
                                                       : cli::load_config(config_path);
    for (const auto& [key, value] : flags) {
        cli::apply_setting(config, key, value);
    }
    cli::run_experiment(config, std::cout);
    return 0;
}

int cmd_synth(const SynthSpec& spec, const std::string& out, double rate,
              std::optional<double> alpha) {
    MultiViewData data = synth_blobs(spec);
    if (rate > 0.0) {
        data = apply_missing(std::move(data), {rate, spec.seed, alpha});
    }
    save_views(out, data);
    std::cout << "wrote " << data.views.size() << " views, " << data.samples() << " samples to "
              << out << '\n';
    return 0;
}

int cmd_eval(const std::string& labels_file, const std::string& pred_file) {
    const Labels truth = read_labels(labels_file);
    const Labels pred = read_labels(pred_file);
    if (truth.size() != pred.size()) {
        throw ParameterError("eval: " + std::to_string(truth.size()) + " labels but " +
                             std::to_string(pred.size()) + " predictions");
    }
    const ClusteringScores s = evaluate(pred, truth);
    std::cout << std::fixed << std::setprecision(6) << "acc=" << s.acc << " nmi=" << s.nmi
              << " ari=" << s.ari << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated incomplete multi-view clustering"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "Run sessions and report clustering metrics");
    std::string config_path;
    std::map<std::string, std::string> flags;
    run->add_option("--config", config_path, "Flat key = value config file")->check(CLI::ExistingFile);
    std::map<std::string, std::string> raw;
    for (const char* name : kOverrides) {
        run->add_option(std::string("--") + name, raw[name]);
    }

    auto* synth = app.add_subcommand("synth", "Write a synthetic multi-view dataset");
    SynthSpec spec;
    std::string synth_out;
    double synth_rate = 0.0;
    std::optional<double> synth_alpha;
    synth->add_option("--out", synth_out)->required();
    synth->add_option("--seed", spec.seed);
    synth->add_option("--samples", spec.samples);
    synth->add_option("--clusters", spec.clusters);
    synth->add_option("--dims", spec.dims)->delimiter(',');
    synth->add_option("--separation", spec.separation);
    synth->add_option("--missing-rate", synth_rate)->check(CLI::Range(0.0, 0.999999));
    synth->add_option("--dirichlet-alpha", synth_alpha);

    auto* eval = app.add_subcommand("eval", "Score predictions against labels");
    std::string labels_file, pred_file;
    eval->add_option("labels", labels_file)->required()->check(CLI::ExistingFile);
    eval->add_option("predictions", pred_file)->required()->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            for (const char* name : kOverrides) {
                if (run->count(std::string("--") + name) > 0) {
                    flags[name] = raw[name];
                }
            }
            return cmd_run(config_path, flags);
        }
        if (synth->parsed()) {
            return cmd_synth(spec, synth_out, synth_rate, synth_alpha);
        }
        return cmd_eval(labels_file, pred_file);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
