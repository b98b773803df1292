// Command-line front end: train-source, run, sweep, continual, gradcheck,
// gen. Experiments are defined by a JSON config file; flags select the
// subcommand and a few overrides. TTAKIT_OUT_ROOT, when set, re-roots
// relative output directories.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "ttakit/ttakit.hpp"

namespace {

struct CommonOpts {
    std::string config_path;
    std::string checkpoint;
    std::string out_override;
    std::int64_t seed_override = -1;
    std::string method_override;
    double lr_override = -1.0;
};

void add_common(CLI::App* sub, CommonOpts& o, bool needs_config = true) {
    auto* c = sub->add_option("-c,--config", o.config_path, "experiment config (JSON)");
    if (needs_config) c->required();
    sub->add_option("--checkpoint", o.checkpoint, "source checkpoint path override");
    sub->add_option("-o,--out", o.out_override, "output directory override");
    sub->add_option("--seed", o.seed_override, "adaptation seed override");
    sub->add_option("--method", o.method_override, "adaptation method override (tent|pl|oil)");
    sub->add_option("--lr", o.lr_override, "adaptation learning rate override");
}

ttakit::ExperimentConfig load_with_overrides(const CommonOpts& o) {
    ttakit::ExperimentConfig cfg = ttakit::load_experiment_config(o.config_path);
    if (!o.out_override.empty()) cfg.out_dir = o.out_override;
    if (o.seed_override >= 0) cfg.adapt.seed = static_cast<std::uint64_t>(o.seed_override);
    if (!o.method_override.empty()) cfg.adapt.method = ttakit::method_from_name(o.method_override);
    if (o.lr_override >= 0.0) cfg.adapt.lr = o.lr_override;
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"online test-time adaptation for a synthetic span-prediction task"};
    app.require_subcommand(1);

    CommonOpts train_o, run_o, sweep_o, continual_o, gen_o;
    auto* train = app.add_subcommand("train-source", "train the source model and write a checkpoint");
    add_common(train, train_o);
    auto* run = app.add_subcommand("run", "adapt over the configured stream and write records");
    add_common(run, run_o);
    auto* sweep = app.add_subcommand("sweep", "grid of (method, lr, K, alpha) x seeds; gain matrices");
    add_common(sweep, sweep_o);
    auto* continual = app.add_subcommand("continual", "single uninterrupted run across >= 2 segments");
    add_common(continual, continual_o);
    auto* gen = app.add_subcommand("gen", "write source and shifted datasets");
    add_common(gen, gen_o);

    ttakit::GradCheckSettings gs;
    std::string gradcheck_out;
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference checks of all loss gradients");
    gradcheck->add_option("--draws", gs.draws, "random draws per loss");
    gradcheck->add_option("--tol", gs.tol, "max relative error tolerance");
    gradcheck->add_option("--seed", gs.seed, "rng seed");
    gradcheck->add_option("-o,--out", gradcheck_out, "directory for the gradcheck report");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) {
            ttakit::cmd_train_source(load_with_overrides(train_o));
        } else if (run->parsed()) {
            ttakit::cmd_run(load_with_overrides(run_o), run_o.checkpoint);
        } else if (sweep->parsed()) {
            ttakit::cmd_sweep(load_with_overrides(sweep_o), sweep_o.checkpoint);
        } else if (continual->parsed()) {
            ttakit::cmd_continual(load_with_overrides(continual_o), continual_o.checkpoint);
        } else if (gen->parsed()) {
            ttakit::cmd_gen(load_with_overrides(gen_o));
        } else if (gradcheck->parsed()) {
            const int failures = ttakit::cmd_gradcheck(gs, gradcheck_out);
            return failures == 0 ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
