#include <CLI11.hpp>

#include <iostream>

#include "fedlsi/report/config.hpp"
#include "fedlsi/report/runner.hpp"

namespace {

fedlsi::report::ExperimentConfig load_config(const std::string& config_path,
                                             std::uint64_t seed_override, bool has_seed,
                                             const std::string& unseen,
                                             const std::string& out_dir,
                                             const std::string& transport) {
    auto cfg = config_path.empty() ? fedlsi::report::parse_config_text("")
                                   : fedlsi::report::parse_config(config_path);
    if (has_seed) {
        cfg.seeds = {seed_override};
    }
    if (!unseen.empty()) {
        if (unseen == "all") {
            cfg.unseen_all = true;
        } else {
            cfg.unseen_all = false;
            cfg.unseen_id = static_cast<int>(fedlsi::parse_int(unseen));
        }
    }
    if (!out_dir.empty()) {
        cfg.out_dir = out_dir;
    }
    if (!transport.empty()) {
        if (transport == "memory") {
            cfg.pipeline.transport = fedlsi::transport::TransportKind::memory;
        } else if (transport == "socket") {
            cfg.pipeline.transport = fedlsi::transport::TransportKind::socket;
        } else {
            throw CLI::ValidationError("--transport must be memory or socket");
        }
    }
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"federated domain generalization simulator"};
    app.require_subcommand(1);

    std::string config_path;
    std::uint64_t seed = 0;
    bool has_seed = false;
    std::string unseen;
    std::string out_dir;
    std::string transport;
    app.add_option("--config", config_path, "experiment config (JSON)");
    app.add_option("--seed", seed, "override the config's seed list with one seed")
        ->each([&](const std::string&) { has_seed = true; });
    app.add_option("--unseen", unseen, "unseen domain id or 'all'");
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--transport", transport, "memory | socket");

    auto* gen = app.add_subcommand("gen-data", "write the synthetic dataset as CSV");
    std::string gen_out = "data.csv";
    gen->add_option("--csv-out", gen_out, "destination CSV path");

    auto* run = app.add_subcommand("run", "run the pipeline or the FedAvg baseline");
    std::string method = "lsi";
    run->add_option("--method", method, "lsi | fedavg")
        ->check(CLI::IsMember({"lsi", "fedavg"}));

    auto* ablation = app.add_subcommand("ablation", "2x2 (di, importance) toggle grid");

    auto* sweep = app.add_subcommand("sweep", "lambda_di sensitivity sweep");
    std::vector<double> sweep_values{10.0, 1.0, 0.1, 0.01, 0.001, 0.0001};
    sweep->add_option("--values", sweep_values, "lambda_di grid");

    auto* project = app.add_subcommand("project", "export 2-PC latent projections");
    bool variants = false;
    std::string dump_banks;
    project->add_flag("--variants", variants,
                      "also export re-synthesis panels without each loss term");
    project->add_option("--dump-banks", dump_banks,
                        "write raw synthesized banks as CSV (off by default)");

    auto* report = app.add_subcommand("report", "regenerate report.txt from metrics.csv");
    std::string report_dir;
    report->add_option("--dir", report_dir, "directory holding metrics.csv")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (report->parsed()) {
            return fedlsi::report::cmd_report(report_dir);
        }
        auto cfg = load_config(config_path, seed, has_seed, unseen, out_dir, transport);
        if (gen->parsed()) {
            return fedlsi::report::cmd_gen_data(cfg, gen_out);
        }
        if (run->parsed()) {
            return fedlsi::report::cmd_run(cfg, method);
        }
        if (ablation->parsed()) {
            return fedlsi::report::cmd_ablation(cfg);
        }
        if (sweep->parsed()) {
            return fedlsi::report::cmd_sweep(cfg, sweep_values);
        }
        if (project->parsed()) {
            fedlsi::report::ProjectOptions opts;
            opts.variants = variants;
            opts.dump_banks_path = dump_banks;
            return fedlsi::report::cmd_project(cfg, opts);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
