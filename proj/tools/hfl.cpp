// hfl — preprocess / train / compare / curves for hierarchical federated
// anomaly detection. Exit codes: 0 success, 1 usage or config error, 2 data
// error, 3 training divergence.

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "hfl/hfl.hpp"

namespace expt = hfl::experiment;

namespace {

struct CliOverrides {
    std::string config_path;
    std::vector<std::pair<std::string, std::string>> kv;  // applied in flag order

    void add(CLI::App* cmd, const std::string& flag, const std::string& key,
             const std::string& help) {
        const auto opt = cmd->add_option_function<std::string>(
            flag, [this, key](const std::string& v) { kv.emplace_back(key, v); }, help);
        opt->type_name("VALUE");
    }
};

expt::ExperimentConfig build_config(const CliOverrides& ov) {
    expt::ExperimentConfig cfg;
    if (!ov.config_path.empty()) cfg = expt::load_config_file(ov.config_path, std::move(cfg));
    for (const auto& [key, value] : ov.kv) expt::apply_config_kv(cfg, key, value);
    return cfg;
}

void attach_config_flags(CLI::App* cmd, CliOverrides& ov) {
    cmd->add_option("--config", ov.config_path, "config file (key = value lines)")
        ->type_name("PATH");
    ov.add(cmd, "--mode", "mode", "central | individual | hfl");
    ov.add(cmd, "--source", "source", "csv | synth");
    ov.add(cmd, "--clients", "n_clients", "number of clients");
    ov.add(cmd, "--edges", "n_edges", "number of edge servers");
    ov.add(cmd, "--itrs", "itrs", "federation rounds");
    ov.add(cmd, "--seed-data", "seed_data", "data pipeline seed");
    ov.add(cmd, "--seed-model", "seed_model", "model init seed");
    ov.add(cmd, "--seed-shuffle", "seed_shuffle", "minibatch shuffle seed");
    ov.add(cmd, "--out", "out_dir", "output directory");
    ov.add(cmd, "--data", "data_dir", "preprocessed data directory (default: --out)");
    ov.add(cmd, "--label", "label", "run label used in manifests and tables");
    ov.add(cmd, "--threads", "threads", "client-training thread cap (0 = cores)");
}

int run(int argc, char** argv) {
    CLI::App app{"hierarchical federated learning for network anomaly detection"};
    app.require_subcommand(1);

    CliOverrides prep_ov, train_ov;
    auto* prep = app.add_subcommand("preprocess",
                                    "ingest, encode, split and shard a dataset");
    attach_config_flags(prep, prep_ov);

    auto* train = app.add_subcommand("train", "run a training experiment");
    attach_config_flags(train, train_ov);

    std::vector<std::string> manifests;
    std::string compare_out;
    auto* compare = app.add_subcommand("compare", "tabulate run manifests");
    compare->add_option("manifests", manifests, "manifest.json files")->required();
    compare->add_option("--out", compare_out, "write the CSV here instead of stdout")
        ->type_name("PATH");

    std::vector<std::string> histories;
    std::string curves_out;
    auto* curves = app.add_subcommand("curves", "melt history CSVs into long format");
    curves->add_option("csvs", histories, "history.csv / clients.csv files")->required();
    curves->add_option("--out", curves_out, "write the CSV here instead of stdout")
        ->type_name("PATH");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;  // usage error
    }

    if (prep->parsed()) {
        const auto cfg = build_config(prep_ov);
        const auto res = expt::cmd_preprocess(cfg);
        std::cout << res.manifest.dump(2) << "\n";
        return 0;
    }
    if (train->parsed()) {
        const auto cfg = build_config(train_ov);
        const auto runs = expt::cmd_train(cfg);
        for (const auto& r : runs) {
            std::printf("%-24s rounds=%zu best_round=%u val_loss=%.6g\n", r.run_label.c_str(),
                        r.outcome.history.size(), r.outcome.best_round,
                        r.outcome.best_val_loss);
            std::printf("%-24s accuracy=%.2f%% precision=%.2f%% recall=%.2f%% f1=%.2f%% (%.1fs)\n",
                        "", 100.0 * r.final_eval.accuracy, 100.0 * r.final_eval.precision,
                        100.0 * r.final_eval.recall, 100.0 * r.final_eval.f1, r.train_seconds);
            std::printf("%-24s artifacts: %s\n", "", r.dir.c_str());
        }
        return 0;
    }
    if (compare->parsed()) {
        const auto rows = expt::cmd_compare(manifests);
        const auto csv = expt::compare_csv(rows);
        if (compare_out.empty()) {
            std::cout << csv;
        } else {
            expt::detail::write_file(compare_out, csv);
            std::cerr << "wrote " << compare_out << "\n";
        }
        std::cout << expt::compare_text(rows);
        return 0;
    }
    if (curves->parsed()) {
        const auto csv = expt::cmd_curves(histories);
        if (curves_out.empty()) {
            std::cout << csv;
        } else {
            expt::detail::write_file(curves_out, csv);
            std::cerr << "wrote " << curves_out << "\n";
        }
        return 0;
    }
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const hfl::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const hfl::DivergedError& e) {
        std::cerr << "training diverged: " << e.what() << "\n";
        return 3;
    } catch (const hfl::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
