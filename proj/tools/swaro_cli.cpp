// Command-line front end: pretraining, evaluation protocols, ablations and
// embedding export. All subcommands exit nonzero with a message on error and
// leave no partial output files behind.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "swaro/checkpoint.hpp"
#include "swaro/config.hpp"
#include "swaro/evaluation.hpp"
#include "swaro/harness.hpp"

namespace {

using namespace swaro;

Dataset load_dataset_file(const std::string& path, std::uint64_t seed) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset spec " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("invalid JSON in " + path + ": " + e.what());
    }
    return build_dataset(parse_dataset_spec(j), seed);
}

/// Rebuild the training dataset recorded in a checkpoint's config echo.
Dataset dataset_from_checkpoint(const Checkpoint& ckpt) {
    nlohmann::json echo = nlohmann::json::parse(ckpt.config_echo);
    std::uint64_t seed = echo.contains("seeds") ? echo["seeds"]["data"].get<std::uint64_t>() : 1;
    return build_dataset(parse_dataset_spec(echo.at("dataset")), seed);
}

void write_atomically(const std::string& path, const std::string& content) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + tmp);
        out << content;
    }
    std::filesystem::rename(tmp, path);
}

void emit_report(const EvalReport& report, const std::string& out_path) {
    std::cout << report.to_csv();
    if (!out_path.empty()) {
        write_atomically(out_path, report.to_csv());
        auto json_path = std::filesystem::path(out_path).replace_extension(".json");
        write_atomically(json_path.string(), report.to_json().dump(2) + "\n");
    }
}

AttackConfig attack_from_flags(const std::string& method, const std::string& norm,
                               double eps, double eta, std::size_t iters,
                               int targeted_class) {
    AttackConfig atk;
    atk.method = method_from_string(method);
    atk.norm = norm_from_string(norm);
    atk.epsilon = eps;
    atk.eta = eta;
    atk.iters = iters;
    if (targeted_class >= 0) {
        atk.targeted = true;
        atk.target_label = targeted_class;
    }
    atk.validate();
    return atk;
}

int run(int argc, char** argv) {
    CLI::App app{"SwARo: cluster-guided adversarial contrastive pretraining"};
    app.require_subcommand(1);

    // pretrain
    std::string config_path;
    auto* pretrain = app.add_subcommand("pretrain", "train an encoder from a config file");
    pretrain->add_option("config", config_path, "run config JSON")->required();

    // linear-eval
    std::string le_ckpt, le_dataset, le_out;
    bool le_robust = false;
    std::size_t le_probe_epochs = 60;
    std::uint64_t le_seed = 1;
    auto* linear_eval = app.add_subcommand("linear-eval", "linear probe evaluation");
    linear_eval->add_option("checkpoint", le_ckpt)->required();
    linear_eval->add_option("dataset", le_dataset, "dataset spec JSON")->required();
    linear_eval->add_flag("--robust", le_robust, "train the probe on adversarial inputs");
    linear_eval->add_option("--probe-epochs", le_probe_epochs);
    linear_eval->add_option("--seed", le_seed);
    linear_eval->add_option("--out", le_out, "write report CSV/JSON here");

    // attack-eval
    std::string ae_ckpt, ae_method = "pgd", ae_norm = "linf", ae_dataset, ae_out;
    double ae_eps = 8.0 / 255.0, ae_eta = 1.0 / 255.0;
    std::size_t ae_iters = 7, ae_probe_epochs = 60;
    int ae_target = -1;
    std::uint64_t ae_seed = 1;
    auto* attack_eval = app.add_subcommand("attack-eval", "white-box robust accuracy");
    attack_eval->add_option("checkpoint", ae_ckpt)->required();
    attack_eval->add_option("--method", ae_method, "fgsm|bim|pgd|jitter");
    attack_eval->add_option("--norm", ae_norm, "linf|l2|l1");
    attack_eval->add_option("--eps", ae_eps);
    attack_eval->add_option("--eta", ae_eta);
    attack_eval->add_option("--iters", ae_iters);
    attack_eval->add_option("--targeted", ae_target, "target class id");
    attack_eval->add_option("--dataset", ae_dataset, "dataset spec (default: from checkpoint)");
    attack_eval->add_option("--probe-epochs", ae_probe_epochs);
    attack_eval->add_option("--seed", ae_seed);
    attack_eval->add_option("--out", ae_out);

    // blackbox-eval
    std::string bb_src, bb_dst, bb_method = "pgd", bb_norm = "linf", bb_dataset, bb_out;
    double bb_eps = 8.0 / 255.0, bb_eta = 1.0 / 255.0;
    std::size_t bb_iters = 7, bb_probe_epochs = 60;
    std::uint64_t bb_seed = 1;
    auto* blackbox = app.add_subcommand("blackbox-eval",
                                        "transfer attack from source to target model");
    blackbox->add_option("source", bb_src)->required();
    blackbox->add_option("target", bb_dst)->required();
    blackbox->add_option("--method", bb_method);
    blackbox->add_option("--norm", bb_norm);
    blackbox->add_option("--eps", bb_eps);
    blackbox->add_option("--eta", bb_eta);
    blackbox->add_option("--iters", bb_iters);
    blackbox->add_option("--dataset", bb_dataset, "dataset spec (default: from target)");
    blackbox->add_option("--probe-epochs", bb_probe_epochs);
    blackbox->add_option("--seed", bb_seed);
    blackbox->add_option("--out", bb_out);

    // ablate
    std::string ab_config, ab_axis, ab_values, ab_out;
    auto* ablate = app.add_subcommand("ablate", "sweep p, K or epochs");
    ablate->add_option("config", ab_config)->required();
    ablate->add_option("--axis", ab_axis, "p|K|epochs")->required();
    ablate->add_option("--values", ab_values, "comma-separated values")->required();
    ablate->add_option("--out", ab_out, "write combined CSV here");

    // export-embeddings
    std::string ex_ckpt, ex_dataset, ex_out;
    std::uint64_t ex_seed = 1;
    auto* export_cmd = app.add_subcommand("export-embeddings",
                                          "PCA-project embeddings to 2-D CSV");
    export_cmd->add_option("checkpoint", ex_ckpt)->required();
    export_cmd->add_option("dataset", ex_dataset)->required();
    export_cmd->add_option("out", ex_out)->required();
    export_cmd->add_option("--seed", ex_seed);

    CLI11_PARSE(app, argc, argv);

    if (*pretrain) {
        RunConfig cfg = load_run_config(config_path);
        TrainResult result = train(cfg);
        std::cout << "trained " << cfg.epochs << " epochs, final loss "
                  << result.log.records.back().mean_loss << "\n";
        if (!result.checkpoint_path.empty())
            std::cout << "checkpoint: " << result.checkpoint_path << "\n";
        return 0;
    }

    if (*linear_eval) {
        Checkpoint ckpt = load_checkpoint(le_ckpt);
        Dataset ds = load_dataset_file(le_dataset, le_seed);
        AttackConfig atk;  // paper defaults
        double lr = le_robust ? 0.02 : 0.01;
        LinearProbe probe = train_linear_probe(
            ckpt.encoder, ds, le_probe_epochs, lr, le_seed, le_robust,
            le_robust ? std::optional(atk) : std::nullopt);
        EvalReport report;
        report.clean_accuracy =
            evaluate(ckpt.encoder, probe, ds, std::nullopt, le_seed).accuracy;
        emit_report(report, le_out);
        return 0;
    }

    if (*attack_eval) {
        Checkpoint ckpt = load_checkpoint(ae_ckpt);
        Dataset ds = ae_dataset.empty() ? dataset_from_checkpoint(ckpt)
                                        : load_dataset_file(ae_dataset, ae_seed);
        AttackConfig atk =
            attack_from_flags(ae_method, ae_norm, ae_eps, ae_eta, ae_iters, ae_target);
        LinearProbe probe =
            train_linear_probe(ckpt.encoder, ds, ae_probe_epochs, 0.01, ae_seed);
        EvalReport report;
        report.clean_accuracy =
            evaluate(ckpt.encoder, probe, ds, std::nullopt, ae_seed).accuracy;
        report.entries.push_back(evaluate(ckpt.encoder, probe, ds, atk, ae_seed));
        emit_report(report, ae_out);
        return 0;
    }

    if (*blackbox) {
        Checkpoint src = load_checkpoint(bb_src);
        Checkpoint dst = load_checkpoint(bb_dst);
        Dataset ds = bb_dataset.empty() ? dataset_from_checkpoint(dst)
                                        : load_dataset_file(bb_dataset, bb_seed);
        AttackConfig atk =
            attack_from_flags(bb_method, bb_norm, bb_eps, bb_eta, bb_iters, -1);
        LinearProbe src_probe =
            train_linear_probe(src.encoder, ds, bb_probe_epochs, 0.01, bb_seed);
        LinearProbe dst_probe =
            train_linear_probe(dst.encoder, ds, bb_probe_epochs, 0.01, bb_seed);
        EvalReport report;
        report.clean_accuracy =
            evaluate(dst.encoder, dst_probe, ds, std::nullopt, bb_seed).accuracy;
        report.entries.push_back(black_box_eval(src.encoder, src_probe, dst.encoder,
                                                dst_probe, ds, atk, bb_seed));
        emit_report(report, bb_out);
        return 0;
    }

    if (*ablate) {
        RunConfig cfg = load_run_config(ab_config);
        std::vector<double> values;
        std::stringstream ss(ab_values);
        std::string item;
        while (std::getline(ss, item, ','))
            if (!item.empty()) values.push_back(std::stod(item));
        if (values.empty()) throw std::runtime_error("ablate: no values given");
        AblationTable table = run_ablation(cfg, ab_axis, values);
        std::cout << table.to_csv();
        if (!ab_out.empty()) write_atomically(ab_out, table.to_csv());
        return 0;
    }

    if (*export_cmd) {
        Checkpoint ckpt = load_checkpoint(ex_ckpt);
        Dataset ds = load_dataset_file(ex_dataset, ex_seed);
        std::string tmp = ex_out + ".tmp";
        Pca2dResult pca = export_embeddings_2d(ckpt.encoder, ds, tmp);
        std::filesystem::rename(tmp, ex_out);
        if (pca.degenerate)
            std::cerr << "warning: degenerate covariance, coordinates are all zero\n";
        std::cout << "wrote " << ds.size() << " rows to " << ex_out << "\n";
        return 0;
    }

    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
