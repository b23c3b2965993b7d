#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "swaro/checkpoint.hpp"
#include "swaro/clustering.hpp"
#include "swaro/config.hpp"
#include "swaro/contrastive.hpp"
#include "swaro/data.hpp"
#include "swaro/encoder.hpp"
#include "swaro/evaluation.hpp"

namespace swaro {

struct EpochRecord {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    double frac_beta_negative = -1.0;  // -1 when no cluster-guided batches ran
    double cluster_inertia = -1.0;     // -1 when no clustering ran
    double wall_ms = 0.0;
    std::string checkpoint_path;
};

struct TrainingLog {
    std::vector<EpochRecord> records;

    /// Deterministic columns only; wall time goes to a separate timing file
    /// so identical runs produce byte-identical metrics.
    std::string to_csv() const {
        std::ostringstream os;
        os << "epoch,mean_loss,frac_beta_negative,cluster_inertia,checkpoint_path\n";
        for (const EpochRecord& r : records)
            os << r.epoch << "," << r.mean_loss << "," << r.frac_beta_negative << ","
               << r.cluster_inertia << "," << r.checkpoint_path << "\n";
        return os.str();
    }

    std::string timing_csv() const {
        std::ostringstream os;
        os << "epoch,wall_ms\n";
        for (const EpochRecord& r : records) os << r.epoch << "," << r.wall_ms << "\n";
        return os.str();
    }
};

struct TrainResult {
    EncoderParams encoder;
    TrainingLog log;
    std::optional<ClusterModel> clusters;  // last fitted model, if any
    Dataset dataset;
    std::string checkpoint_path;
};

namespace detail {

struct SgdMomentum {
    double lr;
    double momentum;
    std::vector<Tensor> velocity;

    void step(std::vector<Tensor*> params, const std::vector<Tensor>& grads) {
        if (velocity.empty())
            for (Tensor* p : params) velocity.push_back(Tensor::zeros(p->shape()));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor& v = velocity[i];
            Tensor& p = *params[i];
            const Tensor& g = grads[i];
            for (std::size_t k = 0; k < p.size(); ++k) {
                v[k] = momentum * v[k] + g[k];
                p[k] -= lr * v[k];
            }
        }
    }
};

inline std::vector<Tensor*> parameter_refs(EncoderParams& p) {
    std::vector<Tensor*> refs;
    for (Layer& l : p.backbone) { refs.push_back(&l.weight); refs.push_back(&l.bias); }
    for (Layer& l : p.head) { refs.push_back(&l.weight); refs.push_back(&l.bias); }
    return refs;
}

inline void write_file(const std::string& path, const std::string& content) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + tmp);
        out << content;
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace detail

inline std::size_t warmup_epoch_count(const RunConfig& cfg) {
    return std::size_t(cfg.warmup_fraction * double(cfg.epochs));
}

/// The full pretraining loop: instance-wise attacks during warmup, then a
/// per-epoch cluster refit and a Bernoulli(p) per-batch choice between the
/// cluster-guided permuted attack and the instance-wise one.
inline TrainResult train(const RunConfig& cfg) {
    cfg.validate();
    Dataset ds = build_dataset(cfg.dataset, cfg.seeds.data);
    if (ds.size() < cfg.batch_size)
        throw std::invalid_argument("train: dataset smaller than one batch");

    EncoderLayout layout{cfg.backbone_layout, cfg.head_layout};
    if (cfg.backbone_layout.front() != ds.dim())
        throw std::invalid_argument("train: backbone input width " +
                                    std::to_string(cfg.backbone_layout.front()) +
                                    " does not match dataset dim " +
                                    std::to_string(ds.dim()));

    TrainResult result;
    result.encoder = init_params(layout, cfg.seeds.init);
    result.dataset = ds;

    detail::SgdMomentum opt{cfg.lr, cfg.momentum, {}};
    std::size_t warmup = warmup_epoch_count(cfg);
    std::size_t batches_per_epoch = ds.size() / cfg.batch_size;
    if (batches_per_epoch == 0) batches_per_epoch = 1;

    std::string ckpt_dir;
    if (!cfg.output_dir.empty()) {
        std::filesystem::create_directories(cfg.output_dir);
        ckpt_dir = cfg.output_dir;
    }
    std::string echo = run_config_to_json(cfg).dump(2);

    auto save = [&](const std::string& name) -> std::string {
        if (ckpt_dir.empty()) return "";
        std::string path = (std::filesystem::path(ckpt_dir) / name).string();
        save_checkpoint({result.encoder, result.clusters, echo}, path);
        return path;
    };

    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        EpochRecord rec;
        rec.epoch = epoch;

        bool past_warmup = epoch >= warmup;
        bool use_clusters = past_warmup && cfg.attack.enabled && cfg.p > 0.0;

        if (use_clusters) {
            Tensor Z = encode_value(result.encoder, feature_matrix(ds));
            result.clusters = kmeans_fit(Z, cfg.num_clusters, /*max_iters=*/50,
                                         /*tol=*/1e-8,
                                         derive_seed(cfg.seeds.data, 0xC1 + epoch));
            rec.cluster_inertia = result.clusters->inertia;
        }

        auto shuffle_rng = make_rng(cfg.seeds.data, 0x0D0 + epoch);
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        auto choice_rng = make_rng(cfg.seeds.permutation, 0xC0 + epoch);
        std::uniform_real_distribution<double> uniform01(0.0, 1.0);

        double loss_sum = 0.0;
        std::size_t swaro_pairs = 0, beta_negative = 0;

        for (std::size_t b = 0; b < batches_per_epoch; ++b) {
            std::vector<std::size_t> idx(order.begin() + long(b * cfg.batch_size),
                                         order.begin() + long((b + 1) * cfg.batch_size));
            PairBatch batch = make_pair_batch(
                ds, idx, cfg.augmentation,
                derive_seed(cfg.seeds.data, (epoch << 20) + 0xBA7C + b));

            if (cfg.attack.enabled) {
                bool swaro_batch = use_clusters && uniform01(choice_rng) < cfg.p;
                std::uint64_t atk_seed = derive_seed(cfg.seeds.attack, (epoch << 20) + b);
                if (swaro_batch) {
                    // stamp pseudo-labels on both views from the current model
                    Tensor emb = batch_view_embeddings(result.encoder, batch);
                    PseudoLabels pl = assign_pseudo_labels(*result.clusters, emb, epoch);
                    for (std::size_t i = 0; i < batch.size(); ++i) {
                        batch.entries[i].pseudo1 = int(pl.labels[i]);
                        batch.entries[i].pseudo2 = int(pl.labels[batch.size() + i]);
                    }
                    permute_pairs(batch,
                                  derive_seed(cfg.seeds.permutation, (epoch << 20) + b));
                    swaro_perturb_batch(batch, result.encoder, cfg.loss,
                                        cfg.attack.config, ds.lower_bound,
                                        ds.upper_bound, atk_seed);
                    reorder_to_original(batch);
                    for (const PairEntry& e : batch.entries) {
                        ++swaro_pairs;
                        if (e.beta < 0) ++beta_negative;
                    }
                } else {
                    instance_perturb_batch(batch, result.encoder, cfg.loss,
                                           cfg.attack.config, ds.lower_bound,
                                           ds.upper_bound, atk_seed);
                }
            }

            Tape tape;
            EncoderNodes enc = attach_params(tape, result.encoder);
            Tape::Id loss = batch_contrastive_loss(tape, enc, batch, cfg.loss);
            double loss_value = tape.value(loss).item();
            if (!std::isfinite(loss_value)) {
                save("checkpoint_abort.bin");
                throw std::runtime_error("train: non-finite loss at epoch " +
                                         std::to_string(epoch) + " batch " +
                                         std::to_string(b));
            }
            loss_sum += loss_value;

            auto grads = tape.backward(loss);
            std::vector<Tensor> param_grads;
            for (Tape::Id id : enc.all_ids()) param_grads.push_back(grads[id]);
            opt.step(detail::parameter_refs(result.encoder), param_grads);
        }

        rec.mean_loss = loss_sum / double(batches_per_epoch);
        if (swaro_pairs > 0)
            rec.frac_beta_negative = double(beta_negative) / double(swaro_pairs);

        if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 &&
            epoch + 1 < cfg.epochs)
            rec.checkpoint_path = save("checkpoint_epoch_" + std::to_string(epoch + 1) + ".bin");

        auto t1 = std::chrono::steady_clock::now();
        rec.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        result.log.records.push_back(std::move(rec));
    }

    result.checkpoint_path = save("checkpoint.bin");
    if (!result.log.records.empty() && !result.checkpoint_path.empty())
        result.log.records.back().checkpoint_path = result.checkpoint_path;

    if (!cfg.output_dir.empty()) {
        auto dir = std::filesystem::path(cfg.output_dir);
        detail::write_file((dir / "training_log.csv").string(), result.log.to_csv());
        detail::write_file((dir / "timing.csv").string(), result.log.timing_csv());
        nlohmann::ordered_json summary;
        summary["epochs"] = result.log.records.size();
        summary["final_loss"] =
            result.log.records.empty() ? 0.0 : result.log.records.back().mean_loss;
        summary["checkpoint"] = result.checkpoint_path;
        summary["config"] = nlohmann::ordered_json::parse(echo);
        detail::write_file((dir / "summary.json").string(), summary.dump(2));
    }
    return result;
}

/// The standard evaluation protocol applied after pretraining: a clean
/// linear probe, clean accuracy, and white-box PGD robust accuracy.
struct ProtocolResult {
    double clean_accuracy = 0.0;
    double robust_accuracy = 0.0;
    LinearProbe probe;
};

inline ProtocolResult standard_protocol(const EncoderParams& encoder, const Dataset& ds,
                                        std::uint64_t seed,
                                        std::optional<AttackConfig> eval_attack = std::nullopt,
                                        bool robust_probe = false,
                                        std::size_t probe_epochs = 60) {
    AttackConfig atk = eval_attack.value_or(AttackConfig{});
    double lr = robust_probe ? 0.02 : 0.01;
    LinearProbe probe = train_linear_probe(encoder, ds, probe_epochs, lr, seed,
                                           robust_probe,
                                           robust_probe ? std::optional(atk) : std::nullopt);
    ProtocolResult out;
    out.clean_accuracy = evaluate(encoder, probe, ds, std::nullopt, seed).accuracy;
    out.robust_accuracy = evaluate(encoder, probe, ds, atk, seed).accuracy;
    out.probe = std::move(probe);
    return out;
}

struct AblationRow {
    double value = 0.0;
    double clean_accuracy = -1.0;
    double robust_accuracy = -1.0;
    std::string error;  // empty on success
};

struct AblationTable {
    std::string axis;
    std::vector<AblationRow> rows;

    std::string to_csv() const {
        std::ostringstream os;
        os << axis << ",clean_accuracy,robust_accuracy,error\n";
        for (const AblationRow& r : rows)
            os << r.value << "," << r.clean_accuracy << "," << r.robust_accuracy << ","
               << r.error << "\n";
        return os.str();
    }
};

/// Sweep one axis (p, K or epochs), training one model per value with shared
/// seeds and evaluating with the standard protocol. Per-cell failures are
/// recorded and the remaining cells continue.
inline AblationTable run_ablation(const RunConfig& base, const std::string& axis,
                                  const std::vector<double>& values) {
    if (axis != "p" && axis != "K" && axis != "epochs")
        throw std::invalid_argument("run_ablation: axis must be p, K or epochs");
    AblationTable table;
    table.axis = axis;
    for (double v : values) {
        AblationRow row;
        row.value = v;
        try {
            RunConfig cfg = base;
            cfg.output_dir.clear();  // cells stay in memory; caller persists the table
            if (axis == "p") {
                cfg.p = v;
            } else if (axis == "K") {
                if (v < 1.0 || v != std::floor(v))
                    throw std::invalid_argument("K values must be positive integers");
                cfg.num_clusters = std::size_t(v);
            } else {
                if (v < 1.0 || v != std::floor(v))
                    throw std::invalid_argument("epoch values must be positive integers");
                cfg.epochs = std::size_t(v);
            }
            cfg.validate();
            TrainResult trained = train(cfg);
            ProtocolResult eval = standard_protocol(
                trained.encoder, trained.dataset, cfg.seeds.data,
                cfg.attack.enabled ? std::optional(cfg.attack.config) : std::nullopt);
            row.clean_accuracy = eval.clean_accuracy;
            row.robust_accuracy = eval.robust_accuracy;
        } catch (const std::exception& e) {
            row.error = e.what();
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

}  // namespace swaro
