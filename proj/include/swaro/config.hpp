#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "swaro/adversarial.hpp"
#include "swaro/contrastive.hpp"
#include "swaro/data.hpp"
#include "swaro/encoder.hpp"

namespace swaro {

struct DatasetSpec {
    std::string kind;  // blobs | overlap_blobs | csv
    std::size_t n = 0;
    std::size_t classes = 2;
    std::size_t dim = 2;
    double spread = 1.0;
    double separation = 6.0;
    std::string path;  // csv only
    std::size_t features = 0;
    double min_value = 0.0;
    double max_value = 1.0;
};

struct Seeds {
    std::uint64_t data = 1;
    std::uint64_t init = 2;
    std::uint64_t attack = 3;
    std::uint64_t permutation = 4;
};

struct TrainAttack {
    bool enabled = true;
    AttackConfig config;
};

/// Full experiment description. Parsed from a flat JSON document; unknown
/// keys are hard errors so typos cannot silently corrupt an ablation.
struct RunConfig {
    DatasetSpec dataset;
    std::vector<std::size_t> backbone_layout;  // input width + layer widths
    std::vector<std::size_t> head_layout;      // [hidden, embedding_dim]
    LossConfig loss;
    TrainAttack attack;
    std::size_t num_clusters = 4;
    double p = 0.75;
    double warmup_fraction = 0.05;
    std::size_t epochs = 10;
    std::size_t batch_size = 16;
    double lr = 0.05;
    double momentum = 0.9;
    Seeds seeds;
    AugmentationSpec augmentation;
    std::size_t checkpoint_every = 0;  // 0 = final checkpoint only
    std::string output_dir;

    void validate() const {
        if (p < 0.0 || p > 1.0) throw std::invalid_argument("config: p outside [0,1]");
        if (warmup_fraction < 0.0 || warmup_fraction >= 1.0)
            throw std::invalid_argument("config: warmup_fraction outside [0,1)");
        if (epochs < 1) throw std::invalid_argument("config: epochs < 1");
        if (batch_size < 2) throw std::invalid_argument("config: batch_size < 2");
        if (num_clusters < 1) throw std::invalid_argument("config: num_clusters < 1");
        if (lr <= 0.0) throw std::invalid_argument("config: lr <= 0");
        if (momentum < 0.0 || momentum >= 1.0)
            throw std::invalid_argument("config: momentum outside [0,1)");
        loss.validate();
        augmentation.validate();
        if (attack.enabled) attack.config.validate();
        if (backbone_layout.size() < 2)
            throw std::invalid_argument("config: backbone_layout needs input width + layers");
        if (head_layout.size() != 2)
            throw std::invalid_argument("config: head_layout must have exactly 2 widths");
    }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::string& where,
                       const std::vector<std::string>& allowed) {
    if (!j.is_object())
        throw std::invalid_argument("config: " + where + " must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const std::string& k : allowed)
            if (it.key() == k) { ok = true; break; }
        if (!ok)
            throw std::invalid_argument("config: unknown key '" + it.key() + "' in " +
                                        where);
    }
}

template <typename T>
T require(const nlohmann::json& j, const std::string& where, const std::string& key) {
    if (!j.contains(key))
        throw std::invalid_argument("config: missing key '" + key + "' in " + where);
    return j.at(key).get<T>();
}

template <typename T>
T get_or(const nlohmann::json& j, const std::string& key, T fallback) {
    return j.contains(key) ? j.at(key).get<T>() : fallback;
}

}  // namespace detail

inline DatasetSpec parse_dataset_spec(const nlohmann::json& j) {
    using detail::check_keys;
    using detail::get_or;
    using detail::require;

    DatasetSpec ds;
    ds.kind = require<std::string>(j, "dataset", "kind");
    if (ds.kind == "blobs") {
        check_keys(j, "dataset", {"kind", "n", "classes", "dim", "spread", "separation"});
        ds.n = require<std::size_t>(j, "dataset", "n");
        ds.classes = require<std::size_t>(j, "dataset", "classes");
        ds.dim = require<std::size_t>(j, "dataset", "dim");
        ds.spread = get_or(j, "spread", 1.0);
        ds.separation = get_or(j, "separation", 6.0);
    } else if (ds.kind == "overlap_blobs") {
        check_keys(j, "dataset", {"kind", "n", "dim", "separation"});
        ds.n = require<std::size_t>(j, "dataset", "n");
        ds.dim = require<std::size_t>(j, "dataset", "dim");
        ds.separation = get_or(j, "separation", 3.0);
        ds.classes = 2;
    } else if (ds.kind == "csv") {
        check_keys(j, "dataset", {"kind", "path", "features", "min", "max", "classes"});
        ds.path = require<std::string>(j, "dataset", "path");
        ds.features = require<std::size_t>(j, "dataset", "features");
        ds.min_value = get_or(j, "min", 0.0);
        ds.max_value = get_or(j, "max", 1.0);
        ds.classes = get_or<std::size_t>(j, "classes", 0);
    } else {
        throw std::invalid_argument("config: unknown dataset kind '" + ds.kind + "'");
    }
    return ds;
}

inline Dataset build_dataset(const DatasetSpec& spec, std::uint64_t seed) {
    if (spec.kind == "blobs")
        return gen_blobs_with_separation(spec.n, spec.classes, spec.dim, spec.spread,
                                         spec.separation, seed);
    if (spec.kind == "overlap_blobs")
        return gen_overlap_blobs(spec.n, spec.dim, spec.separation, seed);
    if (spec.kind == "csv") {
        CsvSchema schema{spec.features, spec.min_value, spec.max_value, spec.classes};
        return load_csv_dataset(spec.path, schema);
    }
    throw std::invalid_argument("build_dataset: unknown kind '" + spec.kind + "'");
}

inline AttackConfig parse_attack_config(const nlohmann::json& j, const std::string& where) {
    using detail::get_or;
    detail::check_keys(j, where,
                       {"enabled", "method", "norm", "epsilon", "eta", "iters",
                        "random_start", "clamp_to_domain", "targeted", "target_label",
                        "jitter_noise_std"});
    AttackConfig atk;
    atk.method = method_from_string(get_or<std::string>(j, "method", "pgd"));
    atk.norm = norm_from_string(get_or<std::string>(j, "norm", "linf"));
    atk.epsilon = get_or(j, "epsilon", 8.0 / 255.0);
    atk.eta = get_or(j, "eta", 1.0 / 255.0);
    atk.iters = get_or<std::size_t>(j, "iters", 7);
    atk.random_start = get_or(j, "random_start", true);
    atk.clamp_to_domain = get_or(j, "clamp_to_domain", true);
    atk.targeted = get_or(j, "targeted", false);
    atk.target_label = get_or(j, "target_label", -1);
    atk.jitter_noise_std = get_or(j, "jitter_noise_std", 0.1);
    return atk;
}

inline RunConfig parse_run_config(const nlohmann::json& j) {
    using detail::check_keys;
    using detail::get_or;
    using detail::require;

    check_keys(j, "config",
               {"dataset", "backbone_layout", "head_layout", "temperature",
                "denominator_convention", "attack", "num_clusters", "p",
                "warmup_fraction", "epochs", "batch_size", "lr", "momentum", "seeds",
                "augmentation", "checkpoint_every", "output_dir"});

    RunConfig cfg;
    cfg.dataset = parse_dataset_spec(require<nlohmann::json>(j, "config", "dataset"));
    cfg.backbone_layout = require<std::vector<std::size_t>>(j, "config", "backbone_layout");
    cfg.head_layout = require<std::vector<std::size_t>>(j, "config", "head_layout");
    cfg.loss.temperature = get_or(j, "temperature", 0.5);
    std::string conv = get_or<std::string>(j, "denominator_convention", "eq1");
    if (conv == "eq1")
        cfg.loss.denominator = Denominator::Eq1NegativesOnly;
    else if (conv == "include-positive")
        cfg.loss.denominator = Denominator::IncludePositive;
    else
        throw std::invalid_argument("config: unknown denominator_convention '" + conv + "'");

    if (j.contains("attack")) {
        cfg.attack.enabled = detail::get_or(j.at("attack"), "enabled", true);
        cfg.attack.config = parse_attack_config(j.at("attack"), "attack");
    }
    cfg.num_clusters = get_or<std::size_t>(j, "num_clusters", 4);
    cfg.p = get_or(j, "p", 0.75);
    cfg.warmup_fraction = get_or(j, "warmup_fraction", 0.05);
    cfg.epochs = require<std::size_t>(j, "config", "epochs");
    cfg.batch_size = get_or<std::size_t>(j, "batch_size", 16);
    cfg.lr = get_or(j, "lr", 0.05);
    cfg.momentum = get_or(j, "momentum", 0.9);

    if (j.contains("seeds")) {
        const auto& s = j.at("seeds");
        check_keys(s, "seeds", {"data", "init", "attack", "permutation"});
        cfg.seeds.data = get_or<std::uint64_t>(s, "data", 1);
        cfg.seeds.init = get_or<std::uint64_t>(s, "init", 2);
        cfg.seeds.attack = get_or<std::uint64_t>(s, "attack", 3);
        cfg.seeds.permutation = get_or<std::uint64_t>(s, "permutation", 4);
    }
    if (j.contains("augmentation")) {
        const auto& a = j.at("augmentation");
        check_keys(a, "augmentation",
                   {"noise_std", "scale_lo", "scale_hi", "mask_prob", "shift_amp"});
        cfg.augmentation.noise_std = get_or(a, "noise_std", 0.0);
        cfg.augmentation.scale_lo = get_or(a, "scale_lo", 1.0);
        cfg.augmentation.scale_hi = get_or(a, "scale_hi", 1.0);
        cfg.augmentation.mask_prob = get_or(a, "mask_prob", 0.0);
        cfg.augmentation.shift_amp = get_or<std::size_t>(a, "shift_amp", 0);
    }
    cfg.checkpoint_every = get_or<std::size_t>(j, "checkpoint_every", 0);
    cfg.output_dir = get_or<std::string>(j, "output_dir", "");
    cfg.validate();
    return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_run_config: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("load_run_config: invalid JSON in " + path + ": " +
                                 e.what());
    }
    return parse_run_config(j);
}

/// Canonical JSON serialization, used for the checkpoint provenance echo.
inline nlohmann::ordered_json run_config_to_json(const RunConfig& cfg) {
    nlohmann::ordered_json d;
    d["kind"] = cfg.dataset.kind;
    if (cfg.dataset.kind == "blobs") {
        d["n"] = cfg.dataset.n;
        d["classes"] = cfg.dataset.classes;
        d["dim"] = cfg.dataset.dim;
        d["spread"] = cfg.dataset.spread;
        d["separation"] = cfg.dataset.separation;
    } else if (cfg.dataset.kind == "overlap_blobs") {
        d["n"] = cfg.dataset.n;
        d["dim"] = cfg.dataset.dim;
        d["separation"] = cfg.dataset.separation;
    } else {
        d["path"] = cfg.dataset.path;
        d["features"] = cfg.dataset.features;
        d["min"] = cfg.dataset.min_value;
        d["max"] = cfg.dataset.max_value;
        d["classes"] = cfg.dataset.classes;
    }

    nlohmann::ordered_json j;
    j["dataset"] = d;
    j["backbone_layout"] = cfg.backbone_layout;
    j["head_layout"] = cfg.head_layout;
    j["temperature"] = cfg.loss.temperature;
    j["denominator_convention"] =
        cfg.loss.denominator == Denominator::Eq1NegativesOnly ? "eq1" : "include-positive";
    j["attack"] = {{"enabled", cfg.attack.enabled},
                   {"method", to_string(cfg.attack.config.method)},
                   {"norm", to_string(cfg.attack.config.norm)},
                   {"epsilon", cfg.attack.config.epsilon},
                   {"eta", cfg.attack.config.eta},
                   {"iters", cfg.attack.config.iters},
                   {"random_start", cfg.attack.config.random_start},
                   {"clamp_to_domain", cfg.attack.config.clamp_to_domain}};
    j["num_clusters"] = cfg.num_clusters;
    j["p"] = cfg.p;
    j["warmup_fraction"] = cfg.warmup_fraction;
    j["epochs"] = cfg.epochs;
    j["batch_size"] = cfg.batch_size;
    j["lr"] = cfg.lr;
    j["momentum"] = cfg.momentum;
    j["seeds"] = {{"data", cfg.seeds.data},
                  {"init", cfg.seeds.init},
                  {"attack", cfg.seeds.attack},
                  {"permutation", cfg.seeds.permutation}};
    j["augmentation"] = {{"noise_std", cfg.augmentation.noise_std},
                         {"scale_lo", cfg.augmentation.scale_lo},
                         {"scale_hi", cfg.augmentation.scale_hi},
                         {"mask_prob", cfg.augmentation.mask_prob},
                         {"shift_amp", cfg.augmentation.shift_amp}};
    j["checkpoint_every"] = cfg.checkpoint_every;
    j["output_dir"] = cfg.output_dir;
    return j;
}

}  // namespace swaro
