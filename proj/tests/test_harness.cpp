#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "swaro/harness.hpp"

using namespace swaro;

namespace {

RunConfig base_config() {
    RunConfig cfg;
    cfg.dataset.kind = "blobs";
    cfg.dataset.n = 32;
    cfg.dataset.classes = 2;
    cfg.dataset.dim = 4;
    cfg.dataset.spread = 0.5;
    cfg.dataset.separation = 6.0;
    cfg.backbone_layout = {4, 8};
    cfg.head_layout = {8, 6};
    cfg.num_clusters = 2;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    cfg.lr = 0.01;
    cfg.warmup_fraction = 0.0;
    cfg.p = 0.75;
    cfg.attack.enabled = true;
    cfg.attack.config.iters = 2;
    cfg.attack.config.epsilon = 0.03;
    cfg.attack.config.eta = 0.01;
    cfg.augmentation.noise_std = 0.02;
    return cfg;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

bool params_equal(const EncoderParams& a, const EncoderParams& b) {
    if (a.backbone.size() != b.backbone.size()) return false;
    auto tensors_equal = [](const Tensor& x, const Tensor& y) {
        if (x.shape() != y.shape()) return false;
        for (std::size_t i = 0; i < x.size(); ++i)
            if (x[i] != y[i]) return false;
        return true;
    };
    for (std::size_t l = 0; l < a.backbone.size(); ++l)
        if (!tensors_equal(a.backbone[l].weight, b.backbone[l].weight) ||
            !tensors_equal(a.backbone[l].bias, b.backbone[l].bias))
            return false;
    for (std::size_t l = 0; l < 2; ++l)
        if (!tensors_equal(a.head[l].weight, b.head[l].weight) ||
            !tensors_equal(a.head[l].bias, b.head[l].bias))
            return false;
    return true;
}

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() / ("swaro_harness_" + tag);
        std::filesystem::remove_all(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string str() const { return path.string(); }
};

}  // namespace

TEST_CASE("warmup epoch count floors the fraction") {
    RunConfig cfg = base_config();
    cfg.epochs = 10;
    cfg.warmup_fraction = 0.25;
    REQUIRE(warmup_epoch_count(cfg) == 2);
    cfg.warmup_fraction = 0.0;
    REQUIRE(warmup_epoch_count(cfg) == 0);
    cfg.warmup_fraction = 0.99;
    REQUIRE(warmup_epoch_count(cfg) == 9);
}

TEST_CASE("a single epoch runs end to end") {
    RunConfig cfg = base_config();
    cfg.epochs = 1;
    TrainResult result = train(cfg);
    REQUIRE(result.log.records.size() == 1);
    REQUIRE(std::isfinite(result.log.records[0].mean_loss));
    REQUIRE(result.dataset.size() == 32);
}

TEST_CASE("with p zero no cluster-guided batches ever run") {
    RunConfig cfg = base_config();
    cfg.p = 0.0;
    cfg.epochs = 3;
    TrainResult result = train(cfg);
    for (const EpochRecord& r : result.log.records) {
        REQUIRE(r.frac_beta_negative == -1.0);
        REQUIRE(r.cluster_inertia == -1.0);
    }
    REQUIRE_FALSE(result.clusters.has_value());
}

TEST_CASE("warmup epochs run without clustering, later epochs with it") {
    RunConfig cfg = base_config();
    cfg.epochs = 4;
    cfg.warmup_fraction = 0.5;  // 2 warmup epochs
    cfg.p = 1.0;                // every post-warmup batch is cluster-guided
    TrainResult result = train(cfg);
    REQUIRE(result.log.records.size() == 4);
    for (std::size_t e = 0; e < 2; ++e) {
        REQUIRE(result.log.records[e].cluster_inertia == -1.0);
        REQUIRE(result.log.records[e].frac_beta_negative == -1.0);
    }
    for (std::size_t e = 2; e < 4; ++e) {
        REQUIRE(result.log.records[e].cluster_inertia >= 0.0);
        REQUIRE(result.log.records[e].frac_beta_negative >= 0.0);
        REQUIRE(result.log.records[e].frac_beta_negative <= 1.0);
    }
    REQUIRE(result.clusters.has_value());
    REQUIRE(result.clusters->k == 2);
}

TEST_CASE("training reduces the contrastive loss across seeds") {
    for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
        RunConfig cfg = base_config();
        cfg.epochs = 30;
        cfg.seeds.data = seed;
        cfg.seeds.init = seed + 100;
        cfg.seeds.attack = seed + 200;
        cfg.seeds.permutation = seed + 300;
        TrainResult result = train(cfg);
        auto mean_over = [&](std::size_t from, std::size_t to) {
            double s = 0.0;
            for (std::size_t e = from; e < to; ++e)
                s += result.log.records[e].mean_loss;
            return s / double(to - from);
        };
        REQUIRE(mean_over(25, 30) < mean_over(0, 5));
    }
}

TEST_CASE("training is deterministic given the seeds") {
    RunConfig cfg = base_config();
    cfg.epochs = 3;
    TrainResult a = train(cfg);
    TrainResult b = train(cfg);
    REQUIRE(params_equal(a.encoder, b.encoder));
    REQUIRE(a.log.to_csv() == b.log.to_csv());

    RunConfig other = cfg;
    other.seeds.init = 99;
    TrainResult c = train(other);
    REQUIRE_FALSE(params_equal(a.encoder, c.encoder));
}

TEST_CASE("output directory gets the log, timing and summary files") {
    TempDir dir("outputs");
    RunConfig cfg = base_config();
    cfg.epochs = 2;
    cfg.output_dir = dir.str();
    TrainResult result = train(cfg);
    REQUIRE(std::filesystem::exists(dir.path / "training_log.csv"));
    REQUIRE(std::filesystem::exists(dir.path / "timing.csv"));
    REQUIRE(std::filesystem::exists(dir.path / "summary.json"));
    REQUIRE(std::filesystem::exists(dir.path / "checkpoint.bin"));
    REQUIRE(read_file((dir.path / "training_log.csv").string()) == result.log.to_csv());
    // wall time is quarantined away from the deterministic metrics
    REQUIRE(result.log.to_csv().find("wall") == std::string::npos);
    REQUIRE(read_file((dir.path / "timing.csv").string()).rfind("epoch,wall_ms", 0) == 0);
}

TEST_CASE("periodic checkpoints appear at the configured cadence") {
    TempDir dir("cadence");
    RunConfig cfg = base_config();
    cfg.epochs = 4;
    cfg.checkpoint_every = 2;
    cfg.output_dir = dir.str();
    train(cfg);
    REQUIRE(std::filesystem::exists(dir.path / "checkpoint_epoch_2.bin"));
    REQUIRE_FALSE(std::filesystem::exists(dir.path / "checkpoint_epoch_4.bin"));
    REQUIRE(std::filesystem::exists(dir.path / "checkpoint.bin"));
}

TEST_CASE("checkpoints round-trip byte-identically") {
    TempDir dir("roundtrip");
    RunConfig cfg = base_config();
    cfg.epochs = 2;
    cfg.output_dir = dir.str();
    TrainResult result = train(cfg);

    Checkpoint loaded = load_checkpoint(result.checkpoint_path);
    REQUIRE(params_equal(loaded.encoder, result.encoder));
    REQUIRE(loaded.clusters.has_value() == result.clusters.has_value());

    std::string copy = (dir.path / "copy.bin").string();
    save_checkpoint(loaded, copy);
    REQUIRE(read_file(copy) == read_file(result.checkpoint_path));

    // the config echo is parseable and reproduces the dataset spec
    auto echo = nlohmann::json::parse(loaded.config_echo);
    REQUIRE(echo["dataset"]["kind"] == "blobs");
    REQUIRE(echo["epochs"] == 2);
}

TEST_CASE("corrupt checkpoints are rejected") {
    TempDir dir("corrupt");
    std::filesystem::create_directories(dir.path);
    std::string path = (dir.path / "bad.bin").string();
    {
        std::ofstream out(path, std::ios::binary);
        out << "not a checkpoint";
    }
    REQUIRE_THROWS_WITH(load_checkpoint(path),
                        Catch::Matchers::ContainsSubstring("magic"));
    REQUIRE_THROWS_WITH(load_checkpoint((dir.path / "missing.bin").string()),
                        Catch::Matchers::ContainsSubstring("missing.bin"));
}

TEST_CASE("the standard protocol reports clean and robust accuracy") {
    RunConfig cfg = base_config();
    cfg.epochs = 5;
    TrainResult result = train(cfg);
    ProtocolResult eval =
        standard_protocol(result.encoder, result.dataset, 1, cfg.attack.config);
    REQUIRE(eval.clean_accuracy >= 0.0);
    REQUIRE(eval.clean_accuracy <= 1.0);
    REQUIRE(eval.robust_accuracy <= eval.clean_accuracy + 1e-12);
    REQUIRE(eval.probe.trained_epochs == 60);
}

TEST_CASE("ablation over p trains every cell and records both endpoints") {
    RunConfig cfg = base_config();
    cfg.epochs = 2;
    AblationTable table = run_ablation(cfg, "p", {0.0, 1.0});
    REQUIRE(table.rows.size() == 2);
    REQUIRE(table.rows[0].value == 0.0);
    REQUIRE(table.rows[1].value == 1.0);
    for (const AblationRow& r : table.rows) {
        REQUIRE(r.error.empty());
        REQUIRE(r.clean_accuracy >= 0.0);
        REQUIRE(r.robust_accuracy >= 0.0);
    }
    std::string csv = table.to_csv();
    REQUIRE(csv.rfind("p,clean_accuracy,robust_accuracy,error", 0) == 0);
}

TEST_CASE("a failing ablation cell does not abort the sweep") {
    RunConfig cfg = base_config();
    cfg.epochs = 1;
    AblationTable table = run_ablation(cfg, "K", {1.5, 2.0});
    REQUIRE(table.rows.size() == 2);
    REQUIRE_FALSE(table.rows[0].error.empty());
    REQUIRE(table.rows[1].error.empty());
    REQUIRE_THROWS_AS(run_ablation(cfg, "temperature", {0.5}), std::invalid_argument);
}

TEST_CASE("configs with unknown or missing keys are rejected by name") {
    nlohmann::json j = run_config_to_json(base_config());
    j["epochz"] = 3;
    REQUIRE_THROWS_WITH(parse_run_config(j),
                        Catch::Matchers::ContainsSubstring("epochz"));
    j.erase("epochz");
    j.erase("epochs");
    REQUIRE_THROWS_WITH(parse_run_config(j),
                        Catch::Matchers::ContainsSubstring("epochs"));
}

TEST_CASE("the canonical config serialization round-trips through the parser") {
    RunConfig cfg = base_config();
    cfg.loss.temperature = 0.4;
    cfg.num_clusters = 3;
    RunConfig back = parse_run_config(run_config_to_json(cfg));
    REQUIRE(back.loss.temperature == 0.4);
    REQUIRE(back.num_clusters == 3);
    REQUIRE(back.batch_size == cfg.batch_size);
    REQUIRE(back.dataset.n == cfg.dataset.n);
    REQUIRE(back.attack.config.epsilon == cfg.attack.config.epsilon);
    REQUIRE(run_config_to_json(back) == run_config_to_json(cfg));
}

TEST_CASE("mismatched backbone input width is a hard error") {
    RunConfig cfg = base_config();
    cfg.backbone_layout = {5, 8};
    REQUIRE_THROWS_WITH(train(cfg), Catch::Matchers::ContainsSubstring("input width"));
}
