#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "swaro/adversarial.hpp"
#include "swaro/data.hpp"

using namespace swaro;

namespace {

struct Fixture {
    Dataset ds = gen_blobs(24, 3, 4, 0.5, 101);
    EncoderParams params = init_params({{4, 8}, {8, 6}}, 102);
    LossConfig loss;
    AugmentationSpec spec;

    PairBatch batch(std::uint64_t seed = 7) {
        std::vector<std::size_t> idx{0, 1, 2, 3, 4, 5, 6, 7};
        AugmentationSpec s;
        s.noise_std = 0.02;
        return make_pair_batch(ds, idx, s, seed);
    }
};

double scaled_norm(const Tensor& delta, const Tensor& range, NormKind norm) {
    Tensor u = delta;
    for (std::size_t i = 0; i < u.size(); ++i) u[i] /= range[i];
    switch (norm) {
        case NormKind::Linf: return linf_norm(u);
        case NormKind::L2: return l2_norm(u);
        case NormKind::L1: return l1_norm(u);
    }
    return 0.0;
}

LinearProbe random_probe(const EncoderParams& params, std::size_t classes,
                         std::uint64_t seed) {
    auto rng = make_rng(seed, 0);
    LinearProbe probe;
    probe.weight = random_normal({params.backbone_dim(), classes}, 0.0, 0.5, rng);
    probe.bias = Tensor::zeros({classes});
    return probe;
}

double probe_cross_entropy(const EncoderParams& params, const LinearProbe& probe,
                           const Tensor& x, std::size_t y) {
    Tensor logits = probe_logits(params, probe, x);
    double m = logits[0];
    for (double v : logits.data()) m = std::max(m, v);
    double lse = 0.0;
    for (double v : logits.data()) lse += std::exp(v - m);
    return m + std::log(lse) - logits[y];
}

}  // namespace

TEST_CASE("epsilon zero leaves the input bit-identical") {
    Fixture fx;
    AttackConfig atk;
    atk.epsilon = 0.0;
    LinearProbe probe = random_probe(fx.params, 3, 1);
    Tensor x = fx.ds.features[0];
    Tensor x_adv = supervised_attack(x, std::size_t(fx.ds.labels[0]), fx.params, probe,
                                     atk, fx.ds.lower_bound, fx.ds.upper_bound, 5);
    for (std::size_t i = 0; i < x.size(); ++i) REQUIRE(x_adv[i] == x[i]);
}

TEST_CASE("flipping beta negates a single deterministic step exactly") {
    Fixture fx;
    PairBatch batch = fx.batch();
    Tensor context = batch_view_embeddings(fx.params, batch);
    AttackConfig atk;
    atk.iters = 1;
    atk.random_start = false;
    atk.clamp_to_domain = false;  // keep the ball projection symmetric
    Tensor dpos = perturb_pair(batch.entries[0].view1, context, 0, 8, +1, fx.params,
                               fx.loss, atk, fx.ds.lower_bound, fx.ds.upper_bound, 3);
    Tensor dneg = perturb_pair(batch.entries[0].view1, context, 0, 8, -1, fx.params,
                               fx.loss, atk, fx.ds.lower_bound, fx.ds.upper_bound, 3);
    for (std::size_t i = 0; i < dpos.size(); ++i) REQUIRE(dpos[i] == -dneg[i]);
}

TEST_CASE("default budget keeps the perturbation inside the ball") {
    Fixture fx;
    PairBatch batch = fx.batch();
    Tensor context = batch_view_embeddings(fx.params, batch);
    Tensor range = range_of(fx.ds.lower_bound, fx.ds.upper_bound);
    AttackConfig atk;  // eps 8/255, eta 1/255, 7 iterations
    Tensor d = perturb_pair(batch.entries[1].view1, context, 1, 9, +1, fx.params,
                            fx.loss, atk, fx.ds.lower_bound, fx.ds.upper_bound, 5);
    REQUIRE(scaled_norm(d, range, NormKind::Linf) <= 8.0 / 255.0 + 1e-12);
}

TEST_CASE("positive-pair perturbation mostly increases the pair loss") {
    Fixture fx;
    PairBatch batch = fx.batch();
    Tensor context = batch_view_embeddings(fx.params, batch);
    AttackConfig atk;
    atk.random_start = false;
    atk.epsilon = 0.05;
    atk.eta = 0.01;
    std::size_t increased = 0;
    const std::size_t B = batch.size();
    for (std::size_t i = 0; i < B; ++i) {
        AttackTranscript tr;
        perturb_pair(batch.entries[i].view1, context, i, B + i, +1, fx.params, fx.loss,
                     atk, fx.ds.lower_bound, fx.ds.upper_bound, 11 + i, &tr);
        REQUIRE(tr.iteration_loss.size() == atk.iters);
        if (tr.iteration_loss.back() >= tr.iteration_loss.front()) ++increased;
    }
    REQUIRE(increased >= B - 1);
}

TEST_CASE("the cluster-guided attack with identity pairing reduces to the instance attack") {
    Fixture fx;
    AttackConfig atk;
    atk.random_start = false;

    PairBatch instance = fx.batch();
    instance_perturb_batch(instance, fx.params, fx.loss, atk, fx.ds.lower_bound,
                           fx.ds.upper_bound, 21);

    PairBatch guided = fx.batch();
    guided.permuted = true;  // identity sigma kept on purpose
    for (PairEntry& e : guided.entries) { e.pseudo1 = 0; e.pseudo2 = 0; }
    swaro_perturb_batch(guided, fx.params, fx.loss, atk, fx.ds.lower_bound,
                        fx.ds.upper_bound, 21);

    for (std::size_t i = 0; i < instance.size(); ++i) {
        REQUIRE(guided.entries[i].beta == +1);
        for (std::size_t c = 0; c < 4; ++c)
            REQUIRE(guided.entries[i].delta[c] == instance.entries[i].delta[c]);
    }
}

TEST_CASE("permute and reorder round-trip preserves pair provenance") {
    Fixture fx;
    PairBatch batch = fx.batch();
    std::vector<std::size_t> sources;
    for (const PairEntry& e : batch.entries) sources.push_back(e.source);

    permute_pairs(batch, 31);
    REQUIRE(batch.permuted);
    REQUIRE(batch.sigma_is_bijection());
    REQUIRE_THROWS_AS(permute_pairs(batch, 32), std::invalid_argument);

    for (PairEntry& e : batch.entries) { e.pseudo1 = 1; e.pseudo2 = 1; }
    AttackConfig atk;
    atk.iters = 1;
    swaro_perturb_batch(batch, fx.params, fx.loss, atk, fx.ds.lower_bound,
                        fx.ds.upper_bound, 33);
    reorder_to_original(batch);

    REQUIRE_FALSE(batch.permuted);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        REQUIRE(batch.sigma[i] == i);
        REQUIRE(batch.entries[i].source == sources[i]);
        REQUIRE(batch.entries[i].delta.size() == 4);
    }
    REQUIRE_THROWS_AS(reorder_to_original(batch), std::invalid_argument);
}

TEST_CASE("mixed pseudo-labels produce both indicator signs") {
    REQUIRE(pair_indicator(2, 2).beta == +1);
    REQUIRE(pair_indicator(2, 3).beta == -1);
}

TEST_CASE("fgsm equals a single full-size bim step") {
    Fixture fx;
    LinearProbe probe = random_probe(fx.params, 3, 2);
    Tensor x = fx.ds.features[2];
    auto y = std::size_t(fx.ds.labels[2]);

    AttackConfig fgsm;
    fgsm.method = AttackMethod::FGSM;
    fgsm.epsilon = 0.03;
    AttackConfig bim;
    bim.method = AttackMethod::BIM;
    bim.epsilon = 0.03;
    bim.eta = 0.03;
    bim.iters = 1;

    Tensor a = supervised_attack(x, y, fx.params, probe, fgsm, fx.ds.lower_bound,
                                 fx.ds.upper_bound, 41);
    Tensor b = supervised_attack(x, y, fx.params, probe, bim, fx.ds.lower_bound,
                                 fx.ds.upper_bound, 41);
    for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(a[i] == b[i]);
}

TEST_CASE("untargeted pgd increases the cross entropy on nearly every sample") {
    Fixture fx;
    Dataset ds = gen_blobs(200, 3, 4, 0.5, 103);
    LinearProbe probe = random_probe(fx.params, 3, 3);
    AttackConfig atk;
    atk.epsilon = 0.05;
    atk.eta = 0.0125;
    std::size_t increased = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        auto y = std::size_t(ds.labels[i]);
        double before = probe_cross_entropy(fx.params, probe, ds.features[i], y);
        Tensor x_adv = supervised_attack(ds.features[i], y, fx.params, probe, atk,
                                         ds.lower_bound, ds.upper_bound, 50 + i);
        double after = probe_cross_entropy(fx.params, probe, x_adv, y);
        if (after >= before) ++increased;
    }
    REQUIRE(double(increased) / double(ds.size()) >= 0.95);
}

TEST_CASE("targeted attacks push the target logit up on most samples") {
    Fixture fx;
    Dataset ds = gen_blobs(100, 3, 4, 0.5, 104);
    LinearProbe probe = random_probe(fx.params, 3, 4);
    AttackConfig atk;
    atk.targeted = true;
    atk.target_label = 1;
    atk.epsilon = 0.05;
    atk.eta = 0.0125;
    std::size_t improved = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        Tensor before = probe_logits(fx.params, probe, ds.features[i]);
        Tensor x_adv = supervised_attack(ds.features[i], 1, fx.params, probe, atk,
                                         ds.lower_bound, ds.upper_bound, 60 + i);
        Tensor after = probe_logits(fx.params, probe, x_adv);
        // target-class margin over the best other logit
        auto margin = [](const Tensor& l) {
            double other = std::max(l[0], l[2]);
            return l[1] - other;
        };
        if (margin(after) >= margin(before)) ++improved;
    }
    REQUIRE(improved >= 90);
}

TEST_CASE("every norm keeps its attack feasible and inside the domain") {
    Fixture fx;
    Dataset ds = gen_overlap_blobs(30, 5, 3.0, 105);
    EncoderParams params = init_params({{5, 8}, {8, 4}}, 106);
    LinearProbe probe = random_probe(params, 2, 5);
    Tensor range = range_of(ds.lower_bound, ds.upper_bound);
    for (NormKind norm : {NormKind::Linf, NormKind::L2, NormKind::L1}) {
        for (AttackMethod m : {AttackMethod::FGSM, AttackMethod::BIM, AttackMethod::PGD,
                               AttackMethod::Jitter}) {
            AttackConfig atk;
            atk.method = m;
            atk.norm = norm;
            atk.epsilon = 0.1;
            atk.eta = 0.03;
            atk.iters = 4;
            for (std::size_t i = 0; i < 10; ++i) {
                Tensor x_adv = supervised_attack(ds.features[i],
                                                 std::size_t(ds.labels[i]), params,
                                                 probe, atk, ds.lower_bound,
                                                 ds.upper_bound, 70 + i);
                Tensor delta = x_adv;
                for (std::size_t c = 0; c < delta.size(); ++c)
                    delta[c] -= ds.features[i][c];
                REQUIRE(scaled_norm(delta, range, norm) <= atk.epsilon + 1e-9);
                for (std::size_t c = 0; c < x_adv.size(); ++c) {
                    REQUIRE(x_adv[c] >= ds.lower_bound[c] - 1e-12);
                    REQUIRE(x_adv[c] <= ds.upper_bound[c] + 1e-12);
                }
            }
        }
    }
}

TEST_CASE("l2 projection lands on the sphere when the step overshoots") {
    Tensor range = Tensor::full({4}, 1.0);
    Tensor delta = Tensor::vector({0.5, -0.5, 0.5, -0.5});  // l2 = 1
    project_norm_ball(delta, NormKind::L2, 0.1, range);
    REQUIRE(l2_norm(delta) == Catch::Approx(0.1).margin(1e-9));
}

TEST_CASE("l1 projection matches the analytic simplex solution") {
    Tensor range = Tensor::full({3}, 1.0);
    Tensor delta = Tensor::vector({0.6, -0.3, 0.1});  // l1 = 1
    project_norm_ball(delta, NormKind::L1, 0.5, range);
    // soft-threshold with theta = 0.2 on |u| = (0.6, 0.3, 0.1)
    REQUIRE(delta[0] == Catch::Approx(0.4).margin(1e-9));
    REQUIRE(delta[1] == Catch::Approx(-0.1).margin(1e-9));
    REQUIRE(delta[2] == Catch::Approx(0.0).margin(1e-9));
    REQUIRE(l1_norm(delta) == Catch::Approx(0.5).margin(1e-9));
}

TEST_CASE("attacks never mutate the encoder parameters") {
    Fixture fx;
    EncoderParams before = fx.params;
    PairBatch batch = fx.batch();
    AttackConfig atk;
    instance_perturb_batch(batch, fx.params, fx.loss, atk, fx.ds.lower_bound,
                           fx.ds.upper_bound, 80);
    LinearProbe probe = random_probe(fx.params, 3, 6);
    supervised_attack(fx.ds.features[0], 0, fx.params, probe, atk, fx.ds.lower_bound,
                      fx.ds.upper_bound, 81);
    for (std::size_t l = 0; l < before.backbone.size(); ++l)
        for (std::size_t i = 0; i < before.backbone[l].weight.size(); ++i)
            REQUIRE(fx.params.backbone[l].weight[i] == before.backbone[l].weight[i]);
    for (std::size_t l = 0; l < 2; ++l)
        for (std::size_t i = 0; i < before.head[l].weight.size(); ++i)
            REQUIRE(fx.params.head[l].weight[i] == before.head[l].weight[i]);
}

TEST_CASE("attacks are deterministic given the seed") {
    Fixture fx;
    LinearProbe probe = random_probe(fx.params, 3, 7);
    AttackConfig atk;  // pgd with random start
    Tensor a = supervised_attack(fx.ds.features[3], 0, fx.params, probe, atk,
                                 fx.ds.lower_bound, fx.ds.upper_bound, 90);
    Tensor b = supervised_attack(fx.ds.features[3], 0, fx.params, probe, atk,
                                 fx.ds.lower_bound, fx.ds.upper_bound, 90);
    Tensor c = supervised_attack(fx.ds.features[3], 0, fx.params, probe, atk,
                                 fx.ds.lower_bound, fx.ds.upper_bound, 91);
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i] == b[i]);
        if (a[i] != c[i]) differs = true;
    }
    REQUIRE(differs);
}

TEST_CASE("invalid attack configurations are rejected") {
    AttackConfig atk;
    atk.epsilon = -0.1;
    REQUIRE_THROWS_AS(atk.validate(), std::invalid_argument);
    atk = AttackConfig{};
    atk.eta = 0.0;
    REQUIRE_THROWS_AS(atk.validate(), std::invalid_argument);
    atk = AttackConfig{};
    atk.targeted = true;
    REQUIRE_THROWS_AS(atk.validate(), std::invalid_argument);
    REQUIRE_THROWS_AS(norm_from_string("l3"), std::invalid_argument);
    REQUIRE_THROWS_AS(method_from_string("cw"), std::invalid_argument);
}
