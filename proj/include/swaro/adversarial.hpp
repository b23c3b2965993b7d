#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "swaro/clustering.hpp"
#include "swaro/contrastive.hpp"
#include "swaro/data.hpp"
#include "swaro/encoder.hpp"
#include "swaro/rng.hpp"
#include "swaro/tape.hpp"
#include "swaro/tensor.hpp"

namespace swaro {

enum class NormKind { Linf, L2, L1 };
enum class AttackMethod { FGSM, BIM, PGD, Jitter };

inline NormKind norm_from_string(const std::string& s) {
    if (s == "linf") return NormKind::Linf;
    if (s == "l2") return NormKind::L2;
    if (s == "l1") return NormKind::L1;
    throw std::invalid_argument("unknown norm '" + s + "' (expected linf|l2|l1)");
}

inline AttackMethod method_from_string(const std::string& s) {
    if (s == "fgsm" || s == "FGSM") return AttackMethod::FGSM;
    if (s == "bim" || s == "BIM") return AttackMethod::BIM;
    if (s == "pgd" || s == "PGD") return AttackMethod::PGD;
    if (s == "jitter" || s == "Jitter") return AttackMethod::Jitter;
    throw std::invalid_argument("unknown attack method '" + s + "'");
}

inline const char* to_string(NormKind n) {
    switch (n) {
        case NormKind::Linf: return "linf";
        case NormKind::L2: return "l2";
        case NormKind::L1: return "l1";
    }
    return "?";
}

inline const char* to_string(AttackMethod m) {
    switch (m) {
        case AttackMethod::FGSM: return "fgsm";
        case AttackMethod::BIM: return "bim";
        case AttackMethod::PGD: return "pgd";
        case AttackMethod::Jitter: return "jitter";
    }
    return "?";
}

/// Attack budget. epsilon and eta are fractions of the per-feature domain
/// range (so 8/255 on [0,1] data is the usual pixel budget); norm-ball
/// membership is measured in those range-scaled coordinates.
struct AttackConfig {
    AttackMethod method = AttackMethod::PGD;
    NormKind norm = NormKind::Linf;
    double epsilon = 8.0 / 255.0;
    double eta = 1.0 / 255.0;
    std::size_t iters = 7;
    bool random_start = true;
    bool clamp_to_domain = true;
    bool targeted = false;
    int target_label = -1;
    double jitter_noise_std = 0.1;

    void validate() const {
        if (epsilon < 0.0) throw std::invalid_argument("AttackConfig: epsilon < 0");
        if (eta <= 0.0) throw std::invalid_argument("AttackConfig: eta <= 0");
        if (iters < 1) throw std::invalid_argument("AttackConfig: iters < 1");
        if (targeted && target_label < 0)
            throw std::invalid_argument("AttackConfig: targeted attack needs a target label");
    }
};

struct PairIndicator {
    int beta;  // +1 same pseudo-label, -1 otherwise
};

inline PairIndicator pair_indicator(std::size_t y1, std::size_t y2) {
    return {y1 == y2 ? +1 : -1};
}

/// Optional per-call attack trace for debugging dumps.
struct AttackTranscript {
    std::vector<double> iteration_loss;
    double final_linf = 0.0;
    double final_l2 = 0.0;
};

namespace detail {

// Projection of |u| onto the simplex of radius eps (Duchi et al. style),
// used for the L1 ball.
inline void project_l1(std::vector<double>& u, double eps) {
    double norm = 0.0;
    for (double v : u) norm += std::fabs(v);
    if (norm <= eps) return;
    std::vector<double> mags(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) mags[i] = std::fabs(u[i]);
    std::vector<double> sorted = mags;
    std::sort(sorted.begin(), sorted.end(), std::greater<double>());
    double cumsum = 0.0, theta = 0.0;
    for (std::size_t j = 0; j < sorted.size(); ++j) {
        cumsum += sorted[j];
        double t = (cumsum - eps) / double(j + 1);
        if (sorted[j] - t > 0.0)
            theta = t;
        else
            break;
    }
    for (std::size_t i = 0; i < u.size(); ++i) {
        double w = std::max(mags[i] - theta, 0.0);
        u[i] = u[i] >= 0.0 ? w : -w;
    }
}

}  // namespace detail

/// Project delta onto the eps norm ball in range-scaled coordinates.
inline void project_norm_ball(Tensor& delta, NormKind norm, double eps,
                              const Tensor& range) {
    std::size_t d = delta.size();
    std::vector<double> u(d);
    for (std::size_t i = 0; i < d; ++i) u[i] = delta[i] / range[i];
    switch (norm) {
        case NormKind::Linf:
            for (double& v : u) v = std::clamp(v, -eps, eps);
            break;
        case NormKind::L2: {
            double n2 = std::sqrt(std::inner_product(u.begin(), u.end(), u.begin(), 0.0));
            if (n2 > eps) {
                double s = eps / n2;
                for (double& v : u) v *= s;
            }
            break;
        }
        case NormKind::L1:
            detail::project_l1(u, eps);
            break;
    }
    for (std::size_t i = 0; i < d; ++i) delta[i] = u[i] * range[i];
}

/// Keep view + delta inside the data domain.
inline void clamp_delta_to_domain(Tensor& delta, const Tensor& x, const Tensor& lo,
                                  const Tensor& hi) {
    for (std::size_t i = 0; i < delta.size(); ++i)
        delta[i] = std::clamp(delta[i], lo[i] - x[i], hi[i] - x[i]);
}

inline Tensor range_of(const Tensor& lo, const Tensor& hi) {
    Tensor r = Tensor::zeros({lo.size()});
    for (std::size_t i = 0; i < r.size(); ++i) {
        r[i] = hi[i] - lo[i];
        if (r[i] <= 0.0) r[i] = 1.0;  // degenerate constant feature
    }
    return r;
}

inline Tensor random_start_delta(NormKind norm, double eps, const Tensor& range,
                                 std::mt19937_64& rng) {
    Tensor delta = Tensor::zeros({range.size()});
    std::uniform_real_distribution<double> u(-eps, eps);
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = u(rng) * range[i];
    project_norm_ball(delta, norm, eps, range);
    return delta;
}

/// One-step size in input units for a given coordinate.
inline Tensor scaled_step(double step, const Tensor& range) {
    Tensor s = Tensor::zeros({range.size()});
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = step * range[i];
    return s;
}

inline int sign_of(double v) { return v > 0.0 ? 1 : (v < 0.0 ? -1 : 0); }

/// Signed projected gradient iterations on the contrastive loss of a single
/// (anchor, target) pair, with the whole batch as negatives. beta = +1
/// ascends (positive pair), beta = -1 descends (negative pair). Gradients
/// flow only through delta; the encoder and context embeddings are frozen.
///
/// context_embeddings holds the raw head embeddings of all views in the
/// batch, one row per view; anchor_row's stale row is replaced by the live
/// embedding of view1 + delta, and target_row marks the pair partner.
inline Tensor perturb_pair(const Tensor& view1, const Tensor& context_embeddings,
                           std::size_t anchor_row, std::size_t target_row, int beta,
                           const EncoderParams& params, const LossConfig& loss_cfg,
                           const AttackConfig& atk, const Tensor& lo, const Tensor& hi,
                           std::uint64_t seed, AttackTranscript* transcript = nullptr) {
    atk.validate();
    if (beta != 1 && beta != -1)
        throw std::invalid_argument("perturb_pair: beta must be +1 or -1");
    if (anchor_row == target_row)
        throw std::invalid_argument("perturb_pair: anchor and target coincide");

    std::size_t n_views = context_embeddings.rows();
    std::size_t d_emb = context_embeddings.cols();
    Tensor range = range_of(lo, hi);

    // context without the anchor's stale row; anchor becomes row 0
    std::vector<double> rest;
    rest.reserve((n_views - 1) * d_emb);
    std::size_t target_pos = 0;
    for (std::size_t r = 0, out = 1; r < n_views; ++r) {
        if (r == anchor_row) continue;
        if (r == target_row) target_pos = out;
        const double* row = context_embeddings.data().data() + r * d_emb;
        rest.insert(rest.end(), row, row + d_emb);
        ++out;
    }
    Tensor rest_mat = Tensor::matrix(n_views - 1, d_emb, std::move(rest));

    auto rng = make_rng(seed, /*stream=*/0xA77ACC);
    Tensor delta = atk.random_start
                       ? random_start_delta(atk.norm, atk.epsilon, range, rng)
                       : Tensor::zeros({view1.size()});
    if (atk.clamp_to_domain) clamp_delta_to_domain(delta, view1, lo, hi);

    Tensor eta_abs = scaled_step(atk.eta, range);

    for (std::size_t t = 0; t < atk.iters; ++t) {
        Tape tape;
        EncoderNodes enc = attach_params(tape, params);
        Tape::Id delta_id = tape.input(delta);
        Tape::Id x_adv = tape.add(tape.constant(Tensor::matrix(1, view1.size(), view1.data())),
                                  tape.reshape(delta_id, {1, view1.size()}));
        Tape::Id anchor_emb = encode(tape, enc, x_adv).embedding;
        Tape::Id all_emb = tape.concat_rows({anchor_emb, tape.constant(rest_mat)});
        Tape::Id loss = ntxent(tape, all_emb, 0, target_pos, loss_cfg);

        if (transcript) transcript->iteration_loss.push_back(tape.value(loss).item());

        Tensor grad = tape.backward(loss)[delta_id];
        if (!grad.all_finite())
            throw std::runtime_error("perturb_pair: non-finite gradient at iteration " +
                                     std::to_string(t));
        for (std::size_t i = 0; i < delta.size(); ++i)
            delta[i] += eta_abs[i] * double(beta * sign_of(grad[i]));
        project_norm_ball(delta, atk.norm, atk.epsilon, range);
        if (atk.clamp_to_domain) clamp_delta_to_domain(delta, view1, lo, hi);
    }

    if (transcript) {
        transcript->final_linf = linf_norm(delta);
        transcript->final_l2 = l2_norm(delta);
    }
    return delta;
}

/// Shuffle the view2 partners: sigma becomes a uniformly random permutation.
inline void permute_pairs(PairBatch& batch, std::uint64_t seed) {
    if (batch.permuted)
        throw std::invalid_argument("permute_pairs: batch is already permuted");
    for (std::size_t i = 0; i < batch.sigma.size(); ++i)
        if (batch.sigma[i] != i)
            throw std::invalid_argument("permute_pairs: sigma is not the identity");
    auto rng = make_rng(seed, /*stream=*/0x5164A);
    std::shuffle(batch.sigma.begin(), batch.sigma.end(), rng);
    batch.permuted = true;
}

/// Restore original pairings after attack generation; the computed deltas
/// stay with their anchors.
inline void reorder_to_original(PairBatch& batch) {
    if (!batch.permuted)
        throw std::invalid_argument("reorder_to_original: batch is not permuted");
    for (const PairEntry& e : batch.entries)
        if (e.delta.size() != e.view1.size())
            throw std::invalid_argument("reorder_to_original: missing delta");
    for (std::size_t i = 0; i < batch.sigma.size(); ++i) batch.sigma[i] = i;
    batch.permuted = false;
}

/// Raw head embeddings of all views in the batch: rows 0..B-1 are the
/// (clean) view1s, rows B..2B-1 the view2s.
inline Tensor batch_view_embeddings(const EncoderParams& params, const PairBatch& batch) {
    std::size_t B = batch.size();
    std::size_t d = batch.entries[0].view1.size();
    std::vector<double> data;
    data.reserve(2 * B * d);
    for (const PairEntry& e : batch.entries)
        data.insert(data.end(), e.view1.data().begin(), e.view1.data().end());
    for (const PairEntry& e : batch.entries)
        data.insert(data.end(), e.view2.data().begin(), e.view2.data().end());
    return encode_value(params, Tensor::matrix(2 * B, d, std::move(data)));
}

/// Cluster-guided attack over a permuted batch: assigns the indicator from
/// the pseudo-labels and runs the signed perturbation per pair against the
/// permuted partner. Expects pseudo-labels already stamped on the entries.
inline void swaro_perturb_batch(PairBatch& batch, const EncoderParams& params,
                                const LossConfig& loss_cfg, const AttackConfig& atk,
                                const Tensor& lo, const Tensor& hi, std::uint64_t seed) {
    if (!batch.permuted)
        throw std::invalid_argument("swaro_perturb_batch: batch must be permuted first");
    std::size_t B = batch.size();
    Tensor context = batch_view_embeddings(params, batch);
    for (std::size_t i = 0; i < B; ++i) {
        PairEntry& e = batch.entries[i];
        const PairEntry& partner = batch.entries[batch.sigma[i]];
        if (e.pseudo1 < 0 || partner.pseudo2 < 0)
            throw std::invalid_argument("swaro_perturb_batch: pseudo-labels unset");
        e.beta = pair_indicator(std::size_t(e.pseudo1), std::size_t(partner.pseudo2)).beta;
        e.delta = perturb_pair(e.view1, context, /*anchor_row=*/i,
                               /*target_row=*/B + batch.sigma[i], e.beta, params,
                               loss_cfg, atk, lo, hi, derive_seed(seed, i));
    }
}

/// Instance-wise untargeted attack: beta fixed to +1, partner is the pair's
/// own second view (no permutation).
inline void instance_perturb_batch(PairBatch& batch, const EncoderParams& params,
                                   const LossConfig& loss_cfg, const AttackConfig& atk,
                                   const Tensor& lo, const Tensor& hi,
                                   std::uint64_t seed) {
    if (batch.permuted)
        throw std::invalid_argument("instance_perturb_batch: batch must be unpermuted");
    std::size_t B = batch.size();
    Tensor context = batch_view_embeddings(params, batch);
    for (std::size_t i = 0; i < B; ++i) {
        PairEntry& e = batch.entries[i];
        e.beta = +1;
        e.delta = perturb_pair(e.view1, context, /*anchor_row=*/i, /*target_row=*/B + i,
                               +1, params, loss_cfg, atk, lo, hi, derive_seed(seed, i));
    }
}

/// Linear classification head over the frozen backbone features.
struct LinearProbe {
    Tensor weight;  // backbone_dim x classes
    Tensor bias;    // classes
    std::size_t trained_epochs = 0;
    double final_loss = 0.0;

    std::size_t num_classes() const { return weight.cols(); }
};

inline Tensor probe_logits(const EncoderParams& params, const LinearProbe& probe,
                           const Tensor& x_row) {
    Tensor f = backbone_value(params, Tensor::matrix(1, x_row.size(), x_row.data()));
    Tensor logits = Tensor::zeros({probe.num_classes()});
    for (std::size_t c = 0; c < probe.num_classes(); ++c) {
        double s = probe.bias[c];
        for (std::size_t j = 0; j < f.size(); ++j) s += f[j] * probe.weight.at(j, c);
        logits[c] = s;
    }
    return logits;
}

namespace detail {

inline Tape::Id encode_intermediate(Tape& tape, const EncoderNodes& enc, Tape::Id x) {
    return encode(tape, enc, x).backbone_features;
}

// Tape program computing the supervised attack loss at x + delta. Returns
// the scalar to ASCEND; targeted attacks flip the sign so ascending moves
// toward the target class.
inline Tape::Id attack_loss(Tape& tape, const EncoderNodes& enc, Tape::Id probe_w,
                            Tape::Id probe_b, Tape::Id x_adv, std::size_t label,
                            bool targeted, AttackMethod method, const Tensor* jitter_noise) {
    Tape::Id features = encode_intermediate(tape, enc, x_adv);
    Tape::Id logits = tape.bias_add(tape.matmul(features, probe_w), probe_b);
    Tape::Id loss;
    if (method == AttackMethod::Jitter) {
        // scale-invariant squared error against the one-hot target with
        // additive logit noise
        Tape::Id flat = tape.reshape(logits, {tape.value(logits).size()});
        Tape::Id scale = tape.add(tape.maxabs(flat), tape.constant(Tensor::scalar(1e-12)));
        Tape::Id normed = tape.div(flat, scale);
        Tape::Id noisy = tape.add(normed, tape.constant(*jitter_noise));
        Tensor onehot = Tensor::zeros({tape.value(flat).size()});
        onehot[label] = 1.0;
        Tape::Id diff = tape.sub(noisy, tape.constant(onehot));
        loss = tape.sum(tape.mul(diff, diff));
    } else {
        loss = tape.sum(tape.cross_entropy_rows(logits, {label}));
    }
    return targeted ? tape.neg(loss) : loss;
}

}  // namespace detail

/// Supervised evaluation attack suite. For untargeted attacks y is the true
/// label and the loss is ascended; for targeted attacks y is the target
/// class and the loss is descended (driving the prediction toward it).
inline Tensor supervised_attack(const Tensor& x, std::size_t y,
                                const EncoderParams& params, const LinearProbe& probe,
                                const AttackConfig& atk, const Tensor& lo,
                                const Tensor& hi, std::uint64_t seed,
                                AttackTranscript* transcript = nullptr) {
    atk.validate();
    if (y >= probe.num_classes())
        throw std::invalid_argument("supervised_attack: label out of range");

    Tensor range = range_of(lo, hi);
    auto rng = make_rng(seed, /*stream=*/0x5A77);

    bool random_start =
        (atk.method == AttackMethod::PGD || atk.method == AttackMethod::Jitter) &&
        atk.random_start;
    std::size_t iters =
        atk.method == AttackMethod::FGSM ? 1 : atk.iters;
    double step = atk.method == AttackMethod::FGSM ? atk.epsilon : atk.eta;

    Tensor delta = random_start ? random_start_delta(atk.norm, atk.epsilon, range, rng)
                                : Tensor::zeros({x.size()});
    if (atk.clamp_to_domain) clamp_delta_to_domain(delta, x, lo, hi);
    Tensor step_abs = scaled_step(step, range);

    for (std::size_t t = 0; t < iters; ++t) {
        Tensor jitter_noise;
        if (atk.method == AttackMethod::Jitter)
            jitter_noise = random_normal({probe.num_classes()}, 0.0,
                                         atk.jitter_noise_std, rng);

        Tape tape;
        EncoderNodes enc = attach_params(tape, params);
        Tape::Id w = tape.constant(probe.weight);
        Tape::Id b = tape.constant(probe.bias);
        Tape::Id delta_id = tape.input(delta);
        Tape::Id x_adv = tape.add(tape.constant(Tensor::matrix(1, x.size(), x.data())),
                                  tape.reshape(delta_id, {1, x.size()}));
        Tape::Id loss = detail::attack_loss(tape, enc, w, b, x_adv, y, atk.targeted,
                                            atk.method, &jitter_noise);
        if (transcript) transcript->iteration_loss.push_back(tape.value(loss).item());

        Tensor grad = tape.backward(loss)[delta_id];
        if (!grad.all_finite())
            throw std::runtime_error("supervised_attack: non-finite gradient");
        for (std::size_t i = 0; i < delta.size(); ++i)
            delta[i] += step_abs[i] * double(sign_of(grad[i]));
        project_norm_ball(delta, atk.norm, atk.epsilon, range);
        if (atk.clamp_to_domain) clamp_delta_to_domain(delta, x, lo, hi);
    }

    Tensor x_adv = x;
    for (std::size_t i = 0; i < x.size(); ++i) x_adv[i] += delta[i];
    if (transcript) {
        transcript->final_linf = linf_norm(delta);
        transcript->final_l2 = l2_norm(delta);
    }
    return x_adv;
}

}  // namespace swaro
