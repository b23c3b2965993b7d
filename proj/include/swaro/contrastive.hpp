#pragma once

#include <stdexcept>
#include <vector>

#include "swaro/data.hpp"
#include "swaro/encoder.hpp"
#include "swaro/tape.hpp"
#include "swaro/tensor.hpp"

namespace swaro {

enum class Denominator {
    Eq1NegativesOnly,  // denominator excludes the positive (j != i, k)
    IncludePositive,   // SimCLR convention (j != i)
};

struct LossConfig {
    double temperature = 0.5;
    Denominator denominator = Denominator::Eq1NegativesOnly;

    void validate() const {
        if (temperature <= 0.0)
            throw std::invalid_argument("LossConfig: temperature must be > 0");
    }
};

/// Cosine similarity with the stabilized norm, so degenerate zero vectors
/// still produce a defined value.
inline double cosine_sim(const Tensor& u, const Tensor& v) {
    if (u.shape() != v.shape())
        throw std::invalid_argument("cosine_sim: shape mismatch " + u.shape_string() +
                                    " vs " + v.shape_string());
    double nu = std::sqrt(dot(u, u) + kNormEpsilon);
    double nv = std::sqrt(dot(v, v) + kNormEpsilon);
    return dot(u, v) / (nu * nv);
}

/// Pairwise cosine similarity matrix of the rows of an embedding matrix.
inline Tape::Id similarity_matrix(Tape& tape, Tape::Id embeddings) {
    Tape::Id zn = tape.rows_normalize(embeddings);
    return tape.matmul(zn, tape.transpose(zn));
}

/// Per-anchor NT-XENT losses for a list of (anchor, positive) row pairs over
/// a shared embedding matrix. Returns a vector node, one loss per pair.
inline Tape::Id ntxent_losses(Tape& tape, Tape::Id embeddings,
                              const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
                              const LossConfig& cfg) {
    cfg.validate();
    const Tensor& Z = tape.value(embeddings);
    std::size_t n = Z.rows();
    for (auto [i, k] : pairs) {
        if (i == k) throw std::invalid_argument("ntxent: anchor == positive");
        if (i >= n || k >= n) throw std::invalid_argument("ntxent: index out of range");
        std::size_t denom_terms = cfg.denominator == Denominator::Eq1NegativesOnly
                                      ? n - 2   // j != i, k
                                      : n - 1;  // j != i
        if (denom_terms == 0)
            throw std::invalid_argument(
                "ntxent: no denominator terms; need at least one negative under the "
                "negatives-only convention");
    }

    Tape::Id sims = similarity_matrix(tape, embeddings);
    Tape::Id scaled = tape.scalar_mul(sims, 1.0 / cfg.temperature);

    Tensor mask = Tensor::zeros({pairs.size(), n});
    std::vector<std::pair<std::size_t, std::size_t>> pos_idx;
    for (std::size_t p = 0; p < pairs.size(); ++p) {
        auto [i, k] = pairs[p];
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            if (j == k && cfg.denominator == Denominator::Eq1NegativesOnly) continue;
            mask.at(p, j) = 1.0;
        }
        pos_idx.emplace_back(i, k);
    }

    // anchor rows of the scaled similarity matrix, stacked in pair order
    std::vector<std::pair<std::size_t, std::size_t>> row_gather;
    for (std::size_t p = 0; p < pairs.size(); ++p)
        for (std::size_t j = 0; j < n; ++j)
            row_gather.emplace_back(pairs[p].first, j);
    Tape::Id anchor_rows =
        tape.reshape(tape.gather2d(scaled, row_gather), {pairs.size(), n});
    Tape::Id denom = tape.masked_row_logsumexp(anchor_rows, mask);
    Tape::Id pos = tape.gather2d(scaled, pos_idx);
    return tape.sub(denom, pos);  // -log(num/den) = lse(den) - s_pos/tau
}

/// Scalar NT-XENT loss of a single (anchor, positive) pair.
inline Tape::Id ntxent(Tape& tape, Tape::Id embeddings, std::size_t anchor,
                       std::size_t positive, const LossConfig& cfg) {
    Tape::Id losses = ntxent_losses(tape, embeddings, {{anchor, positive}}, cfg);
    return tape.sum(losses);
}

/// Batch loss of Algorithm-style training: embeddings of the 2B views are
/// stacked as [adv view1 rows | view2 rows]; the loss is the mean NT-XENT
/// over the B anchors (adv view1_i vs view2_i), with every other view in the
/// batch acting as negatives.
inline Tape::Id batch_contrastive_loss(Tape& tape, const EncoderNodes& enc,
                                       const PairBatch& batch, const LossConfig& cfg) {
    if (batch.permuted)
        throw std::invalid_argument(
            "batch_contrastive_loss: batch must be reordered to original pairs");
    std::size_t B = batch.size();
    if (B == 0) throw std::invalid_argument("batch_contrastive_loss: empty batch");
    std::size_t d = batch.entries[0].view1.size();

    std::vector<double> data;
    data.reserve(2 * B * d);
    for (const PairEntry& e : batch.entries) {
        Tensor adv = e.adversarial_view1();
        data.insert(data.end(), adv.data().begin(), adv.data().end());
    }
    for (const PairEntry& e : batch.entries)
        data.insert(data.end(), e.view2.data().begin(), e.view2.data().end());

    Tape::Id views = tape.constant(Tensor::matrix(2 * B, d, std::move(data)));
    Tape::Id embeddings = encode(tape, enc, views).embedding;

    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < B; ++i) pairs.emplace_back(i, B + i);
    return tape.mean(ntxent_losses(tape, embeddings, pairs, cfg));
}

/// Value-only convenience for tests and logging.
inline double batch_contrastive_loss_value(const EncoderParams& params,
                                           const PairBatch& batch,
                                           const LossConfig& cfg) {
    Tape tape;
    EncoderNodes enc = attach_params(tape, params);
    return tape.value(batch_contrastive_loss(tape, enc, batch, cfg)).item();
}

}  // namespace swaro
