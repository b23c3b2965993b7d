#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "swaro/rng.hpp"
#include "swaro/tape.hpp"
#include "swaro/tensor.hpp"

namespace swaro {

enum class Activation : std::uint8_t { Relu = 0, Identity = 1 };

struct Layer {
    Tensor weight;  // in x out
    Tensor bias;    // out
};

/// MLP backbone plus a two-layer projection head. The head output feeds the
/// contrastive loss and clustering; linear probes read the backbone features.
struct EncoderParams {
    std::vector<Layer> backbone;
    std::array<Layer, 2> head;
    Activation activation = Activation::Relu;

    std::size_t input_dim() const { return backbone.front().weight.rows(); }
    std::size_t backbone_dim() const { return backbone.back().weight.cols(); }
    std::size_t embedding_dim() const { return head[1].weight.cols(); }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const Layer& l : backbone) n += l.weight.size() + l.bias.size();
        for (const Layer& l : head) n += l.weight.size() + l.bias.size();
        return n;
    }
};

struct EncoderLayout {
    std::vector<std::size_t> backbone;  // input width followed by layer widths
    std::vector<std::size_t> head;      // exactly [hidden, embedding_dim]
};

/// He-style initialization: weights ~ N(0, 2/fan_in), biases zero.
inline EncoderParams init_params(const EncoderLayout& layout, std::uint64_t seed,
                                 Activation act = Activation::Relu) {
    if (layout.backbone.size() < 2)
        throw std::invalid_argument("init_params: backbone needs an input width and at least one layer");
    if (layout.head.size() != 2)
        throw std::invalid_argument("init_params: head must have exactly 2 layers");
    for (std::size_t w : layout.backbone)
        if (w == 0) throw std::invalid_argument("init_params: zero layer width");
    for (std::size_t w : layout.head)
        if (w == 0) throw std::invalid_argument("init_params: zero layer width");

    auto rng = make_rng(seed, /*stream=*/0xE2C0DE);
    auto make_layer = [&](std::size_t in, std::size_t out) {
        double std = std::sqrt(2.0 / double(in));
        return Layer{random_normal({in, out}, 0.0, std, rng), Tensor::zeros({out})};
    };

    EncoderParams p;
    p.activation = act;
    for (std::size_t i = 0; i + 1 < layout.backbone.size(); ++i)
        p.backbone.push_back(make_layer(layout.backbone[i], layout.backbone[i + 1]));
    p.head[0] = make_layer(layout.backbone.back(), layout.head[0]);
    p.head[1] = make_layer(layout.head[0], layout.head[1]);
    return p;
}

inline EncoderLayout layout_of(const EncoderParams& p) {
    EncoderLayout l;
    l.backbone.push_back(p.backbone.front().weight.rows());
    for (const Layer& layer : p.backbone) l.backbone.push_back(layer.weight.cols());
    l.head = {p.head[0].weight.cols(), p.head[1].weight.cols()};
    return l;
}

/// Tape ids of every parameter leaf, so callers can read parameter gradients.
struct EncoderNodes {
    std::vector<std::array<Tape::Id, 2>> backbone;  // {weight, bias} per layer
    std::array<std::array<Tape::Id, 2>, 2> head;
    Activation activation;

    std::vector<Tape::Id> all_ids() const {
        std::vector<Tape::Id> ids;
        for (const auto& l : backbone) { ids.push_back(l[0]); ids.push_back(l[1]); }
        for (const auto& l : head) { ids.push_back(l[0]); ids.push_back(l[1]); }
        return ids;
    }
};

inline EncoderNodes attach_params(Tape& tape, const EncoderParams& p) {
    EncoderNodes n;
    n.activation = p.activation;
    for (const Layer& l : p.backbone)
        n.backbone.push_back({tape.input(l.weight), tape.input(l.bias)});
    for (std::size_t i = 0; i < 2; ++i)
        n.head[i] = {tape.input(p.head[i].weight), tape.input(p.head[i].bias)};
    return n;
}

struct Encoded {
    Tape::Id backbone_features;  // used by linear probes
    Tape::Id embedding;          // projection head output, used by the loss
};

/// Forward pass for a batch matrix x (rows are samples). Differentiable
/// w.r.t. both the attached parameters and x.
inline Encoded encode(Tape& tape, const EncoderNodes& enc, Tape::Id x) {
    if (tape.value(x).rank() != 2)
        throw std::invalid_argument("encode: input must be a matrix, got " +
                                    tape.value(x).shape_string());
    auto activate = [&](Tape::Id h) {
        return enc.activation == Activation::Relu ? tape.relu(h) : h;
    };
    Tape::Id h = x;
    for (const auto& l : enc.backbone)
        h = activate(tape.bias_add(tape.matmul(h, l[0]), l[1]));
    Tape::Id features = h;
    Tape::Id z = activate(tape.bias_add(tape.matmul(features, enc.head[0][0]), enc.head[0][1]));
    z = tape.bias_add(tape.matmul(z, enc.head[1][0]), enc.head[1][1]);
    return {features, z};
}

/// Value-only forward pass (no gradients needed).
inline Tensor encode_value(const EncoderParams& p, const Tensor& x) {
    Tape t;
    EncoderNodes n = attach_params(t, p);
    return t.value(encode(t, n, t.input(x)).embedding);
}

inline Tensor backbone_value(const EncoderParams& p, const Tensor& x) {
    Tape t;
    EncoderNodes n = attach_params(t, p);
    return t.value(encode(t, n, t.input(x)).backbone_features);
}

}  // namespace swaro
