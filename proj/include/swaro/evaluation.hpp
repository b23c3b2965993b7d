#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "swaro/adversarial.hpp"
#include "swaro/data.hpp"
#include "swaro/encoder.hpp"
#include "swaro/rng.hpp"
#include "swaro/tape.hpp"
#include "swaro/tensor.hpp"

namespace swaro {

/// -log softmax(logits)[y], max-shifted.
inline double cross_entropy(const Tensor& logits, std::size_t y) {
    if (y >= logits.size())
        throw std::invalid_argument("cross_entropy: label out of range");
    double mx = logits[0];
    for (double v : logits.data()) mx = std::max(mx, v);
    double acc = 0.0;
    for (double v : logits.data()) acc += std::exp(v - mx);
    return mx + std::log(acc) - logits[y];
}

struct EvalEntry {
    std::string method;  // empty for the clean row
    std::string norm;
    double epsilon = 0.0;
    bool targeted = false;
    double accuracy = 0.0;
    std::size_t samples = 0;
    std::uint64_t seed = 0;
};

struct EvalReport {
    double clean_accuracy = -1.0;
    std::vector<EvalEntry> entries;

    std::string to_csv() const {
        std::ostringstream os;
        os << "method,norm,epsilon,targeted,accuracy,samples,seed\n";
        if (clean_accuracy >= 0.0)
            os << "clean,,0,0," << clean_accuracy << ",,\n";
        for (const EvalEntry& e : entries)
            os << e.method << "," << e.norm << "," << e.epsilon << ","
               << (e.targeted ? 1 : 0) << "," << e.accuracy << "," << e.samples << ","
               << e.seed << "\n";
        return os.str();
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["clean_accuracy"] = clean_accuracy;
        j["attacks"] = nlohmann::ordered_json::array();
        for (const EvalEntry& e : entries) {
            j["attacks"].push_back({{"method", e.method},
                                    {"norm", e.norm},
                                    {"epsilon", e.epsilon},
                                    {"targeted", e.targeted},
                                    {"accuracy", e.accuracy},
                                    {"samples", e.samples},
                                    {"seed", e.seed}});
        }
        return j;
    }
};

inline std::size_t predict(const EncoderParams& params, const LinearProbe& probe,
                           const Tensor& x) {
    Tensor logits = probe_logits(params, probe, x);
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.size(); ++c)
        if (logits[c] > logits[best]) best = c;
    return best;
}

/// Minibatch SGD on cross-entropy over frozen backbone features. In robust
/// mode every step regenerates adversarial inputs against the evolving
/// probe (gradients flow through the frozen encoder to the input).
inline LinearProbe train_linear_probe(const EncoderParams& params, const Dataset& ds,
                                      std::size_t epochs, double lr, std::uint64_t seed,
                                      bool robust = false,
                                      std::optional<AttackConfig> atk = std::nullopt) {
    if (!ds.labeled())
        throw std::invalid_argument("train_linear_probe: dataset has no labels");
    if (robust && !atk)
        throw std::invalid_argument("train_linear_probe: robust mode needs an attack config");
    std::size_t classes = ds.num_classes;
    if (classes < 2) throw std::invalid_argument("train_linear_probe: need >= 2 classes");

    std::size_t fdim = params.backbone_dim();
    auto rng = make_rng(seed, /*stream=*/0x9806E);
    LinearProbe probe{random_normal({fdim, classes}, 0.0, 0.01, rng),
                      Tensor::zeros({classes}), 0, 0.0};

    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), 0);
    const std::size_t batch = std::min<std::size_t>(64, ds.size());

    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        std::size_t steps = 0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            std::size_t stop = std::min(order.size(), start + batch);
            std::size_t m = stop - start;
            std::vector<double> xdata;
            std::vector<std::size_t> labels;
            xdata.reserve(m * ds.dim());
            for (std::size_t idx = start; idx < stop; ++idx) {
                std::size_t i = order[idx];
                Tensor x = ds.features[i];
                if (robust) {
                    x = supervised_attack(x, std::size_t(ds.labels[i]), params, probe,
                                          *atk, ds.lower_bound, ds.upper_bound,
                                          derive_seed(seed, epoch * ds.size() + i));
                }
                xdata.insert(xdata.end(), x.data().begin(), x.data().end());
                labels.push_back(std::size_t(ds.labels[i]));
            }

            Tape tape;
            EncoderNodes enc = attach_params(tape, params);
            Tape::Id X = tape.constant(Tensor::matrix(m, ds.dim(), std::move(xdata)));
            Tape::Id features = encode(tape, enc, X).backbone_features;
            Tape::Id w = tape.input(probe.weight);
            Tape::Id b = tape.input(probe.bias);
            Tape::Id logits = tape.bias_add(tape.matmul(features, w), b);
            Tape::Id loss = tape.mean(tape.cross_entropy_rows(logits, labels));
            epoch_loss += tape.value(loss).item();
            ++steps;

            auto grads = tape.backward(loss);
            for (std::size_t i = 0; i < probe.weight.size(); ++i)
                probe.weight[i] -= lr * grads[w][i];
            for (std::size_t i = 0; i < probe.bias.size(); ++i)
                probe.bias[i] -= lr * grads[b][i];
        }
        probe.final_loss = steps ? epoch_loss / double(steps) : 0.0;
        probe.trained_epochs = epoch + 1;
    }
    return probe;
}

/// Accuracy over the dataset; with an attack config, inputs are first
/// attacked white-box against (encoder + probe).
inline EvalEntry evaluate(const EncoderParams& params, const LinearProbe& probe,
                          const Dataset& ds, std::optional<AttackConfig> atk,
                          std::uint64_t seed) {
    if (!ds.labeled()) throw std::invalid_argument("evaluate: dataset has no labels");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        Tensor x = ds.features[i];
        auto y = std::size_t(ds.labels[i]);
        if (atk) {
            std::size_t attack_label = atk->targeted ? std::size_t(atk->target_label) : y;
            x = supervised_attack(x, attack_label, params, probe, *atk, ds.lower_bound,
                                  ds.upper_bound, derive_seed(seed, i));
        }
        if (predict(params, probe, x) == y) ++correct;
    }
    EvalEntry e;
    if (atk) {
        e.method = to_string(atk->method);
        e.norm = to_string(atk->norm);
        e.epsilon = atk->epsilon;
        e.targeted = atk->targeted;
    } else {
        e.method = "clean";
    }
    e.accuracy = double(correct) / double(ds.size());
    e.samples = ds.size();
    e.seed = seed;
    return e;
}

/// Transfer attack: adversarial examples generated against the source model,
/// accuracy measured on the target model.
inline EvalEntry black_box_eval(const EncoderParams& src_params, const LinearProbe& src_probe,
                                const EncoderParams& tgt_params, const LinearProbe& tgt_probe,
                                const Dataset& ds, const AttackConfig& atk,
                                std::uint64_t seed) {
    if (!ds.labeled()) throw std::invalid_argument("black_box_eval: dataset has no labels");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        auto y = std::size_t(ds.labels[i]);
        std::size_t attack_label = atk.targeted ? std::size_t(atk.target_label) : y;
        Tensor x_adv = supervised_attack(ds.features[i], attack_label, src_params,
                                         src_probe, atk, ds.lower_bound, ds.upper_bound,
                                         derive_seed(seed, i));
        if (predict(tgt_params, tgt_probe, x_adv) == y) ++correct;
    }
    EvalEntry e;
    e.method = std::string("transfer-") + to_string(atk.method);
    e.norm = to_string(atk.norm);
    e.epsilon = atk.epsilon;
    e.targeted = atk.targeted;
    e.accuracy = double(correct) / double(ds.size());
    e.samples = ds.size();
    e.seed = seed;
    return e;
}

struct Pca2dResult {
    std::vector<std::array<double, 2>> coords;
    bool degenerate = false;  // rank-0 covariance, all coordinates zero
};

/// Top-2 principal components via power iteration with deflation.
inline Pca2dResult pca_2d(const Tensor& Z) {
    std::size_t n = Z.rows(), d = Z.cols();
    Pca2dResult out;
    out.coords.assign(n, {0.0, 0.0});

    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c) mean[c] += Z.at(i, c);
    for (double& m : mean) m /= double(n);

    Tensor X = Z;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c) X.at(i, c) -= mean[c];

    auto matvec = [&](const std::vector<double>& v) {
        // (X^T X / n) v without forming the covariance
        std::vector<double> xv(n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < d; ++c) xv[i] += X.at(i, c) * v[c];
        std::vector<double> r(d, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < d; ++c) r[c] += X.at(i, c) * xv[i];
        for (double& e : r) e /= double(n);
        return r;
    };

    std::vector<std::vector<double>> components;
    for (std::size_t comp = 0; comp < 2 && comp < d; ++comp) {
        std::vector<double> v(d, 0.0);
        v[comp % d] = 1.0;  // deterministic start
        double lambda = 0.0;
        for (int iter = 0; iter < 200; ++iter) {
            std::vector<double> w = matvec(v);
            for (const auto& prev : components) {
                double proj = std::inner_product(w.begin(), w.end(), prev.begin(), 0.0);
                for (std::size_t c = 0; c < d; ++c) w[c] -= proj * prev[c];
            }
            double norm = std::sqrt(std::inner_product(w.begin(), w.end(), w.begin(), 0.0));
            if (norm < 1e-14) { lambda = 0.0; break; }
            for (double& e : w) e /= norm;
            lambda = norm;
            v = std::move(w);
        }
        if (lambda < 1e-14) {
            if (comp == 0) out.degenerate = true;
            break;
        }
        components.push_back(v);
    }

    if (components.empty()) return out;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t comp = 0; comp < components.size(); ++comp) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) s += X.at(i, c) * components[comp][c];
            out.coords[i][comp] = s;
        }
    return out;
}

/// Project head embeddings to 2-D and write a `x,y,label` CSV.
inline Pca2dResult export_embeddings_2d(const EncoderParams& params, const Dataset& ds,
                                        const std::string& out_path) {
    if (ds.size() == 0)
        throw std::invalid_argument("export_embeddings_2d: empty dataset");
    Tensor Z = encode_value(params, feature_matrix(ds));
    Pca2dResult pca = pca_2d(Z);

    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("export_embeddings_2d: cannot write " + out_path);
    out << "x,y,label\n";
    for (std::size_t i = 0; i < ds.size(); ++i)
        out << pca.coords[i][0] << "," << pca.coords[i][1] << ","
            << (ds.labeled() ? ds.labels[i] : -1) << "\n";
    return pca;
}

}  // namespace swaro
