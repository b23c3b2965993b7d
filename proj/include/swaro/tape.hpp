#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <utility>
#include <stdexcept>
#include <string>
#include <vector>

#include "swaro/tensor.hpp"

namespace swaro {

/// Additive stabilizer inside every L2 norm so that normalizing a zero
/// vector is defined (cosine similarity of degenerate embeddings).
inline constexpr double kNormEpsilon = 1e-12;

/// Reverse-mode autodiff over a flat tape of primitive ops.
///
/// Values are computed eagerly as ops are recorded, so the tape is always
/// in topological order and backward() is a single reverse sweep. A tape
/// is single-writer; tensors handed to it are treated as immutable.
class Tape {
public:
    using Id = std::size_t;

    enum class Op {
        Leaf,
        Add,
        Sub,
        Mul,
        Div,
        ScalarMul,  // tensor * compile-time constant
        Reshape,
        MatMul,
        Transpose,
        BiasAdd,  // matrix + broadcast row vector
        Relu,
        Exp,
        Log,
        Clamp,
        Sum,
        Mean,
        L2Norm,
        MaxAbs,
        ConcatRows,
        RowsNormalize,
        MaskedRowLogSumExp,
        Gather2d,
        CrossEntropyRows,
    };

    /// Differentiable leaf (parameter or attacked input).
    Id input(Tensor t) { return push(Op::Leaf, {}, std::move(t)); }

    /// Non-differentiable leaf. Same node kind; its gradient is simply
    /// never read by callers.
    Id constant(Tensor t) { return push(Op::Leaf, {}, std::move(t)); }

    const Tensor& value(Id id) const { return nodes_[id].value; }
    std::size_t node_count() const { return nodes_.size(); }

    Id add(Id a, Id b) { return binary_elementwise(Op::Add, "add", a, b); }
    Id sub(Id a, Id b) { return binary_elementwise(Op::Sub, "sub", a, b); }
    Id mul(Id a, Id b) { return binary_elementwise(Op::Mul, "mul", a, b); }

    Id div(Id a, Id b) {
        const Tensor& tb = value(b);
        for (double v : tb.data())
            if (v == 0.0) throw std::domain_error("div: division by zero");
        return binary_elementwise(Op::Div, "div", a, b);
    }

    Id scalar_mul(Id a, double c) {
        Tensor out = value(a);
        for (double& v : out.mutable_data()) v *= c;
        Id id = push(Op::ScalarMul, {a}, std::move(out));
        nodes_[id].c0 = c;
        return id;
    }

    Id neg(Id a) { return scalar_mul(a, -1.0); }

    Id reshape(Id a, std::vector<std::size_t> shape) {
        if (Tensor::element_count(shape) != value(a).size())
            throw std::invalid_argument("reshape: element count mismatch");
        Tensor out(std::move(shape), value(a).data());
        return push(Op::Reshape, {a}, std::move(out));
    }

    Id matmul(Id a, Id b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows()) {
            throw std::invalid_argument("matmul: incompatible shapes " +
                                        A.shape_string() + " and " + B.shape_string());
        }
        std::size_t m = A.rows(), k = A.cols(), n = B.cols();
        Tensor out = Tensor::zeros({m, n});
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
                double av = A.at(i, p);
                if (av == 0.0) continue;
                for (std::size_t j = 0; j < n; ++j)
                    out.at(i, j) += av * B.at(p, j);
            }
        return push(Op::MatMul, {a, b}, std::move(out));
    }

    Id transpose(Id a) {
        const Tensor& A = value(a);
        if (A.rank() != 2)
            throw std::invalid_argument("transpose: expected matrix, got " +
                                        A.shape_string());
        Tensor out = Tensor::zeros({A.cols(), A.rows()});
        for (std::size_t r = 0; r < A.rows(); ++r)
            for (std::size_t c = 0; c < A.cols(); ++c) out.at(c, r) = A.at(r, c);
        return push(Op::Transpose, {a}, std::move(out));
    }

    Id bias_add(Id x, Id b) {
        const Tensor& X = value(x);
        const Tensor& B = value(b);
        if (X.rank() != 2 || B.rank() != 1 || X.cols() != B.size()) {
            throw std::invalid_argument("bias_add: incompatible shapes " +
                                        X.shape_string() + " and " + B.shape_string());
        }
        Tensor out = X;
        for (std::size_t r = 0; r < X.rows(); ++r)
            for (std::size_t c = 0; c < X.cols(); ++c) out.at(r, c) += B[c];
        return push(Op::BiasAdd, {x, b}, std::move(out));
    }

    Id relu(Id a) {
        Tensor out = value(a);
        for (double& v : out.mutable_data()) v = v > 0.0 ? v : 0.0;
        return push(Op::Relu, {a}, std::move(out));
    }

    Id exp(Id a) {
        Tensor out = value(a);
        for (double& v : out.mutable_data()) v = std::exp(v);
        return push(Op::Exp, {a}, std::move(out));
    }

    Id log(Id a) {
        Tensor out = value(a);
        for (double& v : out.mutable_data()) {
            if (v <= 0.0)
                throw std::domain_error("log: input must be strictly positive, got " +
                                        std::to_string(v));
            v = std::log(v);
        }
        return push(Op::Log, {a}, std::move(out));
    }

    Id clamp(Id a, double lo, double hi) {
        if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
        Tensor out = value(a);
        for (double& v : out.mutable_data()) v = std::min(hi, std::max(lo, v));
        Id id = push(Op::Clamp, {a}, std::move(out));
        nodes_[id].c0 = lo;
        nodes_[id].c1 = hi;
        return id;
    }

    Id sum(Id a) {
        double s = 0.0;
        for (double v : value(a).data()) s += v;
        return push(Op::Sum, {a}, Tensor::scalar(s));
    }

    Id mean(Id a) {
        double s = 0.0;
        for (double v : value(a).data()) s += v;
        return push(Op::Mean, {a}, Tensor::scalar(s / double(value(a).size())));
    }

    /// Stabilized euclidean norm: sqrt(sum(x^2) + kNormEpsilon).
    Id l2norm(Id a) {
        double s = kNormEpsilon;
        for (double v : value(a).data()) s += v * v;
        return push(Op::L2Norm, {a}, Tensor::scalar(std::sqrt(s)));
    }

    /// max_i |x_i| as a scalar (subgradient taken at the first argmax).
    Id maxabs(Id a) {
        const Tensor& X = value(a);
        if (X.size() == 0) throw std::invalid_argument("maxabs: empty tensor");
        double m = 0.0;
        for (double v : X.data()) m = std::max(m, std::fabs(v));
        return push(Op::MaxAbs, {a}, Tensor::scalar(m));
    }

    Id concat_rows(const std::vector<Id>& parts) {
        if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
        std::size_t cols = value(parts[0]).cols();
        std::size_t rows = 0;
        std::vector<double> data;
        for (Id p : parts) {
            const Tensor& t = value(p);
            if (t.cols() != cols) {
                throw std::invalid_argument("concat_rows: column mismatch " +
                                            t.shape_string());
            }
            rows += t.rows();
            data.insert(data.end(), t.data().begin(), t.data().end());
        }
        return push(Op::ConcatRows, parts, Tensor::matrix(rows, cols, std::move(data)));
    }

    /// Normalize each row to (stabilized) unit euclidean length.
    Id rows_normalize(Id a) {
        const Tensor& X = value(a);
        if (X.rank() != 2)
            throw std::invalid_argument("rows_normalize: expected matrix, got " +
                                        X.shape_string());
        Tensor out = X;
        for (std::size_t r = 0; r < X.rows(); ++r) {
            double s = kNormEpsilon;
            for (std::size_t c = 0; c < X.cols(); ++c) s += X.at(r, c) * X.at(r, c);
            double n = std::sqrt(s);
            for (std::size_t c = 0; c < X.cols(); ++c) out.at(r, c) = X.at(r, c) / n;
        }
        return push(Op::RowsNormalize, {a}, std::move(out));
    }

    /// Per-row log(sum_c mask[r,c] * exp(S[r,c])) with max-shift.
    /// mask entries are 0/1 constants; every row needs at least one active entry.
    Id masked_row_logsumexp(Id s, Tensor mask) {
        const Tensor& S = value(s);
        if (S.rank() != 2 || !S.same_shape(mask)) {
            throw std::invalid_argument("masked_row_logsumexp: shape mismatch " +
                                        S.shape_string() + " vs " + mask.shape_string());
        }
        std::size_t R = S.rows(), C = S.cols();
        Tensor out = Tensor::zeros({R});
        for (std::size_t r = 0; r < R; ++r) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < C; ++c)
                if (mask.at(r, c) != 0.0) mx = std::max(mx, S.at(r, c));
            if (!std::isfinite(mx))
                throw std::invalid_argument(
                    "masked_row_logsumexp: row " + std::to_string(r) +
                    " has no active entries");
            double acc = 0.0;
            for (std::size_t c = 0; c < C; ++c)
                if (mask.at(r, c) != 0.0) acc += std::exp(S.at(r, c) - mx);
            out[r] = mx + std::log(acc);
        }
        Id id = push(Op::MaskedRowLogSumExp, {s}, std::move(out));
        nodes_[id].aux = std::move(mask);
        return id;
    }

    /// Gather S[r_p, c_p] for each (r_p, c_p) pair into a vector.
    Id gather2d(Id s, std::vector<std::pair<std::size_t, std::size_t>> idx) {
        const Tensor& S = value(s);
        if (S.rank() != 2) throw std::invalid_argument("gather2d: expected matrix");
        Tensor out = Tensor::zeros({idx.size()});
        Tensor flat = Tensor::zeros({idx.size() * 2});
        for (std::size_t p = 0; p < idx.size(); ++p) {
            auto [r, c] = idx[p];
            if (r >= S.rows() || c >= S.cols())
                throw std::invalid_argument("gather2d: index out of range");
            out[p] = S.at(r, c);
            flat[2 * p] = double(r);
            flat[2 * p + 1] = double(c);
        }
        Id id = push(Op::Gather2d, {s}, std::move(out));
        nodes_[id].aux = std::move(flat);
        return id;
    }

    /// Per-row cross entropy: out[r] = logsumexp(logits[r]) - logits[r][y_r].
    Id cross_entropy_rows(Id logits, const std::vector<std::size_t>& labels) {
        const Tensor& L = value(logits);
        if (L.rank() != 2 || labels.size() != L.rows()) {
            throw std::invalid_argument("cross_entropy_rows: " + L.shape_string() +
                                        " logits vs " + std::to_string(labels.size()) +
                                        " labels");
        }
        std::size_t R = L.rows(), C = L.cols();
        Tensor out = Tensor::zeros({R});
        Tensor lab = Tensor::zeros({R});
        for (std::size_t r = 0; r < R; ++r) {
            if (labels[r] >= C)
                throw std::invalid_argument("cross_entropy_rows: label out of range");
            double mx = L.at(r, 0);
            for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, L.at(r, c));
            double acc = 0.0;
            for (std::size_t c = 0; c < C; ++c) acc += std::exp(L.at(r, c) - mx);
            out[r] = mx + std::log(acc) - L.at(r, labels[r]);
            lab[r] = double(labels[r]);
        }
        Id id = push(Op::CrossEntropyRows, {logits}, std::move(out));
        nodes_[id].aux = std::move(lab);
        return id;
    }

    /// Gradients of a scalar output w.r.t. every node, in node-id order.
    /// Leaves with no path to the output get zero gradients.
    std::vector<Tensor> backward(Id out) const {
        if (!value(out).is_scalar()) {
            throw std::invalid_argument("backward: output must be scalar, shape " +
                                        value(out).shape_string());
        }
        std::vector<Tensor> grads(nodes_.size());
        for (std::size_t i = 0; i < nodes_.size(); ++i)
            grads[i] = Tensor::zeros(nodes_[i].value.shape());
        grads[out][0] = 1.0;

        for (std::size_t i = nodes_.size(); i-- > 0;) {
            const Node& n = nodes_[i];
            if (n.op == Op::Leaf) continue;
            backward_node(n, grads[i], grads);
        }
        return grads;
    }

private:
    struct Node {
        Op op;
        std::vector<Id> inputs;
        Tensor value;
        Tensor aux;      // op-specific constants (mask, labels, indices)
        double c0 = 0.0;
        double c1 = 0.0;
    };

    Id push(Op op, std::vector<Id> inputs, Tensor value) {
        nodes_.push_back(Node{op, std::move(inputs), std::move(value), {}, 0.0, 0.0});
        return nodes_.size() - 1;
    }

    Id binary_elementwise(Op op, const char* name, Id a, Id b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        // scalar-tensor broadcast only; any other mismatch is an error
        if (!A.same_shape(B) && !A.is_scalar() && !B.is_scalar()) {
            throw std::invalid_argument(std::string(name) + ": shape mismatch " +
                                        A.shape_string() + " vs " + B.shape_string());
        }
        const Tensor& big = A.is_scalar() && !B.is_scalar() ? B : A;
        Tensor out = Tensor::zeros(big.shape());
        for (std::size_t i = 0; i < out.size(); ++i) {
            double av = A.is_scalar() ? A[0] : A[i];
            double bv = B.is_scalar() ? B[0] : B[i];
            switch (op) {
                case Op::Add: out[i] = av + bv; break;
                case Op::Sub: out[i] = av - bv; break;
                case Op::Mul: out[i] = av * bv; break;
                case Op::Div: out[i] = av / bv; break;
                default: throw std::logic_error("binary_elementwise: bad op");
            }
        }
        return push(op, {a, b}, std::move(out));
    }

    static void accumulate_broadcast(Tensor& dst, const Tensor& g) {
        if (dst.same_shape(g)) {
            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
        } else {  // dst is scalar, g was broadcast from it
            double s = 0.0;
            for (double v : g.data()) s += v;
            dst[0] += s;
        }
    }

    void backward_node(const Node& n, const Tensor& g, std::vector<Tensor>& grads) const {
        switch (n.op) {
            case Op::Add: {
                accumulate_broadcast(grads[n.inputs[0]], g);
                accumulate_broadcast(grads[n.inputs[1]], g);
                break;
            }
            case Op::Sub: {
                accumulate_broadcast(grads[n.inputs[0]], g);
                Tensor ng = g;
                for (double& v : ng.mutable_data()) v = -v;
                accumulate_broadcast(grads[n.inputs[1]], ng);
                break;
            }
            case Op::Mul: {
                const Tensor& A = value(n.inputs[0]);
                const Tensor& B = value(n.inputs[1]);
                Tensor ga = Tensor::zeros(g.shape()), gb = Tensor::zeros(g.shape());
                for (std::size_t i = 0; i < g.size(); ++i) {
                    double av = A.is_scalar() ? A[0] : A[i];
                    double bv = B.is_scalar() ? B[0] : B[i];
                    ga[i] = g[i] * bv;
                    gb[i] = g[i] * av;
                }
                accumulate_broadcast(grads[n.inputs[0]], ga);
                accumulate_broadcast(grads[n.inputs[1]], gb);
                break;
            }
            case Op::Div: {
                const Tensor& A = value(n.inputs[0]);
                const Tensor& B = value(n.inputs[1]);
                Tensor ga = Tensor::zeros(g.shape()), gb = Tensor::zeros(g.shape());
                for (std::size_t i = 0; i < g.size(); ++i) {
                    double av = A.is_scalar() ? A[0] : A[i];
                    double bv = B.is_scalar() ? B[0] : B[i];
                    ga[i] = g[i] / bv;
                    gb[i] = -g[i] * av / (bv * bv);
                }
                accumulate_broadcast(grads[n.inputs[0]], ga);
                accumulate_broadcast(grads[n.inputs[1]], gb);
                break;
            }
            case Op::ScalarMul: {
                Tensor ga = g;
                for (double& v : ga.mutable_data()) v *= n.c0;
                accumulate_broadcast(grads[n.inputs[0]], ga);
                break;
            }
            case Op::MatMul: {
                const Tensor& A = value(n.inputs[0]);
                const Tensor& B = value(n.inputs[1]);
                Tensor& gA = grads[n.inputs[0]];
                Tensor& gB = grads[n.inputs[1]];
                std::size_t m = A.rows(), k = A.cols(), nn = B.cols();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < nn; ++j) {
                        double gv = g.at(i, j);
                        if (gv == 0.0) continue;
                        for (std::size_t p = 0; p < k; ++p) {
                            gA.at(i, p) += gv * B.at(p, j);
                            gB.at(p, j) += gv * A.at(i, p);
                        }
                    }
                break;
            }
            case Op::Reshape: {
                Tensor& gx = grads[n.inputs[0]];
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                break;
            }
            case Op::Transpose: {
                Tensor& gA = grads[n.inputs[0]];
                for (std::size_t r = 0; r < g.rows(); ++r)
                    for (std::size_t c = 0; c < g.cols(); ++c)
                        gA.at(c, r) += g.at(r, c);
                break;
            }
            case Op::MaxAbs: {
                const Tensor& X = value(n.inputs[0]);
                Tensor& gx = grads[n.inputs[0]];
                std::size_t arg = 0;
                double m = -1.0;
                for (std::size_t i = 0; i < X.size(); ++i)
                    if (std::fabs(X[i]) > m) { m = std::fabs(X[i]); arg = i; }
                gx[arg] += g[0] * (X[arg] >= 0.0 ? 1.0 : -1.0);
                break;
            }
            case Op::BiasAdd: {
                Tensor& gX = grads[n.inputs[0]];
                Tensor& gb = grads[n.inputs[1]];
                for (std::size_t r = 0; r < g.rows(); ++r)
                    for (std::size_t c = 0; c < g.cols(); ++c) {
                        gX.at(r, c) += g.at(r, c);
                        gb[c] += g.at(r, c);
                    }
                break;
            }
            case Op::Relu: {
                const Tensor& X = value(n.inputs[0]);
                Tensor& gx = grads[n.inputs[0]];
                // subgradient at exactly 0 is 0
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (X[i] > 0.0) gx[i] += g[i];
                break;
            }
            case Op::Exp: {
                Tensor& gx = grads[n.inputs[0]];
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * n.value[i];
                break;
            }
            case Op::Log: {
                const Tensor& X = value(n.inputs[0]);
                Tensor& gx = grads[n.inputs[0]];
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / X[i];
                break;
            }
            case Op::Clamp: {
                const Tensor& X = value(n.inputs[0]);
                Tensor& gx = grads[n.inputs[0]];
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (X[i] > n.c0 && X[i] < n.c1) gx[i] += g[i];
                break;
            }
            case Op::Sum: {
                Tensor& gx = grads[n.inputs[0]];
                for (double& v : gx.mutable_data()) v += g[0];
                break;
            }
            case Op::Mean: {
                Tensor& gx = grads[n.inputs[0]];
                double s = g[0] / double(gx.size());
                for (double& v : gx.mutable_data()) v += s;
                break;
            }
            case Op::L2Norm: {
                const Tensor& X = value(n.inputs[0]);
                Tensor& gx = grads[n.inputs[0]];
                double y = n.value[0];
                for (std::size_t i = 0; i < X.size(); ++i) gx[i] += g[0] * X[i] / y;
                break;
            }
            case Op::ConcatRows: {
                std::size_t offset = 0;
                for (Id in : n.inputs) {
                    Tensor& gx = grads[in];
                    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[offset + i];
                    offset += gx.size();
                }
                break;
            }
            case Op::RowsNormalize: {
                const Tensor& X = value(n.inputs[0]);
                Tensor& gx = grads[n.inputs[0]];
                for (std::size_t r = 0; r < X.rows(); ++r) {
                    double s = kNormEpsilon;
                    for (std::size_t c = 0; c < X.cols(); ++c)
                        s += X.at(r, c) * X.at(r, c);
                    double nr = std::sqrt(s);
                    double gdotx = 0.0;
                    for (std::size_t c = 0; c < X.cols(); ++c)
                        gdotx += g.at(r, c) * X.at(r, c);
                    for (std::size_t c = 0; c < X.cols(); ++c)
                        gx.at(r, c) += g.at(r, c) / nr - X.at(r, c) * gdotx / (nr * nr * nr);
                }
                break;
            }
            case Op::MaskedRowLogSumExp: {
                const Tensor& S = value(n.inputs[0]);
                const Tensor& mask = n.aux;
                Tensor& gS = grads[n.inputs[0]];
                for (std::size_t r = 0; r < S.rows(); ++r)
                    for (std::size_t c = 0; c < S.cols(); ++c)
                        if (mask.at(r, c) != 0.0)
                            gS.at(r, c) += g[r] * std::exp(S.at(r, c) - n.value[r]);
                break;
            }
            case Op::Gather2d: {
                Tensor& gS = grads[n.inputs[0]];
                for (std::size_t p = 0; p < n.value.size(); ++p) {
                    auto r = std::size_t(n.aux[2 * p]);
                    auto c = std::size_t(n.aux[2 * p + 1]);
                    gS.at(r, c) += g[p];
                }
                break;
            }
            case Op::CrossEntropyRows: {
                const Tensor& L = value(n.inputs[0]);
                Tensor& gL = grads[n.inputs[0]];
                for (std::size_t r = 0; r < L.rows(); ++r) {
                    double mx = L.at(r, 0);
                    for (std::size_t c = 1; c < L.cols(); ++c)
                        mx = std::max(mx, L.at(r, c));
                    double acc = 0.0;
                    for (std::size_t c = 0; c < L.cols(); ++c)
                        acc += std::exp(L.at(r, c) - mx);
                    auto y = std::size_t(n.aux[r]);
                    for (std::size_t c = 0; c < L.cols(); ++c) {
                        double sm = std::exp(L.at(r, c) - mx) / acc;
                        gL.at(r, c) += g[r] * (sm - (c == y ? 1.0 : 0.0));
                    }
                }
                break;
            }
            case Op::Leaf:
                break;
        }
    }

    std::vector<Node> nodes_;
};

}  // namespace swaro
