#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace swaro {

/// Dense row-major tensor of 64-bit floats. Immutable by convention once
/// handed to a Tape; all mutation happens during construction.
class Tensor {
public:
    Tensor() = default;

    Tensor(std::vector<std::size_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (element_count(shape_) != data_.size()) {
            throw std::invalid_argument("Tensor: shape/data size mismatch (" +
                                        shape_string() + " vs " +
                                        std::to_string(data_.size()) + " values)");
        }
    }

    static Tensor zeros(std::vector<std::size_t> shape) {
        std::size_t n = element_count(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0));
    }

    static Tensor full(std::vector<std::size_t> shape, double v) {
        std::size_t n = element_count(shape);
        return Tensor(std::move(shape), std::vector<double>(n, v));
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static Tensor vector(std::vector<double> v) {
        std::size_t n = v.size();
        return Tensor({n}, std::move(v));
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
        return Tensor({rows, cols}, std::move(v));
    }

    static Tensor identity(std::size_t n) {
        Tensor t = zeros({n, n});
        for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = 1.0;
        return t;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    const std::vector<double>& data() const { return data_; }
    std::vector<double>& mutable_data() { return data_; }

    std::size_t size() const { return data_.size(); }
    std::size_t rank() const { return shape_.size(); }

    bool is_scalar() const { return data_.size() == 1; }

    /// Rows/cols treat a rank-1 tensor as a single row.
    std::size_t rows() const { return rank() >= 2 ? shape_[0] : 1; }
    std::size_t cols() const {
        if (rank() == 0) return 0;
        return rank() >= 2 ? shape_[1] : shape_[0];
    }

    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }

    double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }

    double item() const {
        if (!is_scalar()) {
            throw std::invalid_argument("Tensor::item: tensor is not scalar, shape " +
                                        shape_string());
        }
        return data_[0];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(),
                           [](double v) { return std::isfinite(v); });
    }

    Tensor row(std::size_t r) const {
        std::size_t c = cols();
        return Tensor({c}, std::vector<double>(data_.begin() + r * c,
                                               data_.begin() + (r + 1) * c));
    }

    std::string shape_string() const {
        std::ostringstream os;
        os << "[";
        for (std::size_t i = 0; i < shape_.size(); ++i)
            os << (i ? "x" : "") << shape_[i];
        os << "]";
        return os.str();
    }

    static std::size_t element_count(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t d : shape) {
            if (d == 0) throw std::invalid_argument("Tensor: zero dimension");
            n *= d;
        }
        return shape.empty() ? 0 : n;
    }

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

inline double dot(const Tensor& a, const Tensor& b) {
    return std::inner_product(a.data().begin(), a.data().end(), b.data().begin(), 0.0);
}

inline double squared_distance(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

inline double linf_norm(const Tensor& a) {
    double m = 0.0;
    for (double v : a.data()) m = std::max(m, std::fabs(v));
    return m;
}

inline double l2_norm(const Tensor& a) { return std::sqrt(dot(a, a)); }

inline double l1_norm(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += std::fabs(v);
    return s;
}

}  // namespace swaro
