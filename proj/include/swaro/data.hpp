#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "swaro/rng.hpp"
#include "swaro/tensor.hpp"

namespace swaro {

struct Dataset {
    std::string name;
    std::vector<Tensor> features;      // all the same width
    std::vector<int> labels;           // empty when unlabeled
    Tensor lower_bound;                // per-feature domain bounds
    Tensor upper_bound;
    std::size_t num_classes = 0;

    std::size_t size() const { return features.size(); }
    std::size_t dim() const { return features.empty() ? lower_bound.size()
                                                      : features[0].size(); }
    bool labeled() const { return !labels.empty(); }
};

/// Feature matrix view of the dataset (rows are samples).
inline Tensor feature_matrix(const Dataset& ds) {
    std::vector<double> data;
    data.reserve(ds.size() * ds.dim());
    for (const Tensor& x : ds.features)
        data.insert(data.end(), x.data().begin(), x.data().end());
    return Tensor::matrix(ds.size(), ds.dim(), std::move(data));
}

inline void recompute_bounds(Dataset& ds) {
    std::size_t d = ds.dim();
    ds.lower_bound = Tensor::zeros({d});
    ds.upper_bound = Tensor::zeros({d});
    for (std::size_t c = 0; c < d; ++c) {
        double lo = ds.features.empty() ? 0.0 : ds.features[0][c];
        double hi = lo;
        for (const Tensor& x : ds.features) {
            lo = std::min(lo, x[c]);
            hi = std::max(hi, x[c]);
        }
        ds.lower_bound[c] = lo;
        ds.upper_bound[c] = hi;
    }
}

/// Class-balanced isotropic Gaussian blobs. Cluster centers are placed so
/// that every pair is at least `separation * spread` apart; the default
/// separation of 6 gives cleanly separable classes.
inline Dataset gen_blobs_with_separation(std::size_t n, std::size_t classes,
                                         std::size_t dim, double spread,
                                         double separation, std::uint64_t seed) {
    if (classes < 1 || n < classes)
        throw std::invalid_argument("gen_blobs: need n >= classes >= 1");
    if (spread <= 0.0) throw std::invalid_argument("gen_blobs: spread must be > 0");
    if (dim < 1) throw std::invalid_argument("gen_blobs: dim must be >= 1");

    auto rng = make_rng(seed, /*stream=*/0xB70B5);
    double min_dist = separation * spread;
    // box side grows with the packing requirement
    double side = min_dist * (1.0 + std::pow(double(classes), 1.0 / double(dim)));

    std::vector<Tensor> centers;
    for (int attempt = 0; attempt < 20000 && centers.size() < classes; ++attempt) {
        Tensor c = random_uniform({dim}, 0.0, side, rng);
        bool ok = true;
        for (const Tensor& other : centers)
            if (squared_distance(c, other) < min_dist * min_dist) { ok = false; break; }
        if (ok) centers.push_back(std::move(c));
    }
    if (centers.size() < classes)
        throw std::runtime_error("gen_blobs: could not place " +
                                 std::to_string(classes) + " centers at distance " +
                                 std::to_string(min_dist) + " in dimension " +
                                 std::to_string(dim));

    Dataset ds;
    ds.name = "blobs";
    ds.num_classes = classes;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t cls = i % classes;  // class-balanced round robin
        Tensor x = random_normal({dim}, 0.0, spread, rng);
        for (std::size_t c = 0; c < dim; ++c) x[c] += centers[cls][c];
        ds.features.push_back(std::move(x));
        ds.labels.push_back(int(cls));
    }
    recompute_bounds(ds);
    return ds;
}

inline Dataset gen_blobs(std::size_t n, std::size_t classes, std::size_t dim,
                         double spread, std::uint64_t seed) {
    return gen_blobs_with_separation(n, classes, dim, spread, 6.0, seed);
}

/// Two overlapping classes along the all-ones axis, rescaled into [0, 1].
/// `separation` is the center distance in units of the class noise sigma;
/// values around 2-3 give a heavily overlapping decision boundary.
inline Dataset gen_overlap_blobs(std::size_t n, std::size_t dim, double separation,
                                 std::uint64_t seed) {
    if (n < 2 || dim < 1)
        throw std::invalid_argument("gen_overlap_blobs: need n >= 2, dim >= 1");
    auto rng = make_rng(seed, /*stream=*/0x0B7E);
    double half = separation / 2.0 / std::sqrt(double(dim));
    Dataset ds;
    ds.name = "overlap_blobs";
    ds.num_classes = 2;
    for (std::size_t i = 0; i < n; ++i) {
        int cls = int(i % 2);
        Tensor x = random_normal({dim}, 0.0, 1.0, rng);
        for (std::size_t c = 0; c < dim; ++c) x[c] += (cls == 0 ? -half : half);
        ds.features.push_back(std::move(x));
        ds.labels.push_back(cls);
    }
    // map into [0,1] with a fixed affine so epsilon fractions mean the same
    // thing across seeds
    double span = separation + 8.0;
    for (Tensor& x : ds.features)
        for (double& v : x.mutable_data())
            v = std::clamp((v + span / 2.0) / span, 0.0, 1.0);
    ds.lower_bound = Tensor::zeros({dim});
    ds.upper_bound = Tensor::full({dim}, 1.0);
    return ds;
}

struct CsvSchema {
    std::size_t feature_count = 0;
    double min_value = 0.0;    // raw feature range, rescaled to [0,1]
    double max_value = 1.0;
    std::size_t num_classes = 0;  // 0 means labels unchecked
};

/// Rows are `label,f1,...,fW`. Features are rescaled to [0,1] with the
/// schema bounds. An empty file yields a valid empty dataset.
inline Dataset load_csv_dataset(const std::string& path, const CsvSchema& schema) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_csv_dataset: cannot open " + path);
    if (schema.max_value <= schema.min_value)
        throw std::invalid_argument("load_csv_dataset: bad schema bounds");

    Dataset ds;
    ds.name = path;
    ds.num_classes = schema.num_classes;
    double range = schema.max_value - schema.min_value;

    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<double> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t pos = 0;
                cells.push_back(std::stod(cell, &pos));
                if (pos != cell.size()) throw std::invalid_argument(cell);
            } catch (const std::exception&) {
                throw std::runtime_error("load_csv_dataset: non-numeric cell '" + cell +
                                         "' at line " + std::to_string(lineno));
            }
        }
        if (cells.size() != schema.feature_count + 1)
            throw std::runtime_error("load_csv_dataset: expected " +
                                     std::to_string(schema.feature_count + 1) +
                                     " columns, got " + std::to_string(cells.size()) +
                                     " at line " + std::to_string(lineno));
        double rawlabel = cells[0];
        int label = int(rawlabel);
        if (double(label) != rawlabel || label < 0 ||
            (schema.num_classes > 0 && std::size_t(label) >= schema.num_classes))
            throw std::runtime_error("load_csv_dataset: unknown label '" +
                                     std::to_string(rawlabel) + "' at line " +
                                     std::to_string(lineno));
        Tensor x = Tensor::zeros({schema.feature_count});
        for (std::size_t c = 0; c < schema.feature_count; ++c)
            x[c] = (cells[c + 1] - schema.min_value) / range;
        ds.features.push_back(std::move(x));
        ds.labels.push_back(label);
    }
    std::size_t d = schema.feature_count;
    ds.lower_bound = Tensor::zeros({d});
    ds.upper_bound = Tensor::full({d}, 1.0);
    return ds;
}

struct AugmentationSpec {
    double noise_std = 0.0;
    double scale_lo = 1.0;
    double scale_hi = 1.0;
    double mask_prob = 0.0;
    std::size_t shift_amp = 0;  // circular coordinate shift amplitude

    void validate() const {
        if (noise_std < 0.0) throw std::invalid_argument("augment: noise_std < 0");
        if (scale_lo <= 0.0 || scale_lo > scale_hi)
            throw std::invalid_argument("augment: need 0 < scale_lo <= scale_hi");
        if (mask_prob < 0.0 || mask_prob > 1.0)
            throw std::invalid_argument("augment: mask_prob outside [0,1]");
    }

    bool is_identity() const {
        return noise_std == 0.0 && scale_lo == 1.0 && scale_hi == 1.0 &&
               mask_prob == 0.0 && shift_amp == 0;
    }
};

/// Stochastic view generation: scaling, additive noise, coordinate masking
/// and circular shift, clamped back to the dataset domain. Deterministic
/// given (x, spec, seed).
inline Tensor augment(const Tensor& x, const AugmentationSpec& spec, std::uint64_t seed,
                      const Tensor& lo, const Tensor& hi) {
    spec.validate();
    if (spec.is_identity()) return x;
    auto rng = make_rng(seed, /*stream=*/0xA46);
    Tensor v = x;

    if (spec.scale_lo != 1.0 || spec.scale_hi != 1.0) {
        double s = std::uniform_real_distribution<double>(spec.scale_lo, spec.scale_hi)(rng);
        for (double& e : v.mutable_data()) e *= s;
    }
    if (spec.noise_std > 0.0) {
        std::normal_distribution<double> noise(0.0, spec.noise_std);
        for (double& e : v.mutable_data()) e += noise(rng);
    }
    if (spec.mask_prob > 0.0) {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (double& e : v.mutable_data())
            if (u(rng) < spec.mask_prob) e = 0.0;
    }
    if (spec.shift_amp > 0 && v.size() > 1) {
        auto amp = long(spec.shift_amp);
        long shift = std::uniform_int_distribution<long>(-amp, amp)(rng);
        long n = long(v.size());
        shift = ((shift % n) + n) % n;
        if (shift != 0) {
            std::vector<double> rotated(v.size());
            for (long i = 0; i < n; ++i) rotated[std::size_t((i + shift) % n)] = v[std::size_t(i)];
            v = Tensor(std::vector<std::size_t>{v.size()}, std::move(rotated));
        }
    }
    for (std::size_t c = 0; c < v.size(); ++c)
        v[c] = std::clamp(v[c], lo[c], hi[c]);
    return v;
}

struct PairEntry {
    Tensor view1;
    Tensor view2;
    std::size_t source = 0;
    std::uint64_t aug_seed1 = 0;
    std::uint64_t aug_seed2 = 0;
    int pseudo1 = -1;  // cluster id of view1, -1 when unset
    int pseudo2 = -1;
    int beta = 0;      // +1 / -1, 0 when unset
    Tensor delta;      // perturbation of view1, zeros until an attack runs

    Tensor adversarial_view1() const {
        Tensor v = view1;
        for (std::size_t i = 0; i < v.size(); ++i) v[i] += delta[i];
        return v;
    }
};

/// A batch of positive view pairs. sigma maps each anchor i to the entry
/// whose view2 currently acts as its partner; it is the identity until
/// permute_pairs runs and again after reorder_to_original.
struct PairBatch {
    std::vector<PairEntry> entries;
    std::vector<std::size_t> sigma;
    bool permuted = false;

    std::size_t size() const { return entries.size(); }

    const Tensor& partner_view2(std::size_t i) const { return entries[sigma[i]].view2; }

    bool sigma_is_bijection() const {
        std::vector<std::size_t> s = sigma;
        std::sort(s.begin(), s.end());
        for (std::size_t i = 0; i < s.size(); ++i)
            if (s[i] != i) return false;
        return true;
    }
};

inline PairBatch make_pair_batch(const Dataset& ds, const std::vector<std::size_t>& indices,
                                 const AugmentationSpec& spec, std::uint64_t seed) {
    {
        std::vector<std::size_t> sorted = indices;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
            throw std::invalid_argument("make_pair_batch: duplicate indices");
        if (!sorted.empty() && sorted.back() >= ds.size())
            throw std::invalid_argument("make_pair_batch: index out of range");
    }
    PairBatch batch;
    for (std::size_t i = 0; i < indices.size(); ++i) {
        PairEntry e;
        e.source = indices[i];
        e.aug_seed1 = derive_seed(seed, 2 * i);
        e.aug_seed2 = derive_seed(seed, 2 * i + 1);
        const Tensor& x = ds.features[e.source];
        e.view1 = augment(x, spec, e.aug_seed1, ds.lower_bound, ds.upper_bound);
        e.view2 = augment(x, spec, e.aug_seed2, ds.lower_bound, ds.upper_bound);
        e.delta = Tensor::zeros({x.size()});
        batch.entries.push_back(std::move(e));
        batch.sigma.push_back(i);
    }
    return batch;
}

}  // namespace swaro
