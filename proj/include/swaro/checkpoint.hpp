#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "swaro/clustering.hpp"
#include "swaro/encoder.hpp"
#include "swaro/tensor.hpp"

namespace swaro {

/// Versioned binary checkpoint: encoder parameters, optional cluster model,
/// and a verbatim echo of the run configuration for provenance. Tensors are
/// stored as (rank, dims, little-endian 64-bit floats), so save->load->save
/// round-trips byte-identically.
struct Checkpoint {
    EncoderParams encoder;
    std::optional<ClusterModel> clusters;
    std::string config_echo;  // opaque; rewritten exactly as stored
};

namespace detail {

inline constexpr char kMagic[8] = {'S', 'W', 'A', 'R', 'O', 'C', 'P', '1'};
inline constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

inline void write_tensor(std::ostream& out, const Tensor& t) {
    write_pod<std::uint32_t>(out, std::uint32_t(t.rank()));
    for (std::size_t d : t.shape()) write_pod<std::uint64_t>(out, std::uint64_t(d));
    out.write(reinterpret_cast<const char*>(t.data().data()),
              std::streamsize(t.size() * sizeof(double)));
}

inline Tensor read_tensor(std::istream& in) {
    auto rank = read_pod<std::uint32_t>(in);
    if (rank > 8) throw std::runtime_error("checkpoint: implausible tensor rank");
    std::vector<std::size_t> shape;
    for (std::uint32_t i = 0; i < rank; ++i)
        shape.push_back(std::size_t(read_pod<std::uint64_t>(in)));
    std::size_t n = Tensor::element_count(shape);
    std::vector<double> data(n);
    in.read(reinterpret_cast<char*>(data.data()), std::streamsize(n * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint: truncated tensor data");
    return Tensor(std::move(shape), std::move(data));
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    out.write(detail::kMagic, sizeof(detail::kMagic));
    detail::write_pod<std::uint32_t>(out, detail::kVersion);

    detail::write_pod<std::uint8_t>(out, std::uint8_t(ckpt.encoder.activation));
    detail::write_pod<std::uint32_t>(out, std::uint32_t(ckpt.encoder.backbone.size()));
    for (const Layer& l : ckpt.encoder.backbone) {
        detail::write_tensor(out, l.weight);
        detail::write_tensor(out, l.bias);
    }
    for (const Layer& l : ckpt.encoder.head) {
        detail::write_tensor(out, l.weight);
        detail::write_tensor(out, l.bias);
    }

    detail::write_pod<std::uint8_t>(out, ckpt.clusters ? 1 : 0);
    if (ckpt.clusters) {
        detail::write_tensor(out, ckpt.clusters->centroids);
        detail::write_pod<std::uint64_t>(out, std::uint64_t(ckpt.clusters->k));
        detail::write_pod<double>(out, ckpt.clusters->inertia);
        detail::write_pod<std::uint64_t>(out, std::uint64_t(ckpt.clusters->iterations_run));
    }

    detail::write_pod<std::uint64_t>(out, std::uint64_t(ckpt.config_echo.size()));
    out.write(ckpt.config_echo.data(), std::streamsize(ckpt.config_echo.size()));
    if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, detail::kMagic, sizeof(magic)) != 0)
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    auto version = detail::read_pod<std::uint32_t>(in);
    if (version != detail::kVersion)
        throw std::runtime_error("load_checkpoint: unsupported version " +
                                 std::to_string(version));

    Checkpoint ckpt;
    ckpt.encoder.activation = Activation(detail::read_pod<std::uint8_t>(in));
    auto nlayers = detail::read_pod<std::uint32_t>(in);
    for (std::uint32_t i = 0; i < nlayers; ++i) {
        Layer l;
        l.weight = detail::read_tensor(in);
        l.bias = detail::read_tensor(in);
        ckpt.encoder.backbone.push_back(std::move(l));
    }
    for (Layer& l : ckpt.encoder.head) {
        l.weight = detail::read_tensor(in);
        l.bias = detail::read_tensor(in);
    }

    if (detail::read_pod<std::uint8_t>(in)) {
        ClusterModel m;
        m.centroids = detail::read_tensor(in);
        m.k = std::size_t(detail::read_pod<std::uint64_t>(in));
        m.inertia = detail::read_pod<double>(in);
        m.iterations_run = std::size_t(detail::read_pod<std::uint64_t>(in));
        ckpt.clusters = std::move(m);
    }

    auto echo_len = detail::read_pod<std::uint64_t>(in);
    ckpt.config_echo.resize(echo_len);
    in.read(ckpt.config_echo.data(), std::streamsize(echo_len));
    if (!in) throw std::runtime_error("load_checkpoint: truncated config echo");
    return ckpt;
}

}  // namespace swaro
