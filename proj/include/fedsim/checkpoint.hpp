#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>

#include "fedsim/errors.hpp"
#include "fedsim/federation.hpp"
#include "fedsim/network.hpp"

namespace fedsim {

/// Round snapshot: global model, optional global feature bank, and the
/// resolved config echo so a checkpoint is self-describing.
///
/// On-disk layout (version 1, little-endian):
///   magic "FSIMCKPT" | u32 version | u32 round
///   u32 n_layers, then per layer: u32 in, u32 out, u8 activation,
///     f64[in*out] weights, f64[out] bias
///   u8 has_bank; if set: u32 num_classes, u32 feature_dim, then per class
///     u64 count and, when count > 0, f64[feature_dim] mean
///   u64 config length, config bytes (key = value lines)
struct Checkpoint {
    std::uint32_t round = 0;
    Network net;
    std::optional<FeatureBank> bank;
    std::string config_echo;
};

namespace detail {

inline constexpr char kCkptMagic[8] = {'F', 'S', 'I', 'M', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCkptVersion = 1;

template <typename T>
void write_le(std::ostream& out, T v) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& in, std::size_t& offset, const char* what) {
    unsigned char buf[sizeof(T)];
    in.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!in) throw FormatError(std::string("truncated checkpoint while reading ") + what, offset);
    offset += sizeof(T);
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

inline void write_doubles(std::ostream& out, const std::vector<double>& v) {
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline void read_doubles(std::istream& in, std::size_t& offset, std::vector<double>& v,
                         const char* what) {
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!in) throw FormatError(std::string("truncated checkpoint while reading ") + what, offset);
    offset += v.size() * sizeof(double);
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for write");
    out.write(detail::kCkptMagic, 8);
    detail::write_le<std::uint32_t>(out, detail::kCkptVersion);
    detail::write_le<std::uint32_t>(out, ckpt.round);

    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.net.layers.size()));
    for (const auto& layer : ckpt.net.layers) {
        detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(layer.in_dim()));
        detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(layer.out_dim()));
        detail::write_le<std::uint8_t>(
            out, layer.activation == Activation::kRelu ? std::uint8_t(1) : std::uint8_t(0));
        detail::write_doubles(out, layer.weights.data);
        detail::write_doubles(out, layer.bias.data);
    }

    detail::write_le<std::uint8_t>(out, ckpt.bank ? std::uint8_t(1) : std::uint8_t(0));
    if (ckpt.bank) {
        detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.bank->num_classes()));
        detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.bank->feature_dim));
        for (std::size_t c = 0; c < ckpt.bank->num_classes(); ++c) {
            detail::write_le<std::uint64_t>(out, ckpt.bank->counts[c]);
            if (ckpt.bank->counts[c] > 0) detail::write_doubles(out, ckpt.bank->means[c]);
        }
    }

    detail::write_le<std::uint64_t>(out, ckpt.config_echo.size());
    out.write(ckpt.config_echo.data(), static_cast<std::streamsize>(ckpt.config_echo.size()));
    if (!out) throw IoError("failed writing " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::size_t offset = 0;
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, detail::kCkptMagic, 8) != 0)
        throw FormatError("bad checkpoint magic in " + path, 0);
    offset += 8;
    const auto version = detail::read_le<std::uint32_t>(in, offset, "version");
    if (version != detail::kCkptVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version), offset - 4);

    Checkpoint ckpt;
    ckpt.round = detail::read_le<std::uint32_t>(in, offset, "round");
    const auto n_layers = detail::read_le<std::uint32_t>(in, offset, "layer count");
    for (std::uint32_t l = 0; l < n_layers; ++l) {
        const auto in_dim = detail::read_le<std::uint32_t>(in, offset, "layer in dim");
        const auto out_dim = detail::read_le<std::uint32_t>(in, offset, "layer out dim");
        const auto act = detail::read_le<std::uint8_t>(in, offset, "layer activation");
        DenseLayer layer;
        layer.weights = Tensor::zeros({in_dim, out_dim});
        layer.bias = Tensor::zeros({out_dim});
        layer.activation = act ? Activation::kRelu : Activation::kIdentity;
        detail::read_doubles(in, offset, layer.weights.data, "layer weights");
        detail::read_doubles(in, offset, layer.bias.data, "layer bias");
        ckpt.net.layers.push_back(std::move(layer));
    }
    if (ckpt.net.layers.empty()) throw FormatError("checkpoint holds no layers", offset);

    if (detail::read_le<std::uint8_t>(in, offset, "bank flag")) {
        FeatureBank bank;
        const auto n_classes = detail::read_le<std::uint32_t>(in, offset, "bank classes");
        bank.feature_dim = detail::read_le<std::uint32_t>(in, offset, "bank feature dim");
        bank.counts.resize(n_classes);
        bank.means.resize(n_classes);
        for (std::uint32_t c = 0; c < n_classes; ++c) {
            bank.counts[c] = detail::read_le<std::uint64_t>(in, offset, "bank count");
            if (bank.counts[c] > 0) {
                bank.means[c].resize(bank.feature_dim);
                detail::read_doubles(in, offset, bank.means[c], "bank mean");
            }
        }
        ckpt.bank = std::move(bank);
    }

    const auto cfg_len = detail::read_le<std::uint64_t>(in, offset, "config length");
    ckpt.config_echo.resize(cfg_len);
    in.read(ckpt.config_echo.data(), static_cast<std::streamsize>(cfg_len));
    if (!in) throw FormatError("truncated checkpoint while reading config echo", offset);
    return ckpt;
}

}  // namespace fedsim
