#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/tensor.hpp"

namespace fedsim {

/// Labeled image set. Pixel values live in [0,1], labels in [0,num_classes).
struct Dataset {
    Tensor images;  // N x H x W
    std::vector<int> labels;
    int num_classes = 0;

    std::size_t size() const { return labels.size(); }
    std::size_t height() const { return images.dim(1); }
    std::size_t width() const { return images.dim(2); }

    void validate() const {
        if (images.rank() != 3 || images.dim(0) != labels.size())
            throw ShapeError("dataset images must be N x H x W with one label per image");
        for (int y : labels)
            if (y < 0 || y >= num_classes)
                throw LabelError("dataset label outside [0,num_classes)");
        for (double v : images.data)
            if (!(v >= 0.0 && v <= 1.0))
                throw ShapeError("dataset pixel outside [0,1]");
    }
};

inline Dataset take_indices(const Dataset& ds, const std::vector<std::size_t>& idx) {
    const std::size_t h = ds.height(), w = ds.width();
    Dataset out;
    out.images = Tensor::zeros({idx.size(), h, w});
    out.labels.reserve(idx.size());
    out.num_classes = ds.num_classes;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        std::copy_n(ds.images.data.begin() + static_cast<std::ptrdiff_t>(idx[i] * h * w),
                    h * w, out.images.data.begin() + static_cast<std::ptrdiff_t>(i * h * w));
        out.labels.push_back(ds.labels[idx[i]]);
    }
    return out;
}

namespace detail {

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

inline std::uint32_t read_u32_be(std::istream& in, std::size_t& offset, const char* what) {
    unsigned char buf[4];
    in.read(reinterpret_cast<char*>(buf), 4);
    if (!in)
        throw FormatError(std::string("truncated file while reading ") + what, offset);
    offset += 4;
    return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
           (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

inline void write_u32_be(std::ostream& out, std::uint32_t v) {
    const unsigned char buf[4] = {static_cast<unsigned char>(v >> 24),
                                  static_cast<unsigned char>(v >> 16),
                                  static_cast<unsigned char>(v >> 8),
                                  static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(buf), 4);
}

}  // namespace detail

/// Reads an IDX image/label file pair (big-endian, magics 0x00000803 and
/// 0x00000801). Pixel bytes are scaled by 1/255 into [0,1].
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw IoError("cannot open images file: " + images_path);
    std::size_t offset = 0;
    const std::uint32_t img_magic = detail::read_u32_be(img, offset, "images magic");
    if (img_magic != detail::kIdxImagesMagic)
        throw FormatError("bad images magic in " + images_path, 0);
    const std::uint32_t n = detail::read_u32_be(img, offset, "image count");
    const std::uint32_t h = detail::read_u32_be(img, offset, "image height");
    const std::uint32_t w = detail::read_u32_be(img, offset, "image width");
    std::vector<unsigned char> bytes(static_cast<std::size_t>(n) * h * w);
    img.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (static_cast<std::size_t>(img.gcount()) != bytes.size())
        throw FormatError("truncated image data in " + images_path,
                          offset + static_cast<std::size_t>(img.gcount()));

    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw IoError("cannot open labels file: " + labels_path);
    std::size_t lab_offset = 0;
    const std::uint32_t lab_magic = detail::read_u32_be(lab, lab_offset, "labels magic");
    if (lab_magic != detail::kIdxLabelsMagic)
        throw FormatError("bad labels magic in " + labels_path, 0);
    const std::uint32_t n_labels = detail::read_u32_be(lab, lab_offset, "label count");
    if (n_labels != n)
        throw FormatError("label count " + std::to_string(n_labels) +
                              " does not match image count " + std::to_string(n),
                          4);
    std::vector<unsigned char> label_bytes(n_labels);
    lab.read(reinterpret_cast<char*>(label_bytes.data()),
             static_cast<std::streamsize>(label_bytes.size()));
    if (static_cast<std::size_t>(lab.gcount()) != label_bytes.size())
        throw FormatError("truncated label data in " + labels_path,
                          lab_offset + static_cast<std::size_t>(lab.gcount()));

    Dataset ds;
    ds.images = Tensor::zeros({n, h, w});
    for (std::size_t i = 0; i < bytes.size(); ++i)
        ds.images.data[i] = static_cast<double>(bytes[i]) / 255.0;
    ds.labels.assign(label_bytes.begin(), label_bytes.end());
    int max_label = 0;
    for (int y : ds.labels) max_label = std::max(max_label, y);
    ds.num_classes = max_label + 1;
    return ds;
}

/// Writes a dataset back out as an IDX pair (pixels quantized to bytes).
/// Lets synthetic fixtures flow through the same loader as real data.
inline void save_idx(const Dataset& ds, const std::string& images_path,
                     const std::string& labels_path) {
    std::ofstream img(images_path, std::ios::binary);
    if (!img) throw IoError("cannot open images file for write: " + images_path);
    detail::write_u32_be(img, detail::kIdxImagesMagic);
    detail::write_u32_be(img, static_cast<std::uint32_t>(ds.size()));
    detail::write_u32_be(img, static_cast<std::uint32_t>(ds.height()));
    detail::write_u32_be(img, static_cast<std::uint32_t>(ds.width()));
    for (double v : ds.images.data) {
        const long q = std::lround(std::min(1.0, std::max(0.0, v)) * 255.0);
        const unsigned char b = static_cast<unsigned char>(q);
        img.write(reinterpret_cast<const char*>(&b), 1);
    }
    if (!img) throw IoError("failed writing " + images_path);

    std::ofstream lab(labels_path, std::ios::binary);
    if (!lab) throw IoError("cannot open labels file for write: " + labels_path);
    detail::write_u32_be(lab, detail::kIdxLabelsMagic);
    detail::write_u32_be(lab, static_cast<std::uint32_t>(ds.size()));
    for (int y : ds.labels) {
        const unsigned char b = static_cast<unsigned char>(y);
        lab.write(reinterpret_cast<const char*>(&b), 1);
    }
    if (!lab) throw IoError("failed writing " + labels_path);
}

/// Deterministic Gaussian blobs around per-class unit-norm centers, clamped
/// to [0,1]. Linearly separable for small spread; the standing test-oracle
/// dataset when no image data is on disk.
inline Dataset synthesize_blobs(int n_classes, int n_per_class, int dim, double spread,
                                std::uint64_t seed) {
    if (n_classes <= 0 || n_per_class <= 0 || dim <= 0 || spread < 0.0)
        throw ConfigError("synthesize_blobs arguments must be positive");
    Dataset ds;
    const std::size_t n = static_cast<std::size_t>(n_classes) * n_per_class;
    ds.images = Tensor::zeros({n, 1, static_cast<std::size_t>(dim)});
    ds.labels.reserve(n);
    ds.num_classes = n_classes;
    std::size_t row = 0;
    for (int c = 0; c < n_classes; ++c) {
        RngStream center_rng{derive_key(seed, purpose::kBlobCenter, static_cast<std::uint64_t>(c))};
        std::vector<double> center(dim);
        double norm2 = 0.0;
        for (auto& v : center) {
            v = center_rng.next_double_open();
            norm2 += v * v;
        }
        const double inv_norm = 1.0 / std::sqrt(norm2);
        for (auto& v : center) v *= inv_norm;

        RngStream noise_rng{derive_key(seed, purpose::kBlobNoise, static_cast<std::uint64_t>(c))};
        for (int s = 0; s < n_per_class; ++s, ++row) {
            double* px = ds.images.data.data() + row * dim;
            for (int d = 0; d < dim; ++d) {
                const double v = center[d] + (spread > 0.0 ? spread * noise_rng.normal() : 0.0);
                px[d] = std::min(1.0, std::max(0.0, v));
            }
            ds.labels.push_back(c);
        }
    }
    return ds;
}

/// Uniform subsample without replacement, size round(frac * N), deterministic
/// per seed. Selected indices keep ascending order.
inline Dataset subsample_fraction(const Dataset& ds, double frac, std::uint64_t seed) {
    if (!(frac > 0.0 && frac <= 1.0))
        throw ConfigError("subsample fraction must be in (0,1]");
    const std::size_t n = ds.size();
    const std::size_t k = static_cast<std::size_t>(
        std::llround(frac * static_cast<double>(n)));
    if (k == 0) throw ConfigError("subsample fraction yields an empty dataset");

    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    RngStream rng{derive_key(seed, purpose::kSubsample)};
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.next_below(n - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return take_indices(ds, idx);
}

}  // namespace fedsim
