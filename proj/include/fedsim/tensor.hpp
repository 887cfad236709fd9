#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "fedsim/errors.hpp"

namespace fedsim {

inline std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

inline std::string shape_string(const std::vector<std::size_t>& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

/// Dense row-major array of 64-bit floats. Invariant: data.size() equals the
/// product of the shape extents.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != shape_numel(shape))
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_string(shape));
    }

    static Tensor zeros(std::vector<std::size_t> s) {
        const std::size_t n = shape_numel(s);
        return Tensor(std::move(s), std::vector<double>(n, 0.0));
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }

    // 2-D accessors.
    std::size_t rows() const { return shape.at(0); }
    std::size_t cols() const { return shape.at(1); }
    double& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }
};

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!same_shape(a, b))
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a.shape) +
                         " vs " + shape_string(b.shape));
}

inline bool all_finite(const Tensor& t) {
    for (double v : t.data)
        if (!std::isfinite(v)) return false;
    return true;
}

// Rows/cols of a batch viewed as 2-D: dim 0 is the batch, the remaining
// extents flatten into the feature axis.
inline std::size_t batch_rows(const Tensor& t) {
    if (t.rank() < 1 || t.dim(0) == 0)
        throw ShapeError("batch tensor must have a non-empty leading dimension");
    return t.dim(0);
}

inline std::size_t batch_cols(const Tensor& t) { return t.numel() / batch_rows(t); }

// out[b,j] += sum_k x[b,k] * w[k,j]
inline void matmul_nn(const double* x, std::size_t b_rows, std::size_t k_dim,
                      const double* w, std::size_t n_cols, double* out) {
    for (std::size_t b = 0; b < b_rows; ++b) {
        const double* xrow = x + b * k_dim;
        double* orow = out + b * n_cols;
        for (std::size_t k = 0; k < k_dim; ++k) {
            const double xv = xrow[k];
            if (xv == 0.0) continue;
            const double* wrow = w + k * n_cols;
            for (std::size_t j = 0; j < n_cols; ++j) orow[j] += xv * wrow[j];
        }
    }
}

// out[b,k] = sum_j g[b,j] * w[k,j]
inline void matmul_nt(const double* g, std::size_t b_rows, std::size_t n_cols,
                      const double* w, std::size_t k_dim, double* out) {
    for (std::size_t b = 0; b < b_rows; ++b) {
        const double* grow = g + b * n_cols;
        double* orow = out + b * k_dim;
        for (std::size_t k = 0; k < k_dim; ++k) {
            const double* wrow = w + k * n_cols;
            double acc = 0.0;
            for (std::size_t j = 0; j < n_cols; ++j) acc += grow[j] * wrow[j];
            orow[k] = acc;
        }
    }
}

// dw[k,j] += sum_b x[b,k] * g[b,j]
inline void matmul_tn_acc(const double* x, std::size_t b_rows, std::size_t k_dim,
                          const double* g, std::size_t n_cols, double* dw) {
    for (std::size_t b = 0; b < b_rows; ++b) {
        const double* xrow = x + b * k_dim;
        const double* grow = g + b * n_cols;
        for (std::size_t k = 0; k < k_dim; ++k) {
            const double xv = xrow[k];
            if (xv == 0.0) continue;
            double* drow = dw + k * n_cols;
            for (std::size_t j = 0; j < n_cols; ++j) drow[j] += xv * grow[j];
        }
    }
}

}  // namespace fedsim
