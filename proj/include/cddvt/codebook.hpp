#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "binary_io.hpp"
#include "errors.hpp"
#include "numerics.hpp"
#include "rng.hpp"

namespace cddvt {

/// M sub-codebooks of V' primitives, each primitive D'-dimensional. The global
/// embedding width is D = M * D' and the total primitive count is V = M * V'.
struct Codebook {
    std::size_t num_sub = 0;      // M
    std::size_t sub_size = 0;     // V'
    std::size_t prim_dim = 0;     // D'
    std::vector<Matrix> entries;  // M matrices of V' x D'
    std::vector<std::vector<std::uint64_t>> usage_counts;  // M x V'

    [[nodiscard]] std::size_t embed_dim() const noexcept { return num_sub * prim_dim; }
    [[nodiscard]] std::size_t total_primitives() const noexcept { return num_sub * sub_size; }

    void reset_usage() {
        for (auto& u : usage_counts) std::fill(u.begin(), u.end(), 0);
    }

    bool operator==(const Codebook&) const = default;
};

/// Row j is the centroid (mean primitive) of sub-codebook j.
struct CentroidSet {
    Matrix centroids;
};

/// Entries i.i.d. uniform on [-1/V', 1/V'].
inline Codebook init_codebook(std::size_t num_sub, std::size_t sub_size, std::size_t prim_dim, std::uint64_t seed) {
    if (num_sub == 0 || sub_size == 0 || prim_dim == 0)
        throw ArgumentError("init_codebook: M, V', D' must all be >= 1");
    Rng rng(seed);
    const double bound = 1.0 / static_cast<double>(sub_size);
    Codebook cb{num_sub, sub_size, prim_dim, {}, {}};
    cb.entries.reserve(num_sub);
    for (std::size_t j = 0; j < num_sub; ++j) {
        Matrix m(sub_size, prim_dim);
        for (double& v : m.data()) v = rng.uniform(-bound, bound);
        cb.entries.push_back(std::move(m));
    }
    cb.usage_counts.assign(num_sub, std::vector<std::uint64_t>(sub_size, 0));
    return cb;
}

inline CentroidSet centroids(const Codebook& cb) {
    Matrix c(cb.num_sub, cb.prim_dim);
    for (std::size_t j = 0; j < cb.num_sub; ++j) {
        const Matrix& e = cb.entries[j];
        for (std::size_t i = 0; i < e.rows(); ++i)
            for (std::size_t k = 0; k < e.cols(); ++k) c(j, k) += e(i, k);
        for (std::size_t k = 0; k < e.cols(); ++k) c(j, k) /= static_cast<double>(e.rows());
    }
    return CentroidSet{std::move(c)};
}

struct LossWithGrad {
    double value = 0.0;
    Matrix grad;
};

/// Mean pairwise cosine similarity over the M(M-1)/2 centroid pairs, and its
/// gradient with respect to every centroid. M = 1 has no pairs: value 0, zero gradient.
inline LossWithGrad diversity_loss(const CentroidSet& cs) {
    const Matrix& c = cs.centroids;
    const std::size_t m = c.rows();
    LossWithGrad out{0.0, Matrix(m, c.cols())};
    if (m < 2) return out;
    const double scale = 2.0 / (static_cast<double>(m) * static_cast<double>(m - 1));
    for (std::size_t j = 0; j < m; ++j) {
        for (std::size_t k = j + 1; k < m; ++k) {
            out.value += cosine(c.row(j), c.row(k));
            accumulate_cosine_grad(c.row(j), c.row(k), scale, out.grad.row(j));
            accumulate_cosine_grad(c.row(k), c.row(j), scale, out.grad.row(k));
        }
    }
    out.value *= scale;
    return out;
}

/// Spreads a centroid gradient onto the primitives: each primitive of
/// sub-codebook j receives grad_j / V'.
inline std::vector<Matrix> centroid_grad_to_entries(const Codebook& cb, const Matrix& centroid_grad) {
    if (centroid_grad.rows() != cb.num_sub || centroid_grad.cols() != cb.prim_dim)
        throw ShapeError("centroid_grad_to_entries: gradient shape does not match M x D'");
    std::vector<Matrix> g;
    g.reserve(cb.num_sub);
    const double inv = 1.0 / static_cast<double>(cb.sub_size);
    for (std::size_t j = 0; j < cb.num_sub; ++j) {
        Matrix gj(cb.sub_size, cb.prim_dim);
        for (std::size_t i = 0; i < cb.sub_size; ++i)
            for (std::size_t k = 0; k < cb.prim_dim; ++k) gj(i, k) = centroid_grad(j, k) * inv;
        g.push_back(std::move(gj));
    }
    return g;
}

/// Update rule applied to one sub-codebook: (sub index, entries, gradient).
using CodebookStepRule = std::function<void(std::size_t, Matrix&, const Matrix&)>;

/// Plain gradient descent: x <- x - lr * g.
inline CodebookStepRule sgd_rule(double lr) {
    return [lr](std::size_t, Matrix& x, const Matrix& g) {
        for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] -= lr * g.data()[i];
    };
}

/// Applies `rule` to every sub-codebook. Usage counts are left untouched.
inline void apply_codebook_grads(Codebook& cb, const std::vector<Matrix>& grads, const CodebookStepRule& rule) {
    if (grads.size() != cb.num_sub) throw ShapeError("apply_codebook_grads: expected one gradient per sub-codebook");
    for (std::size_t j = 0; j < cb.num_sub; ++j) {
        require_same_shape(cb.entries[j], grads[j], "apply_codebook_grads");
        rule(j, cb.entries[j], grads[j]);
    }
}

// Binary layout: "CDDV", version u32, M u32, V' u32, D' u32, then entries as
// f64 (sub-codebook major, row-major), then usage counts as u64. All little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_codebook(ByteWriter& w, const Codebook& cb) {
    w.tag("CDDV");
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(cb.num_sub));
    w.u32(static_cast<std::uint32_t>(cb.sub_size));
    w.u32(static_cast<std::uint32_t>(cb.prim_dim));
    for (const Matrix& e : cb.entries)
        for (double v : e.data()) w.f64(v);
    for (const auto& u : cb.usage_counts)
        for (std::uint64_t c : u) w.u64(c);
}

inline Codebook read_codebook(ByteReader& r) {
    const std::size_t start = r.offset();
    if (r.tag() != "CDDV") throw ParseError("bad checkpoint magic (expected CDDV)", start);
    const std::size_t vat = r.offset();
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw ParseError("unsupported checkpoint version " + std::to_string(version), vat);
    const std::size_t dims_at = r.offset();
    Codebook cb;
    cb.num_sub = r.u32();
    cb.sub_size = r.u32();
    cb.prim_dim = r.u32();
    if (cb.num_sub == 0 || cb.sub_size == 0 || cb.prim_dim == 0)
        throw ParseError("codebook dimensions must be non-zero", dims_at);
    const std::uint64_t need = static_cast<std::uint64_t>(cb.num_sub) * cb.sub_size * (cb.prim_dim * 8 + 8);
    if (need > r.remaining()) throw ParseError("codebook payload truncated", r.offset());
    for (std::size_t j = 0; j < cb.num_sub; ++j) {
        const std::size_t at = r.offset();
        std::vector<double> data(cb.sub_size * cb.prim_dim);
        for (double& v : data) v = r.f64();
        try {
            cb.entries.emplace_back(cb.sub_size, cb.prim_dim, std::move(data));
        } catch (const NumericalError&) {
            throw ParseError("codebook contains non-finite entries", at);
        }
    }
    cb.usage_counts.assign(cb.num_sub, std::vector<std::uint64_t>(cb.sub_size));
    for (auto& u : cb.usage_counts)
        for (auto& c : u) c = r.u64();
    return cb;
}

inline void save_codebook(const Codebook& cb, const std::string& path) {
    ByteWriter w;
    write_codebook(w, cb);
    write_file(path, w.buffer());
}

inline Codebook load_codebook(const std::string& path) {
    const Bytes bytes = read_file(path);
    ByteReader r(bytes);
    return read_codebook(r);
}

}  // namespace cddvt
