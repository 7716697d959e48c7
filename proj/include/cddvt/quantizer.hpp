#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "allocator.hpp"
#include "codebook.hpp"
#include "errors.hpp"
#include "numerics.hpp"

namespace cddvt {

/// How many primitives each patch may combine.
struct QuantizeMode {
    enum class Kind { Warmup, FixedTopN, Adaptive };
    Kind kind = Kind::Warmup;
    std::size_t count = 1;  // n for FixedTopN, K for Adaptive, 1 for Warmup

    static QuantizeMode warmup() { return {Kind::Warmup, 1}; }
    static QuantizeMode fixed_top_n(std::size_t n) { return {Kind::FixedTopN, n}; }
    static QuantizeMode adaptive(std::size_t k) { return {Kind::Adaptive, k}; }

    [[nodiscard]] std::string name() const {
        switch (kind) {
            case Kind::Warmup: return "top1";
            case Kind::FixedTopN: return "top" + std::to_string(count);
            case Kind::Adaptive: return "adaptive" + std::to_string(count);
        }
        return "?";
    }

    bool operator==(const QuantizeMode&) const = default;
};

/// Rule that turns the similarities of the selected primitives into weights.
enum class Weighting {
    Softmax,  // exp(s / temperature), normalized
    Linear,   // (1 + s), normalized
};

struct QuantizeOptions {
    double temperature = 1.0;
    std::size_t pool_size = 0;  // candidate pool per sub-codebook; 0 = the mode's maximum count
    Weighting weighting = Weighting::Softmax;
    double beta = 0.25;  // commitment weight on the encoder-side term
};

struct PatchAllocation {
    double ratio = 0.0;  // allocator ratio when one was supplied, otherwise 0
    std::size_t count = 1;
    std::vector<std::vector<std::size_t>> indices;  // per sub-codebook, length count
    std::vector<std::vector<double>> weights;       // per sub-codebook, length count, sums to 1
};

struct AllocationMap {
    std::size_t max_count = 1;  // K
    std::vector<PatchAllocation> patches;

    [[nodiscard]] std::vector<std::size_t> counts() const {
        std::vector<std::size_t> c(patches.size());
        for (std::size_t i = 0; i < patches.size(); ++i) c[i] = patches[i].count;
        return c;
    }
};

struct QuantizeOutput {
    Matrix z_hat;
    AllocationMap alloc;
    double commit_loss = 0.0;
    std::vector<double> per_patch_error;
    std::vector<std::vector<std::uint64_t>> usage;  // selections made by this call, M x V'
};

/// Splits columns into M contiguous slices of width D/M.
inline std::vector<Matrix> chunk_embeddings(const Matrix& z, std::size_t num_sub) {
    if (num_sub == 0 || z.cols() % num_sub != 0)
        throw ConfigError("chunk_embeddings: D=" + std::to_string(z.cols()) + " is not divisible by M=" +
                          std::to_string(num_sub));
    const std::size_t w = z.cols() / num_sub;
    std::vector<Matrix> chunks(num_sub, Matrix(z.rows(), w));
    for (std::size_t r = 0; r < z.rows(); ++r)
        for (std::size_t j = 0; j < num_sub; ++j)
            for (std::size_t k = 0; k < w; ++k) chunks[j](r, k) = z(r, j * w + k);
    return chunks;
}

inline Matrix concat_chunks(const std::vector<Matrix>& chunks) {
    if (chunks.empty()) return {};
    const std::size_t rows = chunks.front().rows();
    std::size_t cols = 0;
    for (const Matrix& c : chunks) {
        if (c.rows() != rows) throw ShapeError("concat_chunks: row counts differ");
        cols += c.cols();
    }
    Matrix z(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        std::size_t off = 0;
        for (const Matrix& c : chunks) {
            for (std::size_t k = 0; k < c.cols(); ++k) z(r, off + k) = c(r, k);
            off += c.cols();
        }
    }
    return z;
}

inline std::vector<double> selection_weights(std::span<const double> selected_sims, double temperature,
                                             Weighting weighting) {
    std::vector<double> w(selected_sims.size());
    if (weighting == Weighting::Softmax) {
        std::vector<std::size_t> all(selected_sims.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        return masked_softmax(selected_sims, all, temperature);
    }
    double total = 0.0;
    for (std::size_t t = 0; t < w.size(); ++t) {
        w[t] = std::max(1.0 + selected_sims[t], 1e-12);
        total += w[t];
    }
    for (double& v : w) v /= total;
    return w;
}

/// d loss / d sims given d loss / d weights.
inline std::vector<double> selection_weights_backward(std::span<const double> selected_sims,
                                                      std::span<const double> weights,
                                                      std::span<const double> d_weights, double temperature,
                                                      Weighting weighting) {
    double mean = 0.0;
    for (std::size_t t = 0; t < weights.size(); ++t) mean += weights[t] * d_weights[t];
    std::vector<double> ds(weights.size());
    if (weighting == Weighting::Softmax) {
        for (std::size_t t = 0; t < weights.size(); ++t) ds[t] = weights[t] * (d_weights[t] - mean) / temperature;
        return ds;
    }
    double total = 0.0;
    for (double s : selected_sims) total += std::max(1.0 + s, 1e-12);
    for (std::size_t t = 0; t < weights.size(); ++t)
        ds[t] = (1.0 + selected_sims[t] > 1e-12) ? (d_weights[t] - mean) / total : 0.0;
    return ds;
}

struct ChunkQuantization {
    std::vector<double> output;
    std::vector<std::size_t> indices;
    std::vector<double> weights;
};

/// Pools the `pool_size` most similar primitives, keeps the best `count` of
/// them, and returns their similarity-weighted sum.
inline ChunkQuantization quantize_chunk(std::span<const double> chunk_row, const Matrix& sub_cb, std::size_t count,
                                        std::size_t pool_size, double temperature = 1.0,
                                        Weighting weighting = Weighting::Softmax) {
    if (chunk_row.size() != sub_cb.cols()) throw ShapeError("quantize_chunk: chunk width != primitive dimension");
    if (count < 1 || count > pool_size || pool_size > sub_cb.rows())
        throw ArgumentError("quantize_chunk: need 1 <= n (" + std::to_string(count) + ") <= K_pool (" +
                            std::to_string(pool_size) + ") <= V' (" + std::to_string(sub_cb.rows()) + ")");
    std::vector<double> sims(sub_cb.rows());
    for (std::size_t i = 0; i < sub_cb.rows(); ++i) sims[i] = cosine(chunk_row, sub_cb.row(i));
    std::vector<std::size_t> pool = top_k_indices(sims, pool_size);
    pool.resize(count);

    std::vector<double> selected_sims(count);
    for (std::size_t t = 0; t < count; ++t) selected_sims[t] = sims[pool[t]];
    ChunkQuantization q{std::vector<double>(sub_cb.cols(), 0.0), std::move(pool),
                        selection_weights(selected_sims, temperature, weighting)};
    for (std::size_t t = 0; t < count; ++t) {
        const auto prim = sub_cb.row(q.indices[t]);
        for (std::size_t k = 0; k < prim.size(); ++k) q.output[k] += q.weights[t] * prim[k];
    }
    return q;
}

namespace detail {

inline std::size_t resolve_count(const QuantizeMode& mode, const std::vector<std::size_t>& adaptive, std::size_t patch) {
    switch (mode.kind) {
        case QuantizeMode::Kind::Warmup: return 1;
        case QuantizeMode::Kind::FixedTopN: return mode.count;
        case QuantizeMode::Kind::Adaptive: return adaptive[patch];
    }
    return 1;
}

}  // namespace detail

inline std::size_t pool_size_for(const QuantizeMode& mode, const QuantizeOptions& opts, std::size_t sub_size) {
    const std::size_t max_n = mode.kind == QuantizeMode::Kind::Warmup ? 1 : mode.count;
    const std::size_t pool = opts.pool_size == 0 ? max_n : std::max(opts.pool_size, max_n);
    return std::min(pool, sub_size);
}

inline void validate_mode(const QuantizeMode& mode, const Codebook& cb) {
    if (mode.kind != QuantizeMode::Kind::Warmup && (mode.count < 1 || mode.count > cb.sub_size))
        throw ConfigError("quantize: mode " + mode.name() + " needs a count in [1, V'=" + std::to_string(cb.sub_size) +
                          "]");
}

struct CommitmentLoss {
    double value = 0.0;
    Matrix d_z;      // encoder side: beta * 2 (Z - Zhat) / N
    Matrix d_z_hat;  // codebook side: 2 (Zhat - Z) / N
};

/// beta * mean_i |Z_i - sg(Zhat_i)|^2 + mean_i |sg(Z_i) - Zhat_i|^2, means over patches.
inline CommitmentLoss commitment_loss(const Matrix& z, const Matrix& z_hat, double beta) {
    require_same_shape(z, z_hat, "commitment_loss");
    if (beta < 0.0) throw ArgumentError("commitment_loss: beta must be >= 0");
    CommitmentLoss out{0.0, Matrix(z.rows(), z.cols()), Matrix(z.rows(), z.cols())};
    if (z.rows() == 0) return out;
    const double inv = 1.0 / static_cast<double>(z.rows());
    double sq = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double d = z.data()[i] - z_hat.data()[i];
        sq += d * d;
        out.d_z.data()[i] = beta * 2.0 * d * inv;
        out.d_z_hat.data()[i] = -2.0 * d * inv;
    }
    out.value = (beta + 1.0) * sq * inv;
    return out;
}

/// Full quantization map. `ratios` is required for Adaptive mode and recorded
/// in the allocation map whenever supplied. Every selection increments the
/// codebook's usage counters.
inline QuantizeOutput quantize(const Matrix& z, Codebook& cb, const RatioVector* ratios, const QuantizeMode& mode,
                               const QuantizeOptions& opts = {}) {
    validate_mode(mode, cb);
    if (z.cols() != cb.embed_dim())
        throw ShapeError("quantize: embedding width " + std::to_string(z.cols()) + " != M*D' = " +
                         std::to_string(cb.embed_dim()));
    if (ratios && ratios->values.size() != z.rows()) throw ShapeError("quantize: ratio vector length != patch count");
    if (mode.kind == QuantizeMode::Kind::Adaptive && !ratios)
        throw ConfigError("quantize: adaptive mode requires allocation ratios");

    const std::size_t pool = pool_size_for(mode, opts, cb.sub_size);
    std::vector<std::size_t> adaptive;
    if (mode.kind == QuantizeMode::Kind::Adaptive) adaptive = count_from_ratio(ratios->values, mode.count);

    QuantizeOutput out;
    out.z_hat = Matrix(z.rows(), z.cols());
    out.alloc.max_count = mode.kind == QuantizeMode::Kind::Warmup ? 1 : mode.count;
    out.alloc.patches.resize(z.rows());
    out.per_patch_error.resize(z.rows());
    out.usage.assign(cb.num_sub, std::vector<std::uint64_t>(cb.sub_size, 0));

    const std::size_t w = cb.prim_dim;
    for (std::size_t i = 0; i < z.rows(); ++i) {
        PatchAllocation& pa = out.alloc.patches[i];
        pa.ratio = ratios ? ratios->values[i] : 0.0;
        pa.count = detail::resolve_count(mode, adaptive, i);
        pa.indices.resize(cb.num_sub);
        pa.weights.resize(cb.num_sub);
        const auto zrow = z.row(i);
        for (std::size_t j = 0; j < cb.num_sub; ++j) {
            ChunkQuantization q =
                quantize_chunk(zrow.subspan(j * w, w), cb.entries[j], pa.count, pool, opts.temperature, opts.weighting);
            for (std::size_t k = 0; k < w; ++k) out.z_hat(i, j * w + k) = q.output[k];
            for (std::size_t idx : q.indices) ++out.usage[j][idx];
            pa.indices[j] = std::move(q.indices);
            pa.weights[j] = std::move(q.weights);
        }
        out.per_patch_error[i] = squared_distance(out.z_hat.row(i), zrow);
    }
    for (std::size_t j = 0; j < cb.num_sub; ++j)
        for (std::size_t v = 0; v < cb.sub_size; ++v) cb.usage_counts[j][v] += out.usage[j][v];
    out.commit_loss = commitment_loss(z, out.z_hat, opts.beta).value;
    return out;
}

struct QuantizeGrads {
    std::vector<Matrix> codebook;  // per sub-codebook, V' x D'
    Matrix z;                      // through the similarity weights only
};

/// Backward through the weighted sum with the selection held fixed. Gradients
/// flow into the selected primitives (directly and through their weights) and
/// into Z through the weights.
inline QuantizeGrads quantize_backward(const Matrix& z, const Codebook& cb, const AllocationMap& alloc,
                                       const Matrix& d_z_hat, const QuantizeOptions& opts = {}) {
    require_same_shape(z, d_z_hat, "quantize_backward");
    if (alloc.patches.size() != z.rows()) throw ShapeError("quantize_backward: allocation map size != patch count");
    QuantizeGrads g;
    g.codebook.assign(cb.num_sub, Matrix(cb.sub_size, cb.prim_dim));
    g.z = Matrix(z.rows(), z.cols());
    const std::size_t w = cb.prim_dim;
    for (std::size_t i = 0; i < z.rows(); ++i) {
        const PatchAllocation& pa = alloc.patches[i];
        for (std::size_t j = 0; j < cb.num_sub; ++j) {
            const auto zc = z.row(i).subspan(j * w, w);
            const auto dq = d_z_hat.row(i).subspan(j * w, w);
            auto dzc = g.z.row(i).subspan(j * w, w);
            const auto& idx = pa.indices[j];
            const Matrix& sub = cb.entries[j];
            std::vector<double> sims(idx.size()), dw(idx.size());
            for (std::size_t t = 0; t < idx.size(); ++t) {
                sims[t] = cosine(zc, sub.row(idx[t]));
                dw[t] = dot(dq, sub.row(idx[t]));
            }
            const std::vector<double> weights = selection_weights(sims, opts.temperature, opts.weighting);
            const std::vector<double> ds =
                selection_weights_backward(sims, weights, dw, opts.temperature, opts.weighting);
            for (std::size_t t = 0; t < idx.size(); ++t) {
                auto dc = g.codebook[j].row(idx[t]);
                for (std::size_t k = 0; k < w; ++k) dc[k] += weights[t] * dq[k];
                accumulate_cosine_grad(sub.row(idx[t]), zc, ds[t], dc);
                accumulate_cosine_grad(zc, sub.row(idx[t]), ds[t], dzc);
            }
        }
    }
    return g;
}

/// CSV: patch_index,ratio,count,sub0,...,sub{M-1}; each sub column holds
/// space-separated "index:weight" pairs.
inline std::string allocation_csv(const AllocationMap& alloc) {
    std::string s = "patch_index,ratio,count";
    const std::size_t m = alloc.patches.empty() ? 0 : alloc.patches.front().indices.size();
    for (std::size_t j = 0; j < m; ++j) s += ",sub" + std::to_string(j);
    s += '\n';
    char buf[64];
    for (std::size_t i = 0; i < alloc.patches.size(); ++i) {
        const PatchAllocation& pa = alloc.patches[i];
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%zu", i, pa.ratio, pa.count);
        s += buf;
        for (std::size_t j = 0; j < pa.indices.size(); ++j) {
            s += ',';
            for (std::size_t t = 0; t < pa.indices[j].size(); ++t) {
                std::snprintf(buf, sizeof buf, "%s%zu:%.17g", t ? " " : "", pa.indices[j][t], pa.weights[j][t]);
                s += buf;
            }
        }
        s += '\n';
    }
    return s;
}

}  // namespace cddvt
