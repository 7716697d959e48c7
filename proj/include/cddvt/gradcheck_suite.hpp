#pragma once

#include <algorithm>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "allocator.hpp"
#include "autoencoder.hpp"
#include "codebook.hpp"
#include "numerics.hpp"
#include "quantizer.hpp"
#include "rng.hpp"

namespace cddvt {

struct GradCheckRow {
    std::string name;
    std::uint64_t seed = 0;
    GradReport report;
};

namespace detail {

inline Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Matrix m(r, c);
    for (double& v : m.data()) v = rng.uniform(lo, hi);
    return m;
}

inline double weighted_sum(const Matrix& a, const Matrix& g) {
    require_same_shape(a, g, "weighted_sum");
    return dot(a.data(), g.data());
}

/// Z-hat for a frozen selection: weights are recomputed from the current
/// similarities but the chosen indices never change.
inline Matrix fixed_selection_output(const Matrix& z, const Codebook& cb, const AllocationMap& alloc,
                                     const QuantizeOptions& opts) {
    Matrix out(z.rows(), z.cols());
    const std::size_t w = cb.prim_dim;
    for (std::size_t i = 0; i < z.rows(); ++i)
        for (std::size_t j = 0; j < cb.num_sub; ++j) {
            const auto zc = z.row(i).subspan(j * w, w);
            const auto& idx = alloc.patches[i].indices[j];
            std::vector<double> sims(idx.size());
            for (std::size_t t = 0; t < idx.size(); ++t) sims[t] = cosine(zc, cb.entries[j].row(idx[t]));
            const std::vector<double> wt = selection_weights(sims, opts.temperature, opts.weighting);
            for (std::size_t t = 0; t < idx.size(); ++t)
                for (std::size_t k = 0; k < w; ++k) out(i, j * w + k) += wt[t] * cb.entries[j](idx[t], k);
        }
    return out;
}

/// Smallest gap between the n-th and (n+1)-th similarity over every chunk;
/// above ~1e-3 a finite-difference probe cannot change the selection.
inline double selection_margin(const Matrix& z, const Codebook& cb, std::size_t n) {
    double margin = std::numeric_limits<double>::infinity();
    const std::size_t w = cb.prim_dim;
    for (std::size_t i = 0; i < z.rows(); ++i)
        for (std::size_t j = 0; j < cb.num_sub; ++j) {
            std::vector<double> sims(cb.sub_size);
            for (std::size_t v = 0; v < cb.sub_size; ++v) sims[v] = cosine(z.row(i).subspan(j * w, w), cb.entries[j].row(v));
            std::sort(sims.begin(), sims.end(), std::greater<>());
            if (n < sims.size()) margin = std::min(margin, sims[n - 1] - sims[n]);
        }
    return margin;
}

template <class Params>
std::vector<Matrix*> tensors_of(Params& p) {
    std::vector<Matrix*> out;
    p.for_each_tensor([&](Matrix& t) { out.push_back(&t); });
    return out;
}

}  // namespace detail

/// Every analytic gradient in the library against central differences, once
/// per seed. Quantizer checks freeze the selection, so they probe only the
/// weighted-sum path.
inline std::vector<GradCheckRow> run_gradient_suite(const std::vector<std::uint64_t>& seeds, double eps = 1e-5,
                                                    double rel_tol = 1e-4) {
    std::vector<GradCheckRow> rows;
    auto add = [&](std::string name, std::uint64_t seed, const std::function<double(const Matrix&)>& f,
                   const std::function<Matrix(const Matrix&)>& g, const Matrix& at) {
        rows.push_back({std::move(name), seed, grad_check(f, g, at, eps, rel_tol)});
    };

    for (std::uint64_t seed : seeds) {
        Rng rng(derive_seed(seed, "gradcheck"));

        // Diversity loss, with respect to centroids and to one sub-codebook's primitives.
        {
            const Matrix c0 = detail::random_matrix(4, 4, rng);
            add("diversity/centroids", seed, [](const Matrix& c) { return diversity_loss(CentroidSet{c}).value; },
                [](const Matrix& c) { return diversity_loss(CentroidSet{c}).grad; }, c0);
            const Codebook cb = init_codebook(4, 8, 4, rng.next_u64());
            auto with_sub0 = [cb](const Matrix& e) {
                Codebook c = cb;
                c.entries[0] = e;
                return c;
            };
            add("diversity/primitives", seed, [=](const Matrix& e) { return diversity_loss(centroids(with_sub0(e))).value; },
                [=](const Matrix& e) {
                    const Codebook c = with_sub0(e);
                    return centroid_grad_to_entries(c, diversity_loss(centroids(c)).grad)[0];
                },
                cb.entries[0]);
        }

        // Ratio loss.
        {
            const Matrix r0 = detail::random_matrix(1, 16, rng, 0.0, 1.0);
            const Matrix t = detail::random_matrix(1, 16, rng, 1.0 / 64.0, 1.0);
            add("dpa_loss", seed, [t](const Matrix& r) { return dpa_loss(r.data(), t.data()).value; },
                [t](const Matrix& r) {
                    Matrix g(1, r.cols());
                    g.data() = dpa_loss(r.data(), t.data()).grad;
                    return g;
                },
                r0);
        }

        // Allocator network: each parameter tensor and the input.
        {
            const AllocatorParams p0 = init_allocator(16, 8, rng);
            const Matrix z0 = detail::random_matrix(12, 16, rng);
            const Matrix t = detail::random_matrix(1, 12, rng, 1.0 / 64.0, 1.0);
            auto loss = [t](const Matrix& z, const AllocatorParams& p) {
                return dpa_loss(allocator_forward(z, p).ratios.values, t.data());
            };
            auto grads = [&, t](const Matrix& z, const AllocatorParams& p) {
                const AllocatorForward f = allocator_forward(z, p);
                return allocator_backward(f, p, dpa_loss(f.ratios.values, t.data()).grad);
            };
            const char* names[] = {"allocator/conv1_w", "allocator/conv1_b", "allocator/conv2_w", "allocator/conv2_b"};
            AllocatorParams probe_p = p0;
            const std::vector<Matrix*> slots = detail::tensors_of(probe_p);
            for (std::size_t k = 0; k < slots.size(); ++k) {
                auto with = [p0, k](const Matrix& m) {
                    AllocatorParams p = p0;
                    *detail::tensors_of(p)[k] = m;
                    return p;
                };
                add(names[k], seed, [=](const Matrix& m) { return loss(z0, with(m)).value; },
                    [=](const Matrix& m) {
                        AllocatorGrads g = grads(z0, with(m));
                        return *detail::tensors_of(g.params)[k];
                    },
                    *slots[k]);
            }
            add("allocator/input", seed, [=](const Matrix& z) { return loss(z, p0).value; },
                [=](const Matrix& z) { return grads(z, p0).input; }, z0);
        }

        // Quantizer weighted sum, both weightings, with the selection frozen.
        for (Weighting wt : {Weighting::Softmax, Weighting::Linear}) {
            const std::string tag = wt == Weighting::Softmax ? "softmax" : "linear";
            Codebook cb = init_codebook(4, 16, 4, rng.next_u64());
            for (Matrix& e : cb.entries)
                for (double& v : e.data()) v = rng.uniform(-1.0, 1.0);
            Matrix z0 = detail::random_matrix(6, 16, rng);
            while (detail::selection_margin(z0, cb, 3) <= 1e-3) z0 = detail::random_matrix(6, 16, rng);
            QuantizeOptions opts;
            opts.temperature = 0.5;
            opts.weighting = wt;
            Codebook scratch = cb;
            const AllocationMap alloc = quantize(z0, scratch, nullptr, QuantizeMode::fixed_top_n(3), opts).alloc;
            const Matrix g_out = detail::random_matrix(6, 16, rng);
            add("quantizer/" + tag + "/z", seed,
                [=](const Matrix& z) { return detail::weighted_sum(detail::fixed_selection_output(z, cb, alloc, opts), g_out); },
                [=](const Matrix& z) { return quantize_backward(z, cb, alloc, g_out, opts).z; }, z0);
            auto with_sub = [cb](std::size_t j, const Matrix& e) {
                Codebook c = cb;
                c.entries[j] = e;
                return c;
            };
            add("quantizer/" + tag + "/primitives", seed,
                [=](const Matrix& e) {
                    return detail::weighted_sum(detail::fixed_selection_output(z0, with_sub(1, e), alloc, opts), g_out);
                },
                [=](const Matrix& e) { return quantize_backward(z0, with_sub(1, e), alloc, g_out, opts).codebook[1]; },
                cb.entries[1]);
        }

        // Encoder (patch -> latent) and decoder (latent -> patch) MLPs.
        for (const auto& [label, in, out] : {std::tuple{"encoder", 16, 16}, std::tuple{"decoder", 16, 16}}) {
            const TwoLayerMlp p0 = init_mlp(static_cast<std::size_t>(in), 32, static_cast<std::size_t>(out), rng);
            const Matrix x0 = detail::random_matrix(5, static_cast<std::size_t>(in), rng);
            const Matrix g_out = detail::random_matrix(5, static_cast<std::size_t>(out), rng);
            const char* names[] = {"w1", "b1", "w2", "b2"};
            TwoLayerMlp probe_p = p0;
            const std::vector<Matrix*> slots = detail::tensors_of(probe_p);
            for (std::size_t k = 0; k < slots.size(); ++k) {
                auto with = [p0, k](const Matrix& m) {
                    TwoLayerMlp p = p0;
                    *detail::tensors_of(p)[k] = m;
                    return p;
                };
                add(std::string(label) + "/" + names[k], seed,
                    [=](const Matrix& m) { return detail::weighted_sum(mlp_forward(x0, with(m)).output, g_out); },
                    [=](const Matrix& m) {
                        const TwoLayerMlp p = with(m);
                        MlpGrads g = mlp_backward(mlp_forward(x0, p), p, g_out);
                        return *detail::tensors_of(g.params)[k];
                    },
                    *slots[k]);
            }
            add(std::string(label) + "/input", seed,
                [=](const Matrix& x) { return detail::weighted_sum(mlp_forward(x, p0).output, g_out); },
                [=](const Matrix& x) { return mlp_backward(mlp_forward(x, p0), p0, g_out).input; }, x0);
        }

        // Reconstruction and commitment losses.
        {
            const Matrix target = detail::random_matrix(1, 64, rng, 0.0, 1.0);
            const Matrix r0 = detail::random_matrix(1, 64, rng, 0.0, 1.0);
            add("reconstruction_loss", seed, [=](const Matrix& r) { return reconstruction_loss(target.data(), r.data()).value; },
                [=](const Matrix& r) {
                    Matrix g(1, r.cols());
                    g.data() = reconstruction_loss(target.data(), r.data()).grad;
                    return g;
                },
                r0);
            const Matrix z0 = detail::random_matrix(5, 16, rng);
            const Matrix zh0 = detail::random_matrix(5, 16, rng);
            // Each side sees the other as a constant; probe the side's own term.
            add("commitment/encoder_side", seed,
                [=](const Matrix& z) { return commitment_loss(z, zh0, 0.25).value - commitment_loss(z, zh0, 0.0).value; },
                [=](const Matrix& z) { return commitment_loss(z, zh0, 0.25).d_z; }, z0);
            add("commitment/codebook_side", seed, [=](const Matrix& zh) { return commitment_loss(z0, zh, 0.0).value; },
                [=](const Matrix& zh) { return commitment_loss(z0, zh, 0.25).d_z_hat; }, zh0);
        }
    }
    return rows;
}

}  // namespace cddvt
