#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "autoencoder.hpp"
#include "codebook.hpp"
#include "errors.hpp"
#include "numerics.hpp"
#include "quantizer.hpp"

namespace cddvt {

constexpr double kPsnrCap = 99.0;

inline double mean_squared_error(const Image& a, const Image& b) {
    require_same_dims(a, b, "mean_squared_error");
    if (a.pixels.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        const double d = a.pixels[i] - b.pixels[i];
        s += d * d;
    }
    return s / static_cast<double>(a.pixels.size());
}

/// 10 log10(max^2 / mse); mse == 0 yields the 99 dB cap.
inline double psnr_from_mse(double mse, double max_val = 1.0) {
    if (mse <= 0.0) return kPsnrCap;
    return 10.0 * std::log10(max_val * max_val / mse);
}

inline double psnr(const Image& a, const Image& b, double max_val = 1.0) {
    return psnr_from_mse(mean_squared_error(a, b), max_val);
}

/// Mean SSIM over non-overlapping window x window tiles (per channel), dynamic
/// range L = 1. Pixels beyond the last full tile are ignored.
inline double ssim(const Image& a, const Image& b, std::size_t window = 8, double k1 = 0.01, double k2 = 0.03) {
    require_same_dims(a, b, "ssim");
    if (window == 0 || a.height < window || a.width < window)
        throw ArgumentError("ssim: image " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                            " smaller than window " + std::to_string(window));
    const double c1 = (k1 * 1.0) * (k1 * 1.0);
    const double c2 = (k2 * 1.0) * (k2 * 1.0);
    const double n = static_cast<double>(window * window);
    double total = 0.0;
    std::size_t tiles = 0;
    for (std::size_t ch = 0; ch < a.channels; ++ch)
        for (std::size_t ty = 0; ty + window <= a.height; ty += window)
            for (std::size_t tx = 0; tx + window <= a.width; tx += window) {
                double ma = 0.0, mb = 0.0;
                for (std::size_t y = ty; y < ty + window; ++y)
                    for (std::size_t x = tx; x < tx + window; ++x) {
                        ma += a.at(y, x, ch);
                        mb += b.at(y, x, ch);
                    }
                ma /= n;
                mb /= n;
                double va = 0.0, vb = 0.0, cov = 0.0;
                for (std::size_t y = ty; y < ty + window; ++y)
                    for (std::size_t x = tx; x < tx + window; ++x) {
                        const double da = a.at(y, x, ch) - ma;
                        const double db = b.at(y, x, ch) - mb;
                        va += da * da;
                        vb += db * db;
                        cov += da * db;
                    }
                va /= n;
                vb /= n;
                cov /= n;
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++tiles;
            }
    return total / static_cast<double>(tiles);
}

/// exp(entropy) of the normalized usage of each sub-codebook.
inline std::vector<double> codebook_perplexity(const std::vector<std::vector<std::uint64_t>>& usage) {
    std::vector<double> out;
    out.reserve(usage.size());
    for (std::size_t j = 0; j < usage.size(); ++j) {
        double total = 0.0;
        for (auto c : usage[j]) total += static_cast<double>(c);
        if (total <= 0.0) throw ArgumentError("codebook_perplexity: sub-codebook " + std::to_string(j) + " has no usage");
        double h = 0.0;
        for (auto c : usage[j]) {
            if (c == 0) continue;
            const double p = static_cast<double>(c) / total;
            h -= p * std::log(p);
        }
        out.push_back(std::exp(h));
    }
    return out;
}

/// Overload for fractional usage (e.g. already-normalized frequencies).
inline double perplexity_of(std::span<const double> usage) {
    double total = 0.0;
    for (double c : usage) {
        if (c < 0.0) throw ArgumentError("perplexity: negative usage");
        total += c;
    }
    if (total <= 0.0) throw ArgumentError("perplexity: all-zero usage");
    double h = 0.0;
    for (double c : usage)
        if (c > 0.0) h -= (c / total) * std::log(c / total);
    return std::exp(h);
}

struct HeatmapGrid {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t max_count = 1;
    std::vector<std::size_t> counts;  // raster order
};

inline HeatmapGrid allocation_heatmap(const AllocationMap& alloc, std::size_t h, std::size_t w) {
    if (alloc.patches.size() != h * w)
        throw ShapeError("allocation_heatmap: " + std::to_string(alloc.patches.size()) + " patches do not fill " +
                         std::to_string(h) + "x" + std::to_string(w));
    return HeatmapGrid{h, w, alloc.max_count, alloc.counts()};
}

/// Counts 1..K map linearly to gray levels 0..255 (round(255 (n-1)/(K-1)));
/// each grid cell becomes a scale x scale block.
inline Image heatmap_image(const HeatmapGrid& g, std::size_t scale = 1) {
    Image img(g.height * scale, g.width * scale, 1);
    for (std::size_t y = 0; y < g.height; ++y)
        for (std::size_t x = 0; x < g.width; ++x) {
            const std::size_t n = g.counts[y * g.width + x];
            const double level =
                g.max_count > 1 ? std::round(255.0 * static_cast<double>(n - 1) / static_cast<double>(g.max_count - 1))
                                : 0.0;
            for (std::size_t dy = 0; dy < scale; ++dy)
                for (std::size_t dx = 0; dx < scale; ++dx) img.at(y * scale + dy, x * scale + dx) = level / 255.0;
        }
    return img;
}

/// Ranks starting at 1; tied values share the average of their positions.
inline std::vector<double> average_ranks(std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b] || (v[a] == v[b] && a < b); });
    std::vector<double> ranks(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

/// Spearman rank correlation with average-rank tie handling.
inline double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw ShapeError("spearman: length mismatch");
    if (x.size() < 3) throw ArgumentError("spearman: need at least 3 samples");
    const std::vector<double> rx = average_ranks(x), ry = average_ranks(y);
    const double n = static_cast<double>(x.size());
    const double mean = (n + 1.0) / 2.0;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        const double a = rx[i] - mean, b = ry[i] - mean;
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if (sxx == 0.0 || syy == 0.0) throw ArgumentError("spearman: correlation undefined for constant input");
    return sxy / std::sqrt(sxx * syy);
}

inline double complexity_correlation(std::span<const std::size_t> counts, std::span<const int> labels) {
    std::vector<double> c(counts.begin(), counts.end()), l(labels.begin(), labels.end());
    return spearman(c, l);
}

/// Cosine similarity between every pair of sub-codebook centroids; the diagonal is 1.
inline Matrix centroid_similarity_matrix(const Codebook& cb) {
    const Matrix c = centroids(cb).centroids;
    Matrix s = cosine_similarity_matrix(c, c);
    for (std::size_t j = 0; j < s.rows(); ++j) s(j, j) = 1.0;
    return s;
}

inline double mean_abs_offdiagonal(const Matrix& s) {
    double total = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < s.rows(); ++i)
        for (std::size_t j = i + 1; j < s.cols(); ++j) {
            total += std::abs(s(i, j));
            ++n;
        }
    return n ? total / static_cast<double>(n) : 0.0;
}

inline std::string matrix_csv(const Matrix& m) {
    std::string out;
    char buf[40];
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) {
            std::snprintf(buf, sizeof buf, "%s%.17g", c ? "," : "", m(r, c));
            out += buf;
        }
        out += '\n';
    }
    return out;
}

}  // namespace cddvt
