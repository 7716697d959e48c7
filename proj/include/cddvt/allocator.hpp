#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "errors.hpp"
#include "numerics.hpp"
#include "rng.hpp"

namespace cddvt {

/// Two 1D convolutions along the patch sequence with a ReLU between them and a
/// sigmoid head. Kernel widths are odd and zero-padded so the sequence length
/// is preserved.
///
/// Layouts: conv1_w is hidden x (in_channels * width1), element [o][c * width1 + k];
/// conv2_w is 1 x (hidden * width2), element [o * width2 + k]; biases are row vectors.
struct AllocatorParams {
    std::size_t in_channels = 0;
    std::size_t hidden = 0;
    std::size_t width1 = 3;
    std::size_t width2 = 3;
    Matrix conv1_w;
    Matrix conv1_b;
    Matrix conv2_w;
    Matrix conv2_b;

    void validate() const {
        if (width1 % 2 == 0 || width2 % 2 == 0) throw ConfigError("allocator kernel widths must be odd");
        if (conv1_w.rows() != hidden || conv1_w.cols() != in_channels * width1 || conv1_b.rows() != 1 ||
            conv1_b.cols() != hidden || conv2_w.rows() != 1 || conv2_w.cols() != hidden * width2 ||
            conv2_b.rows() != 1 || conv2_b.cols() != 1)
            throw ShapeError("AllocatorParams: tensor shapes inconsistent with channel/width settings");
    }

    template <class F>
    void for_each_tensor(F&& f) {
        f(conv1_w);
        f(conv1_b);
        f(conv2_w);
        f(conv2_b);
    }
    template <class F>
    void for_each_tensor(F&& f) const {
        f(conv1_w);
        f(conv1_b);
        f(conv2_w);
        f(conv2_b);
    }

    bool operator==(const AllocatorParams&) const = default;
};

inline AllocatorParams zero_allocator(std::size_t in_channels, std::size_t hidden, std::size_t width1 = 3,
                                      std::size_t width2 = 3) {
    AllocatorParams p{in_channels, hidden, width1, width2,
                      Matrix(hidden, in_channels * width1), Matrix(1, hidden),
                      Matrix(1, hidden * width2), Matrix(1, 1)};
    p.validate();
    return p;
}

/// Weights uniform on +-1/sqrt(fan_in), biases zero.
inline AllocatorParams init_allocator(std::size_t in_channels, std::size_t hidden, Rng& rng,
                                      std::size_t width1 = 3, std::size_t width2 = 3) {
    AllocatorParams p = zero_allocator(in_channels, hidden, width1, width2);
    const double b1 = 1.0 / std::sqrt(static_cast<double>(in_channels * width1));
    const double b2 = 1.0 / std::sqrt(static_cast<double>(hidden * width2));
    for (double& v : p.conv1_w.data()) v = rng.uniform(-b1, b1);
    for (double& v : p.conv2_w.data()) v = rng.uniform(-b2, b2);
    return p;
}

/// Per-patch allocation ratios, each strictly inside (0, 1).
struct RatioVector {
    std::vector<double> values;
};

/// Per-patch ratio targets, each inside [1/V', 1].
struct RatioTarget {
    std::vector<double> values;
};

struct AllocatorForward {
    RatioVector ratios;
    Matrix input;   // L x in_channels
    Matrix pre1;    // L x hidden, before ReLU
    Matrix act1;    // L x hidden
    std::vector<double> pre2;
};

/// Logistic function, kept strictly inside (0, 1) even where it would round to 0 or 1.
inline double sigmoid(double x) noexcept {
    constexpr double lo = std::numeric_limits<double>::min();
    constexpr double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
    if (x >= 0.0) return std::min(1.0 / (1.0 + std::exp(-x)), hi);
    const double e = std::exp(x);
    return std::max(e / (1.0 + e), lo);
}

inline AllocatorForward allocator_forward(const Matrix& z, const AllocatorParams& p) {
    p.validate();
    if (z.cols() != p.in_channels)
        throw ShapeError("allocator_forward: input has " + std::to_string(z.cols()) + " channels, allocator expects " +
                         std::to_string(p.in_channels));
    const std::size_t len = z.rows();
    const auto half1 = static_cast<std::ptrdiff_t>(p.width1 / 2);
    const auto half2 = static_cast<std::ptrdiff_t>(p.width2 / 2);
    const auto slen = static_cast<std::ptrdiff_t>(len);

    AllocatorForward out{RatioVector{std::vector<double>(len)}, z, Matrix(len, p.hidden), Matrix(len, p.hidden),
                         std::vector<double>(len)};
    for (std::ptrdiff_t t = 0; t < slen; ++t) {
        for (std::size_t o = 0; o < p.hidden; ++o) {
            double acc = p.conv1_b(0, o);
            for (std::size_t k = 0; k < p.width1; ++k) {
                const std::ptrdiff_t s = t + static_cast<std::ptrdiff_t>(k) - half1;
                if (s < 0 || s >= slen) continue;
                for (std::size_t c = 0; c < p.in_channels; ++c)
                    acc += p.conv1_w(o, c * p.width1 + k) * z(static_cast<std::size_t>(s), c);
            }
            out.pre1(static_cast<std::size_t>(t), o) = acc;
            out.act1(static_cast<std::size_t>(t), o) = acc > 0.0 ? acc : 0.0;
        }
    }
    for (std::ptrdiff_t t = 0; t < slen; ++t) {
        double acc = p.conv2_b(0, 0);
        for (std::size_t k = 0; k < p.width2; ++k) {
            const std::ptrdiff_t s = t + static_cast<std::ptrdiff_t>(k) - half2;
            if (s < 0 || s >= slen) continue;
            for (std::size_t o = 0; o < p.hidden; ++o)
                acc += p.conv2_w(0, o * p.width2 + k) * out.act1(static_cast<std::size_t>(s), o);
        }
        out.pre2[static_cast<std::size_t>(t)] = acc;
        out.ratios.values[static_cast<std::size_t>(t)] = sigmoid(acc);
    }
    return out;
}

struct AllocatorGrads {
    AllocatorParams params;  // gradient tensors, same layout as the parameters
    Matrix input;            // d loss / d input
};

inline AllocatorGrads allocator_backward(const AllocatorForward& fwd, const AllocatorParams& p,
                                         std::span<const double> d_ratio) {
    const std::size_t len = fwd.input.rows();
    if (d_ratio.size() != len) throw ShapeError("allocator_backward: gradient length mismatch");
    const auto half1 = static_cast<std::ptrdiff_t>(p.width1 / 2);
    const auto half2 = static_cast<std::ptrdiff_t>(p.width2 / 2);
    const auto slen = static_cast<std::ptrdiff_t>(len);

    AllocatorGrads g{zero_allocator(p.in_channels, p.hidden, p.width1, p.width2), Matrix(len, p.in_channels)};
    std::vector<double> d_pre2(len);
    for (std::size_t t = 0; t < len; ++t) {
        const double r = fwd.ratios.values[t];
        d_pre2[t] = d_ratio[t] * r * (1.0 - r);
        g.params.conv2_b(0, 0) += d_pre2[t];
    }
    Matrix d_act1(len, p.hidden);
    for (std::ptrdiff_t t = 0; t < slen; ++t) {
        for (std::size_t k = 0; k < p.width2; ++k) {
            const std::ptrdiff_t s = t + static_cast<std::ptrdiff_t>(k) - half2;
            if (s < 0 || s >= slen) continue;
            for (std::size_t o = 0; o < p.hidden; ++o) {
                const double dy = d_pre2[static_cast<std::size_t>(t)];
                g.params.conv2_w(0, o * p.width2 + k) += dy * fwd.act1(static_cast<std::size_t>(s), o);
                d_act1(static_cast<std::size_t>(s), o) += dy * p.conv2_w(0, o * p.width2 + k);
            }
        }
    }
    Matrix d_pre1(len, p.hidden);
    for (std::size_t t = 0; t < len; ++t)
        for (std::size_t o = 0; o < p.hidden; ++o) {
            d_pre1(t, o) = fwd.pre1(t, o) > 0.0 ? d_act1(t, o) : 0.0;
            g.params.conv1_b(0, o) += d_pre1(t, o);
        }
    for (std::ptrdiff_t t = 0; t < slen; ++t) {
        for (std::size_t k = 0; k < p.width1; ++k) {
            const std::ptrdiff_t s = t + static_cast<std::ptrdiff_t>(k) - half1;
            if (s < 0 || s >= slen) continue;
            const auto ss = static_cast<std::size_t>(s);
            for (std::size_t o = 0; o < p.hidden; ++o) {
                const double dy = d_pre1(static_cast<std::size_t>(t), o);
                if (dy == 0.0) continue;
                for (std::size_t c = 0; c < p.in_channels; ++c) {
                    g.params.conv1_w(o, c * p.width1 + k) += dy * fwd.input(ss, c);
                    g.input(ss, c) += dy * p.conv1_w(o, c * p.width1 + k);
                }
            }
        }
    }
    return g;
}

/// n_i = clamp(round(R_i * K), 1, K).
inline std::vector<std::size_t> count_from_ratio(std::span<const double> ratios, std::size_t max_count) {
    if (max_count == 0) throw ArgumentError("count_from_ratio: K must be >= 1");
    std::vector<std::size_t> n(ratios.size());
    for (std::size_t i = 0; i < ratios.size(); ++i) {
        const double scaled = std::round(ratios[i] * static_cast<double>(max_count));
        n[i] = static_cast<std::size_t>(std::clamp(scaled, 1.0, static_cast<double>(max_count)));
    }
    return n;
}

/// Min-max maps per-patch errors onto [1/V', 1]. A constant batch maps to 1/V'.
inline RatioTarget ratio_target_from_errors(std::span<const double> errors, std::size_t sub_size) {
    if (sub_size == 0) throw ArgumentError("ratio_target: V' must be >= 1");
    const double lo = 1.0 / static_cast<double>(sub_size);
    RatioTarget t{std::vector<double>(errors.size(), lo)};
    if (errors.empty()) return t;
    const auto [mn, mx] = std::minmax_element(errors.begin(), errors.end());
    const double range = *mx - *mn;
    if (!(range > 0.0)) return t;
    for (std::size_t i = 0; i < errors.size(); ++i)
        t.values[i] = std::clamp(lo + (errors[i] - *mn) / range * (1.0 - lo), lo, 1.0);
    return t;
}

/// Per-patch squared L2 quantization error, normalized with ratio_target_from_errors.
inline RatioTarget ratio_target(const Matrix& z, const Matrix& z_hat, std::size_t sub_size) {
    require_same_shape(z, z_hat, "ratio_target");
    std::vector<double> e(z.rows());
    for (std::size_t i = 0; i < z.rows(); ++i) e[i] = squared_distance(z_hat.row(i), z.row(i));
    return ratio_target_from_errors(e, sub_size);
}

struct VectorLoss {
    double value = 0.0;
    std::vector<double> grad;
};

/// MSE(R, R*) with gradient 2(R - R*)/len. The target is a constant.
inline VectorLoss dpa_loss(std::span<const double> ratios, std::span<const double> targets) {
    if (ratios.size() != targets.size())
        throw ShapeError("dpa_loss: " + std::to_string(ratios.size()) + " ratios vs " +
                         std::to_string(targets.size()) + " targets");
    VectorLoss out{0.0, std::vector<double>(ratios.size())};
    if (ratios.empty()) return out;
    const double inv = 1.0 / static_cast<double>(ratios.size());
    for (std::size_t i = 0; i < ratios.size(); ++i) {
        const double d = ratios[i] - targets[i];
        out.value += d * d;
        out.grad[i] = 2.0 * d * inv;
    }
    out.value *= inv;
    return out;
}

}  // namespace cddvt
