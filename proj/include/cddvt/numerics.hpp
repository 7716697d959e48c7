#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"

namespace cddvt {

/// Dense row-major matrix of doubles. Every entry is finite when built from data.
class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_)
            throw ShapeError("Matrix: data length " + std::to_string(data_.size()) + " != " +
                             std::to_string(rows_) + "x" + std::to_string(cols_));
        for (std::size_t i = 0; i < data_.size(); ++i)
            if (!std::isfinite(data_[i]))
                throw NumericalError("Matrix: non-finite entry at flat index " + std::to_string(i));
    }

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r ? rows.begin()->size() : 0;
        std::vector<double> data;
        data.reserve(r * c);
        for (const auto& row : rows) {
            if (row.size() != c) throw ShapeError("Matrix::from_rows: ragged rows");
            data.insert(data.end(), row.begin(), row.end());
        }
        return Matrix(r, c, std::move(data));
    }

    [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
    [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    std::vector<double>& data() noexcept { return data_; }
    const std::vector<double>& data() const noexcept { return data_; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    [[nodiscard]] Matrix transposed() const {
        Matrix t(cols_, rows_);
        for (std::size_t r = 0; r < rows_; ++r)
            for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
        return t;
    }

    [[nodiscard]] bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeError(std::string(what) + ": shape " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
}

inline double dot(std::span<const double> a, std::span<const double> b) noexcept {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double squared_norm(std::span<const double> a) noexcept { return dot(a, a); }

inline double squared_distance(std::span<const double> a, std::span<const double> b) noexcept {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

constexpr double kCosineEps = 1e-8;

/// <a,b> / (max(|a|,eps) * max(|b|,eps)).
inline double cosine(std::span<const double> a, std::span<const double> b, double eps = kCosineEps) {
    const double na = std::max(std::sqrt(squared_norm(a)), eps);
    const double nb = std::max(std::sqrt(squared_norm(b)), eps);
    return dot(a, b) / (na * nb);
}

/// Accumulates scale * d cosine(a,b) / da into `grad_a`. A norm clamped at eps is treated as constant.
inline void accumulate_cosine_grad(std::span<const double> a, std::span<const double> b, double scale,
                                   std::span<double> grad_a, double eps = kCosineEps) {
    const double raw_na = std::sqrt(squared_norm(a));
    const double na = std::max(raw_na, eps);
    const double nb = std::max(std::sqrt(squared_norm(b)), eps);
    const double ab = dot(a, b);
    const double inv = 1.0 / (na * nb);
    const double radial = raw_na > eps ? ab * inv / (na * na) : 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) grad_a[k] += scale * (b[k] * inv - radial * a[k]);
}

/// out[i][j] = cosine(A_i, B_j).
inline Matrix cosine_similarity_matrix(const Matrix& A, const Matrix& B, double eps = kCosineEps) {
    if (A.cols() != B.cols())
        throw ShapeError("cosine_similarity_matrix: A.cols=" + std::to_string(A.cols()) +
                         " != B.cols=" + std::to_string(B.cols()));
    if (!(eps > 0.0)) throw ArgumentError("cosine_similarity_matrix: eps must be > 0");
    std::vector<double> na(A.rows()), nb(B.rows());
    for (std::size_t i = 0; i < A.rows(); ++i) na[i] = std::max(std::sqrt(squared_norm(A.row(i))), eps);
    for (std::size_t j = 0; j < B.rows(); ++j) nb[j] = std::max(std::sqrt(squared_norm(B.row(j))), eps);
    Matrix out(A.rows(), B.rows());
    for (std::size_t i = 0; i < A.rows(); ++i)
        for (std::size_t j = 0; j < B.rows(); ++j) out(i, j) = dot(A.row(i), B.row(j)) / (na[i] * nb[j]);
    return out;
}

/// Indices of the k largest scores, descending; equal scores ordered by ascending index.
inline std::vector<std::size_t> top_k_indices(std::span<const double> scores, std::size_t k) {
    if (k == 0 || k > scores.size())
        throw ArgumentError("top_k_indices: k=" + std::to_string(k) + " outside [1, " +
                            std::to_string(scores.size()) + "]");
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      [&](std::size_t a, std::size_t b) {
                          if (scores[a] != scores[b]) return scores[a] > scores[b];
                          return a < b;
                      });
    idx.resize(k);
    return idx;
}

/// Softmax of scores/temperature restricted to `selected`, in the order of `selected`.
inline std::vector<double> masked_softmax(std::span<const double> scores, std::span<const std::size_t> selected,
                                          double temperature = 1.0) {
    if (selected.empty()) throw ArgumentError("masked_softmax: empty selection");
    if (!(temperature > 0.0)) throw ArgumentError("masked_softmax: temperature must be > 0");
    std::vector<bool> seen(scores.size(), false);
    double peak = -INFINITY;
    for (std::size_t s : selected) {
        if (s >= scores.size()) throw ArgumentError("masked_softmax: index " + std::to_string(s) + " out of range");
        if (seen[s]) throw ArgumentError("masked_softmax: duplicate index " + std::to_string(s));
        seen[s] = true;
        peak = std::max(peak, scores[s]);
    }
    std::vector<double> w(selected.size());
    double total = 0.0;
    for (std::size_t t = 0; t < selected.size(); ++t) {
        w[t] = std::exp((scores[selected[t]] - peak) / temperature);
        total += w[t];
    }
    for (double& v : w) v /= total;
    return w;
}

struct GradReport {
    double max_abs_diff = 0.0;
    double max_rel_diff = 0.0;
    bool passed = false;
    std::size_t probe_count = 0;
};

/// Relative differences use max(|analytic|, |numeric|, abs_floor) as the denominator.
constexpr double kGradCheckAbsFloor = 1e-6;

/// Central-difference check of `analytic_grad` against `f` at every coordinate of `point`.
inline GradReport grad_check(const std::function<double(const Matrix&)>& f,
                             const std::function<Matrix(const Matrix&)>& analytic_grad, const Matrix& point,
                             double eps = 1e-5, double rel_tol = 1e-4) {
    if (!(eps >= 1e-7 && eps <= 1e-3)) throw ArgumentError("grad_check: eps outside [1e-7, 1e-3]");
    if (!point.all_finite()) throw NumericalError("grad_check: point has non-finite entries");
    const Matrix analytic = analytic_grad(point);
    require_same_shape(analytic, point, "grad_check");

    GradReport report;
    Matrix probe = point;
    for (std::size_t i = 0; i < point.size(); ++i) {
        const double x0 = point.data()[i];
        probe.data()[i] = x0 + eps;
        const double fp = f(probe);
        probe.data()[i] = x0 - eps;
        const double fm = f(probe);
        probe.data()[i] = x0;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NumericalError("grad_check: non-finite f while probing coordinate " + std::to_string(i));
        const double numeric = (fp - fm) / (2.0 * eps);
        const double a = analytic.data()[i];
        const double diff = std::abs(a - numeric);
        const double denom = std::max({std::abs(a), std::abs(numeric), kGradCheckAbsFloor});
        report.max_abs_diff = std::max(report.max_abs_diff, diff);
        report.max_rel_diff = std::max(report.max_rel_diff, diff / denom);
        ++report.probe_count;
    }
    report.passed = report.max_rel_diff <= rel_tol;
    return report;
}

}  // namespace cddvt
