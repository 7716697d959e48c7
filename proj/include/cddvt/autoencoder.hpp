#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "errors.hpp"
#include "numerics.hpp"
#include "rng.hpp"

namespace cddvt {

/// Row-major raster with interleaved channels. Values are nominally in [0, 1];
/// decoder outputs may leave that range until clamped for export.
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 1;
    std::vector<double> pixels;

    Image() = default;
    Image(std::size_t h, std::size_t w, std::size_t c = 1) : height(h), width(w), channels(c), pixels(h * w * c, 0.0) {}

    double& at(std::size_t y, std::size_t x, std::size_t c = 0) { return pixels[(y * width + x) * channels + c]; }
    double at(std::size_t y, std::size_t x, std::size_t c = 0) const { return pixels[(y * width + x) * channels + c]; }

    [[nodiscard]] Image clamped() const {
        Image out = *this;
        for (double& v : out.pixels) v = std::clamp(v, 0.0, 1.0);
        return out;
    }

    bool operator==(const Image&) const = default;
};

inline void require_same_dims(const Image& a, const Image& b, const char* what) {
    if (a.height != b.height || a.width != b.width || a.channels != b.channels)
        throw ShapeError(std::string(what) + ": image dimensions differ");
}

/// One row per patch, patches in raster order; inside a patch, pixels in
/// raster order with channels interleaved.
inline Matrix patchify(const Image& img, std::size_t p) {
    if (p == 0 || img.height % p != 0 || img.width % p != 0)
        throw ArgumentError("patchify: image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                            " not divisible by patch size " + std::to_string(p));
    const std::size_t gh = img.height / p, gw = img.width / p, c = img.channels;
    Matrix m(gh * gw, p * p * c);
    for (std::size_t py = 0; py < gh; ++py)
        for (std::size_t px = 0; px < gw; ++px) {
            auto row = m.row(py * gw + px);
            std::size_t k = 0;
            for (std::size_t y = 0; y < p; ++y)
                for (std::size_t x = 0; x < p; ++x)
                    for (std::size_t ch = 0; ch < c; ++ch) row[k++] = img.at(py * p + y, px * p + x, ch);
        }
    return m;
}

inline Image unpatchify(const Matrix& patches, std::size_t height, std::size_t width, std::size_t channels,
                        std::size_t p) {
    if (p == 0 || height % p != 0 || width % p != 0)
        throw ArgumentError("unpatchify: dimensions not divisible by patch size");
    const std::size_t gh = height / p, gw = width / p;
    if (patches.rows() != gh * gw || patches.cols() != p * p * channels)
        throw ShapeError("unpatchify: patch matrix shape does not match image geometry");
    Image img(height, width, channels);
    for (std::size_t py = 0; py < gh; ++py)
        for (std::size_t px = 0; px < gw; ++px) {
            const auto row = patches.row(py * gw + px);
            std::size_t k = 0;
            for (std::size_t y = 0; y < p; ++y)
                for (std::size_t x = 0; x < p; ++x)
                    for (std::size_t ch = 0; ch < channels; ++ch) img.at(py * p + y, px * p + x, ch) = row[k++];
        }
    return img;
}

/// Per-row affine -> tanh -> affine. Serves as both the patch encoder
/// (patch_dim -> hidden -> D) and the mirrored decoder (D -> hidden -> patch_dim).
struct TwoLayerMlp {
    Matrix w1;  // in x hidden
    Matrix b1;  // 1 x hidden
    Matrix w2;  // hidden x out
    Matrix b2;  // 1 x out

    [[nodiscard]] std::size_t in_dim() const noexcept { return w1.rows(); }
    [[nodiscard]] std::size_t hidden_dim() const noexcept { return w1.cols(); }
    [[nodiscard]] std::size_t out_dim() const noexcept { return w2.cols(); }

    template <class F>
    void for_each_tensor(F&& f) {
        f(w1);
        f(b1);
        f(w2);
        f(b2);
    }
    template <class F>
    void for_each_tensor(F&& f) const {
        f(w1);
        f(b1);
        f(w2);
        f(b2);
    }

    bool operator==(const TwoLayerMlp&) const = default;
};

using EncoderParams = TwoLayerMlp;
using DecoderParams = TwoLayerMlp;

inline TwoLayerMlp zero_mlp(std::size_t in, std::size_t hidden, std::size_t out) {
    return {Matrix(in, hidden), Matrix(1, hidden), Matrix(hidden, out), Matrix(1, out)};
}

/// Glorot-uniform weights, zero biases.
inline TwoLayerMlp init_mlp(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
    TwoLayerMlp p = zero_mlp(in, hidden, out);
    const double a1 = std::sqrt(6.0 / static_cast<double>(in + hidden));
    const double a2 = std::sqrt(6.0 / static_cast<double>(hidden + out));
    for (double& v : p.w1.data()) v = rng.uniform(-a1, a1);
    for (double& v : p.w2.data()) v = rng.uniform(-a2, a2);
    return p;
}

struct MlpForward {
    Matrix input;
    Matrix hidden;  // tanh activations
    Matrix output;
};

inline MlpForward mlp_forward(const Matrix& x, const TwoLayerMlp& p) {
    if (x.cols() != p.in_dim())
        throw ShapeError("mlp_forward: input width " + std::to_string(x.cols()) + " != " + std::to_string(p.in_dim()));
    const std::size_t n = x.rows(), h = p.hidden_dim(), o = p.out_dim();
    MlpForward f{x, Matrix(n, h), Matrix(n, o)};
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < h; ++j) {
            double acc = p.b1(0, j);
            for (std::size_t i = 0; i < x.cols(); ++i) acc += x(r, i) * p.w1(i, j);
            f.hidden(r, j) = std::tanh(acc);
        }
        for (std::size_t k = 0; k < o; ++k) {
            double acc = p.b2(0, k);
            for (std::size_t j = 0; j < h; ++j) acc += f.hidden(r, j) * p.w2(j, k);
            f.output(r, k) = acc;
        }
    }
    return f;
}

struct MlpGrads {
    TwoLayerMlp params;
    Matrix input;
};

inline MlpGrads mlp_backward(const MlpForward& f, const TwoLayerMlp& p, const Matrix& d_out) {
    require_same_shape(f.output, d_out, "mlp_backward");
    const std::size_t n = f.input.rows(), h = p.hidden_dim(), o = p.out_dim(), in = p.in_dim();
    MlpGrads g{zero_mlp(in, h, o), Matrix(n, in)};
    std::vector<double> d_pre(h);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < h; ++j) {
            double dh = 0.0;
            for (std::size_t k = 0; k < o; ++k) {
                g.params.w2(j, k) += f.hidden(r, j) * d_out(r, k);
                dh += d_out(r, k) * p.w2(j, k);
            }
            const double t = f.hidden(r, j);
            d_pre[j] = dh * (1.0 - t * t);
            g.params.b1(0, j) += d_pre[j];
        }
        for (std::size_t k = 0; k < o; ++k) g.params.b2(0, k) += d_out(r, k);
        for (std::size_t i = 0; i < in; ++i) {
            double dx = 0.0;
            for (std::size_t j = 0; j < h; ++j) {
                g.params.w1(i, j) += f.input(r, i) * d_pre[j];
                dx += d_pre[j] * p.w1(i, j);
            }
            g.input(r, i) = dx;
        }
    }
    return g;
}

/// Patch rows -> latent embeddings Z (one row per patch).
inline MlpForward encode(const Matrix& patches, const EncoderParams& enc) { return mlp_forward(patches, enc); }

/// Latent rows -> reconstructed patch rows (unclamped).
inline MlpForward decode(const Matrix& z_hat, const DecoderParams& dec) { return mlp_forward(z_hat, dec); }

inline Image decode_image(const Matrix& z_hat, const DecoderParams& dec, std::size_t height, std::size_t width,
                          std::size_t channels, std::size_t p) {
    return unpatchify(decode(z_hat, dec).output, height, width, channels, p);
}

struct LossWithGradFlat {
    double value = 0.0;
    std::vector<double> grad;
};

/// Mean squared error over all pixels, gradient with respect to `recon`.
inline LossWithGradFlat reconstruction_loss(std::span<const double> target, std::span<const double> recon) {
    if (target.size() != recon.size()) throw ShapeError("reconstruction_loss: size mismatch");
    LossWithGradFlat out{0.0, std::vector<double>(target.size())};
    if (target.empty()) return out;
    const double inv = 1.0 / static_cast<double>(target.size());
    for (std::size_t i = 0; i < target.size(); ++i) {
        const double d = recon[i] - target[i];
        out.value += d * d;
        out.grad[i] = 2.0 * d * inv;
    }
    out.value *= inv;
    return out;
}

inline LossWithGradFlat reconstruction_loss(const Image& img, const Image& recon) {
    require_same_dims(img, recon, "reconstruction_loss");
    return reconstruction_loss(std::span<const double>(img.pixels), std::span<const double>(recon.pixels));
}

}  // namespace cddvt
