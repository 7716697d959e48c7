#pragma once

#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "autoencoder.hpp"
#include "binary_io.hpp"
#include "errors.hpp"
#include "rng.hpp"

namespace cddvt {

enum class PatchClass : int { Flat = 0, Smooth = 1, Texture = 2, Noise = 3 };

struct LabeledImage {
    Image image;
    std::size_t grid_h = 0;
    std::size_t grid_w = 0;
    std::vector<int> patch_complexity;  // grid_h x grid_w, raster order, values 0..3
};

struct Dataset {
    std::vector<LabeledImage> items;
    std::uint64_t seed = 0;
    std::string recipe;
};

namespace detail {

inline void fill_patch(Image& img, std::size_t y0, std::size_t x0, std::size_t p, PatchClass cls, Rng& rng) {
    const double half = p > 1 ? 0.5 * static_cast<double>(p - 1) : 1.0;
    switch (cls) {
        case PatchClass::Flat: {
            const double v = rng.uniform(0.05, 0.95);
            for (std::size_t y = 0; y < p; ++y)
                for (std::size_t x = 0; x < p; ++x) img.at(y0 + y, x0 + x) = v;
            break;
        }
        case PatchClass::Smooth: {
            const double c = rng.uniform(0.3, 0.7);
            const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
            const double a = rng.uniform(0.08, 0.2);
            for (std::size_t y = 0; y < p; ++y)
                for (std::size_t x = 0; x < p; ++x) {
                    const double u = (static_cast<double>(x) - half) / half;
                    const double v = (static_cast<double>(y) - half) / half;
                    img.at(y0 + y, x0 + x) = std::clamp(c + a * (std::cos(theta) * u + std::sin(theta) * v), 0.0, 1.0);
                }
            break;
        }
        case PatchClass::Texture: {
            const double amp = rng.uniform(0.25, 0.4);
            const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
            const double cycles = rng.uniform(0.6, 1.4);  // per patch width
            const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
            const double k = 2.0 * std::numbers::pi * cycles / static_cast<double>(p);
            for (std::size_t y = 0; y < p; ++y)
                for (std::size_t x = 0; x < p; ++x) {
                    const double t = std::cos(theta) * static_cast<double>(x) + std::sin(theta) * static_cast<double>(y);
                    img.at(y0 + y, x0 + x) = std::clamp(0.5 + amp * std::sin(k * t + phase), 0.0, 1.0);
                }
            break;
        }
        case PatchClass::Noise:
            for (std::size_t y = 0; y < p; ++y)
                for (std::size_t x = 0; x < p; ++x) img.at(y0 + y, x0 + x) = rng.uniform();
            break;
    }
}

inline PatchClass draw_class(const std::array<double, 4>& mix, Rng& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (int c = 0; c < 3; ++c) {
        acc += mix[static_cast<std::size_t>(c)];
        if (u < acc) return static_cast<PatchClass>(c);
    }
    // Classes with zero weight are never chosen, even at the upper edge.
    for (int c = 3; c >= 0; --c)
        if (mix[static_cast<std::size_t>(c)] > 0.0) return static_cast<PatchClass>(c);
    return PatchClass::Flat;
}

}  // namespace detail

/// Grayscale size x size images; every patch independently draws one of four
/// complexity classes (flat, smooth ramp, sinusoidal texture, uniform noise)
/// according to `mix`. Item i is generated from splitmix64(seed ^ i).
inline Dataset gen_synthetic(std::size_t count, std::size_t size, std::size_t p, const std::array<double, 4>& mix,
                             std::uint64_t seed) {
    double total = 0.0;
    for (double f : mix) {
        if (f < 0.0 || !std::isfinite(f)) throw ArgumentError("gen_synthetic: mix fractions must be finite and >= 0");
        total += f;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ArgumentError("gen_synthetic: mix fractions must sum to 1");
    if (p == 0 || size == 0 || size % p != 0) throw ArgumentError("gen_synthetic: size must be a positive multiple of p");

    Dataset ds;
    ds.seed = seed;
    std::ostringstream recipe;
    recipe << "synthetic n=" << count << " size=" << size << " p=" << p << " mix=" << mix[0] << ':' << mix[1] << ':'
           << mix[2] << ':' << mix[3] << " seed=" << seed;
    ds.recipe = recipe.str();
    const std::size_t g = size / p;
    ds.items.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Rng rng(splitmix64(seed ^ static_cast<std::uint64_t>(i)));
        LabeledImage li{Image(size, size, 1), g, g, std::vector<int>(g * g)};
        for (std::size_t py = 0; py < g; ++py)
            for (std::size_t px = 0; px < g; ++px) {
                const PatchClass cls = detail::draw_class(mix, rng);
                li.patch_complexity[py * g + px] = static_cast<int>(cls);
                detail::fill_patch(li.image, py * p, px * p, p, cls, rng);
            }
        ds.items.push_back(std::move(li));
    }
    return ds;
}

/// Deterministic shuffled split; round(train_frac * n) items go to train.
inline std::pair<Dataset, Dataset> split(const Dataset& ds, double train_frac, std::uint64_t seed) {
    if (!(train_frac > 0.0 && train_frac < 1.0)) throw ArgumentError("split: train_frac must be in (0, 1)");
    std::vector<std::size_t> order(ds.items.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, "split"));
    rng.shuffle(order.begin(), order.end());
    const auto n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(order.size())));
    Dataset train{{}, ds.seed, ds.recipe + " [train]"}, val{{}, ds.seed, ds.recipe + " [val]"};
    for (std::size_t i = 0; i < order.size(); ++i) (i < n_train ? train : val).items.push_back(ds.items[order[i]]);
    return {std::move(train), std::move(val)};
}

// ---------------------------------------------------------------------------
// Netpbm

namespace detail {

class PnmHeaderParser {
public:
    PnmHeaderParser(const Bytes& b, std::size_t start) : b_(b), pos_(start) {}

    std::size_t pos() const noexcept { return pos_; }

    void skip_space_and_comments() {
        while (pos_ < b_.size()) {
            if (b_[pos_] == '#') {
                while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
            } else if (std::isspace(b_[pos_])) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    std::uint32_t number(const char* what) {
        skip_space_and_comments();
        const std::size_t start = pos_;
        std::uint64_t v = 0;
        while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
            v = v * 10 + (b_[pos_] - '0');
            if (v > 0xFFFFFFFFULL) throw ParseError(std::string("PNM ") + what + " too large", start);
            ++pos_;
        }
        if (pos_ == start) throw ParseError(std::string("PNM header: expected ") + what, start);
        return static_cast<std::uint32_t>(v);
    }

    /// Exactly one whitespace byte separates the header from the raster.
    void single_whitespace() {
        if (pos_ >= b_.size() || !std::isspace(b_[pos_])) throw ParseError("PNM header: missing whitespace before raster", pos_);
        ++pos_;
    }

private:
    const Bytes& b_;
    std::size_t pos_;
};

}  // namespace detail

/// Binary PGM (P5) or PPM (P6); samples map linearly to [0, 1] via maxval.
/// maxval > 255 uses 16-bit big-endian samples.
inline Image decode_pnm(const Bytes& bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
        throw ParseError("not a binary PGM/PPM (expected magic P5 or P6)", 0);
    const std::size_t channels = bytes[1] == '5' ? 1 : 3;
    detail::PnmHeaderParser p(bytes, 2);
    const std::size_t width = p.number("width");
    const std::size_t height = p.number("height");
    const std::size_t maxval_at = p.pos();
    const std::size_t maxval = p.number("maxval");
    if (width == 0 || height == 0) throw ParseError("PNM header: zero image dimension", 2);
    if (maxval == 0 || maxval > 65535) throw ParseError("PNM header: maxval must be in [1, 65535]", maxval_at);
    p.single_whitespace();
    const std::size_t raster_at = p.pos();
    const std::size_t bps = maxval > 255 ? 2 : 1;
    const std::size_t need = width * height * channels * bps;
    if (bytes.size() - raster_at < need)
        throw ParseError("PNM raster truncated: need " + std::to_string(need) + " bytes, have " +
                             std::to_string(bytes.size() - raster_at),
                         bytes.size());
    Image img(height, width, channels);
    const double scale = 1.0 / static_cast<double>(maxval);
    for (std::size_t i = 0; i < width * height * channels; ++i) {
        std::uint32_t v = bytes[raster_at + i * bps];
        if (bps == 2) v = (v << 8) | bytes[raster_at + i * bps + 1];
        if (v > maxval) throw ParseError("PNM sample exceeds maxval", raster_at + i * bps);
        img.pixels[i] = static_cast<double>(v) * scale;
    }
    return img;
}

/// 8-bit P5 (1 channel) or P6 (3 channels); samples are clamp(v,0,1)*255 rounded half-up.
inline Bytes encode_pnm(const Image& img) {
    if (img.channels != 1 && img.channels != 3) throw ArgumentError("encode_pnm: only 1 or 3 channels supported");
    const std::string header = std::string(img.channels == 1 ? "P5" : "P6") + "\n" + std::to_string(img.width) + " " +
                               std::to_string(img.height) + "\n255\n";
    Bytes out(header.begin(), header.end());
    out.reserve(out.size() + img.pixels.size());
    for (double v : img.pixels) {
        const double s = std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
        out.push_back(static_cast<std::uint8_t>(s));
    }
    return out;
}

inline Image load_raster(const std::string& path) {
    const Bytes b = read_file(path);
    try {
        return decode_pnm(b);
    } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.message, e.offset);
    }
}

inline void save_raster(const Image& img, const std::string& path) { write_file(path, encode_pnm(img)); }

/// Writes img_NNNN.pgm + img_NNNN_labels.csv per item and a manifest of
/// "path,label_grid_csv_path" lines. Returns the manifest path.
inline std::string write_dataset(const Dataset& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
    const std::string manifest = (fs::path(dir) / "manifest.txt").string();
    std::ofstream mf(manifest);
    if (!mf) throw IoError("cannot open '" + manifest + "' for writing");
    for (std::size_t i = 0; i < ds.items.size(); ++i) {
        char stem[32];
        std::snprintf(stem, sizeof stem, "img_%04zu", i);
        const std::string img_path = (fs::path(dir) / (std::string(stem) + ".pgm")).string();
        const std::string lab_path = (fs::path(dir) / (std::string(stem) + "_labels.csv")).string();
        save_raster(ds.items[i].image, img_path);
        std::ofstream lf(lab_path);
        if (!lf) throw IoError("cannot open '" + lab_path + "' for writing");
        const auto& it = ds.items[i];
        for (std::size_t y = 0; y < it.grid_h; ++y) {
            for (std::size_t x = 0; x < it.grid_w; ++x) lf << (x ? "," : "") << it.patch_complexity[y * it.grid_w + x];
            lf << '\n';
        }
        mf << img_path << ',' << lab_path << '\n';
    }
    return manifest;
}

inline Dataset load_manifest(const std::string& manifest) {
    std::ifstream in(manifest);
    if (!in) throw IoError("cannot open manifest '" + manifest + "'");
    Dataset ds;
    ds.recipe = "manifest " + manifest;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw IoError(manifest + ":" + std::to_string(lineno) + ": expected 'path,label_grid_csv_path'");
        LabeledImage li;
        li.image = load_raster(line.substr(0, comma));
        const std::string lab_path = line.substr(comma + 1);
        std::ifstream lf(lab_path);
        if (!lf) throw IoError("cannot open label grid '" + lab_path + "'");
        std::string row;
        while (std::getline(lf, row)) {
            if (row.empty()) continue;
            std::stringstream ss(row);
            std::string cell;
            std::size_t w = 0;
            while (std::getline(ss, cell, ',')) {
                li.patch_complexity.push_back(std::stoi(cell));
                ++w;
            }
            if (li.grid_w == 0) li.grid_w = w;
            if (w != li.grid_w) throw IoError(lab_path + ": ragged label grid");
            ++li.grid_h;
        }
        ds.items.push_back(std::move(li));
    }
    return ds;
}

}  // namespace cddvt
