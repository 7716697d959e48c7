#pragma once

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "dataio.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "quantizer.hpp"
#include "trainer.hpp"

namespace cddvt {

struct Reconstruction {
    Image image;  // clamped to [0, 1]
    AllocationMap alloc;
};

/// Encode, allocate, quantize with `mode`, decode. `cb` receives usage counts.
inline Reconstruction reconstruct(const Model& model, Codebook& cb, const Image& img, const QuantizeMode& mode,
                                  const QuantizeOptions& opts) {
    const ModelGeometry& g = model.geo;
    if (img.channels != g.channels)
        throw ShapeError("reconstruct: image has " + std::to_string(img.channels) + " channels, model expects " +
                         std::to_string(g.channels));
    const Matrix x = patchify(img, g.patch);
    const Matrix z = encode(x, model.encoder).output;
    const AllocatorForward af = allocator_forward(z, model.allocator);
    QuantizeOutput q = quantize(z, cb, &af.ratios, mode, opts);
    Image out = unpatchify(decode(q.z_hat, model.decoder).output, img.height, img.width, img.channels, g.patch);
    return {out.clamped(), std::move(q.alloc)};
}

inline Reconstruction reconstruct(const Model& model, const Image& img, const QuantizeMode& mode,
                                  const QuantizeOptions& opts) {
    Codebook cb = model.codebook;
    return reconstruct(model, cb, img, mode, opts);
}

struct EvalResult {
    std::string setting;
    double mean_mse = 0.0;
    double psnr = 0.0;  // mean of per-image PSNR
    double ssim = 0.0;  // mean of per-image SSIM
    double mean_count = 0.0;
    std::vector<double> perplexity;  // per sub-codebook, over this evaluation's selections
    std::vector<std::size_t> counts;  // every patch of every image, image-major
    std::vector<int> labels;          // matching complexity labels when the dataset has them
};

inline EvalResult evaluate(const Model& model, const Dataset& ds, const QuantizeMode& mode, const QuantizeOptions& opts) {
    if (ds.items.empty()) throw ArgumentError("evaluate: empty dataset");
    Codebook cb = model.codebook;
    cb.reset_usage();
    EvalResult r;
    r.setting = mode.name();
    double count_sum = 0.0;
    for (const LabeledImage& li : ds.items) {
        const Reconstruction rec = reconstruct(model, cb, li.image, mode, opts);
        const double mse = mean_squared_error(li.image, rec.image);
        r.mean_mse += mse;
        r.psnr += psnr_from_mse(mse);
        r.ssim += ssim(li.image, rec.image);
        for (const PatchAllocation& pa : rec.alloc.patches) {
            r.counts.push_back(pa.count);
            count_sum += static_cast<double>(pa.count);
        }
        r.labels.insert(r.labels.end(), li.patch_complexity.begin(), li.patch_complexity.end());
    }
    const double n = static_cast<double>(ds.items.size());
    r.mean_mse /= n;
    r.psnr /= n;
    r.ssim /= n;
    r.mean_count = count_sum / static_cast<double>(r.counts.size());
    r.perplexity = codebook_perplexity(cb.usage_counts);
    if (r.labels.size() != r.counts.size()) r.labels.clear();
    return r;
}

struct RDPoint {
    std::optional<std::size_t> forced_n;  // empty for the adaptive point
    double mean_mse = 0.0;
    double mean_count = 0.0;
};

/// One point per forced n (FixedTopN(n), pool widened to n when needed), then
/// the adaptive point with K = max_count.
inline std::vector<RDPoint> rate_distortion(const Model& model, const Dataset& ds, std::span<const std::size_t> forced_ns,
                                            std::size_t max_count, const QuantizeOptions& opts,
                                            std::vector<EvalResult>* details = nullptr) {
    if (ds.items.empty()) throw ArgumentError("rate_distortion: empty dataset");
    for (std::size_t n : forced_ns)
        if (n < 1 || n > model.geo.sub_size)
            throw ArgumentError("rate_distortion: forced n=" + std::to_string(n) + " outside [1, V'=" +
                                std::to_string(model.geo.sub_size) + "]");
    std::vector<RDPoint> out;
    auto record = [&](EvalResult e, std::optional<std::size_t> n) {
        out.push_back(RDPoint{n, e.mean_mse, e.mean_count});
        if (details) details->push_back(std::move(e));
    };
    for (std::size_t n : forced_ns) record(evaluate(model, ds, QuantizeMode::fixed_top_n(n), opts), n);
    record(evaluate(model, ds, QuantizeMode::adaptive(max_count), opts), std::nullopt);
    return out;
}

inline constexpr const char* kEvalHeader = "setting,mean_mse,psnr,ssim,mean_count,perplexity_per_subcodebook";

/// Perplexities are joined with ';' inside the last field.
inline std::string eval_row(const EvalResult& e) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g,%.17g,", e.setting.c_str(), e.mean_mse, e.psnr, e.ssim,
                  e.mean_count);
    std::string s = buf;
    for (std::size_t j = 0; j < e.perplexity.size(); ++j) {
        std::snprintf(buf, sizeof buf, "%s%.17g", j ? ";" : "", e.perplexity[j]);
        s += buf;
    }
    return s;
}

}  // namespace cddvt
