#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "allocator.hpp"
#include "autoencoder.hpp"
#include "codebook.hpp"
#include "dataio.hpp"
#include "errors.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "optimizer.hpp"
#include "quantizer.hpp"
#include "rng.hpp"

namespace cddvt {

/// Quantizer used once warm-up is over.
enum class TrainMode { Adaptive, FixedTopN, Top1 };

struct TrainConfig {
    std::size_t total_steps = 1000;
    double warmup_fraction = 0.25;
    std::size_t batch_size = 16;
    double learning_rate = 1e-3;
    double allocator_lr = 1e-2;  // 0 = learning_rate

    double lambda_rec = 1.0;
    double beta = 0.25;  // commitment weight, encoder side
    double lambda_dqp = 0.25;
    double lambda_dpa = 1.0;

    TrainMode mode = TrainMode::Adaptive;
    std::size_t max_count = 16;  // K
    std::size_t fixed_n = 10;    // n for TrainMode::FixedTopN
    std::size_t pool_size = 0;   // K_pool; 0 = same as the largest count
    double temperature = 1.0;
    Weighting weighting = Weighting::Softmax;

    ModelGeometry geo;
    std::uint64_t seed = 0;

    std::string data = "synthetic";  // or a manifest path
    std::size_t num_images = 320;
    std::array<double, 4> mix{0.25, 0.25, 0.25, 0.25};
    double train_fraction = 0.8;

    std::string checkpoint_path;
    std::string metrics_path;
    std::size_t checkpoint_every = 0;

    void validate() const {
        if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) throw ConfigError("warmup_fraction must be in [0, 1)");
        if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
        if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train_fraction must be in (0, 1)");
        if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
        if (!(allocator_lr >= 0.0)) throw ConfigError("allocator_lr must be >= 0");
        if (lambda_rec < 0 || beta < 0 || lambda_dqp < 0 || lambda_dpa < 0)
            throw ConfigError("loss weights must be >= 0");
        if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
        geo.validate();
        if (max_count < 1 || max_count > geo.sub_size) throw ConfigError("K must be in [1, V']");
        if (fixed_n < 1 || fixed_n > geo.sub_size) throw ConfigError("top_n must be in [1, V']");
        if (pool_size > geo.sub_size) throw ConfigError("K_pool must be <= V'");
    }
};

inline QuantizeMode active_mode(const TrainConfig& c) {
    switch (c.mode) {
        case TrainMode::Adaptive: return QuantizeMode::adaptive(c.max_count);
        case TrainMode::FixedTopN: return QuantizeMode::fixed_top_n(c.fixed_n);
        case TrainMode::Top1: return QuantizeMode::warmup();
    }
    return QuantizeMode::warmup();
}

inline QuantizeOptions quantize_options(const TrainConfig& c) {
    return QuantizeOptions{c.temperature, c.pool_size, c.weighting, c.beta};
}

enum class Phase { Warmup, Active };

/// First step of the active phase: ceil(warmup_fraction * total_steps).
inline std::size_t warmup_steps(std::size_t total_steps, double warmup_fraction) {
    const double x = warmup_fraction * static_cast<double>(total_steps);
    // Absorb representation error so e.g. 0.3 * 10 does not round up to 4.
    return static_cast<std::size_t>(std::ceil(x - 1e-9 * std::max(1.0, x)));
}

inline Phase phase(std::size_t step, std::size_t total_steps, double warmup_fraction) {
    return step < warmup_steps(total_steps, warmup_fraction) ? Phase::Warmup : Phase::Active;
}

struct LossComponents {
    double rec = 0.0;
    double commit = 0.0;
    double dqp = 0.0;
    double dpa = 0.0;
};

struct LossWeights {
    double rec = 1.0;
    double dqp = 0.25;
    double dpa = 1.0;
};

/// Weighted total plus the multiplier each component's gradient receives.
/// Warm-up gates the diversity and allocation terms to exactly zero.
struct TotalLoss {
    double value = 0.0;
    double w_rec = 0.0;
    double w_commit = 0.0;
    double w_dqp = 0.0;
    double w_dpa = 0.0;
};

inline TotalLoss total_loss(const LossComponents& c, const LossWeights& w, Phase ph) {
    const std::pair<const char*, double> named[] = {{"loss_rec", c.rec}, {"loss_commit", c.commit},
                                                    {"loss_dqp", c.dqp}, {"loss_dpa", c.dpa}};
    for (const auto& [name, v] : named)
        if (!std::isfinite(v)) throw NumericalError(std::string("total_loss: non-finite ") + name);
    TotalLoss t{0.0, w.rec, 1.0, 0.0, 0.0};
    if (ph == Phase::Active) {
        t.w_dqp = w.dqp;
        t.w_dpa = w.dpa;
    }
    t.value = t.w_rec * c.rec + t.w_commit * c.commit;
    if (ph == Phase::Active) t.value += t.w_dqp * c.dqp + t.w_dpa * c.dpa;
    return t;
}

struct StepMetrics {
    std::uint64_t step = 0;
    double loss_total = 0.0;
    double loss_rec = 0.0;
    double loss_commit = 0.0;
    double loss_dqp = 0.0;
    double loss_dpa = 0.0;
    double mean_count = 0.0;
    double std_count = 0.0;
    double mean_R = 0.0;
    double mean_Rstar = 0.0;
    double perplexity = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "step,loss_total,loss_rec,loss_commit,loss_dqp,loss_dpa,mean_count,std_count,mean_R,mean_Rstar,perplexity";

inline std::string metrics_row(const StepMetrics& m) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g",
                  static_cast<unsigned long long>(m.step), m.loss_total, m.loss_rec, m.loss_commit, m.loss_dqp,
                  m.loss_dpa, m.mean_count, m.std_count, m.mean_R, m.mean_Rstar, m.perplexity);
    return buf;
}

/// Per-batch values that are too large for the metrics stream.
struct StepDiagnostics {
    Phase phase = Phase::Warmup;
    std::size_t max_count = 1;
    std::vector<double> ratios;
    std::vector<double> ratio_targets;
    std::vector<std::size_t> counts;
    double dqp_grad_norm = 0.0;        // norm of the diversity gradient applied to the codebook
    double allocator_grad_norm = 0.0;  // norm of the gradient applied to the allocator
};

struct TrainState {
    std::uint64_t step = 0;
    Model model;
    AdamState optimizer;
};

inline TrainState init_train_state(const TrainConfig& cfg) {
    cfg.validate();
    RngStreams streams = seed_everything(cfg.seed);
    return TrainState{0, init_model(cfg.geo, streams.init), {}};
}

inline Checkpoint to_checkpoint(const TrainState& s) { return Checkpoint{s.model, s.optimizer, s.step}; }
inline TrainState from_checkpoint(Checkpoint ck) {
    return TrainState{ck.step, std::move(ck.model), std::move(ck.optimizer)};
}

/// Patches of several images stacked into one matrix, image-major.
inline Matrix stack_patches(std::span<const Image* const> images, std::size_t patch) {
    std::vector<Matrix> parts;
    std::size_t rows = 0;
    for (const Image* img : images) {
        parts.push_back(patchify(*img, patch));
        rows += parts.back().rows();
    }
    const std::size_t cols = parts.empty() ? 0 : parts.front().cols();
    Matrix out(rows, cols);
    std::size_t r0 = 0;
    for (const Matrix& p : parts) {
        std::copy(p.data().begin(), p.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(r0 * cols));
        r0 += p.rows();
    }
    return out;
}

inline Matrix row_block(const Matrix& m, std::size_t first, std::size_t count) {
    Matrix out(count, m.cols());
    std::copy(m.data().begin() + static_cast<std::ptrdiff_t>(first * m.cols()),
              m.data().begin() + static_cast<std::ptrdiff_t>((first + count) * m.cols()), out.data().begin());
    return out;
}

/// Runs the allocator on each image's patch sequence separately.
inline std::vector<AllocatorForward> allocate(const Matrix& z, const AllocatorParams& p, std::size_t per_image,
                                              RatioVector& ratios) {
    std::vector<AllocatorForward> fwd;
    ratios.values.clear();
    for (std::size_t r0 = 0; r0 < z.rows(); r0 += per_image) {
        fwd.push_back(allocator_forward(row_block(z, r0, per_image), p));
        const auto& v = fwd.back().ratios.values;
        ratios.values.insert(ratios.values.end(), v.begin(), v.end());
    }
    return fwd;
}

namespace detail {

inline double frob(const Matrix& m) { return std::sqrt(squared_norm(m.data())); }

inline double mean_of(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline void add_into(Matrix& dst, const Matrix& src, double scale = 1.0) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst.data()[i] += scale * src.data()[i];
}

}  // namespace detail

struct StepOutcome {
    StepMetrics metrics;
    StepDiagnostics diagnostics;
};

/// One optimization step on `batch`: forward through encoder, allocator,
/// quantizer and decoder; backward with a straight-through estimator at the
/// quantizer; one Adam update of every parameter.
inline StepOutcome train_step(TrainState& state, std::span<const Image* const> batch, const TrainConfig& cfg) {
    if (batch.empty()) throw ArgumentError("train_step: empty batch");
    Model& model = state.model;
    const ModelGeometry& geo = model.geo;
    for (const Image* img : batch)
        if (img->height != geo.image_height || img->width != geo.image_width || img->channels != geo.channels)
            throw ShapeError("train_step: batch image dimensions do not match the model geometry");

    const Phase ph = phase(state.step, cfg.total_steps, cfg.warmup_fraction);
    const QuantizeMode mode = ph == Phase::Warmup ? QuantizeMode::warmup() : active_mode(cfg);
    const QuantizeOptions qopts = quantize_options(cfg);
    const std::size_t per_image = geo.patches_per_image();

    // Forward.
    const Matrix x = stack_patches(batch, geo.patch);
    const MlpForward enc = encode(x, model.encoder);
    const Matrix& z = enc.output;
    RatioVector ratios;
    const std::vector<AllocatorForward> alloc_fwd = allocate(z, model.allocator, per_image, ratios);
    const QuantizeOutput q = quantize(z, model.codebook, &ratios, mode, qopts);
    const MlpForward dec = decode(q.z_hat, model.decoder);

    const LossWithGradFlat rec = reconstruction_loss(x.data(), dec.output.data());
    const CommitmentLoss commit = commitment_loss(z, q.z_hat, cfg.beta);
    const RatioTarget rstar = ratio_target_from_errors(q.per_patch_error, geo.sub_size);
    const VectorLoss dpa = dpa_loss(ratios.values, rstar.values);
    const LossWithGrad dqp = diversity_loss(centroids(model.codebook));

    const TotalLoss total =
        total_loss({rec.value, commit.value, dqp.value, dpa.value}, {cfg.lambda_rec, cfg.lambda_dqp, cfg.lambda_dpa}, ph);
    if (!std::isfinite(total.value)) throw NumericalError("train_step: non-finite total loss");

    // Backward.
    Model grads = zeros_like(model);
    Matrix d_recon(dec.output.rows(), dec.output.cols(), rec.grad);
    for (double& v : d_recon.data()) v *= total.w_rec;
    MlpGrads dec_g = mlp_backward(dec, model.decoder, d_recon);
    grads.decoder = std::move(dec_g.params);

    // Straight-through: the decoder's gradient on Zhat is handed to Z unchanged.
    Matrix d_z = std::move(dec_g.input);
    detail::add_into(d_z, commit.d_z, total.w_commit);
    grads.encoder = mlp_backward(enc, model.encoder, d_z).params;

    Matrix d_zhat_cb = commit.d_z_hat;
    for (double& v : d_zhat_cb.data()) v *= total.w_commit;
    QuantizeGrads qg = quantize_backward(z, model.codebook, q.alloc, d_zhat_cb, qopts);
    for (std::size_t j = 0; j < geo.num_sub; ++j) grads.codebook.entries[j] = std::move(qg.codebook[j]);

    StepDiagnostics diag;
    diag.phase = ph;
    diag.max_count = q.alloc.max_count;
    if (total.w_dqp != 0.0) {
        Matrix scaled = dqp.grad;
        for (double& v : scaled.data()) v *= total.w_dqp;
        const std::vector<Matrix> spread = centroid_grad_to_entries(model.codebook, scaled);
        double sq = 0.0;
        for (std::size_t j = 0; j < geo.num_sub; ++j) {
            detail::add_into(grads.codebook.entries[j], spread[j]);
            sq += squared_norm(spread[j].data());
        }
        diag.dqp_grad_norm = std::sqrt(sq);
    }
    if (total.w_dpa != 0.0) {
        // The allocator learns only from the ratio loss; its input is treated as a constant.
        for (std::size_t b = 0; b < alloc_fwd.size(); ++b) {
            std::vector<double> d_r(dpa.grad.begin() + static_cast<std::ptrdiff_t>(b * per_image),
                                    dpa.grad.begin() + static_cast<std::ptrdiff_t>((b + 1) * per_image));
            for (double& v : d_r) v *= total.w_dpa;
            AllocatorGrads ag = allocator_backward(alloc_fwd[b], model.allocator, d_r);
            detail::add_into(grads.allocator.conv1_w, ag.params.conv1_w);
            detail::add_into(grads.allocator.conv1_b, ag.params.conv1_b);
            detail::add_into(grads.allocator.conv2_w, ag.params.conv2_w);
            detail::add_into(grads.allocator.conv2_b, ag.params.conv2_b);
        }
        double sq = 0.0;
        grads.allocator.for_each_tensor([&](const Matrix& t) { sq += squared_norm(t.data()); });
        diag.allocator_grad_norm = std::sqrt(sq);
    }

    std::vector<Matrix*> params;
    std::vector<const Matrix*> gradients;
    model.for_each_tensor([&](Matrix& t) { params.push_back(&t); });
    std::as_const(grads).for_each_tensor([&](const Matrix& t) { gradients.push_back(&t); });
    std::vector<double> lr_scale;
    if (cfg.allocator_lr > 0.0 && cfg.learning_rate > 0.0) {
        // Tensor order is encoder, decoder, allocator, codebook.
        std::size_t first = 0, n_alloc = 0;
        model.encoder.for_each_tensor([&](const Matrix&) { ++first; });
        model.decoder.for_each_tensor([&](const Matrix&) { ++first; });
        model.allocator.for_each_tensor([&](const Matrix&) { ++n_alloc; });
        lr_scale.assign(params.size(), 1.0);
        for (std::size_t i = first; i < first + n_alloc; ++i) lr_scale[i] = cfg.allocator_lr / cfg.learning_rate;
    }
    adam_step(params, gradients, state.optimizer, AdamConfig{cfg.learning_rate}, lr_scale);

    // Metrics.
    StepMetrics m;
    m.step = state.step;
    m.loss_total = total.value;
    m.loss_rec = rec.value;
    m.loss_commit = commit.value;
    m.loss_dqp = ph == Phase::Active ? dqp.value : 0.0;
    m.loss_dpa = ph == Phase::Active ? dpa.value : 0.0;
    diag.counts = q.alloc.counts();
    double cs = 0.0, cs2 = 0.0;
    for (std::size_t c : diag.counts) {
        cs += static_cast<double>(c);
        cs2 += static_cast<double>(c) * static_cast<double>(c);
    }
    const double nc = static_cast<double>(diag.counts.size());
    m.mean_count = cs / nc;
    m.std_count = std::sqrt(std::max(0.0, cs2 / nc - m.mean_count * m.mean_count));
    m.mean_R = detail::mean_of(ratios.values);
    m.mean_Rstar = detail::mean_of(rstar.values);
    const std::vector<double> ppl = codebook_perplexity(q.usage);
    m.perplexity = detail::mean_of(ppl);
    diag.ratios = std::move(ratios.values);
    diag.ratio_targets = rstar.values;

    ++state.step;
    return {m, std::move(diag)};
}

/// Train/validation split for a config: the synthetic generator (seeded from
/// the "data" stream) or a manifest file.
inline std::pair<Dataset, Dataset> make_datasets(const TrainConfig& cfg) {
    Dataset all;
    if (cfg.data == "synthetic") {
        if (cfg.geo.image_height != cfg.geo.image_width || cfg.geo.channels != 1)
            throw ConfigError("synthetic data requires square grayscale images");
        all = gen_synthetic(cfg.num_images, cfg.geo.image_height, cfg.geo.patch, cfg.mix, derive_seed(cfg.seed, "data"));
    } else {
        all = load_manifest(cfg.data);
    }
    if (all.items.size() < 2) throw ConfigError("dataset needs at least two images");
    return split(all, cfg.train_fraction, cfg.seed);
}

/// Batch for `step`: batch_size distinct training images chosen with a
/// generator seeded from (seed, "batch", step), so any step can be replayed.
inline std::vector<const Image*> batch_for_step(const Dataset& train, const TrainConfig& cfg, std::uint64_t step) {
    std::vector<std::size_t> idx(train.items.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(derive_seed(cfg.seed, "batch", step));
    const std::size_t b = std::min(cfg.batch_size, idx.size());
    for (std::size_t i = 0; i < b; ++i) std::swap(idx[i], idx[i + rng.index(idx.size() - i)]);
    std::vector<const Image*> out;
    for (std::size_t i = 0; i < b; ++i) out.push_back(&train.items[idx[i]].image);
    return out;
}

using StepObserver = std::function<void(const StepMetrics&, const StepDiagnostics&)>;

struct RunOptions {
    std::optional<std::string> resume_from;
    StepObserver observer;
};

struct RunResult {
    TrainState state;
    std::vector<StepMetrics> metrics;
};

/// Executes the remaining steps of `cfg`. Writes the metrics CSV (header plus
/// one row per executed step) and checkpoints at the warm-up boundary,
/// every `checkpoint_every` steps, and at the end when paths are configured.
inline RunResult run_training(const TrainConfig& cfg, const RunOptions& opts = {}) {
    cfg.validate();
    const auto [train, val] = make_datasets(cfg);
    (void)val;
    TrainState state = opts.resume_from ? from_checkpoint(load_checkpoint(*opts.resume_from)) : init_train_state(cfg);
    if (!(state.model.geo == cfg.geo)) throw ConfigError("checkpoint geometry does not match the configuration");

    std::ofstream metrics_out;
    if (!cfg.metrics_path.empty()) {
        ensure_parent_directory(cfg.metrics_path);
        metrics_out.open(cfg.metrics_path, std::ios::trunc);
        if (!metrics_out) throw IoError("cannot open metrics file '" + cfg.metrics_path + "'");
        metrics_out << kMetricsHeader << '\n';
    }
    auto save = [&](const std::string& path) {
        if (!cfg.checkpoint_path.empty()) save_checkpoint(to_checkpoint(state), path);
    };

    const std::size_t boundary = warmup_steps(cfg.total_steps, cfg.warmup_fraction);
    RunResult result;
    while (state.step < cfg.total_steps) {
        if (state.step == boundary && boundary > 0) save(cfg.checkpoint_path + ".warmup");
        if (cfg.checkpoint_every && state.step > 0 && state.step % cfg.checkpoint_every == 0)
            save(cfg.checkpoint_path + ".step" + std::to_string(state.step));
        const auto batch = batch_for_step(train, cfg, state.step);
        StepOutcome out;
        try {
            out = train_step(state, batch, cfg);
        } catch (const NumericalError&) {
            save(cfg.checkpoint_path + ".crash");
            throw;
        }
        if (metrics_out.is_open()) {
            metrics_out << metrics_row(out.metrics) << '\n';
            if (!metrics_out) throw IoError("write failed for metrics file '" + cfg.metrics_path + "'");
        }
        if (opts.observer) opts.observer(out.metrics, out.diagnostics);
        result.metrics.push_back(out.metrics);
    }
    save(cfg.checkpoint_path);
    result.state = std::move(state);
    return result;
}

}  // namespace cddvt
