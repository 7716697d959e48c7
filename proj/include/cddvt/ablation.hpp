#pragma once

#include <algorithm>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "evaluation.hpp"
#include "metrics.hpp"
#include "trainer.hpp"

namespace cddvt {

/// One trained variant of an ablation, evaluated on the validation split in
/// the quantizer mode it was trained with.
struct AblationRow {
    std::string variant;  // e.g. "lambda_dqp=0", "top1"
    TrainConfig cfg;
    EvalResult eval;
    double centroid_abs_cos = 0.0;  // mean |cos| over distinct centroid pairs
    double spearman = 0.0;          // allocation count vs complexity label; NaN when undefined
    double final_loss_rec = 0.0;
};

namespace detail {

inline AblationRow train_and_evaluate(std::string variant, TrainConfig cfg) {
    cfg.checkpoint_path.clear();
    cfg.metrics_path.clear();
    cfg.checkpoint_every = 0;
    const RunResult run = run_training(cfg);
    const auto [train, val] = make_datasets(cfg);
    (void)train;
    AblationRow row;
    row.variant = std::move(variant);
    row.cfg = cfg;
    row.eval = evaluate(run.state.model, val, active_mode(cfg), quantize_options(cfg));
    row.centroid_abs_cos = mean_abs_offdiagonal(centroid_similarity_matrix(run.state.model.codebook));
    row.spearman = std::numeric_limits<double>::quiet_NaN();
    // Undefined without labels or when every patch got the same count (e.g. Top-1).
    const auto [lo, hi] = std::minmax_element(row.eval.counts.begin(), row.eval.counts.end());
    if (!row.eval.labels.empty() && *lo != *hi) row.spearman = complexity_correlation(row.eval.counts, row.eval.labels);
    if (!run.metrics.empty()) row.final_loss_rec = run.metrics.back().loss_rec;
    return row;
}

}  // namespace detail

/// lambda_DQP in {0, 0.25}, everything else as in `base`.
inline std::vector<AblationRow> ablate_diversity(const TrainConfig& base) {
    std::vector<AblationRow> rows;
    for (double lam : {0.0, 0.25}) {
        TrainConfig c = base;
        c.lambda_dqp = lam;
        char name[32];
        std::snprintf(name, sizeof name, "lambda_dqp=%g", lam);
        rows.push_back(detail::train_and_evaluate(name, c));
    }
    return rows;
}

/// Top-1, FixedTopN(top_n) and Adaptive(K) training under one budget.
inline std::vector<AblationRow> ablate_topk(const TrainConfig& base) {
    std::vector<AblationRow> rows;
    for (TrainMode m : {TrainMode::Top1, TrainMode::FixedTopN, TrainMode::Adaptive}) {
        TrainConfig c = base;
        c.mode = m;
        rows.push_back(detail::train_and_evaluate(active_mode(c).name(), c));
    }
    return rows;
}

/// No warm-up against the configured warm-up fraction (0.25 when the base has none).
inline std::vector<AblationRow> ablate_warmup(const TrainConfig& base) {
    std::vector<AblationRow> rows;
    const double with = base.warmup_fraction > 0.0 ? base.warmup_fraction : 0.25;
    for (double f : {0.0, with}) {
        TrainConfig c = base;
        c.warmup_fraction = f;
        char name[32];
        std::snprintf(name, sizeof name, "warmup_fraction=%g", f);
        rows.push_back(detail::train_and_evaluate(name, c));
    }
    return rows;
}

inline constexpr const char* kAblationHeader =
    "variant,setting,mean_mse,psnr,ssim,mean_count,centroid_abs_cos,spearman,final_loss_rec";

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::string s = std::string(kAblationHeader) + '\n';
    char buf[512];
    for (const AblationRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.variant.c_str(),
                      r.eval.setting.c_str(), r.eval.mean_mse, r.eval.psnr, r.eval.ssim, r.eval.mean_count,
                      r.centroid_abs_cos, r.spearman, r.final_loss_rec);
        s += buf;
    }
    return s;
}

}  // namespace cddvt
