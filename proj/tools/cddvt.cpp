// Command-line front end: one subcommand per process.
//
// Exit status: 0 success, 1 runtime failure, 2 usage error.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "cddvt/cddvt.hpp"

namespace {

using namespace cddvt;

struct Common {
    std::string config_path;
    std::vector<std::string> overrides;

    CliConfig load() const {
        if (config_path.empty()) return parse_config_text("", "<defaults>", overrides);
        return parse_config(config_path, overrides);
    }
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("-c,--config", c.config_path, "key = value config file (defaults when omitted)");
    sub->add_option("--set", c.overrides, "override one config key, as key=value (repeatable)");
}

void write_text(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    ensure_parent_directory(path);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << text;
    if (!out) throw IoError("write failed for '" + path + "'");
}

QuantizeMode parse_mode(const std::string& name, const TrainConfig& cfg) {
    if (name.empty()) return active_mode(cfg);
    if (name == "top1") return QuantizeMode::warmup();
    if (name == "topN") return QuantizeMode::fixed_top_n(cfg.fixed_n);
    if (name == "adaptive") return QuantizeMode::adaptive(cfg.max_count);
    throw ArgumentError("--mode must be top1, topN or adaptive, got '" + name + "'");
}

Model load_model(const std::string& path, const TrainConfig& cfg) {
    Checkpoint ck = load_checkpoint(path);
    if (!(ck.model.geo == cfg.geo))
        throw ConfigError("checkpoint '" + path + "' was trained with a different geometry than the config");
    return std::move(ck.model);
}

int cmd_train(const Common& common, const std::string& resume) {
    const CliConfig cli = common.load();
    RunOptions opts;
    if (!resume.empty()) opts.resume_from = resume;
    const RunResult r = run_training(cli.train, opts);
    std::cout << kMetricsHeader << '\n';
    if (!r.metrics.empty()) std::cout << metrics_row(r.metrics.back()) << '\n';
    if (!cli.train.checkpoint_path.empty()) std::cout << "checkpoint: " << cli.train.checkpoint_path << '\n';
    return 0;
}

int cmd_eval(const Common& common, const std::string& ckpt, const std::string& out) {
    const CliConfig cli = common.load();
    const Model model = load_model(ckpt, cli.train);
    const auto [train, val] = make_datasets(cli.train);
    (void)train;
    std::vector<EvalResult> rows;
    rate_distortion(model, val, cli.rd_counts, cli.train.max_count, quantize_options(cli.train), &rows);
    std::string csv = std::string(kEvalHeader) + '\n';
    for (const EvalResult& e : rows) csv += eval_row(e) + '\n';
    write_text(out, csv);
    return 0;
}

int cmd_reconstruct(const Common& common, const std::string& ckpt, const std::string& input, const std::string& output,
                    const std::string& mode, const std::string& alloc_csv) {
    const CliConfig cli = common.load();
    const Model model = load_model(ckpt, cli.train);
    const Image img = load_raster(input);
    const Reconstruction rec = reconstruct(model, img, parse_mode(mode, cli.train), quantize_options(cli.train));
    save_raster(rec.image, output);
    if (!alloc_csv.empty()) write_text(alloc_csv, allocation_csv(rec.alloc));
    std::printf("mse %.17g psnr %.17g\n", mean_squared_error(img, rec.image), psnr(img, rec.image));
    return 0;
}

int cmd_heatmap(const Common& common, const std::string& ckpt, const std::string& input, const std::string& output) {
    const CliConfig cli = common.load();
    const Model model = load_model(ckpt, cli.train);
    const Image img = load_raster(input);
    const QuantizeMode mode = QuantizeMode::adaptive(cli.train.max_count);
    const Reconstruction rec = reconstruct(model, img, mode, quantize_options(cli.train));
    const std::size_t p = model.geo.patch;
    save_raster(heatmap_image(allocation_heatmap(rec.alloc, img.height / p, img.width / p), cli.heatmap_scale), output);
    return 0;
}

int cmd_gradcheck(std::size_t seeds) {
    std::vector<std::uint64_t> s(seeds);
    for (std::size_t i = 0; i < seeds; ++i) s[i] = i;
    const std::vector<GradCheckRow> rows = run_gradient_suite(s);
    std::size_t failed = 0;
    std::printf("%-30s %4s %12s %12s  %s\n", "check", "seed", "max_rel", "max_abs", "result");
    for (const GradCheckRow& r : rows) {
        if (!r.report.passed) ++failed;
        std::printf("%-30s %4llu %12.3e %12.3e  %s\n", r.name.c_str(), static_cast<unsigned long long>(r.seed),
                    r.report.max_rel_diff, r.report.max_abs_diff, r.report.passed ? "pass" : "FAIL");
    }
    std::printf("%zu checks, %zu failed\n", rows.size(), failed);
    return failed == 0 ? 0 : 1;
}

int cmd_ablate(const Common& common, const std::string& which, const std::string& out) {
    const CliConfig cli = common.load();
    std::vector<AblationRow> rows;
    if (which == "warmup") rows = ablate_warmup(cli.train);
    else if (which == "topk") rows = ablate_topk(cli.train);
    else rows = ablate_diversity(cli.train);
    write_text(out, ablation_csv(rows));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adaptive primitive tokenizer: train, evaluate and inspect desk-scale models"};
    app.footer(config_help());
    app.require_subcommand(1);

    Common common;
    std::string resume, ckpt, out, input, output, mode, alloc_csv;
    std::size_t seeds = 5;

    auto* train = app.add_subcommand("train", "train a model as described by the config");
    add_common(train, common);
    train->add_option("--resume", resume, "continue from this checkpoint");

    auto* eval = app.add_subcommand("eval", "rate-distortion report on the validation split (CSV)");
    add_common(eval, common);
    eval->add_option("--checkpoint", ckpt, "trained checkpoint")->required();
    eval->add_option("-o,--out", out, "CSV path (stdout when omitted)");

    auto* recon = app.add_subcommand("reconstruct", "reconstruct one PGM/PPM image");
    add_common(recon, common);
    recon->add_option("--checkpoint", ckpt, "trained checkpoint")->required();
    recon->add_option("-i,--input", input, "input image")->required();
    recon->add_option("-o,--output", output, "reconstructed image")->required();
    recon->add_option("--mode", mode, "top1, topN or adaptive (default: the config's mode)");
    recon->add_option("--alloc-csv", alloc_csv, "also write the allocation map as CSV");

    auto* heat = app.add_subcommand("heatmap", "allocation-count heatmap of one image as PGM");
    add_common(heat, common);
    heat->add_option("--checkpoint", ckpt, "trained checkpoint")->required();
    heat->add_option("-i,--input", input, "input image")->required();
    heat->add_option("-o,--output", output, "heatmap PGM")->required();

    auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every analytic gradient");
    grad->add_option("--seeds", seeds, "seeds per check")->check(CLI::PositiveNumber);

    auto* abl_w = app.add_subcommand("ablate-warmup", "no warm-up vs warm-up (CSV)");
    auto* abl_k = app.add_subcommand("ablate-topk", "Top-1 vs Top-N vs adaptive training (CSV)");
    auto* abl_d = app.add_subcommand("ablate-diversity", "lambda_dqp 0 vs 0.25 (CSV)");
    for (auto* a : {abl_w, abl_k, abl_d}) {
        add_common(a, common);
        a->add_option("-o,--out", out, "CSV path (stdout when omitted)");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        if (*train) return cmd_train(common, resume);
        if (*eval) return cmd_eval(common, ckpt, out);
        if (*recon) return cmd_reconstruct(common, ckpt, input, output, mode, alloc_csv);
        if (*heat) return cmd_heatmap(common, ckpt, input, output);
        if (*grad) return cmd_gradcheck(seeds);
        if (*abl_w) return cmd_ablate(common, "warmup", out);
        if (*abl_k) return cmd_ablate(common, "topk", out);
        if (*abl_d) return cmd_ablate(common, "diversity", out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    std::cerr << app.help();
    return 2;
}
