// End-to-end acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [--only 1,2,...] [--known-failures 3,4]
//
// Exit status is 0 when every criterion passes, or when the failing set is a
// subset of --known-failures (each such line is still printed as FAIL).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cddvt/cddvt.hpp"
#include "oracles.hpp"

using namespace cddvt;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// Shared settings of every trained model below. Everything not listed keeps
// its library default (desk-scale geometry, lr 1e-3, K=16, ...).
constexpr std::size_t kTrendSteps = 2000;
constexpr double kTemperature = 1.0;
const std::uint64_t kSeeds[] = {0, 1, 2};

TrainConfig base_config(std::uint64_t seed, std::size_t steps) {
    TrainConfig c;
    c.seed = seed;
    c.total_steps = steps;
    c.warmup_fraction = 0.25;
    c.temperature = kTemperature;
    return c;
}

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> lines_of(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

// ---------------------------------------------------------------------------
// Trained models, cached so runs shared between criteria happen once.

struct TrainedRun {
    TrainConfig cfg;
    Model model;
    EvalResult eval;  // validation split, in the mode the model was trained with
    double centroid_abs_cos = 0.0;
    double seconds = 0.0;
};

std::map<std::string, TrainedRun> g_runs;

const TrainedRun& trained(const std::string& key, const TrainConfig& cfg) {
    if (auto it = g_runs.find(key); it != g_runs.end()) return it->second;
    const auto t0 = Clock::now();
    RunResult r = run_training(cfg);
    const auto [train, val] = make_datasets(cfg);
    (void)train;
    TrainedRun out{cfg, std::move(r.state.model), {}, 0.0, 0.0};
    out.eval = evaluate(out.model, val, active_mode(cfg), quantize_options(cfg));
    out.centroid_abs_cos = mean_abs_offdiagonal(centroid_similarity_matrix(out.model.codebook));
    out.seconds = seconds_since(t0);
    std::printf("    trained %-28s %6.1f s  val mse %.6f  mean count %.3f  centroid |cos| %.4f\n", key.c_str(),
                out.seconds, out.eval.mean_mse, out.eval.mean_count, out.centroid_abs_cos);
    std::fflush(stdout);
    return g_runs.emplace(key, std::move(out)).first->second;
}

std::string run_key(const char* what, std::uint64_t seed) { return std::string(what) + "/seed" + std::to_string(seed); }

const TrainedRun& adaptive_run(std::uint64_t seed, double lambda_dqp) {
    TrainConfig c = base_config(seed, kTrendSteps);
    c.lambda_dqp = lambda_dqp;
    return trained(run_key(lambda_dqp == 0.0 ? "adaptive,lambda_dqp=0" : "adaptive", seed), c);
}

const TrainedRun& mode_run(std::uint64_t seed, TrainMode mode) {
    if (mode == TrainMode::Adaptive) return adaptive_run(seed, 0.25);
    TrainConfig c = base_config(seed, kTrendSteps);
    c.mode = mode;
    return trained(run_key(mode == TrainMode::Top1 ? "top1" : "top10", seed), c);
}

// ---------------------------------------------------------------------------
// The 1000-step warm-up run is shared by criteria 2, 6, 7 and 9.

struct WarmupRun {
    TrainConfig cfg;
    std::vector<StepMetrics> metrics;
    std::size_t steps_seen = 0;
    std::size_t bad_targets = 0, bad_counts = 0, target_values = 0, count_values = 0;
    double min_target = 1.0, max_target = 0.0;
    std::size_t min_count = 0, max_count = 0;
    Model model;
    double seconds = 0.0;
};

struct Scratch {
    std::filesystem::path dir = std::filesystem::temp_directory_path() / "cddvt_acceptance";
    Scratch() {
        std::filesystem::remove_all(dir);
        std::filesystem::create_directories(dir);
    }
    ~Scratch() {
        std::error_code ec;
        std::filesystem::remove_all(dir, ec);
    }
    std::string file(const char* name) const { return (dir / name).string(); }
};

Scratch* g_scratch = nullptr;
WarmupRun* g_warmup = nullptr;

const WarmupRun& warmup_run() {
    if (g_warmup) return *g_warmup;
    static WarmupRun w;
    w.cfg = base_config(0, 1000);
    w.cfg.metrics_path = g_scratch->file("a.csv");
    w.cfg.checkpoint_path = g_scratch->file("a.ckpt");
    const double floor_ = 1.0 / static_cast<double>(w.cfg.geo.sub_size);
    w.min_count = w.cfg.max_count;
    RunOptions o;
    o.observer = [&](const StepMetrics&, const StepDiagnostics& d) {
        ++w.steps_seen;
        for (double r : d.ratio_targets) {
            ++w.target_values;
            w.min_target = std::min(w.min_target, r);
            w.max_target = std::max(w.max_target, r);
            if (!(r >= floor_ && r <= 1.0)) ++w.bad_targets;
        }
        for (std::size_t n : d.counts) {
            ++w.count_values;
            w.min_count = std::min(w.min_count, n);
            w.max_count = std::max(w.max_count, n);
            if (n < 1 || n > w.cfg.max_count) ++w.bad_counts;
        }
    };
    const auto t0 = Clock::now();
    RunResult r = run_training(w.cfg, o);
    w.seconds = seconds_since(t0);
    w.metrics = std::move(r.metrics);
    w.model = std::move(r.state.model);
    std::printf("    trained %-28s %6.1f s\n", "warm-up run (1000 steps)", w.seconds);
    g_warmup = &w;
    return w;
}

// ---------------------------------------------------------------------------
// Criteria

Verdict gradient_suite() {
    const auto t0 = Clock::now();
    const auto rows = run_gradient_suite({0, 1, 2, 3, 4}, 1e-5, 1e-4);
    const double secs = seconds_since(t0);
    std::size_t failed = 0;
    double worst = 0.0;
    std::string first_fail;
    for (const GradCheckRow& r : rows) {
        worst = std::max(worst, r.report.max_rel_diff);
        if (!r.report.passed) {
            if (failed++ == 0) first_fail = r.name + " seed " + std::to_string(r.seed);
        }
    }
    Verdict v;
    v.pass = failed == 0 && secs < 60.0;
    v.detail = std::to_string(rows.size()) + " checks, " + std::to_string(failed) + " failed, worst rel " +
               fmt("%.2e", worst) + ", " + fmt("%.1f s", secs) + (first_fail.empty() ? "" : ", first failure " + first_fail);
    return v;
}

Verdict warmup_invariant() {
    const WarmupRun& w = warmup_run();
    const std::size_t boundary = warmup_steps(w.cfg.total_steps, w.cfg.warmup_fraction);
    std::size_t violations = 0;
    for (std::size_t s = 0; s < boundary; ++s) {
        const StepMetrics& m = w.metrics[s];
        if (m.mean_count != 1.0 || m.loss_dqp != 0.0 || m.loss_dpa != 0.0) ++violations;
    }
    std::ptrdiff_t first_above = -1;
    for (std::size_t s = boundary; s < std::min(w.metrics.size(), boundary + 50); ++s)
        if (w.metrics[s].mean_count > 1.0) {
            first_above = static_cast<std::ptrdiff_t>(s);
            break;
        }
    Verdict v;
    v.pass = boundary == 250 && violations == 0 && first_above >= 0 && w.seconds < 300.0;
    v.detail = "steps 0-" + std::to_string(boundary - 1) + ": " + std::to_string(violations) +
               " rows with count != 1 or gated loss != 0; first count > 1 at step " + std::to_string(first_above) +
               " (active from " + std::to_string(boundary) + "); " + fmt("%.1f s", w.seconds);
    return v;
}

Verdict diversity_effect() {
    int passed = 0;
    std::string detail;
    double secs = 0.0;
    for (std::uint64_t seed : kSeeds) {
        const TrainedRun& with = adaptive_run(seed, 0.25);
        const TrainedRun& without = adaptive_run(seed, 0.0);
        secs += with.seconds + without.seconds;
        const double margin = without.centroid_abs_cos - with.centroid_abs_cos;
        const double mse_ratio = with.eval.mean_mse / without.eval.mean_mse;
        const bool ok = margin >= 0.05 && mse_ratio <= 1.10;
        passed += ok;
        detail += "seed " + std::to_string(seed) + ": |cos| " + fmt("%.4f", without.centroid_abs_cos) + " -> " +
                  fmt("%.4f", with.centroid_abs_cos) + " (margin " + fmt("%+.4f", margin) + "), mse ratio " +
                  fmt("%.3f", mse_ratio) + (ok ? " ok; " : " no; ");
    }
    Verdict v;
    v.pass = passed >= 2 && secs < 900.0;
    v.detail = detail + std::to_string(passed) + "/3 seeds, " + fmt("%.0f s", secs);
    return v;
}

Verdict allocation_vs_top1() {
    int passed = 0;
    std::string detail;
    double secs = 0.0;
    for (std::uint64_t seed : kSeeds) {
        const TrainedRun& t1 = mode_run(seed, TrainMode::Top1);
        const TrainedRun& t10 = mode_run(seed, TrainMode::FixedTopN);
        const TrainedRun& ad = mode_run(seed, TrainMode::Adaptive);
        secs += t1.seconds + t10.seconds + ad.seconds;
        const bool ok = t10.eval.mean_mse < t1.eval.mean_mse && ad.eval.mean_mse <= t1.eval.mean_mse &&
                        ad.eval.mean_count < 10.0;
        passed += ok;
        detail += "seed " + std::to_string(seed) + ": top1 " + fmt("%.5f", t1.eval.mean_mse) + ", top10 " +
                  fmt("%.5f", t10.eval.mean_mse) + ", adaptive " + fmt("%.5f", ad.eval.mean_mse) + " @ " +
                  fmt("%.2f", ad.eval.mean_count) + (ok ? " ok; " : " no; ");
    }
    Verdict v;
    v.pass = passed >= 2 && secs < 1200.0;
    v.detail = detail + std::to_string(passed) + "/3 seeds, " + fmt("%.0f s", secs);
    return v;
}

Verdict complexity_correlation_check() {
    // The first seed's adaptive model, shared with the previous criterion.
    const TrainedRun& ad = mode_run(kSeeds[0], TrainMode::Adaptive);
    const double rho = complexity_correlation(ad.eval.counts, ad.eval.labels);
    std::string others;
    for (std::size_t i = 1; i < std::size(kSeeds); ++i) {
        const auto it = g_runs.find(run_key("adaptive", kSeeds[i]));
        if (it != g_runs.end())
            others += ", seed " + std::to_string(kSeeds[i]) + " " +
                      fmt("%.3f", complexity_correlation(it->second.eval.counts, it->second.eval.labels));
    }
    Verdict v;
    v.pass = rho >= 0.5;
    v.detail = "seed " + std::to_string(kSeeds[0]) + " Spearman " + fmt("%.4f", rho) + " over " +
               std::to_string(ad.eval.counts.size()) + " val patches" + (others.empty() ? "" : " (for reference" + others + ")");
    return v;
}

Verdict ratio_range() {
    const WarmupRun& w = warmup_run();
    Verdict v;
    v.pass = w.steps_seen == w.cfg.total_steps && w.bad_targets == 0 && w.bad_counts == 0 && w.target_values > 0;
    v.detail = std::to_string(w.target_values) + " targets in [" + fmt("%.6f", w.min_target) + ", " +
               fmt("%.6f", w.max_target) + "], " + std::to_string(w.count_values) + " counts in [" +
               std::to_string(w.min_count) + ", " + std::to_string(w.max_count) + "], " +
               std::to_string(w.bad_targets + w.bad_counts) + " out of range";
    return v;
}

Verdict oracle_equivalences() {
    std::vector<std::string> broken;

    // quantize_chunk against exhaustive subset enumeration.
    double worst = 0.0;
    std::size_t mismatched = 0;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        Rng rng(derive_seed(seed, "acceptance-subsets"));
        const std::size_t vp = 1 + rng.index(8), dp = 1 + rng.index(4);
        const std::size_t n = 1 + rng.index(vp);
        Matrix sub = detail::random_matrix(vp, dp, rng);
        if (seed % 4 == 0 && vp > 1)
            for (std::size_t k = 0; k < dp; ++k) sub(vp - 1, k) = sub(0, k);
        std::vector<double> row(dp);
        for (double& x : row) x = rng.uniform(-1, 1);
        std::vector<double> sims(vp);
        for (std::size_t i = 0; i < vp; ++i) sims[i] = cosine(row, sub.row(i));
        const std::vector<std::size_t> want = brute_force_best(sims, n);
        const double temp = 0.25 + rng.uniform();
        const ChunkQuantization q = quantize_chunk(row, sub, n, vp, temp);
        if (q.indices != want) {
            ++mismatched;
            continue;
        }
        std::vector<double> e(n);
        double z = 0.0;
        for (std::size_t t = 0; t < n; ++t) z += (e[t] = std::exp(sims[want[t]] / temp));
        for (std::size_t k = 0; k < dp; ++k) {
            double out = 0.0;
            for (std::size_t t = 0; t < n; ++t) out += e[t] / z * sub(want[t], k);
            worst = std::max(worst, std::abs(q.output[k] - out));
        }
    }
    if (mismatched || worst > 1e-12) broken.push_back("subset enumeration");

    // Adaptive(K=1) and forced n=1 against Warmup on a trained model.
    const WarmupRun& w = warmup_run();
    const auto [train, val] = make_datasets(w.cfg);
    (void)train;
    const QuantizeOptions o = quantize_options(w.cfg);
    const EvalResult warm = evaluate(w.model, val, QuantizeMode::warmup(), o);
    const EvalResult k1 = evaluate(w.model, val, QuantizeMode::adaptive(1), o);
    bool k1_same = same_bits(k1.mean_mse, warm.mean_mse) && same_bits(k1.ssim, warm.ssim) && k1.counts == warm.counts;
    for (std::size_t i = 0; i < val.items.size() && k1_same; ++i) {
        const Reconstruction a = reconstruct(w.model, val.items[i].image, QuantizeMode::warmup(), o);
        const Reconstruction b = reconstruct(w.model, val.items[i].image, QuantizeMode::adaptive(1), o);
        k1_same = a.image == b.image;
    }
    if (!k1_same) broken.push_back("adaptive K=1");
    std::vector<EvalResult> det;
    const std::size_t one[] = {1};
    rate_distortion(w.model, val, one, w.cfg.max_count, o, &det);
    if (!(same_bits(det[0].mean_mse, warm.mean_mse) && same_bits(det[0].psnr, warm.psnr) &&
          same_bits(det[0].ssim, warm.ssim)))
        broken.push_back("forced n=1");

    // Spearman against Pearson-on-brute-force-ranks.
    double sp_worst = 0.0;
    for (std::uint64_t seed = 0; seed < 500; ++seed) {
        Rng rng(derive_seed(seed, "acceptance-spearman"));
        const std::size_t n = 3 + rng.index(100);
        std::vector<double> x(n), y(n);
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = static_cast<double>(rng.index(1 + n / 4));
            y[i] = rng.index(3) == 0 ? x[i] : rng.uniform();
        }
        if (std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; })) x[0] += 1.0;
        sp_worst = std::max(sp_worst, std::abs(spearman(x, y) - rank_pearson_oracle(x, y)));
    }
    if (sp_worst > 1e-12) broken.push_back("spearman");

    Verdict v;
    v.pass = broken.empty();
    v.detail = "1000 subset cases (" + std::to_string(mismatched) + " index mismatches, max |diff| " +
               fmt("%.1e", worst) + "); adaptive K=1 " + (k1_same ? "bit-identical" : "DIFFERS") +
               "; forced n=1 " + (std::find(broken.begin(), broken.end(), "forced n=1") == broken.end() ? "bit-identical" : "DIFFERS") +
               "; Spearman max |diff| " + fmt("%.1e", sp_worst) + " over 500 cases";
    return v;
}

Verdict metric_oracles() {
    Image zero(32, 32), one(32, 32), tenth(32, 32);
    one.pixels.assign(one.pixels.size(), 1.0);
    tenth.pixels.assign(tenth.pixels.size(), 0.1);
    const double p1 = psnr_from_mse(0.01);
    const double p2 = psnr(zero, tenth);
    const double s = ssim(zero, one);
    const double s_want = 1e-4 / (1.0 + 1e-4);
    Rng rng(derive_seed(0, "acceptance-ssim"));
    bool self_one = true;
    for (int t = 0; t < 50; ++t) {
        Image a(32, 32, t % 2 ? 3 : 1);
        for (double& x : a.pixels) x = rng.uniform();
        self_one = self_one && ssim(a, a) == 1.0;
    }
    Verdict v;
    v.pass = std::abs(p1 - 20.0) <= 1e-9 && std::abs(p2 - 20.0) <= 1e-9 && std::abs(s - s_want) <= 1e-9 && self_one;
    v.detail = "psnr(mse 0.01) = " + fmt("%.15f", p1) + ", image pair " + fmt("%.15f", p2) + "; ssim(0, 1) = " +
               fmt("%.15g", s) + " (want " + fmt("%.15g", s_want) + "); ssim(a, a) == 1 on 50 images: " +
               (self_one ? "yes" : "no");
    return v;
}

Verdict determinism() {
    const WarmupRun& w = warmup_run();
    const auto t0 = Clock::now();
    TrainConfig again = w.cfg;
    again.metrics_path = g_scratch->file("b.csv");
    again.checkpoint_path = g_scratch->file("b.ckpt");
    run_training(again);
    const std::string a = slurp(w.cfg.metrics_path), b = slurp(again.metrics_path);
    const bool same_csv = !a.empty() && a == b;

    TrainConfig resumed = w.cfg;
    resumed.metrics_path = g_scratch->file("c.csv");
    resumed.checkpoint_path = g_scratch->file("c.ckpt");
    RunOptions o;
    o.resume_from = w.cfg.checkpoint_path + ".warmup";
    run_training(resumed, o);
    const auto full = lines_of(a), tail = lines_of(slurp(resumed.metrics_path));
    const std::size_t boundary = warmup_steps(w.cfg.total_steps, w.cfg.warmup_fraction);
    bool same_tail = tail.size() == 1 + w.cfg.total_steps - boundary && !full.empty() && tail[0] == full[0];
    for (std::size_t i = 1; same_tail && i < tail.size(); ++i) same_tail = tail[i] == full[boundary + i];
    const bool same_ckpt = read_file(w.cfg.checkpoint_path) == read_file(resumed.checkpoint_path);

    Verdict v;
    v.pass = same_csv && same_tail && same_ckpt;
    v.detail = std::string("metrics CSVs ") + (same_csv ? "byte-identical" : "DIFFER") + " (" +
               std::to_string(a.size()) + " bytes); resume from step " + std::to_string(boundary) + ": " +
               std::to_string(tail.size() ? tail.size() - 1 : 0) + " rows " + (same_tail ? "match" : "DIFFER") +
               ", final checkpoint " + (same_ckpt ? "byte-identical" : "DIFFERS") + "; " + fmt("%.1f s", seconds_since(t0));
    return v;
}

std::set<int> parse_list(const char* s) {
    std::set<int> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');)
        if (!item.empty()) out.insert(std::stoi(item));
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only, known;
    for (int i = 1; i < argc; ++i) {
        if (!std::strcmp(argv[i], "--only") && i + 1 < argc) only = parse_list(argv[++i]);
        else if (!std::strcmp(argv[i], "--known-failures") && i + 1 < argc) known = parse_list(argv[++i]);
        else {
            std::fprintf(stderr, "usage: %s [--only 1,2,...] [--known-failures 3,4]\n", argv[0]);
            return 2;
        }
    }

    Scratch scratch;
    g_scratch = &scratch;
    const std::pair<const char*, std::function<Verdict()>> criteria[] = {
        {"gradient suite", gradient_suite},
        {"warm-up invariant", warmup_invariant},
        {"diversity effect", diversity_effect},
        {"allocation vs Top-1", allocation_vs_top1},
        {"complexity correlation", complexity_correlation_check},
        {"ratio target and count range", ratio_range},
        {"oracle equivalences", oracle_equivalences},
        {"metric oracles", metric_oracles},
        {"determinism and resume", determinism},
    };

    const auto t0 = Clock::now();
    std::vector<int> failed;
    for (int i = 0; i < static_cast<int>(std::size(criteria)); ++i) {
        const int id = i + 1;
        if (!only.empty() && !only.count(id)) continue;
        Verdict v;
        try {
            v = criteria[i].second();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        std::printf("%s  %d  %-30s %s\n", v.pass ? "PASS" : "FAIL", id, criteria[i].first, v.detail.c_str());
        std::fflush(stdout);
        if (!v.pass) failed.push_back(id);
    }
    std::printf("total %.0f s\n", seconds_since(t0));

    bool unexpected = false;
    for (int id : failed) unexpected = unexpected || !known.count(id);
    if (!failed.empty()) {
        std::printf("failed:");
        for (int id : failed) std::printf(" %d%s", id, known.count(id) ? " (known)" : "");
        std::printf("\n");
    }
    return unexpected ? 1 : 0;
}
