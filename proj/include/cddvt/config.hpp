#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "errors.hpp"
#include "trainer.hpp"

namespace cddvt {

/// A bad config line. `key` is empty for syntax errors; `line` is 1-based.
struct ConfigKeyError : ConfigError {
    ConfigKeyError(const std::string& source, std::size_t line_no, std::string k, const std::string& msg)
        : ConfigError(source + ":" + std::to_string(line_no) + ": " + (k.empty() ? "" : "key '" + k + "': ") + msg),
          key(std::move(k)),
          line(line_no) {}
    std::string key;
    std::size_t line;
};

/// TrainConfig plus the options only some subcommands read.
struct CliConfig {
    TrainConfig train;
    std::vector<std::size_t> rd_counts{1, 2, 4, 10, 16};  // forced n values for eval / ablate-topk
    std::size_t heatmap_scale = 8;                        // pixels per patch cell in heatmap PGMs
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline bool parse_u64(std::string_view v, std::uint64_t& out) {
    if (v.empty()) return false;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    return ec == std::errc() && p == v.data() + v.size();
}

inline bool parse_real(std::string_view v, double& out) {
    if (v.empty()) return false;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    return ec == std::errc() && p == v.data() + v.size() && std::isfinite(out);
}

struct KeySpec {
    std::string type;  // shown in --help
    std::string fallback;
    std::string doc;
    // Returns an error message, empty on success.
    std::function<std::string(std::string_view, CliConfig&)> apply;
};

inline KeySpec count_key(std::function<std::size_t&(CliConfig&)> field, std::size_t min, std::string fallback,
                         std::string doc) {
    return {"count", std::move(fallback), std::move(doc), [field, min](std::string_view v, CliConfig& c) -> std::string {
                std::uint64_t x = 0;
                if (!parse_u64(v, x)) return "expected a non-negative integer, got '" + std::string(v) + "'";
                if (x < min) return "must be >= " + std::to_string(min);
                field(c) = static_cast<std::size_t>(x);
                return {};
            }};
}

inline KeySpec real_key(std::function<double&(CliConfig&)> field, double lo, double hi, bool hi_open,
                        std::string type, std::string fallback, std::string doc) {
    return {std::move(type), std::move(fallback), std::move(doc),
            [field, lo, hi, hi_open](std::string_view v, CliConfig& c) -> std::string {
                double x = 0.0;
                if (!parse_real(v, x)) return "expected a real number, got '" + std::string(v) + "'";
                if (x < lo || x > hi || (hi_open && x == hi)) {
                    std::ostringstream os;
                    os << "must be in [" << lo << ", " << hi << (hi_open ? ")" : "]");
                    return os.str();
                }
                field(c) = x;
                return {};
            }};
}

inline KeySpec open_fraction_key(std::function<double&(CliConfig&)> field, std::string fallback, std::string doc) {
    return {"fraction (0,1)", std::move(fallback), std::move(doc), [field](std::string_view v, CliConfig& c) -> std::string {
                double x = 0.0;
                if (!parse_real(v, x)) return "expected a real number, got '" + std::string(v) + "'";
                if (!(x > 0.0 && x < 1.0)) return "must be in (0, 1)";
                field(c) = x;
                return {};
            }};
}

inline KeySpec positive_real_key(std::function<double&(CliConfig&)> field, std::string fallback, std::string doc) {
    return {"real > 0", std::move(fallback), std::move(doc), [field](std::string_view v, CliConfig& c) -> std::string {
                double x = 0.0;
                if (!parse_real(v, x)) return "expected a real number, got '" + std::string(v) + "'";
                if (!(x > 0.0)) return "must be > 0";
                field(c) = x;
                return {};
            }};
}

inline const std::map<std::string, KeySpec>& config_schema() {
    constexpr double inf = 1e300;
    static const std::map<std::string, KeySpec> schema = [] {
        std::map<std::string, KeySpec> s;
        auto tc = [](auto member) {
            return [member](CliConfig& c) -> auto& { return c.train.*member; };
        };
        auto gc = [](auto member) {
            return [member](CliConfig& c) -> auto& { return c.train.geo.*member; };
        };
        s["total_steps"] = count_key(tc(&TrainConfig::total_steps), 1, "1000", "optimization steps");
        s["warmup_fraction"] = real_key(tc(&TrainConfig::warmup_fraction), 0.0, 1.0, true, "fraction [0,1)", "0.25",
                                        "share of steps trained with Top-1 and no DQP/DPA losses");
        s["batch_size"] = count_key(tc(&TrainConfig::batch_size), 1, "16", "images per step");
        s["learning_rate"] = real_key(tc(&TrainConfig::learning_rate), 0.0, inf, false, "real >= 0", "0.001",
                                      "Adam step size");
        s["allocator_lr"] = real_key(tc(&TrainConfig::allocator_lr), 0.0, inf, false, "real >= 0", "0.01",
                                     "Adam step size for the allocator (0 = learning_rate)");
        s["lambda_rec"] = real_key(tc(&TrainConfig::lambda_rec), 0.0, inf, false, "real >= 0", "1", "reconstruction weight");
        s["beta"] = real_key(tc(&TrainConfig::beta), 0.0, inf, false, "real >= 0", "0.25", "commitment weight");
        s["lambda_dqp"] = real_key(tc(&TrainConfig::lambda_dqp), 0.0, inf, false, "real >= 0", "0.25",
                                   "diversity loss weight");
        s["lambda_dpa"] = real_key(tc(&TrainConfig::lambda_dpa), 0.0, inf, false, "real >= 0", "1",
                                   "ratio loss weight");
        s["mode"] = {"adaptive|topN|top1", "adaptive", "quantizer after warm-up",
                     [](std::string_view v, CliConfig& c) -> std::string {
                         if (v == "adaptive") c.train.mode = TrainMode::Adaptive;
                         else if (v == "topN") c.train.mode = TrainMode::FixedTopN;
                         else if (v == "top1") c.train.mode = TrainMode::Top1;
                         else return "expected adaptive, topN or top1, got '" + std::string(v) + "'";
                         return {};
                     }};
        s["K"] = count_key(tc(&TrainConfig::max_count), 1, "16", "largest adaptive count");
        s["top_n"] = count_key(tc(&TrainConfig::fixed_n), 1, "10", "count used by mode = topN");
        s["K_pool"] = count_key(tc(&TrainConfig::pool_size), 0, "0", "candidate pool size (0 = the largest count)");
        s["temperature"] = positive_real_key(tc(&TrainConfig::temperature), "1", "softmax temperature of the weights");
        s["weighting"] = {"softmax|linear", "softmax", "how similarities become weights",
                          [](std::string_view v, CliConfig& c) -> std::string {
                              if (v == "softmax") c.train.weighting = Weighting::Softmax;
                              else if (v == "linear") c.train.weighting = Weighting::Linear;
                              else return "expected softmax or linear, got '" + std::string(v) + "'";
                              return {};
                          }};
        s["image_height"] = count_key(gc(&ModelGeometry::image_height), 1, "32", "pixels");
        s["image_width"] = count_key(gc(&ModelGeometry::image_width), 1, "32", "pixels");
        s["channels"] = count_key(gc(&ModelGeometry::channels), 1, "1", "1 (PGM) or 3 (PPM)");
        s["patch"] = count_key(gc(&ModelGeometry::patch), 1, "4", "patch side in pixels");
        s["hidden_dim"] = count_key(gc(&ModelGeometry::hidden_dim), 1, "32", "encoder/decoder hidden width");
        s["M"] = count_key(gc(&ModelGeometry::num_sub), 1, "4", "sub-codebooks");
        s["V_prime"] = count_key(gc(&ModelGeometry::sub_size), 1, "64", "primitives per sub-codebook");
        s["D_prime"] = count_key(gc(&ModelGeometry::prim_dim), 1, "4", "primitive dimension");
        s["seed"] = {"u64", "0", "master seed", [](std::string_view v, CliConfig& c) -> std::string {
                         std::uint64_t x = 0;
                         if (!parse_u64(v, x)) return "expected a non-negative integer, got '" + std::string(v) + "'";
                         c.train.seed = x;
                         return {};
                     }};
        s["data"] = {"synthetic|path", "synthetic", "dataset: synthetic or a manifest file",
                     [](std::string_view v, CliConfig& c) -> std::string {
                         if (v.empty()) return "must not be empty";
                         c.train.data = std::string(v);
                         return {};
                     }};
        s["num_images"] = count_key(tc(&TrainConfig::num_images), 2, "320", "synthetic images generated");
        const char* mix_names[] = {"mix_flat", "mix_smooth", "mix_texture", "mix_noise"};
        for (std::size_t i = 0; i < 4; ++i)
            s[mix_names[i]] = real_key([i](CliConfig& c) -> double& { return c.train.mix[i]; }, 0.0, inf, false,
                                       "real >= 0", "0.25", "relative share of this patch class");
        s["train_fraction"] = open_fraction_key(tc(&TrainConfig::train_fraction), "0.8", "share of images used for training");
        s["checkpoint"] = {"path", "", "checkpoint written at the end of training",
                           [](std::string_view v, CliConfig& c) -> std::string {
                               c.train.checkpoint_path = std::string(v);
                               return {};
                           }};
        s["metrics"] = {"path", "", "per-step metrics CSV", [](std::string_view v, CliConfig& c) -> std::string {
                            c.train.metrics_path = std::string(v);
                            return {};
                        }};
        s["checkpoint_every"] = count_key(tc(&TrainConfig::checkpoint_every), 0, "0", "extra checkpoints every N steps");
        s["rd_counts"] = {"count list", "1,2,4,10,16", "forced counts evaluated by eval and ablate-topk",
                          [](std::string_view v, CliConfig& c) -> std::string {
                              std::vector<std::size_t> out;
                              std::size_t pos = 0;
                              while (pos <= v.size()) {
                                  const std::size_t comma = std::min(v.find(',', pos), v.size());
                                  std::uint64_t x = 0;
                                  const std::string_view item = trim(v.substr(pos, comma - pos));
                                  if (!parse_u64(item, x) || x == 0)
                                      return "expected comma-separated positive integers, got '" + std::string(v) + "'";
                                  out.push_back(static_cast<std::size_t>(x));
                                  pos = comma + 1;
                              }
                              c.rd_counts = std::move(out);
                              return {};
                          }};
        s["heatmap_scale"] = count_key([](CliConfig& c) -> std::size_t& { return c.heatmap_scale; }, 1, "8",
                                       "heatmap pixels per patch");
        return s;
    }();
    return schema;
}

}  // namespace detail

namespace detail {

struct ConfigEntry {
    std::string key;
    std::string value;
    std::string source;
    std::size_t line = 0;
};

/// Splits "key = value" lines; blank lines and text after '#' are skipped.
inline std::vector<ConfigEntry> split_config_lines(std::string_view text, const std::string& source) {
    std::vector<ConfigEntry> out;
    std::size_t line_no = 0, pos = 0;
    while (pos < text.size()) {
        const std::size_t nl = std::min(text.find('\n', pos), text.size());
        std::string_view line = text.substr(pos, nl - pos);
        pos = nl + 1;
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ConfigKeyError(source, line_no, "", "expected 'key = value'");
        std::string key(trim(line.substr(0, eq)));
        if (key.empty()) throw ConfigKeyError(source, line_no, "", "missing key before '='");
        out.push_back({std::move(key), std::string(trim(line.substr(eq + 1))), source, line_no});
    }
    return out;
}

}  // namespace detail

/// Parses "key = value" lines. Blank lines and text after '#' are ignored.
/// Every key is optional; unknown, repeated or ill-typed keys are errors that
/// name the key and line. `overrides` ("key=value", e.g. from --set) replace
/// file values. Cross-key checks run last, so order never matters.
inline CliConfig parse_config_text(std::string_view text, const std::string& source = "<config>",
                                   const std::vector<std::string>& overrides = {}) {
    const auto& schema = detail::config_schema();
    std::map<std::string, detail::ConfigEntry> entries;
    for (detail::ConfigEntry& e : detail::split_config_lines(text, source)) {
        if (const auto prev = entries.find(e.key); prev != entries.end())
            throw ConfigKeyError(source, e.line, e.key,
                                 "repeated (first set on line " + std::to_string(prev->second.line) + ")");
        entries[e.key] = std::move(e);
    }
    std::map<std::string, std::size_t> overridden;
    for (std::size_t i = 0; i < overrides.size(); ++i) {
        auto parsed = detail::split_config_lines(overrides[i], "--set");
        if (parsed.size() != 1) throw ConfigKeyError("--set", i + 1, "", "expected 'key=value'");
        detail::ConfigEntry& e = parsed.front();
        e.line = i + 1;
        if (overridden.count(e.key)) throw ConfigKeyError("--set", e.line, e.key, "given more than once");
        overridden[e.key] = e.line;
        entries[e.key] = std::move(e);
    }
    CliConfig c;
    for (const auto& [key, e] : entries) {
        const auto it = schema.find(key);
        if (it == schema.end()) throw ConfigKeyError(e.source, e.line, key, "unknown key");
        if (const std::string err = it->second.apply(e.value, c); !err.empty())
            throw ConfigKeyError(e.source, e.line, key, err);
    }
    try {
        c.train.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(source + ": " + e.what());
    }
    double mix_sum = 0.0;
    for (double m : c.train.mix) mix_sum += m;
    if (!(mix_sum > 0.0)) throw ConfigError(source + ": mix_* shares must not all be zero");
    for (double& m : c.train.mix) m /= mix_sum;
    return c;
}

inline CliConfig parse_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), path, overrides);
}

/// One line per key: name, type, default, description.
inline std::string config_help() {
    std::string out = "config keys (key = value, '#' starts a comment):\n";
    for (const auto& [key, spec] : detail::config_schema()) {
        char buf[256];
        std::snprintf(buf, sizeof buf, "  %-17s %-20s default %-12s %s\n", key.c_str(), spec.type.c_str(),
                      spec.fallback.empty() ? "(none)" : spec.fallback.c_str(), spec.doc.c_str());
        out += buf;
    }
    return out;
}

}  // namespace cddvt
