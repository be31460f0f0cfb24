#pragma once

// Flat key-value run configuration ("section.key = value" lines, '#'
// comments, list values in brackets), resolved against documented defaults.
// Unknown keys, type errors, and constraint violations are reported with the
// offending line. Every resolved config carries a content-addressed SHA-256
// hash that is stamped into artifact names and checkpoints.

#include <openssl/evp.h>

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "icluq/experiments.hpp"
#include "icluq/taskgen.hpp"
#include "icluq/trainer.hpp"
#include "icluq/transformer.hpp"

namespace icluq {

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

struct RunConfig {
    PriorConfig prior;
    CovariateConfig cov = Isotropic{1.0};
    ModelConfig model;
    TrainConfig train;

    // evaluation settings
    std::int64_t eval_t_len = 100;
    std::int64_t eval_n = 2000;
    Metric eval_metric = Metric::AvgSigma;
    std::int64_t trunc_t_eval = 200;
    std::vector<std::int64_t> trunc_windows = {5, 10, 20, 40, 80};
    std::int64_t trunc_n_mc = 40000;

    // gap study
    std::vector<std::int64_t> gap_n_list = {8, 16, 32, 64, 128};
    std::int64_t gap_t_len = 16;
    std::int64_t gap_window = 16;
    std::int64_t gap_trials = 3;
    std::int64_t gap_n_mc = 2000;
    std::int64_t gap_layers = 1;
    std::int64_t gap_heads = 1;
    std::int64_t gap_d_key = 8;
    std::int64_t gap_d_hidden = 16;

    // certificate
    double certify_b_h = 2.0;
    std::int64_t certify_trials = 1000;

    std::uint64_t seed = 0;
    std::string out_dir = "out";

    std::string canonical() const;
    std::string hash_bytes() const;  // 32 raw bytes
    std::string hash_hex() const;    // 64 hex chars
    std::string hash_short() const { return hash_hex().substr(0, 12); }
};

namespace detail {

struct RawEntry {
    std::string value;
    int line = 0;
    bool used = false;
};

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

class ConfigMap {
public:
    void insert(const std::string& key, const std::string& value, int line) {
        entries_[key] = RawEntry{value, line, false};
    }

    bool has(const std::string& key) const { return entries_.count(key) > 0; }

    template <typename Parse>
    void apply(const std::string& key, Parse&& parse) {
        auto it = entries_.find(key);
        if (it == entries_.end()) return;
        it->second.used = true;
        try {
            parse(it->second.value);
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            throw ConfigError("config: key '" + key + "' (line " +
                              std::to_string(it->second.line) + "): " + e.what());
        }
    }

    void reject_unknown() const {
        for (const auto& [key, entry] : entries_) {
            if (!entry.used) {
                throw ConfigError("config: unknown key '" + key + "' (line " +
                                  std::to_string(entry.line) + ")");
            }
        }
    }

    int line_of(const std::string& key) const {
        auto it = entries_.find(key);
        return it == entries_.end() ? 0 : it->second.line;
    }

private:
    std::map<std::string, RawEntry> entries_;
};

inline double parse_double(const std::string& s) {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw ConfigError("not a number: '" + s + "'");
    return v;
}

inline std::int64_t parse_int(const std::string& s) {
    std::size_t pos = 0;
    const long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw ConfigError("not an integer: '" + s + "'");
    return v;
}

inline std::vector<double> parse_list(const std::string& s) {
    std::string body = trim(s);
    if (body.size() < 2 || body.front() != '[' || body.back() != ']')
        throw ConfigError("expected a [..] list, got '" + s + "'");
    body = body.substr(1, body.size() - 2);
    std::vector<double> out;
    std::stringstream ss(body);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(parse_double(item));
    }
    return out;
}

inline std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace detail

inline PosMode pos_mode_from_string(const std::string& s) {
    if (s == "none") return PosMode::None;
    if (s == "builtin") return PosMode::Builtin;
    if (s == "segment") return PosMode::Segment;
    if (s == "fullrange") return PosMode::FullRange;
    throw ConfigError("config: pos_mode must be none|builtin|segment|fullrange, got '" + s + "'");
}

inline TrainConfig::TaskMode task_mode_from_string(const std::string& s) {
    if (s == "pool") return TrainConfig::TaskMode::Pool;
    if (s == "fresh") return TrainConfig::TaskMode::Fresh;
    if (s == "flipped") return TrainConfig::TaskMode::FlippedID;
    throw ConfigError("config: task_mode must be pool|fresh|flipped, got '" + s + "'");
}

// Parses config text plus inline overrides ("key=value" strings) over the
// documented defaults.
inline RunConfig parse_config_text(const std::string& text,
                                   const std::vector<std::string>& overrides = {}) {
    detail::ConfigMap map;
    int line_no = 0;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        ++line_no;
        const auto hash_pos = line.find('#');
        if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: line " + std::to_string(line_no) + " is not 'key = value'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("config: empty key on line " + std::to_string(line_no));
        map.insert(key, value, line_no);
    }
    for (const auto& ov : overrides) {
        const auto eq = ov.find('=');
        if (eq == std::string::npos) throw ConfigError("override must be key=value: '" + ov + "'");
        map.insert(detail::trim(ov.substr(0, eq)), detail::trim(ov.substr(eq + 1)), 0);
    }

    RunConfig cfg;
    using detail::parse_double;
    using detail::parse_int;
    using detail::parse_list;

    map.apply("prior.d", [&](const std::string& v) { cfg.prior.d = parse_int(v); });
    map.apply("prior.tau_shape", [&](const std::string& v) { cfg.prior.tau_shape = parse_double(v); });
    map.apply("prior.tau_rate", [&](const std::string& v) { cfg.prior.tau_rate = parse_double(v); });
    map.apply("prior.w_bar", [&](const std::string& v) {
        cfg.prior.w_bar = Tensor::from_vec(parse_list(v));
    });

    std::string cov_kind = "isotropic";
    double cov_variance = 1.0, cov_lo = 0.0, cov_hi = 2.0;
    std::vector<double> cov_lambda;
    map.apply("cov.kind", [&](const std::string& v) { cov_kind = v; });
    map.apply("cov.variance", [&](const std::string& v) { cov_variance = parse_double(v); });
    map.apply("cov.lo", [&](const std::string& v) { cov_lo = parse_double(v); });
    map.apply("cov.hi", [&](const std::string& v) { cov_hi = parse_double(v); });
    map.apply("cov.lambda", [&](const std::string& v) { cov_lambda = parse_list(v); });
    if (cov_kind == "isotropic") {
        cfg.cov = Isotropic{cov_variance};
    } else if (cov_kind == "fixed_diagonal") {
        if (cov_lambda.empty()) {
            cfg.cov = decreasing_diagonal(cfg.prior.d);
        } else {
            cfg.cov = FixedDiagonal{Tensor::from_vec(cov_lambda)};
        }
    } else if (cov_kind == "meta_uniform") {
        cfg.cov = MetaUniform{cov_lo, cov_hi};
    } else if (cov_kind == "rotated_decreasing") {
        cfg.cov = RotatedDecreasing{};
    } else {
        throw ConfigError("config: cov.kind must be isotropic|fixed_diagonal|meta_uniform|"
                          "rotated_decreasing, got '" + cov_kind + "'");
    }

    map.apply("model.layers", [&](const std::string& v) { cfg.model.layers = parse_int(v); });
    map.apply("model.heads", [&](const std::string& v) { cfg.model.heads = parse_int(v); });
    map.apply("model.d_embed", [&](const std::string& v) { cfg.model.d_embed = parse_int(v); });
    map.apply("model.d_key", [&](const std::string& v) { cfg.model.d_key = parse_int(v); });
    map.apply("model.d_hidden", [&](const std::string& v) { cfg.model.d_hidden = parse_int(v); });
    map.apply("model.window", [&](const std::string& v) { cfg.model.window = parse_int(v); });
    map.apply("model.pos_mode",
              [&](const std::string& v) { cfg.model.pos_mode = pos_mode_from_string(v); });
    map.apply("model.pos_scale", [&](const std::string& v) { cfg.model.pos_scale = parse_double(v); });

    map.apply("train.steps", [&](const std::string& v) { cfg.train.steps = parse_int(v); });
    map.apply("train.batch", [&](const std::string& v) { cfg.train.batch = parse_int(v); });
    map.apply("train.t_len", [&](const std::string& v) { cfg.train.t_len = parse_int(v); });
    map.apply("train.lr", [&](const std::string& v) { cfg.train.lr = parse_double(v); });
    map.apply("train.beta1", [&](const std::string& v) { cfg.train.beta1 = parse_double(v); });
    map.apply("train.beta2", [&](const std::string& v) { cfg.train.beta2 = parse_double(v); });
    map.apply("train.eps", [&](const std::string& v) { cfg.train.eps = parse_double(v); });
    map.apply("train.clip_norm", [&](const std::string& v) { cfg.train.clip_norm = parse_double(v); });
    map.apply("train.pool_size", [&](const std::string& v) { cfg.train.pool_size = parse_int(v); });
    map.apply("train.t_lo", [&](const std::string& v) { cfg.train.t_lo = parse_int(v); });
    map.apply("train.t_hi", [&](const std::string& v) { cfg.train.t_hi = parse_int(v); });
    map.apply("train.fixed_dataset",
              [&](const std::string& v) { cfg.train.fixed_dataset_n = parse_int(v); });
    map.apply("train.trace_every", [&](const std::string& v) { cfg.train.trace_every = parse_int(v); });
    map.apply("train.snapshot_every",
              [&](const std::string& v) { cfg.train.snapshot_every = parse_int(v); });
    map.apply("train.threads",
              [&](const std::string& v) { cfg.train.threads = static_cast<int>(parse_int(v)); });
    map.apply("train.init_std", [&](const std::string& v) { cfg.train.init_std = parse_double(v); });
    map.apply("train.task_mode",
              [&](const std::string& v) { cfg.train.task_mode = task_mode_from_string(v); });
    map.apply("train.max_epochs", [&](const std::string& v) { cfg.train.max_epochs = parse_int(v); });
    map.apply("train.stop_tol", [&](const std::string& v) { cfg.train.stop_tol = parse_double(v); });
    map.apply("train.stop_patience",
              [&](const std::string& v) { cfg.train.stop_patience = parse_int(v); });

    map.apply("eval.t_len", [&](const std::string& v) { cfg.eval_t_len = parse_int(v); });
    map.apply("eval.n_eval", [&](const std::string& v) { cfg.eval_n = parse_int(v); });
    map.apply("eval.metric", [&](const std::string& v) { cfg.eval_metric = metric_from_string(v); });
    map.apply("eval.trunc_t_eval", [&](const std::string& v) { cfg.trunc_t_eval = parse_int(v); });
    map.apply("eval.trunc_windows", [&](const std::string& v) {
        cfg.trunc_windows.clear();
        for (double d : parse_list(v)) cfg.trunc_windows.push_back(static_cast<std::int64_t>(d));
    });
    map.apply("eval.trunc_n_mc", [&](const std::string& v) { cfg.trunc_n_mc = parse_int(v); });

    map.apply("gap.n_list", [&](const std::string& v) {
        cfg.gap_n_list.clear();
        for (double d : parse_list(v)) cfg.gap_n_list.push_back(static_cast<std::int64_t>(d));
    });
    map.apply("gap.t_len", [&](const std::string& v) { cfg.gap_t_len = parse_int(v); });
    map.apply("gap.window", [&](const std::string& v) { cfg.gap_window = parse_int(v); });
    map.apply("gap.trials", [&](const std::string& v) { cfg.gap_trials = parse_int(v); });
    map.apply("gap.n_mc", [&](const std::string& v) { cfg.gap_n_mc = parse_int(v); });
    map.apply("gap.layers", [&](const std::string& v) { cfg.gap_layers = parse_int(v); });
    map.apply("gap.heads", [&](const std::string& v) { cfg.gap_heads = parse_int(v); });
    map.apply("gap.d_key", [&](const std::string& v) { cfg.gap_d_key = parse_int(v); });
    map.apply("gap.d_hidden", [&](const std::string& v) { cfg.gap_d_hidden = parse_int(v); });

    map.apply("certify.b_h", [&](const std::string& v) { cfg.certify_b_h = parse_double(v); });
    map.apply("certify.trials", [&](const std::string& v) { cfg.certify_trials = parse_int(v); });

    map.apply("seed", [&](const std::string& v) {
        cfg.seed = static_cast<std::uint64_t>(std::stoull(v));
    });
    map.apply("out", [&](const std::string& v) { cfg.out_dir = v; });

    map.reject_unknown();

    // Constraint validation with key attribution.
    try {
        cfg.prior.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: prior invalid (line ") +
                          std::to_string(map.line_of("prior.tau_shape")) + "): " + e.what());
    }
    try {
        cfg.model.validate();
        cfg.train.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    cfg.model.d_in = cfg.prior.d;
    return cfg;
}

inline RunConfig parse_config_file(const std::string& path,
                                   const std::vector<std::string>& overrides = {}) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), overrides);
}

// Canonical serialization of every resolved field, used for hashing and for
// documenting a run.
inline std::string RunConfig::canonical() const {
    using detail::fmt17;
    std::map<std::string, std::string> kv;
    kv["prior.d"] = std::to_string(prior.d);
    kv["prior.tau_shape"] = fmt17(prior.tau_shape);
    kv["prior.tau_rate"] = fmt17(prior.tau_rate);
    {
        const Tensor w = prior.mean_weights();
        std::string s = "[";
        for (std::int64_t i = 0; i < w.size(); ++i) s += (i ? "," : "") + fmt17(w[i]);
        kv["prior.w_bar"] = s + "]";
    }
    if (const auto* iso = std::get_if<Isotropic>(&cov)) {
        kv["cov.kind"] = "isotropic";
        kv["cov.variance"] = fmt17(iso->variance);
    } else if (const auto* fd = std::get_if<FixedDiagonal>(&cov)) {
        kv["cov.kind"] = "fixed_diagonal";
        std::string s = "[";
        for (std::int64_t i = 0; i < fd->lambda.size(); ++i)
            s += (i ? "," : "") + fmt17(fd->lambda[i]);
        kv["cov.lambda"] = s + "]";
    } else if (const auto* mu = std::get_if<MetaUniform>(&cov)) {
        kv["cov.kind"] = "meta_uniform";
        kv["cov.lo"] = fmt17(mu->lo);
        kv["cov.hi"] = fmt17(mu->hi);
    } else {
        kv["cov.kind"] = "rotated_decreasing";
    }
    kv["model.layers"] = std::to_string(model.layers);
    kv["model.heads"] = std::to_string(model.heads);
    kv["model.d_embed"] = std::to_string(model.d_embed);
    kv["model.d_key"] = std::to_string(model.d_key);
    kv["model.d_hidden"] = std::to_string(model.d_hidden);
    kv["model.window"] = std::to_string(model.window);
    kv["model.pos_mode"] = to_string(model.pos_mode);
    kv["model.pos_scale"] = fmt17(model.pos_scale);
    kv["train.steps"] = std::to_string(train.steps);
    kv["train.batch"] = std::to_string(train.batch);
    kv["train.t_len"] = std::to_string(train.t_len);
    kv["train.lr"] = fmt17(train.lr);
    kv["train.beta1"] = fmt17(train.beta1);
    kv["train.beta2"] = fmt17(train.beta2);
    kv["train.eps"] = fmt17(train.eps);
    kv["train.clip_norm"] = fmt17(train.clip_norm);
    kv["train.pool_size"] = std::to_string(train.pool_size);
    kv["train.t_lo"] = std::to_string(train.t_lo);
    kv["train.t_hi"] = std::to_string(train.t_hi);
    kv["train.fixed_dataset"] = std::to_string(train.fixed_dataset_n);
    kv["train.task_mode"] = train.task_mode == TrainConfig::TaskMode::Pool
                                ? "pool"
                                : (train.task_mode == TrainConfig::TaskMode::Fresh ? "fresh"
                                                                                   : "flipped");
    kv["train.init_std"] = fmt17(train.init_std);
    kv["train.max_epochs"] = std::to_string(train.max_epochs);
    kv["train.stop_tol"] = fmt17(train.stop_tol);
    kv["train.stop_patience"] = std::to_string(train.stop_patience);
    kv["eval.t_len"] = std::to_string(eval_t_len);
    kv["eval.n_eval"] = std::to_string(eval_n);
    kv["eval.metric"] = to_string(eval_metric);
    kv["eval.trunc_t_eval"] = std::to_string(trunc_t_eval);
    {
        std::string s = "[";
        for (std::size_t i = 0; i < trunc_windows.size(); ++i)
            s += (i ? "," : "") + std::to_string(trunc_windows[i]);
        kv["eval.trunc_windows"] = s + "]";
    }
    kv["eval.trunc_n_mc"] = std::to_string(trunc_n_mc);
    {
        std::string s = "[";
        for (std::size_t i = 0; i < gap_n_list.size(); ++i)
            s += (i ? "," : "") + std::to_string(gap_n_list[i]);
        kv["gap.n_list"] = s + "]";
    }
    kv["gap.t_len"] = std::to_string(gap_t_len);
    kv["gap.window"] = std::to_string(gap_window);
    kv["gap.trials"] = std::to_string(gap_trials);
    kv["gap.n_mc"] = std::to_string(gap_n_mc);
    kv["gap.layers"] = std::to_string(gap_layers);
    kv["gap.heads"] = std::to_string(gap_heads);
    kv["gap.d_key"] = std::to_string(gap_d_key);
    kv["gap.d_hidden"] = std::to_string(gap_d_hidden);
    kv["certify.b_h"] = fmt17(certify_b_h);
    kv["certify.trials"] = std::to_string(certify_trials);
    kv["seed"] = std::to_string(seed);

    std::string out;
    for (const auto& [k, v] : kv) {
        out += k;
        out += '=';
        out += v;
        out += '\n';
    }
    return out;
}

inline std::string RunConfig::hash_bytes() const {
    const std::string text = canonical();
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(text.data(), text.size(), digest, &len, EVP_sha256(), nullptr);
    return std::string(reinterpret_cast<const char*>(digest), len);
}

inline std::string RunConfig::hash_hex() const {
    const std::string raw = hash_bytes();
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(raw.size() * 2);
    for (unsigned char c : raw) {
        out.push_back(hex[c >> 4]);
        out.push_back(hex[c & 0xf]);
    }
    return out;
}

} // namespace icluq
