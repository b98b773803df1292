// Experiment configuration: a JSON document describing the source
// distribution, source training, the adaptation method, the shift schedule,
// and sweep grids. Parsed configs are echoed back in canonical form (sorted
// keys, defaults materialized, output paths stripped) into every result
// artifact so any run is reproducible from its own header.
#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ttakit/streams.hpp"
#include "ttakit/tta.hpp"

namespace ttakit {

using nlohmann::json;

struct TrainConfig {
    int epochs = 30;
    double lr = 0.2;
    int batch_size = 16;
    int n_train = 768;
    int n_heldout = 512;
    std::uint64_t seed = 13;

    void validate() const {
        if (epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
        if (lr < 0.0) throw std::invalid_argument("train: lr must be >= 0");
        if (batch_size < 1 || n_train < 1 || n_heldout < 1)
            throw std::invalid_argument("train: sizes must be positive");
    }
};

struct SweepConfig {
    std::vector<std::string> methods = {"pl", "oil"};
    std::vector<double> lr = {5e-3, 1e-3, 5e-4, 1e-4};
    std::vector<int> memory_size = {1, 3, 5};
    std::vector<double> ema_decay = {0.99, 1.0};  // oil cells only
    int jobs = 0;                                 // 0 = hardware concurrency

    void validate() const {
        if (methods.empty() || lr.empty() || memory_size.empty())
            throw std::invalid_argument("sweep: grid axes must be nonempty");
    }
};

struct GenConfig {
    int n_source = 512;
    int n_per_segment = 128;
};

struct ExperimentConfig {
    std::string out_dir = "runs/out";
    SourceSpec source;
    TrainConfig train;
    AdaptConfig adapt;
    Schedule schedule;
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    SweepConfig sweep;
    GenConfig gen;

    void validate() const {
        source.validate();
        train.validate();
        adapt.validate();
        schedule.validate(source);
        sweep.validate();
        if (seeds.empty()) throw std::invalid_argument("config: seed set must be nonempty");
    }
};

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

namespace detail {

inline Vector parse_mean(const json& j, int d, const char* what) {
    Vector v(static_cast<size_t>(d));
    if (j.is_number()) {
        std::fill(v.begin(), v.end(), j.get<double>());
    } else if (j.is_array()) {
        if (static_cast<int>(j.size()) != d)
            throw std::invalid_argument(std::string(what) + ": array length must equal d");
        for (int i = 0; i < d; ++i) v[static_cast<size_t>(i)] = j[static_cast<size_t>(i)].get<double>();
    } else {
        throw std::invalid_argument(std::string(what) + ": expected number or array");
    }
    return v;
}

inline double parse_threshold(const json& j) {
    if (j.is_string()) {
        const std::string s = j.get<std::string>();
        if (s == "inf" || s == "Inf" || s == "infinity") return std::numeric_limits<double>::infinity();
        throw std::invalid_argument("filter_threshold: unknown string value " + s);
    }
    return j.get<double>();
}

inline json threshold_to_json(double v) {
    if (std::isinf(v)) return json("inf");
    return json(v);
}

}  // namespace detail

inline SourceSpec parse_source_spec(const json& j) {
    SourceSpec s;
    s.d = j.value("d", s.d);
    s.L = j.value("L", s.L);
    s.h_model = j.value("h", s.h_model);
    s.sigma = j.value("sigma", s.sigma);
    s.span_min = j.value("span_min", s.span_min);
    s.span_max = j.value("span_max", s.span_max);
    s.seed = j.value("seed", s.seed);
    s.mu_bg = j.contains("mu_bg") ? detail::parse_mean(j.at("mu_bg"), s.d, "mu_bg")
                                  : Vector(static_cast<size_t>(s.d), -0.5);
    s.mu_ans = j.contains("mu_ans") ? detail::parse_mean(j.at("mu_ans"), s.d, "mu_ans")
                                    : Vector(static_cast<size_t>(s.d), 0.5);
    return s;
}

inline ShiftSpec parse_shift_spec(const json& j, const SourceSpec& base) {
    ShiftSpec s;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "corruption") {
        s.kind = ShiftKind::corruption;
        s.eta = j.value("eta", 0.0);
        s.rho = j.value("rho", 0.0);
    } else if (kind == "rotation") {
        s.kind = ShiftKind::rotation;
        s.rot_seed = j.value("rot_seed", std::uint64_t{0});
    } else if (kind == "domain") {
        s.kind = ShiftKind::domain;
        s.mu_bg = j.contains("mu_bg") ? detail::parse_mean(j.at("mu_bg"), base.d, "mu_bg") : base.mu_bg;
        s.mu_ans = j.contains("mu_ans") ? detail::parse_mean(j.at("mu_ans"), base.d, "mu_ans") : base.mu_ans;
        s.span_min = j.value("span_min", base.span_min);
        s.span_max = j.value("span_max", base.span_max);
    } else {
        throw std::invalid_argument("unknown shift kind: " + kind);
    }
    return s;
}

inline AdaptConfig parse_adapt_config(const json& j) {
    AdaptConfig a;
    if (j.contains("method")) a.method = method_from_name(j.at("method").get<std::string>());
    a.lr = j.value("lr", a.lr);
    a.batch_size = j.value("batch_size", a.batch_size);
    a.memory_size = j.value("memory_size", a.memory_size);
    a.ema_decay = j.value("ema_decay", a.ema_decay);
    if (j.contains("filter_threshold")) a.filter_threshold = detail::parse_threshold(j.at("filter_threshold"));
    a.tde_beta = j.value("tde_beta", a.tde_beta);
    a.causal = j.value("causal", a.causal);
    a.seed = j.value("seed", a.seed);
    a.snapshots = j.value("snapshots", a.snapshots);
    a.snapshot_cap = j.value("snapshot_cap", a.snapshot_cap);
    return a;
}

inline ExperimentConfig parse_experiment_config(const json& j) {
    ExperimentConfig c;
    c.out_dir = j.value("out_dir", c.out_dir);
    c.source = parse_source_spec(j.contains("source") ? j.at("source") : json::object());
    if (j.contains("train")) {
        const json& t = j.at("train");
        c.train.epochs = t.value("epochs", c.train.epochs);
        c.train.lr = t.value("lr", c.train.lr);
        c.train.batch_size = t.value("batch_size", c.train.batch_size);
        c.train.n_train = t.value("n_train", c.train.n_train);
        c.train.n_heldout = t.value("n_heldout", c.train.n_heldout);
        c.train.seed = t.value("seed", c.train.seed);
    }
    if (j.contains("adapt")) c.adapt = parse_adapt_config(j.at("adapt"));
    if (j.contains("schedule")) {
        for (const json& seg : j.at("schedule")) {
            Segment s;
            s.shift = parse_shift_spec(seg, c.source);
            s.steps = seg.value("steps", 1);
            c.schedule.segments.push_back(std::move(s));
        }
    } else {
        c.schedule.segments.push_back(Segment{ShiftSpec{}, 50});
    }
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("sweep")) {
        const json& s = j.at("sweep");
        if (s.contains("methods")) c.sweep.methods = s.at("methods").get<std::vector<std::string>>();
        if (s.contains("lr")) c.sweep.lr = s.at("lr").get<std::vector<double>>();
        if (s.contains("memory_size")) c.sweep.memory_size = s.at("memory_size").get<std::vector<int>>();
        if (s.contains("ema_decay")) c.sweep.ema_decay = s.at("ema_decay").get<std::vector<double>>();
        c.sweep.jobs = s.value("jobs", c.sweep.jobs);
    }
    if (j.contains("gen")) {
        c.gen.n_source = j.at("gen").value("n_source", c.gen.n_source);
        c.gen.n_per_segment = j.at("gen").value("n_per_segment", c.gen.n_per_segment);
    }
    c.validate();
    return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    json j;
    in >> j;
    return parse_experiment_config(j);
}

// ---------------------------------------------------------------------------
// Canonical echo
// ---------------------------------------------------------------------------

inline json shift_to_json(const ShiftSpec& s) {
    json j;
    j["kind"] = shift_kind_name(s.kind);
    switch (s.kind) {
        case ShiftKind::corruption:
            j["eta"] = s.eta;
            j["rho"] = s.rho;
            break;
        case ShiftKind::rotation:
            j["rot_seed"] = s.rot_seed;
            break;
        case ShiftKind::domain:
            j["mu_bg"] = s.mu_bg;
            j["mu_ans"] = s.mu_ans;
            j["span_min"] = s.span_min;
            j["span_max"] = s.span_max;
            break;
    }
    return j;
}

inline json adapt_to_json(const AdaptConfig& a) {
    json j;
    j["method"] = method_name(a.method);
    j["lr"] = a.lr;
    j["batch_size"] = a.batch_size;
    j["memory_size"] = a.memory_size;
    j["seed"] = a.seed;
    j["snapshots"] = a.snapshots;
    j["snapshot_cap"] = a.snapshot_cap;
    if (a.uses_expert()) {
        j["ema_decay"] = a.ema_decay;
        j["filter_threshold"] = detail::threshold_to_json(a.filter_threshold);
        j["tde_beta"] = a.tde_beta;
        j["causal"] = a.causal;
    } else {
        // these knobs do not steer tent/pl; reported as inactive
        j["inactive"] = json::array({"ema_decay", "filter_threshold", "tde_beta", "causal"});
    }
    return j;
}

// Canonical config echo. Output-location fields are deliberately absent so
// the same experiment written to two directories yields byte-identical
// result headers.
inline json config_echo(const ExperimentConfig& c) {
    json j;
    j["source"] = {{"d", c.source.d},
                   {"L", c.source.L},
                   {"h", c.source.h_model},
                   {"mu_bg", c.source.mu_bg},
                   {"mu_ans", c.source.mu_ans},
                   {"sigma", c.source.sigma},
                   {"span_min", c.source.span_min},
                   {"span_max", c.source.span_max},
                   {"seed", c.source.seed}};
    j["train"] = {{"epochs", c.train.epochs},
                  {"lr", c.train.lr},
                  {"batch_size", c.train.batch_size},
                  {"n_train", c.train.n_train},
                  {"n_heldout", c.train.n_heldout},
                  {"seed", c.train.seed}};
    j["adapt"] = adapt_to_json(c.adapt);
    json sched = json::array();
    for (const Segment& seg : c.schedule.segments) {
        json s = shift_to_json(seg.shift);
        s["steps"] = seg.steps;
        sched.push_back(std::move(s));
    }
    j["schedule"] = std::move(sched);
    j["seeds"] = c.seeds;
    return j;
}

// Environment override for the output root; relative out_dirs resolve
// beneath it.
inline std::string resolve_out_dir(const std::string& out_dir) {
    const char* root = std::getenv("TTAKIT_OUT_ROOT");
    if (root != nullptr && root[0] != '\0' && !std::filesystem::path(out_dir).is_absolute()) {
        return (std::filesystem::path(root) / out_dir).string();
    }
    return out_dir;
}

}  // namespace ttakit
