// Experiment orchestration behind the CLI: source training, seeded stream
// runs, baseline comparison, sweeps over hyperparameter grids, continual
// schedules, and the result writers (line-delimited step records, summary
// documents, gain matrices). Every result artifact embeds the canonical
// config echo and all seeds it was produced from.
#pragma once

#include <atomic>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "ttakit/config.hpp"
#include "ttakit/gradcheck.hpp"
#include "ttakit/metrics.hpp"
#include "ttakit/model.hpp"
#include "ttakit/streams.hpp"
#include "ttakit/tta.hpp"

namespace ttakit {

namespace fs = std::filesystem;

constexpr std::uint64_t kStreamTag = 0x5354524dULL;   // stream derivation from adapt seed
constexpr std::uint64_t kHeldoutTag = 0x48454c44ULL;  // held-out split derivation
constexpr std::uint64_t kInitTag = 0x494e4954ULL;     // parameter init
constexpr std::uint64_t kShuffleTag = 0x53485546ULL;  // epoch shuffling
constexpr std::uint64_t kSegTag = 0x534547ULL;        // dataset dumps per segment

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016" PRIx64, v);
    return std::string(buf);
}

// Number formatting shared by CSV writers; shortest round-trip form.
inline std::string num(double v) { return json(v).dump(); }

// ---------------------------------------------------------------------------
// Evaluation and source training
// ---------------------------------------------------------------------------

struct EvalResult {
    double em = 0.0;
    double f1 = 0.0;
};

inline EvalResult evaluate_model(const ModelParams& p, std::span<const Instance> data) {
    EvalResult r;
    for (const Instance& inst : data) {
        if (!inst.gold) throw std::invalid_argument("evaluate_model: instance has no gold span");
        const Span pred = predict_span(forward(p, inst.tokens));
        r.em += em(pred, *inst.gold);
        r.f1 += span_f1(pred, *inst.gold);
    }
    if (!data.empty()) {
        r.em /= static_cast<double>(data.size());
        r.f1 /= static_cast<double>(data.size());
    }
    return r;
}

struct TrainPoint {
    int epoch = 0;
    double mean_loss = 0.0;
    double heldout_em = 0.0;
    double heldout_f1 = 0.0;
};

struct TrainResult {
    ModelParams params;
    std::vector<TrainPoint> curve;
    EvalResult heldout;
};

inline SourceSpec heldout_spec(const SourceSpec& spec) {
    SourceSpec h = spec;
    h.seed = mix_seed(spec.seed, kHeldoutTag);
    return h;
}

// Typical token-entry magnitude under the spec, used to scale the init.
inline double input_rms(const SourceSpec& spec) {
    double mu2 = 0.0;
    for (int k = 0; k < spec.d; ++k) {
        mu2 += 0.5 * (spec.mu_bg[static_cast<size_t>(k)] * spec.mu_bg[static_cast<size_t>(k)] +
                      spec.mu_ans[static_cast<size_t>(k)] * spec.mu_ans[static_cast<size_t>(k)]);
    }
    return std::sqrt(spec.sigma * spec.sigma + mu2 / spec.d);
}

inline TrainResult train_source(const SourceSpec& spec, const TrainConfig& tc) {
    spec.validate();
    tc.validate();
    const std::vector<Instance> train_data = gen_source(spec, tc.n_train);
    const std::vector<Instance> held = gen_source(heldout_spec(spec), tc.n_heldout);

    Rng init_rng(mix_seed(tc.seed, kInitTag));
    TrainResult result;
    result.params = init_params(spec.d, spec.h_model, init_rng, input_rms(spec));

    Rng shuffle_rng(mix_seed(tc.seed, kShuffleTag));
    std::vector<int> order(train_data.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
        for (size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[static_cast<size_t>(shuffle_rng.next_int(static_cast<int>(i)))]);
        }
        double loss_sum = 0.0;
        int n_batches = 0;
        std::vector<Instance> batch;
        for (size_t pos = 0; pos < order.size(); pos += static_cast<size_t>(tc.batch_size)) {
            batch.clear();
            const size_t stop = std::min(order.size(), pos + static_cast<size_t>(tc.batch_size));
            for (size_t i = pos; i < stop; ++i) batch.push_back(train_data[static_cast<size_t>(order[i])]);
            const auto [loss, grad] = supervised_loss_grad(result.params, batch);
            if (!std::isfinite(loss)) throw std::runtime_error("train_source: non-finite loss");
            result.params = sgd_step(result.params, grad, tc.lr);
            loss_sum += loss;
            n_batches += 1;
        }
        const EvalResult ev = evaluate_model(result.params, held);
        result.curve.push_back(TrainPoint{epoch, loss_sum / std::max(1, n_batches), ev.em, ev.f1});
    }
    result.heldout = evaluate_model(result.params, held);
    return result;
}

// ---------------------------------------------------------------------------
// Stream runs
// ---------------------------------------------------------------------------

struct RunResult {
    AdaptConfig adapt;
    std::uint64_t stream_seed = 0;
    std::uint64_t fingerprint = 0;
    std::vector<StreamBatch> batches;
    std::vector<StepRecord> records;
    ModelParams learner_final;
    std::optional<ModelParams> expert_final;
    SnapshotLog snapshots;
    // learner (and expert, for oil) captured at the end of each segment
    std::vector<ModelParams> boundary_learners;
    std::vector<ModelParams> boundary_experts;
};

inline RunResult run_stream(const ModelParams& source, const AdaptConfig& acfg,
                            const SourceSpec& spec, const Schedule& schedule) {
    RunResult out;
    out.adapt = acfg;
    out.stream_seed = mix_seed(acfg.seed, kStreamTag);
    out.fingerprint = stream_fingerprint(spec, schedule, acfg.batch_size, out.stream_seed);
    out.batches = materialize_stream(spec, schedule, acfg.batch_size, out.stream_seed);

    AdaptEngine engine(source, acfg);
    for (size_t i = 0; i < out.batches.size(); ++i) {
        out.records.push_back(engine.step(out.batches[i].strip()));
        const bool segment_end = i + 1 == out.batches.size() ||
                                 out.batches[i + 1].segment != out.batches[i].segment;
        if (segment_end) {
            out.boundary_learners.push_back(engine.learner());
            if (engine.has_expert()) out.boundary_experts.push_back(engine.expert());
        }
    }
    out.learner_final = engine.learner();
    if (engine.has_expert()) out.expert_final = engine.expert();
    out.snapshots = engine.snapshots();
    return out;
}

inline AdaptConfig baseline_config(const AdaptConfig& acfg) {
    AdaptConfig b = acfg;
    b.method = Method::pl;  // any method: with lr = 0 predictions are the source argmax
    b.lr = 0.0;
    b.snapshots = false;
    return b;
}

inline RunSummary summarize_run(const RunResult& run, const Schedule& schedule,
                                const std::vector<StepRecord>* baseline = nullptr) {
    RunSummary s = summarize(run.records, run.batches, schedule, baseline);
    s.seed = run.adapt.seed;
    s.stream_fingerprint = run.fingerprint;
    return s;
}

// Gains require both runs to have seen the identical stream.
inline void require_same_stream(const RunResult& a, const RunResult& b) {
    if (a.fingerprint != b.fingerprint)
        throw std::invalid_argument("mismatched stream fingerprints between runs");
}

// ---------------------------------------------------------------------------
// Writers
// ---------------------------------------------------------------------------

inline void ensure_dir(const std::string& dir) { fs::create_directories(dir); }

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << text;
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline json summary_to_json(const RunSummary& s, const std::uint64_t stream_seed) {
    json j;
    j["seed"] = s.seed;
    j["stream_seed"] = stream_seed;
    j["stream_fingerprint"] = hex64(s.stream_fingerprint);
    j["steps"] = s.steps;
    j["instances"] = s.instances;
    j["em"] = s.em;
    j["f1"] = s.f1;
    j["cumulative_loss"] = s.cumulative_loss;
    j["mean_pass_rate"] = s.mean_pass_rate;
    j["aborted_steps"] = s.aborted_steps;
    json segs = json::array();
    for (const SegmentSummary& g : s.segments) {
        json e;
        e["segment"] = g.segment;
        e["kind"] = g.shift_kind;
        e["steps"] = g.steps;
        e["instances"] = g.instances;
        e["em"] = g.em;
        e["f1"] = g.f1;
        if (s.has_baseline) {
            e["em_gain"] = g.em_gain;
            e["f1_gain"] = g.f1_gain;
        }
        segs.push_back(std::move(e));
    }
    j["segments"] = std::move(segs);
    if (s.has_baseline) {
        j["baseline_em"] = s.baseline_em;
        j["baseline_f1"] = s.baseline_f1;
        j["em_gain"] = s.em_gain;
        j["f1_gain"] = s.f1_gain;
    }
    return j;
}

inline void write_summary_json(const std::string& path, const ExperimentConfig& cfg,
                               const AdaptConfig& effective, const RunSummary& s,
                               const RunResult& run, const json& extra = json::object()) {
    ExperimentConfig echoed = cfg;
    echoed.adapt = effective;
    json j;
    j["config"] = config_echo(echoed);
    j["method"] = method_name(effective.method);
    j["summary"] = summary_to_json(s, run.stream_seed);
    for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
    write_text(path, j.dump(2) + "\n");
}

inline void write_steps_jsonl(const std::string& path, const RunResult& run,
                              const RunSummary& s) {
    std::string text;
    for (size_t t = 0; t < run.records.size(); ++t) {
        const StepRecord& r = run.records[t];
        json j;
        j["t"] = r.t;
        j["segment"] = r.segment;
        j["em"] = s.step_em[t];
        j["f1"] = s.step_f1[t];
        j["loss"] = r.loss;
        j["loss_start"] = r.loss_start;
        j["loss_end"] = r.loss_end;
        j["pass_rate"] = r.pass_rate;
        j["expert_distance"] = r.expert_distance;
        j["aborted"] = r.aborted;
        j["wall_ms"] = r.wall_ms;
        json preds = json::array();
        for (const Span& p : r.predictions) preds.push_back(json::array({p.start, p.end}));
        j["predictions"] = std::move(preds);
        text += j.dump() + "\n";
    }
    write_text(path, text);
}

// CSV with a canonical-config comment line followed by a header row.
inline void write_csv(const std::string& path, const ExperimentConfig& cfg,
                      const std::string& header, const std::vector<std::string>& rows) {
    std::string text = "# config " + config_echo(cfg).dump() + "\n" + header + "\n";
    for (const std::string& r : rows) text += r + "\n";
    write_text(path, text);
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline std::string checkpoint_path(const std::string& out_dir) {
    return (fs::path(out_dir) / "source.ckpt").string();
}

inline std::string cmd_train_source(const ExperimentConfig& cfg) {
    cfg.validate();
    const std::string out = resolve_out_dir(cfg.out_dir);
    ensure_dir(out);
    const TrainResult tr = train_source(cfg.source, cfg.train);
    save_checkpoint(checkpoint_path(out), tr.params, cfg.source.L);

    std::vector<std::string> rows;
    for (const TrainPoint& p : tr.curve) {
        rows.push_back(std::to_string(p.epoch) + "," + num(p.mean_loss) + "," +
                       num(p.heldout_em) + "," + num(p.heldout_f1));
    }
    write_csv((fs::path(out) / "train_curve.csv").string(), cfg,
              "epoch,mean_loss,heldout_em,heldout_f1", rows);

    json j;
    j["config"] = config_echo(cfg);
    j["heldout_em"] = tr.heldout.em;
    j["heldout_f1"] = tr.heldout.f1;
    j["epochs"] = cfg.train.epochs;
    write_text((fs::path(out) / "train_summary.json").string(), j.dump(2) + "\n");
    std::cout << "train-source: heldout em=" << tr.heldout.em << " f1=" << tr.heldout.f1
              << " -> " << checkpoint_path(out) << "\n";
    return out;
}

inline ModelParams load_source_for(const ExperimentConfig& cfg, const std::string& explicit_ckpt) {
    const std::string path = explicit_ckpt.empty()
                                 ? checkpoint_path(resolve_out_dir(cfg.out_dir))
                                 : explicit_ckpt;
    if (!fs::exists(path)) throw std::runtime_error("missing checkpoint: " + path);
    const Checkpoint ck = load_checkpoint(path);
    if (ck.params.d != cfg.source.d || ck.params.h != cfg.source.h_model)
        throw std::runtime_error("checkpoint dims do not match config: " + path);
    return ck.params;
}

inline std::string cmd_run(const ExperimentConfig& cfg, const std::string& ckpt = "") {
    cfg.validate();
    const std::string out = resolve_out_dir(cfg.out_dir);
    ensure_dir(out);
    const ModelParams source = load_source_for(cfg, ckpt);
    const RunResult run = run_stream(source, cfg.adapt, cfg.source, cfg.schedule);
    const RunSummary s = summarize_run(run, cfg.schedule);

    json extra = json::object();
    if (run.snapshots.enabled && run.snapshots.steps_seen <= run.snapshots.size()) {
        const RegretResult r = regret(run.snapshots, cfg.adapt);
        extra["regret"] = {{"value", r.regret}, {"argmin_index", r.argmin_index}};
    }
    write_summary_json((fs::path(out) / "summary.json").string(), cfg, cfg.adapt, s, run, extra);
    write_steps_jsonl((fs::path(out) / "steps.jsonl").string(), run, s);
    save_checkpoint((fs::path(out) / "learner.ckpt").string(), run.learner_final, cfg.source.L);
    if (run.expert_final)
        save_checkpoint((fs::path(out) / "expert.ckpt").string(), *run.expert_final, cfg.source.L);
    std::cout << "run: method=" << method_name(cfg.adapt.method) << " em=" << s.em
              << " f1=" << s.f1 << " steps=" << s.steps << " aborted=" << s.aborted_steps << "\n";
    return out;
}

// One sweep cell: a (method, alpha, lr, K, seed) combination.
struct SweepCell {
    Method method = Method::pl;
    double ema_decay = 0.0;  // meaningful for oil only
    double lr = 0.0;
    int memory_size = 1;
    std::uint64_t seed = 0;
    // results
    bool ok = false;
    std::string error;
    std::uint64_t stream_seed = 0;
    RunSummary summary;
};

inline std::string sweep_cell_name(const SweepCell& c) {
    std::string name = std::string(method_name(c.method));
    if (c.method == Method::oil) name += "_a" + num(c.ema_decay);
    name += "_lr" + num(c.lr) + "_K" + std::to_string(c.memory_size) + "_s" +
            std::to_string(c.seed);
    return name;
}

inline std::string cmd_sweep(const ExperimentConfig& cfg, const std::string& ckpt = "") {
    cfg.validate();
    const std::string out = resolve_out_dir(cfg.out_dir);
    ensure_dir(out);
    ensure_dir((fs::path(out) / "cells").string());
    const ModelParams source = load_source_for(cfg, ckpt);

    // lr = 0 baselines, one per seed, shared across cells.
    std::vector<std::vector<StepRecord>> baselines;
    std::vector<std::uint64_t> base_fps;
    for (std::uint64_t seed : cfg.seeds) {
        AdaptConfig b = baseline_config(cfg.adapt);
        b.seed = seed;
        RunResult r = run_stream(source, b, cfg.source, cfg.schedule);
        base_fps.push_back(r.fingerprint);
        baselines.push_back(std::move(r.records));
    }

    std::vector<SweepCell> cells;
    for (const std::string& mname : cfg.sweep.methods) {
        const Method method = method_from_name(mname);
        const std::vector<double> alphas =
            method == Method::oil ? cfg.sweep.ema_decay : std::vector<double>{0.0};
        for (double alpha : alphas)
            for (double lr : cfg.sweep.lr)
                for (int k : cfg.sweep.memory_size)
                    for (std::uint64_t seed : cfg.seeds) {
                        SweepCell c;
                        c.method = method;
                        c.ema_decay = alpha;
                        c.lr = lr;
                        c.memory_size = k;
                        c.seed = seed;
                        cells.push_back(std::move(c));
                    }
    }

    const int jobs = cfg.sweep.jobs > 0
                         ? cfg.sweep.jobs
                         : std::max(1u, std::thread::hardware_concurrency());
    std::atomic<size_t> next{0};
    auto worker = [&]() {
        while (true) {
            const size_t i = next.fetch_add(1);
            if (i >= cells.size()) break;
            SweepCell& c = cells[i];
            try {
                AdaptConfig a = cfg.adapt;
                a.method = c.method;
                a.lr = c.lr;
                a.memory_size = c.memory_size;
                a.seed = c.seed;
                a.snapshots = false;
                if (c.method == Method::oil) a.ema_decay = c.ema_decay;
                const RunResult run = run_stream(source, a, cfg.source, cfg.schedule);
                const size_t seed_idx = static_cast<size_t>(
                    std::find(cfg.seeds.begin(), cfg.seeds.end(), c.seed) - cfg.seeds.begin());
                if (run.fingerprint != base_fps[seed_idx])
                    throw std::runtime_error("mismatched stream fingerprints");
                c.summary = summarize_run(run, cfg.schedule, &baselines[seed_idx]);
                c.stream_seed = run.stream_seed;
                c.ok = true;
            } catch (const std::exception& e) {
                c.ok = false;
                c.error = e.what();
            }
        }
    };
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();

    // Single-threaded merge in fixed cell order.
    std::vector<std::string> rows;
    for (const SweepCell& c : cells) {
        std::string row = std::string(method_name(c.method)) + "," +
                          (c.method == Method::oil ? num(c.ema_decay) : std::string("")) + "," +
                          num(c.lr) + "," + std::to_string(c.memory_size) + "," +
                          std::to_string(c.seed) + ",";
        if (c.ok) {
            row += num(c.summary.em) + "," + num(c.summary.f1) + "," + num(c.summary.em_gain) +
                   "," + num(c.summary.f1_gain) + "," + std::to_string(c.summary.aborted_steps) +
                   ",ok";
            json cell_json;
            cell_json["cell"] = sweep_cell_name(c);
            cell_json["summary"] = summary_to_json(c.summary, c.stream_seed);
            write_text((fs::path(out) / "cells" / (sweep_cell_name(c) + ".json")).string(),
                       cell_json.dump(2) + "\n");
        } else {
            row += ",,,,,failed:" + c.error;
        }
        rows.push_back(std::move(row));
    }
    write_csv((fs::path(out) / "gains.csv").string(), cfg,
              "method,ema_decay,lr,memory_size,seed,em,f1,em_gain,f1_gain,aborted,status", rows);

    // Mean EM-gain matrix (lr rows x memory-size columns) per method variant.
    auto matrix_for = [&](Method method, double alpha, const std::string& fname) {
        std::vector<std::string> mrows;
        for (double lr : cfg.sweep.lr) {
            std::string row = num(lr);
            for (int k : cfg.sweep.memory_size) {
                double sum = 0.0;
                int n = 0;
                for (const SweepCell& c : cells) {
                    if (c.ok && c.method == method && c.lr == lr && c.memory_size == k &&
                        (method != Method::oil || c.ema_decay == alpha)) {
                        sum += c.summary.em_gain;
                        n += 1;
                    }
                }
                row += "," + (n > 0 ? num(sum / n) : std::string(""));
            }
            mrows.push_back(std::move(row));
        }
        std::string header = "lr";
        for (int k : cfg.sweep.memory_size) header += ",K" + std::to_string(k);
        write_csv((fs::path(out) / fname).string(), cfg, header, mrows);
    };
    for (const std::string& mname : cfg.sweep.methods) {
        const Method method = method_from_name(mname);
        if (method == Method::oil) {
            for (double alpha : cfg.sweep.ema_decay)
                matrix_for(method, alpha, "matrix_oil_a" + num(alpha) + ".csv");
        } else {
            matrix_for(method, 0.0, "matrix_" + mname + ".csv");
        }
    }
    std::cout << "sweep: " << cells.size() << " cells -> " << out << "\n";
    return out;
}

inline std::string cmd_continual(const ExperimentConfig& cfg, const std::string& ckpt = "") {
    cfg.validate();
    if (cfg.schedule.segments.size() < 2)
        throw std::invalid_argument("continual: schedule needs at least 2 segments");
    const std::string out = resolve_out_dir(cfg.out_dir);
    ensure_dir(out);
    const ModelParams source = load_source_for(cfg, ckpt);

    const RunResult run = run_stream(source, cfg.adapt, cfg.source, cfg.schedule);
    AdaptConfig bcfg = baseline_config(cfg.adapt);
    const RunResult base = run_stream(source, bcfg, cfg.source, cfg.schedule);
    require_same_stream(run, base);
    const RunSummary s = summarize_run(run, cfg.schedule, &base.records);
    const RunSummary bs = summarize_run(base, cfg.schedule);

    write_summary_json((fs::path(out) / "summary.json").string(), cfg, cfg.adapt, s, run);
    write_steps_jsonl((fs::path(out) / "steps.jsonl").string(), run, s);

    std::vector<std::string> seg_rows;
    for (size_t g = 0; g < s.segments.size(); ++g) {
        const SegmentSummary& a = s.segments[g];
        const SegmentSummary& b = bs.segments[g];
        seg_rows.push_back(std::to_string(a.segment) + "," + a.shift_kind + "," +
                           std::to_string(a.steps) + "," + num(a.em) + "," + num(b.em) + "," +
                           num(a.em_gain) + "," + num(a.f1) + "," + num(b.f1) + "," +
                           num(a.f1_gain));
    }
    write_csv((fs::path(out) / "segments.csv").string(), cfg,
              "segment,kind,steps,em,baseline_em,em_gain,f1,baseline_f1,f1_gain", seg_rows);

    std::vector<std::string> step_rows;
    for (size_t t = 0; t < run.records.size(); ++t) {
        step_rows.push_back(std::to_string(run.records[t].t) + "," +
                            std::to_string(run.records[t].segment) + "," + num(s.step_em[t]) +
                            "," + num(bs.step_em[t]) + "," + num(s.step_f1[t]) + "," +
                            num(bs.step_f1[t]));
    }
    write_csv((fs::path(out) / "steps.csv").string(), cfg,
              "t,segment,em,baseline_em,f1,baseline_f1", step_rows);

    for (size_t g = 0; g < run.boundary_learners.size(); ++g) {
        save_checkpoint((fs::path(out) / ("learner_seg" + std::to_string(g) + ".ckpt")).string(),
                        run.boundary_learners[g], cfg.source.L);
        if (g < run.boundary_experts.size())
            save_checkpoint((fs::path(out) / ("expert_seg" + std::to_string(g) + ".ckpt")).string(),
                            run.boundary_experts[g], cfg.source.L);
    }
    std::cout << "continual: segments=" << s.segments.size() << " em_gain=" << s.em_gain
              << " aborted=" << s.aborted_steps << "\n";
    return out;
}

inline int cmd_gradcheck(const GradCheckSettings& settings, const std::string& out_dir) {
    const std::vector<GradCheckResult> results = run_gradchecks(settings);
    int failures = 0;
    std::vector<std::string> rows;
    for (const GradCheckResult& r : results) {
        std::cout << "gradcheck " << r.name << ": max_rel_err=" << r.max_rel_err
                  << " tol=" << r.tolerance << (r.pass ? " PASS" : " FAIL") << "\n";
        rows.push_back(r.name + "," + num(r.max_rel_err) + "," + num(r.tolerance) + "," +
                       std::to_string(r.draws) + "," + (r.pass ? "pass" : "fail"));
        failures += r.pass ? 0 : 1;
    }
    if (!out_dir.empty()) {
        ensure_dir(out_dir);
        std::string text = "loss,max_rel_err,tolerance,draws,status\n";
        for (const std::string& r : rows) text += r + "\n";
        write_text((fs::path(out_dir) / "gradcheck.csv").string(), text);
    }
    return failures;
}

inline std::string cmd_gen(const ExperimentConfig& cfg) {
    cfg.validate();
    const std::string out = resolve_out_dir(cfg.out_dir);
    ensure_dir(out);

    Dataset train;
    train.d = cfg.source.d;
    train.L = cfg.source.L;
    train.seed = cfg.source.seed;
    train.spec_hash = hash_spec(cfg.source);
    train.instances = gen_source(cfg.source, cfg.gen.n_source);
    save_dataset((fs::path(out) / "source_train.ds").string(), train);

    const SourceSpec hspec = heldout_spec(cfg.source);
    Dataset held;
    held.d = hspec.d;
    held.L = hspec.L;
    held.seed = hspec.seed;
    held.spec_hash = hash_spec(hspec);
    held.instances = gen_source(hspec, cfg.gen.n_per_segment);
    save_dataset((fs::path(out) / "source_heldout.ds").string(), held);

    for (size_t g = 0; g < cfg.schedule.segments.size(); ++g) {
        const ShiftSpec& shift = cfg.schedule.segments[g].shift;
        const std::uint64_t seg_seed = mix_seed(cfg.source.seed, kSegTag + g);
        Dataset ds;
        ds.d = cfg.source.d;
        ds.L = cfg.source.L;
        ds.seed = seg_seed;
        ds.spec_hash = hash_shift(cfg.source, shift);
        for (int i = 0; i < cfg.gen.n_per_segment; ++i) {
            Rng gen_rng(mix_seed(seg_seed, static_cast<std::uint64_t>(i)));
            Rng shift_rng(mix_seed(seg_seed ^ 0x5348ULL, static_cast<std::uint64_t>(i)));
            ds.instances.push_back(
                apply_shift(gen_instance(cfg.source, gen_rng), shift, cfg.source, shift_rng));
        }
        save_dataset((fs::path(out) / ("segment" + std::to_string(g) + "_" +
                                       shift_kind_name(shift.kind) + ".ds")).string(), ds);
    }
    std::cout << "gen: wrote datasets -> " << out << "\n";
    return out;
}

}  // namespace ttakit
