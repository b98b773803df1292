// Online test-time adaptation over a batch stream. Three methods share one
// engine: entropy minimization (tent), self pseudo-labeling (pl), and
// imitation of a slow EMA expert with noisy-action filtering and a
// total-direct-effect correction (oil). Each step predicts first, then
// replays the memory bank with one gradient step per stored batch; for oil
// the expert is re-blended after every inner update.
//
// Gradient conventions: pseudo-labels, filter decisions, and the causal
// bias offset (p - p_hat at the label index) are constants of the step;
// gradients flow through the learner's probabilities only. Under that
// convention oil with ema_decay = 0, no filtering, and the causal term
// active reproduces pl's parameter trajectory exactly, which the test
// suites rely on.
#pragma once

#include <array>
#include <chrono>
#include <deque>
#include <optional>
#include <span>

#include "ttakit/core.hpp"
#include "ttakit/model.hpp"
#include "ttakit/streams.hpp"

namespace ttakit {

enum class Method { tent, pl, oil };

inline const char* method_name(Method m) {
    switch (m) {
        case Method::tent: return "tent";
        case Method::pl: return "pl";
        case Method::oil: return "oil";
    }
    return "?";
}

inline Method method_from_name(const std::string& s) {
    if (s == "tent") return Method::tent;
    if (s == "pl") return Method::pl;
    if (s == "oil") return Method::oil;
    throw std::invalid_argument("unknown method: " + s);
}

struct AdaptConfig {
    Method method = Method::oil;
    double lr = 1e-3;       // lr = 0 is the no-adaptation baseline
    int batch_size = 8;
    int memory_size = 3;    // K, replay bank capacity
    double ema_decay = 0.99;                                        // alpha in the expert update
    double filter_threshold = std::numeric_limits<double>::infinity();  // gamma; inf disables
    double tde_beta = 1.0;  // beta in total-direct-effect inference
    bool causal = true;     // apply the bias-corrected training term
    std::uint64_t seed = 0;
    bool snapshots = false;
    int snapshot_cap = 64;

    void validate() const {
        if (lr < 0.0) throw std::invalid_argument("AdaptConfig: lr must be >= 0");
        if (batch_size < 1) throw std::invalid_argument("AdaptConfig: batch_size must be >= 1");
        if (memory_size < 1) throw std::invalid_argument("AdaptConfig: memory_size must be >= 1");
        if (ema_decay < 0.0 || ema_decay > 1.0)
            throw std::invalid_argument("AdaptConfig: ema_decay outside [0,1]");
        if (filter_threshold < 0.0)
            throw std::invalid_argument("AdaptConfig: filter_threshold must be >= 0 or inf");
        if (tde_beta < 0.0 || tde_beta > 1.0)
            throw std::invalid_argument("AdaptConfig: tde_beta outside [0,1]");
        if (snapshot_cap < 1) throw std::invalid_argument("AdaptConfig: snapshot_cap must be >= 1");
    }

    // alpha/gamma/beta/causal only steer oil.
    bool uses_expert() const { return method == Method::oil; }
};

// ---------------------------------------------------------------------------
// Memory bank
// ---------------------------------------------------------------------------

// Bounded FIFO of the last K input batches; iteration is oldest to newest.
class MemoryBank {
public:
    explicit MemoryBank(int capacity) : capacity_(capacity) {
        if (capacity < 1) throw std::invalid_argument("MemoryBank: capacity must be >= 1");
    }

    void push(InputBatch batch) {
        batches_.push_back(std::move(batch));
        while (static_cast<int>(batches_.size()) > capacity_) batches_.pop_front();
    }

    int size() const { return static_cast<int>(batches_.size()); }
    int capacity() const { return capacity_; }
    const InputBatch& at(int i) const { return batches_.at(static_cast<size_t>(i)); }

    auto begin() const { return batches_.begin(); }
    auto end() const { return batches_.end(); }

private:
    int capacity_;
    std::deque<InputBatch> batches_;
};

// ---------------------------------------------------------------------------
// Online losses
// ---------------------------------------------------------------------------

struct OnlineLoss {
    double loss = 0.0;                            // filtered mean over included terms
    Vector grad;                                  // wrt flattened learner params
    std::array<double, 2> head_loss = {0.0, 0.0}; // per-head mean over included terms
    int included = 0;                             // passing (instance, head) terms
    int total = 0;                                // 2 * batch size
    std::vector<std::array<bool, 2>> pass_mask;   // per instance, {start, end}
};

namespace detail {

// One pseudo-label term: label index, filter decision, and the frozen causal
// offset (p - p_hat)[label] (0 when the causal correction is off).
struct HeadTerm {
    int label = 0;
    bool pass = true;
    double bias = 0.0;
};

inline double term_value(const Vector& p, const HeadTerm& t) {
    return floored_neg_log(p[static_cast<size_t>(t.label)] + t.bias);
}

// Logit gradient of term_value, scaled by weight, added into g. Zero when
// the probability floor engages.
inline void add_term_grad(const Vector& p, const HeadTerm& t, double weight, Vector& g) {
    const double py = p[static_cast<size_t>(t.label)];
    const double qy = py + t.bias;
    if (qy <= kProbFloor) return;
    const double coef = weight * (py / qy);
    for (size_t j = 0; j < p.size(); ++j) g[j] += coef * p[j];
    g[static_cast<size_t>(t.label)] -= coef;
}

}  // namespace detail

// Entropy minimization: mean over instances and heads of H(p).
inline OnlineLoss tent_loss_grad(const ModelParams& p, std::span<const Matrix> tokens) {
    if (tokens.empty()) throw std::invalid_argument("tent_loss_grad: empty batch");
    OnlineLoss out;
    out.grad.assign(static_cast<size_t>(p.param_count()), 0.0);
    out.total = 2 * static_cast<int>(tokens.size());
    out.included = out.total;
    out.pass_mask.assign(tokens.size(), {true, true});
    const double weight = 1.0 / static_cast<double>(out.total);
    std::array<double, 2> head_sum = {0.0, 0.0};
    for (const Matrix& x : tokens) {
        const ForwardCache c = forward_cached(p, x);
        const int L = x.rows;
        Vector gs(static_cast<size_t>(L), 0.0), ge(static_cast<size_t>(L), 0.0);
        const Vector* probs[2] = {&c.dist.p_start, &c.dist.p_end};
        Vector* grads[2] = {&gs, &ge};
        for (int head = 0; head < 2; ++head) {
            const Vector& prob = *probs[head];
            const double h = entropy(prob);
            head_sum[static_cast<size_t>(head)] += h;
            Vector& g = *grads[head];
            for (size_t j = 0; j < prob.size(); ++j) {
                if (prob[j] > 0.0) g[j] = -weight * prob[j] * (std::log(prob[j]) + h);
            }
        }
        accumulate_backward(p, x, c, gs, ge, out.grad);
    }
    out.head_loss = {head_sum[0] / tokens.size(), head_sum[1] / tokens.size()};
    out.loss = (head_sum[0] + head_sum[1]) * weight;
    return out;
}

// Self pseudo-labeling: cross-entropy against the model's own argmax, with
// the label treated as a constant.
inline OnlineLoss pl_loss_grad(const ModelParams& p, std::span<const Matrix> tokens) {
    if (tokens.empty()) throw std::invalid_argument("pl_loss_grad: empty batch");
    OnlineLoss out;
    out.grad.assign(static_cast<size_t>(p.param_count()), 0.0);
    out.total = 2 * static_cast<int>(tokens.size());
    out.included = out.total;
    out.pass_mask.assign(tokens.size(), {true, true});
    const double weight = 1.0 / static_cast<double>(out.total);
    std::array<double, 2> head_sum = {0.0, 0.0};
    for (const Matrix& x : tokens) {
        const ForwardCache c = forward_cached(p, x);
        const int L = x.rows;
        Vector gs(static_cast<size_t>(L), 0.0), ge(static_cast<size_t>(L), 0.0);
        const Vector* probs[2] = {&c.dist.p_start, &c.dist.p_end};
        Vector* grads[2] = {&gs, &ge};
        for (int head = 0; head < 2; ++head) {
            const Vector& prob = *probs[head];
            const detail::HeadTerm term{argmax(prob), true, 0.0};
            head_sum[static_cast<size_t>(head)] += detail::term_value(prob, term);
            detail::add_term_grad(prob, term, weight, *grads[head]);
        }
        accumulate_backward(p, x, c, gs, ge, out.grad);
    }
    out.head_loss = {head_sum[0] / tokens.size(), head_sum[1] / tokens.size()};
    out.loss = (head_sum[0] + head_sum[1]) * weight;
    return out;
}

// Frozen evaluation context for the imitation loss: expert pseudo-labels,
// filter decisions, and causal bias offsets captured at a reference point.
// Finite-difference validation perturbs the learner while holding this
// context fixed, matching what the analytic gradient treats as constant.
struct OilContext {
    std::vector<std::array<detail::HeadTerm, 2>> terms;  // per instance {start, end}
    int included = 0;
};

inline OilContext oil_context(const ModelParams& learner, const ModelParams& expert,
                              std::span<const Matrix> tokens, double gamma, bool causal) {
    if (tokens.empty()) throw std::invalid_argument("oil_context: empty batch");
    OilContext ctx;
    ctx.terms.reserve(tokens.size());
    for (const Matrix& x : tokens) {
        const SpanDist p = forward(learner, x);
        const SpanDist p_hat = forward(expert, x);
        std::array<detail::HeadTerm, 2> inst_terms;
        const Vector* lp[2] = {&p.p_start, &p.p_end};
        const Vector* ep[2] = {&p_hat.p_start, &p_hat.p_end};
        for (int head = 0; head < 2; ++head) {
            detail::HeadTerm t;
            t.label = argmax(*ep[head]);
            const double py = (*lp[head])[static_cast<size_t>(t.label)];
            t.pass = floored_neg_log(py) < gamma;
            t.bias = causal ? py - (*ep[head])[static_cast<size_t>(t.label)] : 0.0;
            if (t.pass) ctx.included += 1;
            inst_terms[static_cast<size_t>(head)] = t;
        }
        ctx.terms.push_back(inst_terms);
    }
    return ctx;
}

// Loss under a frozen context: mean over passing terms of
// -log(p[label] + bias), 0 if nothing passes.
inline double oil_loss_frozen(const ModelParams& learner, std::span<const Matrix> tokens,
                              const OilContext& ctx) {
    if (tokens.size() != ctx.terms.size())
        throw std::invalid_argument("oil_loss_frozen: context size mismatch");
    if (ctx.included == 0) return 0.0;
    double sum = 0.0;
    for (size_t i = 0; i < tokens.size(); ++i) {
        const SpanDist p = forward(learner, tokens[i]);
        const Vector* lp[2] = {&p.p_start, &p.p_end};
        for (int head = 0; head < 2; ++head) {
            const detail::HeadTerm& t = ctx.terms[i][static_cast<size_t>(head)];
            if (t.pass) sum += detail::term_value(*lp[head], t);
        }
    }
    return sum / static_cast<double>(ctx.included);
}

// Imitation loss with noisy-action filtering and optional causal correction.
// Expert probabilities provide the pseudo-labels; a term contributes only if
// the plain cross-entropy against its label is below gamma. With the causal
// flag the logged quantity is p[y] + (p[y] - p_hat[y]), the offset entering
// as a constant.
inline OnlineLoss oil_loss_grad(const ModelParams& learner, const ModelParams& expert,
                                std::span<const Matrix> tokens, double gamma, bool causal) {
    const OilContext ctx = oil_context(learner, expert, tokens, gamma, causal);
    OnlineLoss out;
    out.grad.assign(static_cast<size_t>(learner.param_count()), 0.0);
    out.total = 2 * static_cast<int>(tokens.size());
    out.included = ctx.included;
    out.pass_mask.reserve(tokens.size());
    std::array<double, 2> head_sum = {0.0, 0.0};
    std::array<int, 2> head_count = {0, 0};
    const double weight = ctx.included > 0 ? 1.0 / static_cast<double>(ctx.included) : 0.0;
    double sum = 0.0;
    for (size_t i = 0; i < tokens.size(); ++i) {
        const Matrix& x = tokens[i];
        const ForwardCache c = forward_cached(learner, x);
        const int L = x.rows;
        Vector gs(static_cast<size_t>(L), 0.0), ge(static_cast<size_t>(L), 0.0);
        const Vector* probs[2] = {&c.dist.p_start, &c.dist.p_end};
        Vector* grads[2] = {&gs, &ge};
        std::array<bool, 2> mask;
        for (int head = 0; head < 2; ++head) {
            const detail::HeadTerm& t = ctx.terms[i][static_cast<size_t>(head)];
            mask[static_cast<size_t>(head)] = t.pass;
            if (!t.pass) continue;
            const double v = detail::term_value(*probs[head], t);
            sum += v;
            head_sum[static_cast<size_t>(head)] += v;
            head_count[static_cast<size_t>(head)] += 1;
            detail::add_term_grad(*probs[head], t, weight, *grads[head]);
        }
        out.pass_mask.push_back(mask);
        if (mask[0] || mask[1]) accumulate_backward(learner, x, c, gs, ge, out.grad);
    }
    out.loss = ctx.included > 0 ? sum * weight : 0.0;
    for (int head = 0; head < 2; ++head) {
        out.head_loss[static_cast<size_t>(head)] =
            head_count[static_cast<size_t>(head)] > 0
                ? head_sum[static_cast<size_t>(head)] / head_count[static_cast<size_t>(head)]
                : 0.0;
    }
    return out;
}

// Dispatch on the configured method. expert may be null for tent/pl.
inline OnlineLoss online_loss_grad(const AdaptConfig& cfg, const ModelParams& learner,
                                   const ModelParams* expert, std::span<const Matrix> tokens) {
    switch (cfg.method) {
        case Method::tent: return tent_loss_grad(learner, tokens);
        case Method::pl: return pl_loss_grad(learner, tokens);
        case Method::oil:
            if (expert == nullptr) throw std::invalid_argument("online_loss_grad: oil needs an expert");
            return oil_loss_grad(learner, *expert, tokens, cfg.filter_threshold, cfg.causal);
    }
    throw std::logic_error("online_loss_grad: unknown method");
}

// ---------------------------------------------------------------------------
// Total-direct-effect inference
// ---------------------------------------------------------------------------

struct TdePrediction {
    Span span;
    SpanDist scores;  // q per head
};

// Per head, q[i] = p[i] + (1 - beta) * (p[i] - p_hat[i]); prediction is the
// argmax of q with ties to the lowest index. beta = 1 short-circuits to the
// plain argmax of p so the equality is exact, not merely within rounding.
inline TdePrediction tde_predict(const SpanDist& p, const SpanDist& p_hat, double beta) {
    if (beta < 0.0 || beta > 1.0) throw std::domain_error("tde_predict: beta outside [0,1]");
    if (beta == 1.0) return TdePrediction{predict_span(p), p};
    const double w = 1.0 - beta;
    SpanDist q;
    q.p_start.resize(p.p_start.size());
    q.p_end.resize(p.p_end.size());
    for (size_t i = 0; i < p.p_start.size(); ++i)
        q.p_start[i] = p.p_start[i] + w * (p.p_start[i] - p_hat.p_start[i]);
    for (size_t i = 0; i < p.p_end.size(); ++i)
        q.p_end[i] = p.p_end[i] + w * (p.p_end[i] - p_hat.p_end[i]);
    Span s{argmax(q.p_start), argmax(q.p_end)};
    return TdePrediction{s, std::move(q)};
}

inline TdePrediction tde_predict(const ModelParams& learner, const ModelParams& expert,
                                 const Matrix& tokens, double beta) {
    const SpanDist p = forward(learner, tokens);
    if (beta == 1.0) return TdePrediction{predict_span(p), p};
    return tde_predict(p, forward(expert, tokens), beta);
}

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

struct StepRecord {
    int t = 0;        // 1-based step index
    int segment = 0;
    std::vector<Span> predictions;  // made before any update
    double loss = 0.0;              // method objective on x_t, pre-update
    double loss_start = 0.0;
    double loss_end = 0.0;
    double pass_rate = 1.0;         // fraction of terms passing across this step's inner updates
    double expert_distance = 0.0;   // max-norm learner/expert gap after the step
    double wall_ms = 0.0;
    bool aborted = false;           // non-finite loss; parameters were restored
};

// Retained only when regret diagnostics are on. learner[t] is the parameter
// snapshot after step t's updates; expert_prestep[t] (oil) is the expert
// that produced step t's pseudo-labels, i.e. its state before the step.
struct SnapshotLog {
    bool enabled = false;
    int cap = 64;
    int steps_seen = 0;
    std::vector<ModelParams> learners;
    std::vector<ModelParams> experts_prestep;
    std::vector<InputBatch> batches;

    int size() const { return static_cast<int>(learners.size()); }
};

class AdaptEngine {
public:
    AdaptEngine(const ModelParams& source, const AdaptConfig& cfg)
        : cfg_(cfg), learner_(source), bank_(cfg.memory_size) {
        cfg_.validate();
        if (cfg_.uses_expert()) expert_ = source;
        log_.enabled = cfg_.snapshots;
        log_.cap = cfg_.snapshot_cap;
    }

    StepRecord step(const InputBatch& batch) {
        const auto t0 = std::chrono::steady_clock::now();
        StepRecord rec;
        rec.t = ++t_;
        rec.segment = batch.segment;
        log_.steps_seen = t_;

        // 1. Predict before any update. A batch that cannot even be scored
        // (non-finite tokens) is quarantined: recorded as aborted and never
        // enqueued, so it cannot poison later replays.
        bool batch_ok = true;
        try {
            rec.predictions.reserve(batch.tokens.size());
            for (const Matrix& x : batch.tokens) {
                if (cfg_.method == Method::oil) {
                    rec.predictions.push_back(tde_predict(learner_, *expert_, x, cfg_.tde_beta).span);
                } else {
                    rec.predictions.push_back(predict_span(forward(learner_, x)));
                }
            }
            const OnlineLoss pre = online_loss_grad(cfg_, learner_, expert_ptr(), batch.tokens);
            rec.loss = pre.loss;
            rec.loss_start = pre.head_loss[0];
            rec.loss_end = pre.head_loss[1];
        } catch (const NumericError&) {
            rec.predictions.clear();
            rec.aborted = true;
            batch_ok = false;
        }
        if (!batch_ok) {
            rec.wall_ms = std::chrono::duration<double, std::milli>(
                              std::chrono::steady_clock::now() - t0).count();
            return rec;
        }

        // 2. Enqueue; the bank evicts the oldest batch beyond capacity.
        bank_.push(batch);

        // 3. One gradient step per bank batch, oldest to newest; the expert
        // follows the learner after every inner update. A non-finite loss
        // anywhere restores the pre-step parameters.
        const ModelParams saved_learner = learner_;
        const std::optional<ModelParams> saved_expert = expert_;
        int passed = 0;
        int total = 0;
        try {
            for (const InputBatch& stored : bank_) {
                const OnlineLoss res = online_loss_grad(cfg_, learner_, expert_ptr(), stored.tokens);
                if (!std::isfinite(res.loss)) throw NumericError("non-finite loss");
                passed += res.included;
                total += res.total;
                learner_ = sgd_step(learner_, res.grad, cfg_.lr);
                if (expert_) expert_ = ema_blend(*expert_, learner_, cfg_.ema_decay);
            }
        } catch (const NumericError&) {
            learner_ = saved_learner;
            expert_ = saved_expert;
            rec.aborted = true;
        }
        rec.pass_rate = total > 0 ? static_cast<double>(passed) / total : 1.0;
        if (expert_) rec.expert_distance = max_abs_diff(learner_.flatten(), expert_->flatten());

        // 4. Snapshot for regret diagnostics.
        if (log_.enabled && t_ <= log_.cap) {
            log_.learners.push_back(learner_);
            if (saved_expert) log_.experts_prestep.push_back(*saved_expert);
            log_.batches.push_back(batch);
        }

        rec.wall_ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - t0).count();
        return rec;
    }

    const AdaptConfig& config() const { return cfg_; }
    const ModelParams& learner() const { return learner_; }
    bool has_expert() const { return expert_.has_value(); }
    const ModelParams& expert() const {
        if (!expert_) throw std::logic_error("AdaptEngine: method has no expert");
        return *expert_;
    }
    const MemoryBank& bank() const { return bank_; }
    const SnapshotLog& snapshots() const { return log_; }
    int steps_taken() const { return t_; }

private:
    const ModelParams* expert_ptr() const { return expert_ ? &*expert_ : nullptr; }

    AdaptConfig cfg_;
    ModelParams learner_;
    std::optional<ModelParams> expert_;
    MemoryBank bank_;
    SnapshotLog log_;
    int t_ = 0;
};

inline AdaptEngine init_adaptation(const ModelParams& source, const AdaptConfig& cfg) {
    return AdaptEngine(source, cfg);
}

// ---------------------------------------------------------------------------
// Regret
// ---------------------------------------------------------------------------

struct RegretResult {
    double regret = 0.0;
    int argmin_index = 0;  // 0-based snapshot index of the best fixed comparator
};

// Cumulative online loss of the realized snapshot sequence minus the best
// single snapshot replayed over every stored batch. The loss at time t is
// the method objective on x_t, with the expert (for oil) fixed at its
// state entering step t.
inline RegretResult regret(const SnapshotLog& log, const AdaptConfig& cfg) {
    if (!log.enabled) throw std::runtime_error("regret: snapshots were not recorded");
    const int T = log.size();
    if (T == 0) throw std::runtime_error("regret: empty snapshot log");
    if (log.steps_seen > T)
        throw std::runtime_error("regret: snapshot log does not cover the whole run");
    auto loss_at = [&](int s, int t) {
        const ModelParams* expert =
            cfg.uses_expert() ? &log.experts_prestep[static_cast<size_t>(t)] : nullptr;
        return online_loss_grad(cfg, log.learners[static_cast<size_t>(s)], expert,
                                log.batches[static_cast<size_t>(t)].tokens).loss;
    };
    double realized = 0.0;
    for (int t = 0; t < T; ++t) realized += loss_at(t, t);
    double best = std::numeric_limits<double>::infinity();
    int best_idx = 0;
    for (int s = 0; s < T; ++s) {
        double sum = 0.0;
        for (int t = 0; t < T; ++t) sum += loss_at(s, t);
        if (sum < best) {
            best = sum;
            best_idx = s;
        }
    }
    return RegretResult{realized - best, best_idx};
}

}  // namespace ttakit
