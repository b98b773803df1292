// The span-prediction model shared by source, learner, and expert: a
// per-position scoring MLP (one tanh hidden layer) with independent start
// and end heads. Gradients are hand-derived; finite differences validate
// them in the test suites.
#pragma once

#include <optional>
#include <span>
#include <string>

#include "ttakit/core.hpp"
#include "ttakit/serialize.hpp"

namespace ttakit {

struct Span {
    int start = 0;
    int end = 0;
    bool operator==(const Span&) const = default;
};

// One stream instance: L token embeddings of dimension d. The gold span is
// carried for evaluation only; adaptation code never sees it (it operates on
// bare token matrices, see tta.hpp).
struct Instance {
    Matrix tokens;  // L x d
    std::optional<Span> gold;
};

struct SpanDist {
    Vector p_start;
    Vector p_end;
};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

// Flat layout: [w1 row-major (h*d), b1 (h), w_start (h), w_end (h), b_start, b_end].
struct ModelParams {
    int d = 0;  // embedding dim
    int h = 0;  // hidden dim
    Matrix w1;
    Vector b1;
    Vector w_start;
    Vector w_end;
    double b_start = 0.0;
    double b_end = 0.0;

    ModelParams() = default;
    ModelParams(int d_, int h_)
        : d(d_), h(h_), w1(h_, d_), b1(static_cast<size_t>(h_), 0.0),
          w_start(static_cast<size_t>(h_), 0.0), w_end(static_cast<size_t>(h_), 0.0) {
        if (d_ <= 0 || h_ <= 0) throw std::invalid_argument("ModelParams: dims must be positive");
    }

    int param_count() const { return h * d + 3 * h + 2; }

    Vector flatten() const {
        Vector theta;
        theta.reserve(static_cast<size_t>(param_count()));
        theta.insert(theta.end(), w1.data.begin(), w1.data.end());
        theta.insert(theta.end(), b1.begin(), b1.end());
        theta.insert(theta.end(), w_start.begin(), w_start.end());
        theta.insert(theta.end(), w_end.begin(), w_end.end());
        theta.push_back(b_start);
        theta.push_back(b_end);
        return theta;
    }

    static ModelParams unflatten(int d, int h, const Vector& theta) {
        ModelParams p(d, h);
        if (static_cast<int>(theta.size()) != p.param_count())
            throw std::invalid_argument("ModelParams::unflatten: size mismatch");
        size_t k = 0;
        for (double& x : p.w1.data) x = theta[k++];
        for (double& x : p.b1) x = theta[k++];
        for (double& x : p.w_start) x = theta[k++];
        for (double& x : p.w_end) x = theta[k++];
        p.b_start = theta[k++];
        p.b_end = theta[k++];
        return p;
    }

    bool operator==(const ModelParams&) const = default;
};

// Small random initialization, deterministic under the rng. input_rms is
// the typical token-entry magnitude; scaling the first layer by it keeps
// initial pre-activations in tanh's active region for any data scale.
inline ModelParams init_params(int d, int h, Rng& rng, double input_rms = 1.0) {
    if (input_rms <= 0.0) throw std::invalid_argument("init_params: input_rms must be positive");
    ModelParams p(d, h);
    const double w1_scale = 1.0 / (input_rms * std::sqrt(static_cast<double>(d)));
    const double head_scale = 1.0 / std::sqrt(static_cast<double>(h));
    for (double& x : p.w1.data) x = w1_scale * rng.next_normal();
    for (double& x : p.w_start) x = head_scale * rng.next_normal();
    for (double& x : p.w_end) x = head_scale * rng.next_normal();
    return p;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

// Hidden activations kept for the backward pass.
struct ForwardCache {
    Matrix hidden;  // L x h, tanh(W1 x_i + b1)
    SpanDist dist;
};

inline ForwardCache forward_cached(const ModelParams& p, const Matrix& tokens) {
    if (tokens.cols != p.d)
        throw std::invalid_argument("forward: token dim does not match model");
    const int L = tokens.rows;
    ForwardCache c;
    c.hidden = Matrix(L, p.h);
    Vector s_start(static_cast<size_t>(L));
    Vector s_end(static_cast<size_t>(L));
    for (int i = 0; i < L; ++i) {
        const double* x = tokens.row(i);
        double* a = c.hidden.row(i);
        for (int j = 0; j < p.h; ++j) {
            const double* w = p.w1.row(j);
            double z = p.b1[static_cast<size_t>(j)];
            for (int k = 0; k < p.d; ++k) z += w[k] * x[k];
            a[j] = std::tanh(z);
        }
        double ss = p.b_start, se = p.b_end;
        for (int j = 0; j < p.h; ++j) {
            ss += p.w_start[static_cast<size_t>(j)] * a[j];
            se += p.w_end[static_cast<size_t>(j)] * a[j];
        }
        s_start[static_cast<size_t>(i)] = ss;
        s_end[static_cast<size_t>(i)] = se;
    }
    c.dist.p_start = softmax(s_start);
    c.dist.p_end = softmax(s_end);
    return c;
}

inline SpanDist forward(const ModelParams& p, const Matrix& tokens) {
    return forward_cached(p, tokens).dist;
}

inline SpanDist forward(const ModelParams& p, const Instance& inst) {
    return forward(p, inst.tokens);
}

// Argmax per head; ties resolve to the lowest index. The two heads are
// independent, so start <= end is not enforced.
inline Span predict_span(const SpanDist& dist) {
    return Span{argmax(dist.p_start), argmax(dist.p_end)};
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

// Accumulates d(loss)/d(theta) into grad (flat layout) given per-position
// logit gradients g_start, g_end for one instance. Callers pre-scale the
// logit gradients by their batch normalization.
inline void accumulate_backward(const ModelParams& p, const Matrix& tokens,
                                const ForwardCache& cache, const Vector& g_start,
                                const Vector& g_end, Vector& grad) {
    const int L = tokens.rows;
    const int hd = p.h * p.d;
    double* gw1 = grad.data();
    double* gb1 = grad.data() + hd;
    double* gws = grad.data() + hd + p.h;
    double* gwe = grad.data() + hd + 2 * p.h;
    double& gbs = grad[static_cast<size_t>(hd + 3 * p.h)];
    double& gbe = grad[static_cast<size_t>(hd + 3 * p.h + 1)];
    for (int i = 0; i < L; ++i) {
        const double gs = g_start[static_cast<size_t>(i)];
        const double ge = g_end[static_cast<size_t>(i)];
        if (gs == 0.0 && ge == 0.0) continue;
        const double* a = cache.hidden.row(i);
        const double* x = tokens.row(i);
        gbs += gs;
        gbe += ge;
        for (int j = 0; j < p.h; ++j) {
            gws[j] += gs * a[j];
            gwe[j] += ge * a[j];
            const double ga = gs * p.w_start[static_cast<size_t>(j)] +
                              ge * p.w_end[static_cast<size_t>(j)];
            const double gz = ga * (1.0 - a[j] * a[j]);
            if (gz == 0.0) continue;
            gb1[j] += gz;
            double* gw = gw1 + static_cast<size_t>(j) * p.d;
            for (int k = 0; k < p.d; ++k) gw[k] += gz * x[k];
        }
    }
}

// Cross-entropy term against a hard label plus its logit gradient, scaled by
// `weight`. When the probability floor engages the term is clamped and its
// gradient contribution is zero.
inline double add_ce_logit_grad(const Vector& prob, int label, double weight, Vector& g) {
    const double py = prob[static_cast<size_t>(label)];
    const double term = floored_neg_log(py);
    if (py > kProbFloor) {
        for (size_t j = 0; j < prob.size(); ++j) g[j] += weight * prob[j];
        g[static_cast<size_t>(label)] -= weight;
    }
    return term;
}

// ---------------------------------------------------------------------------
// Supervised loss
// ---------------------------------------------------------------------------

// Mean over instances of the per-head average cross-entropy against the gold
// span. Gradient is with respect to the flattened parameters.
inline std::pair<double, Vector> supervised_loss_grad(const ModelParams& p,
                                                      std::span<const Instance> batch) {
    if (batch.empty()) throw std::invalid_argument("supervised_loss_grad: empty batch");
    Vector grad(static_cast<size_t>(p.param_count()), 0.0);
    const double weight = 1.0 / (2.0 * static_cast<double>(batch.size()));
    double loss = 0.0;
    for (const Instance& inst : batch) {
        if (!inst.gold) throw std::invalid_argument("supervised_loss_grad: instance has no gold span");
        const ForwardCache c = forward_cached(p, inst.tokens);
        const int L = inst.tokens.rows;
        if (inst.gold->start < 0 || inst.gold->end >= L || inst.gold->start > inst.gold->end)
            throw std::out_of_range("supervised_loss_grad: gold span out of range");
        Vector gs(static_cast<size_t>(L), 0.0), ge(static_cast<size_t>(L), 0.0);
        loss += weight * add_ce_logit_grad(c.dist.p_start, inst.gold->start, weight, gs);
        loss += weight * add_ce_logit_grad(c.dist.p_end, inst.gold->end, weight, ge);
        accumulate_backward(p, inst.tokens, c, gs, ge, grad);
    }
    return {loss, grad};
}

// ---------------------------------------------------------------------------
// Parameter updates
// ---------------------------------------------------------------------------

// theta_e <- alpha * theta_e + (1 - alpha) * theta_learner. The endpoints
// alpha = 0 and alpha = 1 short-circuit to exact copies so that "expert
// stays bitwise equal to the source" style guarantees hold.
inline ModelParams ema_blend(const ModelParams& expert, const ModelParams& learner,
                             double alpha) {
    if (alpha < 0.0 || alpha > 1.0) throw std::domain_error("ema_blend: alpha outside [0,1]");
    if (expert.d != learner.d || expert.h != learner.h)
        throw std::invalid_argument("ema_blend: shape mismatch");
    if (alpha == 1.0) return expert;
    if (alpha == 0.0) return learner;
    if (expert == learner) return expert;  // blending equals is the identity, kept exact
    ModelParams out = expert;
    const double beta = 1.0 - alpha;
    auto blend = [&](double& e, double l) { e = alpha * e + beta * l; };
    for (size_t i = 0; i < out.w1.data.size(); ++i) blend(out.w1.data[i], learner.w1.data[i]);
    for (size_t i = 0; i < out.b1.size(); ++i) blend(out.b1[i], learner.b1[i]);
    for (size_t i = 0; i < out.w_start.size(); ++i) blend(out.w_start[i], learner.w_start[i]);
    for (size_t i = 0; i < out.w_end.size(); ++i) blend(out.w_end[i], learner.w_end[i]);
    blend(out.b_start, learner.b_start);
    blend(out.b_end, learner.b_end);
    return out;
}

// Plain gradient step on the flat layout. lr = 0 is permitted: it is the
// no-adaptation baseline used throughout evaluation.
inline ModelParams sgd_step(const ModelParams& p, const Vector& grad, double lr) {
    if (lr < 0.0) throw std::domain_error("sgd_step: negative learning rate");
    if (static_cast<int>(grad.size()) != p.param_count())
        throw std::invalid_argument("sgd_step: grad size mismatch");
    if (!all_finite(grad)) throw NumericError("sgd_step: non-finite gradient");
    if (lr == 0.0) return p;
    Vector theta = p.flatten();
    for (size_t i = 0; i < theta.size(); ++i) theta[i] -= lr * grad[i];
    return ModelParams::unflatten(p.d, p.h, theta);
}

// ---------------------------------------------------------------------------
// Checkpoint format
// ---------------------------------------------------------------------------
// version byte, then u32 d, h, L, then the flattened parameters as
// little-endian doubles. Write -> read round-trips bit-exact.

constexpr std::uint8_t kCheckpointVersion = 1;

struct Checkpoint {
    ModelParams params;
    int context_len = 0;  // L of the data the model was trained for
};

inline void save_checkpoint(const std::string& path, const ModelParams& p, int context_len) {
    ByteWriter w;
    w.u8(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(p.d));
    w.u32(static_cast<std::uint32_t>(p.h));
    w.u32(static_cast<std::uint32_t>(context_len));
    for (double x : p.flatten()) w.f64(x);
    w.to_file(path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    ByteReader r = ByteReader::from_file(path);
    const std::uint8_t version = r.u8();
    if (version != kCheckpointVersion)
        throw std::runtime_error("unsupported checkpoint version in " + path);
    const int d = static_cast<int>(r.u32());
    const int h = static_cast<int>(r.u32());
    const int L = static_cast<int>(r.u32());
    ModelParams probe(d, h);
    Vector theta(static_cast<size_t>(probe.param_count()));
    for (double& x : theta) x = r.f64();
    if (!r.exhausted()) throw std::runtime_error("trailing bytes in checkpoint " + path);
    return Checkpoint{ModelParams::unflatten(d, h, theta), L};
}

}  // namespace ttakit
