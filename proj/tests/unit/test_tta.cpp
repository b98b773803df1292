#include <doctest.h>

#include <cmath>

#include "ttakit/metrics.hpp"
#include "ttakit/tta.hpp"

using namespace ttakit;

namespace {

ModelParams random_params(int d, int h, std::uint64_t seed) {
    Rng rng(seed);
    return init_params(d, h, rng);
}

std::vector<Matrix> random_batch(int n, int L, int d, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Matrix> out;
    for (int i = 0; i < n; ++i) {
        Matrix m(L, d);
        for (double& x : m.data) x = rng.next_normal();
        out.push_back(std::move(m));
    }
    return out;
}

// Confident model + matching tokens: both heads are near one-hot.
struct ConfidentSetup {
    ModelParams params;
    std::vector<Matrix> tokens;
};

ConfidentSetup confident_setup() {
    ModelParams p(2, 2);
    p.w1.at(0, 0) = 3.0;
    p.w_start[0] = 14.0;
    p.w_end[0] = 14.0;
    Matrix tok(4, 2);
    for (int i = 0; i < 4; ++i) tok.at(i, 0) = i == 1 ? 5.0 : -5.0;
    return ConfidentSetup{p, {tok}};
}

SourceSpec unit_spec() {
    SourceSpec s;
    s.d = 4;
    s.L = 6;
    s.h_model = 5;
    s.mu_bg = Vector(4, -0.5);
    s.mu_ans = Vector(4, 0.5);
    s.sigma = 0.8;
    s.seed = 7;
    return s;
}

Schedule plain_schedule(int steps, double eta = 0.6) {
    ShiftSpec c;
    c.kind = ShiftKind::corruption;
    c.eta = eta;
    Schedule sched;
    sched.segments = {Segment{c, steps}};
    return sched;
}

std::vector<InputBatch> stripped_stream(const SourceSpec& spec, const Schedule& sched,
                                        int batch_size, std::uint64_t seed) {
    std::vector<InputBatch> out;
    for (const StreamBatch& b : materialize_stream(spec, sched, batch_size, seed))
        out.push_back(b.strip());
    return out;
}

}  // namespace

TEST_CASE("tent loss is zero on one-hot heads and ln L on uniform heads") {
    const ConfidentSetup c = confident_setup();
    const OnlineLoss sharp = tent_loss_grad(c.params, c.tokens);
    CHECK(sharp.loss < 1e-3);
    for (double g : sharp.grad) CHECK(std::abs(g) < 1e-2);

    const ModelParams zeros(3, 4);
    const auto batch = random_batch(2, 5, 3, 1);
    const OnlineLoss uniform = tent_loss_grad(zeros, batch);
    CHECK(uniform.loss == doctest::Approx(std::log(5.0)).epsilon(1e-12));
}

TEST_CASE("pl loss on uniform heads equals ln L with tie-broken pseudo-labels") {
    const ModelParams zeros(3, 4);
    const auto batch = random_batch(3, 4, 3, 2);
    const OnlineLoss r = pl_loss_grad(zeros, batch);
    CHECK(r.loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    CHECK(r.included == r.total);

    const ConfidentSetup c = confident_setup();
    CHECK(pl_loss_grad(c.params, c.tokens).loss < 1e-3);
}

TEST_CASE("oil with learner == expert and causal on reproduces the pl loss exactly") {
    const ModelParams p = random_params(4, 5, 3);
    const auto batch = random_batch(4, 6, 4, 4);
    const OnlineLoss oil = oil_loss_grad(p, p, batch, std::numeric_limits<double>::infinity(), true);
    const OnlineLoss pl = pl_loss_grad(p, batch);
    CHECK(oil.loss == pl.loss);
    CHECK(oil.grad == pl.grad);
}

TEST_CASE("gamma = 0 closes the filter: zero loss, zero gradient, all-false mask") {
    const ModelParams learner = random_params(3, 4, 5);
    const ModelParams expert = random_params(3, 4, 6);
    const auto batch = random_batch(3, 5, 3, 7);
    const OnlineLoss r = oil_loss_grad(learner, expert, batch, 0.0, true);
    CHECK(r.loss == 0.0);
    CHECK(r.included == 0);
    for (double g : r.grad) CHECK(g == 0.0);
    for (const auto& m : r.pass_mask) {
        CHECK_FALSE(m[0]);
        CHECK_FALSE(m[1]);
    }
}

TEST_CASE("filter pass-count is non-decreasing in gamma and saturates at infinity") {
    const ModelParams learner = random_params(4, 4, 8);
    const ModelParams expert = random_params(4, 4, 9);
    const auto batch = random_batch(6, 5, 4, 10);
    int prev = -1;
    for (double gamma : {0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 10.0}) {
        const OnlineLoss r = oil_loss_grad(learner, expert, batch, gamma, false);
        CHECK(r.included >= prev);
        prev = r.included;
    }
    const OnlineLoss all =
        oil_loss_grad(learner, expert, batch, std::numeric_limits<double>::infinity(), false);
    CHECK(all.included == all.total);
}

TEST_CASE("tde_predict: beta = 1 is exactly the argmax of p") {
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        const ModelParams learner = random_params(3, 4, 20 + seed);
        const ModelParams expert = random_params(3, 4, 40 + seed);
        const auto batch = random_batch(1, 6, 3, 60 + seed);
        const TdePrediction t = tde_predict(learner, expert, batch[0], 1.0);
        CHECK(t.span == predict_span(forward(learner, batch[0])));
    }
}

TEST_CASE("tde_predict: beta = 0 doubles the learner-expert discrepancy") {
    SpanDist p{{0.6, 0.4}, {0.6, 0.4}};
    SpanDist p_hat{{0.9, 0.1}, {0.9, 0.1}};
    const TdePrediction t = tde_predict(p, p_hat, 0.0);
    CHECK(t.scores.p_start[0] == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(t.scores.p_start[1] == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(t.span == Span{1, 1});
    CHECK_THROWS_AS(tde_predict(p, p_hat, 1.5), std::domain_error);
}

TEST_CASE("tde_predict: identical learner and expert give q = p for every beta") {
    const ModelParams p = random_params(3, 3, 71);
    const auto batch = random_batch(1, 5, 3, 72);
    const SpanDist base = forward(p, batch[0]);
    for (double beta : {0.0, 0.25, 0.5, 1.0}) {
        const TdePrediction t = tde_predict(p, p, batch[0], beta);
        CHECK(max_abs_diff(t.scores.p_start, base.p_start) <= 1e-15);
        CHECK(t.span == predict_span(base));
    }
}

TEST_CASE("adapt_step with K = 1 equals one manual update on the incoming batch") {
    const ModelParams source = random_params(4, 5, 80);
    const SourceSpec spec = unit_spec();
    const auto batches = stripped_stream(spec, plain_schedule(1), 3, 81);

    AdaptConfig cfg;
    cfg.method = Method::pl;
    cfg.lr = 0.05;
    cfg.memory_size = 1;
    AdaptEngine engine(source, cfg);
    engine.step(batches[0]);

    const OnlineLoss manual = pl_loss_grad(source, batches[0].tokens);
    const ModelParams expect = sgd_step(source, manual.grad, cfg.lr);
    CHECK(engine.learner().flatten() == expect.flatten());
}

TEST_CASE("lr = 0 freezes parameters and reproduces source predictions") {
    const ModelParams source = random_params(4, 5, 90);
    const SourceSpec spec = unit_spec();
    const auto batches = stripped_stream(spec, plain_schedule(6), 3, 91);

    AdaptConfig cfg;
    cfg.method = Method::oil;
    cfg.lr = 0.0;
    cfg.memory_size = 3;
    AdaptEngine engine(source, cfg);
    for (const InputBatch& b : batches) {
        const StepRecord rec = engine.step(b);
        CHECK(engine.learner() == source);
        CHECK(engine.expert() == source);
        for (size_t i = 0; i < b.tokens.size(); ++i) {
            CHECK(rec.predictions[i] == predict_span(forward(source, b.tokens[i])));
        }
    }
}

TEST_CASE("oil with alpha = 0, gamma = inf, causal matches the pl trajectory") {
    const ModelParams source = random_params(4, 6, 100);
    const SourceSpec spec = unit_spec();
    const auto batches = stripped_stream(spec, plain_schedule(12), 4, 101);

    AdaptConfig pl_cfg;
    pl_cfg.method = Method::pl;
    pl_cfg.lr = 0.03;
    pl_cfg.memory_size = 3;

    AdaptConfig oil_cfg = pl_cfg;
    oil_cfg.method = Method::oil;
    oil_cfg.ema_decay = 0.0;
    oil_cfg.filter_threshold = std::numeric_limits<double>::infinity();
    oil_cfg.causal = true;

    AdaptEngine pl_engine(source, pl_cfg);
    AdaptEngine oil_engine(source, oil_cfg);
    for (const InputBatch& b : batches) {
        pl_engine.step(b);
        oil_engine.step(b);
        CHECK(max_abs_diff(pl_engine.learner().flatten(), oil_engine.learner().flatten()) <= 1e-10);
    }
}

TEST_CASE("init_adaptation copies the source into learner and expert") {
    const ModelParams source = random_params(3, 4, 110);
    AdaptConfig cfg;
    cfg.method = Method::oil;
    AdaptEngine engine = init_adaptation(source, cfg);
    CHECK(engine.learner() == source);
    CHECK(engine.expert() == source);

    AdaptConfig plain;
    plain.method = Method::tent;
    AdaptEngine t = init_adaptation(source, plain);
    CHECK_FALSE(t.has_expert());
    CHECK_THROWS_AS(t.expert(), std::logic_error);
}

TEST_CASE("identical seeds give identical trajectories") {
    const ModelParams source = random_params(4, 5, 120);
    const SourceSpec spec = unit_spec();
    const auto batches = stripped_stream(spec, plain_schedule(8), 3, 121);

    AdaptConfig cfg;
    cfg.method = Method::oil;
    cfg.lr = 0.02;
    cfg.memory_size = 2;
    AdaptEngine a(source, cfg), b(source, cfg);
    for (const InputBatch& batch : batches) {
        a.step(batch);
        b.step(batch);
    }
    CHECK(a.learner() == b.learner());
    CHECK(a.expert() == b.expert());
}

TEST_CASE("alpha = 1 keeps the expert bitwise equal to the source") {
    const ModelParams source = random_params(4, 5, 130);
    const SourceSpec spec = unit_spec();
    const auto batches = stripped_stream(spec, plain_schedule(10), 3, 131);

    AdaptConfig cfg;
    cfg.method = Method::oil;
    cfg.lr = 0.05;
    cfg.memory_size = 2;
    cfg.ema_decay = 1.0;
    AdaptEngine engine(source, cfg);
    for (const InputBatch& b : batches) engine.step(b);
    CHECK(engine.expert() == source);
    CHECK(engine.learner() != source);  // the learner did move
}

TEST_CASE("expert moves at most (1 - alpha) of its gap to the learner") {
    Rng rng(140);
    for (int it = 0; it < 50; ++it) {
        const ModelParams e = random_params(3, 3, 200 + static_cast<std::uint64_t>(it));
        const ModelParams l = random_params(3, 3, 300 + static_cast<std::uint64_t>(it));
        const double alpha = rng.next_double();
        const ModelParams blended = ema_blend(e, l, alpha);
        const double moved = max_abs_diff(blended.flatten(), e.flatten());
        const double gap = max_abs_diff(l.flatten(), e.flatten());
        CHECK(moved <= (1.0 - alpha) * gap + 1e-12);
    }
}

TEST_CASE("memory bank obeys the FIFO law") {
    const SourceSpec spec = unit_spec();
    for (int k : {1, 3, 5}) {
        const ModelParams source = random_params(4, 5, 150);
        AdaptConfig cfg;
        cfg.method = Method::pl;
        cfg.lr = 0.01;
        cfg.memory_size = k;
        AdaptEngine engine(source, cfg);
        const auto batches = stripped_stream(spec, plain_schedule(30), 2, 151);
        for (int t = 1; t <= 30; ++t) {
            engine.step(batches[static_cast<size_t>(t - 1)]);
            const MemoryBank& bank = engine.bank();
            const int expect_size = std::min(t, k);
            REQUIRE(bank.size() == expect_size);
            for (int i = 0; i < bank.size(); ++i) {
                CHECK(bank.at(i).step == t - expect_size + 1 + i);
            }
        }
    }
}

TEST_CASE("predictions are made before any update") {
    const ModelParams source = random_params(4, 5, 160);
    const SourceSpec spec = unit_spec();
    const auto batches = stripped_stream(spec, plain_schedule(6), 3, 161);

    for (Method m : {Method::tent, Method::pl, Method::oil}) {
        AdaptConfig frozen;
        frozen.method = m;
        frozen.lr = 0.0;
        AdaptConfig live = frozen;
        live.lr = 0.05;
        AdaptEngine a(source, frozen), b(source, live);
        const StepRecord ra = a.step(batches[0]);
        const StepRecord rb = b.step(batches[0]);
        CHECK(ra.predictions == rb.predictions);
    }

    // mid-trajectory: restart a frozen engine from the live engine's state
    AdaptConfig live;
    live.method = Method::pl;
    live.lr = 0.05;
    live.memory_size = 2;
    AdaptEngine engine(source, live);
    for (int t = 0; t < 5; ++t) engine.step(batches[static_cast<size_t>(t)]);
    AdaptConfig frozen = live;
    frozen.lr = 0.0;
    AdaptEngine replay(engine.learner(), frozen);
    const StepRecord r1 = engine.step(batches[5]);
    const StepRecord r2 = replay.step(batches[5]);
    CHECK(r1.predictions == r2.predictions);
}

TEST_CASE("non-finite batches abort the step and leave parameters untouched") {
    const ModelParams source = random_params(4, 5, 170);
    const SourceSpec spec = unit_spec();
    const auto batches = stripped_stream(spec, plain_schedule(3), 2, 171);

    AdaptConfig cfg;
    cfg.method = Method::pl;
    cfg.lr = 0.05;
    cfg.memory_size = 2;
    AdaptEngine engine(source, cfg);
    engine.step(batches[0]);
    const Vector before = engine.learner().flatten();

    InputBatch poisoned = batches[1];
    poisoned.tokens[0].at(0, 0) = std::numeric_limits<double>::quiet_NaN();
    const StepRecord rec = engine.step(poisoned);
    CHECK(rec.aborted);
    CHECK(engine.learner().flatten() == before);

    const StepRecord next = engine.step(batches[2]);
    CHECK_FALSE(next.aborted);
    CHECK(engine.learner().flatten() != before);
}

TEST_CASE("regret is zero for a single step and for identical snapshots") {
    const ModelParams source = random_params(4, 5, 180);
    const SourceSpec spec = unit_spec();

    AdaptConfig cfg;
    cfg.method = Method::pl;
    cfg.lr = 0.02;
    cfg.snapshots = true;
    AdaptEngine one(source, cfg);
    one.step(stripped_stream(spec, plain_schedule(1), 3, 181)[0]);
    const RegretResult r1 = regret(one.snapshots(), cfg);
    CHECK(r1.regret == 0.0);
    CHECK(r1.argmin_index == 0);

    AdaptConfig frozen = cfg;
    frozen.lr = 0.0;
    AdaptEngine still(source, frozen);
    for (const InputBatch& b : stripped_stream(spec, plain_schedule(5), 3, 182)) still.step(b);
    const RegretResult r2 = regret(still.snapshots(), frozen);
    CHECK(r2.regret == 0.0);
}

TEST_CASE("regret matches an independent brute-force double loop") {
    const ModelParams source = random_params(4, 5, 190);
    const SourceSpec spec = unit_spec();
    const auto batches = stripped_stream(spec, plain_schedule(10), 3, 191);

    for (Method m : {Method::tent, Method::pl, Method::oil}) {
        AdaptConfig cfg;
        cfg.method = m;
        cfg.lr = 0.03;
        cfg.memory_size = 2;
        cfg.snapshots = true;
        AdaptEngine engine(source, cfg);
        for (const InputBatch& b : batches) engine.step(b);
        const SnapshotLog& log = engine.snapshots();
        const RegretResult got = regret(log, cfg);

        // brute force: own loops over the stored snapshots and batches
        const int T = log.size();
        auto loss_of = [&](int s, int t) {
            const ModelParams* expert =
                m == Method::oil ? &log.experts_prestep[static_cast<size_t>(t)] : nullptr;
            return online_loss_grad(cfg, log.learners[static_cast<size_t>(s)], expert,
                                    log.batches[static_cast<size_t>(t)].tokens).loss;
        };
        double realized = 0.0;
        for (int t = 0; t < T; ++t) realized += loss_of(t, t);
        double best = std::numeric_limits<double>::infinity();
        int best_idx = -1;
        for (int s = 0; s < T; ++s) {
            double total = 0.0;
            for (int t = 0; t < T; ++t) total += loss_of(s, t);
            if (total < best) {
                best = total;
                best_idx = s;
            }
        }
        CHECK(got.regret == realized - best);
        CHECK(got.argmin_index == best_idx);
    }
}

TEST_CASE("regret is non-negative across methods and learning rates") {
    const SourceSpec spec = unit_spec();
    Rng rng(80);
    const ModelParams source = init_params(spec.d, spec.h_model, rng);
    for (Method m : {Method::tent, Method::pl, Method::oil}) {
        for (double lr : {1e-3, 1e-2, 5e-2}) {
            AdaptConfig cfg;
            cfg.method = m;
            cfg.lr = lr;
            cfg.batch_size = 3;
            cfg.memory_size = 2;
            cfg.ema_decay = 0.99;
            cfg.seed = 3;
            cfg.snapshots = true;
            AdaptEngine engine(source, cfg);
            for (const InputBatch& b : stripped_stream(spec, plain_schedule(15), 3, mix_seed(3, 0x5354524dULL)))
                engine.step(b);
            const RegretResult r = regret(engine.snapshots(), cfg);
            INFO(method_name(m), " lr=", lr);
            CHECK(r.regret >= 0.0);
        }
    }
}

TEST_CASE("regret requires snapshots") {
    const ModelParams source = random_params(4, 5, 195);
    AdaptConfig cfg;
    cfg.method = Method::pl;
    AdaptEngine engine(source, cfg);
    CHECK_THROWS_AS(regret(engine.snapshots(), cfg), std::runtime_error);
}

TEST_CASE("config validation rejects bad values") {
    AdaptConfig cfg;
    cfg.lr = -1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = AdaptConfig{};
    cfg.memory_size = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = AdaptConfig{};
    cfg.ema_decay = 1.2;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = AdaptConfig{};
    cfg.tde_beta = -0.5;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    CHECK_THROWS_AS(method_from_name("sgd"), std::invalid_argument);
}
