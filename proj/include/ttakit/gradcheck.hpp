// Finite-difference validation of every analytic gradient: supervised,
// tent, pl, and oil with and without the causal correction. For losses with
// stop-gradient ingredients (pseudo-labels, filter mask, causal offsets) the
// difference quotient is taken on the frozen-context objective, i.e. the
// exact function whose gradient the implementation computes.
#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ttakit/core.hpp"
#include "ttakit/model.hpp"
#include "ttakit/tta.hpp"

namespace ttakit {

struct GradCheckResult {
    std::string name;
    double max_rel_err = 0.0;
    int draws = 0;
    double tolerance = 0.0;
    bool pass = false;
};

inline GradCheckResult check_gradient(const std::string& name,
                                      const std::function<double(const Vector&)>& f,
                                      const Vector& theta0, const Vector& analytic,
                                      double h, double tol) {
    const Vector fd = finite_diff_grad(f, theta0, h);
    GradCheckResult r;
    r.name = name;
    r.max_rel_err = max_rel_err(analytic, fd);
    r.draws = 1;
    r.tolerance = tol;
    r.pass = r.max_rel_err <= tol;
    return r;
}

struct GradCheckSettings {
    int d = 8;
    int h = 8;
    int L = 6;
    int batch = 4;
    int draws = 20;
    double tol = 1e-4;
    double fd_step = 1e-5;
    std::uint64_t seed = 2024;
};

inline std::vector<GradCheckResult> run_gradchecks(const GradCheckSettings& s) {
    struct Probe {
        ModelParams params;
        ModelParams expert;
        std::vector<Matrix> tokens;
        std::vector<Instance> labeled;
    };
    auto draw = [&](Rng& rng) {
        Probe p;
        p.params = init_params(s.d, s.h, rng);
        Vector theta = p.params.flatten();
        for (double& x : theta) x += 0.4 * rng.next_normal();
        p.params = ModelParams::unflatten(s.d, s.h, theta);
        p.expert = init_params(s.d, s.h, rng);
        for (int b = 0; b < s.batch; ++b) {
            Matrix tok(s.L, s.d);
            for (double& x : tok.data) x = rng.next_normal();
            const int start = rng.next_int(s.L);
            const int end = start + rng.next_int(s.L - start);
            p.labeled.push_back(Instance{tok, Span{start, end}});
            p.tokens.push_back(std::move(tok));
        }
        return p;
    };

    const double gamma = 1.1 * std::log(static_cast<double>(s.L));
    std::vector<GradCheckResult> results;
    const char* names[5] = {"supervised", "tent", "pl", "oil", "oil_causal"};
    for (const char* name : names) {
        results.push_back(GradCheckResult{name, 0.0, s.draws, s.tol, true});
    }

    Rng rng(mix_seed(s.seed, 0x676332ULL));
    for (int it = 0; it < s.draws; ++it) {
        const Probe probe = draw(rng);
        const Vector theta0 = probe.params.flatten();
        auto with_params = [&](const Vector& theta, auto&& fn) {
            return fn(ModelParams::unflatten(s.d, s.h, theta));
        };

        struct Case {
            std::function<double(const Vector&)> f;
            Vector analytic;
        };
        std::vector<Case> cases;

        cases.push_back({[&](const Vector& th) {
                             return with_params(th, [&](const ModelParams& m) {
                                 return supervised_loss_grad(m, probe.labeled).first;
                             });
                         },
                         supervised_loss_grad(probe.params, probe.labeled).second});

        cases.push_back({[&](const Vector& th) {
                             return with_params(th, [&](const ModelParams& m) {
                                 return tent_loss_grad(m, probe.tokens).loss;
                             });
                         },
                         tent_loss_grad(probe.params, probe.tokens).grad});

        {
            // pl with its own argmax labels frozen at theta0
            OilContext ctx;
            for (const Matrix& x : probe.tokens) {
                const SpanDist p = forward(probe.params, x);
                ctx.terms.push_back({detail::HeadTerm{argmax(p.p_start), true, 0.0},
                                     detail::HeadTerm{argmax(p.p_end), true, 0.0}});
                ctx.included += 2;
            }
            cases.push_back({[&, ctx](const Vector& th) {
                                 return with_params(th, [&](const ModelParams& m) {
                                     return oil_loss_frozen(m, probe.tokens, ctx);
                                 });
                             },
                             pl_loss_grad(probe.params, probe.tokens).grad});
        }

        for (const bool causal : {false, true}) {
            const OilContext ctx =
                oil_context(probe.params, probe.expert, probe.tokens, gamma, causal);
            cases.push_back(
                {[&, ctx](const Vector& th) {
                     return with_params(th, [&](const ModelParams& m) {
                         return oil_loss_frozen(m, probe.tokens, ctx);
                     });
                 },
                 oil_loss_grad(probe.params, probe.expert, probe.tokens, gamma, causal).grad});
        }

        for (size_t i = 0; i < cases.size(); ++i) {
            const Vector fd = finite_diff_grad(cases[i].f, theta0, s.fd_step);
            results[i].max_rel_err = std::max(results[i].max_rel_err,
                                              max_rel_err(cases[i].analytic, fd));
        }
    }
    for (GradCheckResult& r : results) r.pass = r.max_rel_err <= r.tolerance;
    return results;
}

}  // namespace ttakit
