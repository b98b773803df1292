// Dense numeric primitives shared by the model and the adaptation engine:
// vectors/matrices, a counter-based deterministic RNG, softmax/entropy/
// cross-entropy with analytic-gradient-friendly conventions, and a central
// finite-difference gradient checker used as the validation oracle.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace ttakit {

using Vector = std::vector<double>;

constexpr double kProbFloor = 1e-12;  // floor inside log() of cross-entropy terms

// Non-finite values where finite numbers are required. Distinct from the
// contract errors so online drivers can abort a step and keep streaming.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

inline bool all_finite(const Vector& v) {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

// Row-major dense matrix of doubles.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c, double fill = 0.0)
        : rows(r), cols(c), data(static_cast<size_t>(r) * static_cast<size_t>(c), fill) {
        if (r <= 0 || c <= 0) throw std::invalid_argument("Matrix: dimensions must be positive");
    }

    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

    const double* row(int r) const { return data.data() + static_cast<size_t>(r) * cols; }
    double* row(int r) { return data.data() + static_cast<size_t>(r) * cols; }

    bool operator==(const Matrix& o) const = default;
};

// ---------------------------------------------------------------------------
// Deterministic RNG
// ---------------------------------------------------------------------------

// splitmix64 finalizer; the basis of the counter-based generator below.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Combine a seed with a stream tag / counter into a fresh seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
    return mix64(seed ^ (0x9e3779b97f4a7c15ULL + mix64(tag)));
}

// Counter-based generator: the sequence is a pure function of the seed, so
// identical seed + call order reproduces identical doubles on any platform
// with IEEE-754 arithmetic. Normals come from Box-Muller on explicitly
// generated uniforms (std::normal_distribution is not portable across
// standard library implementations).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0,1).
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n).
    int next_int(int n) {
        if (n <= 0) throw std::invalid_argument("Rng::next_int: n must be positive");
        return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n));
    }

    // Standard normal via Box-Muller; the spare value is cached.
    double next_normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = next_double();
        } while (u1 <= 0.0);
        const double u2 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.141592653589793238462643383279502884 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    Vector next_normal_vec(int n) {
        Vector v(static_cast<size_t>(n));
        for (double& x : v) x = next_normal();
        return v;
    }

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// Probability primitives
// ---------------------------------------------------------------------------

// Numerically stabilized softmax. Output sums to 1 within 1e-12 and is
// invariant (to the same tolerance) under adding a constant to all logits.
inline Vector softmax(const Vector& logits) {
    if (logits.empty()) throw std::invalid_argument("softmax: empty input");
    const double m = *std::max_element(logits.begin(), logits.end());
    if (!std::isfinite(m)) throw NumericError("softmax: non-finite logits");
    Vector p(logits.size());
    double sum = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - m);
        sum += p[i];
    }
    for (double& x : p) x /= sum;
    return p;
}

// Shannon entropy in nats, with 0*log(0) taken as 0.
inline double entropy(const Vector& p) {
    if (p.empty()) throw std::invalid_argument("entropy: empty input");
    double sum = 0.0;
    for (double x : p) {
        if (x < 0.0) throw std::domain_error("entropy: negative probability");
        sum += x;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw std::domain_error("entropy: probabilities do not sum to 1");
    double h = 0.0;
    for (double x : p) {
        if (x > 0.0) h -= x * std::log(x);
    }
    return h;
}

// -log(max(x, floor)); keeps degenerate pseudo-label terms finite.
inline double floored_neg_log(double x) { return -std::log(std::max(x, kProbFloor)); }

// Cross-entropy against a hard label: -log(max(p[label], 1e-12)).
inline double cross_entropy(const Vector& p, int label) {
    if (label < 0 || label >= static_cast<int>(p.size()))
        throw std::out_of_range("cross_entropy: label out of range");
    return floored_neg_log(p[static_cast<size_t>(label)]);
}

// Index of the largest entry; ties resolve to the lowest index.
inline int argmax(const Vector& v) {
    if (v.empty()) throw std::invalid_argument("argmax: empty input");
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

// Central finite-difference gradient: (f(x+h e_i) - f(x-h e_i)) / 2h.
// The independent oracle every analytic gradient in this project is
// validated against.
inline Vector finite_diff_grad(const std::function<double(const Vector&)>& f,
                               const Vector& theta, double h) {
    if (h <= 0.0) throw std::invalid_argument("finite_diff_grad: h must be positive");
    Vector g(theta.size());
    Vector probe = theta;
    for (size_t i = 0; i < theta.size(); ++i) {
        probe[i] = theta[i] + h;
        const double fp = f(probe);
        probe[i] = theta[i] - h;
        const double fm = f(probe);
        probe[i] = theta[i];
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NumericError("finite_diff_grad: non-finite function evaluation");
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

// Max over coordinates of |a-b| / max(|a|, |b|, floor).
inline double max_rel_err(const Vector& a, const Vector& b, double floor = 1e-3) {
    if (a.size() != b.size()) throw std::invalid_argument("max_rel_err: size mismatch");
    double worst = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
        worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
    }
    return worst;
}

inline double max_abs_diff(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) throw std::invalid_argument("max_abs_diff: size mismatch");
    double worst = 0.0;
    for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

}  // namespace ttakit
