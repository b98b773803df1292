#include <doctest.h>

#include <cmath>

#include "ttakit/core.hpp"

using namespace ttakit;

TEST_CASE("softmax basics") {
    const Vector even = softmax({0.0, 0.0});
    CHECK(even[0] == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(even[1] == doctest::Approx(0.5).epsilon(1e-14));

    // huge identical logits: stabilization must prevent overflow
    const Vector big = softmax({1000.0, 1000.0, 1000.0});
    for (double p : big) CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-14));

    // [0, ln 3]: e^0 = 1, e^{ln 3} = 3, so probabilities are 1/4 and 3/4
    const Vector q = softmax({0.0, std::log(3.0)});
    CHECK(q[0] == doctest::Approx(0.25).epsilon(1e-13));
    CHECK(q[1] == doctest::Approx(0.75).epsilon(1e-13));

    CHECK_THROWS_AS(softmax({}), std::invalid_argument);
}

TEST_CASE("softmax sums to one and shifts cancel") {
    Rng rng(7);
    for (int it = 0; it < 200; ++it) {
        const int n = 1 + rng.next_int(9);
        Vector z(static_cast<size_t>(n));
        for (double& x : z) x = 10.0 * rng.next_normal();
        const Vector p = softmax(z);
        double sum = 0.0;
        for (double x : p) {
            CHECK(x >= 0.0);
            CHECK(x <= 1.0);
            sum += x;
        }
        CHECK(std::abs(sum - 1.0) <= 1e-12);

        Vector shifted = z;
        const double c = 100.0 * rng.next_normal();
        for (double& x : shifted) x += c;
        CHECK(max_abs_diff(p, softmax(shifted)) <= 1e-12);
    }
}

TEST_CASE("entropy values") {
    CHECK(entropy({1.0, 0.0}) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(entropy({0.5, 0.5}) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    // -(0.25 ln 0.25 + 0.75 ln 0.75), evaluated independently
    CHECK(entropy({0.25, 0.75}) == doctest::Approx(0.5623351446188083).epsilon(1e-12));
    CHECK_THROWS_AS(entropy({-0.1, 1.1}), std::domain_error);
    CHECK_THROWS_AS(entropy({0.2, 0.2}), std::domain_error);
}

TEST_CASE("entropy is maximized by the uniform distribution") {
    Rng rng(11);
    for (int it = 0; it < 100; ++it) {
        const int n = 2 + rng.next_int(7);
        Vector z(static_cast<size_t>(n));
        for (double& x : z) x = 5.0 * rng.next_normal();
        const double h = entropy(softmax(z));
        CHECK(h <= std::log(static_cast<double>(n)) + 1e-12);
        CHECK(h >= 0.0);
    }
}

TEST_CASE("cross entropy with probability floor") {
    CHECK(cross_entropy({1.0, 0.0}, 0) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(cross_entropy({0.5, 0.5}, 1) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    // degenerate probability: the 1e-12 floor engages
    CHECK(cross_entropy({1e-20, 1.0 - 1e-20}, 0) ==
          doctest::Approx(-std::log(1e-12)).epsilon(1e-12));
    CHECK_THROWS_AS(cross_entropy({0.5, 0.5}, 2), std::out_of_range);
    CHECK_THROWS_AS(cross_entropy({0.5, 0.5}, -1), std::out_of_range);
}

TEST_CASE("argmax ties resolve to the lowest index") {
    CHECK(argmax({0.1, 0.8, 0.1}) == 1);
    CHECK(argmax({0.25, 0.25, 0.25, 0.25}) == 0);
    CHECK(argmax({0.3, 0.4, 0.4}) == 1);
}

TEST_CASE("finite differences on simple functions") {
    auto quad = [](const Vector& x) {
        double s = 0.0;
        for (double v : x) s += v * v;
        return s;
    };
    const Vector g = finite_diff_grad(quad, {1.0, 2.0}, 1e-5);
    CHECK(std::abs(g[0] - 2.0) <= 1e-6);
    CHECK(std::abs(g[1] - 4.0) <= 1e-6);

    auto constant = [](const Vector&) { return 3.5; };
    const Vector zero = finite_diff_grad(constant, {0.3, -0.7, 2.0}, 1e-5);
    for (double v : zero) CHECK(v == 0.0);

    auto bad = [](const Vector&) { return std::numeric_limits<double>::quiet_NaN(); };
    CHECK_THROWS_AS(finite_diff_grad(bad, {1.0}, 1e-5), std::runtime_error);
}

TEST_CASE("rng reproducibility") {
    Rng a(42), b(42), c(43);
    bool all_equal = true;
    bool any_diff = false;
    for (int i = 0; i < 100; ++i) {
        const double va = a.next_double();
        all_equal = all_equal && va == b.next_double();
        any_diff = any_diff || va != c.next_double();
    }
    CHECK(all_equal);
    CHECK(any_diff);

    Rng n1(5), n2(5);
    for (int i = 0; i < 64; ++i) CHECK(n1.next_normal() == n2.next_normal());
    for (int i = 0; i < 64; ++i) {
        const int v = n1.next_int(7);
        CHECK(v >= 0);
        CHECK(v < 7);
    }
    CHECK(mix_seed(1, 2) != mix_seed(1, 3));
    CHECK(mix_seed(1, 2) != mix_seed(2, 2));
}
