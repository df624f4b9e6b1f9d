#include <cmath>
#include <random>

#include "doctest_torch.hpp"

#include "matchgan/errors.hpp"
#include "matchgan/theory.hpp"
#include "oracles.hpp"

using namespace matchgan;

namespace {

const double kLog4 = std::log(4.0);

// Random pair on a sorted support of size k; points where both vanish are
// given mass under q so D* stays defined.
DiscreteDistributionPair random_pair(std::size_t k, std::mt19937_64& gen) {
    DiscreteDistributionPair d;
    auto p = oracle::random_distribution(k, gen);
    auto q = oracle::random_distribution(k, gen);
    bool patched = false;
    for (std::size_t i = 0; i < k; ++i)
        if (p[i] == 0 && q[i] == 0) {
            q[i] = 0.1;
            patched = true;
        }
    if (patched) {
        double s = 0;
        for (double v : q) s += v;
        for (auto& v : q) v /= s;
    }
    d.p = p;
    d.q = q;
    std::uniform_real_distribution<double> step(0.1, 1.0);
    double x = 0;
    for (std::size_t i = 0; i < k; ++i) {
        d.support.push_back(x);
        x += step(gen);
    }
    return d;
}

// Integer masses in units of 1/n, for the enumeration oracle.
std::vector<int> to_units(const std::vector<double>& v, int n) {
    std::vector<int> out;
    for (double x : v) out.push_back(static_cast<int>(std::lround(x * n)));
    return out;
}

}  // namespace

TEST_SUITE("theorem") {
    TEST_CASE("optimal discriminator beats every vector on a dense grid for fifty random pairs") {
        std::mt19937_64 gen(1234);
        std::uniform_int_distribution<std::size_t> size(1, 8);
        for (int trial = 0; trial < 50; ++trial) {
            const auto d = random_pair(size(gen), gen);
            const auto star = optimal_discriminator_discrete(d);
            const double v_star = value_function_discrete(d, star);
            CAPTURE(trial);

            // V separates over support points, so the best grid vector is
            // the coordinate-wise grid argmax.
            const int n = 1000;
            std::vector<double> grid_best(star.size());
            for (std::size_t i = 0; i < star.size(); ++i) {
                double best_v = -std::numeric_limits<double>::infinity();
                for (int k = 0; k <= n; ++k) {
                    const double x = static_cast<double>(k) / n;
                    if ((x == 0 && d.p[i] > 0) || (x == 1 && d.q[i] > 0)) continue;
                    const double v = (d.p[i] > 0 ? d.p[i] * std::log(x) : 0.0) + (d.q[i] > 0 ? d.q[i] * std::log1p(-x) : 0.0);
                    if (v > best_v) {
                        best_v = v;
                        grid_best[i] = x;
                    }
                }
                CHECK(std::abs(star[i] - grid_best[i]) <= 1e-3);
                CHECK(std::abs(star[i] - oracle::maximise_pointwise_value(d.p[i], d.q[i])) <= 1e-3);
            }
            CHECK(v_star >= value_function_discrete(d, grid_best) - 1e-12);

            std::uniform_real_distribution<double> u(1e-3, 1 - 1e-3);
            for (int probe = 0; probe < 200; ++probe) {
                std::vector<double> other(star.size());
                for (auto& x : other) x = u(gen);
                CHECK(v_star >= value_function_discrete(d, other));
            }
        }
    }

    TEST_CASE("value at the optimum is minus log four plus twice the JS divergence") {
        std::mt19937_64 gen(4321);
        std::uniform_int_distribution<std::size_t> size(1, 8);
        for (int trial = 0; trial < 50; ++trial) {
            const auto d = random_pair(size(gen), gen);
            const double v = value_function_discrete(d, optimal_discriminator_discrete(d));
            CAPTURE(trial);
            CHECK(std::abs(v - (-kLog4 + 2 * jensen_shannon_divergence(d.p, d.q))) <= 1e-6);
        }
    }
}

TEST_CASE("identical distributions make the optimal discriminator one half") {
    const DiscreteDistributionPair d{{0, 1, 2}, {0.2, 0.5, 0.3}, {0.2, 0.5, 0.3}};
    for (double x : optimal_discriminator_discrete(d)) CHECK(x == 0.5);
}

TEST_CASE("disjoint supports give a hard discriminator") {
    const DiscreteDistributionPair d{{0, 1}, {1, 0}, {0, 1}};
    CHECK(optimal_discriminator_discrete(d) == std::vector<double>{1, 0});
}

TEST_CASE("optimal discriminator for a three to one split matches numerical maximisation") {
    const DiscreteDistributionPair d{{0, 1}, {0.75, 0.25}, {0.25, 0.75}};
    const auto star = optimal_discriminator_discrete(d);
    CHECK(star[0] == doctest::Approx(oracle::maximise_pointwise_value(0.75, 0.25)).epsilon(1e-6));
    CHECK(star[1] == doctest::Approx(oracle::maximise_pointwise_value(0.25, 0.75)).epsilon(1e-6));
    CHECK(star[0] == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(star[1] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("discriminator payoff is minus log four when it cannot tell") {
    const DiscreteDistributionPair d{{0, 1, 2, 3}, {0.1, 0.2, 0.3, 0.4}, {0.1, 0.2, 0.3, 0.4}};
    CHECK(value_function_discrete(d, {0.5, 0.5, 0.5, 0.5}) == doctest::Approx(-1.3862943611198906).epsilon(1e-12));
}

TEST_CASE("perfect separation drives the value to zero") {
    const DiscreteDistributionPair d{{0, 1}, {1, 0}, {0, 1}};
    double last = -1e9;
    for (double eps : {1e-2, 1e-4, 1e-8}) {
        const double v = value_function_discrete(d, {1 - eps, eps});
        CHECK(v > last);
        CHECK(v < 0);
        last = v;
    }
    CHECK(std::abs(last) < 1e-7);
}

TEST_CASE("discriminator with no mass anywhere at a point is rejected") {
    const DiscreteDistributionPair d{{0, 1, 2}, {0.5, 0.5, 0}, {0.5, 0.5, 0}};
    CHECK_THROWS_AS(optimal_discriminator_discrete(d), InvalidArgument);
}

TEST_CASE("value function rejects saturated outputs where mass sits") {
    const DiscreteDistributionPair d{{0, 1}, {0.5, 0.5}, {0.5, 0.5}};
    CHECK_THROWS_AS(value_function_discrete(d, {0.0, 0.5}), InvalidArgument);
    CHECK_THROWS_AS(value_function_discrete(d, {0.5, 1.0}), InvalidArgument);
    CHECK_THROWS_AS(value_function_discrete(d, {0.5}), InvalidArgument);
    CHECK_THROWS_AS(value_function_discrete(d, {0.5, 1.5}), InvalidArgument);
}

TEST_CASE("malformed distribution pairs are rejected") {
    CHECK_THROWS_AS(validate(DiscreteDistributionPair{{}, {}, {}}), InvalidArgument);
    CHECK_THROWS_AS(validate(DiscreteDistributionPair{{0, 1}, {1}, {0, 1}}), InvalidArgument);
    CHECK_THROWS_AS(validate(DiscreteDistributionPair{{0, 1}, {1.5, -0.5}, {0, 1}}), InvalidArgument);
    CHECK_THROWS_AS(validate(DiscreteDistributionPair{{0, 1}, {0.6, 0.6}, {0, 1}}), InvalidArgument);
}

TEST_CASE("JS divergence is symmetric, zero on equal inputs and at most log two") {
    std::mt19937_64 gen(8);
    for (int trial = 0; trial < 30; ++trial) {
        const auto p = oracle::random_distribution(6, gen);
        const auto q = oracle::random_distribution(6, gen);
        const double js = jensen_shannon_divergence(p, q);
        CHECK(js == doctest::Approx(jensen_shannon_divergence(q, p)).epsilon(1e-12));
        CHECK(js >= 0);
        CHECK(js <= std::log(2.0) + 1e-12);
        CHECK(jensen_shannon_divergence(p, p) == 0.0);
    }
    CHECK(jensen_shannon_divergence({1, 0}, {0, 1}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_SUITE("wasserstein-oracles") {
    TEST_CASE("point masses three apart are three apart") {
        const DiscreteDistributionPair d{{0, 3}, {1, 0}, {0, 1}};
        CHECK(oracle::enumerate_transport(d.support, {1, 0}, {0, 1}) == 3.0);
        CHECK(discrete_wasserstein_1d(d) == doctest::Approx(3.0).epsilon(1e-12));
    }

    TEST_CASE("two-point uniforms shifted by one are one apart") {
        const DiscreteDistributionPair d{{0, 1, 2}, {0.5, 0.5, 0}, {0, 0.5, 0.5}};
        CHECK(oracle::enumerate_transport(d.support, {1, 1, 0}, {0, 1, 1}) == 1.0);
        CHECK(discrete_wasserstein_1d(d) == doctest::Approx(1.0).epsilon(1e-12));
    }

    TEST_CASE("CDF formula agrees with exhaustive transport plans on random rational pairs") {
        std::mt19937_64 gen(99);
        std::uniform_int_distribution<std::size_t> size(2, 5);
        const int units = 6;
        for (int trial = 0; trial < 40; ++trial) {
            const auto k = size(gen);
            std::vector<int> a(k, 0), b(k, 0);
            std::uniform_int_distribution<std::size_t> pick(0, k - 1);
            for (int u = 0; u < units; ++u) {
                ++a[pick(gen)];
                ++b[pick(gen)];
            }
            DiscreteDistributionPair d;
            std::uniform_real_distribution<double> step(0.1, 2.0);
            double x = -1;
            for (std::size_t i = 0; i < k; ++i) {
                d.support.push_back(x);
                x += step(gen);
                d.p.push_back(static_cast<double>(a[i]) / units);
                d.q.push_back(static_cast<double>(b[i]) / units);
            }
            CAPTURE(trial);
            CHECK(to_units(d.p, units) == a);
            CHECK(discrete_wasserstein_1d(d) == doctest::Approx(oracle::enumerate_transport(d.support, a, b)).epsilon(1e-12));
        }
    }
}

TEST_CASE("identical distributions are zero apart") {
    const DiscreteDistributionPair d{{0, 1, 5}, {0.2, 0.3, 0.5}, {0.2, 0.3, 0.5}};
    CHECK(discrete_wasserstein_1d(d) == 0.0);
}

TEST_CASE("distance is symmetric and translation invariant") {
    std::mt19937_64 gen(3);
    for (int trial = 0; trial < 20; ++trial) {
        auto d = random_pair(6, gen);
        const double w = discrete_wasserstein_1d(d);
        CHECK(w >= 0);
        CHECK(discrete_wasserstein_1d({d.support, d.q, d.p}) == doctest::Approx(w).epsilon(1e-12));
        for (auto& x : d.support) x += 7.5;
        CHECK(discrete_wasserstein_1d(d) == doctest::Approx(w).epsilon(1e-9));
    }
}

TEST_CASE("unsorted support is rejected") {
    CHECK_THROWS_AS(discrete_wasserstein_1d({{1, 0}, {1, 0}, {0, 1}}), InvalidArgument);
}
