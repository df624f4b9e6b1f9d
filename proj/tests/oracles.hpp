#pragma once

// Reference computations the tests compare the library against. None of
// these call into the code under test.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include <torch/torch.h>

namespace oracle {

// Monte-Carlo KL(N(0, 1) || N(mu, sigma^2)) summed over independent
// coordinates: E_x[log phi(x) - log N(x; mu, sigma)], x ~ N(0, 1).
// Antithetic pairs (x, -x) keep the estimator unbiased with less noise.
inline double monte_carlo_kl_standard_to(const std::vector<double>& mu, const std::vector<double>& sigma,
                                         std::size_t draws, std::mt19937_64& gen) {
    std::normal_distribution<double> n01;
    double total = 0.0;
    for (std::size_t d = 0; d < mu.size(); ++d) {
        double acc = 0.0;
        const double s2 = sigma[d] * sigma[d];
        for (std::size_t i = 0; i < draws / 2; ++i) {
            const double x = n01(gen);
            for (double y : {x, -x}) {
                const double log_p = -0.5 * y * y;
                const double log_q = -0.5 * (y - mu[d]) * (y - mu[d]) / s2 - std::log(sigma[d]);
                acc += log_p - log_q;
            }
        }
        total += acc / static_cast<double>(2 * (draws / 2));
    }
    return total;
}

// Earth mover's distance between integer mass vectors (units of 1/total)
// on a 1-D support, by enumerating every transport plan.
inline double enumerate_transport(const std::vector<double>& support, std::vector<int> supply, std::vector<int> demand) {
    const int total = [&] {
        int s = 0;
        for (int v : supply) s += v;
        return s;
    }();
    double best = std::numeric_limits<double>::infinity();
    std::function<void(std::size_t, std::size_t, double)> rec = [&](std::size_t i, std::size_t j, double cost) {
        while (i < supply.size() && supply[i] == 0) {
            ++i;
            j = 0;
        }
        if (i == supply.size()) {
            best = std::min(best, cost);
            return;
        }
        if (cost >= best) return;
        for (std::size_t jj = j; jj < demand.size(); ++jj) {
            if (demand[jj] == 0) continue;
            for (int m = std::min(supply[i], demand[jj]); m >= 1; --m) {
                supply[i] -= m;
                demand[jj] -= m;
                rec(i, jj + 1, cost + m * std::abs(support[i] - support[jj]));
                supply[i] += m;
                demand[jj] += m;
            }
        }
    };
    rec(0, 0, 0.0);
    return best / total;
}

// Central finite-difference gradient of a scalar function of one float64 tensor.
inline torch::Tensor finite_difference(const std::function<double(const torch::Tensor&)>& f, const torch::Tensor& x,
                                       double h = 1e-6) {
    auto base = x.detach().clone().to(torch::kFloat64).contiguous();
    auto grad = torch::zeros_like(base);
    auto* b = base.data_ptr<double>();
    auto* g = grad.data_ptr<double>();
    for (std::int64_t i = 0; i < base.numel(); ++i) {
        const double keep = b[i];
        b[i] = keep + h;
        const double up = f(base);
        b[i] = keep - h;
        const double down = f(base);
        b[i] = keep;
        g[i] = (up - down) / (2 * h);
    }
    return grad;
}

// max |a - b| / max(|a|, |b|, floor)
inline double max_relative_error(const torch::Tensor& a, const torch::Tensor& b, double floor = 1e-8) {
    const auto x = a.to(torch::kFloat64).flatten();
    const auto y = b.to(torch::kFloat64).flatten();
    const auto denom = torch::maximum(torch::maximum(x.abs(), y.abs()), torch::full_like(x, floor));
    return ((x - y).abs() / denom).max().item<double>();
}

// Maximises p log d + q log(1 - d) over a grid refined three times.
inline double maximise_pointwise_value(double p, double q) {
    double lo = 0.0, hi = 1.0, best = 0.5;
    for (int round = 0; round < 4; ++round) {
        double best_v = -std::numeric_limits<double>::infinity();
        const int n = 2000;
        for (int k = 1; k < n; ++k) {
            const double d = lo + (hi - lo) * k / n;
            if (d <= 0 || d >= 1) continue;
            const double v = (p > 0 ? p * std::log(d) : 0.0) + (q > 0 ? q * std::log(1 - d) : 0.0);
            if (v > best_v) {
                best_v = v;
                best = d;
            }
        }
        const double w = (hi - lo) / n * 2;
        lo = std::max(0.0, best - w);
        hi = std::min(1.0, best + w);
    }
    return best;
}

// Random probability vector of length k with some exact zeros.
inline std::vector<double> random_distribution(std::size_t k, std::mt19937_64& gen, bool allow_zeros = true) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> v(k);
    double s = 0.0;
    for (auto& x : v) {
        x = (allow_zeros && u(gen) < 0.2) ? 0.0 : u(gen) + 1e-3;
        s += x;
    }
    if (s == 0.0) {
        v[0] = 1.0;
        s = 1.0;
    }
    for (auto& x : v) x /= s;
    return v;
}

}  // namespace oracle
