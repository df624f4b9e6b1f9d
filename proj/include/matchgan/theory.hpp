#pragma once

#include <vector>

namespace matchgan {

// Two discrete distributions on a shared, finite support.
struct DiscreteDistributionPair {
    std::vector<double> support;
    std::vector<double> p;
    std::vector<double> q;
};

// Checks lengths, nonnegativity and that p and q sum to 1 within 1e-9.
void validate(const DiscreteDistributionPair& d);

// D*(x) = p(x) / (p(x) + q(x)) for every support point.
std::vector<double> optimal_discriminator_discrete(const DiscreteDistributionPair& d);

// V(D) = sum p log D + sum q log(1 - D), with 0 log 0 = 0.
double value_function_discrete(const DiscreteDistributionPair& d, const std::vector<double>& D);

// Jensen-Shannon divergence in nats.
double jensen_shannon_divergence(const std::vector<double>& p, const std::vector<double>& q);

// Earth mover's distance on the real line: integral of |F_p - F_q|.
// The support must be sorted ascending.
double discrete_wasserstein_1d(const DiscreteDistributionPair& d);

}  // namespace matchgan
