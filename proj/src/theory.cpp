#include "matchgan/theory.hpp"

#include <cmath>
#include <numeric>

#include "matchgan/errors.hpp"

namespace matchgan {

void validate(const DiscreteDistributionPair& d) {
    const auto k = d.p.size();
    if (k == 0) throw InvalidArgument("empty distribution");
    if (d.q.size() != k || d.support.size() != k) throw InvalidArgument("support, p and q differ in length");
    for (std::size_t i = 0; i < k; ++i)
        if (!(d.p[i] >= 0) || !(d.q[i] >= 0)) throw InvalidArgument("probabilities must be nonnegative");
    const double sp = std::accumulate(d.p.begin(), d.p.end(), 0.0);
    const double sq = std::accumulate(d.q.begin(), d.q.end(), 0.0);
    if (std::abs(sp - 1.0) > 1e-9 || std::abs(sq - 1.0) > 1e-9) throw InvalidArgument("p and q must each sum to 1");
}

std::vector<double> optimal_discriminator_discrete(const DiscreteDistributionPair& d) {
    validate(d);
    std::vector<double> out(d.p.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double total = d.p[i] + d.q[i];
        if (total <= 0) throw InvalidArgument("support point " + std::to_string(i) + " has no mass under p or q");
        out[i] = d.p[i] / total;
    }
    return out;
}

double value_function_discrete(const DiscreteDistributionPair& d, const std::vector<double>& D) {
    validate(d);
    if (D.size() != d.p.size()) throw InvalidArgument("discriminator vector has the wrong length");
    double v = 0.0;
    for (std::size_t i = 0; i < D.size(); ++i) {
        if (!(D[i] >= 0 && D[i] <= 1)) throw InvalidArgument("discriminator output outside [0, 1]");
        if (d.p[i] > 0) {
            if (D[i] <= 0) throw InvalidArgument("D = 0 where p has mass");
            v += d.p[i] * std::log(D[i]);
        }
        if (d.q[i] > 0) {
            if (D[i] >= 1) throw InvalidArgument("D = 1 where q has mass");
            v += d.q[i] * std::log1p(-D[i]);
        }
    }
    return v;
}

double jensen_shannon_divergence(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size()) throw InvalidArgument("p and q differ in length");
    double js = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double m = 0.5 * (p[i] + q[i]);
        if (p[i] > 0) js += 0.5 * p[i] * std::log(p[i] / m);
        if (q[i] > 0) js += 0.5 * q[i] * std::log(q[i] / m);
    }
    return js;
}

double discrete_wasserstein_1d(const DiscreteDistributionPair& d) {
    validate(d);
    for (std::size_t i = 1; i < d.support.size(); ++i)
        if (d.support[i] < d.support[i - 1]) throw InvalidArgument("support must be sorted ascending");
    double cdf_gap = 0.0;
    double distance = 0.0;
    for (std::size_t i = 0; i + 1 < d.support.size(); ++i) {
        cdf_gap += d.p[i] - d.q[i];
        distance += std::abs(cdf_gap) * (d.support[i + 1] - d.support[i]);
    }
    return distance;
}

}  // namespace matchgan
