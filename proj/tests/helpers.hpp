#pragma once

// Shared oracles for the test suites: Kolmogorov-Smirnov tests against
// analytic CDFs, batch-means Monte Carlo standard errors, and central
// finite differences. Test-only code, independent of the library's
// implementation paths.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace testutil {

// asymptotic Kolmogorov distribution tail Q(lambda)
inline double ks_q(double lambda) {
    double sum = 0.0;
    for (int k = 1; k <= 100; ++k) {
        const double term = std::exp(-2.0 * k * k * lambda * lambda);
        sum += (k % 2 == 1) ? term : -term;
    }
    return std::max(0.0, std::min(1.0, 2.0 * sum));
}

// one-sample KS p-value against a continuous CDF
inline double ks_test(std::vector<double> sample, const std::function<double(double)>& cdf) {
    std::sort(sample.begin(), sample.end());
    const double n = static_cast<double>(sample.size());
    double d = 0.0;
    for (size_t i = 0; i < sample.size(); ++i) {
        const double f = cdf(sample[i]);
        d = std::max(d, std::fabs(f - static_cast<double>(i) / n));
        d = std::max(d, std::fabs(static_cast<double>(i + 1) / n - f));
    }
    const double sq = std::sqrt(n);
    return ks_q((sq + 0.12 + 0.11 / sq) * d);
}

inline double mean_of(const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

inline double var_of(const std::vector<double>& xs) {
    const double m = mean_of(xs);
    double s = 0.0;
    for (double x : xs) s += (x - m) * (x - m);
    return s / static_cast<double>(xs.size() - 1);
}

// batch-means standard error of the mean of a correlated chain
inline double batch_means_se(const std::vector<double>& chain, int n_batches = 50) {
    const int n = static_cast<int>(chain.size());
    const int batch = n / n_batches;
    std::vector<double> means;
    for (int b = 0; b < n_batches; ++b) {
        double s = 0.0;
        for (int i = b * batch; i < (b + 1) * batch; ++i) s += chain[i];
        means.push_back(s / batch);
    }
    return std::sqrt(var_of(means) / static_cast<double>(n_batches));
}

// central finite difference of a scalar function
inline double central_diff(const std::function<double(double)>& f, double x, double h = 1e-5) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

}  // namespace testutil
