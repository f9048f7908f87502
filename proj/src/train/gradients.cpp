#include <cmath>

#include "flexshift/trainer.hpp"

namespace flexshift {
namespace {

double norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// Ungated greedy residuals r_0 .. r_{k-1}.
template <typename T>
std::vector<std::vector<double>> greedy_residuals(std::span<const T> w, int k, const ExponentRange& range) {
    std::vector<std::vector<double>> out;
    std::vector<double> r(w.begin(), w.end());
    for (int j = 0; j < k; ++j) {
        out.push_back(r);
        for (double& x : r) x -= round_pow2(x, range).value();
    }
    return out;
}

}  // namespace

template <typename T>
double reg_loss(std::span<const T> w, std::span<const double> lambda, int k, const ExponentRange& range) {
    if (lambda.size() < static_cast<std::size_t>(k)) throw UsageError("fewer coefficients than rounds");
    double loss = 0.0;
    const auto residuals = greedy_residuals(w, k, range);
    for (int j = 0; j < k; ++j)
        if (lambda[j] != 0.0) loss += lambda[j] * norm(residuals[j]);
    return loss;
}

template <typename T>
std::vector<double> reg_grad(std::span<const T> w, std::span<const double> lambda, int k, const ExponentRange& range) {
    if (lambda.size() < static_cast<std::size_t>(k)) throw UsageError("fewer coefficients than rounds");
    std::vector<double> grad(w.size(), 0.0);
    const auto residuals = greedy_residuals(w, k, range);
    for (int j = 0; j < k; ++j) {
        const double n = norm(residuals[j]);
        if (lambda[j] == 0.0 || n == 0.0) continue;
        for (std::size_t e = 0; e < w.size(); ++e) grad[e] += lambda[j] * residuals[j][e] / n;
    }
    return grad;
}

template <typename T>
std::vector<double> threshold_grad(std::span<const T> w, std::span<const double> t, std::span<const T> upstream, int k,
                                   const ExponentRange& range, const ThresholdGradOptions& options) {
    if (t.size() < static_cast<std::size_t>(k)) throw UsageError("fewer thresholds than rounds");
    if (upstream.size() != w.size()) throw UsageError("upstream gradient does not match the filter");
    if (!(options.tau > 0)) throw ConfigError("sigmoid temperature must be positive");
    const std::size_t n = w.size();
    const double tau = options.tau;

    int fired_total = k;
    if (options.sum == GateSum::fired_rounds) fired_total = effective_k(w, t, k, range);

    std::vector<double> r(w.begin(), w.end());
    std::vector<double> rounded(n);
    // d[j] = d r_l / d t_j for the current round l.
    std::vector<std::vector<double>> d(k, std::vector<double>(n, 0.0));
    for (int l = 0; l < k; ++l) {
        const double nl = norm(r);
        for (std::size_t e = 0; e < n; ++e) rounded[e] = round_pow2(r[e], range).value();
        const double s = sigmoid((nl - t[l]) / tau);
        const double slope = s * (1.0 - s) / tau;  // zero when the gate is saturated, including t = -inf
        if (l < fired_total) {
            for (int j = 0; j < k; ++j) {
                auto& dj = d[j];
                double dn = 0.0;
                if (nl > 0) {
                    for (std::size_t e = 0; e < n; ++e) dn += r[e] * dj[e];
                    dn /= nl;
                }
                const double ds = slope * (dn - (l == j ? 1.0 : 0.0));
                // d(s_l R(r_l))/dt_j, subtracted from the residual derivative.
                for (std::size_t e = 0; e < n; ++e) dj[e] -= ds * rounded[e] + s * dj[e];
            }
        }
        const bool hard = options.trace == GateTrace::hard;
        const double keep = hard ? (nl > t[l] ? 1.0 : 0.0) : s;
        for (std::size_t e = 0; e < n; ++e) r[e] -= keep * rounded[e];
    }
    // Q = w - r_k, so dQ/dt_j = -d[j].
    std::vector<double> out(k, 0.0);
    for (int j = 0; j < k; ++j)
        for (std::size_t e = 0; e < n; ++e) out[j] -= static_cast<double>(upstream[e]) * d[j][e];
    return out;
}

#define FLEXSHIFT_INSTANTIATE(T)                                                                                   \
    template double reg_loss<T>(std::span<const T>, std::span<const double>, int, const ExponentRange&);         \
    template std::vector<double> reg_grad<T>(std::span<const T>, std::span<const double>, int,                   \
                                             const ExponentRange&);                                              \
    template std::vector<double> threshold_grad<T>(std::span<const T>, std::span<const double>,                   \
                                                   std::span<const T>, int, const ExponentRange&,                \
                                                   const ThresholdGradOptions&);

FLEXSHIFT_INSTANTIATE(float)
FLEXSHIFT_INSTANTIATE(double)

}  // namespace flexshift
