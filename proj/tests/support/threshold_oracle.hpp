#pragma once

// Finite-difference oracle for threshold gradients. Every gate is sigmoid((||r_l|| - t_l)/tau)
// in the forward pass too, and R is replaced by the straight-through surrogate
// R~(r) = R(r0) + (r - r0), frozen at the residuals r0 of the base thresholds.

#include <cmath>
#include <random>
#include <vector>

#include "flexshift/quantizer.hpp"
#include "flexshift/trainer.hpp"
#include "gradcheck.hpp"

namespace flexshift::testing {

struct RelaxedFilter {
    std::vector<double> w;
    std::vector<double> upstream;
    ExponentRange range;
    double tau = 1.0;
    int k = 2;

    static double sig(double z) { return 1.0 / (1.0 + std::exp(-z)); }

    // Residuals r_0..r_{k-1} of the relaxed recursion with the true rounding.
    std::vector<std::vector<double>> base_residuals(const std::vector<double>& t) const {
        std::vector<std::vector<double>> out;
        std::vector<double> r = w;
        for (int l = 0; l < k; ++l) {
            out.push_back(r);
            double n = 0;
            for (double x : r) n += x * x;
            const double s = sig((std::sqrt(n) - t[l]) / tau);
            for (double& x : r) x -= s * round_pow2(x, range).value();
        }
        return out;
    }

    double surrogate_loss(const std::vector<double>& t, const std::vector<std::vector<double>>& base) const {
        std::vector<double> r = w, q(w.size(), 0.0);
        for (int l = 0; l < k; ++l) {
            double n = 0;
            for (double x : r) n += x * x;
            const double s = sig((std::sqrt(n) - t[l]) / tau);
            for (std::size_t e = 0; e < r.size(); ++e) {
                const double rt = round_pow2(base[l][e], range).value() + (r[e] - base[l][e]);
                q[e] += s * rt;
                r[e] -= s * rt;
            }
        }
        double loss = 0;
        for (std::size_t e = 0; e < q.size(); ++e) loss += upstream[e] * q[e];
        return loss;
    }
};

/// Random filters with thresholds near their residual norms so the sigmoid slopes matter.
inline ProbeStats check_threshold_gradients(std::size_t filters, std::uint64_t seed, double h = 1e-5,
                                            double tol = 1e-4) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 0.2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ProbeStats stats;
    const double taus[] = {0.05, 0.2, 1.0};
    for (std::size_t f = 0; f < filters; ++f) {
        RelaxedFilter rf;
        rf.k = 2 + static_cast<int>(f % 2);
        rf.tau = taus[f % 3];
        const std::size_t size = 1 + rng() % 27;
        double mx = 0;
        for (std::size_t e = 0; e < size; ++e) {
            rf.w.push_back(n(rng));
            rf.upstream.push_back(n(rng));
            mx = std::max(mx, std::abs(rf.w.back()));
        }
        rf.range = ExponentRange::for_max_abs(mx);
        // Place each threshold within a few temperatures of the norm it gates.
        std::vector<double> t(rf.k, 0.0);
        for (int l = 0; l < rf.k; ++l) {
            const auto base = rf.base_residuals(t);
            double nl = 0;
            for (double x : base[l]) nl += x * x;
            t[l] = std::sqrt(nl) + rf.tau * (4 * u(rng) - 2);
        }
        const auto base = rf.base_residuals(t);
        const ThresholdGradOptions opts{rf.tau, GateTrace::relaxed, GateSum::all_rounds};
        const auto analytic =
            threshold_grad<double>(rf.w, t, rf.upstream, rf.k, rf.range, opts);
        for (int j = 0; j < rf.k; ++j) {
            auto up = t, down = t;
            up[j] += h * rf.tau;
            down[j] -= h * rf.tau;
            const double numeric =
                (rf.surrogate_loss(up, base) - rf.surrogate_loss(down, base)) / (2 * h * rf.tau);
            ++stats.probes;
            const double err = relative_error(analytic[j], numeric, 1e-8);
            stats.worst = std::max(stats.worst, err);
            if (!(err < tol)) ++stats.failures;
        }
    }
    return stats;
}

}  // namespace flexshift::testing
