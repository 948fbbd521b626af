#ifndef CYCLEQP_DIAGNOSTICS_HPP
#define CYCLEQP_DIAGNOSTICS_HPP

#include <functional>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cycleqp/divergence.hpp"
#include "cycleqp/models.hpp"

namespace cycleqp {

struct QpAnalyticsReport {
    bool passed = true;
    long trials = 0;
    double worst_argmax_error = 0;
    double worst_value_error = 0;
    std::string failure;  // offending (lambda, d, a) when !passed

    std::string summary() const {
        std::ostringstream os;
        os << (passed ? "ok" : "FAILED") << " over " << trials << " trials"
           << ", worst argmax err " << worst_argmax_error << ", worst value err " << worst_value_error;
        if (!passed) os << "; " << failure;
        return os.str();
    }
};

/// Checks the closed-form optimum a* = lambda*d, max = lambda*d/2 against a
/// refined grid search, and concavity on grid triples.
inline QpAnalyticsReport check_qp_analytics(long trials, std::mt19937_64& rng, double value_tol = 1e-6) {
    QpAnalyticsReport rep;
    rep.trials = trials;
    std::uniform_real_distribution<double> lam_dist(0.1, 100.0), d_dist(0.01, 10.0);
    for (long t = 0; t < trials; ++t) {
        const double lambda = lam_dist(rng);
        const double d = d_dist(rng);
        auto q = [&](double a) { return a - a * a / (2.0 * lambda * d); };

        // coarse grid, then two refinement passes around the best point
        double lo = 0.0, hi = 2.0 * lambda * d;
        double best_a = 0.0, best_q = q(0.0);
        const long n = 2000;
        for (int pass = 0; pass < 3; ++pass) {
            const double h = (hi - lo) / n;
            for (long i = 0; i <= n; ++i) {
                const double a = lo + h * i;
                const double v = q(a);
                if (v > best_q) {
                    best_q = v;
                    best_a = a;
                }
            }
            lo = best_a - h;
            hi = best_a + h;
        }
        const double expect_a = qp_argmax_a(lambda, d);
        const double expect_q = qp_max_value(lambda, d);
        const double a_err = std::abs(best_a - expect_a) / std::max(1.0, std::abs(expect_a));
        const double v_err = std::abs(best_q - expect_q) / std::max(1.0, std::abs(expect_q));
        rep.worst_argmax_error = std::max(rep.worst_argmax_error, a_err);
        rep.worst_value_error = std::max(rep.worst_value_error, v_err);
        if (v_err > value_tol || a_err > value_tol) {
            rep.passed = false;
            std::ostringstream os;
            os << "optimum mismatch at lambda=" << lambda << " d=" << d << " a=" << best_a;
            rep.failure = os.str();
            return rep;
        }

        // concavity: midpoint value at or above the chord on grid triples
        const double range = 4.0 * lambda * d;
        for (long i = 0; i < 64; ++i) {
            const double a1 = -range + 2.0 * range * i / 63.0;
            const double a2 = -range + 2.0 * range * ((i * 37) % 64) / 63.0;
            const double mid = q((a1 + a2) / 2.0);
            const double chord = (q(a1) + q(a2)) / 2.0;
            if (mid + 1e-9 * std::max(1.0, std::abs(chord)) < chord) {
                rep.passed = false;
                std::ostringstream os;
                os << "concavity violated at lambda=" << lambda << " d=" << d << " a1=" << a1 << " a2=" << a2;
                rep.failure = os.str();
                return rep;
            }
        }
    }
    return rep;
}

/// Interior spatial variance of a decoder output fed a constant field;
/// zero means artifact-free under the constant probe.
template <class T>
double checkerboard_score(const Tensor<T>& output, long border) {
    if (output.rank() != 4) throw std::invalid_argument("checkerboard_score: rank-4 input required");
    const long N = output.dim(0), C = output.dim(1), H = output.dim(2), W = output.dim(3);
    if (2 * border >= H || 2 * border >= W)
        throw std::invalid_argument("checkerboard_score: border too large for " + output.shape_str());
    double worst = 0.0;
    for (long n = 0; n < N; ++n)
        for (long c = 0; c < C; ++c) {
            double sum = 0.0, sum2 = 0.0;
            long count = 0;
            for (long h = border; h < H - border; ++h)
                for (long w = border; w < W - border; ++w) {
                    const double v = static_cast<double>(output.at(n, c, h, w));
                    sum += v;
                    sum2 += v * v;
                    ++count;
                }
            const double mean = sum / count;
            worst = std::max(worst, std::max(0.0, sum2 / count - mean * mean));
        }
    return worst;
}

struct GradCheckEntry {
    std::size_t param_index = 0;
    long flat_index = 0;
    double analytic = 0;
    double finite_difference = 0;
    double relative_error = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_relative_error = 0;
    double step = 0;
    double tolerance = 0;
    bool passed = false;

    std::string summary() const {
        std::ostringstream os;
        os << (passed ? "ok" : "FAILED") << ": max rel err " << std::setprecision(3) << max_relative_error << " (step "
           << step << ", tol " << tolerance << ", " << entries.size() << " coords)";
        return os.str();
    }
};

/// Central-difference check of autodiff gradients at randomly sampled
/// coordinates of the given leaf parameters. The loss function must be a
/// pure function of the leaves.
template <class T>
GradCheckReport finite_difference_gradcheck(
    const std::function<ad::Var<T>(const std::vector<ad::Var<T>>&)>& loss_fn, std::vector<ad::Var<T>> params,
    long n_coords, double step, std::mt19937_64& rng, double tolerance) {
    GradCheckReport rep;
    rep.step = step;
    rep.tolerance = tolerance;
    for (auto& p : params) {
        p->requires_grad = true;
        ad::zero_grad(p);
    }
    auto loss = loss_fn(params);
    if (!loss->value.all_finite()) throw NumericError("gradcheck: non-finite loss at the base point");
    ad::backward(loss);

    std::uniform_int_distribution<std::size_t> pick_param(0, params.size() - 1);
    for (long i = 0; i < n_coords; ++i) {
        const std::size_t pi = pick_param(rng);
        auto& p = params[pi];
        const long k = std::uniform_int_distribution<long>(0, p->value.numel() - 1)(rng);
        const T saved = p->value[k];
        p->value[k] = saved + static_cast<T>(step);
        const double up = static_cast<double>(loss_fn(params)->value.item());
        p->value[k] = saved - static_cast<T>(step);
        const double down = static_cast<double>(loss_fn(params)->value.item());
        p->value[k] = saved;
        if (!std::isfinite(up) || !std::isfinite(down)) throw NumericError("gradcheck: non-finite loss at a probe");
        GradCheckEntry e;
        e.param_index = pi;
        e.flat_index = k;
        e.analytic = static_cast<double>(p->grad[k]);
        e.finite_difference = (up - down) / (2.0 * step);
        // guarded relative error: behaves as absolute tolerance where the
        // true gradient vanishes (FD noise would otherwise dominate)
        const double denom = std::max({std::abs(e.analytic), std::abs(e.finite_difference), 1.0});
        e.relative_error = std::abs(e.analytic - e.finite_difference) / denom;
        rep.max_relative_error = std::max(rep.max_relative_error, e.relative_error);
        rep.entries.push_back(e);
    }
    rep.passed = rep.max_relative_error <= tolerance;
    return rep;
}

}  // namespace cycleqp

#endif
