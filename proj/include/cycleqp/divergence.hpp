#ifndef CYCLEQP_DIVERGENCE_HPP
#define CYCLEQP_DIVERGENCE_HPP

#include "cycleqp/autodiff.hpp"
#include "cycleqp/tensor.hpp"

namespace cycleqp {

/// Hyperparameters of the quadratic-potential objective
/// Q(a, d) = a - a^2 / (2 * lambda * d).
struct QpConfig {
    double lambda = 10.0;
    double epsilon = 1e-8;  // floor on the distance denominator

    void validate() const {
        if (!(lambda > 0.0)) throw std::invalid_argument("QpConfig: lambda must be > 0");
        if (!(epsilon > 0.0) || epsilon > 1e-6)
            throw std::invalid_argument("QpConfig: epsilon must be in (0, 1e-6]");
    }
};

/// Per-sample critic scores on a real batch and on a generated batch.
template <class T>
struct ScorePair {
    ad::Var<T> score_real;  // shape {N}
    ad::Var<T> score_fake;  // shape {N}
};

namespace detail {

template <class T>
void require_finite(const ad::Var<T>& v, const char* what) {
    if (!v->value.all_finite()) throw NumericError(std::string(what) + ": non-finite values");
}

}  // namespace detail

/// Mean absolute difference per batch element, shape {N}. The mean (not sum)
/// reduction keeps lambda resolution-independent.
template <class T>
ad::Var<T> l1_distance(const ad::Var<T>& x, const ad::Var<T>& y) {
    require_same_shape(x->value, y->value, "l1_distance");
    return ad::mean_per_sample(ad::abs_(ad::sub(x, y)));
}

/// Batch mean of Q(a, d) with a = score_real - score_fake and
/// d = l1_distance(x_real, x_fake) floored at epsilon.
template <class T>
ad::Var<T> qp_divergence(const ScorePair<T>& scores, const ad::Var<T>& x_real, const ad::Var<T>& x_fake,
                         const QpConfig& cfg) {
    cfg.validate();
    detail::require_finite(scores.score_real, "qp_divergence: score_real");
    detail::require_finite(scores.score_fake, "qp_divergence: score_fake");
    require_same_shape(scores.score_real->value, scores.score_fake->value, "qp_divergence");
    if (scores.score_real->value.dim(0) != x_real->value.dim(0))
        throw std::invalid_argument("qp_divergence: batch size mismatch between scores and images");
    auto a = ad::sub(scores.score_real, scores.score_fake);
    auto d = ad::clamp_min(l1_distance(x_real, x_fake), static_cast<T>(cfg.epsilon));
    detail::require_finite(d, "qp_divergence: distance");
    auto quad = ad::div(ad::square(a), ad::scale(d, static_cast<T>(2.0 * cfg.lambda)));
    auto out = ad::mean_all(ad::sub(a, quad));
    detail::require_finite(out, "qp_divergence: result");
    return out;
}

/// The critic's per-direction objective; identical to the divergence, with
/// sign convention "larger is better for the critic".
template <class T>
ad::Var<T> critic_direction_objective(const ScorePair<T>& scores, const ad::Var<T>& x_real, const ad::Var<T>& x_fake,
                                      const QpConfig& cfg) {
    return qp_divergence(scores, x_real, x_fake, cfg);
}

/// Batch mean of a = score_real - score_fake; the generator minimizes this
/// (no quadratic term).
template <class T>
ad::Var<T> generator_adversarial_scalar(const ScorePair<T>& scores) {
    detail::require_finite(scores.score_real, "generator_adversarial_scalar: score_real");
    detail::require_finite(scores.score_fake, "generator_adversarial_scalar: score_fake");
    require_same_shape(scores.score_real->value, scores.score_fake->value, "generator_adversarial_scalar");
    return ad::mean_all(ad::sub(scores.score_real, scores.score_fake));
}

/// Closed-form optimum of Q(a, d) over a, for diagnostics and tests.
inline double qp_argmax_a(double lambda, double d) { return lambda * d; }
inline double qp_max_value(double lambda, double d) { return lambda * d / 2.0; }

}  // namespace cycleqp

#endif
