#ifndef CYCLEQP_LOSSES_HPP
#define CYCLEQP_LOSSES_HPP

#include <nlohmann/json.hpp>
#include <string>
#include <utility>

#include "cycleqp/divergence.hpp"

namespace cycleqp {

struct LossWeights {
    double alpha = 10.0;  // cycle-consistency weight
    double beta = 0.5;    // identity weight

    void validate() const {
        if (alpha < 0.0 || beta < 0.0) throw std::invalid_argument("LossWeights: alpha and beta must be >= 0");
    }
};

/// How the identity terms pair their operands. `cross_domain` compares the
/// translated sample against a real sample of the other, unpaired domain;
/// `same_domain` feeds the target domain's own sample through the generator.
enum class IdentityMode { cross_domain, same_domain };

/// All forward products of one translation round trip.
template <class T>
struct TranslationStep {
    ad::Var<T> x_r;     // real photo batch
    ad::Var<T> x_s;     // real painting batch
    ad::Var<T> fake_s;  // G_rs(x_r)
    ad::Var<T> fake_r;  // G_sr(x_s)
    ad::Var<T> rec_r;   // G_sr(G_rs(x_r))
    ad::Var<T> rec_s;   // G_rs(G_sr(x_s))
    ad::Var<T> id_r;    // identity-term candidate for the photo domain
    ad::Var<T> id_s;    // identity-term candidate for the painting domain
};

struct LossReport {
    double adv_rs = 0, adv_sr = 0;
    double cyc_r = 0, cyc_s = 0;
    double id_r = 0, id_s = 0;
    double gen_total = 0;
    double critic_s = 0, critic_r = 0;
    long iteration = 0;
    double wall_seconds = 0;

    std::string to_json_line() const {
        nlohmann::json j{{"iteration", iteration}, {"adv_rs", adv_rs}, {"adv_sr", adv_sr},
                         {"cyc_r", cyc_r},         {"cyc_s", cyc_s},   {"id_r", id_r},
                         {"id_s", id_s},           {"gen_total", gen_total}, {"critic_s", critic_s},
                         {"critic_r", critic_r},   {"wall_seconds", wall_seconds}};
        return j.dump();
    }

    static LossReport from_json_line(const std::string& line) {
        const auto j = nlohmann::json::parse(line);
        LossReport r;
        r.iteration = j.at("iteration").get<long>();
        r.adv_rs = j.at("adv_rs").get<double>();
        r.adv_sr = j.at("adv_sr").get<double>();
        r.cyc_r = j.at("cyc_r").get<double>();
        r.cyc_s = j.at("cyc_s").get<double>();
        r.id_r = j.at("id_r").get<double>();
        r.id_s = j.at("id_s").get<double>();
        r.gen_total = j.at("gen_total").get<double>();
        r.critic_s = j.at("critic_s").get<double>();
        r.critic_r = j.at("critic_r").get<double>();
        r.wall_seconds = j.value("wall_seconds", 0.0);
        return r;
    }
};

/// Mean absolute reconstruction error.
template <class T>
ad::Var<T> cycle_loss(const ad::Var<T>& original, const ad::Var<T>& reconstructed) {
    require_same_shape(original->value, reconstructed->value, "cycle_loss");
    return ad::mean_all(ad::abs_(ad::sub(reconstructed, original)));
}

template <class T>
ad::Var<T> identity_loss(const ad::Var<T>& target_domain_sample, const ad::Var<T>& translated) {
    require_same_shape(target_domain_sample->value, translated->value, "identity_loss");
    return ad::mean_all(ad::abs_(ad::sub(translated, target_domain_sample)));
}

namespace detail {

template <class T>
double checked_scalar(const ad::Var<T>& v, const char* term) {
    const double x = static_cast<double>(v->value.item());
    if (!std::isfinite(x)) throw NumericError(std::string("generator_total: non-finite term ") + term);
    return x;
}

}  // namespace detail

/// Joint generator objective: adv_rs + adv_sr + alpha*(cyc_r + cyc_s) +
/// beta*(id_r + id_s). Returns the minimization scalar and the filled report.
template <class T>
std::pair<ad::Var<T>, LossReport> generator_total(const TranslationStep<T>& step, const ScorePair<T>& critic_s_scores,
                                                  const ScorePair<T>& critic_r_scores, const LossWeights& w) {
    w.validate();
    auto adv_rs = generator_adversarial_scalar(critic_s_scores);
    auto adv_sr = generator_adversarial_scalar(critic_r_scores);
    auto cyc_r = cycle_loss(step.x_r, step.rec_r);
    auto cyc_s = cycle_loss(step.x_s, step.rec_s);
    auto idr = identity_loss(step.x_r, step.id_r);
    auto ids = identity_loss(step.x_s, step.id_s);

    LossReport report;
    report.adv_rs = detail::checked_scalar(adv_rs, "adv_rs");
    report.adv_sr = detail::checked_scalar(adv_sr, "adv_sr");
    report.cyc_r = detail::checked_scalar(cyc_r, "cyc_r");
    report.cyc_s = detail::checked_scalar(cyc_s, "cyc_s");
    report.id_r = detail::checked_scalar(idr, "id_r");
    report.id_s = detail::checked_scalar(ids, "id_s");

    auto total = ad::add(ad::add(adv_rs, adv_sr),
                         ad::add(ad::scale(ad::add(cyc_r, cyc_s), static_cast<T>(w.alpha)),
                                 ad::scale(ad::add(idr, ids), static_cast<T>(w.beta))));
    report.gen_total = detail::checked_scalar(total, "gen_total");
    return {total, report};
}

/// Per-direction critic maximization objectives (style, photo). The distance
/// operand pairs each domain's real sample with the generated sample of the
/// same domain.
template <class T>
std::pair<ad::Var<T>, ad::Var<T>> critic_total(const TranslationStep<T>& step, const ScorePair<T>& critic_s_scores,
                                               const ScorePair<T>& critic_r_scores, const QpConfig& cfg) {
    auto obj_s = critic_direction_objective(critic_s_scores, step.x_s, step.fake_s, cfg);
    auto obj_r = critic_direction_objective(critic_r_scores, step.x_r, step.fake_r, cfg);
    return {obj_s, obj_r};
}

}  // namespace cycleqp

#endif
