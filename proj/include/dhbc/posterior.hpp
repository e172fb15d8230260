#pragma once

// Marginalized log posterior of an overfitted mixture with hard assignments:
//
//   sum_k sum_{i in k} log f(y_i | theta_k)
//     + sum_{k nonempty} log pi1(theta_k) + sum_{k empty} log pi0
//     + log DirMult(n_1..n_K | alpha)
//
// with the mixture weights integrated out.

#include <cmath>
#include <limits>
#include <span>
#include <variant>
#include <vector>

#include "dhbc/bpe.hpp"
#include "dhbc/cohort.hpp"
#include "dhbc/errors.hpp"
#include "dhbc/lmm.hpp"

namespace dhbc {

using SurvivalFit = std::variant<HazardParams, WeibullParams>;

struct ClusterParams {
    LmmParams lmm;
    std::vector<SurvivalFit> survival;  // one per event variable
};

struct MixtureConfig {
    double alpha = 1.0;
    std::size_t K = 1;
    LmmPriors lmm_priors;
    std::vector<GammaPrior> gamma_priors;  // one per event variable
    double pi0_log_density = 0.0;

    static MixtureConfig defaults(const Model& m, double alpha = 1.0) {
        MixtureConfig c;
        c.alpha = alpha;
        c.K = std::max<std::size_t>(m.size(), 1);
        c.lmm_priors = LmmPriors::defaults(m.h, m.q);
        c.gamma_priors.assign(m.event_count(), GammaPrior{});
        return c;
    }
};

/// Hard assignment over subjects; labels are zero-based in [0, K).
struct Partition {
    std::vector<std::size_t> assignment;
    std::size_t K = 1;

    std::vector<std::size_t> counts() const {
        std::vector<std::size_t> c(K, 0);
        for (auto a : assignment) {
            if (a >= K) throw std::out_of_range("partition label exceeds K");
            ++c[a];
        }
        return c;
    }
};

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double survival_record_loglik(const SurvivalRecord& r, const SurvivalFit& fit, const ChangepointGrid& grid) {
    if (const auto* h = std::get_if<HazardParams>(&fit)) return bpe_record_loglik(r, *h, grid);
    return weibull_record_loglik(r, std::get<WeibullParams>(fit));
}

/// Longitudinal block plus every event variable, assumed conditionally independent.
inline double subject_loglik(const Model& m, std::size_t i, const ClusterParams& theta) {
    if (theta.survival.size() != m.event_count()) throw DimensionMismatch("one survival fit per event variable required");
    double ll = lmm_subject_loglik(m.blocks[i], theta.lmm);
    for (std::size_t v = 0; v < m.event_count(); ++v) {
        const double s = survival_record_loglik(m.events[v][i], theta.survival[v], m.grids[v]);
        if (s == kNegInf) return kNegInf;
        ll += s;
    }
    return ll;
}

/// log pi1(theta): product of the LMM priors and the Gamma priors on every hazard.
/// Weibull comparators carry a flat prior.
inline double log_component_prior(const ClusterParams& theta, const MixtureConfig& cfg) {
    double lp = lmm_log_prior(theta.lmm, cfg.lmm_priors);
    for (std::size_t v = 0; v < theta.survival.size(); ++v)
        if (const auto* h = std::get_if<HazardParams>(&theta.survival[v])) lp += bpe_log_prior(*h, cfg.gamma_priors.at(v));
    return lp;
}

inline double log_dirichlet_multinomial(std::span<const std::size_t> counts, double alpha) {
    if (!(alpha > 0.0)) throw std::invalid_argument("Dirichlet concentration must be positive");
    const auto k = static_cast<double>(counts.size());
    double n = 0.0;
    double acc = std::lgamma(k * alpha) - k * std::lgamma(alpha);
    for (auto c : counts) {
        acc += std::lgamma(static_cast<double>(c) + alpha);
        n += static_cast<double>(c);
    }
    return acc - std::lgamma(n + k * alpha);
}

/// Sum of member log-likelihoods plus log pi1 for one nonempty cluster.
inline double cluster_term(const Model& m, std::span<const std::size_t> members, const ClusterParams& theta,
                           const MixtureConfig& cfg) {
    double t = log_component_prior(theta, cfg);
    for (auto i : members) {
        const double ll = subject_loglik(m, i, theta);
        if (ll == kNegInf) return kNegInf;
        t += ll;
    }
    return t;
}

/// The additive constant is dropped; comparisons are within one cohort.
inline double log_posterior(const Model& m, const Partition& z, std::span<const ClusterParams> params,
                            const MixtureConfig& cfg) {
    if (z.assignment.size() != m.size()) throw DimensionMismatch("partition size != cohort size");
    if (params.size() != z.K) throw DimensionMismatch("one parameter set per component required");
    std::vector<std::vector<std::size_t>> members(z.K);
    for (std::size_t i = 0; i < z.assignment.size(); ++i) members.at(z.assignment[i]).push_back(i);
    double total = 0.0;
    std::vector<std::size_t> counts(z.K);
    for (std::size_t k = 0; k < z.K; ++k) {
        counts[k] = members[k].size();
        if (members[k].empty()) {
            total += cfg.pi0_log_density;
            continue;
        }
        const double t = cluster_term(m, members[k], params[k], cfg);
        if (t == kNegInf) return kNegInf;
        total += t;
    }
    return total + log_dirichlet_multinomial(counts, cfg.alpha);
}

/// Best component for subject i given the other subjects' counts: maximizes
/// log f(y_i | theta_k) + log(n_k + alpha), plus the pi1/pi0 switch when component k
/// would stop being empty. Ties go to the lower index.
inline std::size_t assign_subject(const Model& m, std::size_t i, std::span<const ClusterParams> candidates,
                                  std::span<const std::size_t> counts_excluding, const MixtureConfig& cfg) {
    if (candidates.empty()) throw std::invalid_argument("assign_subject: no candidates");
    if (counts_excluding.size() != candidates.size()) throw DimensionMismatch("assign_subject: counts/candidates mismatch");
    std::size_t best = 0;
    double best_score = kNegInf;
    bool any = false;
    for (std::size_t k = 0; k < candidates.size(); ++k) {
        const double ll = subject_loglik(m, i, candidates[k]);
        if (ll == kNegInf) continue;
        double score = ll + std::log(static_cast<double>(counts_excluding[k]) + cfg.alpha);
        if (counts_excluding[k] == 0) score += log_component_prior(candidates[k], cfg) - cfg.pi0_log_density;
        if (!any || score > best_score) {
            best = k;
            best_score = score;
            any = true;
        }
    }
    if (!any) throw UnassignableSubject("subject " + std::to_string(i) + " has zero likelihood under every candidate");
    return best;
}

}  // namespace dhbc
