#pragma once

// Piecewise-exponential survival: changepoint grids, the Poisson expansion of
// right-censored records, the likelihood, the conjugate Gamma MAP, a Weibull
// comparator and the Kaplan-Meier product-limit estimator.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <boost/math/tools/minima.hpp>

#include "dhbc/errors.hpp"

namespace dhbc {

struct SurvivalRecord {
    std::string subject_id;
    double t = 0.0;
    int d = 0;  // 1 = event, 0 = right censored
};

/// Cuts a_1 < ... < a_J; a_0 = 0 is implicit.
struct ChangepointGrid {
    std::vector<double> cuts;

    std::size_t intervals() const { return cuts.size(); }
    double lower(std::size_t j) const { return j == 0 ? 0.0 : cuts[j - 1]; }
    double upper(std::size_t j) const { return cuts[j]; }

    void validate() const {
        if (cuts.empty()) throw std::invalid_argument("changepoint grid has no intervals");
        double prev = 0.0;
        for (double c : cuts) {
            if (!std::isfinite(c) || !(c > prev))
                throw std::invalid_argument("changepoints must be strictly increasing and positive");
            prev = c;
        }
    }

    /// Interval index containing t, i.e. a_{j-1} < t <= a_j; throws if t > a_J.
    std::size_t interval_of(double t) const {
        auto it = std::lower_bound(cuts.begin(), cuts.end(), t);
        if (it == cuts.end()) throw std::out_of_range("time exceeds the last changepoint");
        return static_cast<std::size_t>(it - cuts.begin());
    }

    /// Equal-width cuts of the given width covering max_time.
    static ChangepointGrid fixed_width(double width, double max_time) {
        if (!(width > 0.0)) throw std::invalid_argument("grid width must be positive");
        if (!(max_time > 0.0)) throw std::invalid_argument("max time must be positive");
        ChangepointGrid g;
        const auto n = static_cast<std::size_t>(std::ceil(max_time / width - 1e-12));
        for (std::size_t j = 1; j <= std::max<std::size_t>(n, 1); ++j) g.cuts.push_back(width * static_cast<double>(j));
        if (g.cuts.back() < max_time) g.cuts.push_back(g.cuts.back() + width);
        return g;
    }
};

struct PoissonRow {
    std::string subject_id;
    std::size_t interval = 0;  // zero-based
    int n = 0;                 // event in this interval
    double risk_time = 0.0;
};

struct HazardParams {
    std::vector<double> lambdas;
};

struct GammaPrior {
    double a = 1.0;
    double b = 0.1;

    void validate() const {
        if (!(a >= 1.0)) throw std::invalid_argument("Gamma prior shape must be >= 1");
        if (!(b > 0.0)) throw std::invalid_argument("Gamma prior rate must be positive");
    }

    double log_density(double lambda) const {
        if (lambda < 0.0) return -std::numeric_limits<double>::infinity();
        const double log_kernel = a == 1.0 ? 0.0 : (a - 1.0) * std::log(lambda);
        return a * std::log(b) - std::lgamma(a) + log_kernel - b * lambda;
    }
};

/// Shift by +eps any cut that coincides with an observed time.
inline ChangepointGrid adjust_changepoints(const ChangepointGrid& grid, std::span<const double> times, double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("eps must be positive");
    grid.validate();
    std::vector<double> sorted(times.begin(), times.end());
    std::sort(sorted.begin(), sorted.end());
    auto collides = [&](double c) { return std::binary_search(sorted.begin(), sorted.end(), c); };
    ChangepointGrid out = grid;
    for (std::size_t j = 0; j < out.cuts.size(); ++j) {
        int guard = 0;
        while (collides(out.cuts[j])) {
            out.cuts[j] += eps;
            if (j + 1 < out.cuts.size() && !(out.cuts[j] < out.cuts[j + 1]))
                throw std::invalid_argument("changepoint adjustment would violate ordering");
            if (++guard > 64) throw std::invalid_argument("changepoint adjustment did not resolve a collision");
        }
    }
    return out;
}

inline double default_adjust_eps(std::span<const double> times) {
    double mx = 0.0;
    for (double t : times) mx = std::max(mx, t);
    return 1e-9 * std::max(mx, 1.0);
}

namespace detail {

inline void check_record(const SurvivalRecord& r) {
    if (!(r.t > 0.0) || !std::isfinite(r.t))
        throw std::invalid_argument("survival time must be positive for subject " + r.subject_id);
    if (r.d != 0 && r.d != 1) throw std::invalid_argument("event indicator must be 0 or 1 for subject " + r.subject_id);
}

}  // namespace detail

/// Rows with zero risk time (intervals after exit) are omitted.
inline std::vector<PoissonRow> expand_poisson(std::span<const SurvivalRecord> records, const ChangepointGrid& grid) {
    grid.validate();
    std::vector<PoissonRow> rows;
    for (const auto& r : records) {
        detail::check_record(r);
        if (r.t > grid.cuts.back()) throw std::out_of_range("survival time of " + r.subject_id + " exceeds the grid");
        const std::size_t last = grid.interval_of(r.t);
        for (std::size_t j = 0; j <= last; ++j) {
            const double risk = std::min(r.t, grid.upper(j)) - grid.lower(j);
            if (risk <= 0.0) continue;
            rows.push_back({r.subject_id, j, (j == last && r.d == 1) ? 1 : 0, risk});
        }
    }
    return rows;
}

/// d log lambda(t) - Lambda(t) for one record; -inf when an event falls where the hazard is zero.
inline double bpe_record_loglik(const SurvivalRecord& r, const HazardParams& params, const ChangepointGrid& grid) {
    if (params.lambdas.size() != grid.intervals()) throw DimensionMismatch("hazard count != number of intervals");
    const std::size_t last = grid.interval_of(r.t);
    double cum = 0.0;
    for (std::size_t j = 0; j <= last; ++j) cum += params.lambdas[j] * (std::min(r.t, grid.upper(j)) - grid.lower(j));
    if (r.d == 0) return -cum;
    const double lam = params.lambdas[last];
    if (!(lam > 0.0)) return -std::numeric_limits<double>::infinity();
    return std::log(lam) - cum;
}

inline double bpe_loglik(std::span<const SurvivalRecord> records, const HazardParams& params,
                         const ChangepointGrid& grid) {
    double ll = 0.0;
    for (const auto& r : records) ll += bpe_record_loglik(r, params, grid);
    return ll;
}

/// Per-interval sufficient statistics: event count and total risk time.
struct IntervalTotals {
    std::vector<double> events;
    std::vector<double> risk;
};

inline IntervalTotals interval_totals(std::span<const SurvivalRecord> records, const ChangepointGrid& grid) {
    IntervalTotals tot{std::vector<double>(grid.intervals(), 0.0), std::vector<double>(grid.intervals(), 0.0)};
    for (const auto& row : expand_poisson(records, grid)) {
        tot.events[row.interval] += row.n;
        tot.risk[row.interval] += row.risk_time;
    }
    return tot;
}

struct GammaPosterior {
    double shape;
    double rate;
};

/// Gamma(a + sum N, b + sum T) per interval.
inline std::vector<GammaPosterior> bpe_posterior_params(std::span<const SurvivalRecord> records,
                                                        const ChangepointGrid& grid, const GammaPrior& prior) {
    prior.validate();
    const auto tot = interval_totals(records, grid);
    std::vector<GammaPosterior> out(grid.intervals());
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = {prior.a + tot.events[j], prior.b + tot.risk[j]};
    return out;
}

/// lambda_j = (a - 1 + sum N_j) / (b + sum T_j).
inline HazardParams bpe_map(std::span<const SurvivalRecord> records, const ChangepointGrid& grid,
                            const GammaPrior& prior) {
    HazardParams h;
    for (const auto& post : bpe_posterior_params(records, grid, prior)) h.lambdas.push_back((post.shape - 1.0) / post.rate);
    return h;
}

inline double bpe_log_prior(const HazardParams& h, const GammaPrior& prior) {
    double lp = 0.0;
    for (double l : h.lambdas) lp += prior.log_density(l);
    return lp;
}

// ---------------------------------------------------------------------------
// Weibull comparator: S(t) = exp(-(t/scale)^shape).

struct WeibullParams {
    double shape = 1.0;
    double scale = 1.0;
};

inline double weibull_record_loglik(const SurvivalRecord& r, const WeibullParams& w) {
    const double z = r.t / w.scale;
    const double cum = std::pow(z, w.shape);
    if (r.d == 0) return -cum;
    return std::log(w.shape / w.scale) + (w.shape - 1.0) * std::log(z) - cum;
}

inline double weibull_loglik(std::span<const SurvivalRecord> records, const WeibullParams& w) {
    double ll = 0.0;
    for (const auto& r : records) ll += weibull_record_loglik(r, w);
    return ll;
}

/// Maximum likelihood with the scale profiled out: scale^k = sum t^k / D.
inline WeibullParams weibull_mle(std::span<const SurvivalRecord> records) {
    if (records.empty()) throw std::invalid_argument("weibull_mle: no records");
    double events = 0.0;
    for (const auto& r : records) {
        detail::check_record(r);
        events += r.d;
    }
    if (events == 0.0) throw DegenerateFit("weibull_mle: no events");
    auto profiled = [&](double log_k) {
        const double k = std::exp(log_k);
        double s = 0.0;
        for (const auto& r : records) s += std::pow(r.t, k);
        return WeibullParams{k, std::pow(s / events, 1.0 / k)};
    };
    auto neg = [&](double log_k) { return -weibull_loglik(records, profiled(log_k)); };
    const auto [best, val] = boost::math::tools::brent_find_minima(neg, std::log(0.02), std::log(50.0), 50);
    (void)val;
    return profiled(best);
}

// ---------------------------------------------------------------------------
// Kaplan-Meier.

struct KmStep {
    double time;
    double survival;
    int at_risk;
    int events;
};

/// Product-limit estimate, one step per distinct observed time; censorings tied with
/// an event time are still at risk for that event.
inline std::vector<KmStep> kaplan_meier(std::span<const SurvivalRecord> records) {
    if (records.empty()) throw std::invalid_argument("kaplan_meier: no records");
    std::vector<SurvivalRecord> sorted(records.begin(), records.end());
    std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.t < b.t; });
    std::vector<KmStep> out;
    double s = 1.0;
    auto at_risk = static_cast<int>(sorted.size());
    for (std::size_t i = 0; i < sorted.size();) {
        const double t = sorted[i].t;
        int ev = 0;
        int total = 0;
        for (; i < sorted.size() && sorted[i].t == t; ++i, ++total) ev += sorted[i].d;
        if (ev > 0) s *= static_cast<double>(at_risk - ev) / at_risk;
        out.push_back({t, s, at_risk, ev});
        at_risk -= total;
    }
    return out;
}

inline void write_km_csv(std::ostream& os, std::span<const KmStep> steps) {
    os << "time,survival,at_risk,events\n";
    os.precision(17);
    for (const auto& s : steps) os << s.time << ',' << s.survival << ',' << s.at_risk << ',' << s.events << '\n';
}

}  // namespace dhbc
