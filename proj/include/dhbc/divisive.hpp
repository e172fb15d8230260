#pragma once

// Divisive hierarchical clustering driver. Starting from one cluster, each round
// tries to split every leaf (heuristic 2-way initialization, then alternating
// parameter fits and synchronous reassignment), and accepts the single split that
// most increases the marginalized log posterior at the current Dirichlet
// concentration. The concentration walks an increasing grid, so later splits
// appear only as the partition prior becomes more permissive.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "dhbc/bpe.hpp"
#include "dhbc/cohort.hpp"
#include "dhbc/errors.hpp"
#include "dhbc/lmm.hpp"
#include "dhbc/parallel.hpp"
#include "dhbc/posterior.hpp"

namespace dhbc {

enum class SplitInit { two_means, two_medoids };

inline std::vector<double> geometric_grid(double lo, double hi, std::size_t count) {
    if (!(lo > 0.0) || !(hi >= lo) || count == 0) throw std::invalid_argument("invalid geometric grid");
    std::vector<double> g(count);
    for (std::size_t i = 0; i < count; ++i) {
        const double f = count == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(count - 1);
        g[i] = std::exp(std::log(lo) + f * (std::log(hi) - std::log(lo)));
    }
    return g;
}

struct RunConfig {
    std::size_t max_clusters = 10;
    std::size_t min_cluster_size = 0;  // 0: use parameter_dimension(model)
    std::vector<double> alpha_grid = geometric_grid(1e-3, 1e2, 16);
    SplitInit split_init = SplitInit::two_means;
    std::uint64_t seed = 1;
    double tol = 1e-6;
    int max_iter = 200;
    int max_sweeps = 50;
    std::size_t threads = 1;

    void validate() const {
        if (max_clusters < 1) throw std::invalid_argument("max_clusters must be >= 1");
        if (alpha_grid.empty()) throw std::invalid_argument("alpha grid is empty");
        for (std::size_t i = 0; i < alpha_grid.size(); ++i) {
            if (!(alpha_grid[i] > 0.0)) throw std::invalid_argument("alpha values must be positive");
            if (i > 0 && !(alpha_grid[i] > alpha_grid[i - 1])) throw std::invalid_argument("alpha grid must increase");
        }
        if (max_sweeps < 1) throw std::invalid_argument("max_sweeps must be >= 1");
    }

    std::size_t effective_min_size(const Model& m) const {
        return min_cluster_size > 0 ? min_cluster_size : parameter_dimension(m);
    }

    LmmFitOptions lmm_options() const {
        LmmFitOptions o;
        o.tol = tol;
        o.max_iter = max_iter;
        return o;
    }
};

// ---------------------------------------------------------------------------
// Features for the heuristic initialization.

/// Per-variable OLS slope and intercept, then log(t) and d for each event variable.
inline std::vector<double> subject_feature_vector(const Model& m, std::size_t i) {
    const auto& times = m.times[i];
    const auto& y = m.blocks[i].y;
    std::vector<double> f;
    const auto n = static_cast<double>(times.size());
    double tbar = 0.0;
    for (double t : times) tbar += t;
    if (n > 0) tbar /= n;
    double stt = 0.0;
    for (double t : times) stt += (t - tbar) * (t - tbar);
    for (Eigen::Index h = 0; h < m.h; ++h) {
        double ybar = 0.0;
        for (Eigen::Index r = 0; r < y.rows(); ++r) ybar += y(r, h);
        if (n > 0) ybar /= n;
        double slope = 0.0;
        if (stt > 0.0) {
            double sty = 0.0;
            for (Eigen::Index r = 0; r < y.rows(); ++r) sty += (times[static_cast<std::size_t>(r)] - tbar) * (y(r, h) - ybar);
            slope = sty / stt;
        }
        f.push_back(slope);
        f.push_back(ybar - slope * tbar);
    }
    for (const auto& ev : m.events) {
        f.push_back(std::log(ev[i].t));
        f.push_back(static_cast<double>(ev[i].d));
    }
    return f;
}

/// Feature rows for the given members, each column z-scored across them (sd floor 1e-12).
inline Matrix feature_matrix(const Model& m, std::span<const std::size_t> members) {
    if (members.empty()) return Matrix(0, 0);
    const auto first = subject_feature_vector(m, members[0]);
    Matrix f(static_cast<Eigen::Index>(members.size()), static_cast<Eigen::Index>(first.size()));
    for (std::size_t r = 0; r < members.size(); ++r) {
        const auto v = r == 0 ? first : subject_feature_vector(m, members[r]);
        for (std::size_t c = 0; c < v.size(); ++c) f(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v[c];
    }
    for (Eigen::Index c = 0; c < f.cols(); ++c) {
        const double mean = f.col(c).mean();
        f.col(c).array() -= mean;
        const double sd = std::sqrt(f.col(c).squaredNorm() / static_cast<double>(f.rows()));
        f.col(c) /= std::max(sd, 1e-12);
    }
    return f;
}

// ---------------------------------------------------------------------------
// Two-way initialization.

struct InitSplit {
    std::vector<std::size_t> side_a;  // row indices into the feature matrix
    std::vector<std::size_t> side_b;
    bool degenerate = false;
    std::size_t moved = 0;
};

namespace detail {

inline double sq_dist(const Matrix& f, Eigen::Index r, const Vector& c) { return (f.row(r).transpose() - c).squaredNorm(); }

struct TwoCenters {
    Vector a, b;
    std::vector<int> label;  // 0 -> a, 1 -> b
    double cost = std::numeric_limits<double>::infinity();
};

inline TwoCenters two_means(const Matrix& f, std::mt19937_64& rng, int restarts = 10) {
    const auto n = f.rows();
    TwoCenters best;
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int rep = 0; rep < restarts; ++rep) {
        // k-means++ seeding
        Vector ca = f.row(pick(rng)).transpose();
        std::vector<double> d2(static_cast<std::size_t>(n));
        double total = 0.0;
        for (Eigen::Index r = 0; r < n; ++r) total += d2[static_cast<std::size_t>(r)] = sq_dist(f, r, ca);
        Eigen::Index chosen = 0;
        if (total > 0.0) {
            double u = unif(rng) * total;
            for (Eigen::Index r = 0; r < n; ++r) {
                u -= d2[static_cast<std::size_t>(r)];
                chosen = r;
                if (u <= 0.0) break;
            }
        }
        Vector cb = f.row(chosen).transpose();
        std::vector<int> label(static_cast<std::size_t>(n), 0);
        double cost = 0.0;
        for (int it = 0; it < 100; ++it) {
            bool changed = false;
            cost = 0.0;
            for (Eigen::Index r = 0; r < n; ++r) {
                const double da = sq_dist(f, r, ca), db = sq_dist(f, r, cb);
                const int l = db < da ? 1 : 0;
                cost += std::min(da, db);
                if (l != label[static_cast<std::size_t>(r)]) changed = true;
                label[static_cast<std::size_t>(r)] = l;
            }
            Vector sa = Vector::Zero(f.cols()), sb = Vector::Zero(f.cols());
            double na = 0, nb = 0;
            for (Eigen::Index r = 0; r < n; ++r) {
                if (label[static_cast<std::size_t>(r)] == 0) { sa += f.row(r).transpose(); ++na; }
                else { sb += f.row(r).transpose(); ++nb; }
            }
            if (na > 0) ca = sa / na;
            if (nb > 0) cb = sb / nb;
            if (!changed && it > 0) break;
        }
        if (cost < best.cost) best = {ca, cb, label, cost};
    }
    return best;
}

inline TwoCenters two_medoids(const Matrix& f) {
    const auto n = f.rows();
    Matrix d(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) d(i, j) = (f.row(i) - f.row(j)).norm();
    auto cost_of = [&](Eigen::Index a, Eigen::Index b) {
        double c = 0.0;
        for (Eigen::Index r = 0; r < n; ++r) c += std::min(d(r, a), d(r, b));
        return c;
    };
    // BUILD: best single medoid, then best second.
    Eigen::Index ma = 0;
    d.rowwise().sum().minCoeff(&ma);
    Eigen::Index mb = ma == 0 ? 1 : 0;
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j)
        if (j != ma)
            if (double c = cost_of(ma, j); c < best) { best = c; mb = j; }
    // SWAP until no improvement.
    for (bool improved = true; improved;) {
        improved = false;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (j == ma || j == mb) continue;
            if (double c = cost_of(j, mb); c < best - 1e-12) { best = c; ma = j; improved = true; }
            if (double c = cost_of(ma, j); c < best - 1e-12) { best = c; mb = j; improved = true; }
        }
    }
    TwoCenters out{f.row(ma).transpose(), f.row(mb).transpose(), std::vector<int>(static_cast<std::size_t>(n)), best};
    for (Eigen::Index r = 0; r < n; ++r) out.label[static_cast<std::size_t>(r)] = d(r, mb) < d(r, ma) ? 1 : 0;
    return out;
}

}  // namespace detail

/// 2-means (or 2-medoids) on the feature rows, then top up the smaller side to
/// min_size with the larger side's members that prefer the larger center least.
inline InitSplit init_split(const Matrix& features, std::size_t min_size, SplitInit method, std::uint64_t seed) {
    const auto n = static_cast<std::size_t>(features.rows());
    if (n < 2 || n < 2 * min_size) throw std::invalid_argument("init_split: cluster smaller than twice the minimum size");
    InitSplit out;

    double spread = 0.0;
    for (Eigen::Index r = 1; r < features.rows(); ++r) spread = std::max(spread, (features.row(r) - features.row(0)).norm());
    if (spread < 1e-12) {
        out.degenerate = true;
        for (std::size_t r = 0; r < n; ++r) (r < (n + 1) / 2 ? out.side_a : out.side_b).push_back(r);
        return out;
    }

    std::mt19937_64 rng(seed);
    auto centers = method == SplitInit::two_medoids ? detail::two_medoids(features) : detail::two_means(features, rng);
    for (std::size_t r = 0; r < n; ++r) (centers.label[r] == 0 ? out.side_a : out.side_b).push_back(r);

    const bool a_small = out.side_a.size() < out.side_b.size();
    auto& small = a_small ? out.side_a : out.side_b;
    auto& large = a_small ? out.side_b : out.side_a;
    const Vector& c_small = a_small ? centers.a : centers.b;
    const Vector& c_large = a_small ? centers.b : centers.a;
    if (small.size() < min_size) {
        const std::size_t need = min_size - small.size();
        // preference for the larger side: d(small center) - d(large center); move the weakest
        std::vector<std::pair<double, std::size_t>> pref;
        for (auto r : large) {
            const auto ri = static_cast<Eigen::Index>(r);
            pref.emplace_back((features.row(ri).transpose() - c_small).norm() - (features.row(ri).transpose() - c_large).norm(), r);
        }
        std::sort(pref.begin(), pref.end());
        std::set<std::size_t> moving;
        for (std::size_t k = 0; k < need; ++k) moving.insert(pref[k].second);
        std::erase_if(large, [&](std::size_t r) { return moving.contains(r); });
        small.insert(small.end(), moving.begin(), moving.end());
        std::sort(small.begin(), small.end());
        out.moved = need;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Cluster fits.

struct ClusterFit {
    ClusterParams params;
    double term = 0.0;  // sum of member log-likelihoods + log pi1
    std::vector<double> lmm_trace;
    bool converged = true;
};

inline ClusterFit fit_cluster(const Model& m, std::span<const std::size_t> members, const MixtureConfig& cfg,
                              const std::optional<LmmParams>& warm, const LmmFitOptions& opt) {
    if (members.empty()) throw DegenerateFit("cannot fit an empty cluster");
    SubjectRefs refs;
    for (auto i : members) refs.push_back(&m.blocks[i]);
    const LmmParams init = warm ? *warm : init_lmm_params(refs, cfg.lmm_priors);
    auto lmm = fit_lmm_map(refs, cfg.lmm_priors, init, opt);

    ClusterFit out;
    out.params.lmm = std::move(lmm.params);
    out.lmm_trace = std::move(lmm.trace);
    out.converged = lmm.converged;
    for (std::size_t v = 0; v < m.event_count(); ++v) {
        std::vector<SurvivalRecord> recs;
        recs.reserve(members.size());
        for (auto i : members) recs.push_back(m.events[v][i]);
        if (m.survival == SurvivalModel::weibull)
            out.params.survival.emplace_back(weibull_mle(recs));
        else
            out.params.survival.emplace_back(bpe_map(recs, m.grids[v], cfg.gamma_priors.at(v)));
    }
    out.term = cluster_term(m, members, out.params, cfg);
    return out;
}

// ---------------------------------------------------------------------------
// One split attempt.

enum class SplitStatus { candidate, too_small, below_min_size, degenerate_fit };

inline const char* to_string(SplitStatus s) {
    switch (s) {
        case SplitStatus::candidate: return "candidate";
        case SplitStatus::too_small: return "too_small";
        case SplitStatus::below_min_size: return "below_min_size";
        case SplitStatus::degenerate_fit: return "degenerate_fit";
    }
    return "unknown";
}

struct SplitOutcome {
    SplitStatus status = SplitStatus::too_small;
    std::string diagnostic;
    std::vector<std::size_t> members_a, members_b;  // subject indices, sorted
    ClusterFit fit_a, fit_b;
    double delta = 0.0;  // term_a + term_b - parent term; excludes the Dirichlet-multinomial part
    std::vector<double> trace;  // split objective after each sweep, at the attempt's alpha
    int sweeps = 0;
    bool stabilized = false;
    bool degenerate_init = false;

    bool is_candidate() const { return status == SplitStatus::candidate; }
};

/// Change in log DirMult when a cluster of n_a + n_b splits into two (K fixed).
inline double dm_split_gain(std::size_t n_a, std::size_t n_b, double alpha) {
    const auto a = static_cast<double>(n_a), b = static_cast<double>(n_b);
    return std::lgamma(a + alpha) + std::lgamma(b + alpha) - std::lgamma(a + b + alpha) - std::lgamma(alpha);
}

struct ClusterNode {
    std::vector<std::size_t> members;
    ClusterParams params;
    double term = 0.0;
};

namespace detail {

/// Coordinate ascent from one initial split: refit both candidates, reassign, repeat.
inline SplitOutcome refine_split(const Model& m, const ClusterNode& node, const RunConfig& run, const MixtureConfig& cfg,
                                 double alpha, const InitSplit& init, std::size_t min_size) {
    SplitOutcome out;
    const std::size_t n = node.members.size();
    out.degenerate_init = init.degenerate;

    // side[r] for r indexing node.members
    std::vector<int> side(n, 0);
    for (auto r : init.side_b) side[r] = 1;

    auto gather = [&](int s) {
        std::vector<std::size_t> idx;
        for (std::size_t r = 0; r < n; ++r)
            if (side[r] == s) idx.push_back(node.members[r]);
        return idx;
    };
    const auto lmm_opt = run.lmm_options();
    auto fit_both = [&](const std::optional<LmmParams>& warm_a, const std::optional<LmmParams>& warm_b) {
        const auto ma = gather(0), mb = gather(1);
        ClusterFit fa, fb;
        parallel_for(2, run.threads, [&](std::size_t k) {
            if (k == 0) fa = fit_cluster(m, ma, cfg, warm_a, lmm_opt);
            else fb = fit_cluster(m, mb, cfg, warm_b, lmm_opt);
        });
        return std::pair{std::move(fa), std::move(fb)};
    };
    auto objective = [&](const ClusterFit& a, const ClusterFit& b, std::size_t na, std::size_t nb) {
        return a.term + b.term + std::lgamma(static_cast<double>(na) + alpha) + std::lgamma(static_cast<double>(nb) + alpha);
    };

    ClusterFit fa, fb;
    try {
        std::tie(fa, fb) = fit_both(node.params.lmm, node.params.lmm);
    } catch (const Error& e) {
        out.status = SplitStatus::degenerate_fit;
        out.diagnostic = e.what();
        return out;
    }
    std::size_t nb = init.side_b.size(), na = n - nb;
    double obj = objective(fa, fb, na, nb);
    out.trace.push_back(obj);

    std::set<std::vector<int>> seen{side};
    for (int sweep = 1; sweep <= run.max_sweeps; ++sweep) {
        out.sweeps = sweep;
        // Per-subject log-likelihood under each candidate, with counts frozen for the sweep.
        std::vector<double> ll_a(n), ll_b(n);
        std::vector<int> proposal(n);
        const std::array<ClusterParams, 2> cands{fa.params, fb.params};
        const std::array<std::size_t, 2> counts{na, nb};
        try {
            parallel_for(n, run.threads, [&](std::size_t r) {
                const auto i = node.members[r];
                ll_a[r] = subject_loglik(m, i, fa.params);
                ll_b[r] = subject_loglik(m, i, fb.params);
                std::array<std::size_t, 2> excl = counts;
                --excl[static_cast<std::size_t>(side[r])];
                proposal[r] = static_cast<int>(assign_subject(m, i, cands, excl, cfg));
            });
        } catch (const Error& e) {
            out.status = SplitStatus::degenerate_fit;
            out.diagnostic = e.what();
            return out;
        }
        if (proposal == side) {
            out.stabilized = true;
            break;
        }
        const auto prop_b = static_cast<std::size_t>(std::count(proposal.begin(), proposal.end(), 1));
        if (prop_b < min_size || n - prop_b < min_size) {
            out.status = SplitStatus::below_min_size;
            out.diagnostic = "reassignment left a candidate with " + std::to_string(std::min(prop_b, n - prop_b)) +
                             " subjects (minimum " + std::to_string(min_size) + ")";
            return out;
        }

        // Objective with params fixed; the Dirichlet-multinomial part couples simultaneous moves.
        auto assignment_objective = [&](const std::vector<int>& s) {
            double f = 0.0;
            std::size_t cb = 0;
            for (std::size_t r = 0; r < n; ++r) {
                f += s[r] == 0 ? ll_a[r] : ll_b[r];
                cb += static_cast<std::size_t>(s[r]);
            }
            return f + std::lgamma(static_cast<double>(n - cb) + alpha) + std::lgamma(static_cast<double>(cb) + alpha);
        };
        std::vector<int> next = proposal;
        if (assignment_objective(next) < assignment_objective(side)) {
            // Synchronous moves interfered; apply them one at a time, best first, keeping only gains.
            next = side;
            std::vector<std::pair<double, std::size_t>> moves;
            for (std::size_t r = 0; r < n; ++r)
                if (proposal[r] != side[r]) moves.emplace_back(-(proposal[r] == 1 ? ll_b[r] - ll_a[r] : ll_a[r] - ll_b[r]), r);
            std::sort(moves.begin(), moves.end());
            double cur = assignment_objective(next);
            for (const auto& mv : moves) {
                auto trial = next;
                trial[mv.second] = proposal[mv.second];
                const auto tb = static_cast<std::size_t>(std::count(trial.begin(), trial.end(), 1));
                if (tb < min_size || n - tb < min_size) continue;
                if (double f = assignment_objective(trial); f > cur) {
                    next = std::move(trial);
                    cur = f;
                }
            }
            if (next == side) {
                out.stabilized = true;
                break;
            }
        }
        if (seen.contains(next)) break;  // cycle: current iterate is the best seen
        seen.insert(next);

        const std::vector<int> prev_side = side;
        side = std::move(next);
        nb = static_cast<std::size_t>(std::count(side.begin(), side.end(), 1));
        na = n - nb;
        try {
            auto [a2, b2] = fit_both(fa.params.lmm, fb.params.lmm);
            fa = std::move(a2);
            fb = std::move(b2);
        } catch (const Error& e) {
            out.status = SplitStatus::degenerate_fit;
            out.diagnostic = e.what();
            return out;
        }
        obj = objective(fa, fb, na, nb);
        out.trace.push_back(obj);
    }

    out.status = SplitStatus::candidate;
    out.members_a = gather(0);
    out.members_b = gather(1);
    out.delta = fa.term + fb.term - node.term;
    out.fit_a = std::move(fa);
    out.fit_b = std::move(fb);
    return out;
}

inline bool same_split(const InitSplit& x, const InitSplit& y) {
    auto sorted = [](std::vector<std::size_t> v) {
        std::sort(v.begin(), v.end());
        return v;
    };
    const auto xa = sorted(x.side_a), ya = sorted(y.side_a), yb = sorted(y.side_b);
    return xa == ya || xa == yb;
}

}  // namespace detail

/// Splits a cluster in two. Coordinate ascent starts from the heuristic split of the full
/// feature vector and, when they differ, also from splits of the longitudinal-only and
/// survival-only features; the start reaching the highest split objective wins. If no
/// start yields a candidate, the outcome of the full-feature start is reported.
inline SplitOutcome attempt_split(const Model& m, const ClusterNode& node, const RunConfig& run,
                                  const MixtureConfig& cfg, double alpha, std::uint64_t seed) {
    const std::size_t min_size = run.effective_min_size(m);
    const std::size_t n = node.members.size();
    if (n < 2 * min_size) {
        SplitOutcome out;
        out.status = SplitStatus::too_small;
        out.diagnostic = "cluster of " + std::to_string(n) + " is below twice the minimum size " + std::to_string(min_size);
        return out;
    }

    const Matrix features = feature_matrix(m, node.members);
    const auto longitudinal_cols = 2 * m.h;
    std::vector<InitSplit> inits{init_split(features, min_size, run.split_init, seed)};
    for (const Matrix& sub : {Matrix(features.leftCols(longitudinal_cols)),
                              Matrix(features.rightCols(features.cols() - longitudinal_cols))}) {
        if (sub.cols() == 0) continue;
        auto alt = init_split(sub, min_size, run.split_init, seed);
        if (alt.degenerate) continue;
        if (std::none_of(inits.begin(), inits.end(), [&](const InitSplit& x) { return detail::same_split(x, alt); }))
            inits.push_back(std::move(alt));
    }

    std::vector<SplitOutcome> outcomes(inits.size());
    for (std::size_t k = 0; k < inits.size(); ++k)
        outcomes[k] = detail::refine_split(m, node, run, cfg, alpha, inits[k], min_size);
    std::size_t best = 0;
    for (std::size_t k = 1; k < outcomes.size(); ++k) {
        if (!outcomes[k].is_candidate()) continue;
        if (!outcomes[best].is_candidate() || outcomes[k].trace.back() > outcomes[best].trace.back()) best = k;
    }
    return std::move(outcomes[best]);
}

// ---------------------------------------------------------------------------
// Driver.

struct DendrogramNode {
    int id = 0;
    int parent = -1;
    int left = -1, right = -1;
    std::vector<std::size_t> members;
    ClusterParams params;
    double term = 0.0;
    double log_posterior = 0.0;  // full objective when this node came into existence
    double alpha = 0.0;          // alpha at which it was created (root: first grid value)
    std::size_t level = 0;       // index of the recorded partition that introduced it
};

struct PartitionLevel {
    double alpha = 0.0;
    double log_posterior = 0.0;
    std::vector<int> leaves;            // node ids, ordered by label
    std::vector<std::size_t> labels;    // 1-based label per subject
    int split_node = -1;                // node that was split to reach this level
};

struct Dendrogram {
    std::vector<DendrogramNode> nodes;
    std::vector<PartitionLevel> levels;
    std::vector<std::pair<double, double>> alpha_trace;  // (alpha, objective at the end of that alpha)
    std::size_t min_cluster_size = 0;
    bool numerical_failure = false;
    std::string diagnostic;

    const PartitionLevel& final_level() const { return levels.back(); }
};

/// Full objective for the given leaves: cluster terms plus log DirMult with K components.
inline double leaves_objective(const Dendrogram& d, const std::vector<int>& leaves, std::size_t K, double alpha) {
    std::vector<std::size_t> counts(std::max(K, leaves.size()), 0);
    double total = 0.0;
    for (std::size_t k = 0; k < leaves.size(); ++k) {
        const auto& node = d.nodes[static_cast<std::size_t>(leaves[k])];
        counts[k] = node.members.size();
        total += node.term;
    }
    return total + log_dirichlet_multinomial(counts, alpha);
}

inline PartitionLevel make_level(const Dendrogram& d, std::vector<int> leaves, std::size_t n, std::size_t K, double alpha) {
    std::sort(leaves.begin(), leaves.end(), [&](int a, int b) {
        return d.nodes[static_cast<std::size_t>(a)].members.front() < d.nodes[static_cast<std::size_t>(b)].members.front();
    });
    PartitionLevel lv;
    lv.alpha = alpha;
    lv.leaves = leaves;
    lv.labels.assign(n, 0);
    for (std::size_t k = 0; k < leaves.size(); ++k)
        for (auto i : d.nodes[static_cast<std::size_t>(leaves[k])].members) lv.labels[i] = k + 1;
    lv.log_posterior = leaves_objective(d, lv.leaves, K, alpha);
    return lv;
}

inline std::uint64_t node_seed(std::uint64_t seed, int node_id) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(node_id)};
    std::array<std::uint32_t, 2> raw{};
    seq.generate(raw.begin(), raw.end());
    return (static_cast<std::uint64_t>(raw[0]) << 32) | raw[1];
}

/// Run the divisive search. Throws on failure of the root fit; later numerical
/// failures stop the search and are reported through Dendrogram::numerical_failure.
inline Dendrogram run_dhbc(const Model& m, const RunConfig& run, const MixtureConfig& cfg_in) {
    run.validate();
    if (m.size() == 0) throw ValidationError("cohort is empty");
    MixtureConfig cfg = cfg_in;
    const std::size_t K = std::max(cfg.K, m.size());
    cfg.K = K;

    Dendrogram d;
    d.min_cluster_size = run.effective_min_size(m);

    DendrogramNode root;
    root.members.resize(m.size());
    std::iota(root.members.begin(), root.members.end(), std::size_t{0});
    auto root_fit = fit_cluster(m, root.members, cfg, std::nullopt, run.lmm_options());
    root.params = std::move(root_fit.params);
    root.term = root_fit.term;
    if (!std::isfinite(root.term)) throw DegenerateFit("root cluster has non-finite log posterior");
    root.alpha = run.alpha_grid.front();
    d.nodes.push_back(std::move(root));
    std::vector<int> leaves{0};
    d.levels.push_back(make_level(d, leaves, m.size(), K, run.alpha_grid.front()));
    d.nodes[0].log_posterior = d.levels.back().log_posterior;

    try {
        for (double alpha : run.alpha_grid) {
            std::map<int, SplitOutcome> cache;  // leaf id -> attempt at this alpha
            while (leaves.size() < run.max_clusters) {
                std::vector<int> todo;
                for (int id : leaves)
                    if (!cache.contains(id)) todo.push_back(id);
                std::vector<SplitOutcome> results(todo.size());
                // leaf-level parallelism; inner work runs single-threaded to keep scheduling simple
                RunConfig inner = run;
                inner.threads = todo.size() > 1 ? 1 : run.threads;
                parallel_for(todo.size(), run.threads, [&](std::size_t k) {
                    const auto& node = d.nodes[static_cast<std::size_t>(todo[k])];
                    ClusterNode cn{node.members, node.params, node.term};
                    results[k] = attempt_split(m, cn, inner, cfg, alpha, node_seed(run.seed, todo[k]));
                });
                for (std::size_t k = 0; k < todo.size(); ++k) cache.emplace(todo[k], std::move(results[k]));

                int best_leaf = -1;
                double best_gain = 1e-9;
                for (int id : leaves) {
                    const auto& o = cache.at(id);
                    if (!o.is_candidate()) continue;
                    const double gain = o.delta + dm_split_gain(o.members_a.size(), o.members_b.size(), alpha);
                    if (gain > best_gain) {
                        best_gain = gain;
                        best_leaf = id;
                    }
                }
                if (best_leaf < 0) break;

                auto& o = cache.at(best_leaf);
                const std::size_t level_index = d.levels.size();
                auto make_child = [&](std::vector<std::size_t> members, ClusterFit fit) {
                    DendrogramNode c;
                    c.id = static_cast<int>(d.nodes.size());
                    c.parent = best_leaf;
                    c.members = std::move(members);
                    c.params = std::move(fit.params);
                    c.term = fit.term;
                    c.alpha = alpha;
                    c.level = level_index;
                    d.nodes.push_back(std::move(c));
                    return d.nodes.back().id;
                };
                const int a = make_child(std::move(o.members_a), std::move(o.fit_a));
                const int b = make_child(std::move(o.members_b), std::move(o.fit_b));
                d.nodes[static_cast<std::size_t>(best_leaf)].left = a;
                d.nodes[static_cast<std::size_t>(best_leaf)].right = b;
                cache.erase(best_leaf);
                std::erase(leaves, best_leaf);
                leaves.push_back(a);
                leaves.push_back(b);
                auto lv = make_level(d, leaves, m.size(), K, alpha);
                lv.split_node = best_leaf;
                d.nodes[static_cast<std::size_t>(a)].log_posterior = lv.log_posterior;
                d.nodes[static_cast<std::size_t>(b)].log_posterior = lv.log_posterior;
                d.levels.push_back(std::move(lv));
            }
            d.alpha_trace.emplace_back(alpha, leaves_objective(d, leaves, K, alpha));
            if (leaves.size() >= run.max_clusters) break;
        }
    } catch (const Error& e) {
        d.numerical_failure = true;
        d.diagnostic = e.what();
    }
    return d;
}

}  // namespace dhbc
