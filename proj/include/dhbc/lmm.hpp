#pragma once

// MAP fitting of a cluster-level multivariate linear mixed model
//
//   Y_i ~ MN(X_i B, W_i G W_i' + s2 I, Omega)
//
// by coordinate ascent: {B, G, s2} on whitened data Y Omega^{-1/2}, a closed-form
// rescaling along the (V, Omega) scale ridge, and the closed-form Omega update.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <boost/math/tools/minima.hpp>

#include "dhbc/errors.hpp"
#include "dhbc/matnorm.hpp"

namespace dhbc {

struct BasisFunction {
    std::string name;
    std::function<double(double)> eval;
};

/// Fixed and random-effect bases evaluated at a subject's visit times.
struct DesignSpec {
    std::vector<BasisFunction> fixed_basis;
    std::vector<BasisFunction> random_basis;

    Eigen::Index p() const { return static_cast<Eigen::Index>(fixed_basis.size()); }
    Eigen::Index q() const { return static_cast<Eigen::Index>(random_basis.size()); }

    /// Powers 0..fixed_degree for fixed effects, 0..random_degree for random effects.
    static DesignSpec polynomial(int fixed_degree, int random_degree) {
        if (fixed_degree < 0 || random_degree < 0)
            throw std::invalid_argument("polynomial degrees must be nonnegative");
        auto power = [](int k) {
            return BasisFunction{k == 0 ? "1" : (k == 1 ? "t" : "t^" + std::to_string(k)),
                                 [k](double t) { return std::pow(t, k); }};
        };
        DesignSpec spec;
        for (int k = 0; k <= fixed_degree; ++k) spec.fixed_basis.push_back(power(k));
        for (int k = 0; k <= random_degree; ++k) spec.random_basis.push_back(power(k));
        return spec;
    }

    /// Linear time with a random intercept.
    static DesignSpec linear_random_intercept() { return polynomial(1, 0); }
};

struct Design {
    Matrix x;
    Matrix w;
};

inline Design build_design(std::span<const double> times, const DesignSpec& spec) {
    if (times.empty()) throw std::invalid_argument("build_design: empty time vector");
    if (spec.fixed_basis.empty() || spec.random_basis.empty())
        throw std::invalid_argument("build_design: empty basis");
    const auto n = static_cast<Eigen::Index>(times.size());
    Design d{Matrix(n, spec.p()), Matrix(n, spec.q())};
    for (Eigen::Index t = 0; t < n; ++t) {
        const double tt = times[static_cast<std::size_t>(t)];
        if (!std::isfinite(tt)) throw std::invalid_argument("build_design: non-finite time");
        if (t > 0 && tt < times[static_cast<std::size_t>(t - 1)])
            throw std::invalid_argument("build_design: times must be nondecreasing");
        for (Eigen::Index j = 0; j < spec.p(); ++j) d.x(t, j) = spec.fixed_basis[static_cast<std::size_t>(j)].eval(tt);
        for (Eigen::Index j = 0; j < spec.q(); ++j) d.w(t, j) = spec.random_basis[static_cast<std::size_t>(j)].eval(tt);
    }
    return d;
}

struct LmmParams {
    Matrix b;      // p x H
    Matrix g;      // q x q
    double sigma2 = 1.0;
    Matrix omega;  // H x H
};

struct LmmPriors {
    Matrix psi;  // H x H, IW scale on Omega
    double nu = 0.0;
    Matrix g_psi;  // q x q, IW scale on G
    double g_nu = 0.0;
    double sigma2_shape = 2.0;
    double sigma2_rate = 1.0;
    double b_precision = 0.0;  // isotropic Gaussian on vec(B); 0 means flat (improper)

    static LmmPriors defaults(Eigen::Index h, Eigen::Index q) {
        LmmPriors pr;
        pr.psi = Matrix::Identity(h, h);
        pr.nu = static_cast<double>(h) + 2.0;
        pr.g_psi = Matrix::Identity(q, q);
        pr.g_nu = static_cast<double>(q) + 2.0;
        pr.b_precision = 0.01;
        return pr;
    }

    void validate(Eigen::Index h, Eigen::Index q) const {
        if (psi.rows() != h || psi.cols() != h) throw DimensionMismatch("prior Psi must be H x H");
        if (g_psi.rows() != q || g_psi.cols() != q) throw DimensionMismatch("prior g_Psi must be q x q");
        if (!(nu > static_cast<double>(h) - 1.0)) throw std::invalid_argument("prior nu must exceed H - 1");
        if (!(g_nu > static_cast<double>(q) - 1.0)) throw std::invalid_argument("prior g_nu must exceed q - 1");
        if (!(sigma2_shape > 0.0) || !(sigma2_rate > 0.0))
            throw std::invalid_argument("sigma2 prior shape and rate must be positive");
        if (b_precision < 0.0) throw std::invalid_argument("B prior precision must be nonnegative");
        (void)detail::checked_llt(psi, "prior Psi");
        (void)detail::checked_llt(g_psi, "prior g_Psi");
    }
};

/// One subject's longitudinal block with its evaluated design.
struct LmmSubject {
    Matrix y;  // n_i x H
    Matrix x;  // n_i x p
    Matrix w;  // n_i x q
};

inline double lmm_subject_loglik(const Matrix& y, const Matrix& x, const Matrix& w, const LmmParams& p) {
    const auto n = y.rows();
    const auto h = y.cols();
    if (n == 0) return 0.0;
    if (x.rows() != n || w.rows() != n || x.cols() != p.b.rows() || p.b.cols() != h ||
        p.omega.rows() != h || w.cols() != p.g.rows())
        throw DimensionMismatch("lmm_subject_loglik: inconsistent dimensions");
    const Woodbury v(w, p.g, p.sigma2);
    const Matrix r = y - x * p.b;
    auto omega = detail::checked_llt(p.omega, "Omega");
    const double quad = omega.solve(v.quad(r)).trace();
    return -0.5 * (static_cast<double>(n * h) * kLog2Pi + static_cast<double>(h) * v.logdet() +
                   static_cast<double>(n) * detail::llt_logdet(omega) + quad);
}

inline double lmm_subject_loglik(const LmmSubject& s, const LmmParams& p) {
    return lmm_subject_loglik(s.y, s.x, s.w, p);
}

/// log pi(B) + log pi(G) + log pi(s2) + log pi(Omega).
inline double lmm_log_prior(const LmmParams& p, const LmmPriors& pr) {
    const double a = pr.sigma2_shape;
    const double r = pr.sigma2_rate;
    double lp = a * std::log(r) - std::lgamma(a) - (a + 1.0) * std::log(p.sigma2) - r / p.sigma2;
    lp += log_inv_wishart(p.g, pr.g_psi, pr.g_nu);
    lp += log_inv_wishart(p.omega, pr.psi, pr.nu);
    if (pr.b_precision > 0.0) {
        const auto k = static_cast<double>(p.b.size());
        lp += 0.5 * k * (std::log(pr.b_precision) - kLog2Pi) - 0.5 * pr.b_precision * p.b.squaredNorm();
    }
    return lp;
}

using SubjectRefs = std::vector<const LmmSubject*>;

inline SubjectRefs subject_refs(std::span<const LmmSubject> subjects) {
    SubjectRefs refs;
    refs.reserve(subjects.size());
    for (const auto& s : subjects) refs.push_back(&s);
    return refs;
}

inline double lmm_log_posterior(const SubjectRefs& subjects, const LmmParams& p, const LmmPriors& pr) {
    double ll = 0.0;
    for (const auto* s : subjects) ll += lmm_subject_loglik(*s, p);
    return ll + lmm_log_prior(p, pr);
}

/// Mode of the Omega conditional given Q = sum_i R_i' V_i^-1 R_i over n_rows stacked rows:
/// (Psi + Q) / (nu + n_rows + H + 1).
inline Matrix update_omega(const Matrix& weighted_cross, const LmmPriors& pr, Eigen::Index n_rows) {
    if (weighted_cross.rows() != pr.psi.rows() || weighted_cross.cols() != pr.psi.cols())
        throw DimensionMismatch("update_omega: cross-product dimension != H");
    const auto h = static_cast<double>(pr.psi.rows());
    Matrix psi_hat = pr.psi + 0.5 * (weighted_cross + weighted_cross.transpose());
    return psi_hat / (pr.nu + static_cast<double>(n_rows) + h + 1.0);
}

/// Same update from per-subject residual blocks and their row-covariance operators.
inline Matrix update_omega(std::span<const Matrix> residuals, std::span<const Woodbury> row_ops,
                           const LmmPriors& pr) {
    if (residuals.size() != row_ops.size()) throw DimensionMismatch("update_omega: block count mismatch");
    Matrix q = Matrix::Zero(pr.psi.rows(), pr.psi.cols());
    Eigen::Index n_rows = 0;
    for (std::size_t i = 0; i < residuals.size(); ++i) {
        q += row_ops[i].quad(residuals[i]);
        n_rows += residuals[i].rows();
    }
    return update_omega(q, pr, n_rows);
}

struct LmmFitOptions {
    double tol = 1e-6;
    int max_iter = 200;
    double inner_tol = 1e-8;
    int inner_max_iter = 100;
    bool fix_omega = false;
};

struct LmmFit {
    LmmParams params;
    double log_posterior = 0.0;
    std::vector<double> trace;
    bool converged = false;
    int iterations = 0;
};

namespace detail {

struct LmmDims {
    Eigen::Index p, q, h, n_rows;
    std::size_t m;
};

inline LmmDims check_subjects(const SubjectRefs& subjects) {
    if (subjects.empty()) throw DegenerateFit("LMM fit requires at least one subject");
    const auto& f = *subjects.front();
    LmmDims d{f.x.cols(), f.w.cols(), f.y.cols(), 0, subjects.size()};
    for (const auto* s : subjects) {
        if (s->x.cols() != d.p || s->w.cols() != d.q || s->y.cols() != d.h || s->x.rows() != s->y.rows() ||
            s->w.rows() != s->y.rows())
            throw DimensionMismatch("LMM subjects have inconsistent dimensions");
        d.n_rows += s->y.rows();
    }
    if (d.n_rows == 0) throw DegenerateFit("LMM fit requires at least one visit");
    Matrix xtx = Matrix::Zero(d.p, d.p);
    for (const auto* s : subjects) xtx.noalias() += s->x.transpose() * s->x;
    Eigen::SelfAdjointEigenSolver<Matrix> es(xtx, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() <= 1e-10 * std::max(1.0, es.eigenvalues().maxCoeff()))
        throw DegenerateFit("fixed-effect design is not identifiable from the cluster's visits");
    return d;
}

// Content-based order so that every sum over subjects is independent of input order.
inline SubjectRefs canonical_order(SubjectRefs subjects) {
    auto lex = [](const Matrix& a, const Matrix& b) {
        return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
    };
    std::stable_sort(subjects.begin(), subjects.end(), [&](const LmmSubject* a, const LmmSubject* b) {
        if (a->y.rows() != b->y.rows()) return a->y.rows() < b->y.rows();
        if (lex(a->y, b->y)) return true;
        if (lex(b->y, a->y)) return false;
        if (lex(a->x, b->x)) return true;
        if (lex(b->x, a->x)) return false;
        return lex(a->w, b->w);
    });
    return subjects;
}

// Objective in (B, G, s2) for fixed Omega, up to an Omega-only constant.
inline double conditional_objective(const SubjectRefs& subjects, const Matrix& b, const Matrix& g, double s2,
                                    const Matrix& omega_inv_sqrt, const LmmPriors& pr) {
    const auto h = static_cast<double>(omega_inv_sqrt.rows());
    double f = 0.0;
    for (const auto* s : subjects) {
        if (s->y.rows() == 0) continue;
        const Woodbury v(s->w, g, s2);
        const Matrix rt = (s->y - s->x * b) * omega_inv_sqrt;
        f += -0.5 * (h * v.logdet() + v.quad(rt).trace());
    }
    const double a = pr.sigma2_shape;
    f += -(a + 1.0) * std::log(s2) - pr.sigma2_rate / s2;
    f += log_inv_wishart(g, pr.g_psi, pr.g_nu);
    if (pr.b_precision > 0.0) f -= 0.5 * pr.b_precision * b.squaredNorm();
    return f;
}

// Exact GLS maximizer of B given (G, s2, Omega).
inline Matrix gls_update(const SubjectRefs& subjects, const LmmParams& p, const LmmPriors& pr) {
    const auto pdim = p.b.rows();
    const auto h = p.b.cols();
    Matrix a = Matrix::Zero(pdim, pdim);
    Matrix c = Matrix::Zero(pdim, h);
    for (const auto* s : subjects) {
        if (s->y.rows() == 0) continue;
        const Woodbury v(s->w, p.g, p.sigma2);
        const Matrix vx = v.apply(s->x);
        a += s->x.transpose() * vx;
        c += vx.transpose() * s->y;
    }
    a = 0.5 * (a + a.transpose());
    if (pr.b_precision <= 0.0) {
        Eigen::LLT<Matrix> llt(a);
        if (llt.info() != Eigen::Success || llt.matrixLLT().diagonal().minCoeff() <= 1e-12 * std::max(1.0, a.diagonal().maxCoeff()))
            throw DegenerateFit("fixed-effect design is not identifiable in this cluster");
        return llt.solve(c);
    }
    // A B + tau B Omega = C, solved column-wise in the eigenbasis of Omega.
    Eigen::SelfAdjointEigenSolver<Matrix> es(p.omega);
    const Matrix& qv = es.eigenvectors();
    const Matrix cq = c * qv;
    Matrix bq(pdim, h);
    for (Eigen::Index j = 0; j < h; ++j) {
        Matrix lhs = a + pr.b_precision * es.eigenvalues()(j) * Matrix::Identity(pdim, pdim);
        bq.col(j) = lhs.llt().solve(cq.col(j));
    }
    return bq * qv.transpose();
}

// One EM step for G on whitened residuals; nondecreasing in the marginal objective.
inline Matrix em_g_update(const SubjectRefs& subjects, const LmmParams& p, const Matrix& omega_inv_sqrt,
                          const LmmPriors& pr) {
    const auto q = p.g.rows();
    const auto h = static_cast<double>(p.b.cols());
    Matrix acc = pr.g_psi;
    double count = 0.0;
    for (const auto* s : subjects) {
        if (s->y.rows() == 0) continue;
        const Woodbury v(s->w, p.g, p.sigma2);
        const Matrix rt = (s->y - s->x * p.b) * omega_inv_sqrt;
        const Matrix cov = v.capacitance_inverse();
        const Matrix mean = v.capacitance().solve(s->w.transpose() * rt) / p.sigma2;  // q x H
        acc += mean * mean.transpose() + h * cov;
        count += h;
    }
    Matrix g = acc / (pr.g_nu + static_cast<double>(q) + 1.0 + count);
    return 0.5 * (g + g.transpose());
}

// Closed-form rescale (G, s2, Omega) -> (cG, c s2, Omega / c); the likelihood is invariant,
// so c maximizes the priors alone: Q c^2 - (D - A) c - P = 0.
inline double ridge_scale(const LmmParams& p, const LmmPriors& pr) {
    const auto q = static_cast<double>(p.g.rows());
    const auto h = static_cast<double>(p.omega.rows());
    const double a = (pr.sigma2_shape + 1.0) + 0.5 * q * (pr.g_nu + q + 1.0);
    const double d = 0.5 * h * (pr.nu + h + 1.0);
    const double pp = pr.sigma2_rate / p.sigma2 + 0.5 * p.g.llt().solve(pr.g_psi).trace();
    const double qq = 0.5 * p.omega.llt().solve(pr.psi).trace();
    const double lin = d - a;
    return (lin + std::sqrt(lin * lin + 4.0 * qq * pp)) / (2.0 * qq);
}

}  // namespace detail

/// Starting point: pooled OLS for B, residual column covariance for Omega,
/// G = 0.1 I and s2 = variance of the whitened residuals.
inline LmmParams init_lmm_params(const SubjectRefs& input, const LmmPriors& pr) {
    const auto subjects = detail::canonical_order(input);
    const auto d = detail::check_subjects(subjects);
    Matrix xtx = Matrix::Zero(d.p, d.p);
    Matrix xty = Matrix::Zero(d.p, d.h);
    for (const auto* s : subjects) {
        xtx += s->x.transpose() * s->x;
        xty += s->x.transpose() * s->y;
    }
    if (pr.b_precision > 0.0) xtx += pr.b_precision * Matrix::Identity(d.p, d.p);
    Eigen::LDLT<Matrix> ldlt(xtx);
    if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 1e-12 * std::max(1.0, xtx.diagonal().maxCoeff()))
        throw DegenerateFit("pooled OLS design is rank deficient");
    LmmParams p;
    p.b = ldlt.solve(xty);
    Matrix cross = Matrix::Zero(d.h, d.h);
    for (const auto* s : subjects) {
        const Matrix r = s->y - s->x * p.b;
        cross += r.transpose() * r;
    }
    Matrix omega = cross / static_cast<double>(d.n_rows);
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (omega + omega.transpose()));
    const double scale = std::max(es.eigenvalues().maxCoeff(), 1e-8);
    Vector ev = es.eigenvalues().cwiseMax(1e-6 * scale);
    p.omega = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    p.omega = 0.5 * (p.omega + p.omega.transpose());
    const Matrix ois = inv_sqrt_spd(p.omega);
    double ss = 0.0;
    for (const auto* s : subjects) ss += ((s->y - s->x * p.b) * ois).squaredNorm();
    p.sigma2 = std::max(ss / static_cast<double>(d.n_rows * d.h), 1e-8);
    p.g = 0.1 * Matrix::Identity(d.q, d.q);
    return p;
}

inline LmmFit fit_lmm_map(const SubjectRefs& input, const LmmPriors& pr, const LmmParams& init,
                          const LmmFitOptions& opt = {}) {
    const auto subjects = detail::canonical_order(input);
    const auto d = detail::check_subjects(subjects);
    pr.validate(d.h, d.q);
    if (init.b.rows() != d.p || init.b.cols() != d.h || init.g.rows() != d.q || init.omega.rows() != d.h)
        throw DimensionMismatch("fit_lmm_map: initial parameters do not match the design");

    LmmFit fit;
    LmmParams p = init;
    double obj = lmm_log_posterior(subjects, p, pr);
    if (!std::isfinite(obj)) throw DegenerateFit("initial LMM parameters have non-finite log posterior");
    fit.trace.push_back(obj);

    for (int it = 1; it <= opt.max_iter; ++it) {
        const Matrix ois = inv_sqrt_spd(p.omega);
        auto cond = [&](const LmmParams& q) {
            return detail::conditional_objective(subjects, q.b, q.g, q.sigma2, ois, pr);
        };
        double inner = cond(p);
        for (int k = 0; k < opt.inner_max_iter; ++k) {
            const double start = inner;

            LmmParams cand = p;
            cand.b = detail::gls_update(subjects, p, pr);
            if (double f = cond(cand); f >= inner) { p = std::move(cand); inner = f; }

            cand = p;
            cand.g = detail::em_g_update(subjects, p, ois, pr);
            try {
                if (double f = cond(cand); f >= inner) { p = std::move(cand); inner = f; }
            } catch (const DegenerateCovariance&) {
            }

            auto neg = [&](double log_s2) {
                return -detail::conditional_objective(subjects, p.b, p.g, std::exp(log_s2), ois, pr);
            };
            const double l0 = std::log(p.sigma2);
            const auto [best, val] = boost::math::tools::brent_find_minima(neg, l0 - 6.0, l0 + 6.0, 50);
            if (-val >= inner) { p.sigma2 = std::exp(best); inner = -val; }

            if (std::abs(inner - start) < opt.inner_tol) break;
        }

        if (!opt.fix_omega) {
            LmmParams cand = p;
            const double c = detail::ridge_scale(p, pr);
            cand.g *= c;
            cand.sigma2 *= c;
            cand.omega /= c;
            const double before = lmm_log_posterior(subjects, p, pr);
            if (lmm_log_posterior(subjects, cand, pr) >= before) p = std::move(cand);

            Matrix q = Matrix::Zero(d.h, d.h);
            for (const auto* s : subjects) {
                if (s->y.rows() == 0) continue;
                const Woodbury v(s->w, p.g, p.sigma2);
                q += v.quad(s->y - s->x * p.b);
            }
            cand = p;
            cand.omega = update_omega(q, pr, d.n_rows);
            if (lmm_log_posterior(subjects, cand, pr) >= lmm_log_posterior(subjects, p, pr)) p = std::move(cand);
        }

        const double next = lmm_log_posterior(subjects, p, pr);
        fit.trace.push_back(next);
        fit.iterations = it;
        const bool done = std::abs(next - obj) < opt.tol;
        obj = next;
        if (done) {
            fit.converged = true;
            break;
        }
    }
    fit.params = std::move(p);
    fit.log_posterior = obj;
    return fit;
}

inline LmmFit fit_lmm_map(std::span<const LmmSubject> subjects, const LmmPriors& pr, const LmmParams& init,
                          const LmmFitOptions& opt = {}) {
    return fit_lmm_map(subject_refs(subjects), pr, init, opt);
}

}  // namespace dhbc
