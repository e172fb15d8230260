#pragma once

// Dense kernels for matrix-normal densities: log-densities, symmetric inverse
// square roots, whitening and Woodbury-structured inverses of W G W' + s2 I.

#include <cmath>
#include <numbers>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "dhbc/errors.hpp"

namespace dhbc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;  // log(2*pi)
inline constexpr double kEigenFloor = 1e-10;

namespace detail {

inline void require_square(const Matrix& m, const char* what) {
    if (m.rows() != m.cols())
        throw DimensionMismatch(std::string(what) + " is not square");
}

inline Eigen::LLT<Matrix> checked_llt(const Matrix& m, const char* what) {
    Eigen::LLT<Matrix> llt(m);
    if (llt.info() != Eigen::Success)
        throw DegenerateCovariance(std::string(what) + " is not positive definite");
    return llt;
}

inline double llt_logdet(const Eigen::LLT<Matrix>& llt) {
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

}  // namespace detail

/// Log-determinant of an SPD matrix via Cholesky.
inline double logdet_spd(const Matrix& m) {
    detail::require_square(m, "matrix");
    return detail::llt_logdet(detail::checked_llt(m, "matrix"));
}

/// Mean plus row (n x n) and column (H x H) covariances of MN_{n,H}.
struct MatNormParams {
    Matrix mean;
    Matrix row_cov;
    Matrix col_cov;
};

/// log MN(y; mean, row_cov, col_cov), equivalently log N(vec y; vec mean, col_cov (x) row_cov).
inline double matnorm_logpdf(const Matrix& y, const MatNormParams& p) {
    const auto n = y.rows();
    const auto h = y.cols();
    if (p.mean.rows() != n || p.mean.cols() != h || p.row_cov.rows() != n ||
        p.row_cov.cols() != n || p.col_cov.rows() != h || p.col_cov.cols() != h)
        throw DimensionMismatch("matnorm_logpdf: inconsistent dimensions");
    if (n == 0 || h == 0) return 0.0;

    auto row = detail::checked_llt(p.row_cov, "row covariance");
    auto col = detail::checked_llt(p.col_cov, "column covariance");
    const Matrix resid = y - p.mean;
    // tr(C^-1 R' A^-1 R)
    const Matrix a_inv_r = row.solve(resid);
    const Matrix q = resid.transpose() * a_inv_r;
    const double quad = col.solve(q).trace();
    return -0.5 * (static_cast<double>(n * h) * kLog2Pi + static_cast<double>(h) * detail::llt_logdet(row) +
                   static_cast<double>(n) * detail::llt_logdet(col) + quad);
}

namespace detail {

inline Eigen::SelfAdjointEigenSolver<Matrix> checked_eigen(const Matrix& m) {
    require_square(m, "matrix");
    if (m.rows() == 0) throw DimensionMismatch("empty matrix");
    Eigen::SelfAdjointEigenSolver<Matrix> es(m);
    if (es.info() != Eigen::Success) throw DegenerateCovariance("eigendecomposition failed");
    const double top = es.eigenvalues().maxCoeff();
    if (!(top > 0.0) || es.eigenvalues().minCoeff() < kEigenFloor * top)
        throw DegenerateCovariance("eigenvalue below floor");
    return es;
}

}  // namespace detail

/// Symmetric R with R m R = I, from the eigendecomposition of m.
inline Matrix inv_sqrt_spd(const Matrix& m) {
    auto es = detail::checked_eigen(m);
    const Matrix& v = es.eigenvectors();
    Matrix r = v * es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() * v.transpose();
    return 0.5 * (r + r.transpose());
}

/// Symmetric square root S with S S = m.
inline Matrix sqrt_spd(const Matrix& m) {
    auto es = detail::checked_eigen(m);
    const Matrix& v = es.eigenvectors();
    Matrix s = v * es.eigenvalues().cwiseSqrt().asDiagonal() * v.transpose();
    return 0.5 * (s + s.transpose());
}

/// y * omega^{-1/2}: makes the columns of a matrix-normal draw independent.
inline Matrix whiten(const Matrix& y, const Matrix& omega) {
    if (omega.rows() != y.cols()) throw DimensionMismatch("whiten: omega dimension != columns of y");
    return y * inv_sqrt_spd(omega);
}

/// Inverse of whiten: y * omega^{1/2}.
inline Matrix unwhiten(const Matrix& y, const Matrix& omega) {
    if (omega.rows() != y.cols()) throw DimensionMismatch("unwhiten: omega dimension != columns of y");
    return y * sqrt_spd(omega);
}

/// Operator view of A = W G W' + s2 I that never forms an N x N inverse.
///
/// With K = G^-1 + W'W / s2:
///   A^-1 = I/s2 - W K^-1 W' / s2^2
///   log|A| = N log s2 + log|G| + log|K|
class Woodbury {
public:
    Woodbury(Matrix w, const Matrix& g, double sigma2) : w_(std::move(w)), sigma2_(sigma2) {
        if (!(sigma2 > 0.0) || !std::isfinite(sigma2))
            throw DegenerateCovariance("Woodbury: sigma2 must be positive");
        detail::require_square(g, "G");
        if (g.rows() != w_.cols()) throw DimensionMismatch("Woodbury: G dimension != columns of W");
        auto g_llt = detail::checked_llt(g, "random-effect covariance G");
        logdet_g_ = detail::llt_logdet(g_llt);
        const Matrix g_inv = g_llt.solve(Matrix::Identity(g.rows(), g.cols()));
        k_llt_ = detail::checked_llt(g_inv + w_.transpose() * w_ / sigma2_, "Woodbury capacitance");
    }

    Eigen::Index size() const { return w_.rows(); }
    double sigma2() const { return sigma2_; }

    double logdet() const {
        return static_cast<double>(w_.rows()) * std::log(sigma2_) + logdet_g_ + detail::llt_logdet(k_llt_);
    }

    /// A^-1 x for an N x m block.
    Matrix apply(const Matrix& x) const {
        if (x.rows() != w_.rows()) throw DimensionMismatch("Woodbury::apply: row mismatch");
        const Matrix wtx = w_.transpose() * x;
        return x / sigma2_ - w_ * k_llt_.solve(wtx) / (sigma2_ * sigma2_);
    }

    /// x' A^-1 z, computed without an N x N intermediate.
    Matrix quad(const Matrix& x, const Matrix& z) const {
        if (x.rows() != w_.rows() || z.rows() != w_.rows())
            throw DimensionMismatch("Woodbury::quad: row mismatch");
        const Matrix wtx = w_.transpose() * x;
        const Matrix wtz = w_.transpose() * z;
        return x.transpose() * z / sigma2_ - wtx.transpose() * k_llt_.solve(wtz) / (sigma2_ * sigma2_);
    }

    Matrix quad(const Matrix& x) const { return quad(x, x); }

    /// Dense A^-1; for tests and small N only.
    Matrix inverse() const {
        return apply(Matrix::Identity(w_.rows(), w_.rows()));
    }

    /// Posterior covariance of a random-effect column, K^-1 = (G^-1 + W'W/s2)^-1.
    Matrix capacitance_inverse() const {
        return k_llt_.solve(Matrix::Identity(w_.cols(), w_.cols()));
    }

    const Eigen::LLT<Matrix>& capacitance() const { return k_llt_; }
    const Matrix& w() const { return w_; }

private:
    Matrix w_;
    double sigma2_;
    double logdet_g_ = 0.0;
    Eigen::LLT<Matrix> k_llt_;
};

inline Matrix woodbury_inverse(const Matrix& w, const Matrix& g, double sigma2) {
    return Woodbury(w, g, sigma2).inverse();
}

inline double woodbury_logdet(const Matrix& w, const Matrix& g, double sigma2) {
    return Woodbury(w, g, sigma2).logdet();
}

/// x' (W G W' + s2 I)^-1 x.
inline Matrix woodbury_quad(const Matrix& w, const Matrix& g, double sigma2, const Matrix& x) {
    return Woodbury(w, g, sigma2).quad(x);
}

/// Log density of the inverse-Wishart IW(psi, nu) at x.
inline double log_inv_wishart(const Matrix& x, const Matrix& psi, double nu) {
    const auto d = static_cast<double>(x.rows());
    double lmgamma = 0.25 * d * (d - 1.0) * std::log(std::numbers::pi);
    for (int j = 1; j <= static_cast<int>(d); ++j) lmgamma += std::lgamma(0.5 * (nu + 1.0 - j));
    auto x_llt = detail::checked_llt(x, "inverse-Wishart argument");
    const double tr = x_llt.solve(psi).trace();
    return 0.5 * nu * logdet_spd(psi) - 0.5 * nu * d * std::log(2.0) - lmgamma -
           0.5 * (nu + d + 1.0) * detail::llt_logdet(x_llt) - 0.5 * tr;
}

}  // namespace dhbc
