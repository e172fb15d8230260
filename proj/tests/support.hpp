#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <unistd.h>

#include "dhbc/dhbc.hpp"

namespace support {

using dhbc::Matrix;

inline Matrix random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
        for (Eigen::Index i = 0; i < r; ++i) m(i, j) = n(rng);
    return m;
}

inline Matrix random_spd(std::mt19937_64& rng, Eigen::Index d, double ridge = 0.5) {
    const Matrix a = random_matrix(rng, d, d);
    return a * a.transpose() / static_cast<double>(d) + ridge * Matrix::Identity(d, d);
}

/// Subjects on visits 0..visits-1 under the linear random-intercept design.
inline std::vector<dhbc::LmmSubject> simulate_subjects(std::mt19937_64& rng, const dhbc::LmmParams& truth, int n_subjects,
                                                      int visits) {
    const auto spec = dhbc::DesignSpec::linear_random_intercept();
    const Matrix gf = truth.g.llt().matrixL();
    const Matrix of = truth.omega.llt().matrixL();
    std::vector<dhbc::LmmSubject> out;
    for (int i = 0; i < n_subjects; ++i) {
        std::vector<double> t;
        for (int v = 0; v < visits; ++v) t.push_back(v);
        auto d = dhbc::build_design(t, spec);
        const auto h = truth.omega.rows();
        const Matrix u = gf * random_matrix(rng, 1, h) * of.transpose();
        const Matrix e = std::sqrt(truth.sigma2) * random_matrix(rng, visits, h) * of.transpose();
        out.push_back({d.x * truth.b + d.w * u + e, d.x, d.w});
    }
    return out;
}

inline dhbc::LmmParams example_truth(Eigen::Index h) {
    dhbc::LmmParams p;
    p.b = Matrix(2, h);
    for (Eigen::Index k = 0; k < h; ++k) {
        p.b(0, k) = 1.0 + k;
        p.b(1, k) = 0.5 - 0.25 * k;
    }
    p.g = Matrix::Constant(1, 1, 0.6);
    p.sigma2 = 0.3;
    p.omega = Matrix::Identity(h, h);
    if (h > 1) p.omega(0, 1) = p.omega(1, 0) = 0.4;
    return p;
}

// Tiny cohort with a single event variable; grids kept to at most four intervals.
inline dhbc::Model tiny_model(std::mt19937_64& rng, std::size_t n, Eigen::Index h = 2) {
    std::uniform_real_distribution<double> tu(0.2, 1.9);
    std::bernoulli_distribution d(0.6);
    dhbc::Cohort c;
    for (Eigen::Index k = 0; k < h; ++k) c.variable_names.push_back("y" + std::to_string(k));
    c.events.push_back({"event", {}});
    for (std::size_t i = 0; i < n; ++i) {
        dhbc::Subject s;
        s.id = "s" + std::to_string(i);
        s.times = {0.0, 1.0};
        s.y = random_matrix(rng, 2, h);
        c.subjects.push_back(s);
        c.events[0].records.push_back({s.id, tu(rng), d(rng) ? 1 : 0});
    }
    return dhbc::Model::build(c);
}

inline dhbc::ClusterParams random_params(std::mt19937_64& rng, const dhbc::Model& m) {
    std::uniform_real_distribution<double> lam(0.1, 1.5);
    dhbc::ClusterParams p;
    p.lmm.b = random_matrix(rng, m.p, m.h) * 0.5;
    p.lmm.g = random_spd(rng, m.q);
    p.lmm.sigma2 = 0.5;
    p.lmm.omega = random_spd(rng, m.h);
    dhbc::HazardParams hz;
    for (std::size_t j = 0; j < m.grids[0].intervals(); ++j) hz.lambdas.push_back(lam(rng));
    p.survival.emplace_back(hz);
    return p;
}

/// Two groups with opposite slopes (3 residual SDs apart) and a hazard ratio of 3;
/// one group when clusters == 1.
inline dhbc::SimScenario planted_scenario(int clusters, std::size_t n, std::uint64_t seed) {
    dhbc::SimScenario sc;
    sc.n_subjects = n;
    sc.seed = seed;
    sc.weights.assign(static_cast<std::size_t>(clusters), 1.0 / clusters);
    sc.visit_times = {0.0, 1.0, 2.0, 3.0, 4.0};
    sc.dropout = 0.1;
    sc.censor_min = 1.0;
    sc.censor_max = 5.0;
    for (int k = 0; k < clusters; ++k) {
        dhbc::SimCluster c;
        const double sign = clusters == 1 ? 0.0 : (k == 0 ? -1.0 : 1.0);
        c.lmm.b = Matrix(2, 2);
        c.lmm.b << 0.0, 0.0, 0.75 * sign, 0.75 * sign;
        c.lmm.g = Matrix::Constant(1, 1, 0.5);
        c.lmm.sigma2 = 0.25;
        c.lmm.omega = Matrix::Identity(2, 2);
        c.lmm.omega(0, 1) = c.lmm.omega(1, 0) = 0.3;
        dhbc::SimHazard hz;
        hz.grid.cuts = {1.0, 2.0, 3.0, 4.0, 5.0};
        hz.hazard.lambdas.assign(5, k == 1 ? 0.3 : 0.1);
        c.hazards.push_back(hz);
        sc.clusters.push_back(c);
    }
    return sc;
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

inline std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("dhbc_test_" + name + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace support
