#include <gtest/gtest.h>

#include "oracles.hpp"
#include "support.hpp"

using namespace dhbc;

namespace {

// Four subjects per cluster; slopes and hazards far apart so the planted labels are the MAP partition.
struct Planted44 {
    Model model;
    std::vector<ClusterParams> params;
    std::vector<std::size_t> truth;
};

Planted44 planted_4_4(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    Planted44 out;
    for (int k = 0; k < 2; ++k) {
        ClusterParams p;
        const double s = k == 0 ? -2.0 : 2.0;
        p.lmm.b = (Matrix(2, 2) << 0.0, 0.0, s, s).finished();
        p.lmm.g = Matrix::Constant(1, 1, 0.1);
        p.lmm.sigma2 = 0.05;
        p.lmm.omega = Matrix::Identity(2, 2);
        out.params.push_back(p);
    }
    Cohort c;
    c.variable_names = {"y1", "y2"};
    c.events.push_back({"event", {}});
    for (std::size_t i = 0; i < 8; ++i) {
        const std::size_t k = i % 2;
        out.truth.push_back(k);
        Subject s;
        s.id = "s" + std::to_string(i);
        s.times = {0.0, 1.0, 2.0};
        s.y.resize(3, 2);
        for (int v = 0; v < 3; ++v)
            for (int h = 0; h < 2; ++h) s.y(v, h) = out.params[k].lmm.b(1, h) * v + 0.2 * z(rng);
        c.subjects.push_back(s);
        c.events[0].records.push_back({s.id, 0.3 + 1.4 * std::abs(z(rng)) / 3.0, 1});
    }
    out.model = Model::build(c);
    for (auto& p : out.params) p.survival.emplace_back(HazardParams{std::vector<double>(out.model.grids[0].intervals(), 0.5)});
    return out;
}

}  // namespace

TEST(Oracles, BpeMapWorkedExample) {
    const std::vector<SurvivalRecord> recs{{"a", 0.5, 1}};
    const auto lam = oracle::bpe_map(recs, {1.0}, 2.0, 1.0);
    EXPECT_NEAR(lam[0], 4.0 / 3.0, 1e-6);
}

TEST(Oracles, SizeCapsEnforced) {
    std::vector<SurvivalRecord> recs{{"a", 0.5, 1}};
    EXPECT_THROW(oracle::bpe_map(recs, {1, 2, 3, 4, 5}, 1.0, 1.0), std::length_error);
    std::mt19937_64 rng(1);
    const auto m = support::tiny_model(rng, 9);
    const auto cfg = MixtureConfig::defaults(m);
    const std::vector<ClusterParams> params{support::random_params(rng, m), support::random_params(rng, m)};
    EXPECT_THROW(oracle::best_placement(m, 0, std::vector<std::size_t>(9, 0), params, cfg), std::length_error);
    EXPECT_THROW(oracle::small_partition_search(m, params, cfg), std::length_error);
}

TEST(Oracles, VecNormalScalarCase) {
    const Matrix y = Matrix::Constant(1, 1, 1.3), mu = Matrix::Constant(1, 1, 0.4);
    const Matrix r = Matrix::Constant(1, 1, 2.0), c = Matrix::Constant(1, 1, 1.5);
    const double var = 3.0;
    EXPECT_NEAR(oracle::vecnormal_logpdf(y, mu, r, c), -0.5 * std::log(2 * oracle::kPi * var) - 0.81 / (2 * var), 1e-14);
}

TEST(Oracles, DirichletMultinomialRunningSum) {
    const std::vector<std::size_t> counts{2, 0, 3};
    const double alpha = 0.7;
    const double direct = std::lgamma(3 * alpha) - std::lgamma(5 + 3 * alpha) + std::lgamma(2 + alpha) +
                          std::lgamma(3 + alpha) - 2 * std::lgamma(alpha);
    EXPECT_NEAR(oracle::lgamma_dm(counts, alpha), direct, 1e-12);
}

TEST(Oracles, PlacementAgreesWithAssignSubject) {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<std::size_t> kdist(2, 3), ndist(3, 8);
    std::uniform_real_distribution<double> adist(0.05, 5.0);
    for (int rep = 0; rep < 200; ++rep) {
        const auto n = ndist(rng), k = kdist(rng);
        const auto m = support::tiny_model(rng, n);
        auto cfg = MixtureConfig::defaults(m, adist(rng));
        cfg.K = k;
        std::vector<ClusterParams> params;
        for (std::size_t c = 0; c < k; ++c) params.push_back(support::random_params(rng, m));
        std::uniform_int_distribution<std::size_t> lab(0, k - 1);
        std::vector<std::size_t> z(n);
        for (auto& v : z) v = lab(rng);
        const std::size_t i = static_cast<std::size_t>(rep) % n;
        auto counts = Partition{z, k}.counts();
        --counts[z[i]];
        ASSERT_EQ(assign_subject(m, i, params, counts, cfg), oracle::best_placement(m, i, z, params, cfg)) << rep;
    }
}

TEST(Oracles, SmallPartitionSearchFindsPlanted) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        const auto p = planted_4_4(seed);
        auto cfg = MixtureConfig::defaults(p.model, 1.0);
        cfg.K = 2;
        EXPECT_EQ(oracle::small_partition_search(p.model, p.params, cfg), p.truth);
    }
}

TEST(Oracles, ProductLimitHandExample) {
    const auto pl = oracle::product_limit({{"a", 1, 1}, {"b", 2, 0}, {"c", 3, 1}});
    ASSERT_EQ(pl.size(), 2u);
    EXPECT_DOUBLE_EQ(pl[0].second, 2.0 / 3.0);
    EXPECT_EQ(pl[1].second, 0.0);
}
