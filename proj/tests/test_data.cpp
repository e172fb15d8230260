#include <gtest/gtest.h>

#include <algorithm>
#include <functional>
#include <numeric>
#include <sstream>

#include "oracles.hpp"
#include "support.hpp"

using namespace dhbc;

namespace {

csv::Table table(const std::string& text) {
    std::istringstream in(text);
    return csv::read(in, "mem");
}

SurvivalSource surv(const std::string& text) { return {"event", table(text), "surv.csv"}; }

const char* kLong =
    "subject_id,time,a,b\n"
    "s1,0,1.0,2.0\n"
    "s1,1,1.5,2.5\n"
    "s1,2,2.0,3.0\n"
    "s2,0,0.0,1.0\n"
    "s2,1,0.5,1.5\n"
    "s2,2,1.0,2.0\n";

const char* kSurv = "subject_id,time,event\ns1,2.5,1\ns2,3.0,0\n";

std::string error_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const ValidationError& e) {
        return e.what();
    }
    return {};
}

Cohort covariate_cohort(std::mt19937_64& rng, std::size_t n, bool exact) {
    std::normal_distribution<double> z(0.0, 1.0);
    Cohort c;
    c.variable_names = {"y1", "y2"};
    c.covariate_names = {"age", "sex"};
    EventVariable ev{"e", {}};
    for (std::size_t i = 0; i < n; ++i) {
        Subject s;
        s.id = "s" + std::to_string(i);
        const int visits = 1 + static_cast<int>(i % 4);
        s.covariates = Vector(2);
        s.covariates << 60.0 + 10.0 * z(rng), static_cast<double>(i % 2);
        s.y.resize(visits, 2);
        for (int v = 0; v < visits; ++v) {
            s.times.push_back(v);
            for (int k = 0; k < 2; ++k)
                s.y(v, k) = exact ? 2.0 + 3.0 * s.covariates[0] - 1.5 * s.covariates[1] * (k + 1)
                                  : z(rng) + 0.1 * s.covariates[0];
        }
        ev.records.push_back({s.id, 1.0, 0});
        c.subjects.push_back(std::move(s));
    }
    c.events.push_back(std::move(ev));
    return c;
}

Matrix stacked_y(const Cohort& c) {
    Eigen::Index rows = 0;
    for (const auto& s : c.subjects) rows += s.y.rows();
    Matrix y(rows, c.h());
    Eigen::Index r = 0;
    for (const auto& s : c.subjects) {
        y.middleRows(r, s.y.rows()) = s.y;
        r += s.y.rows();
    }
    return y;
}

Matrix stacked_design(const Cohort& c, bool with_covs) {
    Eigen::Index rows = 0;
    for (const auto& s : c.subjects) rows += s.y.rows();
    const Eigen::Index p = with_covs ? 1 + static_cast<Eigen::Index>(c.covariate_names.size()) : 1;
    Matrix x(rows, p);
    Eigen::Index r = 0;
    for (const auto& s : c.subjects)
        for (Eigen::Index v = 0; v < s.y.rows(); ++v, ++r) {
            x(r, 0) = 1.0;
            if (with_covs) x.row(r).tail(p - 1) = s.covariates.transpose();
        }
    return x;
}

SimScenario one_cluster(std::size_t n, double g, double sigma2, double lambda) {
    SimScenario sc;
    sc.n_subjects = n;
    sc.weights = {1.0};
    SimCluster c;
    c.lmm.b = Matrix(2, 2);
    c.lmm.b << 1.0, -2.0, 0.5, 0.25;
    c.lmm.g = Matrix::Constant(1, 1, g);
    c.lmm.sigma2 = sigma2;
    c.lmm.omega = Matrix::Identity(2, 2);
    SimHazard hz;
    hz.grid.cuts = {1.0, 2.0, 3.0};
    hz.hazard.lambdas.assign(3, lambda);
    c.hazards.push_back(hz);
    sc.clusters.push_back(c);
    return sc;
}

}  // namespace

TEST(Csv, SplitAndTrim) {
    EXPECT_EQ(csv::split_line("a, b ,\"c,d\""), (std::vector<std::string>{"a", "b", "c,d"}));
    EXPECT_EQ(csv::trim("  x \r"), "x");
    EXPECT_THROW(csv::parse_number("1.5x", "here"), ValidationError);
    EXPECT_EQ(csv::parse_number("1e-3", "here"), 1e-3);
}

TEST(LoadCohort, CompleteExample) {
    const auto c = load_cohort(table(kLong), "long.csv", {surv(kSurv)});
    ASSERT_EQ(c.size(), 2u);
    EXPECT_EQ(c.h(), 2);
    EXPECT_EQ(c.subjects[0].y.rows(), 3);
    EXPECT_EQ(c.subjects[1].y.rows(), 3);
    EXPECT_EQ(c.subjects[0].id, "s1");
    EXPECT_EQ(c.subjects[1].y(2, 1), 2.0);
    EXPECT_EQ(c.events[0].records[0].d, 1);
    EXPECT_EQ(c.events[0].records[1].t, 3.0);
}

TEST(LoadCohort, MissingnessViolationNamesSubjectAndTime) {
    const std::string bad = "subject_id,time,a,b\ns1,0,1,2\ns1,1.5,,2\n";
    const auto msg = error_of([&] { load_cohort(table(bad), "long.csv", {surv("subject_id,time,event\ns1,2,1\n")}); });
    EXPECT_NE(msg.find("s1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("1.5"), std::string::npos) << msg;
    EXPECT_NE(msg.find("missing"), std::string::npos) << msg;
}

TEST(LoadCohort, CrossFileConsistency) {
    EXPECT_NE(error_of([&] { load_cohort(table(kLong), "long.csv", {surv("subject_id,time,event\ns1,2,1\n")}); })
                  .find("s2"),
              std::string::npos);
    EXPECT_NE(error_of([&] {
                  load_cohort(table(kLong), "long.csv", {surv("subject_id,time,event\ns1,2,1\ns2,1,0\ns3,1,1\n")});
              }).find("s3"),
              std::string::npos);
}

TEST(LoadCohort, SchemaErrors) {
    EXPECT_THROW(load_cohort(table("id,time,a\ns1,0,1\n"), "l", {surv(kSurv)}), ValidationError);
    EXPECT_THROW(load_cohort(table("subject_id,time,a\ns1,0,1\ns1,0,2\n"), "l",
                             {surv("subject_id,time,event\ns1,1,1\n")}),
                 ValidationError);
    EXPECT_THROW(load_cohort(table(kLong), "l", {surv("subject_id,time,event\ns1,2,2\ns2,1,0\n")}), ValidationError);
    EXPECT_THROW(load_cohort(table(kLong), "l", {surv("subject_id,time,event\ns1,0,1\ns2,1,0\n")}), ValidationError);
    EXPECT_THROW(load_cohort(table(kLong), "l", {surv("subject_id,t,event\ns1,2,1\ns2,1,0\n")}), ValidationError);
}

TEST(LoadCohort, CovariateColumnsAreStatic) {
    const std::string text = "subject_id,time,age,a\ns1,1,71,0.5\ns1,0,70,0.1\ns2,0,55,0.2\n";
    const auto c = load_cohort(table(text), "l", {surv("subject_id,time,event\ns1,2,1\ns2,1,0\n")}, {"age"});
    EXPECT_EQ(c.variable_names, std::vector<std::string>{"a"});
    EXPECT_EQ(c.subjects[0].covariates[0], 70.0);
    EXPECT_EQ(c.subjects[0].times, (std::vector<double>{0.0, 1.0}));
    EXPECT_EQ(c.subjects[0].y(0, 0), 0.1);
}

TEST(Projection, InterceptOnlyCenters) {
    std::mt19937_64 rng(1);
    const auto c = covariate_cohort(rng, 12, false);
    const auto p = project_out_covariates(c, {});
    const Matrix before = stacked_y(c), after = stacked_y(p);
    const Matrix centered = before.rowwise() - before.colwise().mean();
    EXPECT_LT((after - centered).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Projection, ExactFitGivesZero) {
    std::mt19937_64 rng(2);
    const auto c = covariate_cohort(rng, 15, true);
    const auto p = project_out_covariates(c, {"age", "sex"});
    EXPECT_LT(stacked_y(p).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Projection, OrthogonalIdempotentShapePreserving) {
    std::mt19937_64 rng(3);
    const auto c = covariate_cohort(rng, 20, false);
    const auto p = project_out_covariates(c, {"age", "sex"});
    const Matrix design = stacked_design(c, true);
    EXPECT_LT((design.transpose() * stacked_y(p)).cwiseAbs().maxCoeff(), 1e-8);
    const auto twice = project_out_covariates(p, {"age", "sex"});
    EXPECT_LT((stacked_y(twice) - stacked_y(p)).cwiseAbs().maxCoeff(), 1e-10);
    ASSERT_EQ(p.size(), c.size());
    for (std::size_t i = 0; i < c.size(); ++i) {
        EXPECT_EQ(p.subjects[i].times, c.subjects[i].times);
        EXPECT_EQ(p.subjects[i].y.rows(), c.subjects[i].y.rows());
    }
}

TEST(Projection, Errors) {
    std::mt19937_64 rng(4);
    auto c = covariate_cohort(rng, 6, false);
    EXPECT_THROW(project_out_covariates(c, {"height"}), ValidationError);
    for (auto& s : c.subjects) s.covariates[1] = 1.0;  // collinear with the intercept
    EXPECT_THROW(project_out_covariates(c, {"sex"}), ValidationError);
}

TEST(DropVariable, RemovesColumn) {
    const auto c = load_cohort(table(kLong), "l", {surv(kSurv)});
    const auto d = drop_variable(c, "a");
    EXPECT_EQ(d.variable_names, std::vector<std::string>{"b"});
    EXPECT_EQ(d.subjects[0].y.cols(), 1);
    EXPECT_EQ(d.subjects[0].y(1, 0), 2.5);
    EXPECT_THROW(drop_variable(c, "zzz"), ValidationError);
    EXPECT_THROW(drop_variable(d, "b"), ValidationError);
}

TEST(Simulate, NoiselessTrajectories) {
    auto sc = one_cluster(30, 0.0, 1e-12, 0.2);
    sc.dropout = 0.3;
    const auto sim = simulate_cohort(sc);
    const auto design = DesignSpec::polynomial(1, 0);
    for (const auto& s : sim.cohort.subjects) {
        const auto d = build_design(s.times, design);
        EXPECT_LT((s.y - d.x * sc.clusters[0].lmm.b).cwiseAbs().maxCoeff(), 1e-5);
        EXPECT_EQ(s.times.front(), 0.0);
    }
}

TEST(Simulate, ExponentialEventTimesPassKs) {
    auto sc = one_cluster(2000, 0.5, 0.25, 0.7);
    sc.censor_min = sc.censor_max = 1e9;
    const auto sim = simulate_cohort(sc);
    std::vector<double> t;
    for (const auto& r : sim.cohort.events[0].records) {
        EXPECT_EQ(r.d, 1);
        t.push_back(r.t);
    }
    std::sort(t.begin(), t.end());
    const double n = static_cast<double>(t.size());
    double ks = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double cdf = 1.0 - std::exp(-0.7 * t[i]);
        ks = std::max({ks, std::abs(cdf - i / n), std::abs((i + 1) / n - cdf)});
    }
    EXPECT_LT(ks, 1.628 / std::sqrt(n));
}

TEST(Simulate, RandomEffectCovarianceIsKronecker) {
    SimScenario sc;
    sc.n_subjects = 5000;
    sc.weights = {1.0};
    sc.visit_times = {0.0, 1.0};
    sc.random_degree = 1;
    SimCluster c;
    c.lmm.b = Matrix::Zero(2, 2);
    c.lmm.g = (Matrix(2, 2) << 1.0, 0.8, 0.8, 1.0).finished();
    c.lmm.omega = (Matrix(2, 2) << 1.0, 0.8, 0.8, 1.0).finished();
    c.lmm.sigma2 = 1e-12;
    c.hazards.push_back({{{1.0}}, {{0.5}}});
    sc.clusters.push_back(c);
    const auto sim = simulate_cohort(sc);
    Matrix u(5000, 4);
    const Matrix w_inv = (Matrix(2, 2) << 1.0, 0.0, 1.0, 1.0).finished().inverse();
    for (std::size_t i = 0; i < 5000; ++i) {
        const auto& s = sim.cohort.subjects[i];
        ASSERT_EQ(s.y.rows(), 2);
        const Matrix ui = w_inv * s.y;
        u.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Vector>(ui.data(), 4).transpose();
    }
    const Matrix centered = u.rowwise() - u.colwise().mean();
    const Matrix emp = centered.transpose() * centered / 4999.0;
    const Matrix truth = oracle::kron(c.lmm.omega, c.lmm.g);
    EXPECT_LT(((emp - truth).array() / truth.array()).abs().maxCoeff(), 0.10) << emp;
}

TEST(Simulate, DeterministicAndWeighted) {
    auto sc = support::planted_scenario(2, 50, 9);
    const auto a = simulate_cohort(sc), b = simulate_cohort(sc);
    EXPECT_EQ(a.labels, b.labels);
    for (std::size_t i = 0; i < a.cohort.size(); ++i) {
        EXPECT_EQ(a.cohort.subjects[i].id, b.cohort.subjects[i].id);
        EXPECT_EQ(a.cohort.subjects[i].times, b.cohort.subjects[i].times);
        EXPECT_TRUE(a.cohort.subjects[i].y == b.cohort.subjects[i].y);
        EXPECT_EQ(a.cohort.events[0].records[i].t, b.cohort.events[0].records[i].t);
    }
    sc.weights = {0.3, 0.7};
    sc.n_subjects = 2000;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        sc.seed = seed;
        const auto s = simulate_cohort(sc);
        const double ones = static_cast<double>(std::count(s.labels.begin(), s.labels.end(), std::size_t{1}));
        const double se = std::sqrt(0.7 * 0.3 / 2000.0);
        EXPECT_LT(std::abs(ones / 2000.0 - 0.7), 3.0 * se) << "seed " << seed;
    }
}

TEST(Simulate, RejectsInvalidScenario) {
    auto sc = support::planted_scenario(2, 10, 1);
    sc.weights = {0.5, 0.6};
    EXPECT_THROW(simulate_cohort(sc), std::invalid_argument);
}

TEST(Ari, Examples) {
    const std::vector<std::size_t> a{1, 1, 2, 2}, b{1, 2, 1, 2}, c{7, 7, 3, 3};
    EXPECT_DOUBLE_EQ(adjusted_rand_index(a, a), 1.0);
    EXPECT_DOUBLE_EQ(adjusted_rand_index(a, c), 1.0);
    EXPECT_NEAR(adjusted_rand_index(a, b), -0.5, 1e-15);
    EXPECT_THROW(adjusted_rand_index(a, std::vector<std::size_t>{1, 2}), std::invalid_argument);
}

TEST(Ari, SymmetricAndPermutationInvariant) {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<std::size_t> pick(0, 3);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<std::size_t> a(30), b(30);
        for (auto& v : a) v = pick(rng);
        for (auto& v : b) v = pick(rng);
        std::vector<std::size_t> perm{2, 0, 3, 1}, pa(30);
        for (std::size_t i = 0; i < 30; ++i) pa[i] = perm[a[i]] + 10;
        EXPECT_NEAR(adjusted_rand_index(a, b), adjusted_rand_index(b, a), 1e-14);
        EXPECT_NEAR(adjusted_rand_index(pa, b), adjusted_rand_index(a, b), 1e-14);
    }
}

TEST(MembershipDiff, Examples) {
    const std::vector<std::size_t> a{1, 1, 1, 1, 1, 2, 2, 2, 2, 2};
    auto b = a;
    EXPECT_EQ(membership_diff(a, b).count, 0u);
    EXPECT_EQ(membership_diff(a, b).fraction, 0.0);
    b[0] = 2;
    EXPECT_EQ(membership_diff(a, b).count, 1u);
    EXPECT_DOUBLE_EQ(membership_diff(a, b).fraction, 0.1);
    std::vector<std::size_t> swapped(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) swapped[i] = 3 - a[i];
    EXPECT_EQ(membership_diff(a, swapped).count, 0u);
}

TEST(MembershipDiff, MatchesBruteForcePermutations) {
    std::mt19937_64 rng(6);
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t ka = 1 + rep % 4, kb = 1 + (rep / 4) % 4;
        std::uniform_int_distribution<std::size_t> da(0, ka - 1), db(0, kb - 1);
        std::vector<std::size_t> a(25), b(25);
        for (auto& v : a) v = da(rng);
        for (auto& v : b) v = db(rng);
        // brute force: injective maps from a's labels into 4 slots, b labels occupy slots 0..kb-1
        std::vector<std::size_t> slots{0, 1, 2, 3};
        std::size_t best = 25;
        do {
            std::size_t agree = 0;
            for (std::size_t i = 0; i < 25; ++i) agree += slots[a[i]] == b[i] ? 1 : 0;
            best = std::min(best, 25 - agree);
        } while (std::next_permutation(slots.begin(), slots.end()));
        EXPECT_EQ(membership_diff(a, b).count, best);
    }
}

TEST(Labels, ReadAndAlign) {
    const auto pred = read_labels(table("subject_id,k1,k2\nb,1,2\na,1,1\nc,1,2\n"), "pred");
    const auto truth = read_labels(table("subject_id,cluster\na,x\nb,y\nc,y\n"), "truth");
    const auto [pa, pb] = align_labels(pred, truth);
    EXPECT_DOUBLE_EQ(adjusted_rand_index(pa, pb), 1.0);
    const auto first = read_labels(table("subject_id,k1,k2\nb,1,2\na,1,1\n"), "pred", "k1");
    EXPECT_EQ(first.labels, (std::vector<std::string>{"1", "1"}));
    EXPECT_THROW(align_labels(first, truth), ValidationError);
    EXPECT_THROW(read_labels(table("subject_id,k1\na,1\na,2\n"), "p"), ValidationError);
}
