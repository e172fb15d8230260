#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "dhbc/bpe.hpp"
#include "dhbc/lmm.hpp"

namespace dhbc {

struct Subject {
    std::string id;
    std::vector<double> times;  // nondecreasing, one per visit
    Matrix y;                   // visits x H, fully observed rows
    Vector covariates;          // static, may be empty
};

struct EventVariable {
    std::string name;
    std::vector<SurvivalRecord> records;  // aligned with Cohort::subjects
};

/// Immutable clustering input: longitudinal blocks plus one survival record per
/// subject for every event variable.
struct Cohort {
    std::vector<std::string> variable_names;
    std::vector<std::string> covariate_names;
    std::vector<Subject> subjects;
    std::vector<EventVariable> events;

    std::size_t size() const { return subjects.size(); }
    Eigen::Index h() const { return static_cast<Eigen::Index>(variable_names.size()); }

    /// Throws ValidationError when the structural invariants do not hold.
    void validate() const {
        for (const auto& s : subjects) {
            if (s.y.cols() != h())
                throw ValidationError("subject " + s.id + " has " + std::to_string(s.y.cols()) + " variables, expected " +
                                      std::to_string(h()));
            if (static_cast<Eigen::Index>(s.times.size()) != s.y.rows())
                throw ValidationError("subject " + s.id + " has mismatched times and measurements");
            if (!std::is_sorted(s.times.begin(), s.times.end()))
                throw ValidationError("subject " + s.id + " has unsorted visit times");
            if (!s.y.allFinite()) throw ValidationError("subject " + s.id + " has non-finite measurements");
        }
        for (const auto& ev : events) {
            if (ev.records.size() != subjects.size())
                throw ValidationError("event variable " + ev.name + " does not cover every subject");
            for (std::size_t i = 0; i < subjects.size(); ++i)
                if (ev.records[i].subject_id != subjects[i].id)
                    throw ValidationError("event variable " + ev.name + " is not aligned with subject " + subjects[i].id);
        }
    }
};

enum class SurvivalModel { piecewise_exponential, weibull };

struct ModelOptions {
    DesignSpec design = DesignSpec::linear_random_intercept();
    double grid_width = 0.5;
    SurvivalModel survival = SurvivalModel::piecewise_exponential;
};

/// Cohort with designs evaluated and changepoint grids fixed; what every likelihood consumes.
struct Model {
    std::vector<LmmSubject> blocks;
    std::vector<std::vector<double>> times;           // visit times per subject
    std::vector<std::vector<SurvivalRecord>> events;  // [event variable][subject]
    std::vector<ChangepointGrid> grids;               // one per event variable
    SurvivalModel survival = SurvivalModel::piecewise_exponential;
    Eigen::Index p = 0, q = 0, h = 0;

    std::size_t size() const { return blocks.size(); }
    std::size_t event_count() const { return events.size(); }

    static Model build(const Cohort& cohort, const ModelOptions& opt = {}) {
        cohort.validate();
        Model m;
        m.survival = opt.survival;
        m.p = opt.design.p();
        m.q = opt.design.q();
        m.h = cohort.h();
        m.blocks.reserve(cohort.size());
        for (const auto& s : cohort.subjects) {
            m.times.push_back(s.times);
            if (s.times.empty()) {
                m.blocks.push_back({Matrix(0, m.h), Matrix(0, m.p), Matrix(0, m.q)});
                continue;
            }
            auto d = build_design(s.times, opt.design);
            m.blocks.push_back({s.y, std::move(d.x), std::move(d.w)});
        }
        for (const auto& ev : cohort.events) {
            std::vector<double> times;
            for (const auto& r : ev.records) times.push_back(r.t);
            const double mx = times.empty() ? 1.0 : *std::max_element(times.begin(), times.end());
            auto grid = ChangepointGrid::fixed_width(opt.grid_width, mx);
            m.grids.push_back(adjust_changepoints(grid, times, default_adjust_eps(times)));
            m.events.push_back(ev.records);
        }
        return m;
    }
};

/// Design-derived parameter count p H + q(q+1)/2 + H(H+1)/2 + 1 (B, G, Omega, s2).
inline std::size_t parameter_dimension(const Model& m) {
    const auto p = static_cast<std::size_t>(m.p), q = static_cast<std::size_t>(m.q), h = static_cast<std::size_t>(m.h);
    return p * h + q * (q + 1) / 2 + h * (h + 1) / 2 + 1;
}

}  // namespace dhbc
