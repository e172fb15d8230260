#pragma once

// Cohort ingestion and preprocessing, synthetic cohorts, and partition metrics.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/QR>

#include "dhbc/bpe.hpp"
#include "dhbc/cohort.hpp"
#include "dhbc/errors.hpp"
#include "dhbc/lmm.hpp"

namespace dhbc {

// ---------------------------------------------------------------------------
// CSV

namespace csv {

inline std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

/// Splits one line on commas; double quotes group fields and "" escapes a quote.
inline std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') { cur += '"'; ++i; }
            else if (c == '"') quoted = false;
            else cur += c;
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(trim(cur));
    return out;
}

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_numbers;  // 1-based source line of each row
};

inline Table read(std::istream& in, const std::string& source) {
    Table t;
    std::string line;
    std::size_t lineno = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (lineno == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
        if (trim(line).empty()) continue;
        auto fields = split_line(line);
        if (!have_header) {
            t.header = std::move(fields);
            have_header = true;
            continue;
        }
        if (fields.size() != t.header.size())
            throw ValidationError(source + ":" + std::to_string(lineno) + ": expected " + std::to_string(t.header.size()) +
                                  " fields, found " + std::to_string(fields.size()));
        t.rows.push_back(std::move(fields));
        t.line_numbers.push_back(lineno);
    }
    if (!have_header) throw ValidationError(source + ": missing header");
    return t;
}

inline Table read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path);
    return read(in, path);
}

inline double parse_number(const std::string& s, const std::string& where) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ValidationError(where + ": '" + s + "' is not a finite number");
    }
}

}  // namespace csv

inline bool is_missing_cell(const std::string& s) {
    return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == ".";
}

// ---------------------------------------------------------------------------
// Loading

struct SurvivalSource {
    std::string name;
    csv::Table table;
    std::string origin;
};

/// Validated cohort from a longitudinal table (subject_id, time, vars...) and one survival
/// table (subject_id, time, event) per event variable. Columns named in covariate_columns
/// are taken as static covariates (value at the earliest visit) rather than clustering variables.
inline Cohort load_cohort(const csv::Table& longitudinal, const std::string& long_origin,
                          const std::vector<SurvivalSource>& survival,
                          const std::vector<std::string>& covariate_columns = {}) {
    const auto& hdr = longitudinal.header;
    if (hdr.size() < 3 || hdr[0] != "subject_id" || hdr[1] != "time")
        throw ValidationError(long_origin + ": header must be subject_id, time, <variables...>");
    Cohort c;
    std::vector<std::size_t> var_cols, cov_cols;
    for (const auto& name : covariate_columns)
        if (std::find(hdr.begin() + 2, hdr.end(), name) == hdr.end())
            throw ValidationError(long_origin + ": covariate column '" + name + "' not found");
    for (std::size_t j = 2; j < hdr.size(); ++j) {
        if (std::find(covariate_columns.begin(), covariate_columns.end(), hdr[j]) != covariate_columns.end()) {
            cov_cols.push_back(j);
            c.covariate_names.push_back(hdr[j]);
        } else {
            var_cols.push_back(j);
            c.variable_names.push_back(hdr[j]);
        }
    }
    if (var_cols.empty()) throw ValidationError(long_origin + ": no clustering variables");

    struct Visit {
        double time;
        std::vector<double> values;
        std::vector<double> covs;
    };
    std::vector<std::string> order;
    std::unordered_map<std::string, std::vector<Visit>> visits;
    for (std::size_t r = 0; r < longitudinal.rows.size(); ++r) {
        const auto& row = longitudinal.rows[r];
        const std::string where = long_origin + ":" + std::to_string(longitudinal.line_numbers[r]);
        const auto& id = row[0];
        if (id.empty()) throw ValidationError(where + ": empty subject_id");
        const double t = csv::parse_number(row[1], where + " (time)");
        Visit v{t, {}, {}};
        std::vector<std::string> missing;
        for (std::size_t k = 0; k < var_cols.size(); ++k) {
            const auto& cell = row[var_cols[k]];
            if (is_missing_cell(cell)) {
                missing.push_back(hdr[var_cols[k]]);
                continue;
            }
            v.values.push_back(csv::parse_number(cell, where + " (" + hdr[var_cols[k]] + ")"));
        }
        if (!missing.empty()) {
            std::string names;
            for (const auto& m : missing) names += (names.empty() ? "" : ", ") + m;
            throw ValidationError(where + ": subject " + id + " at time " + row[1] +
                                  " violates the all-or-none missingness rule (missing: " + names + ")");
        }
        for (auto j : cov_cols) {
            if (is_missing_cell(row[j])) throw ValidationError(where + ": covariate " + hdr[j] + " missing for subject " + id);
            v.covs.push_back(csv::parse_number(row[j], where + " (" + hdr[j] + ")"));
        }
        auto [it, fresh] = visits.try_emplace(id);
        if (fresh) order.push_back(id);
        for (const auto& prev : it->second)
            if (prev.time == t) throw ValidationError(where + ": duplicate visit for subject " + id + " at time " + row[1]);
        it->second.push_back(std::move(v));
    }

    const auto h = static_cast<Eigen::Index>(var_cols.size());
    for (const auto& id : order) {
        auto& vs = visits[id];
        std::stable_sort(vs.begin(), vs.end(), [](const Visit& a, const Visit& b) { return a.time < b.time; });
        Subject s;
        s.id = id;
        s.y.resize(static_cast<Eigen::Index>(vs.size()), h);
        for (std::size_t r = 0; r < vs.size(); ++r) {
            s.times.push_back(vs[r].time);
            for (Eigen::Index k = 0; k < h; ++k) s.y(static_cast<Eigen::Index>(r), k) = vs[r].values[static_cast<std::size_t>(k)];
        }
        s.covariates = Eigen::Map<const Vector>(vs.front().covs.data(), static_cast<Eigen::Index>(vs.front().covs.size()));
        c.subjects.push_back(std::move(s));
    }

    std::set<std::string> ids(order.begin(), order.end());
    for (const auto& src : survival) {
        const auto& sh = src.table.header;
        if (sh.size() != 3 || sh[0] != "subject_id" || sh[1] != "time" || sh[2] != "event")
            throw ValidationError(src.origin + ": header must be subject_id, time, event");
        std::unordered_map<std::string, SurvivalRecord> recs;
        for (std::size_t r = 0; r < src.table.rows.size(); ++r) {
            const auto& row = src.table.rows[r];
            const std::string where = src.origin + ":" + std::to_string(src.table.line_numbers[r]);
            SurvivalRecord rec;
            rec.subject_id = row[0];
            rec.t = csv::parse_number(row[1], where + " (time)");
            if (!(rec.t > 0.0)) throw ValidationError(where + ": survival time must be positive");
            if (row[2] == "0") rec.d = 0;
            else if (row[2] == "1") rec.d = 1;
            else throw ValidationError(where + ": event must be 0 or 1");
            if (!ids.contains(rec.subject_id))
                throw ValidationError(where + ": subject " + rec.subject_id + " has survival data but no longitudinal data");
            if (!recs.emplace(rec.subject_id, rec).second)
                throw ValidationError(where + ": duplicate survival record for subject " + rec.subject_id);
        }
        EventVariable ev;
        ev.name = src.name;
        for (const auto& id : order) {
            auto it = recs.find(id);
            if (it == recs.end())
                throw ValidationError(src.origin + ": subject " + id + " has longitudinal data but no survival record");
            ev.records.push_back(it->second);
        }
        c.events.push_back(std::move(ev));
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Preprocessing

/// Residualize every variable on [1, selected covariates] using one hat matrix over all
/// stacked visits.
inline Cohort project_out_covariates(const Cohort& cohort, const std::vector<std::string>& selector) {
    std::vector<Eigen::Index> cols;
    for (const auto& name : selector) {
        auto it = std::find(cohort.covariate_names.begin(), cohort.covariate_names.end(), name);
        if (it == cohort.covariate_names.end()) throw ValidationError("covariate '" + name + "' is not available");
        cols.push_back(static_cast<Eigen::Index>(it - cohort.covariate_names.begin()));
    }
    Eigen::Index rows = 0;
    for (const auto& s : cohort.subjects) {
        rows += s.y.rows();
        if (s.covariates.size() != static_cast<Eigen::Index>(cohort.covariate_names.size()))
            throw ValidationError("subject " + s.id + " lacks the selected covariates");
    }
    const auto h = cohort.h();
    Matrix c(rows, static_cast<Eigen::Index>(cols.size()) + 1);
    Matrix y(rows, h);
    Eigen::Index r = 0;
    for (const auto& s : cohort.subjects) {
        for (Eigen::Index v = 0; v < s.y.rows(); ++v, ++r) {
            c(r, 0) = 1.0;
            for (std::size_t k = 0; k < cols.size(); ++k) c(r, static_cast<Eigen::Index>(k) + 1) = s.covariates(cols[k]);
            y.row(r) = s.y.row(v);
        }
    }
    Eigen::ColPivHouseholderQR<Matrix> qr(c);
    qr.setThreshold(1e-10);
    if (qr.rank() < c.cols()) throw ValidationError("covariate design is rank deficient");
    const Matrix resid = y - c * qr.solve(y);

    Cohort out = cohort;
    r = 0;
    for (auto& s : out.subjects) {
        s.y = resid.middleRows(r, s.y.rows());
        r += s.y.rows();
    }
    return out;
}

/// Cohort without one clustering variable.
inline Cohort drop_variable(const Cohort& cohort, const std::string& name) {
    auto it = std::find(cohort.variable_names.begin(), cohort.variable_names.end(), name);
    if (it == cohort.variable_names.end()) throw ValidationError("variable '" + name + "' not found");
    if (cohort.variable_names.size() == 1) throw ValidationError("cannot drop the only clustering variable");
    const auto col = static_cast<Eigen::Index>(it - cohort.variable_names.begin());
    Cohort out = cohort;
    out.variable_names.erase(out.variable_names.begin() + col);
    for (auto& s : out.subjects) {
        Matrix y(s.y.rows(), s.y.cols() - 1);
        y << s.y.leftCols(col), s.y.rightCols(s.y.cols() - col - 1);
        s.y = std::move(y);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Simulation

struct SimHazard {
    ChangepointGrid grid;
    HazardParams hazard;  // the last rate continues past the final cut
};

struct SimCluster {
    LmmParams lmm;
    std::vector<SimHazard> hazards;  // one per event variable
};

struct SimScenario {
    std::size_t n_subjects = 0;
    std::vector<double> weights;
    std::vector<SimCluster> clusters;
    std::vector<double> visit_times{0.0, 1.0, 2.0, 3.0, 4.0};
    double dropout = 0.0;  // per non-baseline visit
    double censor_min = 1.0, censor_max = 5.0;
    std::uint64_t seed = 1;
    int fixed_degree = 1;
    int random_degree = 0;
    std::vector<std::string> variable_names;  // defaults to y1..yH
    std::vector<std::string> event_names;     // defaults to event1..

    void validate() const {
        if (n_subjects == 0) throw std::invalid_argument("scenario needs subjects");
        if (weights.size() != clusters.size() || clusters.empty())
            throw std::invalid_argument("one weight per cluster required");
        double sum = 0.0;
        for (double w : weights) {
            if (!(w >= 0.0)) throw std::invalid_argument("weights must be nonnegative");
            sum += w;
        }
        if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("weights must sum to 1");
        if (visit_times.empty()) throw std::invalid_argument("visit schedule is empty");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must be in [0, 1)");
        if (!(censor_min > 0.0 && censor_max >= censor_min)) throw std::invalid_argument("invalid censoring window");
        const auto h = clusters.front().lmm.omega.rows();
        const auto events = clusters.front().hazards.size();
        for (const auto& c : clusters) {
            if (c.lmm.omega.rows() != h || c.lmm.b.cols() != h) throw std::invalid_argument("clusters disagree on H");
            if (c.lmm.b.rows() != fixed_degree + 1 || c.lmm.g.rows() != random_degree + 1)
                throw std::invalid_argument("cluster parameters do not match the design degrees");
            if (c.hazards.size() != events) throw std::invalid_argument("clusters disagree on event variables");
            if (!(c.lmm.sigma2 > 0.0)) throw std::invalid_argument("sigma2 must be positive");
            for (const auto& hz : c.hazards) {
                hz.grid.validate();
                if (hz.hazard.lambdas.size() != hz.grid.intervals()) throw std::invalid_argument("hazard/grid mismatch");
                for (double l : hz.hazard.lambdas)
                    if (!(l >= 0.0)) throw std::invalid_argument("hazards must be nonnegative");
            }
        }
    }
};

namespace detail {

// Factor F with F F' = m for symmetric PSD m (negative eigenvalues clamped to zero).
inline Matrix psd_factor(const Matrix& m) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()));
    return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

inline double draw_event_time(const SimHazard& hz, std::mt19937_64& rng) {
    std::exponential_distribution<double> expo(1.0);
    double target = expo(rng);
    const auto& cuts = hz.grid.cuts;
    const auto& lam = hz.hazard.lambdas;
    for (std::size_t j = 0; j < cuts.size(); ++j) {
        const double lo = j == 0 ? 0.0 : cuts[j - 1];
        const double mass = lam[j] * (cuts[j] - lo);
        if (mass >= target && lam[j] > 0.0) return lo + target / lam[j];
        target -= mass;
    }
    if (lam.back() > 0.0) return cuts.back() + target / lam.back();
    return std::numeric_limits<double>::infinity();
}

}  // namespace detail

struct SimResult {
    Cohort cohort;
    std::vector<std::size_t> labels;  // zero-based true cluster per subject
};

inline SimResult simulate_cohort(const SimScenario& sc) {
    sc.validate();
    std::mt19937_64 rng(sc.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::discrete_distribution<std::size_t> pick(sc.weights.begin(), sc.weights.end());
    const auto design = DesignSpec::polynomial(sc.fixed_degree, sc.random_degree);
    const auto h = sc.clusters.front().lmm.omega.rows();
    const auto q = design.q();
    const std::size_t events = sc.clusters.front().hazards.size();

    SimResult out;
    auto& c = out.cohort;
    c.variable_names = sc.variable_names;
    if (c.variable_names.empty())
        for (Eigen::Index k = 0; k < h; ++k) c.variable_names.push_back("y" + std::to_string(k + 1));
    c.events.resize(events);
    for (std::size_t v = 0; v < events; ++v)
        c.events[v].name = v < sc.event_names.size() ? sc.event_names[v] : "event" + std::to_string(v + 1);

    std::vector<Matrix> g_factor, omega_factor;
    for (const auto& cl : sc.clusters) {
        g_factor.push_back(detail::psd_factor(cl.lmm.g));
        omega_factor.push_back(detail::psd_factor(cl.lmm.omega));
    }
    const int width = std::max<int>(3, static_cast<int>(std::to_string(sc.n_subjects).size()));
    auto draw_normal = [&](Eigen::Index r, Eigen::Index cc) {
        Matrix z(r, cc);
        for (Eigen::Index j = 0; j < cc; ++j)
            for (Eigen::Index i = 0; i < r; ++i) z(i, j) = normal(rng);
        return z;
    };

    for (std::size_t i = 0; i < sc.n_subjects; ++i) {
        const std::size_t k = pick(rng);
        out.labels.push_back(k);
        const auto& cl = sc.clusters[k];
        Subject s;
        std::string num = std::to_string(i + 1);
        s.id = "S" + std::string(static_cast<std::size_t>(width) - std::min<std::size_t>(num.size(), width), '0') + num;
        for (std::size_t v = 0; v < sc.visit_times.size(); ++v) {
            const double u = unif(rng);
            if (v == 0 || u >= sc.dropout) s.times.push_back(sc.visit_times[v]);
        }
        const auto d = build_design(s.times, design);
        const Matrix u = g_factor[k] * draw_normal(q, h) * omega_factor[k].transpose();
        const auto n = static_cast<Eigen::Index>(s.times.size());
        const Matrix e = std::sqrt(cl.lmm.sigma2) * draw_normal(n, h) * omega_factor[k].transpose();
        s.y = d.x * cl.lmm.b + d.w * u + e;
        for (std::size_t v = 0; v < events; ++v) {
            const double t_event = detail::draw_event_time(cl.hazards[v], rng);
            const double t_censor = sc.censor_min + (sc.censor_max - sc.censor_min) * unif(rng);
            SurvivalRecord rec;
            rec.subject_id = s.id;
            rec.d = t_event <= t_censor ? 1 : 0;
            rec.t = std::min(t_event, t_censor);
            c.events[v].records.push_back(rec);
        }
        c.subjects.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Partition metrics

inline double adjusted_rand_index(std::span<const std::size_t> a, std::span<const std::size_t> b) {
    if (a.size() != b.size()) throw std::invalid_argument("adjusted_rand_index: length mismatch");
    const auto n = static_cast<double>(a.size());
    std::map<std::pair<std::size_t, std::size_t>, double> joint;
    std::map<std::size_t, double> ra, rb;
    for (std::size_t i = 0; i < a.size(); ++i) {
        joint[{a[i], b[i]}] += 1.0;
        ra[a[i]] += 1.0;
        rb[b[i]] += 1.0;
    }
    auto pairs = [](double x) { return 0.5 * x * (x - 1.0); };
    double index = 0.0, sa = 0.0, sb = 0.0;
    for (const auto& [key, v] : joint) index += pairs(v);
    for (const auto& [key, v] : ra) sa += pairs(v);
    for (const auto& [key, v] : rb) sb += pairs(v);
    const double total = pairs(n);
    if (total == 0.0) return 1.0;
    const double expected = sa * sb / total;
    const double max_index = 0.5 * (sa + sb);
    if (max_index == expected) return index == max_index ? 1.0 : 0.0;
    return (index - expected) / (max_index - expected);
}

namespace detail {

// Minimum-cost perfect matching on a square cost matrix (Kuhn-Munkres with potentials).
inline std::vector<std::size_t> hungarian(const Matrix& cost) {
    const auto n = static_cast<std::size_t>(cost.rows());
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
    std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
    std::vector<bool> used(n + 1);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::fill(used.begin(), used.end(), false);
        do {
            used[j0] = true;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) - u[i0] - v[j];
                if (cur < minv[j]) { minv[j] = cur; way[j] = j0; }
                if (minv[j] < delta) { delta = minv[j]; j1 = j; }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) { u[p[j]] += delta; v[j] -= delta; }
                else minv[j] -= delta;
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::size_t> row_to_col(n);
    for (std::size_t j = 1; j <= n; ++j) row_to_col[p[j] - 1] = j - 1;
    return row_to_col;
}

}  // namespace detail

struct MembershipDiff {
    std::size_t count = 0;
    double fraction = 0.0;
};

/// Subjects placed differently under the label bijection that maximizes agreement.
inline MembershipDiff membership_diff(std::span<const std::size_t> a, std::span<const std::size_t> b) {
    if (a.size() != b.size()) throw std::invalid_argument("membership_diff: length mismatch");
    if (a.empty()) return {};
    std::map<std::size_t, Eigen::Index> ia, ib;
    for (auto x : a) ia.emplace(x, 0);
    for (auto x : b) ib.emplace(x, 0);
    Eigen::Index k = 0;
    for (auto& [key, idx] : ia) idx = k++;
    k = 0;
    for (auto& [key, idx] : ib) idx = k++;
    const auto dim = std::max<Eigen::Index>(static_cast<Eigen::Index>(ia.size()), static_cast<Eigen::Index>(ib.size()));
    Matrix agree = Matrix::Zero(dim, dim);
    for (std::size_t i = 0; i < a.size(); ++i) agree(ia[a[i]], ib[b[i]]) += 1.0;
    const auto match = detail::hungarian(-agree);
    double matched = 0.0;
    for (Eigen::Index r = 0; r < dim; ++r) matched += agree(r, static_cast<Eigen::Index>(match[static_cast<std::size_t>(r)]));
    MembershipDiff d;
    d.count = a.size() - static_cast<std::size_t>(std::llround(matched));
    d.fraction = static_cast<double>(d.count) / static_cast<double>(a.size());
    return d;
}

/// Labels keyed by subject id; the two sides must cover the same subjects.
struct LabeledPartition {
    std::vector<std::string> ids;
    std::vector<std::string> labels;
};

/// Reads subject_id plus one label column (by name, or the last column when empty).
inline LabeledPartition read_labels(const csv::Table& t, const std::string& origin, const std::string& column = {}) {
    if (t.header.size() < 2 || t.header[0] != "subject_id")
        throw ValidationError(origin + ": header must start with subject_id");
    std::size_t col = t.header.size() - 1;
    if (!column.empty()) {
        auto it = std::find(t.header.begin() + 1, t.header.end(), column);
        if (it == t.header.end()) throw ValidationError(origin + ": no column named " + column);
        col = static_cast<std::size_t>(it - t.header.begin());
    }
    LabeledPartition p;
    std::set<std::string> seen;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        if (!seen.insert(row[0]).second)
            throw ValidationError(origin + ":" + std::to_string(t.line_numbers[r]) + ": duplicate subject " + row[0]);
        if (row[col].empty()) throw ValidationError(origin + ":" + std::to_string(t.line_numbers[r]) + ": empty label");
        p.ids.push_back(row[0]);
        p.labels.push_back(row[col]);
    }
    return p;
}

/// Aligns two labeled partitions on subject id and encodes labels as integers.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> align_labels(const LabeledPartition& a,
                                                                                  const LabeledPartition& b) {
    std::unordered_map<std::string, std::string> bl;
    for (std::size_t i = 0; i < b.ids.size(); ++i) bl.emplace(b.ids[i], b.labels[i]);
    if (bl.size() != a.ids.size()) throw ValidationError("partitions cover different subject sets");
    std::map<std::string, std::size_t> ca, cb;
    std::pair<std::vector<std::size_t>, std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < a.ids.size(); ++i) {
        auto it = bl.find(a.ids[i]);
        if (it == bl.end()) throw ValidationError("subject " + a.ids[i] + " missing from the second partition");
        out.first.push_back(ca.emplace(a.labels[i], ca.size()).first->second);
        out.second.push_back(cb.emplace(it->second, cb.size()).first->second);
    }
    return out;
}

}  // namespace dhbc
