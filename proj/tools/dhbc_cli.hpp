#pragma once

// Command-line front end: fit, simulate, eval, km.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include "dhbc/dhbc.hpp"

namespace dhbc::cli {

inline constexpr const char* kVersion = "0.1.0";

enum Exit : int { ok = 0, usage = 1, validation = 2, numerical = 3 };

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Small helpers

/// Shortest round-trip decimal, always with a decimal point or exponent.
inline std::string fmt_real(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    std::string s = os.str();
    for (int prec = 1; prec <= 17; ++prec) {
        std::ostringstream t;
        t << std::setprecision(prec) << v;
        if (std::stod(t.str()) == v) {
            s = t.str();
            break;
        }
    }
    if (std::isfinite(v) && s.find_first_of(".eE") == std::string::npos) s += ".0";
    return s;
}

inline std::string sha256_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path);
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, md, &len);
    EVP_MD_CTX_free(ctx);
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    return os.str();
}

inline Json to_json(const Matrix& m) {
    Json rows = Json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        Json row = Json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Matrix matrix_from_json(const Json& j, const std::string& what) {
    if (!j.is_array() || j.empty() || !j[0].is_array()) throw ValidationError(what + " must be a nonempty array of rows");
    Matrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(j[0].size()));
    for (std::size_t r = 0; r < j.size(); ++r) {
        if (j[r].size() != j[0].size()) throw ValidationError(what + " has ragged rows");
        for (std::size_t c = 0; c < j[r].size(); ++c)
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
    }
    return m;
}

inline Json params_json(const ClusterParams& p, const Model& m, const std::vector<std::string>& event_names) {
    Json j;
    j["B"] = to_json(p.lmm.b);
    j["G"] = to_json(p.lmm.g);
    j["sigma2"] = p.lmm.sigma2;
    j["Omega"] = to_json(p.lmm.omega);
    Json surv = Json::array();
    for (std::size_t v = 0; v < p.survival.size(); ++v) {
        Json s;
        s["event"] = event_names[v];
        if (const auto* h = std::get_if<HazardParams>(&p.survival[v])) {
            s["model"] = "piecewise_exponential";
            s["cuts"] = m.grids[v].cuts;
            s["lambdas"] = h->lambdas;
        } else {
            const auto& w = std::get<WeibullParams>(p.survival[v]);
            s["model"] = "weibull";
            s["shape"] = w.shape;
            s["scale"] = w.scale;
        }
        surv.push_back(std::move(s));
    }
    j["survival"] = std::move(surv);
    return j;
}

inline void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << text;
}

// "name=path" or plain path (name taken from the file stem).
inline std::pair<std::string, std::string> split_named(const std::string& arg) {
    const auto eq = arg.find('=');
    if (eq != std::string::npos && eq > 0) return {arg.substr(0, eq), arg.substr(eq + 1)};
    return {fs::path(arg).stem().string(), arg};
}

// ---------------------------------------------------------------------------
// fit

struct FitArgs {
    std::string long_csv;
    std::vector<std::string> surv;
    std::vector<std::string> project_out;
    std::string drop_variable;
    std::string out;
    std::string config;
    std::size_t max_clusters = 10;
    std::size_t min_cluster_size = 0;
    std::uint64_t seed = 1;
    std::size_t threads = 1;
    double grid_width = 0.5;
    std::string survival_model = "bpe";
    std::string split_init = "two_means";
    double alpha_min = 1e-3, alpha_max = 1e2;
    std::size_t alpha_count = 16;
    std::vector<double> alpha_grid;
    double tol = 1e-6;
    int max_iter = 200;
    int max_sweeps = 50;
    double psi_scale = 1.0;
    double nu = 0.0;  // 0: H + 2
    double g_psi_scale = 1.0;
    double g_nu = 0.0;  // 0: q + 2
    double sigma2_shape = 2.0, sigma2_rate = 1.0;
    double b_precision = 0.01;
    double gamma_a = 1.0, gamma_b = 0.1;
    double pi0_log_density = 0.0;
};

inline void add_fit_options(CLI::App& app, FitArgs& a) {
    app.add_option("--long", a.long_csv, "longitudinal CSV (subject_id,time,vars...)")->required();
    app.add_option("--surv", a.surv, "survival CSV (subject_id,time,event); repeat per event variable, optionally name=path")
        ->required();
    app.add_option("--out", a.out, "output directory")->required();
    app.add_option("--config", a.config, "flat key = value file; command-line flags take precedence")
        ->check(CLI::ExistingFile);
    app.add_option("--project-out", a.project_out, "static covariate columns to project out")->delimiter(',');
    app.add_option("--drop-variable", a.drop_variable, "refit without this clustering variable");
    app.add_option("--max-clusters", a.max_clusters)->check(CLI::PositiveNumber);
    app.add_option("--min-cluster-size", a.min_cluster_size, "0 derives it from the parameter count");
    app.add_option("--seed", a.seed);
    app.add_option("--threads", a.threads)->check(CLI::PositiveNumber);
    app.add_option("--grid-width", a.grid_width)->check(CLI::PositiveNumber);
    app.add_option("--survival-model", a.survival_model)->check(CLI::IsMember({"bpe", "weibull"}));
    app.add_option("--split-init", a.split_init)->check(CLI::IsMember({"two_means", "two_medoids"}));
    app.add_option("--alpha-min", a.alpha_min)->check(CLI::PositiveNumber);
    app.add_option("--alpha-max", a.alpha_max)->check(CLI::PositiveNumber);
    app.add_option("--alpha-count", a.alpha_count)->check(CLI::PositiveNumber);
    app.add_option("--alpha-grid", a.alpha_grid, "explicit increasing alpha values")->delimiter(',');
    app.add_option("--tol", a.tol)->check(CLI::PositiveNumber);
    app.add_option("--max-iter", a.max_iter)->check(CLI::PositiveNumber);
    app.add_option("--max-sweeps", a.max_sweeps)->check(CLI::PositiveNumber);
    app.add_option("--psi-scale", a.psi_scale)->check(CLI::PositiveNumber);
    app.add_option("--nu", a.nu);
    app.add_option("--g-psi-scale", a.g_psi_scale)->check(CLI::PositiveNumber);
    app.add_option("--g-nu", a.g_nu);
    app.add_option("--sigma2-shape", a.sigma2_shape)->check(CLI::PositiveNumber);
    app.add_option("--sigma2-rate", a.sigma2_rate)->check(CLI::PositiveNumber);
    app.add_option("--b-precision", a.b_precision)->check(CLI::NonNegativeNumber);
    app.add_option("--gamma-a", a.gamma_a);
    app.add_option("--gamma-b", a.gamma_b)->check(CLI::PositiveNumber);
    app.add_option("--pi0-log-density", a.pi0_log_density);
}

struct FitSetup {
    Cohort cohort;
    Model model;
    RunConfig run;
    MixtureConfig mix;
    std::vector<std::string> event_names;
    Json config;
    Json inputs;
};

/// Fills options the command line left unset from a flat key = value file. Keys are option
/// names without the leading dashes; underscores and dashes are interchangeable.
inline void apply_config_file(CLI::App& app, const std::string& path) {
    std::vector<CLI::ConfigItem> items;
    try {
        items = CLI::ConfigINI{}.from_file(path);
    } catch (const CLI::Error& e) {
        throw ValidationError(path + ": " + e.what());
    }
    for (const auto& item : items) {
        if (!item.parents.empty() || item.name == "++" || item.name == "--") continue;
        std::string key = item.name;
        std::replace(key.begin(), key.end(), '_', '-');
        CLI::Option* opt = app.get_option_no_throw("--" + key);
        if (opt == nullptr || key == "config" || key == "long" || key == "surv" || key == "out")
            throw ValidationError(path + ": unknown config key '" + item.name + "'");
        if (opt->count() > 0) continue;
        try {
            opt->add_result(item.inputs);
            opt->run_callback();
        } catch (const CLI::Error& e) {
            throw ValidationError(path + ": " + item.name + ": " + e.what());
        }
    }
}

inline FitSetup prepare_fit(const FitArgs& a) {
    FitSetup s;
    const auto long_table = csv::read_file(a.long_csv);
    std::vector<SurvivalSource> sources;
    s.inputs["longitudinal"] = {{"path", a.long_csv}, {"sha256", sha256_file(a.long_csv)}};
    Json surv_inputs = Json::array();
    for (const auto& arg : a.surv) {
        auto [name, path] = split_named(arg);
        sources.push_back({name, csv::read_file(path), path});
        s.event_names.push_back(name);
        surv_inputs.push_back({{"name", name}, {"path", path}, {"sha256", sha256_file(path)}});
    }
    s.inputs["survival"] = std::move(surv_inputs);
    if (!a.config.empty()) s.inputs["config"] = {{"path", a.config}, {"sha256", sha256_file(a.config)}};

    s.cohort = load_cohort(long_table, a.long_csv, sources, a.project_out);
    if (!a.project_out.empty()) s.cohort = project_out_covariates(s.cohort, a.project_out);
    if (!a.drop_variable.empty()) s.cohort = drop_variable(s.cohort, a.drop_variable);

    ModelOptions mo;
    mo.grid_width = a.grid_width;
    mo.survival = a.survival_model == "weibull" ? SurvivalModel::weibull : SurvivalModel::piecewise_exponential;
    s.model = Model::build(s.cohort, mo);

    s.run.max_clusters = a.max_clusters;
    s.run.min_cluster_size = a.min_cluster_size;
    s.run.alpha_grid = a.alpha_grid.empty() ? geometric_grid(a.alpha_min, a.alpha_max, a.alpha_count) : a.alpha_grid;
    s.run.split_init = a.split_init == "two_medoids" ? SplitInit::two_medoids : SplitInit::two_means;
    s.run.seed = a.seed;
    s.run.tol = a.tol;
    s.run.max_iter = a.max_iter;
    s.run.max_sweeps = a.max_sweeps;
    s.run.threads = a.threads;
    try {
        s.run.validate();
    } catch (const std::invalid_argument& e) {
        throw ValidationError(e.what());
    }

    s.mix = MixtureConfig::defaults(s.model);
    auto& pr = s.mix.lmm_priors;
    pr.psi *= a.psi_scale;
    if (a.nu != 0.0) pr.nu = a.nu;
    pr.g_psi *= a.g_psi_scale;
    if (a.g_nu != 0.0) pr.g_nu = a.g_nu;
    pr.sigma2_shape = a.sigma2_shape;
    pr.sigma2_rate = a.sigma2_rate;
    pr.b_precision = a.b_precision;
    for (auto& g : s.mix.gamma_priors) g = GammaPrior{a.gamma_a, a.gamma_b};
    s.mix.pi0_log_density = a.pi0_log_density;
    try {
        pr.validate(s.model.h, s.model.q);
        for (const auto& g : s.mix.gamma_priors) g.validate();
    } catch (const std::invalid_argument& e) {
        throw ValidationError(e.what());
    }

    Json& c = s.config;
    c["variables"] = s.cohort.variable_names;
    c["project_out"] = a.project_out;
    c["drop_variable"] = a.drop_variable;
    c["design"] = {{"fixed", "intercept + time"}, {"random", "intercept"}};
    c["max_clusters"] = s.run.max_clusters;
    c["min_cluster_size"] = s.run.effective_min_size(s.model);
    c["alpha_grid"] = s.run.alpha_grid;
    c["split_init"] = a.split_init;
    c["seed"] = s.run.seed;
    c["threads"] = s.run.threads;
    c["tol"] = s.run.tol;
    c["max_iter"] = s.run.max_iter;
    c["max_sweeps"] = s.run.max_sweeps;
    c["grid_width"] = a.grid_width;
    c["survival_model"] = a.survival_model;
    c["psi_scale"] = a.psi_scale;
    c["nu"] = pr.nu;
    c["g_psi_scale"] = a.g_psi_scale;
    c["g_nu"] = pr.g_nu;
    c["sigma2_shape"] = pr.sigma2_shape;
    c["sigma2_rate"] = pr.sigma2_rate;
    c["b_precision"] = pr.b_precision;
    c["gamma_a"] = a.gamma_a;
    c["gamma_b"] = a.gamma_b;
    c["pi0_log_density"] = s.mix.pi0_log_density;
    return s;
}

inline Json dendrogram_node_json(const Dendrogram& d, int id, const FitSetup& s) {
    const auto& n = d.nodes[static_cast<std::size_t>(id)];
    Json j;
    j["id"] = n.id;
    j["size"] = n.members.size();
    std::vector<std::string> ids;
    for (auto i : n.members) ids.push_back(s.cohort.subjects[i].id);
    j["members"] = std::move(ids);
    j["alpha"] = n.alpha;
    j["level"] = n.level;
    j["log_posterior"] = n.log_posterior;
    j["cluster_term"] = n.term;
    j["params"] = params_json(n.params, s.model, s.event_names);
    Json kids = Json::array();
    if (n.left >= 0) {
        kids.push_back(dendrogram_node_json(d, n.left, s));
        kids.push_back(dendrogram_node_json(d, n.right, s));
    }
    j["children"] = std::move(kids);
    return j;
}

inline void write_fit_outputs(const fs::path& dir, const Dendrogram& d, const FitSetup& s) {
    fs::create_directories(dir);

    std::ostringstream as;
    as << "subject_id";
    for (const auto& lv : d.levels) as << ",k" << lv.leaves.size();
    as << '\n';
    for (std::size_t i = 0; i < s.cohort.size(); ++i) {
        as << s.cohort.subjects[i].id;
        for (const auto& lv : d.levels) as << ',' << lv.labels[i];
        as << '\n';
    }
    write_text(dir / "assignments.csv", as.str());

    Json dj;
    dj["min_cluster_size"] = d.min_cluster_size;
    dj["numerical_failure"] = d.numerical_failure;
    dj["diagnostic"] = d.diagnostic;
    dj["root"] = dendrogram_node_json(d, 0, s);
    Json levels = Json::array();
    for (const auto& lv : d.levels) {
        levels.push_back({{"clusters", lv.leaves.size()},
                          {"alpha", lv.alpha},
                          {"log_posterior", lv.log_posterior},
                          {"split_node", lv.split_node},
                          {"leaves", lv.leaves}});
    }
    dj["levels"] = std::move(levels);
    write_text(dir / "dendrogram.json", dj.dump(2) + "\n");

    const auto& fin = d.final_level();
    for (std::size_t k = 0; k < fin.leaves.size(); ++k) {
        const auto& node = d.nodes[static_cast<std::size_t>(fin.leaves[k])];
        const std::string label = std::to_string(k + 1);
        Json pj;
        pj["cluster"] = k + 1;
        pj["node"] = node.id;
        pj["size"] = node.members.size();
        pj["cluster_term"] = node.term;
        pj["params"] = params_json(node.params, s.model, s.event_names);
        write_text(dir / ("params_" + label + ".json"), pj.dump(2) + "\n");
        for (std::size_t v = 0; v < s.model.event_count(); ++v) {
            std::vector<SurvivalRecord> recs;
            for (auto i : node.members) recs.push_back(s.model.events[v][i]);
            std::ostringstream ks;
            const auto steps = kaplan_meier(recs);
            write_km_csv(ks, steps);
            const std::string name =
                s.model.event_count() == 1 ? "km_" + label + ".csv" : "km_" + label + "_" + s.event_names[v] + ".csv";
            write_text(dir / name, ks.str());
        }
    }
}

inline Json manifest_base(const std::string& command) {
    Json m;
    m["tool"] = "dhbc";
    m["version"] = kVersion;
    m["command"] = command;
    return m;
}

inline int cmd_fit(const FitArgs& a, std::ostream& out, std::ostream& err) {
    const auto start = std::chrono::steady_clock::now();
    FitSetup s;
    try {
        s = prepare_fit(a);
    } catch (const ValidationError& e) {
        err << "validation error: " << e.what() << '\n';
        return validation;
    } catch (const DegenerateFit& e) {
        err << "validation error: " << e.what() << '\n';
        return validation;
    }

    Dendrogram d;
    bool root_failed = false;
    std::string failure;
    try {
        d = run_dhbc(s.model, s.run, s.mix);
    } catch (const Error& e) {
        root_failed = true;
        failure = e.what();
    }

    const fs::path dir(a.out);
    Json man = manifest_base("fit");
    man["seed"] = s.run.seed;
    man["config"] = s.config;
    man["inputs"] = s.inputs;
    man["subjects"] = s.cohort.size();
    if (root_failed) {
        fs::create_directories(dir);
        man["status"] = "numerical_failure";
        man["diagnostic"] = failure;
        man["wall_clock_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        write_text(dir / "manifest.json", man.dump(2) + "\n");
        err << "numerical failure: " << failure << '\n';
        return numerical;
    }
    write_fit_outputs(dir, d, s);
    Json trace = Json::array();
    for (const auto& [alpha, obj] : d.alpha_trace) trace.push_back({{"alpha", alpha}, {"log_posterior", obj}});
    man["alpha_trace"] = std::move(trace);
    man["clusters"] = d.final_level().leaves.size();
    man["status"] = d.numerical_failure ? "numerical_failure" : "ok";
    if (d.numerical_failure) man["diagnostic"] = d.diagnostic;
    man["wall_clock_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_text(dir / "manifest.json", man.dump(2) + "\n");

    if (d.numerical_failure) {
        err << "numerical failure: " << d.diagnostic << " (last stable dendrogram written)\n";
        return numerical;
    }
    out << "clusters=" << d.final_level().leaves.size() << '\n';
    out << "log_posterior=" << fmt_real(d.final_level().log_posterior) << '\n';
    return ok;
}

// ---------------------------------------------------------------------------
// simulate

inline SimScenario scenario_from_json(const Json& j) {
    SimScenario sc;
    try {
        sc.n_subjects = j.at("n_subjects").get<std::size_t>();
        sc.weights = j.at("weights").get<std::vector<double>>();
        if (j.contains("visit_times")) sc.visit_times = j["visit_times"].get<std::vector<double>>();
        sc.dropout = j.value("dropout", 0.0);
        if (j.contains("censoring")) {
            sc.censor_min = j["censoring"].at("min").get<double>();
            sc.censor_max = j["censoring"].at("max").get<double>();
        }
        sc.seed = j.value("seed", std::uint64_t{1});
        sc.fixed_degree = j.value("fixed_degree", 1);
        sc.random_degree = j.value("random_degree", 0);
        if (j.contains("variable_names")) sc.variable_names = j["variable_names"].get<std::vector<std::string>>();
        if (j.contains("event_names")) sc.event_names = j["event_names"].get<std::vector<std::string>>();
        for (const auto& c : j.at("clusters")) {
            SimCluster cl;
            cl.lmm.b = matrix_from_json(c.at("B"), "B");
            cl.lmm.g = matrix_from_json(c.at("G"), "G");
            cl.lmm.sigma2 = c.at("sigma2").get<double>();
            cl.lmm.omega = matrix_from_json(c.at("Omega"), "Omega");
            for (const auto& h : c.at("hazards")) {
                SimHazard hz;
                hz.grid.cuts = h.at("cuts").get<std::vector<double>>();
                hz.hazard.lambdas = h.at("lambdas").get<std::vector<double>>();
                cl.hazards.push_back(std::move(hz));
            }
            sc.clusters.push_back(std::move(cl));
        }
        sc.validate();
    } catch (const Json::exception& e) {
        throw ValidationError(std::string("scenario: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ValidationError(std::string("scenario: ") + e.what());
    }
    return sc;
}

inline void write_cohort_csv(const fs::path& dir, const Cohort& c, std::span<const std::size_t> labels) {
    auto num = [](double v) { return fmt_real(v); };
    std::ostringstream ls;
    ls << "subject_id,time";
    for (const auto& v : c.variable_names) ls << ',' << v;
    ls << '\n';
    for (const auto& s : c.subjects)
        for (Eigen::Index r = 0; r < s.y.rows(); ++r) {
            ls << s.id << ',' << num(s.times[static_cast<std::size_t>(r)]);
            for (Eigen::Index k = 0; k < s.y.cols(); ++k) ls << ',' << num(s.y(r, k));
            ls << '\n';
        }
    write_text(dir / "longitudinal.csv", ls.str());
    for (const auto& ev : c.events) {
        std::ostringstream ss;
        ss << "subject_id,time,event\n";
        for (const auto& r : ev.records) ss << r.subject_id << ',' << num(r.t) << ',' << r.d << '\n';
        write_text(dir / (c.events.size() == 1 ? std::string("survival.csv") : "survival_" + ev.name + ".csv"), ss.str());
    }
    std::ostringstream ts;
    ts << "subject_id,cluster\n";
    for (std::size_t i = 0; i < c.size(); ++i) ts << c.subjects[i].id << ',' << labels[i] + 1 << '\n';
    write_text(dir / "truth.csv", ts.str());
}

inline int cmd_simulate(const std::string& scenario_path, std::optional<std::uint64_t> seed, const std::string& out_dir,
                        std::ostream& err) {
    SimScenario sc;
    try {
        std::ifstream in(scenario_path);
        if (!in) throw ValidationError("cannot open " + scenario_path);
        Json j;
        try {
            j = Json::parse(in);
        } catch (const Json::exception& e) {
            throw ValidationError(scenario_path + ": " + e.what());
        }
        sc = scenario_from_json(j);
        if (seed) sc.seed = *seed;
    } catch (const ValidationError& e) {
        err << "validation error: " << e.what() << '\n';
        return validation;
    }
    const auto sim = simulate_cohort(sc);
    fs::create_directories(out_dir);
    write_cohort_csv(out_dir, sim.cohort, sim.labels);
    return ok;
}

// ---------------------------------------------------------------------------
// eval

inline int cmd_eval(const std::string& pred, const std::string& truth, const std::string& pred_col,
                    const std::string& truth_col, std::ostream& out, std::ostream& err) {
    try {
        const auto p = read_labels(csv::read_file(pred), pred, pred_col);
        const auto t = read_labels(csv::read_file(truth), truth, truth_col);
        const auto [a, b] = align_labels(p, t);
        const auto d = membership_diff(a, b);
        out << "ari=" << fmt_real(adjusted_rand_index(a, b)) << '\n';
        out << "diff_count=" << d.count << '\n';
        out << "diff_fraction=" << fmt_real(d.fraction) << '\n';
    } catch (const ValidationError& e) {
        err << "validation error: " << e.what() << '\n';
        return validation;
    }
    return ok;
}

// ---------------------------------------------------------------------------
// km

inline int cmd_km(const std::string& surv, const std::string& groups, const std::string& group_col, const std::string& out_path,
                  std::ostream& err) {
    std::ostringstream os;
    try {
        const auto t = csv::read_file(surv);
        if (t.header != std::vector<std::string>{"subject_id", "time", "event"})
            throw ValidationError(surv + ": header must be subject_id, time, event");
        std::vector<SurvivalRecord> recs;
        std::set<std::string> seen;
        for (std::size_t r = 0; r < t.rows.size(); ++r) {
            const auto& row = t.rows[r];
            const std::string where = surv + ":" + std::to_string(t.line_numbers[r]);
            SurvivalRecord rec{row[0], csv::parse_number(row[1], where), 0};
            if (!(rec.t > 0.0)) throw ValidationError(where + ": survival time must be positive");
            if (row[2] != "0" && row[2] != "1") throw ValidationError(where + ": event must be 0 or 1");
            rec.d = row[2] == "1";
            if (!seen.insert(rec.subject_id).second) throw ValidationError(where + ": duplicate subject " + rec.subject_id);
            recs.push_back(std::move(rec));
        }
        if (recs.empty()) throw ValidationError(surv + ": no records");
        os << std::setprecision(17);
        if (groups.empty()) {
            write_km_csv(os, kaplan_meier(recs));
        } else {
            const auto g = read_labels(csv::read_file(groups), groups, group_col);
            std::map<std::string, std::string> label_of;
            for (std::size_t i = 0; i < g.ids.size(); ++i) label_of.emplace(g.ids[i], g.labels[i]);
            if (label_of.size() != recs.size()) throw ValidationError("groups and survival cover different subject sets");
            std::map<std::string, std::vector<SurvivalRecord>> by;
            for (const auto& r : recs) {
                auto it = label_of.find(r.subject_id);
                if (it == label_of.end()) throw ValidationError("subject " + r.subject_id + " has no group label");
                by[it->second].push_back(r);
            }
            std::vector<std::string> order;
            for (const auto& [k, v] : by) order.push_back(k);
            std::stable_sort(order.begin(), order.end(), [](const std::string& x, const std::string& y) {
                const bool nx = !x.empty() && x.find_first_not_of("0123456789") == std::string::npos;
                const bool ny = !y.empty() && y.find_first_not_of("0123456789") == std::string::npos;
                if (nx && ny && x.size() != y.size()) return x.size() < y.size();
                return x < y;
            });
            os << "group,time,survival,at_risk,events\n";
            for (const auto& k : order)
                for (const auto& s : kaplan_meier(by[k]))
                    os << k << ',' << s.time << ',' << s.survival << ',' << s.at_risk << ',' << s.events << '\n';
        }
    } catch (const ValidationError& e) {
        err << "validation error: " << e.what() << '\n';
        return validation;
    }
    write_text(out_path, os.str());
    return ok;
}

// ---------------------------------------------------------------------------
// dispatch

inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Divisive hierarchical clustering of longitudinal and time-to-event data"};
    app.set_version_flag("--version", std::string("dhbc ") + kVersion);
    app.require_subcommand(1);

    FitArgs fit;
    auto* fit_cmd = app.add_subcommand("fit", "cluster a cohort");
    add_fit_options(*fit_cmd, fit);

    std::string scenario, sim_out;
    std::optional<std::uint64_t> sim_seed;
    auto* sim_cmd = app.add_subcommand("simulate", "generate a synthetic cohort");
    sim_cmd->add_option("--scenario", scenario, "scenario JSON")->required();
    sim_cmd->add_option("--seed", sim_seed);
    sim_cmd->add_option("--out", sim_out, "output directory")->required();

    std::string pred, truth, pred_col, truth_col;
    auto* eval_cmd = app.add_subcommand("eval", "compare two labelings");
    eval_cmd->add_option("--pred", pred)->required();
    eval_cmd->add_option("--truth", truth)->required();
    eval_cmd->add_option("--pred-column", pred_col, "label column (default: last)");
    eval_cmd->add_option("--truth-column", truth_col, "label column (default: last)");

    std::string km_surv, km_groups, km_group_col, km_out;
    auto* km_cmd = app.add_subcommand("km", "Kaplan-Meier tables");
    km_cmd->add_option("--surv", km_surv)->required();
    km_cmd->add_option("--groups", km_groups, "labels file (subject_id, label...)");
    km_cmd->add_option("--group-column", km_group_col, "label column (default: last)");
    km_cmd->add_option("--out", km_out)->required();

    std::reverse(args.begin(), args.end());
    try {
        app.parse(args);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return ok;
    } catch (const CLI::CallForVersion&) {
        out << "dhbc " << kVersion << '\n';
        return ok;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << '\n';
        return validation;
    }

    if (fit_cmd->parsed()) {
        if (!fit.config.empty()) {
            try {
                apply_config_file(*fit_cmd, fit.config);
            } catch (const ValidationError& e) {
                err << "validation error: " << e.what() << '\n';
                return validation;
            }
        }
        return cmd_fit(fit, out, err);
    }
    if (sim_cmd->parsed()) return cmd_simulate(scenario, sim_seed, sim_out, err);
    if (eval_cmd->parsed()) return cmd_eval(pred, truth, pred_col, truth_col, out, err);
    return cmd_km(km_surv, km_groups, km_group_col, km_out, err);
}

}  // namespace dhbc::cli
