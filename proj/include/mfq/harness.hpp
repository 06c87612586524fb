#pragma once

// Experiment orchestration behind the mfq command-line tool: config files,
// (N, seed) sweeps, trajectory comparison and report emission.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "mfq/error.hpp"
#include "mfq/io.hpp"
#include "mfq/kernel.hpp"
#include "mfq/limit_ode.hpp"
#include "mfq/mdp.hpp"
#include "mfq/qnet.hpp"
#include "mfq/trainer.hpp"

namespace mfq {

struct Tolerances {
    std::optional<double> final_sup; // limit: sup |h_T - V| (unchecked when absent)
    double settle = 1e-6;            // finite horizon: per-slice settling threshold
    double lyapunov_slack = 1e-10;
    double bellman = 1e-12;          // value-iteration residual target
    double pd_ratio = 1e-4;          // amatrix: eig_min > pd_ratio * eig_max
    double ratio_min = 1.3;          // compare: shrink factor band between consecutive widths
    double ratio_max = 3.0;
    double regression_sup = 1e-8;
    double decay_fraction = 0.95;
    double regression_loss = 1e-2;

    bool operator==(const Tolerances&) const = default;
};

struct ExperimentConfig {
    TrainMode mode = TrainMode::Infinite;
    std::string mdp_path;
    std::string dataset_path;
    Activation activation = Activation::Tanh;
    InitLaw law;
    double alpha = 1.0;
    std::optional<double> gamma; // overrides the MDP file's discount
    std::vector<std::size_t> n_list{1000};
    std::vector<std::uint64_t> seeds{0};
    double T = 1.0;
    std::size_t snapshot_stride = 0;
    std::size_t burn_in = 0;
    double ode_dt = 0.01;
    double ode_t_end = 0.0; // limit: required; regress: 0 selects 50 / eig_min
    std::size_t ode_store_every = 1;
    KernelMethod a_method = KernelMethod::MonteCarlo;
    std::size_t a_samples = 1000000;
    std::uint64_t a_seed = 0;
    std::size_t a_chunk = 1 << 16;
    std::string h0 = "gaussian"; // gaussian | zero
    std::uint64_t h0_seed = 0;
    bool identity_a = false;
    std::string output_dir = "out";
    Tolerances tolerances;

    bool operator==(const ExperimentConfig&) const = default;
};

inline void validate_config(const ExperimentConfig& c) {
    auto bad = [](const std::string& m) { fail(ErrorCode::InvalidInput, "config: " + m); };
    if (c.mode == TrainMode::Regression ? c.dataset_path.empty() : c.mdp_path.empty()) {
        bad(c.mode == TrainMode::Regression ? "regression mode needs dataset_path" : "MDP modes need mdp_path");
    }
    if (c.n_list.empty()) bad("n_list must be nonempty");
    for (std::size_t i = 0; i < c.n_list.size(); ++i) {
        if (c.n_list[i] < 1) bad("n_list entries must be >= 1");
        if (i > 0 && c.n_list[i] <= c.n_list[i - 1]) bad("n_list must be strictly ascending");
    }
    if (c.seeds.empty()) bad("seeds must be nonempty");
    if (!(c.alpha > 0.0) || !std::isfinite(c.alpha)) bad("alpha must be positive");
    if (c.gamma && !(*c.gamma >= 0.0 && *c.gamma <= 1.0)) bad("gamma must lie in [0, 1]");
    if (!(c.T > 0.0) || !std::isfinite(c.T)) bad("T must be positive");
    if (!(c.ode_dt > 0.0) || !std::isfinite(c.ode_dt)) bad("ode_dt must be positive");
    if (!(c.ode_t_end >= 0.0) || !std::isfinite(c.ode_t_end)) bad("ode_t_end must be >= 0");
    if (c.ode_store_every < 1) bad("ode_store_every must be >= 1");
    if (c.a_samples < 1 || c.a_chunk < 1) bad("a_samples and a_chunk must be >= 1");
    if (c.h0 != "gaussian" && c.h0 != "zero") bad("h0 must be 'gaussian' or 'zero'");
    if (!(c.tolerances.ratio_min <= c.tolerances.ratio_max)) bad("ratio_min must not exceed ratio_max");
    check_law(c.law);
}

inline json to_json(const Tolerances& t) {
    json j;
    j["final_sup"] = t.final_sup ? json(*t.final_sup) : json(nullptr);
    j["settle"] = t.settle;
    j["lyapunov_slack"] = t.lyapunov_slack;
    j["bellman"] = t.bellman;
    j["pd_ratio"] = t.pd_ratio;
    j["ratio_min"] = t.ratio_min;
    j["ratio_max"] = t.ratio_max;
    j["regression_sup"] = t.regression_sup;
    j["decay_fraction"] = t.decay_fraction;
    j["regression_loss"] = t.regression_loss;
    return j;
}

inline json to_json(const ExperimentConfig& c) {
    json j;
    j["mode"] = std::string(to_string(c.mode));
    j["mdp_path"] = c.mdp_path.empty() ? json(nullptr) : json(c.mdp_path);
    j["dataset_path"] = c.dataset_path.empty() ? json(nullptr) : json(c.dataset_path);
    j["activation"] = std::string(to_string(c.activation));
    j["c_law"] = {{"kind", std::string(to_string(c.law.c.kind))}, {"bound", c.law.c.bound}};
    j["w_law"] = {{"kind", std::string(to_string(c.law.w.kind))}, {"bound", c.law.w.bound}};
    j["alpha"] = c.alpha;
    j["gamma"] = c.gamma ? json(*c.gamma) : json(nullptr);
    j["n_list"] = c.n_list;
    j["seeds"] = c.seeds;
    j["T"] = c.T;
    j["snapshot_stride"] = c.snapshot_stride;
    j["burn_in"] = c.burn_in;
    j["ode_dt"] = c.ode_dt;
    j["ode_t_end"] = c.ode_t_end;
    j["ode_store_every"] = c.ode_store_every;
    j["a_method"] = std::string(to_string(c.a_method));
    j["a_samples"] = c.a_samples;
    j["a_seed"] = c.a_seed;
    j["a_chunk"] = c.a_chunk;
    j["h0"] = c.h0;
    j["h0_seed"] = c.h0_seed;
    j["identity_a"] = c.identity_a;
    j["output_dir"] = c.output_dir;
    j["tolerances"] = to_json(c.tolerances);
    return j;
}

namespace detail {

template <typename T>
void read_field(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = get_as<T>(j.at(key), key);
}

template <typename T>
void read_optional(const json& j, const char* key, std::optional<T>& out) {
    if (!j.contains(key)) return;
    if (j.at(key).is_null()) {
        out.reset();
    } else {
        out = get_as<T>(j.at(key), key);
    }
}

inline void read_path(const json& j, const char* key, std::string& out) {
    if (!j.contains(key)) return;
    out = j.at(key).is_null() ? std::string() : get_as<std::string>(j.at(key), key);
}

} // namespace detail

inline Tolerances parse_tolerances(const json& j) {
    check_keys(j,
               {"final_sup", "settle", "lyapunov_slack", "bellman", "pd_ratio", "ratio_min", "ratio_max",
                "regression_sup", "decay_fraction", "regression_loss"},
               "tolerances");
    Tolerances t;
    detail::read_optional(j, "final_sup", t.final_sup);
    detail::read_field(j, "settle", t.settle);
    detail::read_field(j, "lyapunov_slack", t.lyapunov_slack);
    detail::read_field(j, "bellman", t.bellman);
    detail::read_field(j, "pd_ratio", t.pd_ratio);
    detail::read_field(j, "ratio_min", t.ratio_min);
    detail::read_field(j, "ratio_max", t.ratio_max);
    detail::read_field(j, "regression_sup", t.regression_sup);
    detail::read_field(j, "decay_fraction", t.decay_fraction);
    detail::read_field(j, "regression_loss", t.regression_loss);
    return t;
}

/// Missing fields keep their defaults; unknown fields are an error.
inline ExperimentConfig parse_config(const json& j) {
    check_keys(j,
               {"mode", "mdp_path", "dataset_path", "activation", "c_law", "w_law", "alpha", "gamma", "n_list",
                "seeds", "T", "snapshot_stride", "burn_in", "ode_dt", "ode_t_end", "ode_store_every", "a_method",
                "a_samples", "a_seed", "a_chunk", "h0", "h0_seed", "identity_a", "output_dir", "tolerances"},
               "config");
    ExperimentConfig c;
    if (j.contains("mode")) c.mode = parse_train_mode(get_as<std::string>(j.at("mode"), "mode"));
    detail::read_path(j, "mdp_path", c.mdp_path);
    detail::read_path(j, "dataset_path", c.dataset_path);
    if (j.contains("activation")) {
        c.activation = parse_activation(get_as<std::string>(j.at("activation"), "activation"));
    }
    if (j.contains("c_law")) {
        const auto& l = j.at("c_law");
        check_keys(l, {"kind", "bound"}, "c_law");
        if (l.contains("kind")) c.law.c.kind = parse_c_kind(get_as<std::string>(l.at("kind"), "c_law.kind"));
        detail::read_field(l, "bound", c.law.c.bound);
    }
    if (j.contains("w_law")) {
        const auto& l = j.at("w_law");
        check_keys(l, {"kind", "bound"}, "w_law");
        if (l.contains("kind")) c.law.w.kind = parse_w_kind(get_as<std::string>(l.at("kind"), "w_law.kind"));
        detail::read_field(l, "bound", c.law.w.bound);
    }
    detail::read_field(j, "alpha", c.alpha);
    detail::read_optional(j, "gamma", c.gamma);
    detail::read_field(j, "n_list", c.n_list);
    detail::read_field(j, "seeds", c.seeds);
    detail::read_field(j, "T", c.T);
    detail::read_field(j, "snapshot_stride", c.snapshot_stride);
    detail::read_field(j, "burn_in", c.burn_in);
    detail::read_field(j, "ode_dt", c.ode_dt);
    detail::read_field(j, "ode_t_end", c.ode_t_end);
    detail::read_field(j, "ode_store_every", c.ode_store_every);
    if (j.contains("a_method")) c.a_method = parse_kernel_method(get_as<std::string>(j.at("a_method"), "a_method"));
    detail::read_field(j, "a_samples", c.a_samples);
    detail::read_field(j, "a_seed", c.a_seed);
    detail::read_field(j, "a_chunk", c.a_chunk);
    detail::read_field(j, "h0", c.h0);
    detail::read_field(j, "h0_seed", c.h0_seed);
    detail::read_field(j, "identity_a", c.identity_a);
    detail::read_field(j, "output_dir", c.output_dir);
    if (j.contains("tolerances")) c.tolerances = parse_tolerances(j.at("tolerances"));
    validate_config(c);
    return c;
}

/// Parses a config file; relative input paths are taken relative to the
/// file's directory. The output directory stays relative to the caller.
inline ExperimentConfig load_config(const fs::path& path) {
    ExperimentConfig c = parse_config(read_json(path));
    const fs::path base = fs::absolute(path).parent_path();
    auto resolve = [&](std::string& p) {
        if (!p.empty() && fs::path(p).is_relative()) p = (base / p).lexically_normal().string();
    };
    resolve(c.mdp_path);
    resolve(c.dataset_path);
    return c;
}

inline std::string config_hash(const ExperimentConfig& c) { return sha1_hex(to_json(c).dump()); }

enum class OutputFormat { Csv, Json };

inline OutputFormat parse_output_format(std::string_view s) {
    if (s == "csv") return OutputFormat::Csv;
    if (s == "json") return OutputFormat::Json;
    fail(ErrorCode::InvalidInput, "format must be csv or json");
}

struct RunOptions {
    std::optional<fs::path> out;
    std::int64_t seed_offset = 0;
    std::size_t workers = 1;
    OutputFormat format = OutputFormat::Csv;
    std::ostream* log = nullptr;
};

/// Applies --out and --seed-offset. The offset shifts every seed in the
/// config (training, kernel estimate, initial condition).
inline ExperimentConfig effective_config(ExperimentConfig c, const RunOptions& opt) {
    if (opt.out) c.output_dir = opt.out->string();
    const auto shift = static_cast<std::uint64_t>(opt.seed_offset);
    for (auto& s : c.seeds) s += shift;
    c.a_seed += shift;
    c.h0_seed += shift;
    return c;
}

// ---- tables on disk ------------------------------------------------------

inline fs::path write_table(const fs::path& dir, const std::string& stem, const CsvTable& t, OutputFormat fmt) {
    if (fmt == OutputFormat::Csv) {
        const fs::path p = dir / (stem + ".csv");
        write_csv(p, t);
        return p;
    }
    const fs::path p = dir / (stem + ".json");
    write_json(p, json{{"columns", t.header}, {"rows", t.rows}});
    return p;
}

inline CsvTable read_table(const fs::path& dir, const std::string& stem) {
    if (fs::exists(dir / (stem + ".csv"))) return read_csv(dir / (stem + ".csv"));
    if (fs::exists(dir / (stem + ".json"))) {
        const json j = read_json(dir / (stem + ".json"));
        CsvTable t;
        t.header = get_as<std::vector<std::string>>(j.at("columns"), "columns");
        t.rows = get_as<std::vector<Vector>>(j.at("rows"), "rows");
        return t;
    }
    fail(ErrorCode::Io, "missing table " + (dir / stem).string() + ".{csv,json}");
}

inline void write_meta(const fs::path& dir, const std::string& stem, json meta) {
    write_json(dir / (stem + ".meta.json"), meta);
}

inline json read_meta(const fs::path& dir, const std::string& stem) {
    return read_json(dir / (stem + ".meta.json"));
}

inline std::string train_stem(std::size_t n, std::uint64_t seed) {
    return "train_N" + std::to_string(n) + "_seed" + std::to_string(seed);
}

// ---- problem loading -----------------------------------------------------

struct Problem {
    TrainMode mode = TrainMode::Infinite;
    std::optional<ValidatedMdp> mdp;
    RegressionDataset data;
    std::string spec_hash;
    std::vector<std::string> columns; // one per table entry
    Eigen::MatrixXd Z;                // kernel inputs
};

inline Problem load_problem(const ExperimentConfig& c) {
    Problem p;
    p.mode = c.mode;
    if (c.mode == TrainMode::Regression) {
        if (!fs::exists(c.dataset_path)) fail(ErrorCode::InvalidInput, "dataset not found: " + c.dataset_path);
        auto loaded = load_dataset(c.dataset_path);
        validate_dataset(loaded.data);
        p.data = std::move(loaded.data);
        p.spec_hash = loaded.hash;
        p.columns = sample_columns(p.data.xs.size());
        p.Z = embedding_matrix(p.data);
        return p;
    }
    if (!fs::exists(c.mdp_path)) fail(ErrorCode::InvalidInput, "MDP spec not found: " + c.mdp_path);
    auto loaded = load_mdp_spec(c.mdp_path);
    ValidatedMdp mdp = validate_mdp(loaded.spec);
    if (c.gamma) mdp = mdp.with_gamma(*c.gamma);
    if (c.mode == TrainMode::Finite && !mdp.finite()) fail(ErrorCode::InvalidInput, "finite mode needs a horizon");
    if (c.mode == TrainMode::Infinite && mdp.finite()) {
        fail(ErrorCode::InvalidInput, "infinite mode on a finite-horizon spec");
    }
    p.spec_hash = loaded.hash;
    p.columns = table_columns(mdp.n_states(), mdp.n_actions(), mdp.finite() ? mdp.horizon() + 1 : 1);
    p.Z = embedding_matrix(mdp);
    p.mdp = std::move(mdp);
    return p;
}

inline json base_meta(const std::string& kind, const ExperimentConfig& c, const Problem& p) {
    return json{{"kind", kind},
                {"mode", std::string(to_string(c.mode))},
                {"config_hash", config_hash(c)},
                {"spec_hash", p.spec_hash}};
}

/// Kernel for the problem's inputs per the config; regression kernels carry
/// the 1/M factor. The identity path returns alpha I with unit features.
inline KernelTensor build_kernel(const ExperimentConfig& c, const Problem& p, std::size_t workers) {
    const bool per_sample = p.mode == TrainMode::Regression;
    if (c.identity_a || c.a_method == KernelMethod::Identity) {
        KernelTensor k;
        k.alpha = c.alpha;
        k.method = KernelMethod::Identity;
        k.entries = c.alpha * Eigen::MatrixXd::Identity(p.Z.rows(), p.Z.rows());
        k.feature_cov = Eigen::MatrixXd::Identity(p.Z.rows(), p.Z.rows());
        k.per_sample_normalized = per_sample;
        pd_check(k);
        return k;
    }
    KernelTensor k;
    if (c.a_method == KernelMethod::Quadrature) {
        QuadratureOptions q;
        q.divide_by_count = per_sample;
        k = quadrature_A(c.law, c.activation, p.Z, c.alpha, q);
    } else {
        KernelOptions o;
        o.samples = c.a_samples;
        o.seed = c.a_seed;
        o.chunk = c.a_chunk;
        o.workers = workers;
        o.divide_by_count = per_sample;
        k = estimate_A(c.law, c.activation, p.Z, c.alpha, o);
    }
    pd_check(k);
    return k;
}

inline void write_kernel(const fs::path& dir, const KernelTensor& A, const ExperimentConfig& c, const Problem& p,
                         OutputFormat fmt) {
    const std::vector<std::string> cols =
        p.mode == TrainMode::Regression
            ? sample_columns(static_cast<std::size_t>(A.size()))
            : table_columns(p.mdp->n_states(), p.mdp->n_actions(), 1);
    write_table(dir, "amatrix", matrix_csv(A.entries, cols), fmt);
    write_table(dir, "amatrix_features", matrix_csv(A.feature_cov, cols), fmt);
    if (A.std_error.size() > 0) write_table(dir, "amatrix_stderr", matrix_csv(A.std_error, cols), fmt);
    json meta = base_meta("amatrix", c, p);
    meta.update(kernel_meta(A));
    write_meta(dir, "amatrix", meta);
}

/// Reads a kernel written by write_kernel and checks it belongs to `p`.
inline KernelTensor read_kernel(const fs::path& dir, const Problem& p) {
    const json meta = read_meta(dir, "amatrix");
    if (get_as<std::string>(meta.at("spec_hash"), "spec_hash") != p.spec_hash) {
        fail(ErrorCode::SpecHashMismatch, "kernel in " + dir.string() + " was built for a different spec");
    }
    KernelTensor k;
    k.entries = matrix_from_csv(read_table(dir, "amatrix"));
    k.feature_cov = matrix_from_csv(read_table(dir, "amatrix_features"));
    k.alpha = get_as<double>(meta.at("alpha"), "alpha");
    k.method = parse_kernel_method(get_as<std::string>(meta.at("method"), "method"));
    k.samples = get_as<std::size_t>(meta.at("samples"), "samples");
    k.seed = get_as<std::uint64_t>(meta.at("seed"), "seed");
    k.per_sample_normalized = get_as<bool>(meta.at("per_sample_normalized"), "per_sample_normalized");
    require_dims(static_cast<std::size_t>(k.entries.rows()), static_cast<std::size_t>(p.Z.rows()), "kernel size");
    pd_check(k);
    return k;
}

/// Stationary law (infinite) or per-time laws (finite) driving the ODE.
inline StateActionDist driving_law(const Problem& p) {
    return p.mdp->finite() ? time_marginals(*p.mdp) : stationary_state_distribution(*p.mdp);
}

inline OdeRhs make_rhs(const Problem& p, const Eigen::MatrixXd& A, const StateActionDist& pi) {
    if (p.mode == TrainMode::Regression) {
        return [&p, A](std::span<const double> h) { return ode_rhs_regression(h, A, p.data.ys); };
    }
    const double g = p.mdp->gamma();
    if (p.mdp->finite()) {
        return [&p, A, pi, g](std::span<const double> h) { return ode_rhs_finite(h, A, pi.per_time, *p.mdp, g); };
    }
    return [&p, A, pi, g](std::span<const double> h) { return ode_rhs_infinite(h, A, pi.probs, *p.mdp, g); };
}

/// Bellman solution, or the targets in regression mode.
inline Vector target_table(const Problem& p, double tol) {
    if (p.mode == TrainMode::Regression) return p.data.ys;
    return p.mdp->finite() ? bellman_solve_finite(*p.mdp).values : bellman_solve_infinite(*p.mdp, tol).values;
}

/// Convergence of the infinite-horizon limit is only guaranteed below this
/// discount; above it runs are exploratory.
inline double contraction_threshold(const ValidatedMdp& mdp) {
    return 2.0 / (1.0 + static_cast<double>(mdp.n_actions()));
}

inline double bellman_residual_sup(const Problem& p, std::span<const double> h) {
    if (p.mode == TrainMode::Regression) return sup_distance(h, p.data.ys);
    ValueTable t = ValueTable::like(*p.mdp, TableKind::LimitOde);
    require_dims(h.size(), t.values.size(), "table size");
    std::copy(h.begin(), h.end(), t.values.begin());
    const ValueTable r = bellman_residual(t, *p.mdp, p.mdp->gamma());
    double s = 0.0;
    for (double v : r.values) s = std::max(s, std::abs(v));
    return s;
}

/// Runs fn(0..n-1) on up to `workers` threads; the first exception wins.
template <typename Fn>
void run_jobs(std::size_t n, std::size_t workers, Fn&& fn) {
    workers = std::max<std::size_t>(1, std::min(workers, n));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr err;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (!err) err = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

struct CommandResult {
    int exit_code = 0; // 0 pass, 2 acceptance failure
    json report;
};

inline void log_line(const RunOptions& o, const std::string& s) {
    if (o.log) *o.log << s << '\n';
}

// ---- bellman -------------------------------------------------------------

inline CommandResult cmd_bellman(const ExperimentConfig& cfg, const RunOptions& opt) {
    const ExperimentConfig c = effective_config(cfg, opt);
    const Problem p = load_problem(c);
    if (p.mode == TrainMode::Regression) fail(ErrorCode::InvalidInput, "bellman needs an MDP spec");
    const ValueTable V = p.mdp->finite() ? bellman_solve_finite(*p.mdp)
                                         : bellman_solve_infinite(*p.mdp, c.tolerances.bellman);
    const fs::path dir = c.output_dir;
    if (opt.format == OutputFormat::Csv) {
        write_csv(dir / "bellman.csv", value_table_csv(V));
    } else {
        write_json(dir / "bellman.json", value_table_json(V));
    }
    json meta = base_meta("bellman", c, p);
    meta["gamma"] = p.mdp->gamma();
    meta["residual_sup"] = bellman_residual_sup(p, V.values);
    write_meta(dir, "bellman", meta);
    log_line(opt, "bellman: wrote " + (dir / "bellman").string());
    return {0, meta};
}

// ---- train ---------------------------------------------------------------

inline TrainRecord run_training(const ExperimentConfig& c, const Problem& p, std::size_t n, std::uint64_t seed) {
    TrainConfig tc;
    tc.alpha = c.alpha;
    tc.T = c.T;
    tc.snapshot_stride = c.snapshot_stride;
    tc.seed = seed;
    tc.mode = c.mode;
    tc.burn_in = c.burn_in;
    if (p.mode == TrainMode::Regression) return train(p.data, c.law, c.activation, n, tc);
    return train(*p.mdp, c.law, c.activation, n, tc);
}

inline json write_train_record(const fs::path& dir, const TrainRecord& rec, const ExperimentConfig& c,
                               const Problem& p, std::uint64_t seed, OutputFormat fmt) {
    const std::string stem = train_stem(rec.n_units, seed);
    write_table(dir, stem, train_record_csv(rec, p.columns), fmt);
    json meta = base_meta("train", c, p);
    meta["n_units"] = rec.n_units;
    meta["seed"] = seed;
    meta["alpha"] = c.alpha;
    meta["T"] = c.T;
    meta["steps"] = rec.steps;
    meta["stride"] = rec.stride;
    meta["burn_in"] = c.burn_in;
    meta["activation"] = std::string(to_string(c.activation));
    if (p.mode == TrainMode::Regression) meta["final_loss"] = regression_loss(rec.final_params, p.data);
    meta["final_params"] = to_json(rec.final_params);
    write_meta(dir, stem, meta);
    meta.erase("final_params");
    return meta;
}

inline CommandResult cmd_train(const ExperimentConfig& cfg, const RunOptions& opt) {
    const ExperimentConfig c = effective_config(cfg, opt);
    const Problem p = load_problem(c);
    const fs::path dir = c.output_dir;
    struct Job {
        std::size_t n;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (auto n : c.n_list) {
        for (auto s : c.seeds) jobs.push_back({n, s});
    }
    std::vector<json> metas(jobs.size());
    run_jobs(jobs.size(), opt.workers, [&](std::size_t i) {
        const TrainRecord rec = run_training(c, p, jobs[i].n, jobs[i].seed);
        metas[i] = write_train_record(dir, rec, c, p, jobs[i].seed, opt.format);
    });
    for (const auto& m : metas) {
        log_line(opt, "train: N=" + m.at("n_units").dump() + " seed=" + m.at("seed").dump() + " snapshots written");
    }
    return {0, json{{"runs", metas}}};
}

// ---- amatrix -------------------------------------------------------------

inline CommandResult cmd_amatrix(const ExperimentConfig& cfg, const RunOptions& opt) {
    const ExperimentConfig c = effective_config(cfg, opt);
    const Problem p = load_problem(c);
    const KernelTensor A = build_kernel(c, p, opt.workers);
    const fs::path dir = c.output_dir;
    write_kernel(dir, A, c, p, opt.format);
    json report = base_meta("amatrix", c, p);
    report.update(kernel_meta(A));
    const bool pass = *A.eig_min > c.tolerances.pd_ratio * *A.eig_max;
    report["pd_ratio"] = c.tolerances.pd_ratio;
    report["pass"] = pass;
    log_line(opt, "amatrix: eig_min=" + format_double(*A.eig_min) + " eig_max=" + format_double(*A.eig_max) +
                      (pass ? " PASS" : " FAIL"));
    return {pass ? 0 : 2, report};
}

// ---- limit ---------------------------------------------------------------

inline Vector initial_table(const ExperimentConfig& c, const Problem& p, const KernelTensor& A) {
    if (c.h0 == "zero") {
        Vector h(p.columns.size(), 0.0);
        if (p.mdp && p.mdp->finite()) {
            const std::size_t P = p.mdp->n_pairs();
            const std::size_t J = p.mdp->horizon();
            for (std::size_t i = 0; i < P; ++i) h[J * P + i] = p.mdp->terminal(i / p.mdp->n_actions());
        }
        return h;
    }
    if (p.mode == TrainMode::Regression) return draw_gaussian(c.law.c.second_moment() * A.feature_cov, c.h0_seed);
    return gaussian_initial_table(A, c.law.c.second_moment(), *p.mdp, c.h0_seed);
}

inline OdeSolution thin(const OdeSolution& sol, std::size_t every) {
    if (every <= 1) return sol;
    OdeSolution out;
    out.step_size = sol.step_size;
    out.mode = sol.mode;
    for (std::size_t i = 0; i < sol.times.size(); ++i) {
        if (i % every == 0 || i + 1 == sol.times.size()) {
            out.times.push_back(sol.times[i]);
            out.values.push_back(sol.values[i]);
        }
    }
    return out;
}

inline CommandResult cmd_limit(const ExperimentConfig& cfg, const RunOptions& opt) {
    const ExperimentConfig c = effective_config(cfg, opt);
    const Problem p = load_problem(c);
    if (p.mode == TrainMode::Regression) fail(ErrorCode::InvalidInput, "use 'regress' for datasets");
    if (!(c.ode_t_end > 0.0)) fail(ErrorCode::InvalidInput, "limit needs ode_t_end > 0");
    const ValidatedMdp& mdp = *p.mdp;
    const fs::path dir = c.output_dir;

    const KernelTensor A = build_kernel(c, p, opt.workers);
    write_kernel(dir, A, c, p, opt.format);
    if (!(*A.eig_min > 1e-10 * *A.eig_max)) {
        fail(ErrorCode::NotPositiveDefinite, "kernel eigenvalues span [" + format_double(*A.eig_min) + ", " +
                                                 format_double(*A.eig_max) + "]");
    }
    const Vector V = target_table(p, c.tolerances.bellman);
    const StateActionDist pi = driving_law(p);
    const OdeSolution sol =
        integrate(make_rhs(p, A.entries, pi), initial_table(c, p, A), c.ode_t_end, c.ode_dt, 1, std::string(to_string(c.mode)));
    const LyapunovTrace ly = lyapunov_trace(sol, V, A.entries);

    const Vector& h_end = sol.values.back();
    const double final_sup = sup_distance(h_end, V);
    const double residual = bellman_residual_sup(p, h_end);
    const bool monotone = non_increasing(ly.y_values, c.tolerances.lyapunov_slack);
    const bool exploratory = !mdp.finite() && !(mdp.gamma() < contraction_threshold(mdp));

    json report = base_meta("limit", c, p);
    report["gamma"] = mdp.gamma();
    report["eig_min"] = *A.eig_min;
    report["eig_max"] = *A.eig_max;
    report["t_end"] = c.ode_t_end;
    report["dt"] = sol.step_size;
    report["final_sup"] = final_sup;
    report["bellman_residual_sup"] = residual;
    report["lyapunov_initial"] = ly.y_values.front();
    report["lyapunov_final"] = ly.y_values.back();
    report["lyapunov_non_increasing"] = monotone;
    report["exploratory"] = exploratory;

    bool pass = true;
    if (!exploratory) {
        if (c.tolerances.final_sup) pass = pass && final_sup < *c.tolerances.final_sup;
        if (!mdp.finite()) pass = pass && monotone;
    }
    if (mdp.finite()) {
        const std::size_t J = mdp.horizon();
        json settle = json::array();
        std::vector<std::optional<double>> times;
        for (std::size_t j = 0; j <= J; ++j) {
            times.push_back(slice_settling_time(sol, V, j, mdp.n_pairs(), c.tolerances.settle));
            settle.push_back(times.back() ? json(*times.back()) : json(nullptr));
        }
        report["slice_settling_times"] = settle;
        const bool all_settled = std::all_of(times.begin(), times.end(), [](const auto& t) { return t.has_value(); });
        const bool ordered = J < 2 || (all_settled && *times[J - 1] < *times[0]);
        report["slices_settled"] = all_settled;
        report["settling_order_backward"] = ordered;
        pass = pass && all_settled && ordered;
    }
    report["pass"] = pass;

    const OdeSolution stored = thin(sol, c.ode_store_every);
    write_table(dir, "limit_ode", ode_solution_csv(stored, p.columns), opt.format);
    CsvTable lt;
    lt.header = {"t", "Y"};
    for (std::size_t i = 0; i < ly.times.size(); i += c.ode_store_every) lt.rows.push_back({ly.times[i], ly.y_values[i]});
    if ((ly.times.size() - 1) % c.ode_store_every != 0) lt.rows.push_back({ly.times.back(), ly.y_values.back()});
    write_table(dir, "lyapunov", lt, opt.format);
    write_table(dir, "limit_target", ode_solution_csv(OdeSolution{{0.0}, {V}, 0.0, "target"}, p.columns), opt.format);
    write_json(dir / "limit_report.json", report);
    log_line(opt, "limit: final sup|h - V| = " + format_double(final_sup) + (pass ? " PASS" : " FAIL"));
    return {pass ? 0 : 2, report};
}

// ---- compare -------------------------------------------------------------

/// Linear interpolation of a stored ODE trajectory at time t.
inline Vector interpolate(const OdeSolution& sol, double t) {
    const auto& ts = sol.times;
    if (t <= ts.front()) return sol.values.front();
    if (t >= ts.back()) return sol.values.back();
    const auto hi = static_cast<std::size_t>(std::upper_bound(ts.begin(), ts.end(), t) - ts.begin());
    const std::size_t lo = hi - 1;
    const double w = (t - ts[lo]) / (ts[hi] - ts[lo]);
    Vector out(sol.values[lo].size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - w) * sol.values[lo][i] + w * sol.values[hi][i];
    return out;
}

/// sup over snapshot times of sup over entries of |network - ODE|.
inline double trajectory_distance(const TrainRecord& rec, const OdeSolution& ode) {
    double d = 0.0;
    for (std::size_t s = 0; s < rec.times.size(); ++s) {
        d = std::max(d, sup_distance(rec.snapshots[s], interpolate(ode, rec.times[s])));
    }
    return d;
}

inline constexpr std::array<const char*, 4> kInvariantMoments{"c", "c2", "w1", "w_norm2"};

/// max_t |<f, mu_t> - <f, mu_0>| for f in c, c^2, w_1, |w|^2.
inline std::array<double, 4> measure_deviation(const TrainRecord& rec) {
    std::array<double, 4> dev{};
    const auto m0 = rec.moments.front().as_array();
    for (const auto& m : rec.moments) {
        const auto a = m.as_array();
        for (std::size_t k = 0; k < 4; ++k) dev[k] = std::max(dev[k], std::abs(a[k + 1] - m0[k + 1]));
    }
    return dev;
}

/// Snapshot times must be k / N on an increasing grid starting at 0 and
/// ending at floor(N T) / N.
inline void check_grid(const TrainRecord& rec, std::size_t n, double T) {
    const double N = static_cast<double>(n);
    if (rec.times.empty() || rec.times.front() != 0.0) fail(ErrorCode::GridMismatch, "grid must start at t = 0");
    for (std::size_t s = 0; s < rec.times.size(); ++s) {
        const double k = rec.times[s] * N;
        if (std::abs(k - std::round(k)) > 1e-6) fail(ErrorCode::GridMismatch, "snapshot time is not a multiple of 1/N");
        if (s > 0 && !(rec.times[s] > rec.times[s - 1])) fail(ErrorCode::GridMismatch, "snapshot times must increase");
    }
    const double last = static_cast<double>(total_steps(n, T)) / N;
    if (std::abs(rec.times.back() - last) > 1e-9 * std::max(1.0, last)) {
        fail(ErrorCode::GridMismatch, "record ends at t = " + format_double(rec.times.back()) + ", expected " +
                                          format_double(last));
    }
}

struct RunRecord {
    std::size_t n_units = 0;
    std::uint64_t seed = 0;
    double distance = 0.0;
    std::array<double, 4> measure_dev{};
    double bellman_residual = 0.0; // of the coupled ODE state at the final time
    bool lyapunov_non_increasing = false;
};

struct WidthSummary {
    std::size_t n_units = 0;
    double mean_distance = 0.0;
    double se_distance = 0.0;
    std::array<double, 4> mean_dev{};
    std::array<double, 4> se_dev{};
};

struct RunReport {
    std::string config_hash;
    std::string spec_hash;
    double eig_min = 0.0;
    double eig_max = 0.0;
    std::vector<RunRecord> runs;
    std::vector<WidthSummary> widths;
    std::vector<double> distance_ratios;            // mean(N_i) / mean(N_{i+1})
    std::array<std::vector<double>, 4> dev_ratios;  // same for each moment
    bool distance_pass = false;
    std::array<bool, 4> dev_pass{};
    bool measure_pass = false;
    bool pass = false;
};

inline std::pair<double, double> mean_and_se(const std::vector<double>& v) {
    const double n = static_cast<double>(v.size());
    double m = 0.0;
    for (double x : v) m += x;
    m /= n;
    if (v.size() < 2) return {m, 0.0};
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return {m, std::sqrt(ss / (n - 1.0) / n)};
}

/// Strictly decreasing means whose consecutive ratios all fall in [lo, hi].
inline bool shrinks_within(const std::vector<double>& means, double lo, double hi, std::vector<double>& ratios) {
    ratios.clear();
    bool ok = true;
    for (std::size_t i = 0; i + 1 < means.size(); ++i) {
        const double r = means[i] / means[i + 1];
        ratios.push_back(r);
        ok = ok && means[i + 1] < means[i] && r >= lo && r <= hi;
    }
    return ok;
}

inline json to_json(const RunReport& r) {
    json j;
    j["config_hash"] = r.config_hash;
    j["spec_hash"] = r.spec_hash;
    j["eig_min"] = r.eig_min;
    j["eig_max"] = r.eig_max;
    json runs = json::array();
    for (const auto& x : r.runs) {
        json dev;
        for (std::size_t k = 0; k < 4; ++k) dev[kInvariantMoments[k]] = x.measure_dev[k];
        runs.push_back({{"n_units", x.n_units},
                        {"seed", x.seed},
                        {"distance", x.distance},
                        {"measure_deviation", dev},
                        {"bellman_residual_sup", x.bellman_residual},
                        {"lyapunov_non_increasing", x.lyapunov_non_increasing}});
    }
    j["runs"] = runs;
    json widths = json::array();
    for (const auto& w : r.widths) {
        json mean, se;
        for (std::size_t k = 0; k < 4; ++k) {
            mean[kInvariantMoments[k]] = w.mean_dev[k];
            se[kInvariantMoments[k]] = w.se_dev[k];
        }
        widths.push_back({{"n_units", w.n_units},
                          {"mean_distance", w.mean_distance},
                          {"se_distance", w.se_distance},
                          {"mean_measure_deviation", mean},
                          {"se_measure_deviation", se}});
    }
    j["widths"] = widths;
    j["distance_ratios"] = r.distance_ratios;
    json dr, dp;
    for (std::size_t k = 0; k < 4; ++k) {
        dr[kInvariantMoments[k]] = r.dev_ratios[k];
        dp[kInvariantMoments[k]] = r.dev_pass[k];
    }
    j["measure_ratios"] = dr;
    j["measure_pass_by_moment"] = dp;
    j["distance_pass"] = r.distance_pass;
    j["measure_pass"] = r.measure_pass;
    j["pass"] = r.pass;
    return j;
}

inline CommandResult cmd_compare(const ExperimentConfig& cfg, const RunOptions& opt) {
    const ExperimentConfig c = effective_config(cfg, opt);
    const Problem p = load_problem(c);
    const fs::path dir = c.output_dir;
    const KernelTensor A = read_kernel(dir, p);
    if (A.alpha != c.alpha) {
        fail(ErrorCode::InvalidInput, "kernel was built with alpha = " + format_double(A.alpha));
    }
    const Vector V = target_table(p, c.tolerances.bellman);
    const StateActionDist pi = p.mode == TrainMode::Regression ? StateActionDist{} : driving_law(p);
    const OdeRhs rhs = make_rhs(p, A.entries, pi);
    const bool check_lyapunov = p.mode != TrainMode::Finite;

    struct Job {
        std::size_t n;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (auto n : c.n_list) {
        for (auto s : c.seeds) jobs.push_back({n, s});
    }
    RunReport report;
    report.config_hash = config_hash(c);
    report.spec_hash = p.spec_hash;
    report.eig_min = *A.eig_min;
    report.eig_max = *A.eig_max;
    report.runs.resize(jobs.size());
    std::vector<OdeSolution> coupled(jobs.size());

    run_jobs(jobs.size(), opt.workers, [&](std::size_t i) {
        const auto [n, seed] = jobs[i];
        const std::string stem = train_stem(n, seed);
        const json meta = read_meta(dir, stem);
        if (get_as<std::string>(meta.at("spec_hash"), "spec_hash") != p.spec_hash) {
            fail(ErrorCode::SpecHashMismatch, stem + " was trained on a different spec");
        }
        if (get_as<double>(meta.at("alpha"), "alpha") != c.alpha) {
            fail(ErrorCode::InvalidInput, stem + " was trained with a different alpha");
        }
        const TrainRecord rec = parse_train_record(read_table(dir, stem));
        require_dims(rec.snapshots.front().size(), p.columns.size(), stem + " table width");
        check_grid(rec, n, c.T);
        const OdeSolution ode = integrate(rhs, rec.snapshots.front(), rec.times.back(), c.ode_dt, 1,
                                          std::string(to_string(c.mode)));
        RunRecord& out = report.runs[i];
        out.n_units = n;
        out.seed = seed;
        out.distance = trajectory_distance(rec, ode);
        out.measure_dev = measure_deviation(rec);
        out.bellman_residual = bellman_residual_sup(p, ode.values.back());
        out.lyapunov_non_increasing =
            !check_lyapunov || non_increasing(lyapunov_trace(ode, V, A.entries).y_values, c.tolerances.lyapunov_slack);
        OdeSolution on_grid;
        on_grid.times = rec.times;
        for (double t : rec.times) on_grid.values.push_back(interpolate(ode, t));
        coupled[i] = std::move(on_grid);
    });

    std::vector<double> dist_means;
    std::array<std::vector<double>, 4> dev_means;
    for (auto n : c.n_list) {
        std::vector<double> d;
        std::array<std::vector<double>, 4> dev;
        for (const auto& r : report.runs) {
            if (r.n_units != n) continue;
            d.push_back(r.distance);
            for (std::size_t k = 0; k < 4; ++k) dev[k].push_back(r.measure_dev[k]);
        }
        WidthSummary w;
        w.n_units = n;
        std::tie(w.mean_distance, w.se_distance) = mean_and_se(d);
        for (std::size_t k = 0; k < 4; ++k) {
            std::tie(w.mean_dev[k], w.se_dev[k]) = mean_and_se(dev[k]);
            dev_means[k].push_back(w.mean_dev[k]);
        }
        dist_means.push_back(w.mean_distance);
        report.widths.push_back(w);
    }
    const double lo = c.tolerances.ratio_min, hi = c.tolerances.ratio_max;
    report.distance_pass = shrinks_within(dist_means, lo, hi, report.distance_ratios);
    report.measure_pass = true;
    for (std::size_t k = 0; k < 4; ++k) {
        report.dev_pass[k] = shrinks_within(dev_means[k], lo, hi, report.dev_ratios[k]);
        report.measure_pass = report.measure_pass && report.dev_pass[k];
    }
    report.pass = report.distance_pass && report.measure_pass;

    CsvTable runs;
    runs.header = {"n_units", "seed", "distance", "dev_c", "dev_c2", "dev_w1", "dev_w_norm2", "bellman_residual_sup"};
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        const auto& r = report.runs[i];
        runs.rows.push_back({static_cast<double>(r.n_units), static_cast<double>(r.seed), r.distance, r.measure_dev[0],
                             r.measure_dev[1], r.measure_dev[2], r.measure_dev[3], r.bellman_residual});
        write_table(dir, "coupled_" + train_stem(r.n_units, r.seed), ode_solution_csv(coupled[i], p.columns),
                    opt.format);
    }
    write_table(dir, "compare_runs", runs, opt.format);
    const json j = to_json(report);
    write_json(dir / "compare_report.json", j);
    for (const auto& w : report.widths) {
        log_line(opt, "compare: N=" + std::to_string(w.n_units) + " mean distance " + format_double(w.mean_distance) +
                          " +- " + format_double(w.se_distance));
    }
    log_line(opt, std::string("compare: trajectories ") + (report.distance_pass ? "PASS" : "FAIL") + ", measure " +
                      (report.measure_pass ? "PASS" : "FAIL"));
    return {report.pass ? 0 : 2, j};
}

// ---- regress -------------------------------------------------------------

/// Relative floor below which |h - Y| is dominated by rounding and excluded
/// from the decay fit.
inline constexpr double kDecayFitFloor = 1e-9;

inline CommandResult cmd_regress(const ExperimentConfig& cfg, const RunOptions& opt) {
    const ExperimentConfig c = effective_config(cfg, opt);
    if (c.mode != TrainMode::Regression) fail(ErrorCode::InvalidInput, "regress needs mode 'regression'");
    const Problem p = load_problem(c);
    const fs::path dir = c.output_dir;

    const KernelTensor A = build_kernel(c, p, opt.workers);
    write_kernel(dir, A, c, p, opt.format);
    const double lmin = *A.eig_min;
    if (!(lmin > 1e-10 * *A.eig_max)) {
        fail(ErrorCode::NotPositiveDefinite, "kernel eigenvalues span [" + format_double(lmin) + ", " +
                                                 format_double(*A.eig_max) + "]");
    }
    const double t_end = c.ode_t_end > 0.0 ? c.ode_t_end : 50.0 / lmin;
    const OdeSolution sol = integrate(make_rhs(p, A.entries, {}), initial_table(c, p, A), t_end, c.ode_dt,
                                      c.ode_store_every, "regression");
    const Vector& y = p.data.ys;
    std::vector<double> norms;
    for (const auto& h : sol.values) {
        double s = 0.0;
        for (std::size_t i = 0; i < h.size(); ++i) s += (h[i] - y[i]) * (h[i] - y[i]);
        norms.push_back(std::sqrt(s));
    }
    const double final_sup = sup_distance(sol.values.back(), y);
    const double rate = fit_decay_rate(sol.times, norms, kDecayFitFloor * norms.front());

    json report = base_meta("regress", c, p);
    report["eig_min"] = lmin;
    report["eig_max"] = *A.eig_max;
    report["t_end"] = t_end;
    report["final_sup"] = final_sup;
    report["decay_rate"] = rate;
    report["decay_rate_floor"] = c.tolerances.decay_fraction * lmin;
    const bool ode_pass = final_sup < c.tolerances.regression_sup && rate >= c.tolerances.decay_fraction * lmin;
    report["ode_pass"] = ode_pass;

    struct Job {
        std::size_t n;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (auto n : c.n_list) {
        for (auto s : c.seeds) jobs.push_back({n, s});
    }
    std::vector<json> metas(jobs.size());
    run_jobs(jobs.size(), opt.workers, [&](std::size_t i) {
        const TrainRecord rec = run_training(c, p, jobs[i].n, jobs[i].seed);
        metas[i] = write_train_record(dir, rec, c, p, jobs[i].seed, opt.format);
    });
    bool sgd_pass = true;
    json sgd = json::array();
    for (const auto& m : metas) {
        const double loss = m.at("final_loss").get<double>();
        sgd_pass = sgd_pass && loss < c.tolerances.regression_loss;
        sgd.push_back({{"n_units", m.at("n_units")}, {"seed", m.at("seed")}, {"final_loss", loss}});
    }
    report["sgd_runs"] = sgd;
    report["sgd_pass"] = sgd_pass;
    report["pass"] = ode_pass && sgd_pass;

    write_table(dir, "regress_ode", ode_solution_csv(sol, p.columns), opt.format);
    write_json(dir / "regress_report.json", report);
    log_line(opt, "regress: final sup " + format_double(final_sup) + ", rate " + format_double(rate) +
                      " vs eig_min " + format_double(lmin) + ((ode_pass && sgd_pass) ? " PASS" : " FAIL"));
    return {ode_pass && sgd_pass ? 0 : 2, report};
}

} // namespace mfq
