#pragma once

// Discrete training loops with learning rate alpha / N and scaled time
// t = k / N: infinite-horizon Q-learning, finite-horizon Q-learning and SGD
// regression on a fixed dataset.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mfq/error.hpp"
#include "mfq/mdp.hpp"
#include "mfq/qnet.hpp"
#include "mfq/rng.hpp"

namespace mfq {

enum class TrainMode { Infinite, Finite, Regression };

inline std::string_view to_string(TrainMode m) {
    switch (m) {
    case TrainMode::Infinite: return "infinite";
    case TrainMode::Finite: return "finite";
    case TrainMode::Regression: return "regression";
    }
    return "infinite";
}

inline TrainMode parse_train_mode(std::string_view s) {
    if (s == "infinite") return TrainMode::Infinite;
    if (s == "finite") return TrainMode::Finite;
    if (s == "regression") return TrainMode::Regression;
    fail(ErrorCode::InvalidInput, "unknown mode '" + std::string(s) + "'");
}

struct TrainConfig {
    double alpha = 1.0;
    double T = 1.0;                  // horizon in scaled time
    std::size_t snapshot_stride = 0; // 0 selects max(1, N / 100)
    std::uint64_t seed = 0;
    TrainMode mode = TrainMode::Infinite;
    std::size_t burn_in = 0; // chain steps discarded before training
};

struct TrainRecord {
    std::size_t n_units = 0;
    std::size_t steps = 0;
    std::size_t stride = 1;
    std::vector<double> times;
    std::vector<Vector> snapshots;
    std::vector<MeasureMoments> moments;
    NetworkParams final_params;
};

struct RegressionDataset {
    std::vector<Vector> xs;
    Vector ys;
};

inline void validate_dataset(const RegressionDataset& data) {
    if (data.xs.empty()) {
        fail(ErrorCode::InvalidInput, "dataset must hold at least one sample");
    }
    require_dims(data.ys.size(), data.xs.size(), "dataset targets");
    const std::size_t d = data.xs[0].size();
    for (const auto& x : data.xs) require_dims(x.size(), d, "dataset input length");
    for (double y : data.ys) {
        if (!std::isfinite(y)) fail(ErrorCode::InvalidInput, "dataset target is not finite");
    }
    for (std::size_t i = 0; i < data.xs.size(); ++i) {
        for (std::size_t j = i + 1; j < data.xs.size(); ++j) {
            if (!distinct_directions(data.xs[i], data.xs[j])) {
                fail(ErrorCode::ParallelEmbeddings,
                     "samples " + std::to_string(i) + " and " + std::to_string(j) + " are parallel");
            }
        }
    }
}

/// floor(N T), with a relative guard so T = 0.1 and N = 10 give one step.
inline std::size_t total_steps(std::size_t n_units, double T) {
    const double nt = static_cast<double>(n_units) * T;
    return static_cast<std::size_t>(std::floor(nt * (1.0 + 1e-12)));
}

inline std::size_t default_stride(std::size_t n_units) {
    return std::max<std::size_t>(1, n_units / 100);
}

namespace detail {

inline double learning_step(const NetworkParams& p, double alpha) {
    const double n = static_cast<double>(p.n_units);
    return alpha / (n * std::sqrt(n));
}

// Q at zeta for one slice, caching sigma and sigma' per unit.
inline double eval_cached(const NetworkParams& p, std::size_t slice, std::span<const double> zeta,
                          std::span<double> sig, std::span<double> dsig) {
    double acc = 0.0;
    for (std::size_t i = 0; i < p.n_units; ++i) {
        const auto a = activation(p.act, dot(p.w_of(i), zeta));
        sig[i] = a.value;
        dsig[i] = a.d1;
        acc += p.c[i * p.slices + slice] * a.value;
    }
    return acc * p.scale();
}

inline double max_over_actions(const NetworkParams& p, std::size_t slice, const ValidatedMdp& mdp,
                               std::size_t state) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < mdp.n_actions(); ++a) {
        best = std::max(best, forward(p, slice, mdp.zeta(mdp.pair(state, a))));
    }
    return best;
}

inline void check_alpha(double alpha) {
    if (!std::isfinite(alpha) || alpha < 0.0) {
        fail(ErrorCode::InvalidInput, "alpha must be finite and non-negative");
    }
}

} // namespace detail

/// Shared update for a single residual D at input zeta:
///   c_i += (alpha/N) N^{-1/2} D sigma(w_i . zeta)
///   w_i += (alpha/N) N^{-1/2} D c_i sigma'(w_i . zeta) zeta
/// with every right-hand side taken from the pre-update parameters.
inline NetworkParams residual_update(NetworkParams p, std::size_t slice, std::span<const double> zeta,
                                     double residual, double alpha) {
    require_dims(zeta.size(), p.dim, "input dimension");
    if (residual == 0.0 || alpha == 0.0) return p;
    const double eta = detail::learning_step(p, alpha) * residual;
    for (std::size_t i = 0; i < p.n_units; ++i) {
        auto wi = p.w_of(i);
        const auto a = activation(p.act, dot(wi, zeta));
        double& ci = p.c[i * p.slices + slice];
        const double w_factor = eta * ci * a.d1;
        ci += eta * a.value;
        for (std::size_t k = 0; k < p.dim; ++k) wi[k] += w_factor * zeta[k];
    }
    return p;
}

/// One infinite-horizon Q-learning step on (x_k, a_k, x_{k+1}, r_k). The
/// temporal-difference residual is computed once from the pre-update network
/// and all units move simultaneously.
inline NetworkParams q_step_infinite(NetworkParams p, const Transition& sample, const ValidatedMdp& mdp,
                                     double alpha, double gamma) {
    require_dims(p.dim, mdp.dim(), "network input dimension");
    detail::check_alpha(alpha);
    if (alpha == 0.0) return p;
    const auto zeta = mdp.zeta(mdp.pair(sample.state, sample.action));
    std::vector<double> sig(p.n_units), dsig(p.n_units);
    const double q = detail::eval_cached(p, 0, zeta, sig, dsig);
    const double target = sample.reward + gamma * detail::max_over_actions(p, 0, mdp, sample.next_state);
    const double residual = target - q;
    if (residual == 0.0) return p;

    const double eta = detail::learning_step(p, alpha) * residual;
    for (std::size_t i = 0; i < p.n_units; ++i) {
        double& ci = p.c[i];
        const double w_factor = eta * ci * dsig[i];
        ci += eta * sig[i];
        auto wi = p.w_of(i);
        for (std::size_t k = 0; k < p.dim; ++k) wi[k] += w_factor * zeta[k];
    }
    return p;
}

/// One finite-horizon step on a full episode. Slice j of c moves with its own
/// residual; the shared w_i moves with the residual-weighted sum over j. The
/// value at time J is the terminal reward and is never parameterized.
inline NetworkParams q_step_finite(NetworkParams p, const Episode& episode, const ValidatedMdp& mdp, double alpha,
                                   double gamma) {
    require_dims(p.dim, mdp.dim(), "network input dimension");
    const std::size_t J = mdp.horizon();
    require_dims(p.slices, J, "network time slices");
    if (episode.states.size() != J + 1 || episode.actions.size() != J || episode.rewards.size() != J) {
        fail(ErrorCode::EpisodeLengthMismatch, "episode must hold J + 1 states and J actions");
    }
    detail::check_alpha(alpha);
    if (alpha == 0.0) return p;

    const std::size_t N = p.n_units;
    std::vector<double> sig(N * J), dsig(N * J), residual(J);
    bool any = false;
    for (std::size_t j = 0; j < J; ++j) {
        const auto zeta = mdp.zeta(mdp.pair(episode.states[j], episode.actions[j]));
        const double q = detail::eval_cached(p, j, zeta, std::span<double>(sig).subspan(j * N, N),
                                             std::span<double>(dsig).subspan(j * N, N));
        const double next = (j + 1 < J) ? detail::max_over_actions(p, j + 1, mdp, episode.states[j + 1])
                                        : episode.terminal_reward;
        residual[j] = episode.rewards[j] + gamma * next - q;
        any = any || residual[j] != 0.0;
    }
    if (!any) return p;

    const double eta = detail::learning_step(p, alpha);
    std::vector<double> dw(p.dim);
    for (std::size_t i = 0; i < N; ++i) {
        std::fill(dw.begin(), dw.end(), 0.0);
        for (std::size_t j = 0; j < J; ++j) {
            const auto zeta = mdp.zeta(mdp.pair(episode.states[j], episode.actions[j]));
            const double f = residual[j] * p.c[i * J + j] * dsig[j * N + i];
            for (std::size_t k = 0; k < p.dim; ++k) dw[k] += f * zeta[k];
        }
        for (std::size_t j = 0; j < J; ++j) p.c[i * J + j] += eta * residual[j] * sig[j * N + i];
        auto wi = p.w_of(i);
        for (std::size_t k = 0; k < p.dim; ++k) wi[k] += eta * dw[k];
    }
    return p;
}

/// SGD step on one regression sample (x, y) with residual y - g(x).
inline NetworkParams sgd_step_regression(NetworkParams p, std::span<const double> x, double y, double alpha) {
    require_dims(x.size(), p.dim, "input dimension");
    detail::check_alpha(alpha);
    const double residual = y - forward(p, x);
    return residual_update(std::move(p), 0, x, residual, alpha);
}

/// Full output table of the network over every (j,) x, a; finite-horizon
/// tables append the terminal slice.
inline Vector network_table(const NetworkParams& p, const ValidatedMdp& mdp) {
    Vector out;
    const std::size_t slices = mdp.finite() ? mdp.horizon() : 1;
    out.reserve(mdp.n_pairs() * (slices + (mdp.finite() ? 1 : 0)));
    for (std::size_t j = 0; j < slices; ++j) {
        for (std::size_t i = 0; i < mdp.n_pairs(); ++i) out.push_back(forward(p, j, mdp.zeta(i)));
    }
    if (mdp.finite()) {
        for (std::size_t x = 0; x < mdp.n_states(); ++x) {
            for (std::size_t a = 0; a < mdp.n_actions(); ++a) out.push_back(mdp.terminal(x));
        }
    }
    return out;
}

inline Vector network_outputs(const NetworkParams& p, const RegressionDataset& data) {
    Vector out;
    out.reserve(data.xs.size());
    for (const auto& x : data.xs) out.push_back(forward(p, x));
    return out;
}

/// Mean squared training error (1/M) sum (y - g(x))^2.
inline double regression_loss(const NetworkParams& p, const RegressionDataset& data) {
    double acc = 0.0;
    for (std::size_t m = 0; m < data.xs.size(); ++m) {
        const double e = data.ys[m] - forward(p, data.xs[m]);
        acc += e * e;
    }
    return acc / static_cast<double>(data.xs.size());
}

namespace detail {

inline std::uint64_t init_seed(std::uint64_t seed) { return derive_seed(seed, 1); }
inline std::uint64_t sampler_seed(std::uint64_t seed) { return derive_seed(seed, 2); }

template <typename Table, typename Step>
TrainRecord run_loop(NetworkParams params, const TrainConfig& cfg, Table&& table, Step&& step) {
    TrainRecord rec;
    rec.n_units = params.n_units;
    rec.steps = total_steps(params.n_units, cfg.T);
    if (rec.steps < 1) {
        fail(ErrorCode::InvalidInput, "floor(N T) must be >= 1");
    }
    detail::check_alpha(cfg.alpha);
    rec.stride = cfg.snapshot_stride ? cfg.snapshot_stride : default_stride(params.n_units);
    const double n = static_cast<double>(params.n_units);
    auto record = [&](std::size_t k) {
        rec.times.push_back(static_cast<double>(k) / n);
        rec.snapshots.push_back(table(params));
        rec.moments.push_back(measure_moments(params));
    };
    record(0);
    for (std::size_t k = 0; k < rec.steps; ++k) {
        params = step(std::move(params));
        if ((k + 1) % rec.stride == 0 || k + 1 == rec.steps) record(k + 1);
    }
    rec.final_params = std::move(params);
    return rec;
}

} // namespace detail

/// Q-learning on an MDP (mode Infinite or Finite). Snapshots are taken at
/// k = 0, every `stride` steps, and after the last step.
inline TrainRecord train(const ValidatedMdp& mdp, const InitLaw& law, Activation act, std::size_t n_units,
                         const TrainConfig& cfg) {
    const double gamma = mdp.gamma();
    auto table = [&](const NetworkParams& p) { return network_table(p, mdp); };
    if (cfg.mode == TrainMode::Infinite) {
        if (mdp.finite()) fail(ErrorCode::InvalidInput, "infinite mode on a finite-horizon spec");
        ChainSampler sampler(mdp, detail::sampler_seed(cfg.seed), cfg.burn_in);
        auto params = init_params(law, n_units, mdp.dim(), detail::init_seed(cfg.seed), act, 1);
        return detail::run_loop(std::move(params), cfg, table, [&](NetworkParams p) {
            return q_step_infinite(std::move(p), sampler.next(), mdp, cfg.alpha, gamma);
        });
    }
    if (cfg.mode == TrainMode::Finite) {
        if (!mdp.finite() || mdp.horizon() < 1) {
            fail(ErrorCode::InvalidInput, "finite mode needs a spec with horizon >= 1");
        }
        Rng rng = make_rng(detail::sampler_seed(cfg.seed));
        auto params = init_params(law, n_units, mdp.dim(), detail::init_seed(cfg.seed), act, mdp.horizon());
        return detail::run_loop(std::move(params), cfg, table, [&](NetworkParams p) {
            return q_step_finite(std::move(p), sample_episode(mdp, rng), mdp, cfg.alpha, gamma);
        });
    }
    fail(ErrorCode::InvalidInput, "regression mode needs a dataset");
}

/// SGD regression with i.i.d. uniform draws from the dataset.
inline TrainRecord train(const RegressionDataset& data, const InitLaw& law, Activation act, std::size_t n_units,
                         const TrainConfig& cfg) {
    validate_dataset(data);
    if (cfg.mode != TrainMode::Regression) {
        fail(ErrorCode::InvalidInput, "dataset training needs regression mode");
    }
    Rng rng = make_rng(detail::sampler_seed(cfg.seed));
    auto params = init_params(law, n_units, data.xs[0].size(), detail::init_seed(cfg.seed), act, 1);
    auto table = [&](const NetworkParams& p) { return network_outputs(p, data); };
    return detail::run_loop(std::move(params), cfg, table, [&](NetworkParams p) {
        const std::size_t m = uniform_index(rng, data.xs.size());
        return sgd_step_regression(std::move(p), data.xs[m], data.ys[m], cfg.alpha);
    });
}

} // namespace mfq
