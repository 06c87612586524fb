#pragma once

// Finite Markov decision problems: validation, stationary laws, exact
// Bellman solvers and pure-exploration samplers.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mfq/error.hpp"
#include "mfq/rng.hpp"

namespace mfq {

using Vector = std::vector<double>;

/// Raw problem description, shaped exactly like the on-disk document.
struct MdpSpec {
    std::vector<Vector> states;
    std::vector<Vector> actions;
    std::vector<std::vector<Vector>> transition; // [x][a][z]
    std::vector<Vector> reward;                  // infinite horizon: [x][a]
    std::vector<std::vector<Vector>> reward_by_time; // finite horizon: [j][x][a]
    Vector terminal;                             // finite horizon: [x]
    double gamma = 0.9;
    std::optional<std::size_t> horizon;
    Vector initial_dist; // empty when absent

    bool operator==(const MdpSpec&) const = default;
};

inline constexpr double kStochasticTol = 1e-12;
inline constexpr double kDirectionTol = 1e-9;

class ValidatedMdp;
ValidatedMdp validate_mdp(const MdpSpec& spec);

/// An MdpSpec that passed validation, with flattened storage. State-action
/// pairs are indexed `x * K + a`; finite-horizon rewards `(j * S + x) * K + a`.
class ValidatedMdp {
public:
    const MdpSpec& spec() const noexcept { return spec_; }
    std::size_t n_states() const noexcept { return n_states_; }
    std::size_t n_actions() const noexcept { return n_actions_; }
    std::size_t n_pairs() const noexcept { return n_states_ * n_actions_; }
    std::size_t dim() const noexcept { return dim_; }
    std::size_t state_dim() const noexcept { return state_dim_; }
    double gamma() const noexcept { return spec_.gamma; }
    bool finite() const noexcept { return spec_.horizon.has_value(); }
    std::size_t horizon() const noexcept { return spec_.horizon.value_or(0); }

    std::size_t pair(std::size_t x, std::size_t a) const noexcept { return x * n_actions_ + a; }

    /// Concatenated embedding (x, a).
    std::span<const double> zeta(std::size_t pair_index) const noexcept {
        return {zetas_.data() + pair_index * dim_, dim_};
    }
    std::span<const double> transition_row(std::size_t pair_index) const noexcept {
        return {transition_.data() + pair_index * n_states_, n_states_};
    }
    double p(std::size_t x, std::size_t a, std::size_t z) const noexcept {
        return transition_[pair(x, a) * n_states_ + z];
    }

    /// Infinite-horizon reward vector over pairs.
    std::span<const double> rewards() const noexcept { return rewards_; }
    double reward(std::size_t pair_index) const noexcept { return rewards_[pair_index]; }

    /// Finite-horizon reward slice j < J over pairs.
    std::span<const double> rewards_at(std::size_t j) const noexcept {
        return {rewards_.data() + j * n_pairs(), n_pairs()};
    }
    double terminal(std::size_t x) const noexcept { return spec_.terminal[x]; }

    /// Copy with a different discount factor; the discount does not affect
    /// any validated invariant beyond its range.
    ValidatedMdp with_gamma(double gamma) const {
        if (!(gamma >= 0.0 && gamma <= 1.0)) {
            fail(ErrorCode::InvalidInput, "gamma must lie in [0, 1]");
        }
        ValidatedMdp copy = *this;
        copy.spec_.gamma = gamma;
        return copy;
    }

private:
    friend ValidatedMdp validate_mdp(const MdpSpec& spec);
    ValidatedMdp() = default;

    MdpSpec spec_;
    std::size_t n_states_ = 0;
    std::size_t n_actions_ = 0;
    std::size_t dim_ = 0;
    std::size_t state_dim_ = 0;
    Vector zetas_;
    Vector transition_;
    Vector rewards_;
};

/// Probability mass over state-action pairs, optionally one law per time slice.
struct StateActionDist {
    std::size_t n_states = 0;
    std::size_t n_actions = 0;
    Vector probs;                  // stationary law over pairs
    std::vector<Vector> per_time;  // finite horizon: slices j = 0..J-1
};

enum class TableKind { Bellman, LimitOde, Network, Generic };

/// Real values over pairs; finite-horizon tables carry J + 1 slices with the
/// last one pinned to the terminal reward.
struct ValueTable {
    std::size_t n_states = 0;
    std::size_t n_actions = 0;
    std::size_t n_slices = 1;
    TableKind kind = TableKind::Generic;
    Vector values;

    ValueTable() = default;
    ValueTable(std::size_t states, std::size_t actions, std::size_t slices, TableKind k)
        : n_states(states), n_actions(actions), n_slices(slices), kind(k),
          values(states * actions * slices, 0.0) {}

    static ValueTable like(const ValidatedMdp& mdp, TableKind k) {
        return ValueTable(mdp.n_states(), mdp.n_actions(), mdp.finite() ? mdp.horizon() + 1 : 1, k);
    }

    std::size_t n_pairs() const noexcept { return n_states * n_actions; }
    double& at(std::size_t x, std::size_t a) { return values[x * n_actions + a]; }
    double at(std::size_t x, std::size_t a) const { return values[x * n_actions + a]; }
    double& at(std::size_t j, std::size_t x, std::size_t a) {
        return values[(j * n_states + x) * n_actions + a];
    }
    double at(std::size_t j, std::size_t x, std::size_t a) const {
        return values[(j * n_states + x) * n_actions + a];
    }
    std::span<double> slice(std::size_t j) { return {values.data() + j * n_pairs(), n_pairs()}; }
    std::span<const double> slice(std::size_t j) const {
        return {values.data() + j * n_pairs(), n_pairs()};
    }
};

namespace detail {

inline void check_probability_row(std::span<const double> row, const std::string& where) {
    double sum = 0.0;
    for (double v : row) {
        if (!(v >= 0.0) || !std::isfinite(v)) {
            fail(ErrorCode::RowNotStochastic, where + " has a negative or non-finite entry");
        }
        sum += v;
    }
    if (std::abs(sum - 1.0) > kStochasticTol) {
        fail(ErrorCode::RowNotStochastic, where + " sums to " + std::to_string(sum));
    }
}

inline void check_finite(double v, const std::string& where) {
    if (!std::isfinite(v)) {
        fail(ErrorCode::InvalidInput, where + " is not finite");
    }
}

// Strongly connected iff every state is reachable from state 0 along the
// uniform-policy kernel and along its reverse.
inline bool uniform_chain_irreducible(std::size_t n, const std::vector<std::vector<bool>>& edge) {
    auto reach_all = [&](bool reverse) {
        std::vector<bool> seen(n, false);
        std::vector<std::size_t> stack{0};
        seen[0] = true;
        while (!stack.empty()) {
            const std::size_t u = stack.back();
            stack.pop_back();
            for (std::size_t v = 0; v < n; ++v) {
                const bool e = reverse ? edge[v][u] : edge[u][v];
                if (e && !seen[v]) {
                    seen[v] = true;
                    stack.push_back(v);
                }
            }
        }
        return std::all_of(seen.begin(), seen.end(), [](bool b) { return b; });
    };
    return reach_all(false) && reach_all(true);
}

} // namespace detail

/// True when the two vectors are not scalar multiples of one another.
inline bool distinct_directions(std::span<const double> u, std::span<const double> v) {
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t k = 0; k < u.size(); ++k) {
        dot += u[k] * v[k];
        nu += u[k] * u[k];
        nv += v[k] * v[k];
    }
    return std::abs(dot) < std::sqrt(nu) * std::sqrt(nv) - kDirectionTol;
}

/// Checks every structural invariant and returns the flattened model.
/// Throws RowNotStochastic, ParallelEmbeddings, ReducibleChain,
/// NonPositiveInitialDist, DimensionMismatch or InvalidInput.
inline ValidatedMdp validate_mdp(const MdpSpec& spec) {
    const std::size_t S = spec.states.size();
    const std::size_t K = spec.actions.size();
    if (S == 0 || K == 0) {
        fail(ErrorCode::InvalidInput, "state and action sets must be nonempty");
    }
    const std::size_t dx = spec.states[0].size();
    const std::size_t da = spec.actions[0].size();
    for (const auto& x : spec.states) {
        require_dims(x.size(), dx, "state embedding length");
        for (double v : x) detail::check_finite(v, "state embedding");
    }
    for (const auto& a : spec.actions) {
        require_dims(a.size(), da, "action embedding length");
        for (double v : a) detail::check_finite(v, "action embedding");
    }
    if (dx + da == 0) {
        fail(ErrorCode::InvalidInput, "embeddings must have positive total dimension");
    }
    if (!(spec.gamma >= 0.0 && spec.gamma <= 1.0)) {
        fail(ErrorCode::InvalidInput, "gamma must lie in [0, 1]");
    }

    ValidatedMdp out;
    out.spec_ = spec;
    out.n_states_ = S;
    out.n_actions_ = K;
    out.state_dim_ = dx;
    out.dim_ = dx + da;

    require_dims(spec.transition.size(), S, "transition outer size");
    out.transition_.reserve(S * K * S);
    for (std::size_t x = 0; x < S; ++x) {
        require_dims(spec.transition[x].size(), K, "transition action count");
        for (std::size_t a = 0; a < K; ++a) {
            require_dims(spec.transition[x][a].size(), S, "transition row length");
            detail::check_probability_row(spec.transition[x][a],
                                          "transition[" + std::to_string(x) + "][" +
                                              std::to_string(a) + "]");
            out.transition_.insert(out.transition_.end(), spec.transition[x][a].begin(),
                                   spec.transition[x][a].end());
        }
    }

    if (spec.horizon) {
        const std::size_t J = *spec.horizon;
        require_dims(spec.reward_by_time.size(), J, "finite-horizon reward slices");
        for (const auto& slice : spec.reward_by_time) {
            require_dims(slice.size(), S, "reward slice states");
            for (const auto& row : slice) {
                require_dims(row.size(), K, "reward slice actions");
                for (double v : row) {
                    detail::check_finite(v, "reward");
                    out.rewards_.push_back(v);
                }
            }
        }
        require_dims(spec.terminal.size(), S, "terminal reward length");
        for (double v : spec.terminal) detail::check_finite(v, "terminal reward");
        require_dims(spec.initial_dist.size(), S, "initial distribution length");
        double mass = 0.0;
        for (double v : spec.initial_dist) {
            if (!(v > 0.0) || !std::isfinite(v)) {
                fail(ErrorCode::NonPositiveInitialDist, "every initial probability must be > 0");
            }
            mass += v;
        }
        if (std::abs(mass - 1.0) > kStochasticTol) {
            fail(ErrorCode::NonPositiveInitialDist, "initial distribution sums to " + std::to_string(mass));
        }
    } else {
        require_dims(spec.reward.size(), S, "reward states");
        for (const auto& row : spec.reward) {
            require_dims(row.size(), K, "reward actions");
            for (double v : row) {
                detail::check_finite(v, "reward");
                out.rewards_.push_back(v);
            }
        }
    }

    out.zetas_.reserve(S * K * out.dim_);
    for (std::size_t x = 0; x < S; ++x) {
        for (std::size_t a = 0; a < K; ++a) {
            out.zetas_.insert(out.zetas_.end(), spec.states[x].begin(), spec.states[x].end());
            out.zetas_.insert(out.zetas_.end(), spec.actions[a].begin(), spec.actions[a].end());
        }
    }
    for (std::size_t i = 0; i < S * K; ++i) {
        for (std::size_t j = i + 1; j < S * K; ++j) {
            if (!distinct_directions(out.zeta(i), out.zeta(j))) {
                fail(ErrorCode::ParallelEmbeddings,
                     "pairs (x=" + std::to_string(i / K) + ", a=" + std::to_string(i % K) +
                         ") and (x=" + std::to_string(j / K) + ", a=" + std::to_string(j % K) +
                         ") are parallel");
            }
        }
    }

    std::vector<std::vector<bool>> edge(S, std::vector<bool>(S, false));
    for (std::size_t x = 0; x < S; ++x) {
        for (std::size_t a = 0; a < K; ++a) {
            for (std::size_t z = 0; z < S; ++z) {
                if (out.p(x, a, z) > 0.0) edge[x][z] = true;
            }
        }
    }
    if (!detail::uniform_chain_irreducible(S, edge)) {
        fail(ErrorCode::ReducibleChain, "uniform-policy chain has more than one communicating class");
    }
    return out;
}

/// State-to-state kernel under uniformly random actions.
inline Eigen::MatrixXd uniform_policy_kernel(const ValidatedMdp& mdp) {
    const std::size_t S = mdp.n_states(), K = mdp.n_actions();
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(S, S);
    for (std::size_t x = 0; x < S; ++x) {
        for (std::size_t a = 0; a < K; ++a) {
            for (std::size_t z = 0; z < S; ++z) {
                P(x, z) += mdp.p(x, a, z) / static_cast<double>(K);
            }
        }
    }
    return P;
}

inline StateActionDist spread_over_actions(const ValidatedMdp& mdp, const Eigen::VectorXd& state_probs) {
    StateActionDist d;
    d.n_states = mdp.n_states();
    d.n_actions = mdp.n_actions();
    d.probs.resize(mdp.n_pairs());
    for (std::size_t x = 0; x < d.n_states; ++x) {
        for (std::size_t a = 0; a < d.n_actions; ++a) {
            d.probs[mdp.pair(x, a)] = state_probs(static_cast<Eigen::Index>(x)) / static_cast<double>(d.n_actions);
        }
    }
    return d;
}

/// Stationary law pi(x, a) = pi(x) / K of the pure-exploration chain.
/// Direct linear solve with power-iteration polish; ConvergenceFailure if the
/// residual |pi P - pi|_1 stays above 1e-12.
inline StateActionDist stationary_state_distribution(const ValidatedMdp& mdp,
                                                     std::size_t max_polish = 100000) {
    const auto S = static_cast<Eigen::Index>(mdp.n_states());
    const Eigen::MatrixXd P = uniform_policy_kernel(mdp);

    Eigen::MatrixXd M = P.transpose() - Eigen::MatrixXd::Identity(S, S);
    M.row(S - 1).setOnes();
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(S);
    rhs(S - 1) = 1.0;
    Eigen::VectorXd pi = M.fullPivLu().solve(rhs);

    auto residual = [&](const Eigen::VectorXd& v) {
        return (P.transpose() * v - v).lpNorm<1>();
    };
    std::size_t it = 0;
    while (residual(pi) >= 1e-12 && it < max_polish) {
        pi = P.transpose() * pi;
        pi /= pi.sum();
        ++it;
    }
    if (!(residual(pi) < 1e-12) || !(pi.minCoeff() > 0.0)) {
        fail(ErrorCode::ConvergenceFailure, "stationary distribution residual did not reach 1e-12");
    }
    pi /= pi.sum();
    return spread_over_actions(mdp, pi);
}

/// Forward push of an arbitrary state law under the uniform-policy kernel:
/// returns pi_0, ..., pi_{count-1} over states. No positivity checks.
inline std::vector<Vector> state_marginals(const ValidatedMdp& mdp, std::span<const double> initial,
                                           std::size_t count) {
    require_dims(initial.size(), mdp.n_states(), "initial distribution length");
    const Eigen::MatrixXd P = uniform_policy_kernel(mdp);
    std::vector<Vector> out;
    out.reserve(count);
    Eigen::VectorXd cur = Eigen::Map<const Eigen::VectorXd>(initial.data(), static_cast<Eigen::Index>(initial.size()));
    for (std::size_t j = 0; j < count; ++j) {
        out.emplace_back(cur.data(), cur.data() + cur.size());
        cur = P.transpose() * cur;
    }
    return out;
}

/// Per-time pair laws pi_j(x, a) = pi_j(x) / K for j = 0..J-1 starting from
/// `initial`. Throws ZeroMassState if some pi_j(x) vanishes.
inline StateActionDist time_marginals(const ValidatedMdp& mdp, std::span<const double> initial) {
    StateActionDist d;
    d.n_states = mdp.n_states();
    d.n_actions = mdp.n_actions();
    const auto laws = state_marginals(mdp, initial, mdp.horizon());
    for (std::size_t j = 0; j < laws.size(); ++j) {
        Vector pairs(mdp.n_pairs());
        for (std::size_t x = 0; x < d.n_states; ++x) {
            if (!(laws[j][x] > 0.0)) {
                fail(ErrorCode::ZeroMassState, "state " + std::to_string(x) + " has zero mass at time " +
                                                   std::to_string(j));
            }
            for (std::size_t a = 0; a < d.n_actions; ++a) {
                pairs[mdp.pair(x, a)] = laws[j][x] / static_cast<double>(d.n_actions);
            }
        }
        d.per_time.push_back(std::move(pairs));
    }
    if (!d.per_time.empty()) d.probs = d.per_time.front();
    return d;
}

inline StateActionDist time_marginals(const ValidatedMdp& mdp) {
    if (!mdp.finite()) {
        fail(ErrorCode::InvalidInput, "time marginals need a finite-horizon spec");
    }
    return time_marginals(mdp, mdp.spec().initial_dist);
}

/// U(h)(x, a) = sum_z max_a' h(z, a') p(z | x, a) for one slice of values.
/// Only the maximum enters, so ties need no tie-breaking.
inline Vector expected_next_max(const ValidatedMdp& mdp, std::span<const double> h) {
    require_dims(h.size(), mdp.n_pairs(), "value slice length");
    const std::size_t S = mdp.n_states(), K = mdp.n_actions();
    Vector best(S);
    for (std::size_t z = 0; z < S; ++z) {
        best[z] = *std::max_element(h.begin() + static_cast<std::ptrdiff_t>(z * K),
                                    h.begin() + static_cast<std::ptrdiff_t>((z + 1) * K));
    }
    Vector u(mdp.n_pairs(), 0.0);
    for (std::size_t i = 0; i < mdp.n_pairs(); ++i) {
        const auto row = mdp.transition_row(i);
        double acc = 0.0;
        for (std::size_t z = 0; z < S; ++z) acc += row[z] * best[z];
        u[i] = acc;
    }
    return u;
}

/// Same quantity when the next-slice values are the terminal reward r(J, z).
inline Vector expected_terminal(const ValidatedMdp& mdp) {
    Vector u(mdp.n_pairs(), 0.0);
    for (std::size_t i = 0; i < mdp.n_pairs(); ++i) {
        const auto row = mdp.transition_row(i);
        double acc = 0.0;
        for (std::size_t z = 0; z < mdp.n_states(); ++z) acc += row[z] * mdp.terminal(z);
        u[i] = acc;
    }
    return u;
}

inline constexpr std::size_t kValueIterationCap = 1000000;

/// Value iteration for the discounted Bellman equation. Stops once the sweep
/// change drops below tol (1 - gamma) / gamma, which bounds the fixed-point
/// residual by tol.
inline ValueTable bellman_solve_infinite(const ValidatedMdp& mdp, double tol,
                                         std::size_t cap = kValueIterationCap) {
    if (mdp.finite()) {
        fail(ErrorCode::InvalidInput, "infinite-horizon solve on a finite-horizon spec");
    }
    const double g = mdp.gamma();
    if (g >= 1.0) {
        fail(ErrorCode::DiscountNotContractive, "gamma must be < 1 for the infinite horizon");
    }
    if (!(tol > 0.0)) {
        fail(ErrorCode::InvalidInput, "tolerance must be positive");
    }
    ValueTable v = ValueTable::like(mdp, TableKind::Bellman);
    const auto r = mdp.rewards();
    if (g == 0.0) {
        std::copy(r.begin(), r.end(), v.values.begin());
        return v;
    }
    const double threshold = tol * (1.0 - g) / g;
    for (std::size_t it = 0; it < cap; ++it) {
        const Vector u = expected_next_max(mdp, v.values);
        double change = 0.0;
        for (std::size_t i = 0; i < v.values.size(); ++i) {
            const double next = r[i] + g * u[i];
            change = std::max(change, std::abs(next - v.values[i]));
            v.values[i] = next;
        }
        if (change < threshold) {
            return v;
        }
    }
    fail(ErrorCode::IterationCapExceeded, "value iteration did not converge");
}

/// One backward sweep: slice j <- r(j) + gamma U(slice j+1) for j < J and
/// slice J <- terminal. Applied to the exact solution it reproduces it.
inline ValueTable bellman_backup_finite(const ValidatedMdp& mdp, const ValueTable& next) {
    const std::size_t J = mdp.horizon();
    require_dims(next.values.size(), (J + 1) * mdp.n_pairs(), "finite-horizon table size");
    ValueTable out = ValueTable::like(mdp, TableKind::Bellman);
    for (std::size_t x = 0; x < mdp.n_states(); ++x) {
        for (std::size_t a = 0; a < mdp.n_actions(); ++a) out.at(J, x, a) = mdp.terminal(x);
    }
    const double g = mdp.gamma();
    for (std::size_t j = 0; j < J; ++j) {
        const Vector u = expected_next_max(mdp, next.slice(j + 1));
        const auto r = mdp.rewards_at(j);
        auto dst = out.slice(j);
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = r[i] + g * u[i];
    }
    return out;
}

/// Exact backward recursion of the finite-horizon Bellman equation.
inline ValueTable bellman_solve_finite(const ValidatedMdp& mdp) {
    if (!mdp.finite()) {
        fail(ErrorCode::InvalidInput, "finite-horizon solve needs a horizon");
    }
    const std::size_t J = mdp.horizon();
    ValueTable v = ValueTable::like(mdp, TableKind::Bellman);
    for (std::size_t x = 0; x < mdp.n_states(); ++x) {
        for (std::size_t a = 0; a < mdp.n_actions(); ++a) v.at(J, x, a) = mdp.terminal(x);
    }
    const double g = mdp.gamma();
    for (std::size_t jj = J; jj-- > 0;) {
        const Vector u = expected_next_max(mdp, v.slice(jj + 1));
        const auto r = mdp.rewards_at(jj);
        auto dst = v.slice(jj);
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = r[i] + g * u[i];
    }
    return v;
}

struct Transition {
    std::size_t state = 0;
    std::size_t action = 0;
    std::size_t next_state = 0;
    double reward = 0.0;
};

/// Pure-exploration chain: x_0 uniform over states, actions uniform,
/// x_{k+1} ~ p(. | x_k, a_k). Owns its generator.
class ChainSampler {
public:
    ChainSampler(const ValidatedMdp& mdp, std::uint64_t seed, std::size_t burn_in = 0)
        : mdp_(&mdp), rng_(make_rng(seed)) {
        if (mdp.finite()) {
            fail(ErrorCode::InvalidInput, "chain sampling needs an infinite-horizon spec");
        }
        state_ = uniform_index(rng_, mdp.n_states());
        for (std::size_t i = 0; i < burn_in; ++i) next();
    }

    Transition next() {
        Transition t;
        t.state = state_;
        t.action = uniform_index(rng_, mdp_->n_actions());
        const std::size_t idx = mdp_->pair(t.state, t.action);
        t.reward = mdp_->reward(idx);
        t.next_state = sample_discrete(rng_, mdp_->transition_row(idx));
        state_ = t.next_state;
        return t;
    }

private:
    const ValidatedMdp* mdp_;
    Rng rng_;
    std::size_t state_ = 0;
};

inline std::vector<Transition> sample_chain(const ValidatedMdp& mdp, std::uint64_t seed, std::size_t steps,
                                            std::size_t burn_in = 0) {
    if (steps < 1) {
        fail(ErrorCode::InvalidInput, "steps must be >= 1");
    }
    ChainSampler sampler(mdp, seed, burn_in);
    std::vector<Transition> out;
    out.reserve(steps);
    for (std::size_t k = 0; k < steps; ++k) out.push_back(sampler.next());
    return out;
}

/// One finite-horizon episode: J + 1 states, J actions and rewards, and the
/// terminal reward r(J, x_J).
struct Episode {
    std::vector<std::size_t> states;
    std::vector<std::size_t> actions;
    Vector rewards;
    double terminal_reward = 0.0;
};

inline Episode sample_episode(const ValidatedMdp& mdp, Rng& rng) {
    if (!mdp.finite()) {
        fail(ErrorCode::InvalidInput, "episode sampling needs a finite-horizon spec");
    }
    const std::size_t J = mdp.horizon();
    Episode e;
    e.states.reserve(J + 1);
    std::size_t x = sample_discrete(rng, mdp.spec().initial_dist);
    e.states.push_back(x);
    for (std::size_t j = 0; j < J; ++j) {
        const std::size_t a = uniform_index(rng, mdp.n_actions());
        const std::size_t idx = mdp.pair(x, a);
        e.actions.push_back(a);
        e.rewards.push_back(mdp.rewards_at(j)[idx]);
        x = sample_discrete(rng, mdp.transition_row(idx));
        e.states.push_back(x);
    }
    e.terminal_reward = mdp.terminal(x);
    return e;
}

inline Episode sample_episode(const ValidatedMdp& mdp, std::uint64_t seed) {
    Rng rng = make_rng(seed);
    return sample_episode(mdp, rng);
}

} // namespace mfq
