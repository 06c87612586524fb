#pragma once

// Right-hand sides of the width-limit dynamics, a fixed-step RK4 integrator,
// Bellman residuals and the Lyapunov function Y = 1/2 phi . A^{-1} phi.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mfq/error.hpp"
#include "mfq/kernel.hpp"
#include "mfq/mdp.hpp"
#include "mfq/rng.hpp"

namespace mfq {

namespace detail {

inline Vector matvec(const Eigen::MatrixXd& A, std::span<const double> v) {
    require_dims(v.size(), static_cast<std::size_t>(A.cols()), "kernel/vector size");
    Vector out(static_cast<std::size_t>(A.rows()));
    Eigen::Map<Eigen::VectorXd>(out.data(), A.rows()) =
        A * Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    return out;
}

} // namespace detail

/// dh(z) = sum_z' pi(z') A(z, z') [ r(z') + gamma U(h)(z') - h(z') ].
inline Vector ode_rhs_infinite(std::span<const double> h, const Eigen::MatrixXd& A, std::span<const double> pi,
                               const ValidatedMdp& mdp, double gamma) {
    const std::size_t P = mdp.n_pairs();
    require_dims(h.size(), P, "value table size");
    require_dims(pi.size(), P, "pair distribution size");
    require_dims(static_cast<std::size_t>(A.rows()), P, "kernel size");
    const Vector u = expected_next_max(mdp, h);
    const auto r = mdp.rewards();
    Vector weighted(P);
    for (std::size_t i = 0; i < P; ++i) weighted[i] = pi[i] * (r[i] + gamma * u[i] - h[i]);
    return detail::matvec(A, weighted);
}

inline ValueTable ode_rhs_infinite(const ValueTable& h, const KernelTensor& A, const StateActionDist& pi,
                                   const ValidatedMdp& mdp, double gamma) {
    ValueTable out(h.n_states, h.n_actions, h.n_slices, TableKind::Generic);
    out.values = ode_rhs_infinite(h.values, A.entries, pi.probs, mdp, gamma);
    return out;
}

/// Slice j < J couples to slice j + 1 through the max term, with its own law
/// pi_j; the terminal slice J has zero derivative.
inline Vector ode_rhs_finite(std::span<const double> h, const Eigen::MatrixXd& A,
                             const std::vector<Vector>& pi_per_time, const ValidatedMdp& mdp, double gamma) {
    const std::size_t P = mdp.n_pairs();
    const std::size_t J = mdp.horizon();
    require_dims(h.size(), (J + 1) * P, "finite-horizon table size");
    require_dims(pi_per_time.size(), J, "number of per-time laws");
    require_dims(static_cast<std::size_t>(A.rows()), P, "kernel size");
    Vector out((J + 1) * P, 0.0);
    Vector weighted(P);
    for (std::size_t j = 0; j < J; ++j) {
        require_dims(pi_per_time[j].size(), P, "pair distribution size");
        const auto hj = h.subspan(j * P, P);
        const Vector u = expected_next_max(mdp, h.subspan((j + 1) * P, P));
        const auto r = mdp.rewards_at(j);
        for (std::size_t i = 0; i < P; ++i) weighted[i] = pi_per_time[j][i] * (r[i] + gamma * u[i] - hj[i]);
        const Vector dj = detail::matvec(A, weighted);
        std::copy(dj.begin(), dj.end(), out.begin() + static_cast<std::ptrdiff_t>(j * P));
    }
    return out;
}

inline ValueTable ode_rhs_finite(const ValueTable& h, const KernelTensor& A, const StateActionDist& pi,
                                 const ValidatedMdp& mdp, double gamma) {
    ValueTable out(h.n_states, h.n_actions, h.n_slices, TableKind::Generic);
    out.values = ode_rhs_finite(h.values, A.entries, pi.per_time, mdp, gamma);
    return out;
}

/// A (Y - h).
inline Vector ode_rhs_regression(std::span<const double> h, const Eigen::MatrixXd& A, std::span<const double> y_hat) {
    require_dims(h.size(), y_hat.size(), "target length");
    require_dims(static_cast<std::size_t>(A.rows()), h.size(), "kernel size");
    Vector diff(h.size());
    for (std::size_t i = 0; i < h.size(); ++i) diff[i] = y_hat[i] - h[i];
    return detail::matvec(A, diff);
}

struct OdeSolution {
    std::vector<double> times;
    std::vector<Vector> values;
    double step_size = 0.0;
    std::string mode;
};

using OdeRhs = std::function<Vector(std::span<const double>)>;

/// Classical RK4 on a uniform grid over [0, t_end]. The step is shrunk to
/// t_end / ceil(t_end / dt) so the grid lands on t_end. Every
/// `store_every`-th grid point (and the last) is stored. Throws
/// NonFiniteState when the state blows up.
inline OdeSolution integrate(const OdeRhs& rhs, Vector h0, double t_end, double dt, std::size_t store_every = 1,
                             std::string mode = {}) {
    if (!(dt > 0.0) || !std::isfinite(dt)) fail(ErrorCode::InvalidInput, "dt must be positive");
    if (!(t_end >= 0.0) || !std::isfinite(t_end)) fail(ErrorCode::InvalidInput, "t_end must be >= 0");
    if (store_every < 1) fail(ErrorCode::InvalidInput, "store_every must be >= 1");
    const auto steps = static_cast<std::size_t>(std::ceil(t_end / dt - 1e-9));
    const double h = steps == 0 ? dt : t_end / static_cast<double>(steps);

    OdeSolution sol;
    sol.step_size = h;
    sol.mode = std::move(mode);
    const std::size_t n = h0.size();
    Vector y = std::move(h0), tmp(n);
    sol.times.push_back(0.0);
    sol.values.push_back(y);
    for (std::size_t s = 0; s < steps; ++s) {
        const Vector k1 = rhs(y);
        for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + 0.5 * h * k1[i];
        const Vector k2 = rhs(tmp);
        for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + 0.5 * h * k2[i];
        const Vector k3 = rhs(tmp);
        for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + h * k3[i];
        const Vector k4 = rhs(tmp);
        for (std::size_t i = 0; i < n; ++i) {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            if (!std::isfinite(y[i])) {
                fail(ErrorCode::NonFiniteState,
                     "state became non-finite at t = " + std::to_string(static_cast<double>(s + 1) * h) +
                         "; reduce dt");
            }
        }
        if ((s + 1) % store_every == 0 || s + 1 == steps) {
            sol.times.push_back(static_cast<double>(s + 1) * h);
            sol.values.push_back(y);
        }
    }
    return sol;
}

/// r + gamma U(h) - h; finite horizon per slice, with the terminal slice
/// measured against r(J, x).
inline ValueTable bellman_residual(const ValueTable& h, const ValidatedMdp& mdp, double gamma) {
    const std::size_t P = mdp.n_pairs();
    ValueTable out(h.n_states, h.n_actions, h.n_slices, TableKind::Generic);
    if (!mdp.finite()) {
        require_dims(h.values.size(), P, "value table size");
        const Vector u = expected_next_max(mdp, h.values);
        const auto r = mdp.rewards();
        for (std::size_t i = 0; i < P; ++i) out.values[i] = r[i] + gamma * u[i] - h.values[i];
        return out;
    }
    const std::size_t J = mdp.horizon();
    require_dims(h.values.size(), (J + 1) * P, "finite-horizon table size");
    for (std::size_t j = 0; j < J; ++j) {
        const Vector u = expected_next_max(mdp, h.slice(j + 1));
        const auto r = mdp.rewards_at(j);
        const auto hj = h.slice(j);
        auto dst = out.slice(j);
        for (std::size_t i = 0; i < P; ++i) dst[i] = r[i] + gamma * u[i] - hj[i];
    }
    for (std::size_t x = 0; x < mdp.n_states(); ++x) {
        for (std::size_t a = 0; a < mdp.n_actions(); ++a) out.at(J, x, a) = mdp.terminal(x) - h.at(J, x, a);
    }
    return out;
}

struct LyapunovTrace {
    std::vector<double> times;
    std::vector<double> y_values;
};

/// Y_t = 1/2 phi_t . A^{-1} phi_t with phi_t = h_t - V, via a Cholesky solve.
/// For finite-horizon tables the kernel acts block-diagonally on slices.
inline LyapunovTrace lyapunov_trace(const OdeSolution& sol, std::span<const double> V, const Eigen::MatrixXd& A) {
    const auto n = static_cast<std::size_t>(A.rows());
    if (n == 0 || V.size() % n != 0) {
        fail(ErrorCode::DimensionMismatch, "value table is not a whole number of kernel blocks");
    }
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() != Eigen::Success) {
        fail(ErrorCode::NotPositiveDefinite, "Cholesky factorization of the kernel failed");
    }
    const std::size_t blocks = V.size() / n;
    LyapunovTrace tr;
    tr.times = sol.times;
    tr.y_values.reserve(sol.values.size());
    Eigen::VectorXd phi(static_cast<Eigen::Index>(n));
    for (const auto& h : sol.values) {
        require_dims(h.size(), V.size(), "trajectory table size");
        double y = 0.0;
        for (std::size_t b = 0; b < blocks; ++b) {
            for (std::size_t i = 0; i < n; ++i) phi(static_cast<Eigen::Index>(i)) = h[b * n + i] - V[b * n + i];
            y += 0.5 * phi.dot(llt.solve(phi));
        }
        tr.y_values.push_back(y);
    }
    return tr;
}

inline LyapunovTrace lyapunov_trace(const OdeSolution& sol, const ValueTable& V, const KernelTensor& A) {
    return lyapunov_trace(sol, V.values, A.entries);
}

inline double sup_distance(std::span<const double> a, std::span<const double> b) {
    require_dims(a.size(), b.size(), "table size");
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}

/// True when y never rises by more than `slack` between consecutive points.
inline bool non_increasing(std::span<const double> y, double slack) {
    for (std::size_t i = 1; i < y.size(); ++i) {
        if (y[i] > y[i - 1] + slack) return false;
    }
    return true;
}

/// First stored time from which sup over the slice of |h - V| stays below
/// tol through the end of the run; empty if it never settles.
inline std::optional<double> slice_settling_time(const OdeSolution& sol, std::span<const double> V,
                                                 std::size_t slice, std::size_t pairs, double tol) {
    std::optional<double> settled;
    for (std::size_t s = 0; s < sol.values.size(); ++s) {
        const auto& h = sol.values[s];
        double err = 0.0;
        for (std::size_t i = 0; i < pairs; ++i) {
            err = std::max(err, std::abs(h[slice * pairs + i] - V[slice * pairs + i]));
        }
        if (err < tol) {
            if (!settled) settled = sol.times[s];
        } else {
            settled.reset();
        }
    }
    return settled;
}

/// Least-squares slope of -log(norm) against time over points whose norm is
/// above `floor`; the decay rate of an exponentially shrinking quantity.
inline double fit_decay_rate(std::span<const double> times, std::span<const double> norms, double floor) {
    double st = 0.0, sy = 0.0, stt = 0.0, sty = 0.0, n = 0.0;
    for (std::size_t i = 0; i < times.size(); ++i) {
        if (!(norms[i] > floor)) continue;
        const double y = std::log(norms[i]);
        st += times[i];
        sy += y;
        stt += times[i] * times[i];
        sty += times[i] * y;
        n += 1.0;
    }
    if (n < 2.0) fail(ErrorCode::InvalidInput, "need at least two points above the floor to fit a rate");
    const double slope = (n * sty - st * sy) / (n * stt - st * st);
    return -slope;
}

/// Draw from N(0, cov) via a symmetric eigendecomposition, tolerating
/// numerically semidefinite covariances.
inline Vector draw_gaussian(const Eigen::MatrixXd& cov, std::uint64_t seed) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    Rng rng = make_rng(seed);
    Eigen::VectorXd z(cov.rows());
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = standard_normal(rng);
    const Eigen::VectorXd x = es.eigenvectors() * root.cwiseProduct(z);
    return Vector(x.data(), x.data() + x.size());
}

/// Width-limit initial condition: Gaussian with covariance
/// E[c^2] E[sigma(w.z) sigma(w.z')] per slice; finite-horizon slices are
/// independent and the terminal slice is pinned to r(J, x).
inline Vector gaussian_initial_table(const KernelTensor& A, double c_second_moment, const ValidatedMdp& mdp,
                                     std::uint64_t seed) {
    const Eigen::MatrixXd cov = c_second_moment * A.feature_cov;
    if (!mdp.finite()) return draw_gaussian(cov, seed);
    const std::size_t J = mdp.horizon();
    Vector out;
    for (std::size_t j = 0; j < J; ++j) {
        const Vector slice = draw_gaussian(cov, derive_seed(seed, j));
        out.insert(out.end(), slice.begin(), slice.end());
    }
    for (std::size_t x = 0; x < mdp.n_states(); ++x) {
        for (std::size_t a = 0; a < mdp.n_actions(); ++a) out.push_back(mdp.terminal(x));
    }
    return out;
}

} // namespace mfq
