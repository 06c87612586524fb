#pragma once

// Independent reference implementations used only by tests. They work on the
// raw MdpSpec with plain loops and share no code paths with the library
// beyond the data types.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <queue>
#include <vector>

#include "mfq/mdp.hpp"

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

inline std::size_t n_states(const mfq::MdpSpec& s) { return s.states.size(); }
inline std::size_t n_actions(const mfq::MdpSpec& s) { return s.actions.size(); }

inline Mat uniform_policy(const mfq::MdpSpec& s) {
    const std::size_t S = n_states(s), K = n_actions(s);
    Mat P(S, Vec(S, 0.0));
    for (std::size_t x = 0; x < S; ++x)
        for (std::size_t a = 0; a < K; ++a)
            for (std::size_t z = 0; z < S; ++z) P[x][z] += s.transition[x][a][z] / static_cast<double>(K);
    return P;
}

/// Breadth-first search from every state over positive-probability edges.
inline bool all_states_reach_all(const mfq::MdpSpec& s) {
    const Mat P = uniform_policy(s);
    const std::size_t S = P.size();
    for (std::size_t src = 0; src < S; ++src) {
        std::vector<bool> seen(S, false);
        std::queue<std::size_t> q;
        q.push(src);
        seen[src] = true;
        while (!q.empty()) {
            const std::size_t x = q.front();
            q.pop();
            for (std::size_t z = 0; z < S; ++z) {
                if (P[x][z] > 0.0 && !seen[z]) {
                    seen[z] = true;
                    q.push(z);
                }
            }
        }
        if (std::find(seen.begin(), seen.end(), false) != seen.end()) return false;
    }
    return true;
}

inline Mat matmul(const Mat& A, const Mat& B) {
    const std::size_t n = A.size(), m = B[0].size(), k = B.size();
    Mat C(n, Vec(m, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t l = 0; l < k; ++l)
            for (std::size_t j = 0; j < m; ++j) C[i][j] += A[i][l] * B[l][j];
    return C;
}

/// Row 0 of P^power by repeated squaring.
inline Vec matrix_power_row(const Mat& P, unsigned power) {
    Mat result(P.size(), Vec(P.size(), 0.0));
    for (std::size_t i = 0; i < P.size(); ++i) result[i][i] = 1.0;
    Mat base = P;
    while (power) {
        if (power & 1u) result = matmul(result, base);
        base = matmul(base, base);
        power >>= 1u;
    }
    return result[0];
}

/// pi_j over states, j = 0..count-1, by explicit vector-matrix products.
inline Mat push_forward(const mfq::MdpSpec& s, const Vec& pi0, std::size_t count) {
    const Mat P = uniform_policy(s);
    Mat out{pi0};
    while (out.size() < count) {
        Vec next(P.size(), 0.0);
        for (std::size_t x = 0; x < P.size(); ++x)
            for (std::size_t z = 0; z < P.size(); ++z) next[z] += out.back()[x] * P[x][z];
        out.push_back(next);
    }
    return out;
}

/// sum_z max_a' h[z][a'] p(z | x, a) on an [x][a] table.
inline Mat expected_max(const mfq::MdpSpec& s, const Mat& h) {
    const std::size_t S = n_states(s), K = n_actions(s);
    Mat u(S, Vec(K, 0.0));
    for (std::size_t x = 0; x < S; ++x)
        for (std::size_t a = 0; a < K; ++a)
            for (std::size_t z = 0; z < S; ++z) {
                double best = h[z][0];
                for (std::size_t b = 1; b < K; ++b) best = std::max(best, h[z][b]);
                u[x][a] += s.transition[x][a][z] * best;
            }
    return u;
}

/// Plain value iteration for a fixed number of sweeps.
inline Mat value_iteration(const mfq::MdpSpec& s, std::size_t sweeps) {
    const std::size_t S = n_states(s), K = n_actions(s);
    Mat v(S, Vec(K, 0.0));
    for (std::size_t it = 0; it < sweeps; ++it) {
        const Mat u = expected_max(s, v);
        for (std::size_t x = 0; x < S; ++x)
            for (std::size_t a = 0; a < K; ++a) v[x][a] = s.reward[x][a] + s.gamma * u[x][a];
    }
    return v;
}

/// Backward recursion written out directly: result[j][x][a], j = 0..J.
inline std::vector<Mat> finite_recursion(const mfq::MdpSpec& s) {
    const std::size_t S = n_states(s), K = n_actions(s), J = *s.horizon;
    std::vector<Mat> v(J + 1, Mat(S, Vec(K, 0.0)));
    for (std::size_t x = 0; x < S; ++x)
        for (std::size_t a = 0; a < K; ++a) v[J][x][a] = s.terminal[x];
    for (std::size_t j = J; j-- > 0;) {
        for (std::size_t x = 0; x < S; ++x)
            for (std::size_t a = 0; a < K; ++a) {
                double acc = 0.0;
                for (std::size_t z = 0; z < S; ++z) {
                    double best = v[j + 1][z][0];
                    for (std::size_t b = 1; b < K; ++b) best = std::max(best, v[j + 1][z][b]);
                    acc += s.transition[x][a][z] * best;
                }
                v[j][x][a] = s.reward_by_time[j][x][a] + s.gamma * acc;
            }
    }
    return v;
}

/// sum over (x', a') of pi A [r + gamma sum_z max h p - h], as a triple loop
/// on flat pair indices x * K + a.
inline Vec rhs_infinite(const Vec& h, const Mat& A, const Vec& pi, const mfq::MdpSpec& s, double gamma) {
    const std::size_t S = n_states(s), K = n_actions(s), P = S * K;
    Vec out(P, 0.0);
    for (std::size_t i = 0; i < P; ++i) {
        for (std::size_t x = 0; x < S; ++x) {
            for (std::size_t a = 0; a < K; ++a) {
                const std::size_t q = x * K + a;
                double u = 0.0;
                for (std::size_t z = 0; z < S; ++z) {
                    double best = h[z * K];
                    for (std::size_t b = 1; b < K; ++b) best = std::max(best, h[z * K + b]);
                    u += best * s.transition[x][a][z];
                }
                out[i] += pi[q] * A[i][q] * (s.reward[x][a] + gamma * u - h[q]);
            }
        }
    }
    return out;
}

/// Finite-horizon analogue over flat index (j * S + x) * K + a.
inline Vec rhs_finite(const Vec& h, const Mat& A, const Mat& pi_j, const mfq::MdpSpec& s, double gamma) {
    const std::size_t S = n_states(s), K = n_actions(s), P = S * K, J = *s.horizon;
    Vec out((J + 1) * P, 0.0);
    for (std::size_t j = 0; j < J; ++j) {
        for (std::size_t i = 0; i < P; ++i) {
            double acc = 0.0;
            for (std::size_t x = 0; x < S; ++x) {
                for (std::size_t a = 0; a < K; ++a) {
                    const std::size_t q = x * K + a;
                    double u = 0.0;
                    for (std::size_t z = 0; z < S; ++z) {
                        double best = h[(j + 1) * P + z * K];
                        for (std::size_t b = 1; b < K; ++b) best = std::max(best, h[(j + 1) * P + z * K + b]);
                        u += best * s.transition[x][a][z];
                    }
                    acc += pi_j[j][q] * A[i][q] * (s.reward_by_time[j][x][a] + gamma * u - h[j * P + q]);
                }
            }
            out[j * P + i] = acc;
        }
    }
    return out;
}

inline Vec residual_infinite(const Vec& h, const mfq::MdpSpec& s, double gamma) {
    const std::size_t S = n_states(s), K = n_actions(s);
    Mat table(S, Vec(K));
    for (std::size_t x = 0; x < S; ++x)
        for (std::size_t a = 0; a < K; ++a) table[x][a] = h[x * K + a];
    const Mat u = expected_max(s, table);
    Vec out(S * K);
    for (std::size_t x = 0; x < S; ++x)
        for (std::size_t a = 0; a < K; ++a) out[x * K + a] = s.reward[x][a] + gamma * u[x][a] - table[x][a];
    return out;
}

inline Vec matvec(const Mat& A, const Vec& v) {
    Vec out(A.size(), 0.0);
    for (std::size_t i = 0; i < A.size(); ++i)
        for (std::size_t j = 0; j < v.size(); ++j) out[i] += A[i][j] * v[j];
    return out;
}

/// Forward Euler with a fixed step.
inline Vec euler(const std::function<Vec(const Vec&)>& f, Vec h, double t_end, double dt) {
    const auto steps = static_cast<std::size_t>(std::llround(t_end / dt));
    for (std::size_t k = 0; k < steps; ++k) {
        const Vec d = f(h);
        for (std::size_t i = 0; i < h.size(); ++i) h[i] += dt * d[i];
    }
    return h;
}

/// Kernel for scalar inputs z_m, scalar standard-normal w and c with second
/// moment c2, by a dense trapezoid rule on [-L, L] against the normal
/// density:
///   A_mq = alpha ( E[s(w z_m) s(w z_q)] + c2 E[s'(w z_m) s'(w z_q)] z_m z_q ).
inline Mat scalar_kernel_quadrature(const std::vector<double>& z, double alpha, double c2,
                                    const std::function<double(double)>& s,
                                    const std::function<double(double)>& ds, std::size_t nodes = 2001,
                                    double L = 10.0) {
    const std::size_t M = z.size();
    Mat A(M, Vec(M, 0.0));
    const double h = 2.0 * L / static_cast<double>(nodes - 1);
    const double norm = 1.0 / std::sqrt(2.0 * M_PI);
    for (std::size_t n = 0; n < nodes; ++n) {
        const double w = -L + h * static_cast<double>(n);
        const double weight = h * norm * std::exp(-0.5 * w * w) * ((n == 0 || n + 1 == nodes) ? 0.5 : 1.0);
        for (std::size_t m = 0; m < M; ++m)
            for (std::size_t q = 0; q < M; ++q)
                A[m][q] += weight * (s(w * z[m]) * s(w * z[q]) + c2 * ds(w * z[m]) * ds(w * z[q]) * z[m] * z[q]);
    }
    for (auto& row : A)
        for (auto& v : row) v *= alpha;
    return A;
}

/// Asymptotic variance of the occupancy fraction of state x along a chain
/// started in stationarity: pi(1 - pi) + 2 sum_k (P^k(x, x) - pi) pi.
inline double occupancy_variance(const Mat& P, const Vec& pi, std::size_t x, std::size_t lags = 400) {
    double var = pi[x] * (1.0 - pi[x]);
    Vec row(P.size(), 0.0);
    row[x] = 1.0;
    for (std::size_t k = 1; k <= lags; ++k) {
        Vec next(P.size(), 0.0);
        for (std::size_t a = 0; a < P.size(); ++a)
            for (std::size_t b = 0; b < P.size(); ++b) next[b] += row[a] * P[a][b];
        row = next;
        var += 2.0 * pi[x] * (row[x] - pi[x]);
    }
    return var;
}

} // namespace oracle
