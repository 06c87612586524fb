#pragma once

// The limit kernel
//   A(z, z') = alpha E[ sigma(w.z) sigma(w.z') + c^2 sigma'(w.z) sigma'(w.z') z.z' ]
// over (c, w) ~ mu_0, estimated by Monte Carlo or by deterministic quadrature,
// and its positive-definiteness check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "mfq/error.hpp"
#include "mfq/mdp.hpp"
#include "mfq/qnet.hpp"
#include "mfq/rng.hpp"
#include "mfq/trainer.hpp"

namespace mfq {

enum class KernelMethod { MonteCarlo, Quadrature, Identity };

inline std::string_view to_string(KernelMethod m) {
    switch (m) {
    case KernelMethod::MonteCarlo: return "montecarlo";
    case KernelMethod::Quadrature: return "quadrature";
    case KernelMethod::Identity: return "identity";
    }
    return "montecarlo";
}

inline KernelMethod parse_kernel_method(std::string_view s) {
    if (s == "montecarlo") return KernelMethod::MonteCarlo;
    if (s == "quadrature") return KernelMethod::Quadrature;
    if (s == "identity") return KernelMethod::Identity;
    fail(ErrorCode::InvalidInput, "unknown kernel method '" + std::string(s) + "'");
}

struct KernelTensor {
    double alpha = 1.0;
    Eigen::MatrixXd entries;
    /// E[sigma(w.z) sigma(w.z')] without alpha or normalization; times E[c^2]
    /// it is the covariance of the width-limit initial output.
    Eigen::MatrixXd feature_cov;
    /// Per-entry Monte Carlo standard error (empty for other methods).
    Eigen::MatrixXd std_error;
    KernelMethod method = KernelMethod::MonteCarlo;
    std::size_t samples = 0;
    std::uint64_t seed = 0;
    bool per_sample_normalized = false; // regression kernels carry a 1/M factor
    std::optional<double> eig_min;
    std::optional<double> eig_max;

    Eigen::Index size() const noexcept { return entries.rows(); }
};

struct KernelOptions {
    std::size_t samples = 1000000;
    std::uint64_t seed = 0;
    std::size_t chunk = 1 << 16;
    std::size_t workers = 1;
    bool divide_by_count = false; // regression: A = (alpha / M) <...>
};

/// Embeddings as rows.
inline Eigen::MatrixXd embedding_matrix(const ValidatedMdp& mdp) {
    Eigen::MatrixXd Z(static_cast<Eigen::Index>(mdp.n_pairs()), static_cast<Eigen::Index>(mdp.dim()));
    for (std::size_t i = 0; i < mdp.n_pairs(); ++i) {
        const auto z = mdp.zeta(i);
        for (std::size_t k = 0; k < mdp.dim(); ++k) Z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = z[k];
    }
    return Z;
}

inline Eigen::MatrixXd embedding_matrix(const RegressionDataset& data) {
    const auto M = static_cast<Eigen::Index>(data.xs.size());
    const auto d = static_cast<Eigen::Index>(data.xs.empty() ? 0 : data.xs[0].size());
    Eigen::MatrixXd Z(M, d);
    for (Eigen::Index i = 0; i < M; ++i) {
        for (Eigen::Index k = 0; k < d; ++k) Z(i, k) = data.xs[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
    }
    return Z;
}

namespace detail {

struct ChunkSums {
    Eigen::MatrixXd feature;  // sum sigma sigma^T
    Eigen::MatrixXd tangent;  // sum c^2 sigma' sigma'^T
    Eigen::MatrixXd integrand_sq; // sum F^2 with F the full integrand
};

inline ChunkSums mc_chunk(const InitLaw& law, Activation act, const Eigen::MatrixXd& Z, const Eigen::MatrixXd& gram,
                          std::uint64_t seed, std::size_t count) {
    const Eigen::Index M = Z.rows();
    const Eigen::Index d = Z.cols();
    ChunkSums s{Eigen::MatrixXd::Zero(M, M), Eigen::MatrixXd::Zero(M, M), Eigen::MatrixXd::Zero(M, M)};
    Rng rng = make_rng(seed);
    Eigen::VectorXd w(d), sig(M), dsig(M);
    for (std::size_t n = 0; n < count; ++n) {
        const double c = draw_c(law.c, rng);
        for (Eigen::Index k = 0; k < d; ++k) w(k) = draw_w(law.w, rng);
        const double c2 = c * c;
        for (Eigen::Index m = 0; m < M; ++m) {
            const auto a = activation(act, Z.row(m).dot(w));
            sig(m) = a.value;
            dsig(m) = a.d1;
        }
        for (Eigen::Index q = 0; q < M; ++q) {
            for (Eigen::Index m = 0; m <= q; ++m) {
                const double f1 = sig(m) * sig(q);
                const double f2 = c2 * dsig(m) * dsig(q);
                s.feature(m, q) += f1;
                s.tangent(m, q) += f2;
                const double f = f1 + f2 * gram(m, q);
                s.integrand_sq(m, q) += f * f;
            }
        }
    }
    return s;
}

inline Eigen::MatrixXd mirror_upper(Eigen::MatrixXd m) {
    for (Eigen::Index q = 0; q < m.cols(); ++q) {
        for (Eigen::Index r = q + 1; r < m.rows(); ++r) m(r, q) = m(q, r);
    }
    return m;
}

} // namespace detail

/// Monte Carlo estimate over i.i.d. (c, w) ~ mu_0. Samples are split into
/// fixed-size chunks with seeds derived from (seed, chunk index) and reduced
/// in chunk order, so the result does not depend on `workers`.
inline KernelTensor estimate_A(const InitLaw& law, Activation act, const Eigen::MatrixXd& Z, double alpha,
                               const KernelOptions& opt) {
    check_law(law);
    if (opt.samples < 1) fail(ErrorCode::InvalidInput, "samples must be >= 1");
    if (opt.chunk < 1) fail(ErrorCode::InvalidInput, "chunk must be >= 1");
    const Eigen::Index M = Z.rows();
    const Eigen::MatrixXd gram = Z * Z.transpose();
    const std::size_t n_chunks = (opt.samples + opt.chunk - 1) / opt.chunk;
    std::vector<detail::ChunkSums> partial(n_chunks);

    auto run_chunk = [&](std::size_t ci) {
        const std::size_t begin = ci * opt.chunk;
        const std::size_t count = std::min(opt.chunk, opt.samples - begin);
        partial[ci] = detail::mc_chunk(law, act, Z, gram, derive_seed(opt.seed, ci), count);
    };
    const std::size_t workers = std::max<std::size_t>(1, std::min(opt.workers, n_chunks));
    if (workers == 1) {
        for (std::size_t ci = 0; ci < n_chunks; ++ci) run_chunk(ci);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < workers; ++t) {
            pool.emplace_back([&, t] {
                for (std::size_t ci = t; ci < n_chunks; ci += workers) run_chunk(ci);
            });
        }
        for (auto& th : pool) th.join();
    }

    Eigen::MatrixXd feature = Eigen::MatrixXd::Zero(M, M);
    Eigen::MatrixXd tangent = Eigen::MatrixXd::Zero(M, M);
    Eigen::MatrixXd sq = Eigen::MatrixXd::Zero(M, M);
    for (const auto& p : partial) {
        feature += p.feature;
        tangent += p.tangent;
        sq += p.integrand_sq;
    }
    const double n = static_cast<double>(opt.samples);
    feature = detail::mirror_upper(feature / n);
    tangent = detail::mirror_upper(tangent / n);
    sq = detail::mirror_upper(sq / n);

    const double norm = opt.divide_by_count ? alpha / static_cast<double>(M) : alpha;
    KernelTensor k;
    k.alpha = alpha;
    k.method = KernelMethod::MonteCarlo;
    k.samples = opt.samples;
    k.seed = opt.seed;
    k.per_sample_normalized = opt.divide_by_count;
    k.feature_cov = feature;
    const Eigen::MatrixXd mean = feature + tangent.cwiseProduct(gram);
    k.entries = norm * mean;
    const Eigen::MatrixXd var = (sq - mean.cwiseProduct(mean)).cwiseMax(0.0);
    k.std_error = norm * (var / std::max(1.0, n - 1.0)).cwiseSqrt();
    return k;
}

namespace detail {

// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration on P_n.
inline std::pair<std::vector<double>, std::vector<double>> gauss_legendre(std::size_t n) {
    std::vector<double> x(n), w(n);
    constexpr double pi = 3.141592653589793238462643383279502884;
    for (std::size_t i = 0; i < (n + 1) / 2; ++i) {
        double z = std::cos(pi * (static_cast<double>(i) + 0.75) / (static_cast<double>(n) + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p1 = 1.0, p2 = 0.0;
            for (std::size_t j = 1; j <= n; ++j) {
                const double p3 = p2;
                p2 = p1;
                p1 = ((2.0 * static_cast<double>(j) - 1.0) * z * p2 - (static_cast<double>(j) - 1.0) * p3) /
                     static_cast<double>(j);
            }
            dp = static_cast<double>(n) * (z * p1 - p2) / (z * z - 1.0);
            const double step = p1 / dp;
            z -= step;
            if (std::abs(step) < 1e-16) break;
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = w[n - 1 - i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    return {x, w};
}

// Trapezoid nodes for a standard normal weight on [-L, L]; spectrally
// accurate for integrands analytic in a strip.
inline std::pair<std::vector<double>, std::vector<double>> normal_trapezoid(std::size_t n, double L) {
    std::vector<double> x(n), w(n);
    const double h = 2.0 * L / static_cast<double>(n - 1);
    constexpr double inv_sqrt_2pi = 0.398942280401432677939946059934;
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = -L + h * static_cast<double>(i);
        const double end = (i == 0 || i + 1 == n) ? 0.5 : 1.0;
        w[i] = end * h * inv_sqrt_2pi * std::exp(-0.5 * x[i] * x[i]);
    }
    return {x, w};
}

} // namespace detail

struct QuadratureOptions {
    std::size_t normal_nodes = 401; // per axis, trapezoid on [-span, span]
    double normal_span = 9.0;
    std::size_t legendre_nodes = 96; // per axis, uniform w laws
    bool divide_by_count = false;
};

/// Deterministic quadrature. Standard normal w: each entry only depends on
/// the Gaussian pair (w.z, w.z'), so a 2-d product rule works in any input
/// dimension. Uniform w: tensor Gauss-Legendre, input dimension <= 2.
inline KernelTensor quadrature_A(const InitLaw& law, Activation act, const Eigen::MatrixXd& Z, double alpha,
                                 const QuadratureOptions& opt = {}) {
    check_law(law);
    const Eigen::Index M = Z.rows();
    const Eigen::Index d = Z.cols();
    const Eigen::MatrixXd gram = Z * Z.transpose();
    Eigen::MatrixXd feature = Eigen::MatrixXd::Zero(M, M);
    Eigen::MatrixXd slope = Eigen::MatrixXd::Zero(M, M); // E[sigma' sigma']

    if (law.w.kind == WLaw::Kind::Normal) {
        const auto [nodes, weights] = detail::normal_trapezoid(opt.normal_nodes, opt.normal_span);
        const std::size_t n = nodes.size();
        for (Eigen::Index m = 0; m < M; ++m) {
            const double a = std::sqrt(gram(m, m));
            for (Eigen::Index q = m; q < M; ++q) {
                const double b = std::sqrt(gram(q, q));
                double rho = (a > 0.0 && b > 0.0) ? gram(m, q) / (a * b) : 0.0;
                rho = std::clamp(rho, -1.0, 1.0);
                const double perp = std::sqrt(std::max(0.0, 1.0 - rho * rho));
                double f = 0.0, g = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const auto su = activation(act, a * nodes[i]);
                    for (std::size_t j = 0; j < n; ++j) {
                        const double wt = weights[i] * weights[j];
                        const auto sv = activation(act, b * (rho * nodes[i] + perp * nodes[j]));
                        f += wt * su.value * sv.value;
                        g += wt * su.d1 * sv.d1;
                    }
                }
                feature(m, q) = f;
                slope(m, q) = g;
            }
        }
    } else {
        if (d > 2) {
            fail(ErrorCode::UnsupportedLaw, "uniform-w quadrature supports input dimension <= 2");
        }
        const auto [gx, gw] = detail::gauss_legendre(opt.legendre_nodes);
        const double B = law.w.bound;
        std::vector<double> pts, wts;
        const std::size_t n = gx.size();
        std::vector<std::size_t> idx(static_cast<std::size_t>(d), 0);
        const std::size_t total = d == 0 ? 1 : (d == 1 ? n : n * n);
        Eigen::VectorXd w(d), sig(M), dsig(M);
        for (std::size_t t = 0; t < total; ++t) {
            double wt = 1.0;
            std::size_t rem = t;
            for (Eigen::Index k = 0; k < d; ++k) {
                const std::size_t ik = rem % n;
                rem /= n;
                w(k) = B * gx[ik];
                wt *= 0.5 * gw[ik]; // density 1/(2B) times Jacobian B
            }
            for (Eigen::Index m = 0; m < M; ++m) {
                const auto a = activation(act, Z.row(m).dot(w));
                sig(m) = a.value;
                dsig(m) = a.d1;
            }
            for (Eigen::Index q = 0; q < M; ++q) {
                for (Eigen::Index m = 0; m <= q; ++m) {
                    feature(m, q) += wt * sig(m) * sig(q);
                    slope(m, q) += wt * dsig(m) * dsig(q);
                }
            }
        }
    }
    feature = detail::mirror_upper(feature);
    slope = detail::mirror_upper(slope);

    const double norm = opt.divide_by_count ? alpha / static_cast<double>(M) : alpha;
    KernelTensor k;
    k.alpha = alpha;
    k.method = KernelMethod::Quadrature;
    k.per_sample_normalized = opt.divide_by_count;
    k.feature_cov = feature;
    k.entries = norm * (feature + law.c.second_moment() * slope.cwiseProduct(gram));
    return k;
}

struct PdReport {
    double eig_min = 0.0;
    double eig_max = 0.0;
    bool is_pd = false;
};

inline constexpr double kSymmetryTol = 1e-12;

/// Extreme eigenvalues by symmetric eigendecomposition;
/// is_pd <=> eig_min > 1e-10 eig_max.
inline PdReport pd_check(const Eigen::MatrixXd& A) {
    if (A.rows() != A.cols() || A.rows() == 0) {
        fail(ErrorCode::DimensionMismatch, "kernel must be a nonempty square matrix");
    }
    const double scale = std::max(1.0, A.cwiseAbs().maxCoeff());
    if ((A - A.transpose()).cwiseAbs().maxCoeff() > kSymmetryTol * scale) {
        fail(ErrorCode::AsymmetricInput, "kernel entries are not symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A, Eigen::EigenvaluesOnly);
    PdReport r;
    r.eig_min = es.eigenvalues().minCoeff();
    r.eig_max = es.eigenvalues().maxCoeff();
    r.is_pd = r.eig_min > 1e-10 * r.eig_max;
    return r;
}

inline PdReport pd_check(KernelTensor& A) {
    const PdReport r = pd_check(A.entries);
    A.eig_min = r.eig_min;
    A.eig_max = r.eig_max;
    return r;
}

} // namespace mfq
