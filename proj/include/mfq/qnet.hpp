#pragma once

// Single-hidden-layer network with 1/sqrt(N) output scaling:
//   Q(zeta) = N^{-1/2} sum_i c_i sigma(w_i . zeta)
// plus its initialization law, activations and empirical-measure moments.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mfq/error.hpp"
#include "mfq/rng.hpp"

namespace mfq {

enum class Activation { Tanh, Sigmoid };

inline std::string_view to_string(Activation a) {
    return a == Activation::Tanh ? "tanh" : "sigmoid";
}

inline Activation parse_activation(std::string_view name) {
    if (name == "tanh") return Activation::Tanh;
    if (name == "sigmoid") return Activation::Sigmoid;
    fail(ErrorCode::UnsupportedActivation, std::string(name));
}

struct ActivationValue {
    double value;
    double d1;
    double d2;
};

/// sigma, sigma' and sigma'' from exp and expm1 of the same argument, in terms of
/// exp(-2|z|) (tanh) or exp(-|z|) (sigmoid) so derivatives keep full relative
/// accuracy in the tails.
inline ActivationValue activation(Activation act, double z) noexcept {
    const double a = std::abs(z);
    if (act == Activation::Tanh) {
        const double e = std::exp(-2.0 * a);
        const double em = std::expm1(-2.0 * a); // e - 1 without cancellation
        const double denom = 1.0 + e;
        const double t = -em / denom;
        const double sech2 = 4.0 * e / (denom * denom);
        const double value = z < 0 ? -t : t;
        return {value, sech2, -2.0 * value * sech2};
    }
    const double e = std::exp(-a);
    const double em = std::expm1(-a); // e - 1 without cancellation
    const double denom = 1.0 + e;
    const double d1 = e / (denom * denom);
    const double curvature = d1 * em / denom; // sigma''(|z|)
    if (z >= 0) {
        return {1.0 / denom, d1, curvature};
    }
    return {e / denom, d1, -curvature};
}

inline ActivationValue activation(std::string_view name, double z) {
    return activation(parse_activation(name), z);
}

/// Bounded mean-zero law for the output weights c.
struct CLaw {
    enum class Kind { Uniform, TwoPoint };
    Kind kind = Kind::Uniform;
    double bound = 1.0;

    double second_moment() const noexcept {
        return kind == Kind::Uniform ? bound * bound / 3.0 : bound * bound;
    }
    bool operator==(const CLaw&) const = default;
};

/// Law of each coordinate of the hidden weights w.
struct WLaw {
    enum class Kind { Normal, Uniform };
    Kind kind = Kind::Normal;
    double bound = 1.0; // uniform half-width; ignored for Normal
    bool operator==(const WLaw&) const = default;
};

/// mu_0 = (c law) x (w law), independent across units and slices. The
/// two-point c law has atoms, so it is for unit tests only.
struct InitLaw {
    CLaw c;
    WLaw w;
    bool operator==(const InitLaw&) const = default;
};

inline std::string_view to_string(CLaw::Kind k) { return k == CLaw::Kind::Uniform ? "uniform" : "two_point"; }
inline std::string_view to_string(WLaw::Kind k) { return k == WLaw::Kind::Normal ? "normal" : "uniform"; }

inline CLaw::Kind parse_c_kind(std::string_view s) {
    if (s == "uniform") return CLaw::Kind::Uniform;
    if (s == "two_point") return CLaw::Kind::TwoPoint;
    fail(ErrorCode::UnsupportedLaw, "c law '" + std::string(s) + "'");
}

inline WLaw::Kind parse_w_kind(std::string_view s) {
    if (s == "normal") return WLaw::Kind::Normal;
    if (s == "uniform") return WLaw::Kind::Uniform;
    fail(ErrorCode::UnsupportedLaw, "w law '" + std::string(s) + "'");
}

inline void check_law(const InitLaw& law) {
    if (!(law.c.bound > 0.0) || !std::isfinite(law.c.bound)) {
        fail(ErrorCode::UnsupportedLaw, "c bound must be positive and finite");
    }
    if (law.w.kind == WLaw::Kind::Uniform && (!(law.w.bound > 0.0) || !std::isfinite(law.w.bound))) {
        fail(ErrorCode::UnsupportedLaw, "w bound must be positive and finite");
    }
}

inline double draw_c(const CLaw& law, Rng& rng) {
    const double u = uniform01(rng);
    if (law.kind == CLaw::Kind::TwoPoint) {
        return u < 0.5 ? -law.bound : law.bound;
    }
    return law.bound * (2.0 * u - 1.0);
}

inline double draw_w(const WLaw& law, Rng& rng) {
    if (law.kind == WLaw::Kind::Normal) {
        return standard_normal(rng);
    }
    return law.bound * (2.0 * uniform01(rng) - 1.0);
}

/// The particle system {c_i (or c_{i,j}), w_i}. `slices` is 1 for the
/// infinite-horizon and regression networks and J for the finite-horizon
/// network, whose slices share the hidden weights.
struct NetworkParams {
    std::size_t n_units = 0;
    std::size_t dim = 0;
    std::size_t slices = 1;
    Activation act = Activation::Tanh;
    std::vector<double> c; // [i * slices + j]
    std::vector<double> w; // [i * dim + k]

    double scale() const noexcept { return 1.0 / std::sqrt(static_cast<double>(n_units)); }
    std::span<const double> w_of(std::size_t i) const noexcept { return {w.data() + i * dim, dim}; }
    std::span<double> w_of(std::size_t i) noexcept { return {w.data() + i * dim, dim}; }
    double c_of(std::size_t i, std::size_t j = 0) const noexcept { return c[i * slices + j]; }

    bool operator==(const NetworkParams&) const = default;
};

/// Unit i draws from its own stream derived from (seed, i), so the first N
/// units are the same for every width >= N.
inline NetworkParams init_params(const InitLaw& law, std::size_t n_units, std::size_t dim, std::uint64_t seed,
                                 Activation act = Activation::Tanh, std::size_t slices = 1) {
    if (n_units < 1) {
        fail(ErrorCode::InvalidInput, "n_units must be >= 1");
    }
    if (slices < 1) {
        fail(ErrorCode::InvalidInput, "slices must be >= 1");
    }
    check_law(law);
    NetworkParams p;
    p.n_units = n_units;
    p.dim = dim;
    p.slices = slices;
    p.act = act;
    p.c.resize(n_units * slices);
    p.w.resize(n_units * dim);
    for (std::size_t i = 0; i < n_units; ++i) {
        Rng rng = make_rng(derive_seed(seed, i));
        for (std::size_t j = 0; j < slices; ++j) p.c[i * slices + j] = draw_c(law.c, rng);
        for (std::size_t k = 0; k < dim; ++k) p.w[i * dim + k] = draw_w(law.w, rng);
    }
    return p;
}

inline double dot(std::span<const double> a, std::span<const double> b) noexcept {
    double acc = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) acc += a[k] * b[k];
    return acc;
}

inline double forward(const NetworkParams& p, std::size_t slice, std::span<const double> zeta) {
    require_dims(zeta.size(), p.dim, "input dimension");
    if (slice >= p.slices) {
        fail(ErrorCode::DimensionMismatch, "slice index out of range");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < p.n_units; ++i) {
        acc += p.c[i * p.slices + slice] * activation(p.act, dot(p.w_of(i), zeta)).value;
    }
    return acc * p.scale();
}

inline double forward(const NetworkParams& p, std::span<const double> zeta) {
    return forward(p, 0, zeta);
}

/// dQ/dc_i and dQ/dw_i for one slice; dw is stored [i * dim + k].
struct ParamGradient {
    std::vector<double> dc;
    std::vector<double> dw;
};

inline ParamGradient param_gradient(const NetworkParams& p, std::size_t slice, std::span<const double> zeta) {
    require_dims(zeta.size(), p.dim, "input dimension");
    if (slice >= p.slices) {
        fail(ErrorCode::DimensionMismatch, "slice index out of range");
    }
    ParamGradient g{std::vector<double>(p.n_units), std::vector<double>(p.n_units * p.dim)};
    const double s = p.scale();
    for (std::size_t i = 0; i < p.n_units; ++i) {
        const auto act = activation(p.act, dot(p.w_of(i), zeta));
        g.dc[i] = act.value * s;
        const double factor = p.c[i * p.slices + slice] * act.d1 * s;
        for (std::size_t k = 0; k < p.dim; ++k) g.dw[i * p.dim + k] = factor * zeta[k];
    }
    return g;
}

inline ParamGradient param_gradient(const NetworkParams& p, std::span<const double> zeta) {
    return param_gradient(p, 0, zeta);
}

/// <f, nu> for f in {1, c, c^2, w_1, |w|^2, c w_1}. With several slices the
/// c-moments average the per-slice measures.
struct MeasureMoments {
    double one = 1.0;
    double c = 0.0;
    double c2 = 0.0;
    double w1 = 0.0;
    double w_norm2 = 0.0;
    double c_w1 = 0.0;

    static constexpr std::array<std::string_view, 6> names{"one", "c", "c2", "w1", "w_norm2", "c_w1"};
    std::array<double, 6> as_array() const { return {one, c, c2, w1, w_norm2, c_w1}; }
    static MeasureMoments from_array(const std::array<double, 6>& v) {
        return {v[0], v[1], v[2], v[3], v[4], v[5]};
    }
    bool operator==(const MeasureMoments&) const = default;
};

inline MeasureMoments measure_moments(const NetworkParams& p) {
    MeasureMoments m;
    if (p.n_units == 0) return m;
    const double n = static_cast<double>(p.n_units);
    const double per_slice = 1.0 / static_cast<double>(p.slices);
    for (std::size_t i = 0; i < p.n_units; ++i) {
        const auto wi = p.w_of(i);
        const double w1 = p.dim > 0 ? wi[0] : 0.0;
        m.w1 += w1;
        m.w_norm2 += dot(wi, wi);
        for (std::size_t j = 0; j < p.slices; ++j) {
            const double ci = p.c[i * p.slices + j];
            m.c += ci * per_slice;
            m.c2 += ci * ci * per_slice;
            m.c_w1 += ci * w1 * per_slice;
        }
    }
    m.c /= n;
    m.c2 /= n;
    m.w1 /= n;
    m.w_norm2 /= n;
    m.c_w1 /= n;
    return m;
}

} // namespace mfq
