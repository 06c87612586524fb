#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "mfq/mdp.hpp"

namespace fixtures {

#ifndef MFQ_DATA_DIR
#define MFQ_DATA_DIR "data"
#endif
#ifndef MFQ_CONFIG_DIR
#define MFQ_CONFIG_DIR "configs"
#endif

inline std::filesystem::path data_dir() { return MFQ_DATA_DIR; }
inline std::filesystem::path config_dir() { return MFQ_CONFIG_DIR; }

inline std::filesystem::path scratch_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("mfq_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline std::vector<std::vector<double>> one_hot(std::size_t n) {
    std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;
    return v;
}

/// Dense random kernel (every entry positive) with one-hot embeddings.
inline std::vector<std::vector<std::vector<double>>> random_kernel(std::size_t S, std::size_t K, std::mt19937_64& g,
                                                                   double zero_prob = 0.0) {
    std::uniform_real_distribution<double> u(0.05, 1.0);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::vector<std::vector<std::vector<double>>> t(S, std::vector<std::vector<double>>(K, std::vector<double>(S)));
    for (auto& xa : t) {
        for (auto& row : xa) {
            double sum = 0.0;
            for (auto& p : row) {
                p = coin(g) < zero_prob ? 0.0 : u(g);
                sum += p;
            }
            if (sum == 0.0) {
                row[std::uniform_int_distribution<std::size_t>(0, S - 1)(g)] = 1.0;
                sum = 1.0;
            }
            for (auto& p : row) p /= sum;
        }
    }
    return t;
}

inline mfq::MdpSpec random_spec(std::size_t S, std::size_t K, std::uint64_t seed, double gamma,
                                double zero_prob = 0.0) {
    std::mt19937_64 g(seed);
    std::uniform_real_distribution<double> r(-1.0, 1.0);
    mfq::MdpSpec s;
    s.states = one_hot(S);
    s.actions = one_hot(K);
    s.transition = random_kernel(S, K, g, zero_prob);
    s.reward.assign(S, std::vector<double>(K));
    for (auto& row : s.reward)
        for (auto& v : row) v = r(g);
    s.gamma = gamma;
    return s;
}

inline mfq::MdpSpec random_finite_spec(std::size_t S, std::size_t K, std::size_t J, std::uint64_t seed,
                                       double gamma) {
    std::mt19937_64 g(seed);
    std::uniform_real_distribution<double> r(-1.0, 1.0);
    std::uniform_real_distribution<double> u(0.1, 1.0);
    mfq::MdpSpec s;
    s.states = one_hot(S);
    s.actions = one_hot(K);
    s.transition = random_kernel(S, K, g);
    s.reward_by_time.assign(J, std::vector<std::vector<double>>(S, std::vector<double>(K)));
    for (auto& slice : s.reward_by_time)
        for (auto& row : slice)
            for (auto& v : row) v = r(g);
    s.terminal.resize(S);
    for (auto& v : s.terminal) v = r(g);
    s.initial_dist.resize(S);
    double sum = 0.0;
    for (auto& v : s.initial_dist) sum += (v = u(g));
    for (auto& v : s.initial_dist) v /= sum;
    s.gamma = gamma;
    s.horizon = J;
    return s;
}

/// One state, one action, deterministic self-loop.
inline mfq::MdpSpec single_state(double reward, double gamma, std::vector<double> state = {1.0},
                                 std::vector<double> action = {1.0}) {
    mfq::MdpSpec s;
    s.states = {std::move(state)};
    s.actions = {std::move(action)};
    s.transition = {{{1.0}}};
    s.reward = {{reward}};
    s.gamma = gamma;
    return s;
}

} // namespace fixtures
