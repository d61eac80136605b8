#pragma once

// Exhaustive-enumeration references for chain inference. Every quantity is
// computed by visiting all K^n label sequences, with no dynamic programming,
// so it shares nothing with crf_inference.hpp beyond the PotentialTable type.

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "crfasn/crf_inference.hpp"

namespace crfasn::oracle {

/// Calls fn(labels) for every sequence in lexicographic order.
template <typename Fn>
void for_each_sequence(Eigen::Index n, Eigen::Index K, Fn&& fn) {
    double total = std::pow(static_cast<double>(K), static_cast<double>(n));
    if (total > 5e7) throw std::invalid_argument("enumeration too large");
    std::vector<int> y(static_cast<std::size_t>(n), 0);
    while (true) {
        fn(static_cast<const std::vector<int>&>(y));
        Eigen::Index t = n - 1;
        while (t >= 0 && y[static_cast<std::size_t>(t)] == K - 1) y[static_cast<std::size_t>(t--)] = 0;
        if (t < 0) break;
        ++y[static_cast<std::size_t>(t)];
    }
}

template <typename Scalar>
Scalar brute_score(const crf::PotentialTable<Scalar>& pot, const std::vector<int>& y) {
    // Summed in path order: start, then (transition, unary) per step, then stop.
    Scalar s = 0;
    if (pot.start) s += (*pot.start)(y.front());
    for (std::size_t t = 0; t < y.size(); ++t) {
        if (t > 0) s += pot.transition(y[t - 1], y[t]);
        s += pot.unary(static_cast<Eigen::Index>(t), y[t]);
    }
    if (pot.stop) s += (*pot.stop)(y.back());
    return s;
}

template <typename Scalar>
Scalar brute_log_partition(const crf::PotentialTable<Scalar>& pot) {
    // Shift by the max score so the plain sum of exponentials cannot overflow.
    Scalar top = -std::numeric_limits<Scalar>::infinity();
    for_each_sequence(pot.length(), pot.num_labels(),
                      [&](const std::vector<int>& y) { top = std::max(top, brute_score(pot, y)); });
    Scalar z = 0;
    for_each_sequence(pot.length(), pot.num_labels(),
                      [&](const std::vector<int>& y) { z += std::exp(brute_score(pot, y) - top); });
    return top + std::log(z);
}

template <typename Scalar>
crf::MarginalSet<Scalar> brute_marginals(const crf::PotentialTable<Scalar>& pot) {
    const auto n = pot.length(), K = pot.num_labels();
    crf::MarginalSet<Scalar> out;
    out.log_z = brute_log_partition(pot);
    out.node = crf::MatrixX<Scalar>::Zero(n, K);
    out.edge.assign(static_cast<std::size_t>(std::max<Eigen::Index>(n - 1, 0)), crf::MatrixX<Scalar>::Zero(K, K));
    for_each_sequence(n, K, [&](const std::vector<int>& y) {
        const Scalar p = std::exp(brute_score(pot, y) - out.log_z);
        for (std::size_t t = 0; t < y.size(); ++t) {
            out.node(static_cast<Eigen::Index>(t), y[t]) += p;
            if (t + 1 < y.size()) out.edge[t](y[t], y[t + 1]) += p;
        }
    });
    return out;
}

/// Highest-scoring sequence; the first one found in lexicographic order wins ties.
template <typename Scalar>
crf::ViterbiPath<Scalar> brute_argmax(const crf::PotentialTable<Scalar>& pot) {
    crf::ViterbiPath<Scalar> best{{}, -std::numeric_limits<Scalar>::infinity()};
    for_each_sequence(pot.length(), pot.num_labels(), [&](const std::vector<int>& y) {
        const Scalar s = brute_score(pot, y);
        if (s > best.score) best = {y, s};
    });
    return best;
}

/// Random instance with entries uniform in [-scale, scale].
inline crf::PotentialTable<double> random_table(Eigen::Index n, Eigen::Index K, std::mt19937_64& rng,
                                                double scale = 2.0) {
    std::uniform_real_distribution<double> u(-scale, scale);
    crf::PotentialTable<double> pot;
    pot.unary.resize(n, K);
    pot.transition.resize(K, K);
    for (Eigen::Index i = 0; i < pot.unary.size(); ++i) pot.unary.data()[i] = u(rng);
    for (Eigen::Index i = 0; i < pot.transition.size(); ++i) pot.transition.data()[i] = u(rng);
    return pot;
}

struct SuiteResult {
    int trials = 0;
    int passed = 0;
    double max_log_z_error = 0;
    double max_node_error = 0;
    double max_edge_error = 0;
    int viterbi_mismatches = 0;
};

/// Compares log_partition, forward_backward and viterbi_decode against
/// enumeration on `trials` random chains with n <= max_n and K <= max_labels.
SuiteResult run_chain_suite(int trials, int max_n, int max_labels, std::uint64_t seed, double tol = 1e-9);

/// Compares binary selection-chain marginals against enumeration.
SuiteResult run_selection_suite(int trials, int max_n, std::uint64_t seed, double tol = 1e-9);

}  // namespace crfasn::oracle
