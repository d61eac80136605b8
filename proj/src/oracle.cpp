#include "crfasn/oracle.hpp"

#include <algorithm>

#include "crfasn/crf_layer.hpp"

namespace crfasn::oracle {

SuiteResult run_chain_suite(int trials, int max_n, int max_labels, std::uint64_t seed, double tol) {
    if (max_n < 1 || max_labels < 1) throw std::invalid_argument("max_n and max_labels must be positive");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> len(1, max_n), labels(1, max_labels);
    SuiteResult res;
    for (int i = 0; i < trials; ++i) {
        auto pot = random_table(len(rng), labels(rng), rng);
        const auto fb = crf::forward_backward(pot);
        const auto ref = brute_marginals(pot);
        const double lz = std::max(std::abs(crf::log_partition(pot) - ref.log_z), std::abs(fb.log_z - ref.log_z));
        const double node = (fb.node - ref.node).cwiseAbs().maxCoeff();
        double edge = 0;
        for (std::size_t t = 0; t < ref.edge.size(); ++t)
            edge = std::max(edge, (fb.edge[t] - ref.edge[t]).cwiseAbs().maxCoeff());
        const auto vit = crf::viterbi_decode(pot);
        const auto best = brute_argmax(pot);
        const bool vit_ok = vit.labels == best.labels && vit.score == best.score;

        res.max_log_z_error = std::max(res.max_log_z_error, lz);
        res.max_node_error = std::max(res.max_node_error, node);
        res.max_edge_error = std::max(res.max_edge_error, edge);
        if (!vit_ok) ++res.viterbi_mismatches;
        ++res.trials;
        if (lz <= tol && node <= tol && edge <= tol && vit_ok) ++res.passed;
    }
    return res;
}

SuiteResult run_selection_suite(int trials, int max_n, std::uint64_t seed, double tol) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> len(1, max_n);
    SuiteResult res;
    for (int i = 0; i < trials; ++i) {
        auto pot = random_table(len(rng), 2, rng);
        pot.unary.col(0).setZero();
        const Matrix marg =
            chain_marginals(ad::Tensor::constant(pot.unary), ad::Tensor::constant(pot.transition)).value();
        const Eigen::VectorXd gamma = marg.col(1);
        const auto ref = brute_marginals(pot);
        const double err = (gamma - ref.node.col(1)).cwiseAbs().maxCoeff();
        res.max_node_error = std::max(res.max_node_error, err);
        ++res.trials;
        if (err <= tol) ++res.passed;
    }
    return res;
}

}  // namespace crfasn::oracle
