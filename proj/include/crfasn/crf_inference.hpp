#pragma once

// Exact inference for linear-chain CRFs.
//
// A chain over n positions and K labels scores a label sequence y as
//
//   score(y) = sum_t unary(t, y_t) + sum_{t>0} transition(y_{t-1}, y_t)
//              [+ start(y_0) + stop(y_{n-1})]
//
// and defines p(y) = exp(score(y) - logZ). All recursions run in log space.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crfasn/errors.hpp"

namespace crfasn::crf {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

template <typename Scalar = double>
struct PotentialTable {
    MatrixX<Scalar> unary;       // n x K
    MatrixX<Scalar> transition;  // K x K, row = previous label
    std::optional<RowVectorX<Scalar>> start;
    std::optional<RowVectorX<Scalar>> stop;

    Eigen::Index length() const { return unary.rows(); }
    Eigen::Index num_labels() const { return unary.cols(); }

    void validate() const {
        if (unary.rows() < 1 || unary.cols() < 1)
            throw ValidationError("potential table needs at least one position and one label");
        if (transition.rows() != unary.cols() || transition.cols() != unary.cols())
            throw ValidationError("transition table must be K x K with K = " + std::to_string(unary.cols()));
        if (start && start->size() != unary.cols()) throw ValidationError("start vector must have K entries");
        if (stop && stop->size() != unary.cols()) throw ValidationError("stop vector must have K entries");
        if (!unary.allFinite() || !transition.allFinite() || (start && !start->allFinite()) ||
            (stop && !stop->allFinite()))
            throw ValidationError("potentials must be finite");
    }

    /// Unary table with the optional boundary scores folded in.
    MatrixX<Scalar> effective_unary() const {
        MatrixX<Scalar> u = unary;
        if (start) u.row(0) += *start;
        if (stop) u.row(u.rows() - 1) += *stop;
        return u;
    }
};

template <typename Scalar = double>
struct MarginalSet {
    MatrixX<Scalar> node;               // n x K
    std::vector<MatrixX<Scalar>> edge;  // n-1 slices of K x K
    Scalar log_z;
};

template <typename Scalar = double>
struct ViterbiPath {
    std::vector<int> labels;
    Scalar score;
};

namespace detail {

template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::MatrixBase<Derived>& x) {
    using Scalar = typename Derived::Scalar;
    const Scalar m = x.maxCoeff();
    if (!std::isfinite(static_cast<double>(m))) return m;
    return m + std::log((x.array() - m).exp().sum());
}

// alpha(t, j): log-sum of scores of all prefixes ending at t with label j.
template <typename Scalar>
MatrixX<Scalar> forward_table(const MatrixX<Scalar>& unary, const MatrixX<Scalar>& trans) {
    const auto n = unary.rows(), K = unary.cols();
    MatrixX<Scalar> alpha(n, K);
    alpha.row(0) = unary.row(0);
    for (Eigen::Index t = 1; t < n; ++t)
        for (Eigen::Index j = 0; j < K; ++j)
            alpha(t, j) = log_sum_exp(alpha.row(t - 1).transpose() + trans.col(j)) + unary(t, j);
    return alpha;
}

// beta(t, i): log-sum of scores of all suffixes after t given label i at t.
template <typename Scalar>
MatrixX<Scalar> backward_table(const MatrixX<Scalar>& unary, const MatrixX<Scalar>& trans) {
    const auto n = unary.rows(), K = unary.cols();
    MatrixX<Scalar> beta(n, K);
    beta.row(n - 1).setZero();
    for (Eigen::Index t = n - 2; t >= 0; --t)
        for (Eigen::Index i = 0; i < K; ++i)
            beta(t, i) = log_sum_exp(trans.row(i) + unary.row(t + 1) + beta.row(t + 1));
    return beta;
}

}  // namespace detail

template <typename Scalar>
Scalar log_partition(const PotentialTable<Scalar>& pot) {
    pot.validate();
    const MatrixX<Scalar> alpha = detail::forward_table<Scalar>(pot.effective_unary(), pot.transition);
    return detail::log_sum_exp(alpha.row(alpha.rows() - 1));
}

template <typename Scalar>
MarginalSet<Scalar> forward_backward(const PotentialTable<Scalar>& pot) {
    pot.validate();
    const MatrixX<Scalar> unary = pot.effective_unary();
    const auto n = unary.rows(), K = unary.cols();
    const MatrixX<Scalar> alpha = detail::forward_table<Scalar>(unary, pot.transition);
    const MatrixX<Scalar> beta = detail::backward_table<Scalar>(unary, pot.transition);

    MarginalSet<Scalar> out;
    out.log_z = detail::log_sum_exp(alpha.row(n - 1));
    out.node = ((alpha + beta).array() - out.log_z).exp().matrix();
    out.edge.reserve(static_cast<std::size_t>(n - 1));
    for (Eigen::Index t = 0; t + 1 < n; ++t) {
        MatrixX<Scalar> e(K, K);
        for (Eigen::Index i = 0; i < K; ++i)
            for (Eigen::Index j = 0; j < K; ++j)
                e(i, j) = std::exp(alpha(t, i) + pot.transition(i, j) + unary(t + 1, j) + beta(t + 1, j) -
                                   out.log_z);
        out.edge.push_back(std::move(e));
    }
    return out;
}

template <typename Scalar>
Scalar sequence_score(const PotentialTable<Scalar>& pot, std::span<const int> labels) {
    pot.validate();
    if (static_cast<Eigen::Index>(labels.size()) != pot.length())
        throw ValidationError("label sequence length " + std::to_string(labels.size()) +
                              " does not match chain length " + std::to_string(pot.length()));
    for (int y : labels)
        if (y < 0 || y >= pot.num_labels())
            throw ValidationError("label " + std::to_string(y) + " out of range [0, " +
                                  std::to_string(pot.num_labels()) + ")");
    // Accumulated strictly along the path so equal paths give bit-equal scores.
    Scalar s = 0;
    if (pot.start) s += (*pot.start)(labels[0]);
    s += pot.unary(0, labels[0]);
    for (std::size_t t = 1; t < labels.size(); ++t) {
        s += pot.transition(labels[t - 1], labels[t]);
        s += pot.unary(static_cast<Eigen::Index>(t), labels[t]);
    }
    if (pot.stop) s += (*pot.stop)(labels.back());
    return s;
}

template <typename Scalar>
Scalar sequence_log_prob(const PotentialTable<Scalar>& pot, std::span<const int> labels) {
    return sequence_score(pot, labels) - log_partition(pot);
}

/// Max-sum dynamic program with a score table and a backpointer table,
/// followed by a backtrace. Ties go to the lowest label id. The returned
/// score is the path's score recomputed term by term.
template <typename Scalar>
ViterbiPath<Scalar> viterbi_decode(const PotentialTable<Scalar>& pot) {
    pot.validate();
    const MatrixX<Scalar> unary = pot.effective_unary();
    const auto n = unary.rows(), K = unary.cols();
    MatrixX<Scalar> best(n, K);
    Eigen::MatrixXi back = Eigen::MatrixXi::Zero(n, K);
    best.row(0) = unary.row(0);
    for (Eigen::Index t = 1; t < n; ++t) {
        for (Eigen::Index j = 0; j < K; ++j) {
            Eigen::Index arg = 0;
            Scalar top = best(t - 1, 0) + pot.transition(0, j);
            for (Eigen::Index k = 1; k < K; ++k) {
                const Scalar cand = best(t - 1, k) + pot.transition(k, j);
                if (cand > top) {
                    top = cand;
                    arg = k;
                }
            }
            best(t, j) = top + unary(t, j);
            back(t, j) = static_cast<int>(arg);
        }
    }
    ViterbiPath<Scalar> out;
    out.labels.resize(static_cast<std::size_t>(n));
    Eigen::Index last = 0;
    for (Eigen::Index k = 1; k < K; ++k)
        if (best(n - 1, k) > best(n - 1, last)) last = k;
    out.labels[static_cast<std::size_t>(n - 1)] = static_cast<int>(last);
    for (Eigen::Index t = n - 1; t > 0; --t)
        out.labels[static_cast<std::size_t>(t - 1)] = back(t, out.labels[static_cast<std::size_t>(t)]);
    out.score = sequence_score(pot, out.labels);
    return out;
}

}  // namespace crfasn::crf
