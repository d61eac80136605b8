#include "crfasn/crf_layer.hpp"

#include <string>
#include <vector>

namespace crfasn {

using namespace ad;

Tensor chain_marginals(const Tensor& unary, const Tensor& transition) {
    const Index n = unary.rows(), K = unary.cols();
    if (transition.rows() != K || transition.cols() != K)
        throw ShapeError("chain_marginals: transition " + transition.shape_string() + " for unary " +
                         unary.shape_string());
    std::vector<Tensor> alpha, beta(static_cast<std::size_t>(n));
    alpha.push_back(row(unary, 0));
    for (Index t = 1; t < n; ++t) {
        // m(i, j) = alpha_{t-1}(i) + transition(i, j)
        Tensor m = add(transition, transpose(alpha.back()));
        alpha.push_back(add(logsumexp(m, 0), row(unary, t)));
    }
    beta[static_cast<std::size_t>(n - 1)] = Tensor::constant(Matrix::Zero(1, K));
    for (Index t = n - 2; t >= 0; --t) {
        // m(i, j) = transition(i, j) + unary(t+1, j) + beta_{t+1}(j)
        Tensor m = add(transition, add(row(unary, t + 1), beta[static_cast<std::size_t>(t + 1)]));
        beta[static_cast<std::size_t>(t)] = transpose(logsumexp(m, 1));
    }
    Tensor log_z = logsumexp(alpha.back(), 1);
    std::vector<Tensor> rows;
    rows.reserve(static_cast<std::size_t>(n));
    for (Index t = 0; t < n; ++t)
        rows.push_back(ad::exp(sub(add(alpha[static_cast<std::size_t>(t)], beta[static_cast<std::size_t>(t)]), log_z)));
    return concat(rows, 0);
}

SelectionAttention selection_attention(const Tensor& finals, const SelectionParams& p) {
    const Index n = finals.rows();
    SelectionAttention out;
    Tensor s = matmul(ad::tanh(add(matmul(finals, p.proj), p.bias)), p.score);  // n x 1
    out.unary = concat({Tensor::constant(Matrix::Zero(n, 1)), s}, 1);
    out.pairwise = p.pairwise;
    Tensor marg = chain_marginals(out.unary, out.pairwise);
    out.gamma = slice(marg, 0, n, 1, 1);
    out.context = matmul(transpose(out.gamma), finals);
    return out;
}

LabelPotentials compute_potentials(const Tensor& finals, const Tensor& context, const EmissionParams& p) {
    const Index n = finals.rows();
    Tensor act_term = matmul(finals, transpose(p.act_embed));
    std::vector<Tensor> ctx_rows(static_cast<std::size_t>(n), context);
    Tensor joined = concat({finals, concat(ctx_rows, 0)}, 1);
    Tensor mlp = matmul(ad::tanh(add(matmul(joined, p.hidden), p.hidden_bias)), p.out);
    LabelPotentials pot;
    pot.unary = add(act_term, mlp);
    if (p.start.defined() || p.stop.defined()) {
        std::vector<Tensor> rows;
        for (Index t = 0; t < n; ++t) {
            Tensor r = row(pot.unary, t);
            if (t == 0 && p.start.defined()) r = add(r, p.start);
            if (t == n - 1 && p.stop.defined()) r = add(r, p.stop);
            rows.push_back(r);
        }
        pot.unary = concat(rows, 0);
    }
    pot.transition = p.transition;
    return pot;
}

Tensor crf_log_partition(const Tensor& unary, const Tensor& transition) {
    crf::PotentialTable<double> table{unary.value(), transition.value(), std::nullopt, std::nullopt};
    auto marg = std::make_shared<crf::MarginalSet<double>>(crf::forward_backward(table));
    Tensor out(Matrix::Constant(1, 1, marg->log_z));
    record_op(Op::crf_log_partition, {unary, transition}, out, [unary, transition, marg](const Matrix& g) {
        Tensor u = unary, tr = transition;
        const double s = g(0, 0);
        if (u.requires_grad()) u.accumulate_grad(s * marg->node);
        if (tr.requires_grad()) {
            Matrix e = Matrix::Zero(tr.rows(), tr.cols());
            for (const auto& slice : marg->edge) e += slice;
            tr.accumulate_grad(s * e);
        }
    });
    return out;
}

Tensor sequence_score(const LabelPotentials& pot, std::span<const int> labels) {
    const Index n = pot.unary.rows(), K = pot.unary.cols();
    if (static_cast<Index>(labels.size()) != n)
        throw ValidationError("label sequence length " + std::to_string(labels.size()) + " does not match " +
                              std::to_string(n) + " utterances");
    std::vector<std::pair<Index, Index>> unary_entries, trans_entries;
    for (std::size_t t = 0; t < labels.size(); ++t) {
        if (labels[t] < 0 || labels[t] >= K) throw ValidationError("label " + std::to_string(labels[t]) + " out of range");
        unary_entries.emplace_back(static_cast<Index>(t), labels[t]);
        if (t > 0) trans_entries.emplace_back(labels[t - 1], labels[t]);
    }
    Tensor s = pick(pot.unary, unary_entries);
    if (!trans_entries.empty()) s = add(s, pick(pot.transition, trans_entries));
    return s;
}

Tensor sequence_log_prob(const LabelPotentials& pot, std::span<const int> labels) {
    return sub(sequence_score(pot, labels), crf_log_partition(pot.unary, pot.transition));
}

crf::PotentialTable<double> to_table(const LabelPotentials& pot) {
    return crf::PotentialTable<double>{pot.unary.value(), pot.transition.value(), std::nullopt, std::nullopt};
}

}  // namespace crfasn
