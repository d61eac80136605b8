#pragma once

// Differentiable pieces of the structured layer: the binary selection chain
// that produces the attentive conversation context, the label-chain
// potentials, and the label-chain log-partition used by the likelihood.

#include <span>

#include "crfasn/autodiff.hpp"
#include "crfasn/crf_inference.hpp"

namespace crfasn {

struct SelectionParams {
    ad::Tensor proj;      // d x h_s
    ad::Tensor bias;      // 1 x h_s
    ad::Tensor score;     // h_s x 1
    ad::Tensor pairwise;  // 2 x 2
};

struct EmissionParams {
    ad::Tensor act_embed;    // K x d
    ad::Tensor hidden;       // 2d x h_e, applied to [u_i, c]
    ad::Tensor hidden_bias;  // 1 x h_e
    ad::Tensor out;          // h_e x K
    ad::Tensor transition;   // K x K
    ad::Tensor start;        // 1 x K, undefined when boundary scores are off
    ad::Tensor stop;         // 1 x K, undefined when boundary scores are off
};

struct SelectionAttention {
    ad::Tensor unary;     // n x 2, column 0 fixed at zero
    ad::Tensor pairwise;  // 2 x 2
    ad::Tensor gamma;     // n x 1, p(z_i = 1 | u)
    ad::Tensor context;   // 1 x d, sum_i gamma_i u_i
};

struct LabelPotentials {
    ad::Tensor unary;       // n x K, boundary scores folded in
    ad::Tensor transition;  // K x K
};

/// Node marginals of a chain with the given log potentials, built from
/// primitive ops so that gradients flow through the marginals.
ad::Tensor chain_marginals(const ad::Tensor& unary, const ad::Tensor& transition);

/// Binary chain over "utterance i is selected"; returns its marginals and the
/// expected selected representation.
SelectionAttention selection_attention(const ad::Tensor& finals, const SelectionParams& p);

/// unary(i, y) = u_i . E(y) + w_y . tanh(W [u_i, c] + b), plus the learned
/// transition table.
LabelPotentials compute_potentials(const ad::Tensor& finals, const ad::Tensor& context, const EmissionParams& p);

/// Fused forward recursion; its backward rule writes node marginals into the
/// unary gradient and summed edge marginals into the transition gradient.
ad::Tensor crf_log_partition(const ad::Tensor& unary, const ad::Tensor& transition);

ad::Tensor sequence_score(const LabelPotentials& pot, std::span<const int> labels);
/// log p(labels) = score(labels) - logZ.
ad::Tensor sequence_log_prob(const LabelPotentials& pot, std::span<const int> labels);

crf::PotentialTable<double> to_table(const LabelPotentials& pot);

}  // namespace crfasn
