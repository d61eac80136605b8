#pragma once

// Self-checks runnable from the command line: the finite-difference suite on
// a toy model and the brute-force inference suites.

#include <cstdint>
#include <vector>

#include "crfasn/corpus.hpp"
#include "crfasn/gradcheck.hpp"
#include "crfasn/train.hpp"

namespace crfasn {

/// Two short labeled conversations with POS and NER tags.
std::vector<Conversation> toy_conversations();
/// Small dimensions, dropout off, boundary scores on, nonzero L2.
TrainConfig toy_config();

struct GradientSuiteResult {
    GradCheckReport report;
    /// max |dlogZ/dunary - node marginal| over the toy batch.
    double marginal_identity_error = 0;
};

GradientSuiteResult run_gradient_suite(std::uint64_t seed, const GradCheckOptions& opts = {});

}  // namespace crfasn
