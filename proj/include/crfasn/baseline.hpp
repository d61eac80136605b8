#pragma once

// Context-free reference classifiers used to judge whether the structured
// model actually exploits conversation context.

#include <cstdint>
#include <span>
#include <vector>

#include "crfasn/corpus.hpp"
#include "crfasn/params.hpp"

namespace crfasn {

/// Predicts the most frequent training act everywhere (lowest id on ties).
int majority_label(std::span<const ConversationIds> train, int num_labels);

struct LogisticConfig {
    int dim = 64;
    double lr = 0.05;
    double l2 = 1e-5;
    int epochs = 30;
    int batch = 32;
    std::uint64_t seed = 42;
};

/// Softmax regression over the mean word embedding of each utterance, with
/// embeddings learned jointly.
class LogisticBaseline {
public:
    LogisticBaseline(int vocab_size, int num_labels, const LogisticConfig& cfg);

    void fit(std::span<const ConversationIds> train);
    int predict(const UtteranceIds& utt) const;
    std::vector<int> predict(const ConversationIds& conv) const;

    ParamRegistry& params() { return params_; }
    /// Summed cross-entropy of the listed utterances, recorded on the active tape.
    ad::Tensor loss(std::span<const UtteranceIds* const> utts, std::span<const int> labels) const;

private:
    ad::Tensor logits(const UtteranceIds& utt) const;

    LogisticConfig cfg_;
    ParamRegistry params_;
    ad::Tensor embed_, weight_, bias_;
};

}  // namespace crfasn
