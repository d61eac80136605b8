#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "crfasn/corpus.hpp"
#include "crfasn/model.hpp"

namespace crfasn {

/// Predicted and gold act ids for one conversation.
struct LabeledSequence {
    std::string id;
    std::vector<int> predicted;
    std::vector<int> gold;
};

/// #correct / #utterances over all conversations. Throws ValidationError
/// naming the conversation when lengths disagree.
double accuracy(std::span<const LabeledSequence> seqs);

struct LabelStats {
    std::string label;
    long support = 0;    // gold count
    long predicted = 0;  // prediction count
    double precision = 0;
    double recall = 0;
};

struct EvalReport {
    double accuracy = 0;
    long total_utterances = 0;
    Eigen::MatrixXi confusion;         // rows true, columns predicted
    Eigen::MatrixXd normalized_rows;   // each nonempty row sums to 1
    std::vector<LabelStats> per_label;
};

EvalReport confusion(std::span<const LabeledSequence> seqs, const std::vector<std::string>& labels);
nlohmann::json report_to_json(const EvalReport& r);

/// Decodes every conversation (all must carry acts known to the model).
std::vector<LabeledSequence> predict_labeled(const CrfAsnModel& model, const std::vector<Conversation>& convs);

/// Version of the document produced by export_attention.
inline constexpr int attention_schema_version = 1;

/// Label-chain node and edge marginals, selection marginals, memory attention
/// per hop, Viterbi path and log-partition for one conversation.
nlohmann::json export_attention(const Conversation& conv, const CrfAsnModel& model);

}  // namespace crfasn
