#pragma once

#include <filesystem>
#include <memory>
#include <random>
#include <vector>

#include <json.hpp>

#include "crfasn/corpus.hpp"
#include "crfasn/crf_layer.hpp"
#include "crfasn/encoder.hpp"
#include "crfasn/params.hpp"

namespace crfasn {

struct ModelConfig {
    EncoderDims encoder;
    int selection_hidden = 64;
    int emission_hidden = 64;
    bool start_stop = false;
};

nlohmann::json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Encoder, selection attention and label CRF over one shared registry.
class CrfAsnModel {
public:
    struct Forward {
        EncodedConversation encoded;
        SelectionAttention selection;
        LabelPotentials potentials;
    };

    CrfAsnModel(Vocab vocab, ModelConfig config, std::uint64_t seed);

    CrfAsnModel(const CrfAsnModel&) = delete;
    CrfAsnModel& operator=(const CrfAsnModel&) = delete;
    CrfAsnModel(CrfAsnModel&&) = default;
    CrfAsnModel& operator=(CrfAsnModel&&) = default;

    Forward forward(const ConversationIds& conv, const ForwardContext& ctx = {}) const;
    /// -log p(gold acts | conversation).
    ad::Tensor nll(const ConversationIds& conv, const ForwardContext& ctx = {}) const;
    /// Viterbi decoding with the current parameter values.
    std::vector<int> predict(const ConversationIds& conv) const;

    ParamRegistry& params() { return *params_; }
    const ParamRegistry& params() const { return *params_; }
    const Vocab& vocab() const { return vocab_; }
    const ModelConfig& config() const { return config_; }
    const Encoder& encoder() const { return encoder_; }
    const SelectionParams& selection_params() const { return selection_; }
    const EmissionParams& emission_params() const { return emission_; }

    /// Overwrites word embedding rows (PAD stays zero).
    void set_word_embeddings(const Matrix& table);

    nlohmann::json metadata() const;
    void save(const std::filesystem::path& path, bool shadows) const;
    static CrfAsnModel load(const std::filesystem::path& path);

private:
    Vocab vocab_;
    ModelConfig config_;
    std::unique_ptr<ParamRegistry> params_;
    Encoder encoder_;
    SelectionParams selection_;
    EmissionParams emission_;
};

}  // namespace crfasn
