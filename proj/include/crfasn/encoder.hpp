#pragma once

// Hierarchical utterance encoder: token embeddings (word, char-CNN, POS, NER),
// a word-level BiGRU per utterance, a conversation-level BiGRU whose states
// are combined into contextual keys, and memory attention with hop residuals.

#include <random>
#include <span>
#include <vector>

#include "crfasn/autodiff.hpp"
#include "crfasn/corpus.hpp"
#include "crfasn/params.hpp"

namespace crfasn {

struct EncoderDims {
    int word_dim = 100;
    int char_dim = 16;
    std::vector<int> char_widths{2, 3, 4};
    std::vector<int> char_filters{34, 33, 33};
    int pos_dim = 16;
    int ner_dim = 16;
    int utt_hidden = 64;  // d_u; utterance vectors have d = 2 * d_u
    int hops = 1;

    int char_out() const;
    int token_dim() const { return word_dim + char_out() + pos_dim + ner_dim; }
    int utt_dim() const { return 2 * utt_hidden; }
    int max_width() const;
};

/// Standard GRU cell, gates ordered [update z | reset r | candidate n]:
///   z = sigmoid(x Wz + h Uz + bz), r = sigmoid(x Wr + h Ur + br)
///   n = tanh(x Wn + (r * h) Un + bn), h' = (1 - z) * h + z * n
struct GruParams {
    ad::Tensor input;        // in x 3h
    ad::Tensor recurrent_zr; // h x 2h
    ad::Tensor recurrent_n;  // h x h
    ad::Tensor bias;         // 1 x 3h
    int hidden = 0;
};

GruParams make_gru(ParamRegistry& reg, const std::string& prefix, int in, int hidden, std::mt19937_64& rng);

/// Runs over the rows of `inputs` (T x in) from a zero state; returns the
/// T x h state sequence indexed by input position. `reverse` runs T-1..0.
ad::Tensor gru_states(const GruParams& p, const ad::Tensor& inputs, bool reverse);

struct EmbeddingTables {
    ad::Tensor word;  // |V_w| x word_dim
    ad::Tensor chars; // |V_c| x char_dim
    ad::Tensor pos;   // |V_p| x pos_dim
    ad::Tensor ner;   // |V_n| x ner_dim
};

struct CharCnn {
    std::vector<ad::Tensor> filters;  // (width * char_dim) x count
    std::vector<ad::Tensor> biases;   // 1 x count
    std::vector<int> widths;
};

struct UtteranceEncoderParams {
    GruParams forward;
    GruParams backward;
};

struct ContextEncoderParams {
    GruParams forward;
    GruParams backward;
    ad::Tensor combine_forward;   // d_u x d
    ad::Tensor combine_backward;  // d_u x d
    ad::Tensor combine_bias;      // 1 x d
};

struct EncodedConversation {
    ad::Tensor original;    // n x d, u_j
    ad::Tensor contextual;  // n x d, h_j
    std::vector<ad::Tensor> attention;  // one n x n row-stochastic matrix per hop
    ad::Tensor memory_out;  // n x d, o_j of the last hop
    ad::Tensor final;       // n x d, u_j after the last hop
};

/// Dropout settings for one forward pass; rng == nullptr means evaluation.
struct ForwardContext {
    double dropout = 0.0;
    std::mt19937_64* rng = nullptr;
};

/// tanh(conv) + max-over-time per filter width, concatenated: 1 x char_out.
/// Short character sequences are right-padded with PAD up to the widest filter.
ad::Tensor char_cnn(const CharCnn& cnn, const ad::Tensor& char_table, std::span<const int> chars);

/// e_k = [word | char-CNN | pos | ner] as a 1 x token_dim row.
ad::Tensor embed_token(const EmbeddingTables& tables, const CharCnn& cnn, int word, std::span<const int> chars,
                       int pos, int ner);
/// T x token_dim matrix of token embeddings.
ad::Tensor embed_utterance(const EmbeddingTables& tables, const CharCnn& cnn, const UtteranceIds& utt);

/// u_j = [forward final state | backward final state], 1 x 2h.
ad::Tensor encode_utterance(const UtteranceEncoderParams& p, const ad::Tensor& embedded);

/// h_j = tanh(bwd_j Wb + fwd_j Wf + b) over the utterance sequence (n x d).
ad::Tensor encode_context(const ContextEncoderParams& p, const ad::Tensor& utterances);

struct MemoryOutput {
    std::vector<ad::Tensor> attention;
    ad::Tensor outputs;
    ad::Tensor finals;
};

/// Per hop: p = softmax_rows(U H^T), O = p U, U <- O + U.
MemoryOutput memory_layer(const ad::Tensor& utterances, const ad::Tensor& contextual, int hops = 1);

class Encoder {
public:
    Encoder() = default;
    Encoder(ParamRegistry& reg, const EncoderDims& dims, const Vocab& vocab, std::mt19937_64& rng);

    EncodedConversation encode(const ConversationIds& conv, const ForwardContext& ctx) const;

    const EncoderDims& dims() const { return dims_; }
    const EmbeddingTables& tables() const { return tables_; }
    const CharCnn& char_cnn_params() const { return cnn_; }
    const UtteranceEncoderParams& utterance_params() const { return utt_; }
    const ContextEncoderParams& context_params() const { return ctx_; }

private:
    EncoderDims dims_;
    EmbeddingTables tables_;
    CharCnn cnn_;
    UtteranceEncoderParams utt_;
    ContextEncoderParams ctx_;
};

Matrix uniform_matrix(Index rows, Index cols, double bound, std::mt19937_64& rng);

}  // namespace crfasn
