#include "crfasn/encoder.hpp"

#include <algorithm>
#include <numeric>

namespace crfasn {

using namespace ad;

namespace {
constexpr double weight_bound = 0.08;
constexpr double embed_bound = 0.05;
}  // namespace

int EncoderDims::char_out() const { return std::accumulate(char_filters.begin(), char_filters.end(), 0); }

int EncoderDims::max_width() const {
    return char_widths.empty() ? 1 : *std::max_element(char_widths.begin(), char_widths.end());
}

Matrix uniform_matrix(Index rows, Index cols, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-bound, bound);
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
}

GruParams make_gru(ParamRegistry& reg, const std::string& prefix, int in, int hidden, std::mt19937_64& rng) {
    GruParams g;
    g.hidden = hidden;
    g.input = reg.add(prefix + ".input", uniform_matrix(in, 3 * hidden, weight_bound, rng));
    g.recurrent_zr = reg.add(prefix + ".recurrent_zr", uniform_matrix(hidden, 2 * hidden, weight_bound, rng));
    g.recurrent_n = reg.add(prefix + ".recurrent_n", uniform_matrix(hidden, hidden, weight_bound, rng));
    g.bias = reg.add(prefix + ".bias", Matrix::Zero(1, 3 * hidden));
    return g;
}

Tensor gru_states(const GruParams& p, const Tensor& inputs, bool reverse) {
    const Index T = inputs.rows();
    const Index h = p.hidden;
    Tensor projected = add(matmul(inputs, p.input), p.bias);  // T x 3h
    Tensor state = Tensor::constant(Matrix::Zero(1, h));
    std::vector<Tensor> states(static_cast<std::size_t>(T));
    for (Index k = 0; k < T; ++k) {
        const Index t = reverse ? T - 1 - k : k;
        Tensor x = row(projected, t);
        Tensor zr = sigmoid(add(slice(x, 0, 1, 0, 2 * h), matmul(state, p.recurrent_zr)));
        Tensor z = slice(zr, 0, 1, 0, h);
        Tensor r = slice(zr, 0, 1, h, h);
        Tensor cand = ad::tanh(add(slice(x, 0, 1, 2 * h, h), matmul(mul(r, state), p.recurrent_n)));
        // (1 - z) * h + z * n  ==  h + z * (n - h)
        state = add(state, mul(z, sub(cand, state)));
        states[static_cast<std::size_t>(t)] = state;
    }
    return concat(states, 0);
}

Tensor char_cnn(const CharCnn& cnn, const Tensor& char_table, std::span<const int> chars) {
    const int widest = cnn.widths.empty() ? 1 : *std::max_element(cnn.widths.begin(), cnn.widths.end());
    std::vector<int> padded(chars.begin(), chars.end());
    if (static_cast<int>(padded.size()) < widest) padded.resize(static_cast<std::size_t>(widest), SymbolTable::pad);
    Tensor x = gather(char_table, padded);
    std::vector<Tensor> pooled;
    for (std::size_t f = 0; f < cnn.widths.size(); ++f)
        pooled.push_back(max_over_time(ad::tanh(conv1d(x, cnn.filters[f], cnn.biases[f], cnn.widths[f]))));
    return concat(pooled, 1);
}

Tensor embed_token(const EmbeddingTables& tables, const CharCnn& cnn, int word, std::span<const int> chars, int pos,
                   int ner) {
    const int w[] = {word}, p[] = {pos}, e[] = {ner};
    return concat({gather(tables.word, w), char_cnn(cnn, tables.chars, chars), gather(tables.pos, p),
                   gather(tables.ner, e)},
                  1);
}

Tensor embed_utterance(const EmbeddingTables& tables, const CharCnn& cnn, const UtteranceIds& utt) {
    std::vector<Tensor> char_rows;
    char_rows.reserve(utt.chars.size());
    for (const auto& cs : utt.chars) char_rows.push_back(char_cnn(cnn, tables.chars, cs));
    return concat({gather(tables.word, utt.words), concat(char_rows, 0), gather(tables.pos, utt.pos),
                   gather(tables.ner, utt.ner)},
                  1);
}

Tensor encode_utterance(const UtteranceEncoderParams& p, const Tensor& embedded) {
    const Index T = embedded.rows();
    if (T < 1) throw ShapeError("encode_utterance: empty utterance");
    Tensor fwd = gru_states(p.forward, embedded, false);
    Tensor bwd = gru_states(p.backward, embedded, true);
    return concat({row(fwd, T - 1), row(bwd, 0)}, 1);
}

Tensor encode_context(const ContextEncoderParams& p, const Tensor& utterances) {
    Tensor fwd = gru_states(p.forward, utterances, false);
    Tensor bwd = gru_states(p.backward, utterances, true);
    return ad::tanh(add(add(matmul(bwd, p.combine_backward), matmul(fwd, p.combine_forward)), p.combine_bias));
}

MemoryOutput memory_layer(const Tensor& utterances, const Tensor& contextual, int hops) {
    if (utterances.rows() != contextual.rows() || utterances.cols() != contextual.cols())
        throw ShapeError("memory_layer: utterances " + utterances.shape_string() + " vs contextual " +
                         contextual.shape_string());
    if (hops < 1) throw std::invalid_argument("memory_layer: hops must be >= 1");
    MemoryOutput out;
    Tensor query = utterances;
    Tensor keys_t = transpose(contextual);
    for (int k = 0; k < hops; ++k) {
        Tensor p = softmax(matmul(query, keys_t), 1);
        out.outputs = matmul(p, query);
        out.attention.push_back(p);
        query = add(out.outputs, query);
    }
    out.finals = query;
    return out;
}

Encoder::Encoder(ParamRegistry& reg, const EncoderDims& dims, const Vocab& vocab, std::mt19937_64& rng) : dims_(dims) {
    if (dims.char_widths.size() != dims.char_filters.size())
        throw std::invalid_argument("char_widths and char_filters must have the same length");
    const std::vector<int> pad{SymbolTable::pad};
    tables_.word = reg.add("embed.word", uniform_matrix(vocab.words.size(), dims.word_dim, embed_bound, rng), pad);
    tables_.chars = reg.add("embed.char", uniform_matrix(vocab.chars.size(), dims.char_dim, embed_bound, rng), pad);
    tables_.pos = reg.add("embed.pos", uniform_matrix(vocab.pos.size(), dims.pos_dim, embed_bound, rng), pad);
    tables_.ner = reg.add("embed.ner", uniform_matrix(vocab.ner.size(), dims.ner_dim, embed_bound, rng), pad);
    cnn_.widths = dims.char_widths;
    for (std::size_t f = 0; f < dims.char_widths.size(); ++f) {
        const auto w = std::to_string(dims.char_widths[f]);
        cnn_.filters.push_back(reg.add("charcnn.filter" + w,
                                       uniform_matrix(dims.char_widths[f] * dims.char_dim, dims.char_filters[f],
                                                      weight_bound, rng)));
        cnn_.biases.push_back(reg.add("charcnn.bias" + w, Matrix::Zero(1, dims.char_filters[f])));
    }
    const int h = dims.utt_hidden, d = dims.utt_dim();
    utt_.forward = make_gru(reg, "utterance.fwd", dims.token_dim(), h, rng);
    utt_.backward = make_gru(reg, "utterance.bwd", dims.token_dim(), h, rng);
    ctx_.forward = make_gru(reg, "context.fwd", d, h, rng);
    ctx_.backward = make_gru(reg, "context.bwd", d, h, rng);
    ctx_.combine_forward = reg.add("context.combine_fwd", uniform_matrix(h, d, weight_bound, rng));
    ctx_.combine_backward = reg.add("context.combine_bwd", uniform_matrix(h, d, weight_bound, rng));
    ctx_.combine_bias = reg.add("context.combine_bias", Matrix::Zero(1, d));
}

EncodedConversation Encoder::encode(const ConversationIds& conv, const ForwardContext& ctx) const {
    if (conv.utterances.empty()) throw ValidationError("conversation '" + conv.id + "' has no utterances");
    std::vector<Tensor> utts;
    utts.reserve(conv.utterances.size());
    for (const auto& u : conv.utterances) {
        Tensor e = dropout(embed_utterance(tables_, cnn_, u), ctx.dropout, ctx.rng);
        utts.push_back(encode_utterance(utt_, e));
    }
    EncodedConversation out;
    out.original = dropout(concat(utts, 0), ctx.dropout, ctx.rng);
    out.contextual = encode_context(ctx_, out.original);
    auto mem = memory_layer(out.original, out.contextual, dims_.hops);
    out.attention = std::move(mem.attention);
    out.memory_out = mem.outputs;
    out.final = mem.finals;
    return out;
}

}  // namespace crfasn
