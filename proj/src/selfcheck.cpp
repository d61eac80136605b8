#include "crfasn/selfcheck.hpp"

#include <array>
#include <initializer_list>

namespace crfasn {

namespace {

Utterance utterance(const char* speaker, const char* act,
                    std::initializer_list<std::array<const char*, 3>> tokens) {
    Utterance u;
    u.speaker = speaker;
    u.act = act;
    for (const auto& [surface, pos, ner] : tokens) u.tokens.push_back(make_token(surface, pos, ner));
    return u;
}

}  // namespace

std::vector<Conversation> toy_conversations() {
    Conversation a{"toy-1",
                   {utterance("A", "greet", {{"hi", "UH", "O"}, {"there", "RB", "O"}}),
                    utterance("B", "greet", {{"hello", "UH", "O"}}),
                    utterance("A", "ask", {{"how", "WRB", "O"}, {"is", "VBZ", "O"}, {"Ann", "NNP", "PER"}, {"?", ".", "O"}})}};
    Conversation b{"toy-2",
                   {utterance("B", "ask", {{"is", "VBZ", "O"}, {"it", "PRP", "O"}, {"ok", "JJ", "O"}, {"?", ".", "O"}}),
                    utterance("A", "answer", {{"yes", "UH", "O"}})}};
    return {a, b};
}

TrainConfig toy_config() {
    TrainConfig c;
    c.word_dim = 6;
    c.char_dim = 4;
    c.char_filters = 6;
    c.d_p = 3;
    c.d_n = 3;
    c.d_u = 4;
    c.d = 8;
    c.selection_hidden = 5;
    c.emission_hidden = 5;
    c.start_stop = true;
    c.dropout = 0;
    c.l2 = 1e-3;
    return c;
}

GradientSuiteResult run_gradient_suite(std::uint64_t seed, const GradCheckOptions& opts) {
    const auto convs = toy_conversations();
    TrainConfig cfg = toy_config();
    cfg.seed = seed;
    const Vocab vocab = build_vocab(convs);
    const auto ids = encode_all(convs, vocab, true);
    CrfAsnModel model(vocab, cfg.model_config(), seed);
    // Move off the zero-initialized tables so every parameter sees a generic point.
    std::mt19937_64 rng(seed + 17);
    for (auto& p : model.params().entries()) {
        Matrix& v = p.tensor.mutable_value();
        v += uniform_matrix(v.rows(), v.cols(), 0.3, rng);
        for (int r : p.frozen_rows) v.row(r).setZero();
    }

    std::vector<const ConversationIds*> batch;
    for (const auto& c : ids) batch.push_back(&c);

    GradientSuiteResult out;
    out.report = grad_check([&] { return compute_loss(model, batch, cfg, nullptr); }, model.params(), opts);

    for (const auto& conv : ids) {
        const auto f = model.forward(conv);
        ad::Tensor unary = ad::Tensor::parameter(f.potentials.unary.value());
        ad::Tensor trans = ad::Tensor::parameter(f.potentials.transition.value());
        ad::Tape tape;
        {
            ad::TapeScope scope(tape);
            tape.backward(crf_log_partition(unary, trans));
        }
        const auto marg = crf::forward_backward(to_table(f.potentials));
        out.marginal_identity_error =
            std::max(out.marginal_identity_error, (unary.grad() - marg.node).cwiseAbs().maxCoeff());
    }
    return out;
}

}  // namespace crfasn
