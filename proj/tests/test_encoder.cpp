#include <doctest.h>

#include <algorithm>
#include <random>

#include "crfasn/encoder.hpp"
#include "crfasn/gradcheck.hpp"
#include "oracles/reference.hpp"
#include "support.hpp"

using namespace crfasn;
using namespace crfasn::ad;

namespace {

struct Fixture {
    std::vector<Conversation> convs{test_support::conversation("c1", {{"a", "hello big world"}, {"b", "why not"}}),
                                    test_support::conversation("c2", {{"a", "hello"}})};
    Vocab vocab = build_vocab(convs);
    ParamRegistry reg;
    std::mt19937_64 rng{7};
    EncoderDims dims;
    Encoder enc;

    explicit Fixture(EncoderDims d = small_dims()) : dims(d), enc(reg, dims, vocab, rng) {}

    static EncoderDims small_dims() {
        EncoderDims d;
        d.word_dim = 5;
        d.char_dim = 3;
        d.char_filters = {2, 2, 2};
        d.pos_dim = 2;
        d.ner_dim = 2;
        d.utt_hidden = 3;
        return d;
    }
};

GruParams gru(ParamRegistry& reg, const std::string& name, int in, int h, std::mt19937_64& rng, double scale) {
    GruParams g = make_gru(reg, name, in, h, rng);
    g.bias.mutable_value() = uniform_matrix(1, 3 * h, scale, rng);
    for (auto* t : {&g.input, &g.recurrent_zr, &g.recurrent_n}) t->mutable_value() *= scale / 0.08;
    return g;
}

Matrix reverse_rows(const Matrix& m) { return m.colwise().reverse(); }

Matrix ref_gru(const GruParams& g, const Matrix& x, bool reverse) {
    return reference::gru(x, g.input.value(), g.recurrent_zr.value(), g.recurrent_n.value(), g.bias.value(), reverse);
}

}  // namespace

TEST_CASE("default token embedding has 232 dimensions") {
    EncoderDims d;
    CHECK(d.char_out() == 100);
    CHECK(d.token_dim() == 232);
    CHECK(d.utt_dim() == 128);

    const std::vector<Conversation> convs{test_support::conversation("c", {{"a", "hello"}})};
    const Vocab v = build_vocab(convs);
    ParamRegistry reg;
    std::mt19937_64 rng(1);
    Encoder enc(reg, d, v, rng);
    const auto ids = encode(convs[0], v, true);
    const auto& u = ids.utterances[0];
    const auto e = embed_token(enc.tables(), enc.char_cnn_params(), u.words[0], u.chars[0], u.pos[0], u.ner[0]);
    CHECK(e.cols() == 232);
    CHECK(embed_utterance(enc.tables(), enc.char_cnn_params(), u).value() == e.value());
}

TEST_CASE("GRU states match the scalar reference") {
    std::mt19937_64 rng(11);
    ParamRegistry reg;
    const auto g = gru(reg, "g", 4, 3, rng, 0.7);
    const Matrix x = uniform_matrix(5, 4, 1.0, rng);
    for (bool rev : {false, true}) {
        const Matrix ours = gru_states(g, Tensor::constant(x), rev).value();
        CHECK((ours - ref_gru(g, x, rev)).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("all-PAD characters reduce to the activated bias") {
    Fixture f;
    const auto& cnn = f.enc.char_cnn_params();
    const int pads[] = {SymbolTable::pad};
    for (Tensor b : cnn.biases) b.mutable_value() = Matrix::Constant(1, b.cols(), 0.3);
    const Matrix out = char_cnn(cnn, f.enc.tables().chars, pads).value();
    CHECK(out.cols() == 6);
    for (Index i = 0; i < out.cols(); ++i) CHECK(out(0, i) == doctest::Approx(std::tanh(0.3)).epsilon(1e-15));
}

TEST_CASE("an unknown word keeps its character signal") {
    Fixture f;
    const auto held = encode(test_support::conversation("h", {{"a", "whelp"}}), f.vocab, true);
    const auto& u = held.utterances[0];
    REQUIRE(u.words[0] == SymbolTable::unk);
    const Matrix e = embed_token(f.enc.tables(), f.enc.char_cnn_params(), u.words[0], u.chars[0], u.pos[0], u.ner[0])
                         .value();
    const Matrix word_part = e.leftCols(f.dims.word_dim);
    CHECK(word_part == f.enc.tables().word.value().row(SymbolTable::unk));
    const Matrix char_part = e.middleCols(f.dims.word_dim, f.dims.char_out());
    CHECK(char_part.cwiseAbs().maxCoeff() > 0);
}

TEST_CASE("single-token utterances concatenate one step per direction") {
    Fixture f;
    const auto ids = encode(f.convs[1], f.vocab, true);
    const Tensor e = embed_utterance(f.enc.tables(), f.enc.char_cnn_params(), ids.utterances[0]);
    const Matrix u = encode_utterance(f.enc.utterance_params(), e).value();
    const auto& p = f.enc.utterance_params();
    CHECK(u.cols() == f.dims.utt_dim());
    CHECK((u.leftCols(3) - ref_gru(p.forward, e.value(), false)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((u.rightCols(3) - ref_gru(p.backward, e.value(), true)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("reversing the input swaps the direction of the recurrence") {
    std::mt19937_64 rng(3);
    ParamRegistry reg;
    const auto g = gru(reg, "g", 3, 4, rng, 0.5);
    const Matrix x = uniform_matrix(6, 3, 1.0, rng);
    const Matrix fwd = gru_states(g, Tensor::constant(x), false).value();
    const Matrix bwd_on_reversed = gru_states(g, Tensor::constant(reverse_rows(x)), true).value();
    CHECK(fwd == reverse_rows(bwd_on_reversed));
}

TEST_CASE("zero weights give a zero utterance vector") {
    Fixture f;
    for (auto& p : f.reg.entries())
        if (p.name.rfind("utterance.", 0) == 0) p.tensor.mutable_value().setZero();
    const auto ids = encode(f.convs[0], f.vocab, true);
    const Tensor e = embed_utterance(f.enc.tables(), f.enc.char_cnn_params(), ids.utterances[0]);
    CHECK(encode_utterance(f.enc.utterance_params(), e).value().isZero(0));
}

TEST_CASE("forward and backward parameter sets are distinct") {
    Fixture f;
    const auto& u = f.enc.utterance_params();
    const auto& c = f.enc.context_params();
    CHECK(u.forward.input.id() != u.backward.input.id());
    CHECK(c.forward.input.id() != c.backward.input.id());
    CHECK(c.combine_forward.cols() == f.dims.utt_dim());
    CHECK(f.reg.contains("embed.word"));
    CHECK(f.reg.at("embed.word").frozen_rows == std::vector<int>{SymbolTable::pad});
}

TEST_CASE("context encoding") {
    std::mt19937_64 rng(5);
    Fixture f;
    const auto& p = f.enc.context_params();
    for (Tensor t : {p.combine_forward, p.combine_backward}) t.mutable_value() *= 20.0;

    SUBCASE("a single utterance sees no other context") {
        const Matrix u1 = uniform_matrix(1, 6, 1.0, rng);
        const Matrix h = encode_context(p, Tensor::constant(u1)).value();
        Matrix u2(2, 6);
        u2 << u1, uniform_matrix(1, 6, 1.0, rng);
        const Matrix h_fwd_only = encode_context(p, Tensor::constant(u2)).value();
        CHECK(h.rows() == 1);
        // The forward pass of position 0 is identical, the backward pass is not.
        CHECK(h.row(0) != h_fwd_only.row(0));
        const Matrix expected = (ref_gru(p.backward, u1, true) * p.combine_backward.value() +
                                 ref_gru(p.forward, u1, false) * p.combine_forward.value() + p.combine_bias.value())
                                    .array()
                                    .tanh()
                                    .matrix();
        CHECK((h - expected).cwiseAbs().maxCoeff() < 1e-12);
    }

    SUBCASE("outputs stay inside (-1, 1)") {
        const Matrix h = encode_context(p, Tensor::constant(uniform_matrix(7, 6, 5.0, rng))).value();
        CHECK(h.cwiseAbs().maxCoeff() < 1.0);
    }

    SUBCASE("permuting later utterances changes the first contextual state") {
        Matrix u = uniform_matrix(5, 6, 1.0, rng);
        const Matrix h = encode_context(p, Tensor::constant(u)).value();
        Matrix permuted = u;
        permuted.row(1) = u.row(3);
        permuted.row(3) = u.row(1);
        permuted.row(2) = u.row(4);
        permuted.row(4) = u.row(2);
        const Matrix hp = encode_context(p, Tensor::constant(permuted)).value();
        CHECK((h.row(0) - hp.row(0)).cwiseAbs().maxCoeff() > 1e-9);
    }
}

TEST_CASE("memory layer") {
    std::mt19937_64 rng(8);

    SUBCASE("one utterance attends to itself") {
        const Matrix u = uniform_matrix(1, 4, 1.0, rng);
        const auto m = memory_layer(Tensor::constant(u), Tensor::constant(uniform_matrix(1, 4, 1.0, rng)));
        CHECK(m.attention[0].value() == Matrix::Ones(1, 1));
        CHECK(m.outputs.value() == u);
        CHECK(m.finals.value() == 2.0 * u);
    }

    SUBCASE("identical keys give uniform rows") {
        const Matrix u = uniform_matrix(4, 3, 1.0, rng);
        const Matrix h = Matrix::Ones(4, 1) * uniform_matrix(1, 3, 1.0, rng);
        const Matrix p = memory_layer(Tensor::constant(u), Tensor::constant(h)).attention[0].value();
        CHECK((p.array() - 0.25).abs().maxCoeff() < 1e-15);
    }

    SUBCASE("outputs equal the explicit weighted sum") {
        const Matrix u = uniform_matrix(3, 5, 1.0, rng), h = uniform_matrix(3, 5, 1.0, rng);
        const auto m = memory_layer(Tensor::constant(u), Tensor::constant(h));
        const auto ref = reference::memory(u, h);
        CHECK((m.attention[0].value() - ref.attention).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((m.outputs.value() - ref.outputs).cwiseAbs().maxCoeff() < 1e-12);
    }

    SUBCASE("rows are distributions and ignore per-row score shifts") {
        for (int trial = 0; trial < 20; ++trial) {
            const Matrix u = uniform_matrix(6, 4, 2.0, rng), h = uniform_matrix(6, 4, 2.0, rng);
            const Matrix p = memory_layer(Tensor::constant(u), Tensor::constant(h)).attention[0].value();
            CHECK((p.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-9);
            CHECK((p.array() >= 0).all());
            // Adding c to every key adds u_j . c to the whole of row j.
            const Matrix shifted = h.rowwise() + uniform_matrix(1, 4, 3.0, rng).row(0);
            const Matrix ps = memory_layer(Tensor::constant(u), Tensor::constant(shifted)).attention[0].value();
            CHECK((ps - p).cwiseAbs().maxCoeff() < 1e-9);
        }
    }

    SUBCASE("the hop residual is exact and hops compose") {
        const Matrix u = uniform_matrix(4, 3, 1.0, rng), h = uniform_matrix(4, 3, 1.0, rng);
        const auto one = memory_layer(Tensor::constant(u), Tensor::constant(h), 1);
        CHECK(one.finals.value() == (one.outputs.value() + u).eval());
        const auto two = memory_layer(Tensor::constant(u), Tensor::constant(h), 2);
        REQUIRE(two.attention.size() == 2);
        const auto again = memory_layer(one.finals, Tensor::constant(h), 1);
        CHECK(two.attention[1].value() == again.attention[0].value());
        CHECK(two.finals.value() == again.finals.value());
        CHECK_THROWS(memory_layer(Tensor::constant(u), Tensor::constant(h), 0));
        CHECK_THROWS_AS(memory_layer(Tensor::constant(u), Tensor::constant(uniform_matrix(3, 3, 1.0, rng))), ShapeError);
    }
}

TEST_CASE("encoded conversation invariants") {
    Fixture f;
    const auto ids = encode(f.convs[0], f.vocab, true);
    const auto out = f.enc.encode(ids, {});
    CHECK(out.original.rows() == 2);
    CHECK(out.contextual.cols() == f.dims.utt_dim());
    CHECK(out.final.value() == (out.memory_out.value() + out.original.value()).eval());
    CHECK((out.attention[0].value().rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-9);
    CHECK(f.enc.encode(ids, {}).final.value() == out.final.value());
}

TEST_CASE("whole-encoder gradients match finite differences") {
    EncoderDims d = Fixture::small_dims();
    d.hops = 2;
    Fixture f(d);
    std::mt19937_64 rng(19);
    for (auto& p : f.reg.entries()) {
        p.tensor.mutable_value() += uniform_matrix(p.tensor.rows(), p.tensor.cols(), 0.3, rng);
        for (int r : p.frozen_rows) p.tensor.mutable_value().row(r).setZero();
    }
    // Two utterances of three tokens each.
    const auto conv = test_support::conversation("g", {{"a", "hello big world"}, {"b", "why not hello"}});
    const auto ids = encode(conv, f.vocab, true);
    const Tensor w = Tensor::constant(uniform_matrix(2, f.dims.utt_dim(), 1.0, rng));
    const auto report = grad_check([&] { return sum(mul(f.enc.encode(ids, {}).final, w)); }, f.reg);
    CHECK(report.passed);
    CHECK(report.max_rel_error <= 1e-4);
}
