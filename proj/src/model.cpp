#include "crfasn/model.hpp"

namespace crfasn {

using nlohmann::json;

namespace {
constexpr double weight_bound = 0.08;
constexpr const char* format_name = "crfasn-model";
}  // namespace

json model_config_to_json(const ModelConfig& c) {
    const auto& e = c.encoder;
    return json{{"word_dim", e.word_dim},         {"char_dim", e.char_dim},
                {"char_widths", e.char_widths},   {"char_filters", e.char_filters},
                {"pos_dim", e.pos_dim},           {"ner_dim", e.ner_dim},
                {"utt_hidden", e.utt_hidden},     {"hops", e.hops},
                {"selection_hidden", c.selection_hidden}, {"emission_hidden", c.emission_hidden},
                {"start_stop", c.start_stop}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    auto& e = c.encoder;
    e.word_dim = j.at("word_dim").get<int>();
    e.char_dim = j.at("char_dim").get<int>();
    e.char_widths = j.at("char_widths").get<std::vector<int>>();
    e.char_filters = j.at("char_filters").get<std::vector<int>>();
    e.pos_dim = j.at("pos_dim").get<int>();
    e.ner_dim = j.at("ner_dim").get<int>();
    e.utt_hidden = j.at("utt_hidden").get<int>();
    e.hops = j.at("hops").get<int>();
    c.selection_hidden = j.at("selection_hidden").get<int>();
    c.emission_hidden = j.at("emission_hidden").get<int>();
    c.start_stop = j.at("start_stop").get<bool>();
    return c;
}

CrfAsnModel::CrfAsnModel(Vocab vocab, ModelConfig config, std::uint64_t seed)
    : vocab_(std::move(vocab)), config_(std::move(config)), params_(std::make_unique<ParamRegistry>()) {
    if (vocab_.acts.size() < 1) throw ValidationError("model needs at least one act label");
    std::mt19937_64 rng(seed);
    encoder_ = Encoder(*params_, config_.encoder, vocab_, rng);
    const int d = config_.encoder.utt_dim();
    const int K = vocab_.acts.size();
    const int hs = config_.selection_hidden, he = config_.emission_hidden;
    auto& reg = *params_;
    selection_.proj = reg.add("select.proj", uniform_matrix(d, hs, weight_bound, rng));
    selection_.bias = reg.add("select.bias", Matrix::Zero(1, hs));
    selection_.score = reg.add("select.score", uniform_matrix(hs, 1, weight_bound, rng));
    selection_.pairwise = reg.add("select.pairwise", Matrix::Zero(2, 2));
    emission_.act_embed = reg.add("emit.act_embed", uniform_matrix(K, d, weight_bound, rng));
    emission_.hidden = reg.add("emit.hidden", uniform_matrix(2 * d, he, weight_bound, rng));
    emission_.hidden_bias = reg.add("emit.hidden_bias", Matrix::Zero(1, he));
    emission_.out = reg.add("emit.out", uniform_matrix(he, K, weight_bound, rng));
    emission_.transition = reg.add("crf.transition", Matrix::Zero(K, K));
    if (config_.start_stop) {
        emission_.start = reg.add("crf.start", Matrix::Zero(1, K));
        emission_.stop = reg.add("crf.stop", Matrix::Zero(1, K));
    }
}

CrfAsnModel::Forward CrfAsnModel::forward(const ConversationIds& conv, const ForwardContext& ctx) const {
    Forward f;
    f.encoded = encoder_.encode(conv, ctx);
    ad::Tensor finals = ad::dropout(f.encoded.final, ctx.dropout, ctx.rng);
    f.selection = selection_attention(finals, selection_);
    f.potentials = compute_potentials(finals, f.selection.context, emission_);
    return f;
}

ad::Tensor CrfAsnModel::nll(const ConversationIds& conv, const ForwardContext& ctx) const {
    for (int a : conv.acts)
        if (a < 0) throw ValidationError("conversation '" + conv.id + "' has unlabeled utterances");
    const auto f = forward(conv, ctx);
    return ad::scale(sequence_log_prob(f.potentials, conv.acts), -1.0);
}

std::vector<int> CrfAsnModel::predict(const ConversationIds& conv) const {
    return crf::viterbi_decode(to_table(forward(conv).potentials)).labels;
}

void CrfAsnModel::set_word_embeddings(const Matrix& table) {
    auto& p = params_->at("embed.word");
    if (table.rows() != p.tensor.rows() || table.cols() != p.tensor.cols())
        throw ValidationError("word embedding table has shape " + std::to_string(table.rows()) + "x" +
                              std::to_string(table.cols()) + ", expected " + p.tensor.shape_string());
    p.tensor.mutable_value() = table;
    for (int r : p.frozen_rows) p.tensor.mutable_value().row(r).setZero();
    p.shadow = p.tensor.value();
}

json CrfAsnModel::metadata() const {
    return json{{"format", format_name}, {"config", model_config_to_json(config_)}, {"vocab", vocab_to_json(vocab_)}};
}

void CrfAsnModel::save(const std::filesystem::path& path, bool shadows) const {
    save_checkpoint(path, *params_, metadata(), shadows);
}

CrfAsnModel CrfAsnModel::load(const std::filesystem::path& path) {
    const auto ck = read_checkpoint(path);
    if (ck.metadata.value("format", std::string{}) != format_name)
        throw ValidationError("checkpoint " + path.string() + " does not hold a model");
    CrfAsnModel m(vocab_from_json(ck.metadata.at("vocab")), model_config_from_json(ck.metadata.at("config")), 0);
    apply_checkpoint(ck, m.params());
    return m;
}

}  // namespace crfasn
