#include "crfasn/eval.hpp"

namespace crfasn {

using nlohmann::json;

namespace {

void check_aligned(const LabeledSequence& s) {
    if (s.predicted.size() != s.gold.size())
        throw ValidationError("conversation '" + s.id + "': " + std::to_string(s.predicted.size()) +
                              " predictions for " + std::to_string(s.gold.size()) + " gold labels");
}

json matrix_json(const Matrix& m) {
    json rows = json::array();
    for (Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace

double accuracy(std::span<const LabeledSequence> seqs) {
    long correct = 0, total = 0;
    for (const auto& s : seqs) {
        check_aligned(s);
        for (std::size_t t = 0; t < s.gold.size(); ++t) correct += s.predicted[t] == s.gold[t];
        total += static_cast<long>(s.gold.size());
    }
    if (total == 0) throw ValidationError("accuracy of an empty set");
    return static_cast<double>(correct) / static_cast<double>(total);
}

EvalReport confusion(std::span<const LabeledSequence> seqs, const std::vector<std::string>& labels) {
    const int K = static_cast<int>(labels.size());
    EvalReport r;
    r.confusion = Eigen::MatrixXi::Zero(K, K);
    for (const auto& s : seqs) {
        check_aligned(s);
        for (std::size_t t = 0; t < s.gold.size(); ++t) {
            const int g = s.gold[t], p = s.predicted[t];
            if (g < 0 || g >= K || p < 0 || p >= K)
                throw ValidationError("conversation '" + s.id + "': label id out of range");
            ++r.confusion(g, p);
        }
        r.total_utterances += static_cast<long>(s.gold.size());
    }
    r.accuracy = r.total_utterances ? static_cast<double>(r.confusion.trace()) / static_cast<double>(r.total_utterances)
                                    : 0.0;
    r.normalized_rows = Eigen::MatrixXd::Zero(K, K);
    for (int k = 0; k < K; ++k) {
        LabelStats st;
        st.label = labels[static_cast<std::size_t>(k)];
        st.support = r.confusion.row(k).sum();
        st.predicted = r.confusion.col(k).sum();
        const double hit = r.confusion(k, k);
        st.recall = st.support ? hit / static_cast<double>(st.support) : 0.0;
        st.precision = st.predicted ? hit / static_cast<double>(st.predicted) : 0.0;
        if (st.support) r.normalized_rows.row(k) = r.confusion.row(k).cast<double>() / static_cast<double>(st.support);
        r.per_label.push_back(std::move(st));
    }
    return r;
}

json report_to_json(const EvalReport& r) {
    json labels = json::array();
    for (const auto& s : r.per_label)
        labels.push_back({{"label", s.label},
                          {"support", s.support},
                          {"predicted", s.predicted},
                          {"precision", s.precision},
                          {"recall", s.recall}});
    json counts = json::array();
    for (Index i = 0; i < r.confusion.rows(); ++i) {
        json row = json::array();
        for (Index j = 0; j < r.confusion.cols(); ++j) row.push_back(r.confusion(i, j));
        counts.push_back(std::move(row));
    }
    return json{{"accuracy", r.accuracy},
                {"total_utterances", r.total_utterances},
                {"per_label", std::move(labels)},
                {"confusion", std::move(counts)},
                {"normalized_rows", matrix_json(r.normalized_rows)}};
}

std::vector<LabeledSequence> predict_labeled(const CrfAsnModel& model, const std::vector<Conversation>& convs) {
    std::vector<LabeledSequence> out;
    out.reserve(convs.size());
    for (const auto& c : convs) {
        const auto ids = encode(c, model.vocab(), true);
        out.push_back({c.id, model.predict(ids), ids.acts});
    }
    return out;
}

json export_attention(const Conversation& conv, const CrfAsnModel& model) {
    const auto& acts = model.vocab().acts;
    for (const auto& u : conv.utterances)
        if (u.act && !acts.find(*u.act))
            throw ValidationError("conversation '" + conv.id + "' uses act '" + *u.act + "' unknown to the model");
    const auto ids = encode(conv, model.vocab(), false);
    const auto f = model.forward(ids);
    const auto table = to_table(f.potentials);
    const auto marg = crf::forward_backward(table);
    const auto path = crf::viterbi_decode(table);

    json edges = json::array();
    for (const auto& e : marg.edge) edges.push_back(matrix_json(e));
    json hops = json::array();
    for (const auto& p : f.encoded.attention) hops.push_back(matrix_json(p.value()));
    json gamma = json::array();
    for (Index i = 0; i < f.selection.gamma.rows(); ++i) gamma.push_back(f.selection.gamma.value()(i, 0));
    json labels = json::array();
    for (int y : path.labels) labels.push_back(acts.symbol(y));

    return json{{"version", attention_schema_version},
                {"id", conv.id},
                {"labels", acts.symbols()},
                {"log_partition", marg.log_z},
                {"node_marginals", matrix_json(marg.node)},
                {"edge_marginals", std::move(edges)},
                {"selection_gamma", std::move(gamma)},
                {"memory_attention", std::move(hops)},
                {"viterbi", {{"path", path.labels}, {"labels", std::move(labels)}, {"score", path.score}}}};
}

}  // namespace crfasn
