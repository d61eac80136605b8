#include "crfasn/baseline.hpp"

#include <algorithm>
#include <random>

#include "crfasn/encoder.hpp"
#include "crfasn/train.hpp"

namespace crfasn {

int majority_label(std::span<const ConversationIds> train, int num_labels) {
    std::vector<long> counts(static_cast<std::size_t>(num_labels), 0);
    for (const auto& c : train)
        for (int a : c.acts)
            if (a >= 0 && a < num_labels) ++counts[static_cast<std::size_t>(a)];
    return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

LogisticBaseline::LogisticBaseline(int vocab_size, int num_labels, const LogisticConfig& cfg) : cfg_(cfg) {
    std::mt19937_64 rng(cfg.seed);
    embed_ = params_.add("logistic.embed", uniform_matrix(vocab_size, cfg.dim, 0.05, rng), {SymbolTable::pad});
    weight_ = params_.add("logistic.weight", uniform_matrix(cfg.dim, num_labels, 0.08, rng));
    bias_ = params_.add("logistic.bias", Matrix::Zero(1, num_labels));
}

ad::Tensor LogisticBaseline::logits(const UtteranceIds& utt) const {
    ad::Tensor rows = ad::gather(embed_, utt.words);
    ad::Tensor ones = ad::Tensor::constant(Matrix::Constant(1, rows.rows(), 1.0 / static_cast<double>(rows.rows())));
    return ad::add(ad::matmul(ad::matmul(ones, rows), weight_), bias_);
}

ad::Tensor LogisticBaseline::loss(std::span<const UtteranceIds* const> utts, std::span<const int> labels) const {
    std::vector<ad::Tensor> terms;
    for (std::size_t i = 0; i < utts.size(); ++i) {
        ad::Tensor z = logits(*utts[i]);
        const std::pair<Index, Index> gold[] = {{0, labels[i]}};
        terms.push_back(ad::sub(ad::logsumexp(z, 1), ad::pick(z, gold)));
    }
    ad::Tensor total = ad::sum(ad::concat(terms, 0));
    if (cfg_.l2 > 0) total = ad::add(total, ad::scale(params_.squared_norm(), cfg_.l2));
    return total;
}

void LogisticBaseline::fit(std::span<const ConversationIds> train) {
    std::vector<const UtteranceIds*> utts;
    std::vector<int> labels;
    for (const auto& c : train)
        for (std::size_t t = 0; t < c.size(); ++t) {
            if (c.acts[t] < 0) continue;
            utts.push_back(&c.utterances[t]);
            labels.push_back(c.acts[t]);
        }
    if (utts.empty()) throw ValidationError("logistic baseline: no labeled utterances");
    std::mt19937_64 rng(cfg_.seed + 1);
    std::vector<std::size_t> order(utts.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    params_.reset_shadows();
    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(cfg_.batch)) {
            const auto e = std::min(order.size(), s + static_cast<std::size_t>(cfg_.batch));
            std::vector<const UtteranceIds*> bu;
            std::vector<int> bl;
            for (std::size_t k = s; k < e; ++k) {
                bu.push_back(utts[order[k]]);
                bl.push_back(labels[order[k]]);
            }
            params_.zero_grad();
            ad::Tape tape;
            {
                ad::TapeScope scope(tape);
                tape.backward(loss(bu, bl));
            }
            params_.mask_frozen();
            adagrad_step(params_, cfg_.lr);
        }
    }
}

int LogisticBaseline::predict(const UtteranceIds& utt) const {
    const Matrix z = logits(utt).value();
    Index best = 0;
    z.row(0).maxCoeff(&best);
    return static_cast<int>(best);
}

std::vector<int> LogisticBaseline::predict(const ConversationIds& conv) const {
    std::vector<int> out;
    out.reserve(conv.size());
    for (const auto& u : conv.utterances) out.push_back(predict(u));
    return out;
}

}  // namespace crfasn
