#include "crfasn/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>

#include "crfasn/kvconfig.hpp"

namespace crfasn {

void TrainConfig::validate() const {
    if (!(dropout >= 0 && dropout < 1)) throw ValidationError("dropout must be in [0, 1)");
    if (!(ema_decay > 0 && ema_decay < 1)) throw ValidationError("ema_decay must be in (0, 1)");
    if (l2 < 0) throw ValidationError("l2 must be nonnegative");
    if (lr <= 0) throw ValidationError("lr must be positive");
    if (max_batch < 1 || patience < 1 || max_epochs < 1 || hops < 1)
        throw ValidationError("max_batch, patience, max_epochs and hops must be positive");
    if (d != 2 * d_u) throw ValidationError("d must equal 2 * d_u");
    if (d_u < 1 || d_p < 1 || d_n < 1 || word_dim < 1 || char_dim < 1 || char_filters < 3)
        throw ValidationError("dimensions must be positive (char_filters >= 3)");
}

ModelConfig TrainConfig::model_config() const {
    ModelConfig m;
    m.encoder.word_dim = word_dim;
    m.encoder.char_dim = char_dim;
    m.encoder.char_widths = {2, 3, 4};
    // Split the filters across widths, remainder to the narrowest.
    const int base = char_filters / 3;
    m.encoder.char_filters = {char_filters - 2 * base, base, base};
    m.encoder.pos_dim = d_p;
    m.encoder.ner_dim = d_n;
    m.encoder.utt_hidden = d_u;
    m.encoder.hops = hops;
    m.selection_hidden = selection_hidden;
    m.emission_hidden = emission_hidden;
    m.start_stop = start_stop;
    return m;
}

TrainConfig parse_train_config(std::istream& in) {
    TrainConfig c;
    for (const auto& kv : parse_key_values(in)) {
        const auto& k = kv.key;
        auto flag = [&] {
            const long v = parse_integer(kv);
            if (v != 0 && v != 1) throw ParseError("'" + k + "' expects 0 or 1", kv.line);
            return v == 1;
        };
        if (k == "lr") c.lr = parse_real(kv);
        else if (k == "l2") c.l2 = parse_real(kv);
        else if (k == "dropout") c.dropout = parse_real(kv);
        else if (k == "max_batch") c.max_batch = static_cast<int>(parse_integer(kv));
        else if (k == "patience") c.patience = static_cast<int>(parse_integer(kv));
        else if (k == "ema_decay") c.ema_decay = parse_real(kv);
        else if (k == "ema_warmup") c.ema_warmup = flag();
        else if (k == "hops") c.hops = static_cast<int>(parse_integer(kv));
        else if (k == "d") c.d = static_cast<int>(parse_integer(kv));
        else if (k == "d_u") c.d_u = static_cast<int>(parse_integer(kv));
        else if (k == "d_p") c.d_p = static_cast<int>(parse_integer(kv));
        else if (k == "d_n") c.d_n = static_cast<int>(parse_integer(kv));
        else if (k == "word_dim") c.word_dim = static_cast<int>(parse_integer(kv));
        else if (k == "char_dim") c.char_dim = static_cast<int>(parse_integer(kv));
        else if (k == "char_filters") c.char_filters = static_cast<int>(parse_integer(kv));
        else if (k == "selection_hidden") c.selection_hidden = static_cast<int>(parse_integer(kv));
        else if (k == "emission_hidden") c.emission_hidden = static_cast<int>(parse_integer(kv));
        else if (k == "clip_norm") c.clip_norm = parse_real(kv);
        else if (k == "start_stop") c.start_stop = flag();
        else if (k == "min_count") c.min_count = static_cast<int>(parse_integer(kv));
        else if (k == "seed") c.seed = static_cast<std::uint64_t>(parse_integer(kv));
        else if (k == "max_epochs") c.max_epochs = static_cast<int>(parse_integer(kv));
        else if (k == "embeddings") c.embeddings = kv.value;
        else throw ParseError("unknown config key '" + k + "'", kv.line);
    }
    c.validate();
    return c;
}

TrainConfig parse_train_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return parse_train_config(in);
}

nlohmann::json epoch_to_json(const EpochRecord& r) {
    return nlohmann::json{{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_accuracy", r.val_accuracy},
                          {"seconds", r.seconds}};
}

ad::Tensor compute_loss(const CrfAsnModel& model, std::span<const ConversationIds* const> batch, const TrainConfig& cfg,
                        std::mt19937_64* dropout_rng) {
    if (batch.empty()) throw std::invalid_argument("compute_loss: empty batch");
    const ForwardContext ctx{dropout_rng ? cfg.dropout : 0.0, dropout_rng};
    std::vector<ad::Tensor> terms;
    terms.reserve(batch.size() + 1);
    for (const auto* conv : batch) terms.push_back(model.nll(*conv, ctx));
    ad::Tensor loss = ad::sum(ad::concat(terms, 0));
    if (cfg.l2 > 0) loss = ad::add(loss, ad::scale(model.params().squared_norm(), cfg.l2));
    return loss;
}

void adagrad_step(ParamRegistry& params, double lr) {
    for (auto& p : params.entries()) {
        if (!p.tensor.has_grad()) continue;
        const Matrix& g = p.tensor.grad();
        if (!g.allFinite()) throw std::runtime_error("non-finite gradient in parameter '" + p.name + "'");
        Matrix& v = p.tensor.mutable_value();
        for (Index i = 0; i < g.size(); ++i) {
            const double gi = g.data()[i];
            if (gi == 0.0) continue;
            double& acc = p.accumulator.data()[i];
            acc += gi * gi;
            v.data()[i] -= lr * gi / std::sqrt(std::max(acc, 1e-12));
        }
    }
}

void ema_update(ParamRegistry& params, double decay) {
    for (auto& p : params.entries()) p.shadow = decay * p.shadow + (1.0 - decay) * p.tensor.value();
}

double clip_gradients(ParamRegistry& params, double max_norm) {
    const double norm = params.grad_norm();
    if (max_norm > 0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (auto& p : params.entries())
            if (p.tensor.has_grad()) p.tensor.mutable_grad() *= s;
    }
    return norm;
}

std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> lengths, int max_batch,
                                                   std::mt19937_64& rng) {
    if (max_batch < 1) throw std::invalid_argument("max_batch must be positive");
    std::map<std::size_t, std::vector<std::size_t>> buckets;
    for (std::size_t i = 0; i < lengths.size(); ++i) buckets[lengths[i]].push_back(i);
    std::vector<std::vector<std::size_t>> batches;
    for (auto& [len, members] : buckets) {
        std::shuffle(members.begin(), members.end(), rng);
        for (std::size_t s = 0; s < members.size(); s += static_cast<std::size_t>(max_batch)) {
            const auto e = std::min(members.size(), s + static_cast<std::size_t>(max_batch));
            batches.emplace_back(members.begin() + static_cast<long>(s), members.begin() + static_cast<long>(e));
        }
    }
    std::shuffle(batches.begin(), batches.end(), rng);
    return batches;
}

bool EarlyStopping::update(double score) {
    ++epoch_;
    if (score > best_) {
        best_ = score;
        best_epoch_ = epoch_;
        since_best_ = 0;
        return true;
    }
    ++since_best_;
    return false;
}

double evaluate_accuracy(const CrfAsnModel& model, std::span<const ConversationIds> data) {
    long correct = 0, total = 0;
    for (const auto& conv : data) {
        const auto pred = model.predict(conv);
        for (std::size_t t = 0; t < pred.size(); ++t) {
            correct += pred[t] == conv.acts[t];
            ++total;
        }
    }
    return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

TrainResult train_loop(const std::vector<Conversation>& train, const std::vector<Conversation>& valid,
                       const TrainConfig& cfg, const TrainOptions& opts) {
    cfg.validate();
    if (train.empty()) throw ValidationError("training set is empty");
    if (valid.empty()) throw ValidationError("validation set is empty");

    Vocab vocab = build_vocab(train, cfg.min_count);
    const auto train_ids = encode_all(train, vocab, true);
    const auto valid_ids = encode_all(valid, vocab, true);

    CrfAsnModel model(vocab, cfg.model_config(), cfg.seed);
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    if (!cfg.embeddings.empty())
        model.set_word_embeddings(load_pretrained_embeddings(cfg.embeddings, vocab.words, cfg.word_dim, rng));
    auto& params = model.params();
    params.reset_shadows();

    std::vector<std::size_t> lengths;
    for (const auto& c : train_ids) lengths.push_back(c.size());

    std::ofstream history_file;
    if (opts.history) {
        history_file.open(*opts.history);
        if (!history_file) throw std::runtime_error("cannot write " + opts.history->string());
    }

    TrainResult result{std::move(model), {}, {}};
    CrfAsnModel& m = result.model;
    TrainState& state = result.state;
    EarlyStopping stopper(cfg.patience);
    std::vector<Matrix> best;

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        state.epoch = epoch;
        double epoch_loss = 0;
        for (const auto& batch : make_batches(lengths, cfg.max_batch, rng)) {
            std::vector<const ConversationIds*> members;
            for (auto i : batch) members.push_back(&train_ids[i]);
            params.zero_grad();
            ad::Tape tape;
            {
                ad::TapeScope scope(tape);
                ad::Tensor loss = compute_loss(m, members, cfg, cfg.dropout > 0 ? &rng : nullptr);
                epoch_loss += loss.item();
                tape.backward(loss);
            }
            params.mask_frozen();
            clip_gradients(params, cfg.clip_norm);
            adagrad_step(params, cfg.lr);
            ++state.step;
            const double t = static_cast<double>(state.step);
            ema_update(params, cfg.ema_warmup ? std::min(cfg.ema_decay, (1.0 + t) / (10.0 + t)) : cfg.ema_decay);
            if (opts.on_step) opts.on_step(m, state);
        }

        double acc = 0;
        {
            ShadowScope shadows(params);
            acc = evaluate_accuracy(m, valid_ids);
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        EpochRecord rec{epoch, epoch_loss, acc, secs};
        result.history.push_back(rec);
        if (history_file) history_file << epoch_to_json(rec).dump() << '\n' << std::flush;
        if (opts.log)
            *opts.log << "epoch " << epoch << " loss " << epoch_loss << " val_acc " << acc << " (" << secs << "s)\n";

        if (stopper.update(acc)) {
            best.clear();
            for (const auto& p : params.entries()) best.push_back(p.shadow);
            state.best_accuracy = acc;
            if (opts.checkpoint) save_checkpoint(*opts.checkpoint, params, m.metadata(), true);
        }
        state.epochs_since_improvement = epoch - stopper.best_epoch();
        if (stopper.should_stop()) break;
    }

    for (std::size_t i = 0; i < best.size(); ++i) {
        auto& p = params.entries()[i];
        p.tensor.mutable_value() = best[i];
        p.shadow = best[i];
    }
    return result;
}

}  // namespace crfasn
