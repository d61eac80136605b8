#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "crfasn/model.hpp"

namespace crfasn {

struct TrainConfig {
    double lr = 0.005;
    double l2 = 1e-5;
    double dropout = 0.2;
    int max_batch = 48;
    int patience = 5;
    double ema_decay = 0.999;
    /// Use min(ema_decay, (1 + t) / (10 + t)) at step t so early shadows track
    /// the parameters instead of their random initialization.
    bool ema_warmup = true;
    int hops = 1;
    int d = 128;
    int d_u = 64;
    int d_p = 16;
    int d_n = 16;
    int word_dim = 100;
    int char_dim = 16;
    int char_filters = 100;
    int selection_hidden = 64;
    int emission_hidden = 64;
    double clip_norm = 5.0;  // <= 0 disables clipping
    bool start_stop = false;
    int min_count = 1;
    std::uint64_t seed = 42;
    int max_epochs = 30;
    std::string embeddings;  // optional pretrained word vectors

    void validate() const;
    ModelConfig model_config() const;
};

/// Flat "key = value" file; keys are the TrainConfig field names.
TrainConfig parse_train_config(std::istream& in);
TrainConfig parse_train_config(const std::filesystem::path& path);

struct TrainState {
    int epoch = 0;
    long step = 0;
    double best_accuracy = -1;
    int epochs_since_improvement = 0;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0;
    double val_accuracy = 0;
    double seconds = 0;
};

nlohmann::json epoch_to_json(const EpochRecord& r);

/// Sum of per-conversation NLL plus l2 * ||params||^2.
ad::Tensor compute_loss(const CrfAsnModel& model, std::span<const ConversationIds* const> batch, const TrainConfig& cfg,
                        std::mt19937_64* dropout_rng);

/// accumulator += g^2; value -= lr * g / sqrt(max(accumulator, 1e-12)),
/// skipping elements with zero gradient. Throws on a non-finite gradient.
void adagrad_step(ParamRegistry& params, double lr);
/// shadow = decay * shadow + (1 - decay) * value.
void ema_update(ParamRegistry& params, double decay);
/// Rescales all gradients so their global norm is at most max_norm.
/// Returns the norm before clipping.
double clip_gradients(ParamRegistry& params, double max_norm);

/// Groups conversations of equal length into batches of at most max_batch.
/// Members and batch order are shuffled by `rng`.
std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> lengths, int max_batch,
                                                   std::mt19937_64& rng);

class EarlyStopping {
public:
    explicit EarlyStopping(int patience) : patience_(patience) {}
    /// Records an epoch's score; returns true when it is a new best.
    bool update(double score);
    bool should_stop() const { return since_best_ >= patience_; }
    double best() const { return best_; }
    int best_epoch() const { return best_epoch_; }

private:
    int patience_;
    double best_ = -std::numeric_limits<double>::infinity();
    int since_best_ = 0;
    int epoch_ = 0;
    int best_epoch_ = 0;
};

/// Per-utterance accuracy of `model` with its current parameter values.
double evaluate_accuracy(const CrfAsnModel& model, std::span<const ConversationIds> data);

struct TrainOptions {
    std::optional<std::filesystem::path> checkpoint;
    std::optional<std::filesystem::path> history;
    std::ostream* log = nullptr;
    /// Called after every optimizer step (used by tests).
    std::function<void(const CrfAsnModel&, const TrainState&)> on_step;
};

struct TrainResult {
    CrfAsnModel model;  // holds the best EMA shadows as its values
    std::vector<EpochRecord> history;
    TrainState state;
};

/// Builds the vocabulary from `train`, then trains with early stopping on
/// `valid` accuracy of the EMA shadows.
TrainResult train_loop(const std::vector<Conversation>& train, const std::vector<Conversation>& valid,
                       const TrainConfig& cfg, const TrainOptions& opts = {});

}  // namespace crfasn
