#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "crfasn/selfcheck.hpp"
#include "crfasn/synthetic.hpp"
#include "crfasn/train.hpp"
#include "support.hpp"

using namespace crfasn;
using namespace test_support;

namespace {

const char* small_spec = R"(
acts = open ask reply close
self_transition = 0.4
phrase.open = 1 hi there
phrase.open = 1 hello
phrase.ask = 1 what is it
phrase.ask = 1 why not
phrase.reply = 1 because
phrase.reply = 1 it is fine
phrase.close = 1 bye
phrase.close = 1 see you
phrase.open = 0.5 okay
phrase.reply = 0.5 okay
num_conversations = 40
min_len = 3
max_len = 6
seed = 5
)";

std::vector<Conversation> small_corpus() {
    std::istringstream in(small_spec);
    return generate_synthetic(parse_synthetic_spec(in)).first;
}

TrainConfig small_config() {
    TrainConfig c = toy_config();
    c.start_stop = false;
    c.l2 = 1e-5;
    c.lr = 0.05;
    c.max_batch = 8;
    c.max_epochs = 3;
    c.dropout = 0.2;
    return c;
}

TrainConfig parse(const std::string& text) {
    std::istringstream in(text);
    return parse_train_config(in);
}

std::vector<const ConversationIds*> pointers(const std::vector<ConversationIds>& v) {
    std::vector<const ConversationIds*> out;
    for (const auto& c : v) out.push_back(&c);
    return out;
}

}  // namespace

TEST_CASE("default hyperparameters") {
    const TrainConfig c;
    CHECK(c.lr == 0.005);
    CHECK(c.dropout == 0.2);
    CHECK(c.max_batch == 48);
    CHECK(c.patience == 5);
    CHECK(c.ema_decay == 0.999);
    CHECK(c.hops == 1);
    CHECK(c.d == 128);
    CHECK(c.d_u == 64);
    CHECK(c.d_p == 16);
    CHECK(c.d_n == 16);
    CHECK_NOTHROW(c.validate());
}

TEST_CASE("training config files") {
    const auto c = parse("# comment\nlr = 0.01\nhops = 2\nd = 32\nd_u = 16\nstart_stop = 1\n");
    CHECK(c.lr == 0.01);
    CHECK(c.hops == 2);
    CHECK(c.d == 32);
    CHECK(c.start_stop);
    CHECK(c.max_batch == 48);

    try {
        parse("lr = 0.01\nlearning_rate = 3\n");
        FAIL("unknown key accepted");
    } catch (const ParseError& e) {
        CHECK(e.line == 2);
        CHECK(std::string(e.what()).find("learning_rate") != std::string::npos);
    }
    CHECK_THROWS_AS(parse("d = 100\n"), ValidationError);
    CHECK_THROWS_AS(parse("dropout = 1\n"), ValidationError);
    CHECK_THROWS_AS(parse("lr = 0\n"), ValidationError);
    CHECK_THROWS_AS(parse("start_stop = 2\n"), ParseError);
    CHECK_THROWS_AS(parse("lr = fast\n"), ParseError);
}

TEST_CASE("filters are split across the three widths") {
    TrainConfig c;
    c.char_filters = 100;
    const auto m = c.model_config();
    CHECK(m.encoder.char_widths == std::vector<int>{2, 3, 4});
    CHECK(m.encoder.char_filters == std::vector<int>{34, 33, 33});
}

TEST_CASE("loss of a model with zero label scores") {
    const auto convs = std::vector<Conversation>{conversation("z", {{"yes", "ok"}, {"no", "fine then"}})};
    const Vocab vocab = build_vocab(convs);
    const auto ids = encode_all(convs, vocab, true);
    TrainConfig cfg = toy_config();
    cfg.start_stop = false;
    CrfAsnModel model(vocab, cfg.model_config(), 3);
    for (const char* name : {"emit.act_embed", "emit.out", "crf.transition"})
        model.params().at(name).tensor.mutable_value().setZero();

    cfg.l2 = 0;
    const auto batch = pointers(ids);
    const double nll = compute_loss(model, batch, cfg, nullptr).item();
    CHECK(nll == doctest::Approx(2 * std::log(2.0)).epsilon(1e-12));

    cfg.l2 = 0.01;
    double squares = 0;
    for (const auto& p : model.params().entries()) squares += p.tensor.value().squaredNorm();
    CHECK(compute_loss(model, batch, cfg, nullptr).item() == doctest::Approx(nll + 0.01 * squares).epsilon(1e-12));
}

TEST_CASE("adagrad update examples") {
    ParamRegistry reg;
    auto w = reg.add("w", Matrix::Zero(1, 3));
    auto set_grad = [&](double a, double b, double c) {
        w.mutable_grad() = Matrix(1, 3);
        w.mutable_grad() << a, b, c;
    };

    set_grad(1.0, 0.0, -2.0);
    adagrad_step(reg, 0.005);
    CHECK(w.value()(0, 0) == doctest::Approx(-0.005).epsilon(1e-15));
    CHECK(w.value()(0, 1) == 0.0);
    CHECK(reg.at("w").accumulator(0, 1) == 0.0);
    CHECK(w.value()(0, 2) == doctest::Approx(0.005).epsilon(1e-15));

    set_grad(1.0, 0.0, 0.0);
    adagrad_step(reg, 0.005);
    CHECK(w.value()(0, 0) == doctest::Approx(-0.005 - 0.005 / std::sqrt(2.0)).epsilon(1e-15));
    CHECK(reg.at("w").accumulator(0, 0) == 2.0);
    CHECK(w.value()(0, 2) == doctest::Approx(0.005).epsilon(1e-15));
    CHECK(reg.at("w").accumulator(0, 2) == 4.0);

    set_grad(std::numeric_limits<double>::quiet_NaN(), 0.0, 0.0);
    try {
        adagrad_step(reg, 0.005);
        FAIL("NaN gradient accepted");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("'w'") != std::string::npos);
    }
}

TEST_CASE("adagrad steps never exceed the learning rate") {
    std::mt19937_64 rng(4);
    ParamRegistry reg;
    auto w = reg.add("w", Matrix::Zero(4, 4));
    for (int step = 0; step < 50; ++step) {
        const Matrix before = w.value();
        const Matrix acc = reg.at("w").accumulator;
        w.mutable_grad() = uniform_matrix(4, 4, 10.0, rng);
        adagrad_step(reg, 0.1);
        CHECK((w.value() - before).cwiseAbs().maxCoeff() <= 0.1 + 1e-15);
        CHECK((reg.at("w").accumulator.array() >= acc.array()).all());
    }
}

TEST_CASE("exponential moving average") {
    ParamRegistry reg;
    auto w = reg.add("w", Matrix::Zero(1, 1));
    w.mutable_value()(0, 0) = 1.0;
    ema_update(reg, 0.999);
    CHECK(reg.at("w").shadow(0, 0) == doctest::Approx(0.001).epsilon(1e-14));
    for (int k = 2; k <= 500; ++k) ema_update(reg, 0.999);
    CHECK(reg.at("w").shadow(0, 0) == doctest::Approx(1.0 - std::pow(0.999, 500)).epsilon(1e-12));
}

TEST_CASE("global norm clipping") {
    ParamRegistry reg;
    auto a = reg.add("a", Matrix::Zero(1, 2));
    auto b = reg.add("b", Matrix::Zero(1, 1));
    a.mutable_grad() = (Matrix(1, 2) << 6.0, 0.0).finished();
    b.mutable_grad() = (Matrix(1, 1) << 8.0).finished();
    CHECK(clip_gradients(reg, 5.0) == doctest::Approx(10.0));
    CHECK(a.grad()(0, 0) == doctest::Approx(3.0));
    CHECK(b.grad()(0, 0) == doctest::Approx(4.0));
    CHECK(clip_gradients(reg, 5.0) == doctest::Approx(5.0));
    CHECK(a.grad()(0, 0) == doctest::Approx(3.0));
}

TEST_CASE("length-bucketed batches") {
    std::mt19937_64 rng(6);
    const std::vector<std::size_t> same(100, 7);
    std::multiset<std::size_t> sizes;
    for (const auto& b : make_batches(same, 48, rng)) sizes.insert(b.size());
    CHECK(sizes == std::multiset<std::size_t>{4, 48, 48});

    std::vector<std::size_t> lengths;
    for (int i = 0; i < 300; ++i) lengths.push_back(1 + rng() % 9);
    std::vector<int> seen(lengths.size(), 0);
    for (const auto& b : make_batches(lengths, 16, rng)) {
        CHECK(!b.empty());
        CHECK(b.size() <= 16);
        for (auto i : b) {
            ++seen[i];
            CHECK(lengths[i] == lengths[b.front()]);
        }
    }
    CHECK(std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; }));
}

TEST_CASE("early stopping") {
    EarlyStopping stop(5);
    const std::vector<double> scores{0.70, 0.69, 0.70, 0.68, 0.65, 0.66, 0.90};
    int epoch = 0;
    for (double s : scores) {
        ++epoch;
        stop.update(s);
        if (stop.should_stop()) break;
    }
    CHECK(epoch == 6);
    CHECK(stop.best_epoch() == 1);
    CHECK(stop.best() == 0.70);
}

TEST_CASE("one optimizer step lowers the loss") {
    const auto convs = toy_conversations();
    const Vocab vocab = build_vocab(convs);
    const auto ids = encode_all(convs, vocab, true);
    const TrainConfig cfg = toy_config();
    CrfAsnModel model(vocab, cfg.model_config(), 9);
    const auto batch = pointers(ids);

    model.params().zero_grad();
    double before = 0;
    ad::Tape tape;
    {
        ad::TapeScope scope(tape);
        auto loss = compute_loss(model, batch, cfg, nullptr);
        before = loss.item();
        tape.backward(loss);
    }
    CHECK(std::isfinite(before));
    CHECK(before > 0);
    adagrad_step(model.params(), 0.01);
    CHECK(compute_loss(model, batch, cfg, nullptr).item() < before);
}

TEST_CASE("training rejects empty splits") {
    const auto convs = small_corpus();
    CHECK_THROWS_AS(train_loop(convs, {}, small_config()), ValidationError);
    CHECK_THROWS_AS(train_loop({}, convs, small_config()), ValidationError);
}

TEST_CASE("padding rows stay zero and accumulators grow during training") {
    const auto convs = small_corpus();
    const std::vector<Conversation> train(convs.begin(), convs.begin() + 30), valid(convs.begin() + 30, convs.end());
    TrainConfig cfg = small_config();
    cfg.max_batch = 2;
    cfg.max_epochs = 10;
    cfg.patience = 100;

    long steps = 0;
    std::vector<Matrix> prev_acc;
    bool monotone = true, pad_zero = true, frozen_seen = false;
    TrainOptions opts;
    opts.on_step = [&](const CrfAsnModel& m, const TrainState& s) {
        steps = s.step;
        if (s.step > 100) return;
        const auto& entries = m.params().entries();
        for (std::size_t i = 0; i < entries.size(); ++i) {
            const auto& p = entries[i];
            for (int r : p.frozen_rows) {
                frozen_seen = true;
                pad_zero = pad_zero && p.tensor.value().row(r).isZero(0) && p.shadow.row(r).isZero(0);
            }
            if (prev_acc.size() == entries.size())
                monotone = monotone && (p.accumulator.array() >= prev_acc[i].array()).all();
        }
        prev_acc.clear();
        for (const auto& p : entries) prev_acc.push_back(p.accumulator);
    };
    train_loop(train, valid, cfg, opts);
    CHECK(steps >= 100);
    CHECK(frozen_seen);
    CHECK(pad_zero);
    CHECK(monotone);
}

TEST_CASE("training is reproducible and keeps the best shadows") {
    const auto convs = small_corpus();
    const std::vector<Conversation> train(convs.begin(), convs.begin() + 30), valid(convs.begin() + 30, convs.end());
    TempDir dir("train");

    auto run = [&](const std::string& tag) {
        TrainOptions opts;
        opts.checkpoint = dir / (tag + ".ckpt");
        opts.history = dir / (tag + ".jsonl");
        return train_loop(train, valid, small_config(), opts);
    };
    const auto a = run("a");
    const auto b = run("b");

    REQUIRE(a.history.size() == 3);
    REQUIRE(b.history.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(a.history[i].epoch == static_cast<int>(i) + 1);
        CHECK(a.history[i].train_loss == b.history[i].train_loss);
        CHECK(a.history[i].val_accuracy == b.history[i].val_accuracy);
        CHECK(std::isfinite(a.history[i].train_loss));
    }
    CHECK(read_file(dir / "a.ckpt") == read_file(dir / "b.ckpt"));

    std::istringstream lines(read_file(dir / "a.jsonl"));
    int count = 0;
    for (std::string line; std::getline(lines, line); ++count) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j.at("epoch") == count + 1);
        CHECK(j.contains("train_loss"));
        CHECK(j.contains("val_accuracy"));
    }
    CHECK(count == 3);

    const Vocab& vocab = a.model.vocab();
    const auto valid_ids = encode_all(valid, vocab, true);
    CHECK(evaluate_accuracy(a.model, valid_ids) == a.state.best_accuracy);
    const auto loaded = CrfAsnModel::load(dir / "a.ckpt");
    for (const auto& conv : valid_ids) CHECK(loaded.predict(conv) == a.model.predict(conv));
}
