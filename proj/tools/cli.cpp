#include "cli.hpp"

#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>

#include <CLI11.hpp>

#include "crfasn/eval.hpp"
#include "crfasn/oracle.hpp"
#include "crfasn/selfcheck.hpp"
#include "crfasn/synthetic.hpp"
#include "crfasn/train.hpp"

namespace crfasn::cli {

namespace {

struct Flags {
    std::string config, train, valid, test, checkpoint, out, spec;
    std::uint64_t seed = 42;
    int trials = 200;
    int max_n = 6;
    int max_labels = 4;
};

constexpr int selection_max_n = 10;
constexpr double identity_tol = 1e-8;

std::ofstream open_out(const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    return f;
}

int cmd_train(const Flags& f, bool seed_given, std::ostream& out) {
    TrainConfig cfg = f.config.empty() ? TrainConfig{} : parse_train_config(std::filesystem::path(f.config));
    if (seed_given || f.config.empty()) cfg.seed = f.seed;
    TrainOptions opts;
    opts.checkpoint = f.checkpoint;
    opts.history = f.out.empty() ? f.checkpoint + ".history.jsonl" : f.out;
    opts.log = &out;
    auto result = train_loop(parse_jsonl(f.train), parse_jsonl(f.valid), cfg, opts);
    out << "best validation accuracy " << result.state.best_accuracy << " after " << result.history.size()
        << " epochs; checkpoint " << f.checkpoint << "\n";
    return ok;
}

int cmd_eval(const Flags& f, std::ostream& out) {
    const auto model = CrfAsnModel::load(f.checkpoint);
    const auto seqs = predict_labeled(model, parse_jsonl(f.test));
    const auto report = confusion(seqs, model.vocab().acts.symbols());
    const auto j = report_to_json(report);
    if (!f.out.empty()) open_out(f.out) << j.dump(2) << '\n';
    out << "accuracy " << std::setprecision(6) << report.accuracy << " over " << report.total_utterances
        << " utterances\n";
    return ok;
}

int cmd_predict(const Flags& f, std::ostream& out) {
    const auto model = CrfAsnModel::load(f.checkpoint);
    auto convs = parse_jsonl(f.test);
    for (auto& c : convs) {
        const auto labels = model.predict(encode(c, model.vocab(), false));
        for (std::size_t t = 0; t < labels.size(); ++t) c.utterances[t].act = model.vocab().acts.symbol(labels[t]);
    }
    if (f.out.empty())
        write_jsonl(out, convs);
    else
        write_jsonl(std::filesystem::path(f.out), convs);
    return ok;
}

int cmd_gen_synthetic(const Flags& f, bool seed_given, std::ostream& out) {
    auto spec = parse_synthetic_spec(std::filesystem::path(f.spec));
    if (seed_given) spec.seed = f.seed;
    const auto [convs, generator] = generate_synthetic(spec);
    write_jsonl(std::filesystem::path(f.out), convs);
    const std::string gen_path = f.out + ".generator.json";
    open_out(gen_path) << generator.to_json().dump(2) << '\n';
    out << "wrote " << convs.size() << " conversations to " << f.out << " and generator model to " << gen_path << "\n";
    return ok;
}

int cmd_gradcheck(const Flags& f, std::ostream& out) {
    const auto r = run_gradient_suite(f.seed);
    for (const auto& e : r.report.entries)
        out << std::left << std::setw(28) << e.name << " checked " << std::setw(4) << e.checked << " max rel err "
            << e.max_rel_error << "\n";
    out << "max relative error " << r.report.max_rel_error << "\n";
    out << "dlogZ/dunary vs node marginals: max abs error " << r.marginal_identity_error << "\n";
    for (const auto& p : r.report.failing_params) out << "FAILED parameter " << p << "\n";
    for (const auto& op : r.report.failing_ops) out << "FAILED op " << op << "\n";
    const bool passed = r.report.passed && r.marginal_identity_error <= identity_tol;
    out << (passed ? "gradcheck passed\n" : "gradcheck FAILED\n");
    return passed ? ok : failure;
}

int cmd_export_attn(const Flags& f, std::ostream& out) {
    const auto model = CrfAsnModel::load(f.checkpoint);
    const auto convs = parse_jsonl(f.test);
    std::ofstream file;
    if (!f.out.empty()) file = open_out(f.out);
    std::ostream& sink = f.out.empty() ? out : file;
    for (const auto& c : convs) sink << export_attention(c, model).dump() << '\n';
    return ok;
}

int cmd_oracle_check(const Flags& f, std::ostream& out) {
    if (f.trials < 1 || f.max_n < 1 || f.max_labels < 1) throw ValidationError("trials, max-n and max-labels must be positive");
    const auto chain = oracle::run_chain_suite(f.trials, f.max_n, f.max_labels, f.seed);
    out << "chain suite: " << chain.passed << "/" << chain.trials << " passed (max logZ err " << chain.max_log_z_error
        << ", node " << chain.max_node_error << ", edge " << chain.max_edge_error << ", viterbi mismatches "
        << chain.viterbi_mismatches << ")\n";
    const auto sel = oracle::run_selection_suite(f.trials, selection_max_n, f.seed + 1);
    out << "selection suite: " << sel.passed << "/" << sel.trials << " passed (max gamma err " << sel.max_node_error
        << ")\n";
    return chain.passed == chain.trials && sel.passed == sel.trials ? ok : failure;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Dialogue act tagging with structured attention and a label CRF", "crfasn"};
    app.require_subcommand(1, 1);
    Flags f;

    auto seed_opt = [&](CLI::App* sub) { return sub->add_option("--seed", f.seed, "random seed")->default_val(42); };
    auto existing = [](CLI::App* sub, const std::string& name, std::string& target, const std::string& help) {
        return sub->add_option(name, target, help)->check(CLI::ExistingFile);
    };

    auto* train = app.add_subcommand("train", "train a model");
    existing(train, "--config", f.config, "key-value training config");
    existing(train, "--train", f.train, "training conversations (JSONL)")->required();
    existing(train, "--valid", f.valid, "validation conversations (JSONL)")->required();
    train->add_option("--checkpoint", f.checkpoint, "checkpoint to write")->required();
    train->add_option("--out", f.out, "history file (default <checkpoint>.history.jsonl)");
    auto* train_seed = seed_opt(train);

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on labeled data");
    existing(eval, "--checkpoint", f.checkpoint, "trained checkpoint")->required();
    existing(eval, "--test", f.test, "labeled conversations (JSONL)")->required();
    eval->add_option("--out", f.out, "report JSON");

    auto* predict = app.add_subcommand("predict", "label conversations");
    existing(predict, "--checkpoint", f.checkpoint, "trained checkpoint")->required();
    existing(predict, "--test", f.test, "conversations to label (JSONL)")->required();
    predict->add_option("--out", f.out, "labeled JSONL (default stdout)");

    auto* gen = app.add_subcommand("gen-synthetic", "generate a synthetic corpus");
    existing(gen, "--spec", f.spec, "synthetic corpus spec")->required();
    gen->add_option("--out", f.out, "corpus JSONL")->required();
    auto* gen_seed = seed_opt(gen);

    auto* grad = app.add_subcommand("gradcheck", "finite-difference check of the full loss on a toy model");
    seed_opt(grad);

    auto* exp = app.add_subcommand("export-attn", "export marginals and attention per conversation");
    existing(exp, "--checkpoint", f.checkpoint, "trained checkpoint")->required();
    existing(exp, "--test", f.test, "conversations (JSONL)")->required();
    exp->add_option("--out", f.out, "JSONL output (default stdout)");

    auto* orc = app.add_subcommand("oracle-check", "compare exact inference against enumeration");
    orc->add_option("--trials", f.trials, "random instances per suite")->default_val(200);
    orc->add_option("--max-n", f.max_n, "maximum chain length")->default_val(6);
    orc->add_option("--max-labels", f.max_labels, "maximum label count")->default_val(4);
    seed_opt(orc);

    std::vector<std::string> argv_storage{"crfasn"};
    argv_storage.insert(argv_storage.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& a : argv_storage) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? ok : usage_error;
    }

    try {
        if (train->parsed()) return cmd_train(f, train_seed->count() > 0, out);
        if (eval->parsed()) return cmd_eval(f, out);
        if (predict->parsed()) return cmd_predict(f, out);
        if (gen->parsed()) return cmd_gen_synthetic(f, gen_seed->count() > 0, out);
        if (grad->parsed()) return cmd_gradcheck(f, out);
        if (exp->parsed()) return cmd_export_attn(f, out);
        if (orc->parsed()) return cmd_oracle_check(f, out);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return failure;
    }
    return usage_error;
}

}  // namespace crfasn::cli
