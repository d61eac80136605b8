#include "crfasn/synthetic.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "crfasn/crf_inference.hpp"
#include "crfasn/kvconfig.hpp"

namespace crfasn {

namespace {

// Floor for impossible events so decoding potentials stay finite.
constexpr double log_floor = -1e4;

double safe_log(double p) { return p > 0 ? std::max(std::log(p), log_floor) : log_floor; }

Eigen::RowVectorXd to_row(const std::vector<double>& v) {
    Eigen::RowVectorXd r(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) r(static_cast<Eigen::Index>(i)) = v[i];
    return r;
}

}  // namespace

void SyntheticSpec::validate() const {
    const auto K = static_cast<Eigen::Index>(acts.size());
    if (K < 1) throw ValidationError("synthetic spec needs at least one act");
    if (transition.rows() != K || transition.cols() != K)
        throw ValidationError("transition matrix must be " + std::to_string(K) + " x " + std::to_string(K));
    for (Eigen::Index i = 0; i < K; ++i) {
        if ((transition.row(i).array() < 0).any())
            throw ValidationError("transition row for '" + acts[static_cast<std::size_t>(i)] + "' has a negative entry");
        if (std::abs(transition.row(i).sum() - 1.0) > 1e-9)
            throw ValidationError("transition row for '" + acts[static_cast<std::size_t>(i)] + "' does not sum to 1");
    }
    if (initial.size() != 0) {
        if (initial.size() != K) throw ValidationError("initial distribution must have one entry per act");
        if ((initial.array() < 0).any() || std::abs(initial.sum() - 1.0) > 1e-9)
            throw ValidationError("initial distribution must be a probability vector");
    }
    if (phrases.size() != acts.size()) throw ValidationError("every act needs a phrase table");
    for (std::size_t a = 0; a < phrases.size(); ++a) {
        if (phrases[a].empty()) throw ValidationError("act '" + acts[a] + "' has no phrases");
        for (const auto& p : phrases[a]) {
            if (p.weight <= 0) throw ValidationError("phrase weights must be positive for act '" + acts[a] + "'");
            if (p.tokens.empty()) throw ValidationError("empty phrase for act '" + acts[a] + "'");
        }
    }
    if (num_conversations < 0) throw ValidationError("num_conversations must be nonnegative");
    if (min_len < 1 || min_len > max_len) throw ValidationError("need 1 <= min_len <= max_len");
}

Eigen::MatrixXd mixing_transition(const Eigen::RowVectorXd& pi, double s) {
    const auto K = pi.size();
    Eigen::MatrixXd P = (1.0 - s) * Eigen::VectorXd::Ones(K) * pi;
    P.diagonal().array() += s;
    return P;
}

Eigen::RowVectorXd stationary_distribution(const Eigen::MatrixXd& transition) {
    const auto K = transition.rows();
    Eigen::RowVectorXd pi = Eigen::RowVectorXd::Constant(K, 1.0 / static_cast<double>(K));
    for (int it = 0; it < 100000; ++it) {
        Eigen::RowVectorXd next = pi * transition;
        next /= next.sum();
        const double delta = (next - pi).cwiseAbs().maxCoeff();
        pi = next;
        if (delta < 1e-15) break;
    }
    return pi;
}

SyntheticSpec parse_synthetic_spec(std::istream& in) {
    const auto kvs = parse_key_values(in);
    SyntheticSpec spec;
    for (const auto& kv : kvs)
        if (kv.key == "acts") spec.acts = split_words(kv.value);
    if (spec.acts.empty()) throw ValidationError("synthetic spec must list 'acts'");
    const auto K = static_cast<Eigen::Index>(spec.acts.size());
    auto act_index = [&](const std::string& name, std::size_t line) {
        for (std::size_t a = 0; a < spec.acts.size(); ++a)
            if (spec.acts[a] == name) return static_cast<Eigen::Index>(a);
        throw ParseError("unknown act '" + name + "'", line);
    };

    spec.transition = Eigen::MatrixXd::Constant(K, K, std::nan(""));
    spec.phrases.assign(spec.acts.size(), {});
    std::optional<double> self, persistence;
    std::optional<Eigen::RowVectorXd> stationary;
    for (const auto& kv : kvs) {
        if (kv.key == "acts") continue;
        if (kv.key.rfind("transition.", 0) == 0) {
            const auto a = act_index(kv.key.substr(11), kv.line);
            const auto row = parse_reals(kv);
            if (static_cast<Eigen::Index>(row.size()) != K) throw ParseError("transition row needs K values", kv.line);
            spec.transition.row(a) = to_row(row);
        } else if (kv.key.rfind("phrase.", 0) == 0) {
            const auto a = act_index(kv.key.substr(7), kv.line);
            auto words = split_words(kv.value);
            if (words.size() < 2) throw ParseError("phrase needs a weight and at least one token", kv.line);
            Phrase p;
            p.weight = parse_real(KeyValue{kv.key, words.front(), kv.line});
            p.tokens.assign(words.begin() + 1, words.end());
            spec.phrases[static_cast<std::size_t>(a)].push_back(std::move(p));
        } else if (kv.key == "self_transition") {
            self = parse_real(kv);
        } else if (kv.key == "persistence") {
            persistence = parse_real(kv);
        } else if (kv.key == "stationary") {
            auto v = parse_reals(kv);
            if (static_cast<Eigen::Index>(v.size()) != K) throw ParseError("stationary needs K values", kv.line);
            Eigen::RowVectorXd r = to_row(v);
            stationary = r / r.sum();
        } else if (kv.key == "initial") {
            auto v = parse_reals(kv);
            if (static_cast<Eigen::Index>(v.size()) != K) throw ParseError("initial needs K values", kv.line);
            spec.initial = to_row(v);
        } else if (kv.key == "num_conversations") {
            spec.num_conversations = static_cast<int>(parse_integer(kv));
        } else if (kv.key == "min_len") {
            spec.min_len = static_cast<int>(parse_integer(kv));
        } else if (kv.key == "max_len") {
            spec.max_len = static_cast<int>(parse_integer(kv));
        } else if (kv.key == "seed") {
            spec.seed = static_cast<std::uint64_t>(parse_integer(kv));
        } else {
            throw ParseError("unknown key '" + kv.key + "'", kv.line);
        }
    }

    if (stationary) {
        spec.transition = mixing_transition(*stationary, persistence.value_or(0.0));
    } else if (self) {
        const double off = K > 1 ? (1.0 - *self) / static_cast<double>(K - 1) : 0.0;
        spec.transition = Eigen::MatrixXd::Constant(K, K, off);
        spec.transition.diagonal().setConstant(K > 1 ? *self : 1.0);
    }
    if (spec.transition.hasNaN()) throw ValidationError("transition rows missing for some acts");
    spec.validate();
    return spec;
}

SyntheticSpec parse_synthetic_spec(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return parse_synthetic_spec(in);
}

GeneratorModel::GeneratorModel(const SyntheticSpec& spec)
    : acts_(spec.acts), transition_(spec.transition), phrases_(spec.phrases) {
    spec.validate();
    initial_ = spec.initial.size() ? spec.initial : stationary_distribution(spec.transition);
    for (auto& table : phrases_) {
        double total = 0;
        for (const auto& p : table) total += p.weight;
        for (auto& p : table) p.weight /= total;
    }
}

int GeneratorModel::act_id(const std::string& name) const {
    for (std::size_t a = 0; a < acts_.size(); ++a)
        if (acts_[a] == name) return static_cast<int>(a);
    return -1;
}

double GeneratorModel::emission_log_prob(int act, const std::vector<std::string>& tokens) const {
    double p = 0;
    for (const auto& ph : phrases_.at(static_cast<std::size_t>(act)))
        if (ph.tokens == tokens) p += ph.weight;
    return safe_log(p);
}

std::vector<int> GeneratorModel::decode(const Conversation& conv) const {
    const auto K = static_cast<Eigen::Index>(acts_.size());
    crf::PotentialTable<double> pot;
    pot.unary.resize(static_cast<Eigen::Index>(conv.size()), K);
    for (std::size_t t = 0; t < conv.size(); ++t) {
        std::vector<std::string> words;
        for (const auto& tok : conv.utterances[t].tokens) words.push_back(tok.surface);
        for (Eigen::Index a = 0; a < K; ++a)
            pot.unary(static_cast<Eigen::Index>(t), a) = emission_log_prob(static_cast<int>(a), words);
    }
    pot.transition = transition_.unaryExpr([](double p) { return safe_log(p); });
    pot.start = initial_.unaryExpr([](double p) { return safe_log(p); });
    return crf::viterbi_decode(pot).labels;
}

nlohmann::json GeneratorModel::to_json() const {
    nlohmann::json j;
    j["acts"] = acts_;
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < transition_.rows(); ++i) {
        std::vector<double> r(static_cast<std::size_t>(transition_.cols()));
        for (Eigen::Index k = 0; k < transition_.cols(); ++k) r[static_cast<std::size_t>(k)] = transition_(i, k);
        rows.push_back(r);
    }
    j["transition"] = rows;
    j["initial"] = std::vector<double>(initial_.data(), initial_.data() + initial_.size());
    nlohmann::json ph = nlohmann::json::object();
    for (std::size_t a = 0; a < acts_.size(); ++a) {
        nlohmann::json list = nlohmann::json::array();
        for (const auto& p : phrases_[a]) list.push_back({{"p", p.weight}, {"tokens", p.tokens}});
        ph[acts_[a]] = list;
    }
    j["phrases"] = ph;
    return j;
}

GeneratorModel GeneratorModel::from_json(const nlohmann::json& j) {
    GeneratorModel g;
    g.acts_ = j.at("acts").get<std::vector<std::string>>();
    const auto K = static_cast<Eigen::Index>(g.acts_.size());
    const auto rows = j.at("transition").get<std::vector<std::vector<double>>>();
    if (static_cast<Eigen::Index>(rows.size()) != K) throw ValidationError("generator transition has wrong size");
    g.transition_.resize(K, K);
    for (Eigen::Index i = 0; i < K; ++i) {
        if (static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)].size()) != K)
            throw ValidationError("generator transition has wrong size");
        for (Eigen::Index k = 0; k < K; ++k) g.transition_(i, k) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
    }
    g.initial_ = to_row(j.at("initial").get<std::vector<double>>());
    for (const auto& name : g.acts_) {
        std::vector<Phrase> table;
        for (const auto& p : j.at("phrases").at(name))
            table.push_back(Phrase{p.at("p").get<double>(), p.at("tokens").get<std::vector<std::string>>()});
        g.phrases_.push_back(std::move(table));
    }
    return g;
}

std::pair<std::vector<Conversation>, GeneratorModel> generate_synthetic(const SyntheticSpec& spec) {
    GeneratorModel model(spec);
    std::mt19937_64 rng(spec.seed);
    const auto K = static_cast<std::size_t>(spec.num_acts());

    auto categorical = [](const Eigen::RowVectorXd& p) {
        return std::discrete_distribution<int>(p.data(), p.data() + p.size());
    };
    auto initial = categorical(model.initial());
    std::vector<std::discrete_distribution<int>> next;
    std::vector<std::discrete_distribution<int>> emit;
    for (std::size_t a = 0; a < K; ++a) {
        next.push_back(categorical(spec.transition.row(static_cast<Eigen::Index>(a))));
        std::vector<double> w;
        for (const auto& p : spec.phrases[a]) w.push_back(p.weight);
        emit.emplace_back(w.begin(), w.end());
    }
    std::uniform_int_distribution<int> length(spec.min_len, spec.max_len);

    std::vector<Conversation> convs;
    convs.reserve(static_cast<std::size_t>(spec.num_conversations));
    for (int c = 0; c < spec.num_conversations; ++c) {
        Conversation conv;
        conv.id = "syn-" + std::to_string(c);
        const int n = length(rng);
        int act = initial(rng);
        for (int t = 0; t < n; ++t) {
            if (t > 0) act = next[static_cast<std::size_t>(act)](rng);
            const auto& phrase = spec.phrases[static_cast<std::size_t>(act)][static_cast<std::size_t>(emit[static_cast<std::size_t>(act)](rng))];
            Utterance u;
            u.speaker = t % 2 == 0 ? "A" : "B";
            for (const auto& w : phrase.tokens) u.tokens.push_back(make_token(w));
            u.act = spec.acts[static_cast<std::size_t>(act)];
            conv.utterances.push_back(std::move(u));
        }
        convs.push_back(std::move(conv));
    }
    return {std::move(convs), std::move(model)};
}

}  // namespace crfasn
