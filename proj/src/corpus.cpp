#include "crfasn/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

namespace crfasn {

using nlohmann::json;

namespace {

std::vector<std::string> split_code_points(const std::string& s) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < s.size();) {
        const auto c = static_cast<unsigned char>(s[i]);
        std::size_t len = 1;
        if ((c & 0xE0) == 0xC0) len = 2;
        else if ((c & 0xF0) == 0xE0) len = 3;
        else if ((c & 0xF8) == 0xF0) len = 4;
        len = std::min(len, s.size() - i);
        out.push_back(s.substr(i, len));
        i += len;
    }
    return out;
}

std::vector<std::string> ordered_by_frequency(const std::map<std::string, long>& counts, long min_count) {
    std::vector<std::pair<std::string, long>> items(counts.begin(), counts.end());
    std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> out;
    for (const auto& [sym, n] : items)
        if (n >= min_count) out.push_back(sym);
    return out;
}

std::optional<std::vector<std::string>> optional_string_list(const json& u, const char* key, std::size_t n) {
    if (!u.contains(key) || u.at(key).is_null()) return std::nullopt;
    auto v = u.at(key).get<std::vector<std::string>>();
    if (v.size() != n)
        throw ValidationError(std::string("'") + key + "' has " + std::to_string(v.size()) + " entries for " +
                              std::to_string(n) + " tokens");
    return v;
}

}  // namespace

Token make_token(std::string surface, std::optional<std::string> pos, std::optional<std::string> ner) {
    if (surface.empty()) throw ValidationError("token surface must be non-empty");
    Token t;
    t.chars = split_code_points(surface);
    t.surface = std::move(surface);
    t.pos = std::move(pos);
    t.ner = std::move(ner);
    return t;
}

bool Conversation::labeled() const {
    return std::all_of(utterances.begin(), utterances.end(), [](const Utterance& u) { return u.act.has_value(); });
}

Conversation conversation_from_json(const json& j) {
    Conversation c;
    c.id = j.at("id").get<std::string>();
    const auto& utts = j.at("utterances");
    if (!utts.is_array() || utts.empty()) throw ValidationError("conversation '" + c.id + "' has no utterances");
    for (const auto& u : utts) {
        Utterance utt;
        utt.speaker = u.value("speaker", std::string{});
        auto words = u.at("tokens").get<std::vector<std::string>>();
        if (words.empty()) throw ValidationError("empty utterance in conversation '" + c.id + "'");
        auto pos = optional_string_list(u, "pos", words.size());
        auto ner = optional_string_list(u, "ner", words.size());
        for (std::size_t k = 0; k < words.size(); ++k) {
            std::optional<std::string> p, e;
            if (pos) p = (*pos)[k];
            if (ner) e = (*ner)[k];
            utt.tokens.push_back(make_token(std::move(words[k]), std::move(p), std::move(e)));
        }
        if (u.contains("act") && !u.at("act").is_null()) utt.act = u.at("act").get<std::string>();
        c.utterances.push_back(std::move(utt));
    }
    return c;
}

json conversation_to_json(const Conversation& c) {
    json utts = json::array();
    for (const auto& u : c.utterances) {
        json ju;
        ju["speaker"] = u.speaker;
        std::vector<std::string> words;
        bool has_pos = false, has_ner = false;
        for (const auto& t : u.tokens) {
            words.push_back(t.surface);
            has_pos = has_pos || t.pos.has_value();
            has_ner = has_ner || t.ner.has_value();
        }
        ju["tokens"] = words;
        // A tag list is written only when every token carries that tag.
        if (has_pos && std::all_of(u.tokens.begin(), u.tokens.end(), [](const Token& t) { return t.pos.has_value(); })) {
            std::vector<std::string> v;
            for (const auto& t : u.tokens) v.push_back(*t.pos);
            ju["pos"] = v;
        }
        if (has_ner && std::all_of(u.tokens.begin(), u.tokens.end(), [](const Token& t) { return t.ner.has_value(); })) {
            std::vector<std::string> v;
            for (const auto& t : u.tokens) v.push_back(*t.ner);
            ju["ner"] = v;
        }
        if (u.act) ju["act"] = *u.act;
        utts.push_back(std::move(ju));
    }
    return json{{"id", c.id}, {"utterances", std::move(utts)}};
}

std::vector<Conversation> parse_jsonl(std::istream& in) {
    std::vector<Conversation> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(e.what(), lineno);
        }
        try {
            out.push_back(conversation_from_json(j));
        } catch (const json::exception& e) {
            throw ParseError(e.what(), lineno);
        } catch (const ValidationError& e) {
            throw ValidationError("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

std::vector<Conversation> parse_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return parse_jsonl(in);
}

void write_jsonl(std::ostream& out, const std::vector<Conversation>& convs) {
    for (const auto& c : convs) out << conversation_to_json(c).dump() << '\n';
}

void write_jsonl(const std::filesystem::path& path, const std::vector<Conversation>& convs) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    write_jsonl(out, convs);
}

SymbolTable::SymbolTable(std::vector<std::string> reserved) : reserved_(reserved.size()) {
    for (auto& s : reserved) add(s);
}

int SymbolTable::add(const std::string& symbol) {
    if (auto it = index_.find(symbol); it != index_.end()) return it->second;
    const int id = static_cast<int>(symbols_.size());
    symbols_.push_back(symbol);
    index_.emplace(symbol, id);
    return id;
}

std::optional<int> SymbolTable::find(const std::string& symbol) const {
    if (auto it = index_.find(symbol); it != index_.end()) return it->second;
    return std::nullopt;
}

int SymbolTable::lookup(const std::string& symbol) const {
    if (auto id = find(symbol)) return *id;
    return reserved_ > 0 ? unk : -1;
}

Vocab build_vocab(const std::vector<Conversation>& convs, int min_count) {
    if (convs.empty()) throw ValidationError("cannot build a vocabulary from an empty corpus");
    std::map<std::string, long> words, chars, pos, ner, acts;
    for (const auto& c : convs)
        for (const auto& u : c.utterances) {
            if (u.act) ++acts[*u.act];
            for (const auto& t : u.tokens) {
                ++words[t.surface];
                for (const auto& ch : t.chars) ++chars[ch];
                if (t.pos) ++pos[*t.pos];
                if (t.ner) ++ner[*t.ner];
            }
        }
    if (acts.empty()) throw ValidationError("corpus has no labeled utterance");

    Vocab v;
    v.words = SymbolTable({"<pad>", "<unk>"});
    v.chars = SymbolTable({"<pad>", "<unk>"});
    v.pos = SymbolTable({"<pad>", "<unk>", "<absent>"});
    v.ner = SymbolTable({"<pad>", "<unk>", "<absent>"});
    for (const auto& s : ordered_by_frequency(words, std::max(min_count, 1))) v.words.add(s);
    for (const auto& s : ordered_by_frequency(chars, 1)) v.chars.add(s);
    for (const auto& s : ordered_by_frequency(pos, 1)) v.pos.add(s);
    for (const auto& s : ordered_by_frequency(ner, 1)) v.ner.add(s);
    for (const auto& s : ordered_by_frequency(acts, 1)) v.acts.add(s);
    return v;
}

json vocab_to_json(const Vocab& v) {
    auto table = [](const SymbolTable& t) {
        return json{{"reserved", t.reserved()}, {"symbols", t.symbols()}};
    };
    return json{{"words", table(v.words)}, {"chars", table(v.chars)}, {"pos", table(v.pos)},
                {"ner", table(v.ner)},     {"acts", table(v.acts)}};
}

Vocab vocab_from_json(const json& j) {
    auto table = [](const json& t) {
        auto syms = t.at("symbols").get<std::vector<std::string>>();
        const auto reserved = t.at("reserved").get<std::size_t>();
        if (reserved > syms.size()) throw ValidationError("vocabulary table has more reserved ids than symbols");
        SymbolTable out(std::vector<std::string>(syms.begin(), syms.begin() + static_cast<long>(reserved)));
        for (std::size_t i = reserved; i < syms.size(); ++i) out.add(syms[i]);
        return out;
    };
    Vocab v;
    v.words = table(j.at("words"));
    v.chars = table(j.at("chars"));
    v.pos = table(j.at("pos"));
    v.ner = table(j.at("ner"));
    v.acts = table(j.at("acts"));
    return v;
}

ConversationIds encode(const Conversation& conv, const Vocab& vocab, bool require_labels) {
    ConversationIds out;
    out.id = conv.id;
    for (const auto& u : conv.utterances) {
        if (u.tokens.empty()) throw ValidationError("empty utterance in conversation '" + conv.id + "'");
        UtteranceIds ids;
        for (const auto& t : u.tokens) {
            ids.words.push_back(vocab.words.lookup(t.surface));
            std::vector<int> cs;
            for (const auto& ch : t.chars) cs.push_back(vocab.chars.lookup(ch));
            ids.chars.push_back(std::move(cs));
            ids.pos.push_back(t.pos ? vocab.pos.lookup(*t.pos) : Vocab::absent_tag);
            ids.ner.push_back(t.ner ? vocab.ner.lookup(*t.ner) : Vocab::absent_tag);
        }
        out.utterances.push_back(std::move(ids));
        int act = -1;
        if (u.act) {
            if (auto id = vocab.acts.find(*u.act))
                act = *id;
            else if (require_labels)
                throw ValidationError("unknown act '" + *u.act + "' in conversation '" + conv.id + "'");
        } else if (require_labels) {
            throw ValidationError("unlabeled utterance in conversation '" + conv.id + "'");
        }
        out.acts.push_back(act);
    }
    return out;
}

std::vector<ConversationIds> encode_all(const std::vector<Conversation>& convs, const Vocab& vocab,
                                        bool require_labels) {
    std::vector<ConversationIds> out;
    out.reserve(convs.size());
    for (const auto& c : convs) out.push_back(encode(c, vocab, require_labels));
    return out;
}

Eigen::MatrixXd load_pretrained_embeddings(const std::filesystem::path& path, const SymbolTable& words, int dim,
                                           std::mt19937_64& rng) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::uniform_real_distribution<double> init(-0.05, 0.05);
    Eigen::MatrixXd emb(words.size(), dim);
    for (Eigen::Index i = 0; i < emb.size(); ++i) emb.data()[i] = init(rng);

    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ls(line);
        std::string word;
        if (!(ls >> word)) continue;
        std::vector<double> vals;
        std::string tok;
        while (ls >> tok) {
            try {
                vals.push_back(std::stod(tok));
            } catch (const std::exception&) {
                throw ParseError("bad number '" + tok + "' for word '" + word + "'", lineno);
            }
        }
        if (static_cast<int>(vals.size()) != dim)
            throw ValidationError("embedding for '" + word + "' has " + std::to_string(vals.size()) +
                                  " values, expected " + std::to_string(dim));
        if (auto id = words.find(word); id && *id >= static_cast<int>(words.reserved()))
            for (int k = 0; k < dim; ++k) emb(*id, k) = vals[static_cast<std::size_t>(k)];
    }
    if (words.reserved() > 0) emb.row(SymbolTable::pad).setZero();
    return emb;
}

}  // namespace crfasn
