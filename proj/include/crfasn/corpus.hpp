#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "crfasn/errors.hpp"

namespace crfasn {

struct Token {
    std::string surface;
    std::vector<std::string> chars;  // UTF-8 code points of surface
    std::optional<std::string> pos;
    std::optional<std::string> ner;

    bool operator==(const Token&) const = default;
};

/// Builds a token, splitting `surface` into code points. Throws on empty input.
Token make_token(std::string surface, std::optional<std::string> pos = std::nullopt,
                 std::optional<std::string> ner = std::nullopt);

struct Utterance {
    std::vector<Token> tokens;
    std::string speaker;
    std::optional<std::string> act;

    bool operator==(const Utterance&) const = default;
};

struct Conversation {
    std::string id;
    std::vector<Utterance> utterances;

    std::size_t size() const { return utterances.size(); }
    bool labeled() const;
    bool operator==(const Conversation&) const = default;
};

std::vector<Conversation> parse_jsonl(const std::filesystem::path& path);
std::vector<Conversation> parse_jsonl(std::istream& in);
Conversation conversation_from_json(const nlohmann::json& j);
nlohmann::json conversation_to_json(const Conversation& c);
void write_jsonl(std::ostream& out, const std::vector<Conversation>& convs);
void write_jsonl(const std::filesystem::path& path, const std::vector<Conversation>& convs);

/// Dense symbol ids. Tables with reserved entries keep PAD at 0 and UNK at 1.
class SymbolTable {
public:
    static constexpr int pad = 0;
    static constexpr int unk = 1;

    SymbolTable() = default;
    explicit SymbolTable(std::vector<std::string> reserved);

    int add(const std::string& symbol);
    /// Id of `symbol`, or UNK (or -1 in a table without reserved ids).
    int lookup(const std::string& symbol) const;
    std::optional<int> find(const std::string& symbol) const;
    const std::string& symbol(int id) const { return symbols_.at(static_cast<std::size_t>(id)); }
    int size() const { return static_cast<int>(symbols_.size()); }
    std::size_t reserved() const { return reserved_; }
    const std::vector<std::string>& symbols() const { return symbols_; }

    bool operator==(const SymbolTable& o) const { return symbols_ == o.symbols_ && reserved_ == o.reserved_; }

private:
    std::vector<std::string> symbols_;
    std::unordered_map<std::string, int> index_;
    std::size_t reserved_ = 0;
};

struct Vocab {
    /// Tag tables also reserve ABSENT for tokens without a tag.
    static constexpr int absent_tag = 2;

    SymbolTable words;
    SymbolTable chars;
    SymbolTable pos;
    SymbolTable ner;
    SymbolTable acts;  // closed set, no reserved ids

    bool operator==(const Vocab&) const = default;
};

/// Frequency-ordered vocabulary (ties broken lexicographically). Words seen
/// fewer than `min_count` times map to UNK.
Vocab build_vocab(const std::vector<Conversation>& convs, int min_count = 1);

nlohmann::json vocab_to_json(const Vocab& v);
Vocab vocab_from_json(const nlohmann::json& j);

struct UtteranceIds {
    std::vector<int> words;
    std::vector<std::vector<int>> chars;
    std::vector<int> pos;
    std::vector<int> ner;
};

struct ConversationIds {
    std::string id;
    std::vector<UtteranceIds> utterances;
    std::vector<int> acts;  // -1 where unlabeled

    std::size_t size() const { return utterances.size(); }
};

/// Maps symbols to ids. With `require_labels`, every utterance must carry an
/// act present in the vocabulary.
ConversationIds encode(const Conversation& conv, const Vocab& vocab, bool require_labels);
std::vector<ConversationIds> encode_all(const std::vector<Conversation>& convs, const Vocab& vocab,
                                        bool require_labels);

/// Reads "word v1 ... v_dim" lines. Rows of words missing from the file are
/// drawn from U(-0.05, 0.05); the PAD row is zero.
Eigen::MatrixXd load_pretrained_embeddings(const std::filesystem::path& path, const SymbolTable& words, int dim,
                                           std::mt19937_64& rng);

}  // namespace crfasn
