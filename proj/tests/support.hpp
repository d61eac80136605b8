#pragma once

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "crfasn/corpus.hpp"

namespace test_support {

inline std::filesystem::path test_data(const std::string& name) { return std::filesystem::path(CRFASN_TEST_DATA) / name; }
inline std::filesystem::path repo_data(const std::string& name) { return std::filesystem::path(CRFASN_REPO_DATA) / name; }

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("crfasn-" + tag + "-" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

/// One utterance per entry: (act, space-separated tokens).
inline crfasn::Conversation conversation(const std::string& id,
                                         std::initializer_list<std::pair<const char*, const char*>> utts) {
    crfasn::Conversation c;
    c.id = id;
    int k = 0;
    for (const auto& [act, text] : utts) {
        crfasn::Utterance u;
        u.speaker = k++ % 2 ? "B" : "A";
        if (act && *act) u.act = act;
        std::istringstream words(text);
        for (std::string w; words >> w;) u.tokens.push_back(crfasn::make_token(w));
        c.utterances.push_back(std::move(u));
    }
    return c;
}

}  // namespace test_support
