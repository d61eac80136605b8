#include "crfasn/kvconfig.hpp"

#include <fstream>
#include <sstream>

#include "crfasn/errors.hpp"

namespace crfasn {

namespace {
std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}
}  // namespace

std::vector<KeyValue> parse_key_values(std::istream& in) {
    std::vector<KeyValue> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError("expected 'key = value'", lineno);
        KeyValue kv{trim(line.substr(0, eq)), trim(line.substr(eq + 1)), lineno};
        if (kv.key.empty()) throw ParseError("empty key", lineno);
        out.push_back(std::move(kv));
    }
    return out;
}

std::vector<KeyValue> parse_key_values(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return parse_key_values(in);
}

double parse_real(const KeyValue& kv) {
    std::size_t used = 0;
    double v = 0;
    try {
        v = std::stod(kv.value, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != kv.value.size()) throw ParseError("'" + kv.key + "' expects a number", kv.line);
    return v;
}

long parse_integer(const KeyValue& kv) {
    std::size_t used = 0;
    long v = 0;
    try {
        v = std::stol(kv.value, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != kv.value.size()) throw ParseError("'" + kv.key + "' expects an integer", kv.line);
    return v;
}

std::vector<std::string> split_words(const std::string& s) {
    std::istringstream in(s);
    std::vector<std::string> out;
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

std::vector<double> parse_reals(const KeyValue& kv) {
    std::vector<double> out;
    for (const auto& w : split_words(kv.value)) out.push_back(parse_real(KeyValue{kv.key, w, kv.line}));
    return out;
}

}  // namespace crfasn
