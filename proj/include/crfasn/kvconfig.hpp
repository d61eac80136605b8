#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace crfasn {

struct KeyValue {
    std::string key;
    std::string value;
    std::size_t line;
};

/// Parses "key = value" lines. Blank lines and '#' comments are skipped.
/// Repeated keys are kept in file order.
std::vector<KeyValue> parse_key_values(std::istream& in);
std::vector<KeyValue> parse_key_values(const std::filesystem::path& path);

double parse_real(const KeyValue& kv);
long parse_integer(const KeyValue& kv);
std::vector<double> parse_reals(const KeyValue& kv);
std::vector<std::string> split_words(const std::string& s);

}  // namespace crfasn
