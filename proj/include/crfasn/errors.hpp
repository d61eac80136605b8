#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace crfasn {

/// Malformed input file. Carries the 1-based line number when known.
struct ParseError : std::runtime_error {
    ParseError(const std::string& what, std::size_t line = 0)
        : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what), line(line) {}
    std::size_t line;
};

/// Well-formed input that violates a data contract.
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace crfasn
