#pragma once

#include <stdexcept>
#include <string>

namespace dopf {

// Malformed input text. line is 1-based, 0 when no line applies.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, int line = 0)
        : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
          line_(line) {}
    int line() const { return line_; }

private:
    int line_ = 0;
};

// Structurally invalid model (non-radial graph, bad ids, bad bands).
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Caller passed values outside a function's domain.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// An iterative routine failed to reach its stopping rule.
class ConvergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A message-passing rule was broken (non-neighbor send, missing or
// duplicate message in a round).
class ProtocolError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace dopf
