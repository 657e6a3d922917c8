#pragma once

#include <stdexcept>
#include <string>

namespace metarca {

/// Malformed input document (bad JSON, bad CSV row, unknown enum value).
class ParseError : public std::runtime_error {
public:
    explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

/// Structurally well-formed input that violates an invariant.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

/// Evidence replayed against the arrow of time.
class OrderingError : public ValidationError {
public:
    explicit OrderingError(const std::string& what) : ValidationError(what) {}
};

/// Filesystem trouble: missing files, unwritable directories.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace metarca
