#pragma once

#include <stdexcept>
#include <string>

namespace modmap {

// Base for every error the pipeline raises on bad input or configuration.
// Anything else escaping a stage (std::logic_error, InvariantError) is a bug.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

// Malformed input line. line is 1-based; 0 when unknown.
class ParseError : public ValidationError {
public:
    ParseError(const std::string& source, std::size_t line, const std::string& what);

    std::size_t line() const noexcept { return line_; }
    const std::string& source() const noexcept { return source_; }

private:
    std::string source_;
    std::size_t line_;
};

class MissingDataError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// A probability record would leak information from a model trained on the instance.
class LeakageError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class DegenerateClassError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class ConfigError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// A required input file or upstream artifact does not exist.
class MissingInputError : public Error {
public:
    explicit MissingInputError(const std::string& path);

    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

class InvariantError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

}  // namespace modmap
