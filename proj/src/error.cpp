#include "modmap/error.hpp"

namespace modmap {

ParseError::ParseError(const std::string& source, std::size_t line, const std::string& what)
    : ValidationError(source + ":" + std::to_string(line) + ": " + what), source_(source), line_(line)
{
}

MissingInputError::MissingInputError(const std::string& path)
    : Error("missing input: " + path), path_(path)
{
}

}  // namespace modmap
