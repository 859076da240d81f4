#pragma once

#include <fstream>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>

#include <json.hpp>

#include "modmap/error.hpp"

namespace modmap {

using Json = nlohmann::json;
using OrderedJson = nlohmann::ordered_json;

// Position of a record in an input file, for error messages.
struct LineContext {
    std::string source;
    std::size_t line = 0;

    [[noreturn]] void fail(const std::string& what) const { throw ParseError(source, line, what); }

    template <typename T>
    T require(const Json& obj, const char* key) const
    {
        auto it = obj.find(key);
        if (it == obj.end())
            fail(std::string("missing field '") + key + "'");
        try {
            return it->get<T>();
        } catch (const nlohmann::json::exception&) {
            fail(std::string("field '") + key + "' has the wrong type");
        }
    }

    template <typename T>
    std::optional<T> optional(const Json& obj, const char* key) const
    {
        auto it = obj.find(key);
        if (it == obj.end() || it->is_null())
            return std::nullopt;
        try {
            return it->get<T>();
        } catch (const nlohmann::json::exception&) {
            fail(std::string("field '") + key + "' has the wrong type");
        }
    }
};

std::ifstream open_input(const std::string& path);

// Invokes fn for every non-blank line parsed as a JSON object. Lines carrying
// a "_meta" key (artifact provenance headers) are skipped.
using JsonlVisitor = std::function<void(const Json&, const LineContext&)>;
void read_jsonl(std::istream& in, const std::string& source, const JsonlVisitor& fn);
void read_jsonl(const std::string& path, const JsonlVisitor& fn);

}  // namespace modmap
