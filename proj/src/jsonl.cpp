#include "modmap/jsonl.hpp"

#include <filesystem>
#include <istream>

namespace modmap {

std::ifstream open_input(const std::string& path)
{
    if (!std::filesystem::is_regular_file(path))
        throw MissingInputError(path);
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw MissingInputError(path);
    return in;
}

void read_jsonl(std::istream& in, const std::string& source, const JsonlVisitor& fn)
{
    std::string line;
    LineContext ctx{source, 0};
    while (std::getline(in, line)) {
        ++ctx.line;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        Json obj;
        try {
            obj = Json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            ctx.fail(std::string("malformed JSON: ") + e.what());
        }
        if (!obj.is_object())
            ctx.fail("expected a JSON object");
        if (obj.contains("_meta"))
            continue;
        fn(obj, ctx);
    }
}

void read_jsonl(const std::string& path, const JsonlVisitor& fn)
{
    auto in = open_input(path);
    read_jsonl(in, path, fn);
}

}  // namespace modmap
