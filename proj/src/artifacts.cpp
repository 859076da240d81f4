#include "modmap/artifacts.hpp"

#include <openssl/evp.h>

#include <array>
#include <memory>

#include "modmap/error.hpp"

namespace modmap {

namespace {

struct DigestCtx {
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    DigestCtx()
    {
        if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1)
            throw Error("cannot initialise sha256");
    }
    ~DigestCtx() { EVP_MD_CTX_free(ctx); }
    void update(const char* data, std::size_t n)
    {
        if (EVP_DigestUpdate(ctx, data, n) != 1)
            throw Error("sha256 update failed");
    }
    std::string hex()
    {
        std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
        unsigned int len = 0;
        if (EVP_DigestFinal_ex(ctx, md.data(), &len) != 1)
            throw Error("sha256 finalisation failed");
        static constexpr char digits[] = "0123456789abcdef";
        std::string out;
        for (unsigned int i = 0; i < len; ++i) {
            out.push_back(digits[md[i] >> 4]);
            out.push_back(digits[md[i] & 0xf]);
        }
        return out;
    }
};

void check_meta(const Json& meta, const std::string& source)
{
    if (!meta.is_object() || !meta.contains("schema_version") || !meta["schema_version"].is_number_integer())
        throw ValidationError(source + ": _meta header lacks an integer schema_version");
    const int v = meta["schema_version"].get<int>();
    if (v != kSchemaVersion)
        throw ValidationError(source + ": schema_version " + std::to_string(v) + " is not supported (expected "
                              + std::to_string(kSchemaVersion) + ")");
}

}  // namespace

std::string sha256_hex(const std::string& bytes)
{
    DigestCtx d;
    d.update(bytes.data(), bytes.size());
    return d.hex();
}

std::string sha256_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw MissingInputError(path.string());
    DigestCtx d;
    std::array<char, 1 << 16> buf{};
    while (in) {
        in.read(buf.data(), buf.size());
        d.update(buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    return d.hex();
}

OrderedJson meta_json(std::uint64_t seed, const InputHashes& inputs)
{
    OrderedJson j;
    j["tool"] = "modmap";
    j["tool_version"] = kToolVersion;
    j["schema_version"] = kSchemaVersion;
    j["seed"] = seed;
    OrderedJson h = OrderedJson::object();
    for (const auto& [role, hash] : inputs)
        h[role] = hash;
    j["input_sha256"] = h;
    return j;
}

void check_jsonl_schema(const std::filesystem::path& path)
{
    auto in = open_input(path.string());
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        Json j;
        try {
            j = Json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(path.string(), 1, e.what());
        }
        if (j.is_object() && j.contains("_meta"))
            check_meta(j["_meta"], path.string());
        return;
    }
}

void check_json_schema(const Json& doc, const std::string& source)
{
    if (doc.is_object() && doc.contains("_meta"))
        check_meta(doc["_meta"], source);
}

std::ostream& StagedOutputs::open(const std::string& relative)
{
    const auto final_path = root_ / relative;
    std::filesystem::create_directories(final_path.parent_path());
    auto tmp = final_path;
    tmp += ".tmp";
    auto stream = std::make_unique<std::ofstream>(tmp, std::ios::binary | std::ios::trunc);
    if (!*stream)
        throw Error("cannot write " + tmp.string());
    entries_.push_back({relative, std::move(stream)});
    return *entries_.back().stream;
}

std::vector<std::string> StagedOutputs::commit()
{
    std::vector<std::string> written;
    for (auto& e : entries_) {
        e.stream->close();
        if (e.stream->fail())
            throw Error("failed writing " + (root_ / e.relative).string() + ".tmp");
    }
    for (auto& e : entries_) {
        const auto final_path = root_ / e.relative;
        auto tmp = final_path;
        tmp += ".tmp";
        std::filesystem::rename(tmp, final_path);
        written.push_back(e.relative);
    }
    entries_.clear();
    return written;
}

}  // namespace modmap
