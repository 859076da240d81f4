#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "modmap/jsonl.hpp"

namespace modmap {

inline constexpr const char* kToolVersion = "0.3.0";
inline constexpr int kSchemaVersion = 1;

std::string sha256_hex(const std::string& bytes);
// Throws MissingInputError if the file cannot be opened.
std::string sha256_file(const std::filesystem::path& path);

// Content hashes of a stage's inputs, keyed by role ("manifest", "probs", ...).
using InputHashes = std::map<std::string, std::string>;

OrderedJson meta_json(std::uint64_t seed, const InputHashes& inputs);

// If the first non-blank line of a JSONL file is a _meta header, its schema_version
// must equal kSchemaVersion. Files without a header are accepted.
void check_jsonl_schema(const std::filesystem::path& path);
// Same for a JSON document with a top-level "_meta" member.
void check_json_schema(const Json& doc, const std::string& source);

// Collects a stage's outputs under <name>.tmp and renames them into place on commit.
// Without a commit the .tmp files stay behind and the final names are untouched.
class StagedOutputs {
public:
    explicit StagedOutputs(std::filesystem::path root) : root_(std::move(root)) {}
    StagedOutputs(const StagedOutputs&) = delete;
    StagedOutputs& operator=(const StagedOutputs&) = delete;

    std::ostream& open(const std::string& relative);
    // Closes every stream, renames into place and returns the relative paths written.
    std::vector<std::string> commit();

    const std::filesystem::path& root() const { return root_; }

private:
    struct Entry {
        std::string relative;
        std::unique_ptr<std::ofstream> stream;
    };
    std::filesystem::path root_;
    std::vector<Entry> entries_;
};

}  // namespace modmap
