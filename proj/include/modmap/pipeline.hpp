#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "modmap/annotation.hpp"
#include "modmap/forest.hpp"
#include "modmap/featurize.hpp"
#include "modmap/jsonl.hpp"
#include "modmap/synth.hpp"

namespace modmap {

struct AnalysisOptions {
    bool split_accuracy = true;
    bool cartography = true;
    bool sensitivity = true;
    std::size_t sensitivity_k = 50;
    // Restrict analyses to instances of this manifest split; empty = every labeled instance.
    std::string split;
    std::vector<std::string> tags{"who-question"};
    // Subset names ("audio+text") for only-<group> rows; empty = every subset of size 2..M-1.
    std::vector<std::string> groups;
    // Subset names for masked columns; empty = every proper non-empty subset.
    std::vector<std::string> columns;
};

struct RunConfig {
    std::filesystem::path manifest;
    std::filesystem::path probs;
    std::filesystem::path annotations;
    std::filesystem::path seed_file;
    std::filesystem::path folds;  // empty = no cross-fold annotation
    std::filesystem::path out = "modmap-out";
    std::uint64_t seed = 0;
    int threads = 0;
    std::string modality;  // empty = all modalities
    QualityPolicy quality;
    int quorum = 5;
    FeatureVariant variant = FeatureVariant::Full;
    std::vector<GridPoint> grid = default_grid();
    ForestParams forest;
    AnalysisOptions analysis;
};

// The full key tree with default values. Every leaf is addressable by its dotted name.
Json default_config_json();

// Merges the optional JSON config file (relative paths resolved against its directory)
// and then the dotted-key overrides over the defaults. Throws ConfigError on unknown
// keys or ill-typed values, MissingInputError if the file does not exist.
RunConfig load_config(const std::optional<std::filesystem::path>& file,
                      const std::vector<std::pair<std::string, std::string>>& overrides);
RunConfig config_from_json(const Json& tree);

struct StageResult {
    std::string stage;
    std::vector<std::string> outputs;  // relative to the output directory
};

// Writes the synthetic dataset plus synth_spec.json and a config.json pointing at it.
StageResult cmd_simulate(const SynthSpec& spec, const std::filesystem::path& out_dir);
StageResult cmd_aggregate(const RunConfig& config);
StageResult cmd_featurize(const RunConfig& config);
StageResult cmd_train(const RunConfig& config);
StageResult cmd_predict(const RunConfig& config);
StageResult cmd_analyze(const RunConfig& config);
std::vector<StageResult> cmd_pipeline(const RunConfig& config);

// Structural check of a report.json document. Throws ValidationError on the first problem.
void validate_report(const Json& report);

}  // namespace modmap
