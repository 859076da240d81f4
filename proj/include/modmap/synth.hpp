#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "modmap/analysis.hpp"
#include "modmap/annotation.hpp"
#include "modmap/core.hpp"
#include "modmap/featurize.hpp"
#include "modmap/jsonl.hpp"

namespace modmap {

// Parameters of a synthetic multimodal dataset with known solving sets.
struct SynthSpec {
    std::vector<std::string> modality_names{"image", "text", "audio"};
    int label_space_size = 5;
    int n_instances = 2000;  // split "val"
    int seed_size = 500;     // annotated prefix of the val instances
    // Prior over solving sets, indexed by mask. Empty = default_region_distribution.
    std::vector<double> region_distribution;
    double p_high = 0.9;
    double noise_sigma = 0.5;
    int n_epochs = 3;
    double annotator_error = 0.1;
    double claim_error = 0.1;
    double seen_before_rate = 0.05;
    int quorum = 5;
    int workers_per_modality = 20;
    double who_fraction = 0.2;
    // Extra instances in split "train", assigned to folds A/B with fold-model probabilities.
    int n_train = 0;
    std::uint64_t seed = 0;

    int modality_count() const { return static_cast<int>(modality_names.size()); }
    // Resolved distribution (default filled in). Throws ValidationError on an invalid spec.
    std::vector<double> regions() const;
    void validate() const;
};

// For the image/text/audio case a prior loosely shaped like a video QA benchmark:
// most instances solvable by several modalities, a large image-only region, few
// unsolvable ones. Uniform over all masks for other modality counts.
std::vector<double> default_region_distribution(int modality_count);

SynthSpec synth_spec_from_json(const Json& j);
OrderedJson synth_spec_to_json(const SynthSpec& spec);
SynthSpec parse_synth_spec(const std::string& path);

struct GroundTruth {
    std::vector<std::string> ids;
    std::map<std::string, ModalitySet> solving_sets;
};

struct SynthData {
    DatasetManifest manifest;
    GroundTruth truth;
    std::vector<ProbabilityRecord> probs;
    std::vector<AnnotationRecord> annotations;
    SeedSample seed;
    std::map<std::string, Fold> folds;
};

// Gold probability of an instance under one subset before noise: p_high when the
// subset intersects the solving set, 1/L otherwise.
double synth_gold_target(const SynthSpec& spec, ModalitySet solving, ModalitySet subset);

SynthData generate(const SynthSpec& spec);

ProbabilityStore build_store(const SynthData& data);

// dataset.jsonl, probs.jsonl, annotations.jsonl, seed.jsonl, truth.jsonl, and folds.jsonl
// when the spec has train instances.
void write_synth(const SynthData& data, const std::string& dir);
// Same files, each written to the stream returned by open(name).
void write_synth(const SynthData& data, const std::function<std::ostream&(const std::string&)>& open);

GroundTruth parse_truth(const std::string& path, const DatasetManifest& manifest);

struct RecoveryScore {
    std::vector<double> per_modality;
    double exact_set = 0.0;
    std::size_t n = 0;
};

// Throws ValidationError unless the map and truth cover the same instances.
RecoveryScore score_recovery(const ModalityMap& map, const GroundTruth& truth);

}  // namespace modmap
