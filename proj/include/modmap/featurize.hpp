#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "modmap/core.hpp"
#include "modmap/jsonl.hpp"

namespace modmap {

inline constexpr const char* kMainModel = "main";
inline constexpr double kProbabilitySumTolerance = 1e-4;

struct ProbabilityRecord {
    std::string instance_id;
    ModalitySet subset;
    std::vector<double> probs;
    std::string model_id = kMainModel;
    std::optional<int> epoch;  // nullopt = final model

    friend bool operator==(const ProbabilityRecord&, const ProbabilityRecord&) = default;
};

// Softmax outputs indexed by (instance, model, epoch, subset).
class ProbabilityStore {
public:
    struct Key {
        std::string instance_id;
        std::string model_id;
        std::optional<int> epoch;
        ModalitySet subset;

        auto operator<=>(const Key&) const = default;
    };

    ProbabilityStore() = default;
    ProbabilityStore(int modality_count, int label_space_size);

    int modality_count() const { return modality_count_; }
    int label_space_size() const { return label_space_size_; }

    // Validates, renormalizes and stores. Throws ValidationError on negative or
    // non-finite entries, wrong length, a sum further than 1e-4 from 1, or a duplicate key.
    void insert(ProbabilityRecord record);

    const std::vector<double>* find(const std::string& instance_id, const std::string& model_id,
                                    std::optional<int> epoch, ModalitySet subset) const;
    const std::vector<double>& at(const std::string& instance_id, const std::string& model_id,
                                  std::optional<int> epoch, ModalitySet subset) const;

    // Explicitly tagged epochs available for (instance, model, subset), ascending.
    std::vector<int> epochs(const std::string& instance_id, const std::string& model_id, ModalitySet subset) const;
    bool has_any(const std::string& instance_id, const std::string& model_id) const;

    const std::map<Key, std::vector<double>>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

private:
    int modality_count_ = 0;
    int label_space_size_ = 0;
    std::map<Key, std::vector<double>> entries_;
};

ProbabilityStore ingest_probabilities(const std::string& path, const DatasetManifest& manifest);
ProbabilityStore ingest_probabilities(std::istream& in, const std::string& source, const DatasetManifest& manifest);
void write_probability_record(const ProbabilityRecord& record, const DatasetManifest& manifest, std::ostream& out);

enum class FeatureVariant { Full, SingleProbability, NoGoldSort };

std::string_view to_string(FeatureVariant v);
FeatureVariant parse_variant(std::string_view s);

struct FeatureLayout {
    FeatureVariant variant = FeatureVariant::Full;
    int modality_count = 0;
    int label_space_size = 0;

    // full / no_gold_sort: 2^M * L; single_probability: L.
    std::size_t width() const;

    friend bool operator==(const FeatureLayout&, const FeatureLayout&) = default;
};

OrderedJson layout_to_json(const FeatureLayout& layout);
FeatureLayout layout_from_json(const Json& j);

struct FeatureVector {
    std::string instance_id;
    std::vector<double> values;
    FeatureLayout layout;
};

// Moves probs[gold_index] to the front; the rest keep their relative order.
std::vector<double> gold_first_sort(std::span<const double> probs, int gold_index);

// Blocks are laid out in ascending subset-mask order. Throws MissingDataError
// naming every absent mask.
FeatureVector assemble_features(const Instance& instance, const ProbabilityStore& store, const FeatureLayout& layout,
                                const std::string& model_id = kMainModel, std::optional<int> epoch = std::nullopt);

std::vector<FeatureVector> assemble_all(const DatasetManifest& manifest, const ProbabilityStore& store,
                                        const FeatureLayout& layout, const std::vector<std::string>& instance_ids,
                                        const std::string& model_id = kMainModel);

void write_features(const std::vector<FeatureVector>& features, const FeatureLayout& layout, std::ostream& out);
std::vector<FeatureVector> parse_features(const std::string& path);

}  // namespace modmap
