#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "modmap/annotation.hpp"
#include "modmap/core.hpp"
#include "modmap/featurize.hpp"
#include "modmap/forest.hpp"

namespace modmap {

struct ModalityMapEntry {
    std::string instance_id;
    ModalitySet solvable;  // bit i set iff solvable with modality i alone
    LabelProvenance provenance = LabelProvenance::SilverClassifier;
};

struct ModalityMap {
    int modality_count = 0;
    std::vector<ModalityMapEntry> entries;

    std::size_t size() const { return entries.size(); }
    const ModalityMapEntry* find(const std::string& id) const;
};

// Requires one label per manifest modality for every instance that appears.
// With exclude_insufficient, instances with any insufficient_data label are dropped.
ModalityMap map_from_labels(const std::vector<SolvabilityLabel>& labels, const DatasetManifest& manifest,
                            bool exclude_insufficient = true);

struct SilverAnnotation {
    ModalityMap map;
    std::vector<SolvabilityLabel> labels;
};

// models[i] is the classifier for modality i. Throws ConfigError when a modality has
// no model or the models disagree on feature layout.
SilverAnnotation silver_annotate(const std::vector<RandomForestModel>& models,
                                 const std::vector<FeatureVector>& features, int modality_count);

struct Histogram {
    std::vector<std::size_t> counts;  // per modality
    std::size_t none_count = 0;
    std::size_t total = 0;

    double fraction(int modality) const { return static_cast<double>(counts.at(modality)) / total; }
    double none_fraction() const { return static_cast<double>(none_count) / total; }
};

// Throws InvalidArgument on an empty map.
Histogram answerability_histogram(const ModalityMap& map);

struct VennSummary {
    int modality_count = 0;
    std::vector<std::size_t> region_counts;  // indexed by mask, 2^M entries
    std::size_t total = 0;

    std::size_t count(ModalitySet s) const { return region_counts.at(s.mask()); }
    // Instances solvable by at least two modalities separately.
    double fraction_multi() const;
    double fraction_all() const;
};

VennSummary venn_regions(const ModalityMap& map);

struct RowFilter {
    std::string name;
    std::function<bool(const Instance&, ModalitySet)> accepts;
    // For a column showing a strict subset of modalities, keep only instances solvable
    // by at least one shown modality.
    bool restrict_to_column_modalities = false;
};

struct AccuracyColumn {
    std::string name;
    std::string model_id = kMainModel;
    ModalitySet subset;
};

struct AccuracyCell {
    std::size_t n = 0;
    std::size_t correct = 0;
    std::size_t argmax_ties = 0;
    std::optional<double> accuracy;  // absent when n == 0
};

struct SplitAccuracyTable {
    std::vector<std::string> rows;
    std::vector<std::string> columns;
    std::vector<std::vector<AccuracyCell>> cells;  // [row][column]
    std::vector<std::string> warnings;
};

// Lowest index wins among equal maxima.
int argmax_lowest(std::span<const double> probs);

// all, answerable-by-all, only-<m> per modality, only-<group> per group (nonzero mask within
// the group), and one row per tag.
std::vector<RowFilter> default_row_filters(const DatasetManifest& manifest, const std::vector<ModalitySet>& groups,
                                           const std::vector<std::string>& tags);
// base (all modalities) then one column per requested subset.
std::vector<AccuracyColumn> default_columns(const DatasetManifest& manifest, const std::vector<ModalitySet>& subsets);

SplitAccuracyTable split_accuracy(const DatasetManifest& manifest, const ProbabilityStore& store,
                                  const ModalityMap& map, const std::vector<RowFilter>& rows,
                                  const std::vector<AccuracyColumn>& columns);

struct CartographyRecord {
    std::string instance_id;
    std::vector<int> epochs;
    std::vector<double> gold_probs_by_epoch;
    double mean = 0.0;
    double variance = 0.0;  // population
};

struct CartographyResult {
    std::vector<CartographyRecord> records;  // input order
    std::vector<std::string> ambiguous_ids;  // top ceil(N/2) by variance
    std::vector<std::string> excluded;       // fewer than two epochs
    // Per-modality answerability within the ambiguous set and overall,
    // over instances present in the map.
    std::vector<double> ambiguous_fractions;
    std::vector<double> all_fractions;
    std::size_t n_ambiguous_mapped = 0;
    std::size_t n_all_mapped = 0;
};

// Population mean and variance (two-pass).
std::pair<double, double> mean_variance(std::span<const double> values);

// Reads the all-modalities record of every explicitly tagged epoch.
CartographyResult cartography(const DatasetManifest& manifest, const ProbabilityStore& store,
                              const std::vector<std::string>& instance_ids, const ModalityMap* map,
                              const std::string& model_id = kMainModel);

struct SensitivityEntry {
    std::string instance_id;
    double p_full = 0.0;
    double p_masked = 0.0;
    double drop = 0.0;
};

struct SensitivityResult {
    int modality = 0;
    std::vector<SensitivityEntry> top;
    std::size_t available = 0;
    bool truncated = false;  // fewer than k instances available
};

// Ranks by drop in gold probability when the modality is removed from the full set.
SensitivityResult sensitivity_ranking(const DatasetManifest& manifest, const ProbabilityStore& store, int modality,
                                      std::size_t k, const std::vector<std::string>& instance_ids,
                                      const std::string& model_id = kMainModel);

struct ClassifierTrainingConfig {
    FeatureVariant variant = FeatureVariant::Full;
    std::vector<GridPoint> grid = default_grid();
    ForestParams forest;
    std::uint64_t seed = 0;
    int threads = 0;
    // Modality indices to train; empty means all.
    std::vector<int> modalities;
};

struct TrainedModality {
    GridSearchResult search;
    std::optional<EvalResult> test;
    std::optional<EvalResult> ood;
    std::size_t n_train = 0;
    std::size_t n_val = 0;
};

// One grid-searched forest per modality from gold seed labels: trained on the seed's
// train partition, selected on val, scored on test and ood when present. Modality m
// uses seed derive_seed(config.seed, m).
std::vector<TrainedModality> train_classifiers(const DatasetManifest& manifest,
                                               const std::map<std::string, FeatureVector>& features,
                                               const std::vector<SolvabilityLabel>& gold_labels,
                                               const SeedSample& seed, const ClassifierTrainingConfig& config);
// Assembles seed features from the store's model_id records first.
std::vector<TrainedModality> train_classifiers(const DatasetManifest& manifest, const ProbabilityStore& store,
                                               const std::string& model_id,
                                               const std::vector<SolvabilityLabel>& gold_labels,
                                               const SeedSample& seed, const ClassifierTrainingConfig& config);

enum class Fold { A, B };

std::string fold_model_id(Fold f);
std::map<std::string, Fold> parse_folds(const std::string& path, const DatasetManifest& manifest);

struct CrossFoldResult {
    SilverAnnotation annotation;
    // Every (instance, model_id) whose probabilities were read, in read order.
    std::vector<std::pair<std::string, std::string>> audit;
};

// Each train instance is featurized with the probability model of the opposite fold
// and labeled by classifiers trained on seed features from that same model. Throws
// LeakageError when an instance has probabilities only from its own fold's model.
CrossFoldResult cross_fold_annotate(const DatasetManifest& manifest, const std::vector<std::string>& train_ids,
                                    const std::map<std::string, Fold>& folds, const ProbabilityStore& store,
                                    const std::vector<SolvabilityLabel>& gold_labels, const SeedSample& seed,
                                    const ClassifierTrainingConfig& config);

}  // namespace modmap
