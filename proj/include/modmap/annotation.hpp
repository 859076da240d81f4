#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "modmap/core.hpp"

namespace modmap {

// One worker's response to one instance shown through a single modality.
struct AnnotationRecord {
    std::string instance_id;
    int modality = 0;
    std::string worker_id;
    int answer_index = 0;
    bool claims_answerable = false;
    bool seen_before = false;

    friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};

struct QualityPolicy {
    // Workers whose yes-rate is >= claim_extreme or <= 1 - claim_extreme are excluded,
    // once they have at least min_responses responses.
    double claim_extreme = 0.95;
    int min_responses = 20;
    // Leave-one-out agreement with the per-item majority answer.
    double min_agreement = 0.5;
};

struct WorkerStats {
    std::string worker_id;
    int n_responses = 0;
    double agreement_rate = 1.0;
    double claim_yes_rate = 0.0;
    double seen_before_rate = 0.0;
    // Fraction of responses whose answerability claim matches whether the answer was correct.
    double consistency_rate = 0.0;
    // Responses for which another worker answered the same item.
    int n_agreement_items = 0;
    bool excluded_extreme_claims = false;
    bool excluded_low_agreement = false;
};

enum class DropReason { SeenBefore, ExtremeClaimer, LowAgreement };

std::string_view to_string(DropReason r);

struct DroppedRecord {
    AnnotationRecord record;
    DropReason reason;
};

struct FilterResult {
    std::vector<AnnotationRecord> kept;
    std::vector<DroppedRecord> dropped;
    std::vector<WorkerStats> stats;  // sorted by worker_id
};

// Throws ValidationError for records that reference unknown instances or modalities,
// out-of-range answers, duplicate (instance, modality, worker) triples, or a worker
// who saw the same instance through two different modalities.
void validate_records(const std::vector<AnnotationRecord>& records, const DatasetManifest& manifest);

FilterResult filter_records(const std::vector<AnnotationRecord>& records, const DatasetManifest& manifest,
                            const QualityPolicy& policy);

enum class LabelProvenance { GoldSeed, SilverClassifier };

std::string_view to_string(LabelProvenance p);
LabelProvenance parse_provenance(std::string_view s);

struct SolvabilityLabel {
    std::string instance_id;
    int modality = 0;
    bool solvable = false;
    LabelProvenance provenance = LabelProvenance::GoldSeed;
    int n_correct = 0;
    int n_counted = 0;
    bool insufficient_data = false;
    bool below_quorum = false;
    // Classifier score for silver labels.
    std::optional<double> score;

    friend bool operator==(const SolvabilityLabel&, const SolvabilityLabel&) = default;
};

// One label per (seed instance, modality), seed order then modality order.
// solvable iff a strict majority of counted records picked the gold answer.
std::vector<SolvabilityLabel> aggregate_seed(const std::vector<AnnotationRecord>& kept,
                                             const DatasetManifest& manifest, const SeedSample& seed,
                                             int quorum);

struct ClaimReliability {
    double fraction = 0.0;
    int n_claimed_unsolvable = 0;  // pairs whose majority claims_answerable is false
    int n_actually_solvable = 0;   // ...of which the aggregated label is solvable
    bool empty_denominator = false;
};

// Share of (instance, modality) pairs that annotators mostly called unanswerable
// but that the aggregated label marks solvable.
ClaimReliability claim_reliability_report(const std::vector<AnnotationRecord>& records,
                                          const std::vector<SolvabilityLabel>& labels);

std::vector<AnnotationRecord> parse_annotations(const std::string& path, const DatasetManifest& manifest);
std::vector<AnnotationRecord> parse_annotations(std::istream& in, const std::string& source,
                                                const DatasetManifest& manifest);
void write_annotations(const std::vector<AnnotationRecord>& records, const DatasetManifest& manifest,
                       std::ostream& out);

std::vector<SolvabilityLabel> parse_labels(const std::string& path, const DatasetManifest& manifest);
void write_labels(const std::vector<SolvabilityLabel>& labels, const DatasetManifest& manifest, std::ostream& out);

void write_worker_stats_csv(const std::vector<WorkerStats>& stats, std::ostream& out);

}  // namespace modmap
