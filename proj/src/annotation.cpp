#include "modmap/annotation.hpp"

#include <algorithm>
#include <map>
#include <ostream>
#include <set>
#include <tuple>

#include "modmap/error.hpp"
#include "modmap/jsonl.hpp"
#include "modmap/text.hpp"

namespace modmap {

namespace {

using PairKey = std::pair<std::string, int>;  // (instance_id, modality)

PairKey key_of(const AnnotationRecord& r)
{
    return {r.instance_id, r.modality};
}

}  // namespace

std::string_view to_string(DropReason r)
{
    switch (r) {
    case DropReason::SeenBefore: return "seen_before";
    case DropReason::ExtremeClaimer: return "extreme_claimer";
    case DropReason::LowAgreement: return "low_agreement";
    }
    return "seen_before";
}

std::string_view to_string(LabelProvenance p)
{
    return p == LabelProvenance::GoldSeed ? "gold-seed" : "silver-classifier";
}

LabelProvenance parse_provenance(std::string_view s)
{
    if (s == "gold-seed")
        return LabelProvenance::GoldSeed;
    if (s == "silver-classifier")
        return LabelProvenance::SilverClassifier;
    throw ValidationError("unknown provenance '" + std::string(s) + "'");
}

void validate_records(const std::vector<AnnotationRecord>& records, const DatasetManifest& manifest)
{
    std::set<std::tuple<std::string, int, std::string>> seen;
    std::map<std::pair<std::string, std::string>, int> worker_modality;  // (worker, instance) -> modality
    for (const auto& r : records) {
        const Instance* inst = manifest.find(r.instance_id);
        if (!inst)
            throw ValidationError("annotation references unknown instance '" + r.instance_id + "'");
        if (r.modality < 0 || r.modality >= manifest.modality_count())
            throw ValidationError("annotation for '" + r.instance_id + "' has invalid modality index");
        if (r.answer_index < 0 || r.answer_index >= manifest.label_space_size())
            throw ValidationError("annotation by '" + r.worker_id + "' on '" + r.instance_id
                                  + "' has answer_index outside the label space");
        if (!seen.emplace(r.instance_id, r.modality, r.worker_id).second)
            throw ValidationError("duplicate annotation by '" + r.worker_id + "' on '" + r.instance_id + "' ("
                                  + manifest.modalities()[r.modality].name + ")");
        auto [it, inserted] = worker_modality.emplace(std::make_pair(r.worker_id, r.instance_id), r.modality);
        if (!inserted && it->second != r.modality)
            throw ValidationError("worker '" + r.worker_id + "' annotated instance '" + r.instance_id
                                  + "' under two modalities");
    }
}

FilterResult filter_records(const std::vector<AnnotationRecord>& records, const DatasetManifest& manifest,
                            const QualityPolicy& policy)
{
    auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!in_unit(policy.claim_extreme) || !in_unit(policy.min_agreement) || policy.min_responses < 0)
        throw InvalidArgument("quality policy thresholds must lie in [0, 1]");
    validate_records(records, manifest);

    // Answers per item, excluding seen-before responses (those are omitted).
    std::map<PairKey, std::map<int, int>> answer_counts;
    for (const auto& r : records)
        if (!r.seen_before)
            ++answer_counts[key_of(r)][r.answer_index];

    struct Acc {
        int n = 0, yes = 0, seen = 0, consistent = 0, agree_items = 0, agree = 0;
    };
    std::map<std::string, Acc> acc;
    for (const auto& r : records) {
        auto& a = acc[r.worker_id];
        ++a.n;
        a.yes += r.claims_answerable;
        a.seen += r.seen_before;
        const bool correct = r.answer_index == manifest.at(r.instance_id).gold_index;
        a.consistent += (r.claims_answerable == correct);
        if (r.seen_before)
            continue;
        auto counts = answer_counts.at(key_of(r));
        if (--counts[r.answer_index] == 0)
            counts.erase(r.answer_index);
        if (counts.empty())
            continue;
        int best = 0;
        for (const auto& [ans, c] : counts)
            best = std::max(best, c);
        ++a.agree_items;
        auto mine = counts.find(r.answer_index);
        a.agree += (mine != counts.end() && mine->second == best);
    }

    FilterResult result;
    std::map<std::string, const WorkerStats*> by_worker;
    for (const auto& [worker, a] : acc) {
        WorkerStats s;
        s.worker_id = worker;
        s.n_responses = a.n;
        s.claim_yes_rate = static_cast<double>(a.yes) / a.n;
        s.seen_before_rate = static_cast<double>(a.seen) / a.n;
        s.consistency_rate = static_cast<double>(a.consistent) / a.n;
        s.n_agreement_items = a.agree_items;
        s.agreement_rate = a.agree_items > 0 ? static_cast<double>(a.agree) / a.agree_items : 1.0;
        s.excluded_extreme_claims = a.n >= policy.min_responses
                                    && (s.claim_yes_rate >= policy.claim_extreme
                                        || s.claim_yes_rate <= 1.0 - policy.claim_extreme);
        s.excluded_low_agreement = a.agree_items > 0 && s.agreement_rate < policy.min_agreement;
        result.stats.push_back(s);
    }
    for (const auto& s : result.stats)
        by_worker[s.worker_id] = &s;

    for (const auto& r : records) {
        const auto& s = *by_worker.at(r.worker_id);
        if (r.seen_before)
            result.dropped.push_back({r, DropReason::SeenBefore});
        else if (s.excluded_extreme_claims)
            result.dropped.push_back({r, DropReason::ExtremeClaimer});
        else if (s.excluded_low_agreement)
            result.dropped.push_back({r, DropReason::LowAgreement});
        else
            result.kept.push_back(r);
    }
    return result;
}

std::vector<SolvabilityLabel> aggregate_seed(const std::vector<AnnotationRecord>& kept,
                                             const DatasetManifest& manifest, const SeedSample& seed, int quorum)
{
    if (quorum < 1)
        throw InvalidArgument("quorum must be at least 1");
    std::map<PairKey, std::pair<int, int>> votes;  // (n_correct, n_counted)
    for (const auto& r : kept) {
        const Instance& inst = manifest.at(r.instance_id);
        auto& v = votes[key_of(r)];
        v.first += (r.answer_index == inst.gold_index);
        ++v.second;
    }

    std::vector<SolvabilityLabel> labels;
    labels.reserve(seed.instance_ids.size() * manifest.modality_count());
    for (const auto& id : seed.instance_ids) {
        for (const auto& m : manifest.modalities()) {
            SolvabilityLabel l;
            l.instance_id = id;
            l.modality = m.index;
            l.provenance = LabelProvenance::GoldSeed;
            if (auto it = votes.find({id, m.index}); it != votes.end()) {
                l.n_correct = it->second.first;
                l.n_counted = it->second.second;
            }
            l.solvable = 2 * l.n_correct > l.n_counted;
            l.insufficient_data = l.n_counted == 0;
            l.below_quorum = l.n_counted < quorum;
            labels.push_back(std::move(l));
        }
    }
    return labels;
}

ClaimReliability claim_reliability_report(const std::vector<AnnotationRecord>& records,
                                          const std::vector<SolvabilityLabel>& labels)
{
    std::map<PairKey, std::pair<int, int>> claims;  // (yes, no)
    for (const auto& r : records) {
        auto& c = claims[key_of(r)];
        (r.claims_answerable ? c.first : c.second)++;
    }
    ClaimReliability out;
    for (const auto& l : labels) {
        auto it = claims.find({l.instance_id, l.modality});
        if (it == claims.end() || l.insufficient_data)
            continue;
        if (it->second.second > it->second.first) {
            ++out.n_claimed_unsolvable;
            out.n_actually_solvable += l.solvable;
        }
    }
    out.empty_denominator = out.n_claimed_unsolvable == 0;
    out.fraction = out.empty_denominator ? 0.0
                                         : static_cast<double>(out.n_actually_solvable) / out.n_claimed_unsolvable;
    return out;
}

std::vector<AnnotationRecord> parse_annotations(std::istream& in, const std::string& source,
                                                const DatasetManifest& manifest)
{
    std::vector<AnnotationRecord> out;
    read_jsonl(in, source, [&](const Json& obj, const LineContext& ctx) {
        AnnotationRecord r;
        r.instance_id = ctx.require<std::string>(obj, "instance_id");
        auto modality = ctx.require<std::string>(obj, "modality");
        auto idx = manifest.modality_index(modality);
        if (!idx)
            ctx.fail("unknown modality '" + modality + "'");
        r.modality = *idx;
        r.worker_id = ctx.require<std::string>(obj, "worker_id");
        r.answer_index = ctx.require<int>(obj, "answer_index");
        r.claims_answerable = ctx.require<bool>(obj, "claims_answerable");
        r.seen_before = ctx.require<bool>(obj, "seen_before");
        if (!manifest.find(r.instance_id))
            ctx.fail("unknown instance '" + r.instance_id + "'");
        if (r.answer_index < 0 || r.answer_index >= manifest.label_space_size())
            ctx.fail("answer_index outside the label space");
        out.push_back(std::move(r));
    });
    return out;
}

std::vector<AnnotationRecord> parse_annotations(const std::string& path, const DatasetManifest& manifest)
{
    auto in = open_input(path);
    return parse_annotations(in, path, manifest);
}

void write_annotations(const std::vector<AnnotationRecord>& records, const DatasetManifest& manifest,
                       std::ostream& out)
{
    for (const auto& r : records) {
        OrderedJson j;
        j["instance_id"] = r.instance_id;
        j["modality"] = manifest.modalities().at(r.modality).name;
        j["worker_id"] = r.worker_id;
        j["answer_index"] = r.answer_index;
        j["claims_answerable"] = r.claims_answerable;
        j["seen_before"] = r.seen_before;
        out << j.dump() << '\n';
    }
}

std::vector<SolvabilityLabel> parse_labels(const std::string& path, const DatasetManifest& manifest)
{
    std::vector<SolvabilityLabel> out;
    read_jsonl(path, [&](const Json& obj, const LineContext& ctx) {
        SolvabilityLabel l;
        l.instance_id = ctx.require<std::string>(obj, "instance_id");
        auto modality = ctx.require<std::string>(obj, "modality");
        auto idx = manifest.modality_index(modality);
        if (!idx)
            ctx.fail("unknown modality '" + modality + "'");
        if (!manifest.find(l.instance_id))
            ctx.fail("unknown instance '" + l.instance_id + "'");
        l.modality = *idx;
        l.solvable = ctx.require<bool>(obj, "solvable");
        try {
            l.provenance = parse_provenance(ctx.require<std::string>(obj, "provenance"));
        } catch (const ParseError&) {
            throw;
        } catch (const ValidationError& e) {
            ctx.fail(e.what());
        }
        l.n_correct = ctx.require<int>(obj, "n_correct");
        l.n_counted = ctx.require<int>(obj, "n_counted");
        if (l.n_correct < 0 || l.n_correct > l.n_counted)
            ctx.fail("n_correct must lie in [0, n_counted]");
        l.insufficient_data = ctx.optional<bool>(obj, "insufficient_data").value_or(false);
        l.below_quorum = ctx.optional<bool>(obj, "below_quorum").value_or(false);
        l.score = ctx.optional<double>(obj, "score");
        out.push_back(std::move(l));
    });
    return out;
}

void write_labels(const std::vector<SolvabilityLabel>& labels, const DatasetManifest& manifest, std::ostream& out)
{
    for (const auto& l : labels) {
        OrderedJson j;
        j["instance_id"] = l.instance_id;
        j["modality"] = manifest.modalities().at(l.modality).name;
        j["solvable"] = l.solvable;
        j["provenance"] = std::string(to_string(l.provenance));
        j["n_correct"] = l.n_correct;
        j["n_counted"] = l.n_counted;
        if (l.provenance == LabelProvenance::GoldSeed) {
            j["insufficient_data"] = l.insufficient_data;
            j["below_quorum"] = l.below_quorum;
        }
        if (l.score)
            j["score"] = *l.score;
        out << j.dump() << '\n';
    }
}

void write_worker_stats_csv(const std::vector<WorkerStats>& stats, std::ostream& out)
{
    out << "worker_id,n_responses,agreement_rate,n_agreement_items,claim_yes_rate,seen_before_rate,"
           "consistency_rate,excluded_extreme_claims,excluded_low_agreement\n";
    for (const auto& s : stats) {
        out << csv_field(s.worker_id) << ',' << s.n_responses << ',' << format_double(s.agreement_rate) << ','
            << s.n_agreement_items << ',' << format_double(s.claim_yes_rate) << ','
            << format_double(s.seen_before_rate) << ',' << format_double(s.consistency_rate) << ','
            << (s.excluded_extreme_claims ? 1 : 0) << ',' << (s.excluded_low_agreement ? 1 : 0) << '\n';
    }
}

}  // namespace modmap
