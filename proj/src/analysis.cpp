#include "modmap/analysis.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <tuple>

#include "modmap/error.hpp"
#include "modmap/jsonl.hpp"

namespace modmap {

const ModalityMapEntry* ModalityMap::find(const std::string& id) const
{
    for (const auto& e : entries)
        if (e.instance_id == id)
            return &e;
    return nullptr;
}

ModalityMap map_from_labels(const std::vector<SolvabilityLabel>& labels, const DatasetManifest& manifest,
                            bool exclude_insufficient)
{
    const int m = manifest.modality_count();
    struct Acc {
        ModalitySet solvable;
        ModalitySet seen;
        bool insufficient = false;
        LabelProvenance provenance = LabelProvenance::GoldSeed;
    };
    std::vector<std::string> order;
    std::map<std::string, Acc> acc;
    for (const auto& l : labels) {
        if (l.modality < 0 || l.modality >= m)
            throw ValidationError("label for '" + l.instance_id + "' has invalid modality");
        auto [it, inserted] = acc.try_emplace(l.instance_id);
        if (inserted) {
            order.push_back(l.instance_id);
            it->second.provenance = l.provenance;
        }
        auto& a = it->second;
        if (a.seen.contains(l.modality))
            throw ValidationError("duplicate label for '" + l.instance_id + "' modality "
                                  + manifest.modalities()[l.modality].name);
        a.seen = a.seen.with(l.modality);
        if (l.solvable)
            a.solvable = a.solvable.with(l.modality);
        a.insufficient = a.insufficient || l.insufficient_data;
    }
    ModalityMap map;
    map.modality_count = m;
    for (const auto& id : order) {
        const auto& a = acc.at(id);
        if (a.seen != ModalitySet::full(m))
            throw ValidationError("instance '" + id + "' lacks a label for some modality");
        if (exclude_insufficient && a.insufficient)
            continue;
        map.entries.push_back({id, a.solvable, a.provenance});
    }
    return map;
}

SilverAnnotation silver_annotate(const std::vector<RandomForestModel>& models,
                                 const std::vector<FeatureVector>& features, int modality_count)
{
    if (static_cast<int>(models.size()) != modality_count)
        throw ConfigError("expected one classifier per modality (" + std::to_string(modality_count) + "), got "
                          + std::to_string(models.size()));
    for (int i = 0; i < modality_count; ++i) {
        if (models[i].modality.index != i)
            throw ConfigError("no classifier for modality index " + std::to_string(i));
        if (!(models[i].layout == models.front().layout))
            throw ConfigError("classifiers disagree on feature layout");
    }
    SilverAnnotation out;
    out.map.modality_count = modality_count;
    for (const auto& fv : features) {
        ModalitySet s;
        for (int i = 0; i < modality_count; ++i) {
            const auto p = predict(models[i], fv);
            if (p.label)
                s = s.with(i);
            SolvabilityLabel l;
            l.instance_id = fv.instance_id;
            l.modality = i;
            l.solvable = p.label;
            l.provenance = LabelProvenance::SilverClassifier;
            l.score = p.score;
            out.labels.push_back(std::move(l));
        }
        out.map.entries.push_back({fv.instance_id, s, LabelProvenance::SilverClassifier});
    }
    return out;
}

Histogram answerability_histogram(const ModalityMap& map)
{
    if (map.entries.empty())
        throw InvalidArgument("answerability histogram of an empty map");
    Histogram h;
    h.counts.assign(static_cast<std::size_t>(map.modality_count), 0);
    h.total = map.entries.size();
    for (const auto& e : map.entries) {
        if (e.solvable.empty())
            ++h.none_count;
        for (int i = 0; i < map.modality_count; ++i)
            h.counts[i] += e.solvable.contains(i);
    }
    return h;
}

double VennSummary::fraction_multi() const
{
    if (total == 0)
        return 0.0;
    std::size_t n = 0;
    for (std::size_t mask = 0; mask < region_counts.size(); ++mask)
        if (ModalitySet(static_cast<std::uint32_t>(mask)).size() >= 2)
            n += region_counts[mask];
    return static_cast<double>(n) / total;
}

double VennSummary::fraction_all() const
{
    return total == 0 ? 0.0 : static_cast<double>(region_counts.back()) / total;
}

VennSummary venn_regions(const ModalityMap& map)
{
    if (map.modality_count < 1 || map.modality_count > kMaxModalities)
        throw InvalidArgument("modality count out of range for Venn regions");
    VennSummary v;
    v.modality_count = map.modality_count;
    v.region_counts.assign(std::size_t{1} << map.modality_count, 0);
    for (const auto& e : map.entries) {
        if (e.solvable.mask() >= v.region_counts.size())
            throw InvariantError("solvable set outside the manifest modalities for '" + e.instance_id + "'");
        ++v.region_counts[e.solvable.mask()];
    }
    v.total = map.entries.size();
    return v;
}

int argmax_lowest(std::span<const double> probs)
{
    int best = 0;
    for (std::size_t i = 1; i < probs.size(); ++i)
        if (probs[i] > probs[best])
            best = static_cast<int>(i);
    return best;
}

std::vector<RowFilter> default_row_filters(const DatasetManifest& manifest, const std::vector<ModalitySet>& groups,
                                           const std::vector<std::string>& tags)
{
    const ModalitySet full = manifest.full_set();
    std::vector<RowFilter> rows;
    rows.push_back({"all", [](const Instance&, ModalitySet) { return true; }, false});
    rows.push_back({"answerable-by-all", [full](const Instance&, ModalitySet s) { return s == full; }, false});
    for (const auto& m : manifest.modalities()) {
        const ModalitySet only = ModalitySet::single(m.index);
        rows.push_back({"only-" + m.name, [only](const Instance&, ModalitySet s) { return s == only; }, false});
    }
    for (ModalitySet g : groups) {
        rows.push_back({"only-" + manifest.subset_name(g),
                        [g](const Instance&, ModalitySet s) { return !s.empty() && s.subset_of(g); }, false});
    }
    for (const auto& tag : tags)
        rows.push_back({"tag:" + tag, [tag](const Instance& inst, ModalitySet) { return inst.has_tag(tag); }, true});
    return rows;
}

std::vector<AccuracyColumn> default_columns(const DatasetManifest& manifest, const std::vector<ModalitySet>& subsets)
{
    std::vector<AccuracyColumn> cols;
    cols.push_back({"base", kMainModel, manifest.full_set()});
    for (ModalitySet s : subsets)
        cols.push_back({manifest.subset_name(s), kMainModel, s});
    return cols;
}

SplitAccuracyTable split_accuracy(const DatasetManifest& manifest, const ProbabilityStore& store,
                                  const ModalityMap& map, const std::vector<RowFilter>& rows,
                                  const std::vector<AccuracyColumn>& columns)
{
    const ModalitySet full = manifest.full_set();
    SplitAccuracyTable t;
    for (const auto& r : rows)
        t.rows.push_back(r.name);
    for (const auto& c : columns)
        t.columns.push_back(c.name);
    t.cells.assign(rows.size(), std::vector<AccuracyCell>(columns.size()));

    for (std::size_t ri = 0; ri < rows.size(); ++ri) {
        const auto& row = rows[ri];
        for (std::size_t ci = 0; ci < columns.size(); ++ci) {
            const auto& col = columns[ci];
            auto& cell = t.cells[ri][ci];
            for (const auto& e : map.entries) {
                const Instance& inst = manifest.at(e.instance_id);
                if (!row.accepts(inst, e.solvable))
                    continue;
                if (row.restrict_to_column_modalities && col.subset != full && !e.solvable.intersects(col.subset))
                    continue;
                const auto& probs = store.at(e.instance_id, col.model_id, std::nullopt, col.subset);
                const int best = argmax_lowest(probs);
                if (std::count(probs.begin(), probs.end(), probs[best]) > 1)
                    ++cell.argmax_ties;
                ++cell.n;
                cell.correct += (best == inst.gold_index);
            }
            if (cell.n > 0)
                cell.accuracy = static_cast<double>(cell.correct) / static_cast<double>(cell.n);
            else
                t.warnings.push_back("row '" + row.name + "' is empty for column '" + col.name + "'");
        }
    }
    return t;
}

std::pair<double, double> mean_variance(std::span<const double> values)
{
    if (values.empty())
        throw InvalidArgument("mean of an empty sequence");
    double sum = 0.0;
    for (double v : values)
        sum += v;
    const double n = static_cast<double>(values.size());
    double mean = sum / n;
    double residual = 0.0;
    for (double v : values)
        residual += v - mean;
    mean += residual / n;
    double ss = 0.0;
    for (double v : values)
        ss += (v - mean) * (v - mean);
    return {mean, ss / n};
}

CartographyResult cartography(const DatasetManifest& manifest, const ProbabilityStore& store,
                              const std::vector<std::string>& instance_ids, const ModalityMap* map,
                              const std::string& model_id)
{
    const ModalitySet full = manifest.full_set();
    CartographyResult out;
    for (const auto& id : instance_ids) {
        const Instance& inst = manifest.at(id);
        auto epochs = store.epochs(id, model_id, full);
        if (epochs.size() < 2) {
            out.excluded.push_back(id);
            continue;
        }
        CartographyRecord rec;
        rec.instance_id = id;
        for (int e : epochs)
            rec.gold_probs_by_epoch.push_back(store.at(id, model_id, e, full)[inst.gold_index]);
        rec.epochs = std::move(epochs);
        std::tie(rec.mean, rec.variance) = mean_variance(rec.gold_probs_by_epoch);
        out.records.push_back(std::move(rec));
    }

    std::vector<std::size_t> order(out.records.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto& ra = out.records[a];
        const auto& rb = out.records[b];
        if (ra.variance != rb.variance)
            return ra.variance > rb.variance;
        return ra.instance_id < rb.instance_id;
    });
    const std::size_t n_amb = (out.records.size() + 1) / 2;
    for (std::size_t i = 0; i < n_amb; ++i)
        out.ambiguous_ids.push_back(out.records[order[i]].instance_id);

    const int m = manifest.modality_count();
    out.ambiguous_fractions.assign(m, 0.0);
    out.all_fractions.assign(m, 0.0);
    if (map) {
        std::map<std::string, ModalitySet> lookup;
        for (const auto& e : map->entries)
            lookup.emplace(e.instance_id, e.solvable);
        const std::set<std::string> ambiguous(out.ambiguous_ids.begin(), out.ambiguous_ids.end());
        std::vector<std::size_t> amb_counts(m, 0), all_counts(m, 0);
        for (const auto& rec : out.records) {
            auto it = lookup.find(rec.instance_id);
            if (it == lookup.end())
                continue;
            const bool amb = ambiguous.count(rec.instance_id) > 0;
            ++out.n_all_mapped;
            out.n_ambiguous_mapped += amb;
            for (int i = 0; i < m; ++i) {
                all_counts[i] += it->second.contains(i);
                if (amb)
                    amb_counts[i] += it->second.contains(i);
            }
        }
        for (int i = 0; i < m; ++i) {
            if (out.n_all_mapped)
                out.all_fractions[i] = static_cast<double>(all_counts[i]) / out.n_all_mapped;
            if (out.n_ambiguous_mapped)
                out.ambiguous_fractions[i] = static_cast<double>(amb_counts[i]) / out.n_ambiguous_mapped;
        }
    }
    return out;
}

SensitivityResult sensitivity_ranking(const DatasetManifest& manifest, const ProbabilityStore& store, int modality,
                                      std::size_t k, const std::vector<std::string>& instance_ids,
                                      const std::string& model_id)
{
    if (modality < 0 || modality >= manifest.modality_count())
        throw InvalidArgument("sensitivity ranking for an unknown modality");
    const ModalitySet full = manifest.full_set();
    const ModalitySet masked = full.without(modality);
    SensitivityResult out;
    out.modality = modality;
    std::vector<SensitivityEntry> all;
    for (const auto& id : instance_ids) {
        const auto* pf = store.find(id, model_id, std::nullopt, full);
        const auto* pm = store.find(id, model_id, std::nullopt, masked);
        if (!pf || !pm)
            continue;
        const int gold = manifest.at(id).gold_index;
        all.push_back({id, (*pf)[gold], (*pm)[gold], (*pf)[gold] - (*pm)[gold]});
    }
    std::sort(all.begin(), all.end(), [](const SensitivityEntry& a, const SensitivityEntry& b) {
        if (a.drop != b.drop)
            return a.drop > b.drop;
        return a.instance_id < b.instance_id;
    });
    out.available = all.size();
    out.truncated = k > all.size();
    all.resize(std::min(k, all.size()));
    out.top = std::move(all);
    return out;
}

std::vector<TrainedModality> train_classifiers(const DatasetManifest& manifest,
                                               const std::map<std::string, FeatureVector>& features,
                                               const std::vector<SolvabilityLabel>& gold_labels,
                                               const SeedSample& seed, const ClassifierTrainingConfig& config)
{
    const FeatureLayout layout{config.variant, manifest.modality_count(), manifest.label_space_size()};

    std::map<std::pair<std::string, int>, bool> label_of;
    for (const auto& l : gold_labels)
        if (l.provenance == LabelProvenance::GoldSeed && !l.insufficient_data)
            label_of[{l.instance_id, l.modality}] = l.solvable;

    auto build = [&](Partition p, int modality) {
        std::vector<FeatureVector> fvs;
        std::vector<bool> labels;
        for (const auto& id : seed.ids_in(p)) {
            auto it = label_of.find({id, modality});
            if (it == label_of.end())
                continue;
            auto f = features.find(id);
            if (f == features.end())
                throw MissingDataError("seed instance '" + id + "' has no feature vector");
            if (!(f->second.layout == layout))
                throw ConfigError("feature vector of '" + id + "' has layout variant "
                                  + std::string(to_string(f->second.layout.variant)) + ", expected "
                                  + std::string(to_string(layout.variant)));
            fvs.push_back(f->second);
            labels.push_back(it->second);
        }
        auto ts = TrainingSet::from(fvs, labels);
        ts.layout = layout;
        return ts;
    };

    std::vector<TrainedModality> out;
    for (const auto& mod : manifest.modalities()) {
        if (!config.modalities.empty()
            && std::find(config.modalities.begin(), config.modalities.end(), mod.index) == config.modalities.end())
            continue;
        auto train = build(Partition::Train, mod.index);
        auto val = build(Partition::Val, mod.index);
        if (train.size() == 0)
            throw ConfigError("no labeled seed instances in the train partition for modality '" + mod.name + "'");
        if (val.size() == 0)
            throw ConfigError("no labeled seed instances in the val partition for modality '" + mod.name + "'");
        TrainedModality tm;
        tm.n_train = train.size();
        tm.n_val = val.size();
        tm.search = grid_search(train, val, config.grid, config.forest, derive_seed(config.seed, mod.index), mod,
                                config.threads);
        if (auto test = build(Partition::Test, mod.index); test.size() > 0)
            tm.test = evaluate(tm.search.best, test);
        if (auto ood = build(Partition::Ood, mod.index); ood.size() > 0)
            tm.ood = evaluate(tm.search.best, ood);
        out.push_back(std::move(tm));
    }
    return out;
}

std::vector<TrainedModality> train_classifiers(const DatasetManifest& manifest, const ProbabilityStore& store,
                                               const std::string& model_id,
                                               const std::vector<SolvabilityLabel>& gold_labels,
                                               const SeedSample& seed, const ClassifierTrainingConfig& config)
{
    const FeatureLayout layout{config.variant, manifest.modality_count(), manifest.label_space_size()};
    std::map<std::string, FeatureVector> features;
    for (const auto& id : seed.instance_ids)
        features.emplace(id, assemble_features(manifest.at(id), store, layout, model_id));
    return train_classifiers(manifest, features, gold_labels, seed, config);
}

std::string fold_model_id(Fold f)
{
    return f == Fold::A ? "fold_A" : "fold_B";
}

std::map<std::string, Fold> parse_folds(const std::string& path, const DatasetManifest& manifest)
{
    std::map<std::string, Fold> folds;
    read_jsonl(path, [&](const Json& obj, const LineContext& ctx) {
        auto id = ctx.require<std::string>(obj, "instance_id");
        auto fold = ctx.require<std::string>(obj, "fold");
        if (!manifest.find(id))
            ctx.fail("unknown instance '" + id + "'");
        if (fold != "A" && fold != "B")
            ctx.fail("fold must be \"A\" or \"B\"");
        if (!folds.emplace(id, fold == "A" ? Fold::A : Fold::B).second)
            ctx.fail("instance '" + id + "' assigned to two folds");
    });
    return folds;
}

CrossFoldResult cross_fold_annotate(const DatasetManifest& manifest, const std::vector<std::string>& train_ids,
                                    const std::map<std::string, Fold>& folds, const ProbabilityStore& store,
                                    const std::vector<SolvabilityLabel>& gold_labels, const SeedSample& seed,
                                    const ClassifierTrainingConfig& config)
{
    const int m = manifest.modality_count();
    const FeatureLayout layout{config.variant, m, manifest.label_space_size()};
    auto other = [](Fold f) { return f == Fold::A ? Fold::B : Fold::A; };

    // Route and check every instance before any training.
    std::vector<Fold> source(train_ids.size());
    for (std::size_t i = 0; i < train_ids.size(); ++i) {
        const auto& id = train_ids[i];
        manifest.at(id);
        auto it = folds.find(id);
        if (it == folds.end())
            throw ValidationError("train instance '" + id + "' has no fold assignment");
        const Fold own = it->second;
        source[i] = other(own);
        if (!store.has_any(id, fold_model_id(source[i]))) {
            if (store.has_any(id, fold_model_id(own)))
                throw LeakageError("instance '" + id + "' only has probabilities from " + fold_model_id(own)
                                   + ", the model trained on its own fold");
            throw MissingDataError("instance '" + id + "' has no probabilities from " + fold_model_id(source[i]));
        }
    }
    for (const auto& id : seed.instance_ids) {
        auto it = folds.find(id);
        if (it != folds.end())
            throw LeakageError("seed instance '" + id + "' belongs to fold " + (it->second == Fold::A ? "A" : "B")
                               + " and cannot train classifiers on fold-model features");
    }

    CrossFoldResult out;
    std::map<Fold, std::vector<RandomForestModel>> classifiers;
    for (Fold f : {Fold::A, Fold::B}) {
        if (std::find(source.begin(), source.end(), f) == source.end())
            continue;
        const auto model_id = fold_model_id(f);
        for (const auto& id : seed.instance_ids)
            out.audit.emplace_back(id, model_id);
        auto all_modalities = config;
        all_modalities.modalities.clear();
        auto trained = train_classifiers(manifest, store, model_id, gold_labels, seed, all_modalities);
        for (auto& t : trained)
            classifiers[f].push_back(std::move(t.search.best));
    }

    out.annotation.map.modality_count = m;
    for (std::size_t i = 0; i < train_ids.size(); ++i) {
        const auto& id = train_ids[i];
        const auto model_id = fold_model_id(source[i]);
        out.audit.emplace_back(id, model_id);
        auto fv = assemble_features(manifest.at(id), store, layout, model_id);
        auto part = silver_annotate(classifiers.at(source[i]), {fv}, m);
        out.annotation.map.entries.push_back(part.map.entries.front());
        for (auto& l : part.labels)
            out.annotation.labels.push_back(std::move(l));
    }
    return out;
}

}  // namespace modmap
