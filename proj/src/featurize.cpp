#include "modmap/featurize.hpp"

#include <cmath>
#include <numeric>
#include <ostream>

#include "modmap/error.hpp"

namespace modmap {

ProbabilityStore::ProbabilityStore(int modality_count, int label_space_size)
    : modality_count_(modality_count), label_space_size_(label_space_size)
{
}

void ProbabilityStore::insert(ProbabilityRecord record)
{
    const std::string where = "probabilities for '" + record.instance_id + "' (mask "
                              + std::to_string(record.subset.mask()) + ")";
    if (static_cast<int>(record.probs.size()) != label_space_size_)
        throw ValidationError(where + " have length " + std::to_string(record.probs.size()) + ", expected "
                              + std::to_string(label_space_size_));
    if (record.subset.mask() >= (std::uint32_t{1} << modality_count_))
        throw ValidationError(where + " reference a subset outside the manifest modalities");
    double sum = 0.0;
    for (double p : record.probs) {
        if (!std::isfinite(p) || p < 0.0)
            throw ValidationError(where + " contain a negative or non-finite value");
        sum += p;
    }
    if (std::abs(sum - 1.0) > kProbabilitySumTolerance)
        throw ValidationError(where + " sum to " + std::to_string(sum) + ", outside 1 +/- 1e-4");
    if (sum != 1.0)
        for (double& p : record.probs)
            p /= sum;

    Key key{record.instance_id, record.model_id, record.epoch, record.subset};
    if (!entries_.emplace(std::move(key), std::move(record.probs)).second)
        throw ValidationError("duplicate " + where + " for model '" + record.model_id + "'");
}

const std::vector<double>* ProbabilityStore::find(const std::string& instance_id, const std::string& model_id,
                                                  std::optional<int> epoch, ModalitySet subset) const
{
    auto it = entries_.find(Key{instance_id, model_id, epoch, subset});
    return it == entries_.end() ? nullptr : &it->second;
}

const std::vector<double>& ProbabilityStore::at(const std::string& instance_id, const std::string& model_id,
                                                std::optional<int> epoch, ModalitySet subset) const
{
    if (const auto* p = find(instance_id, model_id, epoch, subset))
        return *p;
    throw MissingDataError("no probabilities for '" + instance_id + "' model '" + model_id + "' mask "
                           + std::to_string(subset.mask()));
}

std::vector<int> ProbabilityStore::epochs(const std::string& instance_id, const std::string& model_id,
                                          ModalitySet subset) const
{
    std::vector<int> out;
    auto it = entries_.lower_bound(Key{instance_id, model_id, std::nullopt, ModalitySet{}});
    for (; it != entries_.end() && it->first.instance_id == instance_id && it->first.model_id == model_id; ++it)
        if (it->first.epoch && it->first.subset == subset)
            out.push_back(*it->first.epoch);
    return out;
}

bool ProbabilityStore::has_any(const std::string& instance_id, const std::string& model_id) const
{
    auto it = entries_.lower_bound(Key{instance_id, model_id, std::nullopt, ModalitySet{}});
    return it != entries_.end() && it->first.instance_id == instance_id && it->first.model_id == model_id;
}

ProbabilityStore ingest_probabilities(std::istream& in, const std::string& source, const DatasetManifest& manifest)
{
    ProbabilityStore store(manifest.modality_count(), manifest.label_space_size());
    read_jsonl(in, source, [&](const Json& obj, const LineContext& ctx) {
        ProbabilityRecord r;
        r.instance_id = ctx.require<std::string>(obj, "instance_id");
        if (!manifest.find(r.instance_id))
            ctx.fail("unknown instance '" + r.instance_id + "'");
        r.probs = ctx.require<std::vector<double>>(obj, "probs");
        r.model_id = ctx.optional<std::string>(obj, "model_id").value_or(kMainModel);
        r.epoch = ctx.optional<int>(obj, "epoch");
        try {
            r.subset = manifest.subset_from_names(ctx.require<std::vector<std::string>>(obj, "subset"));
            store.insert(std::move(r));
        } catch (const ParseError&) {
            throw;
        } catch (const ValidationError& e) {
            ctx.fail(e.what());
        }
    });
    return store;
}

ProbabilityStore ingest_probabilities(const std::string& path, const DatasetManifest& manifest)
{
    auto in = open_input(path);
    return ingest_probabilities(in, path, manifest);
}

void write_probability_record(const ProbabilityRecord& record, const DatasetManifest& manifest, std::ostream& out)
{
    OrderedJson j;
    j["instance_id"] = record.instance_id;
    j["subset"] = manifest.subset_names(record.subset);
    j["probs"] = record.probs;
    j["model_id"] = record.model_id;
    if (record.epoch)
        j["epoch"] = *record.epoch;
    out << j.dump() << '\n';
}

std::string_view to_string(FeatureVariant v)
{
    switch (v) {
    case FeatureVariant::Full: return "full";
    case FeatureVariant::SingleProbability: return "single_probability";
    case FeatureVariant::NoGoldSort: return "no_gold_sort";
    }
    return "full";
}

FeatureVariant parse_variant(std::string_view s)
{
    if (s == "full") return FeatureVariant::Full;
    if (s == "single_probability") return FeatureVariant::SingleProbability;
    if (s == "no_gold_sort") return FeatureVariant::NoGoldSort;
    throw ConfigError("unknown feature variant '" + std::string(s) + "'");
}

std::size_t FeatureLayout::width() const
{
    const std::size_t l = static_cast<std::size_t>(label_space_size);
    if (variant == FeatureVariant::SingleProbability)
        return l;
    return (std::size_t{1} << modality_count) * l;
}

OrderedJson layout_to_json(const FeatureLayout& layout)
{
    OrderedJson j;
    j["variant"] = std::string(to_string(layout.variant));
    j["modality_count"] = layout.modality_count;
    j["label_space_size"] = layout.label_space_size;
    j["subset_order"] = "ascending_mask";
    return j;
}

FeatureLayout layout_from_json(const Json& j)
{
    FeatureLayout layout;
    try {
        layout.variant = parse_variant(j.at("variant").get<std::string>());
        layout.modality_count = j.at("modality_count").get<int>();
        layout.label_space_size = j.at("label_space_size").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed feature layout: ") + e.what());
    }
    return layout;
}

std::vector<double> gold_first_sort(std::span<const double> probs, int gold_index)
{
    if (gold_index < 0 || static_cast<std::size_t>(gold_index) >= probs.size())
        throw InvalidArgument("gold_index " + std::to_string(gold_index) + " outside [0, "
                              + std::to_string(probs.size()) + ")");
    std::vector<double> out;
    out.reserve(probs.size());
    out.push_back(probs[gold_index]);
    for (std::size_t i = 0; i < probs.size(); ++i)
        if (static_cast<int>(i) != gold_index)
            out.push_back(probs[i]);
    return out;
}

FeatureVector assemble_features(const Instance& instance, const ProbabilityStore& store, const FeatureLayout& layout,
                                const std::string& model_id, std::optional<int> epoch)
{
    if (layout.modality_count != store.modality_count() || layout.label_space_size != store.label_space_size())
        throw InvalidArgument("feature layout does not match the probability store");

    std::vector<ModalitySet> subsets;
    if (layout.variant == FeatureVariant::SingleProbability)
        subsets.push_back(ModalitySet::full(layout.modality_count));
    else
        subsets = enumerate_subsets(layout.modality_count);

    FeatureVector fv{instance.id, {}, layout};
    fv.values.reserve(layout.width());
    std::vector<std::uint32_t> missing;
    for (ModalitySet s : subsets) {
        const auto* probs = store.find(instance.id, model_id, epoch, s);
        if (!probs) {
            missing.push_back(s.mask());
            continue;
        }
        if (layout.variant == FeatureVariant::NoGoldSort) {
            fv.values.insert(fv.values.end(), probs->begin(), probs->end());
        } else {
            auto sorted = gold_first_sort(*probs, instance.gold_index);
            fv.values.insert(fv.values.end(), sorted.begin(), sorted.end());
        }
    }
    if (!missing.empty()) {
        std::string list;
        for (auto m : missing)
            list += (list.empty() ? "" : ",") + std::to_string(m);
        throw MissingDataError("instance '" + instance.id + "' model '" + model_id + "' is missing subset masks ["
                               + list + "]");
    }
    return fv;
}

std::vector<FeatureVector> assemble_all(const DatasetManifest& manifest, const ProbabilityStore& store,
                                        const FeatureLayout& layout, const std::vector<std::string>& instance_ids,
                                        const std::string& model_id)
{
    std::vector<FeatureVector> out;
    out.reserve(instance_ids.size());
    for (const auto& id : instance_ids)
        out.push_back(assemble_features(manifest.at(id), store, layout, model_id));
    return out;
}

void write_features(const std::vector<FeatureVector>& features, const FeatureLayout& layout, std::ostream& out)
{
    OrderedJson header;
    header["layout"] = layout_to_json(layout);
    out << header.dump() << '\n';
    for (const auto& fv : features) {
        OrderedJson j;
        j["instance_id"] = fv.instance_id;
        j["values"] = fv.values;
        out << j.dump() << '\n';
    }
}

std::vector<FeatureVector> parse_features(const std::string& path)
{
    std::vector<FeatureVector> out;
    std::optional<FeatureLayout> layout;
    read_jsonl(path, [&](const Json& obj, const LineContext& ctx) {
        if (!layout) {
            if (!obj.contains("layout"))
                ctx.fail("feature file must start with a layout header");
            layout = layout_from_json(obj.at("layout"));
            return;
        }
        FeatureVector fv;
        fv.instance_id = ctx.require<std::string>(obj, "instance_id");
        fv.values = ctx.require<std::vector<double>>(obj, "values");
        fv.layout = *layout;
        if (fv.values.size() != layout->width())
            ctx.fail("feature vector length does not match layout");
        out.push_back(std::move(fv));
    });
    return out;
}

}  // namespace modmap
