#include "modmap/core.hpp"

#include <algorithm>
#include <bit>
#include <ostream>
#include <set>
#include <unordered_set>

#include "modmap/error.hpp"
#include "modmap/jsonl.hpp"

namespace modmap {

int ModalitySet::size() const
{
    return std::popcount(mask_);
}

std::vector<ModalitySet> enumerate_subsets(int modality_count)
{
    if (modality_count < 1 || modality_count > kMaxModalities)
        throw InvalidArgument("modality count must be in [1, 16], got " + std::to_string(modality_count));
    const std::uint32_t n = std::uint32_t{1} << modality_count;
    std::vector<ModalitySet> out;
    out.reserve(n);
    for (std::uint32_t m = 0; m < n; ++m)
        out.emplace_back(m);
    return out;
}

bool Instance::has_tag(std::string_view tag) const
{
    return std::find(tags.begin(), tags.end(), tag) != tags.end();
}

DatasetManifest::DatasetManifest(std::vector<ModalityId> modalities, int label_space_size,
                                 std::vector<Instance> instances)
    : modalities_(std::move(modalities)), label_space_size_(label_space_size), instances_(std::move(instances))
{
    if (modalities_.empty() || static_cast<int>(modalities_.size()) > kMaxModalities)
        throw ValidationError("manifest must declare between 1 and 16 modalities");
    if (label_space_size_ < 2)
        throw ValidationError("label_space_size must be at least 2");
    std::set<std::string> names;
    for (std::size_t i = 0; i < modalities_.size(); ++i) {
        const auto& m = modalities_[i];
        if (m.index != static_cast<int>(i))
            throw ValidationError("modality '" + m.name + "' index does not match its position");
        if (m.name.empty() || m.name == "none" || m.name.find('+') != std::string::npos)
            throw ValidationError("invalid modality name '" + m.name + "'");
        if (!names.insert(m.name).second)
            throw ValidationError("duplicate modality name '" + m.name + "'");
    }
    for (std::size_t i = 0; i < instances_.size(); ++i) {
        const auto& inst = instances_[i];
        if (!index_.emplace(inst.id, i).second)
            throw ValidationError("duplicate instance id '" + inst.id + "'");
        if (static_cast<int>(inst.options.size()) != label_space_size_)
            throw ValidationError("instance '" + inst.id + "' has " + std::to_string(inst.options.size())
                                  + " options, expected " + std::to_string(label_space_size_));
        if (inst.gold_index < 0 || inst.gold_index >= label_space_size_)
            throw ValidationError("instance '" + inst.id + "' gold_index " + std::to_string(inst.gold_index)
                                  + " outside [0, " + std::to_string(label_space_size_) + ")");
        splits_[inst.split].push_back(inst.id);
    }
}

const Instance* DatasetManifest::find(std::string_view id) const
{
    auto it = index_.find(std::string(id));
    return it == index_.end() ? nullptr : &instances_[it->second];
}

const Instance& DatasetManifest::at(std::string_view id) const
{
    if (const auto* inst = find(id))
        return *inst;
    throw ValidationError("unknown instance id '" + std::string(id) + "'");
}

std::optional<int> DatasetManifest::modality_index(std::string_view name) const
{
    for (const auto& m : modalities_)
        if (m.name == name)
            return m.index;
    return std::nullopt;
}

ModalitySet DatasetManifest::subset_from_names(const std::vector<std::string>& names) const
{
    ModalitySet s;
    for (const auto& n : names) {
        auto idx = modality_index(n);
        if (!idx)
            throw ValidationError("unknown modality '" + n + "'");
        if (s.contains(*idx))
            throw ValidationError("modality '" + n + "' listed twice in subset");
        s = s.with(*idx);
    }
    return s;
}

ModalitySet DatasetManifest::parse_subset(std::string_view name) const
{
    if (name == "none" || name.empty())
        return ModalitySet{};
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
        auto pos = name.find('+', start);
        parts.emplace_back(name.substr(start, pos == std::string_view::npos ? pos : pos - start));
        if (pos == std::string_view::npos)
            break;
        start = pos + 1;
    }
    return subset_from_names(parts);
}

std::vector<std::string> DatasetManifest::subset_names(ModalitySet s) const
{
    std::vector<std::string> out;
    for (const auto& m : modalities_)
        if (s.contains(m.index))
            out.push_back(m.name);
    return out;
}

std::string DatasetManifest::subset_name(ModalitySet s) const
{
    if (s.empty())
        return "none";
    std::string out;
    for (const auto& n : subset_names(s)) {
        if (!out.empty())
            out += '+';
        out += n;
    }
    return out;
}

DatasetManifest parse_manifest(std::istream& in, const std::string& source)
{
    std::optional<std::vector<ModalityId>> modalities;
    int label_space = 0;
    std::vector<Instance> instances;
    std::unordered_set<std::string> seen;

    read_jsonl(in, source, [&](const Json& obj, const LineContext& ctx) {
        if (!modalities) {
            auto names = ctx.require<std::vector<std::string>>(obj, "modalities");
            label_space = ctx.require<int>(obj, "label_space_size");
            modalities.emplace();
            for (std::size_t i = 0; i < names.size(); ++i)
                modalities->push_back({static_cast<int>(i), names[i]});
            return;
        }
        Instance inst;
        inst.id = ctx.require<std::string>(obj, "id");
        inst.question = ctx.optional<std::string>(obj, "question").value_or("");
        inst.options = ctx.require<std::vector<std::string>>(obj, "options");
        inst.gold_index = ctx.require<int>(obj, "gold_index");
        inst.tags = ctx.optional<std::vector<std::string>>(obj, "tags").value_or(std::vector<std::string>{});
        inst.split = ctx.optional<std::string>(obj, "split").value_or("");
        if (inst.gold_index < 0 || inst.gold_index >= label_space)
            ctx.fail("gold_index " + std::to_string(inst.gold_index) + " of instance '" + inst.id
                     + "' is outside [0, " + std::to_string(label_space) + ")");
        if (!seen.insert(inst.id).second)
            ctx.fail("duplicate instance id '" + inst.id + "'");
        instances.push_back(std::move(inst));
    });

    if (!modalities)
        return DatasetManifest{};
    return DatasetManifest(std::move(*modalities), label_space, std::move(instances));
}

DatasetManifest parse_manifest(const std::string& path)
{
    auto in = open_input(path);
    return parse_manifest(in, path);
}

void write_manifest(const DatasetManifest& manifest, std::ostream& out)
{
    if (manifest.modalities().empty())
        return;
    OrderedJson header;
    std::vector<std::string> names;
    for (const auto& m : manifest.modalities())
        names.push_back(m.name);
    header["modalities"] = names;
    header["label_space_size"] = manifest.label_space_size();
    out << header.dump() << '\n';
    for (const auto& inst : manifest.instances()) {
        OrderedJson j;
        j["id"] = inst.id;
        j["question"] = inst.question;
        j["options"] = inst.options;
        j["gold_index"] = inst.gold_index;
        j["tags"] = inst.tags;
        j["split"] = inst.split;
        out << j.dump() << '\n';
    }
}

std::string_view to_string(Partition p)
{
    switch (p) {
    case Partition::Train: return "train";
    case Partition::Val: return "val";
    case Partition::Test: return "test";
    case Partition::Ood: return "ood";
    }
    return "train";
}

Partition parse_partition(std::string_view s)
{
    if (s == "train") return Partition::Train;
    if (s == "val") return Partition::Val;
    if (s == "test") return Partition::Test;
    if (s == "ood") return Partition::Ood;
    throw ValidationError("unknown partition '" + std::string(s) + "'");
}

std::vector<std::string> SeedSample::ids_in(Partition p) const
{
    std::vector<std::string> out;
    for (const auto& id : instance_ids)
        if (partition.at(id) == p)
            out.push_back(id);
    return out;
}

SeedSample make_seed_sample(const DatasetManifest& manifest, std::vector<std::pair<std::string, Partition>> entries)
{
    SeedSample seed;
    for (auto& [id, part] : entries) {
        if (!manifest.find(id))
            throw ValidationError("seed references unknown instance '" + id + "'");
        if (!seed.partition.emplace(id, part).second)
            throw ValidationError("seed lists instance '" + id + "' twice");
        seed.instance_ids.push_back(std::move(id));
    }
    return seed;
}

SeedSample parse_seed(const std::string& path, const DatasetManifest& manifest)
{
    std::vector<std::pair<std::string, Partition>> entries;
    read_jsonl(path, [&](const Json& obj, const LineContext& ctx) {
        auto id = ctx.require<std::string>(obj, "instance_id");
        auto part = ctx.require<std::string>(obj, "partition");
        try {
            entries.emplace_back(std::move(id), parse_partition(part));
        } catch (const ValidationError& e) {
            ctx.fail(e.what());
        }
    });
    return make_seed_sample(manifest, std::move(entries));
}

void write_seed(const SeedSample& seed, std::ostream& out)
{
    for (const auto& id : seed.instance_ids) {
        OrderedJson j;
        j["instance_id"] = id;
        j["partition"] = std::string(to_string(seed.partition.at(id)));
        out << j.dump() << '\n';
    }
}

}  // namespace modmap
