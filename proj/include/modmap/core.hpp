#pragma once

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace modmap {

inline constexpr int kMaxModalities = 16;

struct ModalityId {
    int index = 0;
    std::string name;

    friend bool operator==(const ModalityId&, const ModalityId&) = default;
};

// A subset of the manifest's modalities. Bit i is modality index i.
class ModalitySet {
public:
    constexpr ModalitySet() = default;
    constexpr explicit ModalitySet(std::uint32_t mask) : mask_(mask) {}

    static constexpr ModalitySet full(int modality_count)
    {
        return ModalitySet((std::uint32_t{1} << modality_count) - 1);
    }
    static constexpr ModalitySet single(int index) { return ModalitySet(std::uint32_t{1} << index); }

    constexpr std::uint32_t mask() const { return mask_; }
    constexpr bool empty() const { return mask_ == 0; }
    constexpr bool contains(int index) const { return (mask_ >> index) & 1U; }
    constexpr bool intersects(ModalitySet o) const { return (mask_ & o.mask_) != 0; }
    constexpr bool subset_of(ModalitySet o) const { return (mask_ & ~o.mask_) == 0; }
    int size() const;

    constexpr ModalitySet with(int index) const { return ModalitySet(mask_ | (std::uint32_t{1} << index)); }
    constexpr ModalitySet without(int index) const { return ModalitySet(mask_ & ~(std::uint32_t{1} << index)); }

    constexpr auto operator<=>(const ModalitySet&) const = default;

private:
    std::uint32_t mask_ = 0;
};

// All 2^M subsets in ascending mask order. Throws InvalidArgument unless 1 <= M <= 16.
std::vector<ModalitySet> enumerate_subsets(int modality_count);

struct Instance {
    std::string id;
    std::string question;
    std::vector<std::string> options;
    int gold_index = 0;
    std::vector<std::string> tags;
    std::string split;

    bool has_tag(std::string_view tag) const;

    friend bool operator==(const Instance&, const Instance&) = default;
};

class DatasetManifest {
public:
    DatasetManifest() = default;
    // Validates every invariant; throws ValidationError.
    DatasetManifest(std::vector<ModalityId> modalities, int label_space_size, std::vector<Instance> instances);

    const std::vector<ModalityId>& modalities() const { return modalities_; }
    int modality_count() const { return static_cast<int>(modalities_.size()); }
    int label_space_size() const { return label_space_size_; }
    const std::vector<Instance>& instances() const { return instances_; }
    // split name -> instance ids, in file order.
    const std::map<std::string, std::vector<std::string>>& splits() const { return splits_; }

    const Instance* find(std::string_view id) const;
    const Instance& at(std::string_view id) const;
    std::optional<int> modality_index(std::string_view name) const;
    ModalitySet full_set() const { return ModalitySet::full(modality_count()); }

    // Parses "image+text" style names (order-insensitive); "none" is the empty set.
    ModalitySet parse_subset(std::string_view name) const;
    ModalitySet subset_from_names(const std::vector<std::string>& names) const;
    // Names in manifest order joined by '+', or "none".
    std::string subset_name(ModalitySet s) const;
    std::vector<std::string> subset_names(ModalitySet s) const;

    friend bool operator==(const DatasetManifest& a, const DatasetManifest& b)
    {
        return a.modalities_ == b.modalities_ && a.label_space_size_ == b.label_space_size_
               && a.instances_ == b.instances_;
    }

private:
    std::vector<ModalityId> modalities_;
    int label_space_size_ = 0;
    std::vector<Instance> instances_;
    std::map<std::string, std::vector<std::string>> splits_;
    std::unordered_map<std::string, std::size_t> index_;
};

DatasetManifest parse_manifest(const std::string& path);
DatasetManifest parse_manifest(std::istream& in, const std::string& source);
void write_manifest(const DatasetManifest& manifest, std::ostream& out);

enum class Partition { Train, Val, Test, Ood };

std::string_view to_string(Partition p);
Partition parse_partition(std::string_view s);

// The annotated subset D' of the dataset and its train/val/test/ood partition.
struct SeedSample {
    std::vector<std::string> instance_ids;
    std::map<std::string, Partition> partition;

    std::vector<std::string> ids_in(Partition p) const;
};

// Throws ValidationError for unknown or duplicate ids.
SeedSample make_seed_sample(const DatasetManifest& manifest, std::vector<std::pair<std::string, Partition>> entries);
SeedSample parse_seed(const std::string& path, const DatasetManifest& manifest);
void write_seed(const SeedSample& seed, std::ostream& out);

}  // namespace modmap
