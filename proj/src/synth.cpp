#include "modmap/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <memory>
#include <fstream>
#include <numeric>
#include <set>

#include "modmap/error.hpp"
#include "modmap/rng.hpp"

namespace modmap {

namespace {

constexpr std::uint64_t kAnnotationStream = 0x616e6e6f74617465ULL;
constexpr std::uint64_t kPartitionStream = 0x7061727469746e6eULL;

std::string instance_id(char prefix, int i)
{
    char buf[16];
    std::snprintf(buf, sizeof buf, "%c%06d", prefix, i);
    return buf;
}

ModalitySet draw_region(Rng& rng, const std::vector<double>& dist)
{
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t mask = 0; mask < dist.size(); ++mask) {
        acc += dist[mask];
        if (u < acc)
            return ModalitySet(static_cast<std::uint32_t>(mask));
    }
    for (std::size_t mask = dist.size(); mask-- > 0;)
        if (dist[mask] > 0.0)
            return ModalitySet(static_cast<std::uint32_t>(mask));
    return ModalitySet{};
}

// Gold-centred vector with distractors sharing the residual mass, then logit noise.
std::vector<double> noisy_probs(const SynthSpec& spec, Rng& rng, double gold_target, int gold)
{
    const int l = spec.label_space_size;
    std::vector<double> p(l, (1.0 - gold_target) / (l - 1));
    p[gold] = gold_target;
    if (spec.noise_sigma <= 0.0)
        return p;
    std::vector<double> logits(l);
    for (int i = 0; i < l; ++i)
        logits[i] = std::log(p[i]) + spec.noise_sigma * rng.normal();
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (int i = 0; i < l; ++i) {
        p[i] = std::exp(logits[i] - mx);
        sum += p[i];
    }
    for (double& v : p)
        v /= sum;
    return p;
}

}  // namespace

std::vector<double> default_region_distribution(int modality_count)
{
    if (modality_count == 3) {
        // bit 0 image, bit 1 text, bit 2 audio
        return {0.02, 0.20, 0.02, 0.03, 0.02, 0.03, 0.28, 0.40};
    }
    const std::size_t n = std::size_t{1} << modality_count;
    return std::vector<double>(n, 1.0 / static_cast<double>(n));
}

std::vector<double> SynthSpec::regions() const
{
    validate();
    return region_distribution.empty() ? default_region_distribution(modality_count()) : region_distribution;
}

void SynthSpec::validate() const
{
    const int m = modality_count();
    if (m < 1 || m > kMaxModalities)
        throw ValidationError("synth spec needs between 1 and 16 modalities");
    if (label_space_size < 2)
        throw ValidationError("synth spec label_space_size must be at least 2");
    if (n_instances < 1 || seed_size < 0 || seed_size > n_instances)
        throw ValidationError("synth spec needs n_instances >= 1 and 0 <= seed_size <= n_instances");
    if (!(p_high > 1.0 / label_space_size && p_high < 1.0))
        throw ValidationError("synth spec p_high must lie in (1/L, 1)");
    if (noise_sigma < 0.0 || n_epochs < 0 || n_train < 0)
        throw ValidationError("synth spec noise_sigma, n_epochs and n_train must be non-negative");
    for (double p : {annotator_error, claim_error, seen_before_rate, who_fraction})
        if (p < 0.0 || p > 1.0)
            throw ValidationError("synth spec rates must lie in [0, 1]");
    if (quorum < 1 || workers_per_modality < quorum)
        throw ValidationError("synth spec needs quorum >= 1 and workers_per_modality >= quorum");
    if (!region_distribution.empty()) {
        if (region_distribution.size() != (std::size_t{1} << m))
            throw ValidationError("region_distribution must have 2^M entries");
        double sum = 0.0;
        for (double p : region_distribution) {
            if (p < 0.0)
                throw ValidationError("region_distribution entries must be non-negative");
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-9)
            throw ValidationError("region_distribution must sum to 1");
    }
}

SynthSpec synth_spec_from_json(const Json& j)
{
    static const std::set<std::string> known{
        "modalities",      "label_space_size", "n_instances", "seed_size",   "region_distribution",
        "p_high",          "noise_sigma",      "n_epochs",    "annotator_error", "claim_error",
        "seen_before_rate", "quorum",          "workers_per_modality", "who_fraction", "n_train",
        "seed",            "_meta"};
    if (!j.is_object())
        throw ValidationError("synth spec must be a JSON object");
    for (const auto& [key, value] : j.items())
        if (!known.contains(key))
            throw ValidationError("unknown synth spec key '" + key + "'");
    SynthSpec s;
    try {
        if (j.contains("modalities"))
            s.modality_names = j.at("modalities").get<std::vector<std::string>>();
        s.label_space_size = j.value("label_space_size", s.label_space_size);
        s.n_instances = j.value("n_instances", s.n_instances);
        s.seed_size = j.value("seed_size", s.seed_size);
        s.p_high = j.value("p_high", s.p_high);
        s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
        s.n_epochs = j.value("n_epochs", s.n_epochs);
        s.annotator_error = j.value("annotator_error", s.annotator_error);
        s.claim_error = j.value("claim_error", s.claim_error);
        s.seen_before_rate = j.value("seen_before_rate", s.seen_before_rate);
        s.quorum = j.value("quorum", s.quorum);
        s.workers_per_modality = j.value("workers_per_modality", s.workers_per_modality);
        s.who_fraction = j.value("who_fraction", s.who_fraction);
        s.n_train = j.value("n_train", s.n_train);
        s.seed = j.value("seed", s.seed);
        if (j.contains("region_distribution")) {
            // {"image+text": 0.1, "none": 0.02, ...}; unlisted regions get 0.
            std::vector<ModalityId> mods;
            for (std::size_t i = 0; i < s.modality_names.size(); ++i)
                mods.push_back({static_cast<int>(i), s.modality_names[i]});
            const DatasetManifest names(mods, s.label_space_size, {});
            s.region_distribution.assign(std::size_t{1} << s.modality_count(), 0.0);
            for (const auto& [name, p] : j.at("region_distribution").items())
                s.region_distribution[names.parse_subset(name).mask()] = p.get<double>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed synth spec: ") + e.what());
    }
    s.validate();
    return s;
}

OrderedJson synth_spec_to_json(const SynthSpec& spec)
{
    OrderedJson j;
    j["modalities"] = spec.modality_names;
    j["label_space_size"] = spec.label_space_size;
    j["n_instances"] = spec.n_instances;
    j["seed_size"] = spec.seed_size;
    std::vector<ModalityId> mods;
    for (std::size_t i = 0; i < spec.modality_names.size(); ++i)
        mods.push_back({static_cast<int>(i), spec.modality_names[i]});
    const DatasetManifest names(mods, spec.label_space_size, {});
    OrderedJson regions;
    const auto dist = spec.regions();
    for (std::size_t mask = 0; mask < dist.size(); ++mask)
        regions[names.subset_name(ModalitySet(static_cast<std::uint32_t>(mask)))] = dist[mask];
    j["region_distribution"] = regions;
    j["p_high"] = spec.p_high;
    j["noise_sigma"] = spec.noise_sigma;
    j["n_epochs"] = spec.n_epochs;
    j["annotator_error"] = spec.annotator_error;
    j["claim_error"] = spec.claim_error;
    j["seen_before_rate"] = spec.seen_before_rate;
    j["quorum"] = spec.quorum;
    j["workers_per_modality"] = spec.workers_per_modality;
    j["who_fraction"] = spec.who_fraction;
    j["n_train"] = spec.n_train;
    j["seed"] = spec.seed;
    return j;
}

SynthSpec parse_synth_spec(const std::string& path)
{
    auto in = open_input(path);
    Json j;
    try {
        j = Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path, 0, e.what());
    }
    return synth_spec_from_json(j);
}

double synth_gold_target(const SynthSpec& spec, ModalitySet solving, ModalitySet subset)
{
    return subset.intersects(solving) ? spec.p_high : 1.0 / spec.label_space_size;
}

SynthData generate(const SynthSpec& spec)
{
    const auto dist = spec.regions();
    const int m = spec.modality_count();
    const int l = spec.label_space_size;
    const ModalitySet full = ModalitySet::full(m);
    const auto subsets = enumerate_subsets(m);

    std::vector<ModalityId> mods;
    for (int i = 0; i < m; ++i)
        mods.push_back({i, spec.modality_names[i]});

    struct Draw {
        ModalitySet solving;
        int gold;
        std::optional<Fold> fold;
    };
    std::vector<Instance> instances;
    std::vector<Draw> draws;
    SynthData data;
    const int total = spec.n_instances + spec.n_train;
    for (int i = 0; i < total; ++i) {
        const bool is_train = i >= spec.n_instances;
        Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(i)));
        Draw d;
        d.solving = draw_region(rng, dist);
        d.gold = static_cast<int>(rng.index(static_cast<std::uint64_t>(l)));
        const bool who = rng.bernoulli(spec.who_fraction);
        if (is_train)
            d.fold = rng.bernoulli(0.5) ? Fold::A : Fold::B;

        Instance inst;
        inst.id = is_train ? instance_id('t', i - spec.n_instances) : instance_id('v', i);
        inst.question = "synthetic question " + inst.id;
        for (int k = 0; k < l; ++k)
            inst.options.push_back("answer " + std::to_string(k));
        inst.gold_index = d.gold;
        if (who)
            inst.tags.push_back("who-question");
        inst.split = is_train ? "train" : "val";

        data.truth.ids.push_back(inst.id);
        data.truth.solving_sets.emplace(inst.id, d.solving);
        if (d.fold)
            data.folds.emplace(inst.id, *d.fold);

        // Probabilities for each model. A model that trained on the instance has memorized it.
        auto emit = [&](const std::string& model_id, bool memorized) {
            for (ModalitySet s : subsets) {
                const double target = memorized ? spec.p_high : synth_gold_target(spec, d.solving, s);
                data.probs.push_back({inst.id, s, noisy_probs(spec, rng, target, d.gold), model_id, std::nullopt});
            }
        };
        emit(kMainModel, is_train);
        if (!is_train && spec.n_epochs > 0) {
            // Instances solvable through every modality are learned immediately; the rest drift
            // linearly from uniform towards the final vector.
            const auto final_probs = data.probs[data.probs.size() - subsets.size() + full.mask()].probs;
            const bool agreeing = d.solving == full;
            for (int e = 1; e <= spec.n_epochs; ++e) {
                const double w = agreeing ? 1.0 : static_cast<double>(e) / spec.n_epochs;
                std::vector<double> p(l);
                for (int k = 0; k < l; ++k)
                    p[k] = (1.0 - w) / l + w * final_probs[k];
                data.probs.push_back({inst.id, full, std::move(p), kMainModel, e});
            }
        }
        if (spec.n_train > 0) {
            emit(fold_model_id(Fold::A), d.fold == Fold::A);
            emit(fold_model_id(Fold::B), d.fold == Fold::B);
        }
        instances.push_back(std::move(inst));
        draws.push_back(d);
    }
    data.manifest = DatasetManifest(mods, l, instances);

    // Seed: first seed_size val instances, shuffled into 75/15/10 train/val/test.
    std::vector<int> order(spec.seed_size);
    std::iota(order.begin(), order.end(), 0);
    Rng prng(derive_seed(spec.seed, kPartitionStream));
    for (int i = spec.seed_size - 1; i > 0; --i)
        std::swap(order[i], order[prng.index(static_cast<std::uint64_t>(i) + 1)]);
    const int n_tr = static_cast<int>(std::lround(0.75 * spec.seed_size));
    const int n_va = static_cast<int>(std::lround(0.15 * spec.seed_size));
    std::vector<Partition> part(spec.seed_size);
    for (int r = 0; r < spec.seed_size; ++r)
        part[order[r]] = r < n_tr ? Partition::Train : (r < n_tr + n_va ? Partition::Val : Partition::Test);
    std::vector<std::pair<std::string, Partition>> entries;
    for (int i = 0; i < spec.seed_size; ++i)
        entries.emplace_back(instances[i].id, part[i]);
    data.seed = make_seed_sample(data.manifest, std::move(entries));

    // Annotation campaign: disjoint worker pools per modality, quorum workers per pair.
    for (int i = 0; i < spec.seed_size; ++i) {
        Rng rng(derive_seed(spec.seed ^ kAnnotationStream, static_cast<std::uint64_t>(i)));
        const Draw& d = draws[i];
        for (int mod = 0; mod < m; ++mod) {
            std::vector<int> pool(spec.workers_per_modality);
            std::iota(pool.begin(), pool.end(), 0);
            for (int k = 0; k < spec.quorum; ++k)
                std::swap(pool[k], pool[k + rng.index(static_cast<std::uint64_t>(spec.workers_per_modality - k))]);
            const bool solvable = d.solving.contains(mod);
            for (int k = 0; k < spec.quorum; ++k) {
                AnnotationRecord r;
                r.instance_id = instances[i].id;
                r.modality = mod;
                r.worker_id = "w_" + spec.modality_names[mod] + "_" + std::to_string(pool[k]);
                r.seen_before = rng.bernoulli(spec.seen_before_rate);
                if (solvable && !rng.bernoulli(spec.annotator_error)) {
                    r.answer_index = d.gold;
                } else if (solvable) {
                    const int wrong = static_cast<int>(rng.index(static_cast<std::uint64_t>(l - 1)));
                    r.answer_index = wrong < d.gold ? wrong : wrong + 1;
                } else {
                    r.answer_index = static_cast<int>(rng.index(static_cast<std::uint64_t>(l)));
                }
                r.claims_answerable = solvable != rng.bernoulli(spec.claim_error);
                data.annotations.push_back(std::move(r));
            }
        }
    }
    return data;
}

ProbabilityStore build_store(const SynthData& data)
{
    ProbabilityStore store(data.manifest.modality_count(), data.manifest.label_space_size());
    for (const auto& r : data.probs)
        store.insert(r);
    return store;
}

void write_synth(const SynthData& data, const std::function<std::ostream&(const std::string&)>& open)
{
    write_manifest(data.manifest, open("dataset.jsonl"));
    {
        auto& out = open("probs.jsonl");
        for (const auto& r : data.probs)
            write_probability_record(r, data.manifest, out);
    }
    write_annotations(data.annotations, data.manifest, open("annotations.jsonl"));
    write_seed(data.seed, open("seed.jsonl"));
    {
        auto& out = open("truth.jsonl");
        for (const auto& id : data.truth.ids) {
            OrderedJson j;
            j["instance_id"] = id;
            j["solving_set"] = data.manifest.subset_names(data.truth.solving_sets.at(id));
            out << j.dump() << '\n';
        }
    }
    if (!data.folds.empty()) {
        auto& out = open("folds.jsonl");
        for (const auto& id : data.truth.ids) {
            auto it = data.folds.find(id);
            if (it == data.folds.end())
                continue;
            OrderedJson j;
            j["instance_id"] = id;
            j["fold"] = it->second == Fold::A ? "A" : "B";
            out << j.dump() << '\n';
        }
    }
}

void write_synth(const SynthData& data, const std::string& dir)
{
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::vector<std::unique_ptr<std::ofstream>> streams;
    write_synth(data, [&](const std::string& name) -> std::ostream& {
        streams.push_back(std::make_unique<std::ofstream>(fs::path(dir) / name, std::ios::binary));
        if (!*streams.back())
            throw Error("cannot write " + (fs::path(dir) / name).string());
        return *streams.back();
    });
}

GroundTruth parse_truth(const std::string& path, const DatasetManifest& manifest)
{
    GroundTruth truth;
    read_jsonl(path, [&](const Json& obj, const LineContext& ctx) {
        auto id = ctx.require<std::string>(obj, "instance_id");
        if (!manifest.find(id))
            ctx.fail("unknown instance '" + id + "'");
        ModalitySet s;
        try {
            s = manifest.subset_from_names(ctx.require<std::vector<std::string>>(obj, "solving_set"));
        } catch (const ParseError&) {
            throw;
        } catch (const ValidationError& e) {
            ctx.fail(e.what());
        }
        if (!truth.solving_sets.emplace(id, s).second)
            ctx.fail("duplicate instance '" + id + "'");
        truth.ids.push_back(id);
    });
    return truth;
}

RecoveryScore score_recovery(const ModalityMap& map, const GroundTruth& truth)
{
    if (map.entries.size() != truth.solving_sets.size())
        throw ValidationError("map covers " + std::to_string(map.entries.size()) + " instances but truth covers "
                              + std::to_string(truth.solving_sets.size()));
    if (map.entries.empty())
        throw ValidationError("cannot score recovery of an empty map");
    RecoveryScore score;
    score.n = map.entries.size();
    std::vector<std::size_t> correct(map.modality_count, 0);
    std::size_t exact = 0;
    std::set<std::string> seen;
    for (const auto& e : map.entries) {
        auto it = truth.solving_sets.find(e.instance_id);
        if (it == truth.solving_sets.end() || !seen.insert(e.instance_id).second)
            throw ValidationError("instance '" + e.instance_id + "' does not match the ground truth ids");
        for (int i = 0; i < map.modality_count; ++i)
            correct[i] += (e.solvable.contains(i) == it->second.contains(i));
        exact += (e.solvable == it->second);
    }
    for (auto c : correct)
        score.per_modality.push_back(static_cast<double>(c) / score.n);
    score.exact_set = static_cast<double>(exact) / score.n;
    return score;
}

}  // namespace modmap
