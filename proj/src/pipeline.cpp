#include "modmap/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "modmap/analysis.hpp"
#include "modmap/artifacts.hpp"
#include "modmap/error.hpp"
#include "modmap/text.hpp"

namespace modmap {

namespace fs = std::filesystem;

namespace {

const std::set<std::string> kPathKeys{"paths.manifest", "paths.probs", "paths.annotations", "paths.seed",
                                      "paths.folds", "out"};

std::vector<std::string> split_dotted(const std::string& key)
{
    std::vector<std::string> parts;
    std::stringstream ss(key);
    std::string part;
    while (std::getline(ss, part, '.'))
        parts.push_back(part);
    return parts;
}

const Json* find_leaf(const Json& tree, const std::string& key)
{
    const Json* node = &tree;
    for (const auto& part : split_dotted(key)) {
        if (!node->is_object() || !node->contains(part))
            return nullptr;
        node = &(*node)[part];
    }
    return node->is_object() ? nullptr : node;
}

Json* find_leaf(Json& tree, const std::string& key)
{
    return const_cast<Json*>(find_leaf(static_cast<const Json&>(tree), key));
}

void merge_config(Json& target, const Json& source, const std::string& prefix, const fs::path& base_dir)
{
    if (!source.is_object())
        throw ConfigError("config " + (prefix.empty() ? std::string("root") : "key '" + prefix + "'")
                          + " must be an object");
    for (const auto& [key, value] : source.items()) {
        if (prefix.empty() && key == "_meta")
            continue;
        const std::string dotted = prefix.empty() ? key : prefix + "." + key;
        if (!target.contains(key))
            throw ConfigError("unknown config key '" + dotted + "'");
        Json& slot = target[key];
        if (slot.is_object()) {
            merge_config(slot, value, dotted, base_dir);
            continue;
        }
        if (value.is_object())
            throw ConfigError("config key '" + dotted + "' must not be an object");
        slot = value;
        if (kPathKeys.contains(dotted) && value.is_string()) {
            const fs::path p = value.get<std::string>();
            if (!p.empty() && p.is_relative())
                slot = (base_dir / p).lexically_normal().string();
        }
    }
}

void apply_override(Json& tree, const std::string& key, const std::string& raw)
{
    Json* leaf = find_leaf(tree, key);
    if (!leaf)
        throw ConfigError("unknown config key '" + key + "'");
    if (leaf->is_string()) {
        *leaf = raw;
        return;
    }
    if (leaf->is_array() && (raw.empty() || raw.front() != '[')) {
        Json arr = Json::array();
        std::stringstream ss(raw);
        std::string item;
        while (std::getline(ss, item, ','))
            if (!item.empty())
                arr.push_back(item);
        *leaf = arr;
        return;
    }
    try {
        *leaf = Json::parse(raw);
    } catch (const nlohmann::json::parse_error&) {
        throw ConfigError("value '" + raw + "' for config key '" + key + "' is not valid");
    }
}

template <class T>
T get_key(const Json& tree, const std::string& key)
{
    const Json* leaf = find_leaf(tree, key);
    if (!leaf)
        throw ConfigError("missing config key '" + key + "'");
    try {
        return leaf->get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("config key '" + key + "' has the wrong type");
    }
}

void require_file(const fs::path& p, const std::string& key)
{
    if (p.empty())
        throw ConfigError("config key '" + key + "' is not set");
    if (!fs::is_regular_file(p))
        throw MissingInputError(p.string());
}

bool is_jsonl(const fs::path& p)
{
    return p.extension() == ".jsonl";
}

// Output bookkeeping shared by every stage.
class Stage {
public:
    Stage(std::string name, fs::path out, std::uint64_t seed) : name_(std::move(name)), staged_(std::move(out)), seed_(seed) {}

    void input(const std::string& role, const fs::path& path, const std::string& key)
    {
        require_file(path, key);
        if (is_jsonl(path))
            check_jsonl_schema(path);
        hashes_[role] = sha256_file(path);
    }
    void input_hash(const std::string& role, const std::string& hash) { hashes_[role] = hash; }

    OrderedJson meta() const { return meta_json(seed_, hashes_); }

    std::ostream& jsonl(const std::string& rel)
    {
        auto& out = staged_.open(rel);
        OrderedJson header;
        header["_meta"] = meta();
        out << header.dump() << '\n';
        return out;
    }

    std::ostream& csv(const std::string& rel)
    {
        auto& out = staged_.open(rel);
        out << "# " << meta().dump() << '\n';
        return out;
    }

    void json(const std::string& rel, const OrderedJson& body)
    {
        OrderedJson doc;
        doc["_meta"] = meta();
        for (const auto& [k, v] : body.items())
            doc[k] = v;
        staged_.open(rel) << doc.dump(2) << '\n';
    }

    StageResult commit()
    {
        StageResult result{name_, staged_.commit()};
        OrderedJson outputs = OrderedJson::object();
        for (const auto& rel : result.outputs)
            outputs[rel] = sha256_file(staged_.root() / rel);
        OrderedJson body;
        body["stage"] = name_;
        body["outputs"] = outputs;
        const std::string rel = "manifests/" + name_ + ".json";
        json(rel, body);
        staged_.commit();
        result.outputs.push_back(rel);
        return result;
    }

private:
    std::string name_;
    StagedOutputs staged_;
    std::uint64_t seed_;
    InputHashes hashes_;
};

fs::path gold_labels_path(const RunConfig& c) { return c.out / "labels" / "gold_labels.jsonl"; }
fs::path silver_labels_path(const RunConfig& c) { return c.out / "labels" / "silver_labels.jsonl"; }
fs::path features_path(const RunConfig& c) { return c.out / "features" / "features.jsonl"; }
fs::path model_path(const RunConfig& c, const std::string& modality)
{
    return c.out / "models" / ("model_" + modality + ".json");
}

Json read_json_file(const fs::path& path)
{
    auto in = open_input(path.string());
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string(), 0, e.what());
    }
}

OrderedJson eval_to_json(const EvalResult& e)
{
    OrderedJson j;
    j["accuracy"] = e.accuracy;
    j["majority_baseline"] = e.majority_baseline;
    j["n"] = e.n;
    j["confusion"] = {{e.confusion[0][0], e.confusion[0][1]}, {e.confusion[1][0], e.confusion[1][1]}};
    j["majority_tie"] = e.majority_tie;
    return j;
}

OrderedJson optional_eval(const std::optional<EvalResult>& e)
{
    return e ? eval_to_json(*e) : OrderedJson(nullptr);
}

OrderedJson max_depth_json(const std::optional<int>& d)
{
    return d ? OrderedJson(*d) : OrderedJson(nullptr);
}

ClassifierTrainingConfig training_config(const RunConfig& c, const DatasetManifest& manifest)
{
    ClassifierTrainingConfig t;
    t.variant = c.variant;
    t.grid = c.grid;
    t.forest = c.forest;
    t.seed = c.seed;
    t.threads = c.threads;
    if (!c.modality.empty()) {
        auto idx = manifest.modality_index(c.modality);
        if (!idx)
            throw ConfigError("unknown modality '" + c.modality + "'");
        t.modalities = {*idx};
    }
    return t;
}

OrderedJson histogram_json(const Histogram& h, const DatasetManifest& manifest)
{
    OrderedJson counts = OrderedJson::object();
    OrderedJson fractions = OrderedJson::object();
    for (const auto& m : manifest.modalities()) {
        counts[m.name] = h.counts[m.index];
        fractions[m.name] = h.fraction(m.index);
    }
    OrderedJson j;
    j["total"] = h.total;
    j["counts"] = counts;
    j["fractions"] = fractions;
    j["none_count"] = h.none_count;
    j["none_fraction"] = h.none_fraction();
    return j;
}

OrderedJson venn_json(const VennSummary& v, const DatasetManifest& manifest)
{
    OrderedJson regions = OrderedJson::object();
    for (ModalitySet s : enumerate_subsets(v.modality_count))
        regions[manifest.subset_name(s)] = v.count(s);
    OrderedJson j;
    j["total"] = v.total;
    j["region_counts"] = regions;
    j["fraction_multi"] = v.fraction_multi();
    j["fraction_all"] = v.fraction_all();
    return j;
}

OrderedJson fractions_json(const std::vector<double>& fr, const DatasetManifest& manifest)
{
    OrderedJson j = OrderedJson::object();
    for (const auto& m : manifest.modalities())
        j[m.name] = fr.at(m.index);
    return j;
}

std::vector<ModalitySet> subsets_from_names(const DatasetManifest& manifest, const std::vector<std::string>& names)
{
    std::vector<ModalitySet> out;
    for (const auto& n : names) {
        try {
            out.push_back(manifest.parse_subset(n));
        } catch (const ValidationError& e) {
            throw ConfigError(e.what());
        } catch (const InvalidArgument& e) {
            throw ConfigError(e.what());
        }
    }
    return out;
}

template <class Pred>
void require_key(const Json& j, const std::string& key, Pred pred, const std::string& what)
{
    if (!j.is_object() || !j.contains(key) || !pred(j[key]))
        throw ValidationError("report: '" + key + "' must be " + what);
}

}  // namespace

Json default_config_json()
{
    Json j;
    j["paths"] = {{"manifest", ""}, {"probs", ""}, {"annotations", ""}, {"seed", ""}, {"folds", ""}};
    j["out"] = "modmap-out";
    j["seed"] = 0;
    j["threads"] = 0;
    j["modality"] = "";
    j["quorum"] = 5;
    j["quality"] = {{"claim_extreme", 0.95}, {"min_responses", 20}, {"min_agreement", 0.5}};
    j["features"] = {{"variant", "full"}};
    j["train"] = {{"grid", "default"}, {"bootstrap", true}, {"balanced", true}, {"features_per_split", 0}};
    j["analysis"] = {{"split_accuracy", true}, {"cartography", true},         {"sensitivity", true},
                     {"sensitivity_k", 50},    {"split", ""},                 {"tags", {"who-question"}},
                     {"groups", Json::array()}, {"columns", Json::array()}};
    return j;
}

RunConfig load_config(const std::optional<fs::path>& file,
                      const std::vector<std::pair<std::string, std::string>>& overrides)
{
    Json tree = default_config_json();
    if (file) {
        const Json doc = read_json_file(*file);
        merge_config(tree, doc, "", file->parent_path());
    }
    for (const auto& [key, value] : overrides)
        apply_override(tree, key, value);
    return config_from_json(tree);
}

RunConfig config_from_json(const Json& tree)
{
    RunConfig c;
    c.manifest = get_key<std::string>(tree, "paths.manifest");
    c.probs = get_key<std::string>(tree, "paths.probs");
    c.annotations = get_key<std::string>(tree, "paths.annotations");
    c.seed_file = get_key<std::string>(tree, "paths.seed");
    c.folds = get_key<std::string>(tree, "paths.folds");
    c.out = get_key<std::string>(tree, "out");
    if (c.out.empty())
        throw ConfigError("config key 'out' must not be empty");
    c.seed = get_key<std::uint64_t>(tree, "seed");
    c.threads = get_key<int>(tree, "threads");
    c.modality = get_key<std::string>(tree, "modality");
    c.quorum = get_key<int>(tree, "quorum");
    c.quality.claim_extreme = get_key<double>(tree, "quality.claim_extreme");
    c.quality.min_responses = get_key<int>(tree, "quality.min_responses");
    c.quality.min_agreement = get_key<double>(tree, "quality.min_agreement");
    c.variant = parse_variant(get_key<std::string>(tree, "features.variant"));
    const auto grid = get_key<std::string>(tree, "train.grid");
    c.grid = grid == "default" ? default_grid() : parse_grid(grid);
    c.forest.bootstrap = get_key<bool>(tree, "train.bootstrap");
    c.forest.balanced = get_key<bool>(tree, "train.balanced");
    if (int fps = get_key<int>(tree, "train.features_per_split"); fps > 0)
        c.forest.features_per_split = fps;
    else if (fps < 0)
        throw ConfigError("train.features_per_split must be non-negative");
    c.analysis.split_accuracy = get_key<bool>(tree, "analysis.split_accuracy");
    c.analysis.cartography = get_key<bool>(tree, "analysis.cartography");
    c.analysis.sensitivity = get_key<bool>(tree, "analysis.sensitivity");
    const int k = get_key<int>(tree, "analysis.sensitivity_k");
    if (k < 1)
        throw ConfigError("analysis.sensitivity_k must be at least 1");
    c.analysis.sensitivity_k = static_cast<std::size_t>(k);
    c.analysis.split = get_key<std::string>(tree, "analysis.split");
    c.analysis.tags = get_key<std::vector<std::string>>(tree, "analysis.tags");
    c.analysis.groups = get_key<std::vector<std::string>>(tree, "analysis.groups");
    c.analysis.columns = get_key<std::vector<std::string>>(tree, "analysis.columns");

    if (c.threads < 0)
        throw ConfigError("threads must be non-negative");
    if (c.quorum < 1)
        throw ConfigError("quorum must be at least 1");
    if (c.quality.claim_extreme < 0.0 || c.quality.claim_extreme > 1.0 || c.quality.min_agreement < 0.0
        || c.quality.min_agreement > 1.0 || c.quality.min_responses < 0)
        throw ConfigError("quality thresholds must lie in [0, 1] and min_responses must be non-negative");
    return c;
}

StageResult cmd_simulate(const SynthSpec& spec, const fs::path& out_dir)
{
    const SynthData data = generate(spec);
    const OrderedJson spec_json = synth_spec_to_json(spec);
    Stage st("simulate", out_dir, spec.seed);
    st.input_hash("synth_spec", sha256_hex(spec_json.dump()));

    write_synth(data, [&](const std::string& name) -> std::ostream& { return st.jsonl(name); });
    st.json("synth_spec.json", spec_json);

    OrderedJson config;
    config["paths"] = {{"manifest", "dataset.jsonl"},
                       {"probs", "probs.jsonl"},
                       {"annotations", "annotations.jsonl"},
                       {"seed", "seed.jsonl"},
                       {"folds", data.folds.empty() ? "" : "folds.jsonl"}};
    config["seed"] = spec.seed;
    config["quorum"] = spec.quorum;
    st.json("config.json", config);
    return st.commit();
}

StageResult cmd_aggregate(const RunConfig& c)
{
    Stage st("aggregate", c.out, c.seed);
    st.input("manifest", c.manifest, "paths.manifest");
    st.input("annotations", c.annotations, "paths.annotations");
    st.input("seed", c.seed_file, "paths.seed");

    const auto manifest = parse_manifest(c.manifest.string());
    const auto records = parse_annotations(c.annotations.string(), manifest);
    validate_records(records, manifest);
    const auto seed = parse_seed(c.seed_file.string(), manifest);
    const auto filtered = filter_records(records, manifest, c.quality);
    const auto labels = aggregate_seed(filtered.kept, manifest, seed, c.quorum);
    const auto reliability = claim_reliability_report(filtered.kept, labels);

    write_labels(labels, manifest, st.jsonl("labels/gold_labels.jsonl"));
    write_worker_stats_csv(filtered.stats, st.csv("labels/worker_stats.csv"));

    std::map<DropReason, std::size_t> dropped;
    for (const auto& d : filtered.dropped)
        ++dropped[d.reason];
    OrderedJson drops = OrderedJson::object();
    for (DropReason r : {DropReason::SeenBefore, DropReason::ExtremeClaimer, DropReason::LowAgreement})
        drops[std::string(to_string(r))] = dropped[r];
    std::size_t excluded = 0;
    for (const auto& w : filtered.stats)
        excluded += (w.excluded_extreme_claims || w.excluded_low_agreement);
    std::size_t solvable = 0, insufficient = 0, below = 0;
    for (const auto& l : labels) {
        solvable += l.solvable;
        insufficient += l.insufficient_data;
        below += l.below_quorum;
    }

    OrderedJson summary;
    summary["quorum"] = c.quorum;
    summary["quality"] = {{"claim_extreme", c.quality.claim_extreme},
                          {"min_responses", c.quality.min_responses},
                          {"min_agreement", c.quality.min_agreement}};
    summary["n_records"] = records.size();
    summary["n_kept"] = filtered.kept.size();
    summary["dropped"] = drops;
    summary["n_workers"] = filtered.stats.size();
    summary["n_workers_excluded"] = excluded;
    summary["n_labels"] = labels.size();
    summary["n_solvable"] = solvable;
    summary["n_insufficient_data"] = insufficient;
    summary["n_below_quorum"] = below;
    OrderedJson rel;
    rel["fraction"] = reliability.empty_denominator ? OrderedJson(nullptr) : OrderedJson(reliability.fraction);
    rel["n_claimed_unsolvable"] = reliability.n_claimed_unsolvable;
    rel["n_actually_solvable"] = reliability.n_actually_solvable;
    summary["claim_reliability"] = rel;
    st.json("labels/aggregation.json", summary);
    return st.commit();
}

StageResult cmd_featurize(const RunConfig& c)
{
    Stage st("featurize", c.out, c.seed);
    st.input("manifest", c.manifest, "paths.manifest");
    st.input("probs", c.probs, "paths.probs");

    const auto manifest = parse_manifest(c.manifest.string());
    const auto store = ingest_probabilities(c.probs.string(), manifest);
    const FeatureLayout layout{c.variant, manifest.modality_count(), manifest.label_space_size()};
    std::vector<std::string> ids;
    for (const auto& inst : manifest.instances())
        if (store.has_any(inst.id, kMainModel))
            ids.push_back(inst.id);
    if (ids.empty() && !manifest.instances().empty())
        throw MissingDataError("no instance has probabilities from model '" + std::string(kMainModel) + "'");
    const auto features = assemble_all(manifest, store, layout, ids);
    write_features(features, layout, st.jsonl("features/features.jsonl"));
    return st.commit();
}

StageResult cmd_train(const RunConfig& c)
{
    Stage st("train", c.out, c.seed);
    st.input("manifest", c.manifest, "paths.manifest");
    st.input("seed", c.seed_file, "paths.seed");
    st.input("gold_labels", gold_labels_path(c), "gold labels");
    st.input("features", features_path(c), "features");

    const auto manifest = parse_manifest(c.manifest.string());
    const auto seed = parse_seed(c.seed_file.string(), manifest);
    const auto labels = parse_labels(gold_labels_path(c).string(), manifest);
    std::map<std::string, FeatureVector> features;
    for (auto& fv : parse_features(features_path(c).string()))
        features.emplace(fv.instance_id, std::move(fv));
    const auto config = training_config(c, manifest);
    const auto trained = train_classifiers(manifest, features, labels, seed, config);

    const bool single = !c.modality.empty();
    OrderedJson modalities = OrderedJson::object();
    std::ostream* board = single ? nullptr : &st.csv("models/leaderboard.csv");
    bool header = true;
    for (const auto& t : trained) {
        const auto& name = t.search.best.modality.name;
        st.json("models/model_" + name + ".json", model_to_json(t.search.best));
        std::ostream& out = single ? st.csv("models/leaderboard_" + name + ".csv") : *board;
        write_leaderboard_csv(t.search.leaderboard, t.search.best_index, name, header, out);
        header = single;
        const auto& row = t.search.leaderboard.at(t.search.best_index);
        OrderedJson m;
        m["selected"] = {{"grid_index", row.grid_index},
                         {"n_trees", row.point.n_trees},
                         {"max_depth", max_depth_json(row.point.max_depth)}};
        m["n_train"] = t.n_train;
        m["n_val"] = t.n_val;
        m["val"] = eval_to_json(row.validation);
        m["test"] = optional_eval(t.test);
        m["ood"] = optional_eval(t.ood);
        modalities[name] = m;
    }
    OrderedJson eval;
    eval["variant"] = std::string(to_string(c.variant));
    eval["grid"] = grid_to_json(c.grid);
    eval["modalities"] = modalities;
    st.json(single ? "models/eval_" + c.modality + ".json" : "models/eval.json", eval);
    return st.commit();
}

StageResult cmd_predict(const RunConfig& c)
{
    Stage st("predict", c.out, c.seed);
    st.input("manifest", c.manifest, "paths.manifest");
    st.input("features", features_path(c), "features");
    const auto manifest = parse_manifest(c.manifest.string());

    std::vector<RandomForestModel> models;
    for (const auto& m : manifest.modalities()) {
        const auto path = model_path(c, m.name);
        st.input("model_" + m.name, path, "model");
        const Json doc = read_json_file(path);
        check_json_schema(doc, path.string());
        auto model = model_from_json(doc);
        if (model.modality.name != m.name || model.modality.index != m.index)
            throw ValidationError(path.string() + ": model was trained for modality '" + model.modality.name + "'");
        models.push_back(std::move(model));
    }
    auto features = parse_features(features_path(c).string());

    std::map<std::string, Fold> folds;
    std::vector<std::pair<std::string, std::string>> audit;
    std::map<std::string, std::vector<SolvabilityLabel>> by_instance;
    if (!c.folds.empty()) {
        st.input("folds", c.folds, "paths.folds");
        st.input("probs", c.probs, "paths.probs");
        st.input("seed", c.seed_file, "paths.seed");
        st.input("gold_labels", gold_labels_path(c), "gold labels");
        folds = parse_folds(c.folds.string(), manifest);
        const auto store = ingest_probabilities(c.probs.string(), manifest);
        const auto seed = parse_seed(c.seed_file.string(), manifest);
        const auto gold = parse_labels(gold_labels_path(c).string(), manifest);
        std::vector<std::string> train_ids;
        for (const auto& inst : manifest.instances())
            if (folds.contains(inst.id))
                train_ids.push_back(inst.id);
        auto config = training_config(c, manifest);
        config.modalities.clear();
        auto cf = cross_fold_annotate(manifest, train_ids, folds, store, gold, seed, config);
        for (auto& l : cf.annotation.labels)
            by_instance[l.instance_id].push_back(std::move(l));
        audit = std::move(cf.audit);
    }

    std::erase_if(features, [&](const FeatureVector& fv) { return folds.contains(fv.instance_id); });
    for (auto& l : silver_annotate(models, features, manifest.modality_count()).labels)
        by_instance[l.instance_id].push_back(std::move(l));

    std::vector<SolvabilityLabel> labels;
    for (const auto& inst : manifest.instances()) {
        auto it = by_instance.find(inst.id);
        if (it == by_instance.end())
            continue;
        std::sort(it->second.begin(), it->second.end(),
                  [](const SolvabilityLabel& a, const SolvabilityLabel& b) { return a.modality < b.modality; });
        for (auto& l : it->second)
            labels.push_back(std::move(l));
    }
    write_labels(labels, manifest, st.jsonl("labels/silver_labels.jsonl"));
    if (!folds.empty()) {
        auto& out = st.jsonl("labels/cross_fold_audit.jsonl");
        for (const auto& [id, model] : audit) {
            OrderedJson j;
            j["instance_id"] = id;
            j["model_id"] = model;
            out << j.dump() << '\n';
        }
    }
    return st.commit();
}

StageResult cmd_analyze(const RunConfig& c)
{
    Stage st("analyze", c.out, c.seed);
    st.input("manifest", c.manifest, "paths.manifest");
    st.input("silver_labels", silver_labels_path(c), "silver labels");
    const bool need_store = c.analysis.split_accuracy || c.analysis.cartography || c.analysis.sensitivity;
    if (need_store)
        st.input("probs", c.probs, "paths.probs");
    const bool have_gold = fs::is_regular_file(gold_labels_path(c));
    if (have_gold)
        st.input("gold_labels", gold_labels_path(c), "gold labels");

    const auto manifest = parse_manifest(c.manifest.string());
    auto map = map_from_labels(parse_labels(silver_labels_path(c).string(), manifest), manifest, false);
    if (!c.analysis.split.empty())
        std::erase_if(map.entries,
                      [&](const ModalityMapEntry& e) { return manifest.at(e.instance_id).split != c.analysis.split; });
    if (map.entries.empty())
        throw MissingDataError("no silver-labeled instances to analyze");

    OrderedJson report;
    report["schema_version"] = kSchemaVersion;
    report["map"] = {{"provenance", std::string(to_string(LabelProvenance::SilverClassifier))},
                     {"split", c.analysis.split.empty() ? "all" : c.analysis.split},
                     {"n_instances", map.size()}};
    const auto venn = venn_regions(map);
    report["histogram"] = histogram_json(answerability_histogram(map), manifest);
    report["venn"] = venn_json(venn, manifest);
    if (have_gold) {
        const auto gold_map = map_from_labels(parse_labels(gold_labels_path(c).string(), manifest), manifest, true);
        if (!gold_map.entries.empty()) {
            OrderedJson g;
            g["provenance"] = std::string(to_string(LabelProvenance::GoldSeed));
            g["n_instances"] = gold_map.size();
            g["histogram"] = histogram_json(answerability_histogram(gold_map), manifest);
            g["venn"] = venn_json(venn_regions(gold_map), manifest);
            report["gold_seed"] = g;
        }
    }

    std::optional<ProbabilityStore> store;
    if (need_store)
        store = ingest_probabilities(c.probs.string(), manifest);
    std::vector<std::string> warnings;

    if (c.analysis.split_accuracy) {
        std::vector<ModalitySet> groups;
        if (c.analysis.groups.empty()) {
            for (ModalitySet s : enumerate_subsets(manifest.modality_count()))
                if (s.size() >= 2 && s != manifest.full_set())
                    groups.push_back(s);
        } else {
            groups = subsets_from_names(manifest, c.analysis.groups);
        }
        std::vector<ModalitySet> cols;
        if (c.analysis.columns.empty()) {
            for (ModalitySet s : enumerate_subsets(manifest.modality_count()))
                if (!s.empty() && s != manifest.full_set())
                    cols.push_back(s);
        } else {
            cols = subsets_from_names(manifest, c.analysis.columns);
        }
        const auto table = split_accuracy(manifest, *store, map, default_row_filters(manifest, groups, c.analysis.tags),
                                          default_columns(manifest, cols));
        OrderedJson cells = OrderedJson::array();
        for (std::size_t r = 0; r < table.rows.size(); ++r)
            for (std::size_t col = 0; col < table.columns.size(); ++col) {
                const auto& cell = table.cells[r][col];
                OrderedJson j;
                j["row"] = table.rows[r];
                j["column"] = table.columns[col];
                j["n"] = cell.n;
                j["correct"] = cell.correct;
                j["accuracy"] = cell.accuracy ? OrderedJson(*cell.accuracy) : OrderedJson(nullptr);
                j["argmax_ties"] = cell.argmax_ties;
                cells.push_back(j);
            }
        report["split_accuracy"] = cells;
        report["argmax_tie_rule"] = "lowest label index";
        warnings.insert(warnings.end(), table.warnings.begin(), table.warnings.end());
    }

    std::optional<CartographyResult> carto;
    if (c.analysis.cartography) {
        std::vector<std::string> ids;
        for (const auto& e : map.entries)
            if (!store->epochs(e.instance_id, kMainModel, manifest.full_set()).empty())
                ids.push_back(e.instance_id);
        carto = cartography(manifest, *store, ids, &map);
        OrderedJson j;
        j["variance"] = "population";
        j["n_records"] = carto->records.size();
        j["n_ambiguous"] = carto->ambiguous_ids.size();
        j["n_excluded"] = carto->excluded.size();
        j["n_ambiguous_mapped"] = carto->n_ambiguous_mapped;
        j["n_all_mapped"] = carto->n_all_mapped;
        j["ambiguous_fractions"] = fractions_json(carto->ambiguous_fractions, manifest);
        j["all_fractions"] = fractions_json(carto->all_fractions, manifest);
        report["cartography"] = j;
        for (const auto& id : carto->excluded)
            warnings.push_back("cartography: instance '" + id + "' has fewer than two epochs");
    }

    if (c.analysis.sensitivity) {
        std::vector<std::string> ids;
        for (const auto& e : map.entries)
            ids.push_back(e.instance_id);
        OrderedJson sens = OrderedJson::object();
        for (const auto& m : manifest.modalities()) {
            if (!c.modality.empty() && c.modality != m.name)
                continue;
            const auto r = sensitivity_ranking(manifest, *store, m.index, c.analysis.sensitivity_k, ids);
            OrderedJson top = OrderedJson::array();
            for (const auto& e : r.top)
                top.push_back({{"instance_id", e.instance_id},
                               {"p_full", e.p_full},
                               {"p_masked", e.p_masked},
                               {"drop", e.drop}});
            OrderedJson j;
            j["k"] = c.analysis.sensitivity_k;
            j["available"] = r.available;
            j["truncated"] = r.truncated;
            j["top"] = top;
            sens[m.name] = j;
            if (r.truncated)
                warnings.push_back("sensitivity: only " + std::to_string(r.available) + " instances available for '"
                                   + m.name + "'");
        }
        report["sensitivity"] = sens;
    }
    report["warnings"] = warnings;
    st.json("reports/report.json", report);

    auto& venn_csv = st.csv("reports/venn.csv");
    venn_csv << "region,mask,count,fraction\n";
    for (ModalitySet s : enumerate_subsets(manifest.modality_count()))
        venn_csv << csv_field(manifest.subset_name(s)) << ',' << s.mask() << ',' << venn.count(s) << ','
                 << format_double(static_cast<double>(venn.count(s)) / static_cast<double>(venn.total)) << '\n';

    std::map<std::string, const CartographyRecord*> carto_of;
    std::set<std::string> ambiguous;
    if (carto) {
        for (const auto& r : carto->records)
            carto_of[r.instance_id] = &r;
        ambiguous.insert(carto->ambiguous_ids.begin(), carto->ambiguous_ids.end());
    }
    auto& plot = st.csv("reports/plotdata.csv");
    plot << "instance_id,solvable_set,cartography_mean,cartography_variance,ambiguous\n";
    for (const auto& e : map.entries) {
        plot << csv_field(e.instance_id) << ',' << csv_field(manifest.subset_name(e.solvable)) << ',';
        if (auto it = carto_of.find(e.instance_id); it != carto_of.end())
            plot << format_double(it->second->mean) << ',' << format_double(it->second->variance) << ','
                 << (ambiguous.contains(e.instance_id) ? "true" : "false");
        else
            plot << ",,";
        plot << '\n';
    }
    return st.commit();
}

std::vector<StageResult> cmd_pipeline(const RunConfig& c)
{
    if (!c.modality.empty())
        throw ConfigError("the pipeline trains every modality; --modality applies to the train and analyze stages");
    std::vector<StageResult> out;
    out.push_back(cmd_aggregate(c));
    out.push_back(cmd_featurize(c));
    out.push_back(cmd_train(c));
    out.push_back(cmd_predict(c));
    out.push_back(cmd_analyze(c));
    return out;
}

void validate_report(const Json& r)
{
    auto is_obj = [](const Json& j) { return j.is_object(); };
    auto is_count = [](const Json& j) { return j.is_number_unsigned() || (j.is_number_integer() && j.get<long long>() >= 0); };
    auto is_fraction = [](const Json& j) { return j.is_number() && j.get<double>() >= 0.0 && j.get<double>() <= 1.0; };
    if (!r.is_object())
        throw ValidationError("report: root must be an object");
    require_key(r, "schema_version", [](const Json& j) { return j.is_number_integer() && j.get<int>() == kSchemaVersion; },
                "the supported schema version");
    require_key(r, "_meta", is_obj, "an object");
    require_key(r["_meta"], "tool_version", [](const Json& j) { return j.is_string(); }, "a string");
    require_key(r["_meta"], "seed", is_count, "a non-negative integer");
    require_key(r["_meta"], "input_sha256", is_obj, "an object");
    require_key(r, "histogram", is_obj, "an object");
    const auto& h = r["histogram"];
    require_key(h, "total", is_count, "a count");
    require_key(h, "counts", is_obj, "an object");
    require_key(h, "fractions", is_obj, "an object");
    require_key(h, "none_fraction", is_fraction, "a fraction");
    for (const auto& [name, v] : h["fractions"].items())
        if (!is_fraction(v))
            throw ValidationError("report: histogram fraction for '" + name + "' is not in [0, 1]");
    require_key(r, "venn", is_obj, "an object");
    require_key(r["venn"], "region_counts", is_obj, "an object");
    std::size_t sum = 0;
    for (const auto& [name, v] : r["venn"]["region_counts"].items()) {
        if (!is_count(v))
            throw ValidationError("report: venn region '" + name + "' is not a count");
        sum += v.get<std::size_t>();
    }
    if (sum != h["total"].get<std::size_t>())
        throw ValidationError("report: venn region counts do not sum to the histogram total");
    if (r.contains("split_accuracy")) {
        if (!r["split_accuracy"].is_array())
            throw ValidationError("report: 'split_accuracy' must be an array");
        for (const auto& cell : r["split_accuracy"]) {
            require_key(cell, "row", [](const Json& j) { return j.is_string(); }, "a string");
            require_key(cell, "column", [](const Json& j) { return j.is_string(); }, "a string");
            require_key(cell, "n", is_count, "a count");
            require_key(cell, "accuracy", [&](const Json& j) { return j.is_null() || is_fraction(j); },
                        "null or a fraction");
        }
    }
    if (r.contains("cartography")) {
        const auto& c = r["cartography"];
        require_key(c, "ambiguous_fractions", is_obj, "an object");
        require_key(c, "all_fractions", is_obj, "an object");
    }
    if (r.contains("sensitivity"))
        require_key(r, "sensitivity", is_obj, "an object");
}

}  // namespace modmap
