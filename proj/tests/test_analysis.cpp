#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "modmap/analysis.hpp"
#include "modmap/error.hpp"
#include "modmap/synth.hpp"

using namespace modmap;

namespace {

ModalityMap map_of(int m, const std::vector<std::uint32_t>& masks)
{
    ModalityMap map;
    map.modality_count = m;
    for (std::size_t i = 0; i < masks.size(); ++i)
        map.entries.push_back({"i" + std::to_string(i), ModalitySet(masks[i]), LabelProvenance::SilverClassifier});
    return map;
}

DatasetManifest manifest_n(int n, int labels = 5)
{
    std::vector<Instance> instances;
    for (int i = 0; i < n; ++i)
        instances.push_back({"i" + std::to_string(i), "q", std::vector<std::string>(labels, "o"), i % labels,
                             i % 2 ? std::vector<std::string>{"who-question"} : std::vector<std::string>{}, "val"});
    return DatasetManifest({{0, "image"}, {1, "text"}, {2, "audio"}}, labels, std::move(instances));
}

std::vector<double> peaked(int labels, int at, double p)
{
    std::vector<double> v(static_cast<std::size_t>(labels), (1.0 - p) / (labels - 1));
    v[static_cast<std::size_t>(at)] = p;
    return v;
}

RandomForestModel constant_model(bool positive, const FeatureLayout& layout, int modality)
{
    RandomForestModel m;
    m.layout = layout;
    m.modality = {modality, "m" + std::to_string(modality)};
    DecisionTree t;
    t.nodes.push_back({-1, 0.0, -1, -1, positive ? 0.0 : 1.0, positive ? 1.0 : 0.0});
    m.trees.push_back(t);
    return m;
}

SynthSpec small_fold_spec()
{
    SynthSpec s;
    s.n_instances = 300;
    s.seed_size = 300;
    s.n_train = 40;
    s.seed = 8;
    return s;
}

ClassifierTrainingConfig quick_config()
{
    ClassifierTrainingConfig c;
    c.grid = {{20, 4}};
    c.seed = 3;
    return c;
}

}  // namespace

TEST_CASE("answerability histogram")
{
    const auto h = answerability_histogram(map_of(3, {1, 3, 7, 0}));
    CHECK(h.fraction(0) == 0.75);
    CHECK(h.fraction(1) == 0.5);
    CHECK(h.fraction(2) == 0.25);
    CHECK(h.none_fraction() == 0.25);
    const auto none = answerability_histogram(map_of(3, {0, 0}));
    for (int i = 0; i < 3; ++i)
        CHECK(none.fraction(i) == 0.0);
    CHECK(none.none_fraction() == 1.0);
    CHECK_THROWS_AS(answerability_histogram(map_of(3, {})), InvalidArgument);
}

TEST_CASE("venn regions")
{
    const auto v = venn_regions(map_of(3, {4, 6, 6}));
    CHECK(v.total == 3);
    CHECK(v.count(ModalitySet(4)) == 1);
    CHECK(v.count(ModalitySet(6)) == 2);
    for (std::uint32_t s : {0u, 1u, 2u, 3u, 5u, 7u})
        CHECK(v.count(ModalitySet(s)) == 0);
    CHECK(v.fraction_multi() == doctest::Approx(2.0 / 3.0));
    CHECK(v.fraction_all() == 0.0);
    CHECK(venn_regions(map_of(3, {7})).count(ModalitySet(7)) == 1);
    CHECK(venn_regions(map_of(3, {7})).fraction_all() == 1.0);
}

TEST_CASE("venn regions are permutation invariant")
{
    Rng rng(4);
    std::vector<std::uint32_t> masks;
    for (int i = 0; i < 500; ++i)
        masks.push_back(static_cast<std::uint32_t>(rng.index(16)));
    const auto base = venn_regions(map_of(4, masks)).region_counts;
    std::shuffle(masks.begin(), masks.end(), rng);
    CHECK(venn_regions(map_of(4, masks)).region_counts == base);
}

TEST_CASE("argmax ties resolve to the lowest index")
{
    CHECK(argmax_lowest(std::vector{0.1, 0.4, 0.4, 0.1}) == 1);
    CHECK(argmax_lowest(std::vector{0.5, 0.5}) == 0);
    CHECK(argmax_lowest(std::vector{0.2, 0.3, 0.5}) == 2);
}

TEST_CASE("split accuracy counts argmax hits")
{
    const auto m = manifest_n(4);
    ProbabilityStore store(3, 5);
    for (int i = 0; i < 4; ++i) {
        const int gold = i % 5;
        store.insert({"i" + std::to_string(i), ModalitySet(7), peaked(5, i == 3 ? (gold + 1) % 5 : gold, 0.6),
                      kMainModel, std::nullopt});
    }
    const auto map = map_of(3, {7, 7, 1, 0});
    const auto rows = default_row_filters(m, {}, {});
    const auto t = split_accuracy(m, store, map, rows, default_columns(m, {}));
    REQUIRE(t.rows[0] == "all");
    CHECK(t.cells[0][0].n == 4);
    CHECK(*t.cells[0][0].accuracy == 0.75);
    CHECK(t.rows[1] == "answerable-by-all");
    CHECK(*t.cells[1][0].accuracy == 1.0);
    CHECK(t.rows[2] == "only-image");
    CHECK(t.cells[2][0].n == 1);
    CHECK(t.rows[3] == "only-text");
    CHECK_FALSE(t.cells[3][0].accuracy.has_value());
    CHECK_FALSE(t.warnings.empty());
}

TEST_CASE("split accuracy tie rule")
{
    std::vector<Instance> instances{{"a", "q", {"x", "y", "z"}, 0, {}, "val"}, {"b", "q", {"x", "y", "z"}, 1, {}, "val"}};
    const DatasetManifest m({{0, "image"}}, 3, instances);
    ProbabilityStore store(1, 3);
    store.insert({"a", ModalitySet(1), {0.4, 0.4, 0.2}, kMainModel, std::nullopt});
    store.insert({"b", ModalitySet(1), {0.4, 0.4, 0.2}, kMainModel, std::nullopt});
    ModalityMap map;
    map.modality_count = 1;
    map.entries = {{"a", ModalitySet(1), LabelProvenance::SilverClassifier},
                   {"b", ModalitySet(1), LabelProvenance::SilverClassifier}};
    const auto t = split_accuracy(m, store, map, default_row_filters(m, {}, {}), default_columns(m, {}));
    CHECK(t.cells[0][0].correct == 1);
    CHECK(t.cells[0][0].argmax_ties == 2);
}

TEST_CASE("uniform probabilities score at chance")
{
    const auto m = manifest_n(1000);
    ProbabilityStore store(3, 5);
    Rng rng(2);
    for (const auto& inst : m.instances()) {
        std::vector<double> p(5);
        for (auto& v : p)
            v = 0.2 + 1e-6 * rng.uniform();
        double s = 0.0;
        for (double v : p)
            s += v;
        for (auto& v : p)
            v /= s;
        store.insert({inst.id, ModalitySet(7), p, kMainModel, std::nullopt});
    }
    std::vector<std::uint32_t> masks(1000, 7);
    const auto t = split_accuracy(m, store, map_of(3, masks), default_row_filters(m, {}, {}), default_columns(m, {}));
    CHECK(std::abs(*t.cells[0][0].accuracy - 0.2) <= 0.05);
}

TEST_CASE("tag rows restrict masked columns to solvable instances")
{
    const auto m = manifest_n(4);
    ProbabilityStore store(3, 5);
    for (int i = 0; i < 4; ++i)
        for (std::uint32_t s : {1u, 7u})
            store.insert({"i" + std::to_string(i), ModalitySet(s), peaked(5, i % 5, 0.6), kMainModel, std::nullopt});
    const auto rows = default_row_filters(m, {ModalitySet(6)}, {"who-question"});
    const auto cols = default_columns(m, {ModalitySet(1)});
    const auto t = split_accuracy(m, store, map_of(3, {1, 1, 2, 2}), rows, cols);
    const auto tag_row = std::find(t.rows.begin(), t.rows.end(), "tag:who-question") - t.rows.begin();
    CHECK(t.rows[5] == "only-text+audio");
    CHECK(t.cells[5][0].n == 2);
    CHECK(t.cells[tag_row][0].n == 2);
    CHECK(t.cells[tag_row][1].n == 1);
}

TEST_CASE("mean and population variance")
{
    const auto [mean, var] = mean_variance(std::vector{0.2, 0.5, 0.8});
    CHECK(mean == doctest::Approx(0.5));
    CHECK(var == doctest::Approx(0.06));
    CHECK(mean_variance(std::vector{0.7, 0.7, 0.7}).second == 0.0);
    CHECK_THROWS_AS(mean_variance(std::vector<double>{}), InvalidArgument);
}

TEST_CASE("cartography selects the top half by variance")
{
    const auto m = manifest_n(6);
    ProbabilityStore store(3, 5);
    const double spread[] = {0.0, 0.3, 0.1, 0.2, 0.05, 0.3};
    for (int i = 0; i < 5; ++i)
        for (int e = 1; e <= 3; ++e)
            store.insert({"i" + std::to_string(i), ModalitySet(7), peaked(5, i % 5, 0.5 + spread[i] * (e - 2)),
                          kMainModel, e});
    store.insert({"i5", ModalitySet(7), peaked(5, 0, 0.5), kMainModel, 1});

    std::vector<std::string> ids{"i0", "i1", "i2", "i3", "i4", "i5"};
    const auto map = map_of(3, {1, 2, 4, 3, 7, 0});
    const auto r = cartography(m, store, ids, &map);
    CHECK(r.records.size() == 5);
    CHECK(r.excluded == std::vector<std::string>{"i5"});
    CHECK(r.ambiguous_ids == std::vector<std::string>{"i1", "i3", "i2"});
    CHECK(r.records[1].variance == doctest::Approx(2.0 * 0.09 / 3.0));
    CHECK(r.n_all_mapped == 5);
    CHECK(r.n_ambiguous_mapped == 3);
    CHECK(r.ambiguous_fractions[1] == doctest::Approx(2.0 / 3.0));
    CHECK(r.all_fractions[0] == doctest::Approx(3.0 / 5.0));
}

TEST_CASE("sensitivity ranking")
{
    const auto m = manifest_n(4);
    ProbabilityStore store(3, 5);
    const double masked[] = {0.3, 0.9, 0.5, 0.1};
    for (int i = 0; i < 4; ++i) {
        store.insert({"i" + std::to_string(i), ModalitySet(7), peaked(5, i % 5, 0.9), kMainModel, std::nullopt});
        if (i < 3)
            store.insert({"i" + std::to_string(i), ModalitySet(6), peaked(5, i % 5, masked[i]), kMainModel,
                          std::nullopt});
    }
    const std::vector<std::string> ids{"i0", "i1", "i2", "i3"};
    const auto r = sensitivity_ranking(m, store, 0, 2, ids);
    REQUIRE(r.top.size() == 2);
    CHECK(r.top[0].instance_id == "i0");
    CHECK(r.top[0].drop == doctest::Approx(0.6));
    CHECK(r.top[1].instance_id == "i2");
    CHECK(r.available == 3);
    CHECK_FALSE(r.truncated);
    const auto all = sensitivity_ranking(m, store, 0, 10, ids);
    CHECK(all.truncated);
    CHECK(all.top.back().instance_id == "i1");
    CHECK(all.top.back().drop == doctest::Approx(0.0));
    CHECK_THROWS_AS(sensitivity_ranking(m, store, 3, 1, ids), InvalidArgument);
}

TEST_CASE("silver_annotate")
{
    const FeatureLayout layout{FeatureVariant::SingleProbability, 3, 2};
    const std::vector<FeatureVector> fvs{{"x", {0.5, 0.5}, layout}};
    const auto yes = silver_annotate({constant_model(true, layout, 0), constant_model(true, layout, 1),
                                      constant_model(true, layout, 2)},
                                     fvs, 3);
    CHECK(yes.map.entries[0].solvable.mask() == 7);
    CHECK(yes.labels.size() == 3);
    CHECK(yes.labels[0].provenance == LabelProvenance::SilverClassifier);
    const auto no = silver_annotate({constant_model(false, layout, 0), constant_model(false, layout, 1),
                                     constant_model(false, layout, 2)},
                                    fvs, 3);
    CHECK(no.map.entries[0].solvable.mask() == 0);
    CHECK_THROWS_AS(silver_annotate({constant_model(true, layout, 0)}, fvs, 3), ConfigError);
    CHECK_THROWS_AS(silver_annotate({constant_model(true, layout, 0), constant_model(true, layout, 0),
                                     constant_model(true, layout, 2)},
                                    fvs, 3),
                    ConfigError);
    const FeatureLayout other{FeatureVariant::Full, 3, 2};
    CHECK_THROWS_AS(silver_annotate({constant_model(true, layout, 0), constant_model(true, layout, 1),
                                     constant_model(true, other, 2)},
                                    fvs, 3),
                    ConfigError);
}

TEST_CASE("map_from_labels")
{
    const auto m = manifest_n(2);
    std::vector<SolvabilityLabel> labels;
    for (int mod = 0; mod < 3; ++mod) {
        labels.push_back({"i0", mod, mod != 1, LabelProvenance::GoldSeed, 3, 5, false, false, std::nullopt});
        labels.push_back({"i1", mod, true, LabelProvenance::GoldSeed, 0, 0, mod == 2, false, std::nullopt});
    }
    const auto map = map_from_labels(labels, m);
    REQUIRE(map.size() == 1);
    CHECK(map.find("i0")->solvable.mask() == 5);
    CHECK(map_from_labels(labels, m, false).size() == 2);
    labels.pop_back();
    CHECK_THROWS_AS(map_from_labels(labels, m, false), ValidationError);
}

TEST_CASE("cross-fold annotation routes through the opposite model")
{
    const auto data = generate(small_fold_spec());
    const auto store = build_store(data);
    const auto labels = aggregate_seed(filter_records(data.annotations, data.manifest, {}).kept, data.manifest,
                                       data.seed, 5);
    std::vector<std::string> train_ids;
    for (const auto& [id, f] : data.folds)
        train_ids.push_back(id);

    const auto r = cross_fold_annotate(data.manifest, train_ids, data.folds, store, labels, data.seed, quick_config());
    CHECK(r.annotation.map.size() == train_ids.size());
    for (const auto& [id, model] : r.audit) {
        auto it = data.folds.find(id);
        if (it != data.folds.end())
            CHECK(model != fold_model_id(it->second));
    }
    CHECK(std::count_if(r.audit.begin(), r.audit.end(), [&](const auto& a) { return data.folds.count(a.first); })
          == static_cast<long>(train_ids.size()));

    SUBCASE("missing cross-fold record is a leakage error")
    {
        const auto& victim = train_ids.front();
        const auto own = data.folds.at(victim);
        ProbabilityStore leaky(store.modality_count(), store.label_space_size());
        for (const auto& [key, probs] : store.entries())
            if (!(key.instance_id == victim && key.model_id != fold_model_id(own)))
                leaky.insert({key.instance_id, key.subset, probs, key.model_id, key.epoch});
        try {
            cross_fold_annotate(data.manifest, train_ids, data.folds, leaky, labels, data.seed, quick_config());
            FAIL("leak not detected");
        } catch (const LeakageError& e) {
            CHECK(std::string(e.what()).find(victim) != std::string::npos);
        }
    }
    SUBCASE("unassigned train instance")
    {
        auto folds = data.folds;
        folds.erase(train_ids.front());
        CHECK_THROWS_AS(cross_fold_annotate(data.manifest, train_ids, folds, store, labels, data.seed, quick_config()),
                        ValidationError);
    }
}

TEST_CASE("train_classifiers reports missing features and layout mismatches")
{
    auto spec = small_fold_spec();
    spec.n_train = 0;
    const auto data = generate(spec);
    const auto store = build_store(data);
    const auto labels = aggregate_seed(filter_records(data.annotations, data.manifest, {}).kept, data.manifest,
                                       data.seed, 5);
    auto config = quick_config();
    config.modalities = {2};
    const auto trained = train_classifiers(data.manifest, store, kMainModel, labels, data.seed, config);
    REQUIRE(trained.size() == 1);
    CHECK(trained[0].search.best.modality.name == "audio");
    CHECK(trained[0].test.has_value());

    std::map<std::string, FeatureVector> partial;
    CHECK_THROWS_AS(train_classifiers(data.manifest, partial, labels, data.seed, config), MissingDataError);
    for (const auto& id : data.seed.instance_ids)
        partial[id] = {id, {0.2, 0.2, 0.2, 0.2, 0.2}, {FeatureVariant::SingleProbability, 3, 5}};
    CHECK_THROWS_AS(train_classifiers(data.manifest, partial, labels, data.seed, config), ConfigError);
}
