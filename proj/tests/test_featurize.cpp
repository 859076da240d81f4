#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <sstream>

#include "modmap/error.hpp"
#include "modmap/featurize.hpp"
#include "modmap/rng.hpp"

using namespace modmap;

namespace {

DatasetManifest manifest(int modalities, int labels, int gold = 0)
{
    std::vector<ModalityId> ms;
    const char* names[] = {"image", "text", "audio", "depth"};
    for (int i = 0; i < modalities; ++i)
        ms.push_back({i, names[i]});
    std::vector<std::string> options(static_cast<std::size_t>(labels), "o");
    return DatasetManifest(ms, labels, {{"x", "q", options, gold, {}, "val"}});
}

std::vector<double> random_probs(Rng& rng, int l)
{
    std::vector<double> p(static_cast<std::size_t>(l));
    for (auto& v : p)
        v = rng.uniform() + 1e-3;
    const double s = std::accumulate(p.begin(), p.end(), 0.0);
    for (auto& v : p)
        v /= s;
    return p;
}

ProbabilityStore full_store(const DatasetManifest& m, Rng& rng, const std::string& model = kMainModel)
{
    ProbabilityStore store(m.modality_count(), m.label_space_size());
    for (const auto s : enumerate_subsets(m.modality_count()))
        store.insert({"x", s, random_probs(rng, m.label_space_size()), model, std::nullopt});
    return store;
}

}  // namespace

TEST_CASE("gold_first_sort")
{
    CHECK(gold_first_sort(std::vector{0.1, 0.7, 0.2}, 1) == std::vector{0.7, 0.1, 0.2});
    CHECK(gold_first_sort(std::vector{0.25, 0.25, 0.25, 0.25}, 3) == std::vector{0.25, 0.25, 0.25, 0.25});
    CHECK(gold_first_sort(std::vector{0.5, 0.3, 0.2}, 0) == std::vector{0.5, 0.3, 0.2});
    CHECK(gold_first_sort(std::vector{0.1, 0.2, 0.3, 0.4}, 3) == std::vector{0.4, 0.1, 0.2, 0.3});
    CHECK_THROWS_AS(gold_first_sort(std::vector{0.5, 0.5}, 2), InvalidArgument);
    CHECK_THROWS_AS(gold_first_sort(std::vector{0.5, 0.5}, -1), InvalidArgument);
}

TEST_CASE("gold_first_sort is a permutation")
{
    Rng rng(9);
    for (int t = 0; t < 500; ++t) {
        const int l = 1 + static_cast<int>(rng.index(8));
        auto p = random_probs(rng, l);
        const int g = static_cast<int>(rng.index(static_cast<std::uint64_t>(l)));
        auto out = gold_first_sort(p, g);
        CHECK(out[0] == p[static_cast<std::size_t>(g)]);
        std::sort(out.begin(), out.end());
        std::sort(p.begin(), p.end());
        CHECK(out == p);
    }
}

TEST_CASE("layout widths")
{
    CHECK(FeatureLayout{FeatureVariant::Full, 3, 5}.width() == 40);
    CHECK(FeatureLayout{FeatureVariant::NoGoldSort, 3, 5}.width() == 40);
    CHECK(FeatureLayout{FeatureVariant::SingleProbability, 3, 5}.width() == 5);
    CHECK(FeatureLayout{FeatureVariant::Full, 1, 2}.width() == 4);
    CHECK(parse_variant("no_gold_sort") == FeatureVariant::NoGoldSort);
    CHECK(to_string(FeatureVariant::SingleProbability) == "single_probability");
    CHECK_THROWS_AS(parse_variant("fancy"), ValidationError);
    const FeatureLayout l{FeatureVariant::NoGoldSort, 2, 4};
    CHECK(layout_from_json(Json::parse(layout_to_json(l).dump())) == l);
}

TEST_CASE("assemble_features hand example")
{
    const auto m = manifest(1, 2, 1);
    ProbabilityStore store(1, 2);
    store.insert({"x", ModalitySet(0), {0.5, 0.5}, kMainModel, std::nullopt});
    store.insert({"x", ModalitySet(1), {0.1, 0.9}, kMainModel, std::nullopt});
    const auto f = assemble_features(m.at("x"), store, {FeatureVariant::Full, 1, 2});
    CHECK(f.values == std::vector{0.5, 0.5, 0.9, 0.1});
    const auto raw = assemble_features(m.at("x"), store, {FeatureVariant::NoGoldSort, 1, 2});
    CHECK(raw.values == std::vector{0.5, 0.5, 0.1, 0.9});
    const auto single = assemble_features(m.at("x"), store, {FeatureVariant::SingleProbability, 1, 2});
    CHECK(single.values == std::vector{0.9, 0.1});
}

TEST_CASE("assemble_features blocks and variants agree")
{
    Rng rng(21);
    const auto m = manifest(3, 5, 3);
    const auto store = full_store(m, rng);
    const auto full = assemble_features(m.at("x"), store, {FeatureVariant::Full, 3, 5});
    REQUIRE(full.values.size() == 40);
    for (int b = 0; b < 8; ++b) {
        const double sum = std::accumulate(full.values.begin() + b * 5, full.values.begin() + (b + 1) * 5, 0.0);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
    const auto single = assemble_features(m.at("x"), store, {FeatureVariant::SingleProbability, 3, 5});
    REQUIRE(single.values.size() == 5);
    CHECK(std::equal(single.values.begin(), single.values.end(), full.values.begin() + 35));
}

TEST_CASE("assemble_features reports missing masks")
{
    Rng rng(2);
    const auto m = manifest(2, 3);
    ProbabilityStore store(2, 3);
    store.insert({"x", ModalitySet(0), random_probs(rng, 3), kMainModel, std::nullopt});
    store.insert({"x", ModalitySet(3), random_probs(rng, 3), kMainModel, std::nullopt});
    try {
        assemble_features(m.at("x"), store, {FeatureVariant::Full, 2, 3});
        FAIL("missing masks accepted");
    } catch (const MissingDataError& e) {
        CHECK(std::string(e.what()).find("[1,2]") != std::string::npos);
    }
    CHECK_NOTHROW(assemble_features(m.at("x"), store, {FeatureVariant::SingleProbability, 2, 3}));
    CHECK_THROWS_AS(assemble_features(m.at("x"), store, {FeatureVariant::Full, 3, 3}), InvalidArgument);
}

TEST_CASE("store insert validates probabilities")
{
    ProbabilityStore store(1, 5);
    CHECK_NOTHROW(store.insert({"a", ModalitySet(0), {0.2, 0.2, 0.2, 0.2, 0.2}, kMainModel, std::nullopt}));
    CHECK(store.at("a", kMainModel, std::nullopt, ModalitySet(0)) == std::vector{0.2, 0.2, 0.2, 0.2, 0.2});
    store.insert({"a", ModalitySet(1), {0.20001, 0.20001, 0.20001, 0.20001, 0.20001}, kMainModel, std::nullopt});
    const auto& r = store.at("a", kMainModel, std::nullopt, ModalitySet(1));
    CHECK(std::accumulate(r.begin(), r.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_THROWS_AS(store.insert({"a", ModalitySet(0), {0.2, 0.2, 0.2, 0.2, 0.2}, kMainModel, std::nullopt}),
                    ValidationError);

    ProbabilityStore two(1, 2);
    CHECK_THROWS_AS(two.insert({"b", ModalitySet(0), {-0.1, 1.1}, kMainModel, std::nullopt}), ValidationError);
    CHECK_THROWS_AS(two.insert({"b", ModalitySet(0), {0.5, 0.6}, kMainModel, std::nullopt}), ValidationError);
    CHECK_THROWS_AS(two.insert({"b", ModalitySet(0), {1.0}, kMainModel, std::nullopt}), ValidationError);
    CHECK_THROWS_AS(two.insert({"b", ModalitySet(2), {0.5, 0.5}, kMainModel, std::nullopt}), ValidationError);
    CHECK_NOTHROW(two.insert({"b", ModalitySet(0), {0.5, 0.5}, kMainModel, 3}));
    CHECK_NOTHROW(two.insert({"b", ModalitySet(0), {0.5, 0.5}, kMainModel, 1}));
    CHECK(two.epochs("b", kMainModel, ModalitySet(0)) == std::vector{1, 3});
}

TEST_CASE("ingest_probabilities is independent of record order")
{
    const auto m = manifest(2, 2, 1);
    std::vector<std::string> lines{
        R"({"instance_id":"x","subset":[],"probs":[0.5,0.5]})",
        R"({"instance_id":"x","subset":["image"],"probs":[0.3,0.7]})",
        R"({"instance_id":"x","subset":["text"],"probs":[0.6,0.4]})",
        R"({"instance_id":"x","subset":["text","image"],"probs":[0.1,0.9]})",
        R"({"instance_id":"x","subset":["image","text"],"probs":[0.2,0.8],"model_id":"fold_A","epoch":2})",
    };
    auto load = [&](const std::vector<std::string>& ls) {
        std::string text;
        for (const auto& l : ls)
            text += l + "\n";
        std::istringstream in(text);
        return ingest_probabilities(in, "mem", m);
    };
    const auto a = load(lines);
    std::reverse(lines.begin(), lines.end());
    const auto b = load(lines);
    CHECK(a.entries() == b.entries());
    CHECK(a.at("x", "fold_A", 2, ModalitySet(3)) == std::vector{0.2, 0.8});
    const FeatureLayout layout{FeatureVariant::Full, 2, 2};
    CHECK(assemble_features(m.at("x"), a, layout).values == assemble_features(m.at("x"), b, layout).values);
    CHECK(assemble_features(m.at("x"), a, layout).values == std::vector{0.5, 0.5, 0.7, 0.3, 0.4, 0.6, 0.9, 0.1});

    std::istringstream unknown(R"({"instance_id":"nobody","subset":[],"probs":[0.5,0.5]})"
                               "\n");
    CHECK_THROWS_AS(ingest_probabilities(unknown, "mem", m), ValidationError);
    std::istringstream bad_modality(R"({"instance_id":"x","subset":["smell"],"probs":[0.5,0.5]})"
                                    "\n");
    CHECK_THROWS_AS(ingest_probabilities(bad_modality, "mem", m), ValidationError);
}

TEST_CASE("probability records round-trip")
{
    const auto m = manifest(2, 3);
    const ProbabilityRecord r{"x", ModalitySet(2), {0.25, 0.5, 0.25}, "fold_B", 4};
    std::ostringstream out;
    write_probability_record(r, m, out);
    std::istringstream in(out.str());
    const auto store = ingest_probabilities(in, "mem", m);
    CHECK(store.at("x", "fold_B", 4, ModalitySet(2)) == r.probs);
}
