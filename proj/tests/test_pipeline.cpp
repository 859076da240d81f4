#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include "modmap/artifacts.hpp"
#include "modmap/error.hpp"
#include "modmap/pipeline.hpp"

using namespace modmap;
namespace fs = std::filesystem;

namespace {

struct Scratch {
    fs::path dir;
    explicit Scratch(const std::string& name)
        : dir(fs::temp_directory_path() / ("modmap-test-" + name + "-" + std::to_string(::getpid())))
    {
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~Scratch() { fs::remove_all(dir); }
};

SynthSpec tiny_spec()
{
    SynthSpec s;
    s.n_instances = 400;
    s.seed_size = 200;
    s.seed = 21;
    return s;
}

RunConfig config_in(const fs::path& synth_dir, const fs::path& out)
{
    return load_config(synth_dir / "config.json", {{"out", out.string()}, {"train.grid", "n_trees=20;max_depth=4"}});
}

std::map<std::string, std::string> hash_tree(const fs::path& root)
{
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file())
            out[fs::relative(e.path(), root).string()] = sha256_file(e.path());
    return out;
}

int run(const std::string& args, std::string* err = nullptr)
{
    static int counter = 0;
    const auto err_file = fs::temp_directory_path() / ("modmap-cli-" + std::to_string(::getpid()) + "-"
                                                       + std::to_string(counter++) + ".err");
    const std::string cmd = std::string(MODMAP_CLI) + " " + args + " > /dev/null 2> " + err_file.string();
    const int status = std::system(cmd.c_str());
    if (err) {
        std::ifstream in(err_file);
        std::stringstream ss;
        ss << in.rdbuf();
        *err = ss.str();
    }
    fs::remove(err_file);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config defaults and overrides")
{
    const auto d = load_config(std::nullopt, {});
    CHECK(d.out == "modmap-out");
    CHECK(d.quorum == 5);
    CHECK(d.grid.size() == 20);
    CHECK(d.quality.claim_extreme == 0.95);
    CHECK(d.analysis.tags == std::vector<std::string>{"who-question"});

    const auto o = load_config(std::nullopt, {{"quality.min_agreement", "0.7"},
                                              {"features.variant", "single_probability"},
                                              {"analysis.tags", "[\"who-question\",\"why\"]"},
                                              {"train.features_per_split", "3"},
                                              {"seed", "42"}});
    CHECK(o.quality.min_agreement == 0.7);
    CHECK(o.variant == FeatureVariant::SingleProbability);
    CHECK(o.analysis.tags.size() == 2);
    CHECK(o.forest.features_per_split == 3);
    CHECK(o.seed == 42);

    CHECK_THROWS_AS(load_config(std::nullopt, {{"quality.min_agreemnt", "0.7"}}), ConfigError);
    CHECK_THROWS_AS(load_config(std::nullopt, {{"quorum", "many"}}), ConfigError);
    CHECK_THROWS_AS(load_config(std::nullopt, {{"quorum", "0"}}), ConfigError);
    CHECK_THROWS_AS(load_config(std::nullopt, {{"features.variant", "mlp"}}), ValidationError);
    CHECK_THROWS_AS(load_config(std::nullopt, {{"train.grid", "n_trees=x"}}), ValidationError);
    CHECK_THROWS_AS(load_config(fs::path("/nonexistent/modmap.json"), {}), MissingInputError);
}

TEST_CASE("config files resolve paths against their directory")
{
    Scratch s("config");
    {
        std::ofstream f(s.dir / "run.json");
        f << R"({"paths": {"manifest": "data/dataset.jsonl"}, "quality": {"min_responses": 7}})";
    }
    const auto c = load_config(s.dir / "run.json", {{"quality.min_responses", "9"}});
    CHECK(c.manifest == s.dir / "data/dataset.jsonl");
    CHECK(c.quality.min_responses == 9);
    {
        std::ofstream f(s.dir / "bad.json");
        f << R"({"paths": {"manifests": "x"}})";
    }
    CHECK_THROWS_AS(load_config(s.dir / "bad.json", {}), ConfigError);
}

TEST_CASE("staged outputs only appear on commit")
{
    Scratch s("staged");
    {
        StagedOutputs st(s.dir);
        st.open("labels/a.jsonl") << "partial\n";
    }
    CHECK(fs::exists(s.dir / "labels/a.jsonl.tmp"));
    CHECK_FALSE(fs::exists(s.dir / "labels/a.jsonl"));

    StagedOutputs st(s.dir);
    st.open("labels/a.jsonl") << "done\n";
    const auto written = st.commit();
    CHECK(written == std::vector<std::string>{"labels/a.jsonl"});
    CHECK(fs::exists(s.dir / "labels/a.jsonl"));
    CHECK_FALSE(fs::exists(s.dir / "labels/a.jsonl.tmp"));
}

TEST_CASE("artifact metadata")
{
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    const auto meta = meta_json(7, {{"manifest", "00"}});
    CHECK(meta["seed"] == 7);
    CHECK(meta["schema_version"] == kSchemaVersion);
    CHECK(meta["tool_version"] == kToolVersion);
    Json future;
    future["_meta"] = Json::parse(meta.dump());
    future["_meta"]["schema_version"] = kSchemaVersion + 1;
    CHECK_THROWS_AS(check_json_schema(future, "mem"), ValidationError);
    CHECK_THROWS_AS(sha256_file("/nonexistent/file"), MissingInputError);
}

TEST_CASE("simulate then pipeline produces a valid, reproducible report")
{
    Scratch s("pipeline");
    const auto synth_dir = s.dir / "synth";
    cmd_simulate(tiny_spec(), synth_dir);
    for (const char* f : {"dataset.jsonl", "probs.jsonl", "annotations.jsonl", "seed.jsonl", "truth.jsonl",
                          "config.json", "synth_spec.json", "manifests/simulate.json"})
        CHECK(fs::exists(synth_dir / f));

    const auto out = s.dir / "out";
    const auto config = config_in(synth_dir, out);
    const auto stages = cmd_pipeline(config);
    REQUIRE(stages.size() == 5);
    for (const char* f : {"labels/gold_labels.jsonl", "labels/worker_stats.csv", "labels/aggregation.json",
                          "features/features.jsonl", "models/model_image.json", "models/model_text.json",
                          "models/model_audio.json", "models/leaderboard.csv", "models/eval.json",
                          "labels/silver_labels.jsonl", "reports/report.json", "reports/venn.csv",
                          "reports/plotdata.csv", "manifests/aggregate.json", "manifests/analyze.json"})
        CHECK(fs::exists(out / f));

    std::ifstream in(out / "reports/report.json");
    const Json report = Json::parse(in);
    CHECK_NOTHROW(validate_report(report));
    CHECK(report["_meta"]["seed"] == 21);
    CHECK(report["_meta"]["input_sha256"].contains("silver_labels"));

    Json broken = report;
    broken["venn"]["region_counts"]["none"] = broken["venn"]["region_counts"]["none"].get<int>() + 1;
    CHECK_THROWS_AS(validate_report(broken), ValidationError);

    const auto first = hash_tree(out);
    for (const auto& [name, hash] : first)
        CHECK(name.find(".tmp") == std::string::npos);
    cmd_pipeline(config);
    CHECK(hash_tree(out) == first);

    SUBCASE("a per-modality train run writes its own leaderboard")
    {
        auto one = config;
        one.modality = "text";
        cmd_train(one);
        CHECK(fs::exists(out / "models/leaderboard_text.csv"));
        CHECK(fs::exists(out / "models/eval_text.json"));
        CHECK_THROWS_AS(cmd_pipeline(one), ConfigError);
        one.modality = "smell";
        CHECK_THROWS_AS(cmd_train(one), ConfigError);
    }
}

TEST_CASE("stages report missing upstream artifacts")
{
    Scratch s("missing");
    const auto synth_dir = s.dir / "synth";
    cmd_simulate(tiny_spec(), synth_dir);
    const auto config = config_in(synth_dir, s.dir / "out");
    try {
        cmd_analyze(config);
        FAIL("analyze ran without silver labels");
    } catch (const MissingInputError& e) {
        CHECK(e.path().find("silver_labels.jsonl") != std::string::npos);
    }
    CHECK_THROWS_AS(cmd_train(config), MissingInputError);
    auto no_manifest = config;
    no_manifest.manifest = s.dir / "nope.jsonl";
    CHECK_THROWS_AS(cmd_aggregate(no_manifest), MissingInputError);
}

TEST_CASE("CLI exit codes")
{
    Scratch s("cli");
    const auto synth = (s.dir / "synth").string();
    const auto out = (s.dir / "out").string();
    REQUIRE(run("simulate --out " + synth + " --n_instances 300 --seed_size 150 --seed 4") == 0);
    const std::string common = " --config " + synth + "/config.json --out " + out;

    std::string err;
    CHECK(run("analyze" + common, &err) == 2);
    CHECK(err.find("silver_labels.jsonl") != std::string::npos);

    CHECK(run("aggregate" + common + " --quality.min_agreement 2") == 3);
    CHECK(run("aggregate" + common + " --no.such.key 1") == 3);
    CHECK(run("train" + common + " --variant mlp") == 3);
    CHECK(run("bogus") == 3);
    CHECK(run("aggregate --config " + (s.dir / "missing.json").string()) == 3);

    {
        std::ofstream bad(s.dir / "bad.jsonl");
        bad << "{\"modalities\":[\"image\"],\"label_space_size\":2}\n{\"id\":\"a\",\"gold_index\":7,\"options\":[\"x\",\"y\"]}\n";
    }
    CHECK(run("aggregate" + common + " --paths.manifest " + (s.dir / "bad.jsonl").string(), &err) == 3);
    CHECK(err.find("bad.jsonl:2:") != std::string::npos);

    CHECK(run("pipeline" + common + " --grid n_trees=10;max_depth=3") == 0);
    CHECK(fs::exists(s.dir / "out/reports/report.json"));
    CHECK(run("--version") == 0);
}
