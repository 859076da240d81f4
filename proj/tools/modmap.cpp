#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "modmap/artifacts.hpp"
#include "modmap/error.hpp"
#include "modmap/pipeline.hpp"

namespace {

using Overrides = std::vector<std::pair<std::string, std::string>>;

struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string variant;
    std::string grid;
    std::string out;
    std::string modality;
    std::string folds;
    std::optional<int> threads;
};

void add_common(CLI::App* cmd, CommonFlags& f)
{
    cmd->add_option("--config", f.config, "JSON config file")->check(CLI::ExistingFile);
    cmd->add_option("--seed", f.seed, "Random seed");
    cmd->add_option("--variant", f.variant, "Feature variant")
        ->check(CLI::IsMember({"full", "single_probability", "no_gold_sort"}));
    cmd->add_option("--grid", f.grid, "Hyperparameter grid, e.g. \"n_trees=50,100;max_depth=4,none\"");
    cmd->add_option("--out", f.out, "Output directory");
    cmd->add_option("--modality", f.modality, "Restrict per-modality stages to one modality");
    cmd->add_option("--folds", f.folds, "Fold assignment file for cross-fold annotation");
    cmd->add_option("--threads", f.threads, "Worker threads (0 = MODMAP_THREADS or hardware)");
    cmd->allow_extras();
    cmd->footer("Any config key can be set with --<dotted.key> <value>, e.g. --quality.min_agreement 0.6");
}

// Turns leftover "--a.b value" / "--a.b=value" arguments into dotted overrides.
Overrides parse_extras(const std::vector<std::string>& extras)
{
    Overrides out;
    for (std::size_t i = 0; i < extras.size(); ++i) {
        const auto& arg = extras[i];
        if (arg.rfind("--", 0) != 0 || arg.size() == 2)
            throw CLI::ExtrasError({arg});
        auto body = arg.substr(2);
        if (auto eq = body.find('='); eq != std::string::npos) {
            out.emplace_back(body.substr(0, eq), body.substr(eq + 1));
        } else {
            if (i + 1 >= extras.size())
                throw CLI::ArgumentMismatch(arg + " needs a value");
            out.emplace_back(body, extras[++i]);
        }
    }
    return out;
}

modmap::RunConfig build_config(const CommonFlags& f, const std::vector<std::string>& extras)
{
    Overrides o = parse_extras(extras);
    if (f.seed)
        o.emplace_back("seed", std::to_string(*f.seed));
    if (!f.variant.empty())
        o.emplace_back("features.variant", f.variant);
    if (!f.grid.empty())
        o.emplace_back("train.grid", f.grid);
    if (!f.out.empty())
        o.emplace_back("out", f.out);
    if (!f.modality.empty())
        o.emplace_back("modality", f.modality);
    if (!f.folds.empty())
        o.emplace_back("paths.folds", f.folds);
    if (f.threads)
        o.emplace_back("threads", std::to_string(*f.threads));
    std::optional<std::filesystem::path> file;
    if (!f.config.empty())
        file = f.config;
    return modmap::load_config(file, o);
}

void report(const modmap::StageResult& r, const std::filesystem::path& root)
{
    std::cout << r.stage << ":";
    for (const auto& o : r.outputs)
        std::cout << ' ' << (root / o).string();
    std::cout << '\n';
}

int run_guarded(const std::function<void()>& fn)
{
    try {
        fn();
        return 0;
    } catch (const modmap::MissingInputError& e) {
        std::cerr << "modmap: missing input: " << e.path() << '\n';
        return 2;
    } catch (const modmap::ValidationError& e) {
        std::cerr << "modmap: validation error: " << e.what() << '\n';
        return 3;
    } catch (const modmap::InvalidArgument& e) {
        std::cerr << "modmap: invalid argument: " << e.what() << '\n';
        return 3;
    } catch (const CLI::ParseError& e) {
        std::cerr << "modmap: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "modmap: internal error: " << e.what() << '\n';
        return 4;
    }
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Modality solvability mapping for multimodal QA datasets"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(modmap::kToolVersion));

    std::string spec_file;
    std::string sim_out = "synth";
    std::optional<std::uint64_t> sim_seed;
    auto* simulate = app.add_subcommand("simulate", "Generate a synthetic dataset with known solving sets");
    simulate->add_option("--spec", spec_file, "JSON synth spec")->check(CLI::ExistingFile);
    simulate->add_option("--out", sim_out, "Output directory");
    simulate->add_option("--seed", sim_seed, "Overrides the spec seed");
    simulate->allow_extras();
    simulate->footer("Any spec key can be set with --<key> <value>, e.g. --n_instances 500");

    CommonFlags flags;
    struct Cmd {
        const char* name;
        const char* help;
        modmap::StageResult (*fn)(const modmap::RunConfig&);
    };
    const std::vector<Cmd> stages{
        {"aggregate", "Filter annotations and aggregate gold seed labels", modmap::cmd_aggregate},
        {"featurize", "Assemble feature vectors from subset probabilities", modmap::cmd_featurize},
        {"train", "Grid-search one solvability classifier per modality", modmap::cmd_train},
        {"predict", "Silver-annotate the dataset with the trained classifiers", modmap::cmd_predict},
        {"analyze", "Histogram, Venn regions, split accuracy, cartography and sensitivity", modmap::cmd_analyze},
    };
    std::vector<CLI::App*> stage_cmds;
    for (const auto& s : stages) {
        stage_cmds.push_back(app.add_subcommand(s.name, s.help));
        add_common(stage_cmds.back(), flags);
    }
    auto* pipeline = app.add_subcommand("pipeline", "Run aggregate, featurize, train, predict and analyze");
    add_common(pipeline, flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 3;
    }

    if (simulate->parsed()) {
        return run_guarded([&] {
            modmap::Json spec_json = modmap::Json(modmap::synth_spec_to_json(modmap::SynthSpec{}));
            if (!spec_file.empty()) {
                std::ifstream in(spec_file);
                try {
                    spec_json = modmap::Json::parse(in);
                } catch (const nlohmann::json::parse_error& e) {
                    throw modmap::ParseError(spec_file, 0, e.what());
                }
            }
            for (const auto& [key, value] : parse_extras(simulate->remaining())) {
                try {
                    spec_json[key] = modmap::Json::parse(value);
                } catch (const nlohmann::json::parse_error&) {
                    spec_json[key] = value;
                }
            }
            if (sim_seed)
                spec_json["seed"] = *sim_seed;
            const auto spec = modmap::synth_spec_from_json(spec_json);
            report(modmap::cmd_simulate(spec, sim_out), sim_out);
        });
    }
    for (std::size_t i = 0; i < stages.size(); ++i) {
        if (!stage_cmds[i]->parsed())
            continue;
        return run_guarded([&] {
            const auto config = build_config(flags, stage_cmds[i]->remaining());
            report(stages[i].fn(config), config.out);
        });
    }
    return run_guarded([&] {
        const auto config = build_config(flags, pipeline->remaining());
        for (const auto& r : modmap::cmd_pipeline(config))
            report(r, config.out);
    });
}
