// bta: scenario-driven harness for the market attack laboratory.
// Stages: generate, train, attack, realize, feedback, transfer, defend, report.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "bta/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitDependency = 3;
constexpr int kExitRuntime = 4;

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"black-tuesday attack laboratory"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::string run_dir;
    uint64_t seed_override = 0;
    bool has_seed = false;

    std::vector<CLI::App*> stage_cmds;
    for (const auto& stage : bta::kStageOrder) {
        CLI::App* cmd = app.add_subcommand(stage, "run the '" + stage + "' stage");
        cmd->add_option("--config", config_path, "scenario config file");
        cmd->add_option("--out", out_dir, "run directory (default: runs/<digest>-<timestamp>)");
        cmd->add_option("--seed", seed_override, "override the master seed")
            ->each([&](const std::string&) { has_seed = true; });
        if (stage == "report")
            cmd->add_option("--run", run_dir, "summarize an existing run directory");
        stage_cmds.push_back(cmd);
    }
    CLI::App* all_cmd = app.add_subcommand("all", "run every stage in order");
    all_cmd->add_option("--config", config_path, "scenario config file")->required();
    all_cmd->add_option("--out", out_dir, "run directory");
    all_cmd->add_option("--seed", seed_override, "override the master seed")
        ->each([&](const std::string&) { has_seed = true; });

    double scale_factor = 1.0;
    std::string scale_out;
    CLI::App* scale_cmd =
        app.add_subcommand("scale", "shrink a scenario to its largest-cap stocks");
    scale_cmd->add_option("--config", config_path, "scenario config file")->required();
    scale_cmd->add_option("--factor", scale_factor, "fraction of stocks to keep, in (0, 1]")
        ->required();
    scale_cmd->add_option("--out", scale_out, "write the scaled config here (default: stdout)");

    CLI11_PARSE(app, argc, argv);

    try {
        // `bta report --run <dir>`: consolidated summary of a finished run
        if (!run_dir.empty()) {
            const bta::ScenarioConfig cfg = bta::load_scenario(run_dir + "/config.json");
            std::cout << bta::consolidated_report(cfg, run_dir);
            return kExitOk;
        }
        if (config_path.empty()) {
            std::cerr << "validation error: --config is required\n";
            return kExitValidation;
        }

        bta::ScenarioConfig cfg = bta::load_scenario(config_path);
        if (scale_cmd->parsed()) {
            const std::string text = bta::dump_scenario(bta::scale_scenario(cfg, scale_factor));
            if (scale_out.empty()) {
                std::cout << text;
            } else {
                std::ofstream out(scale_out, std::ios::binary);
                if (!out) throw std::runtime_error("cannot open " + scale_out + " for writing");
                out << text;
            }
            return kExitOk;
        }
        if (has_seed) {
            // a seed override re-derives every stage seed from the new master
            auto j = nlohmann::json::parse(bta::dump_scenario(cfg));
            j["master_seed"] = seed_override;
            cfg = bta::parse_scenario(j.dump());
        }
        const std::string dir = out_dir.empty() ? bta::default_run_dir(cfg) : out_dir;

        if (all_cmd->parsed()) {
            for (const auto& r : bta::run_all(cfg, dir)) {
                std::printf("stage %-9s ok  (%.2fs)\n", r.stage.c_str(), r.seconds);
            }
            std::cout << "run directory: " << dir << "\n";
            return kExitOk;
        }
        for (size_t i = 0; i < bta::kStageOrder.size(); ++i) {
            if (!stage_cmds[i]->parsed()) continue;
            const bta::StageResult r = bta::run_stage(cfg, bta::kStageOrder[i], dir);
            std::printf("stage %-9s ok  (%.2fs)\n", r.stage.c_str(), r.seconds);
            for (const auto& a : r.artifacts) std::cout << "  wrote " << dir << "/" << a << "\n";
            if (bta::kStageOrder[i] == "report") {
                std::cout << bta::consolidated_report(cfg, dir);
            }
            return kExitOk;
        }
        std::cerr << "no stage selected\n";
        return kExitValidation;
    } catch (const bta::ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const bta::DependencyError& e) {
        std::cerr << "dependency error: " << e.what() << "\n";
        return kExitDependency;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}
