#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "cli/commands.hpp"
#include "l2mac/errors.hpp"

namespace fs = std::filesystem;
using namespace l2mac;

namespace {

nlohmann::json read_config_file(const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot read config file " + path.string());
    try
    {
        auto j = nlohmann::json::parse(in);
        if (!j.is_object())
            throw ConfigError("config file " + path.string() + " must hold a JSON object");
        return j;
    }
    catch (const nlohmann::json::parse_error& e)
    {
        throw ConfigError("config file " + path.string() + " is not JSON: " + e.what());
    }
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Automatic code generation with a control unit driving an LLM through a prompt program"};
    app.require_subcommand(1);
    std::string log_level = "info";
    app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

    // run
    auto* run = app.add_subcommand("run", "Generate a codebase for a task");
    cli::RunOptions opts;
    std::string config_path, trace_path, program_path, run_id, out_dir;
    std::size_t budget_c = 0, margin_b = 0, r_max = 0, seeds = 1, jobs = 1;
    std::int64_t seed = 0;
    std::string model;
    run->add_option("--config", config_path, "JSON file with the same keys as the flags; flags win");
    run->add_option("--task", opts.task, "Task prompt file or bundled fixture id (url_shortener, chat, ...)");
    run->add_option("--program", program_path, "JSON {\"steps\": [...]} to use instead of bootstrapping");
    run->add_option("--backend", opts.backend, "mock or wire")->check(CLI::IsMember({"mock", "wire"}));
    run->add_option("--trace", trace_path, "Script or recorded trace replayed by the mock backend");
    run->add_option("--model", model, "Model id sent to the backend");
    run->add_option("--budget-c", budget_c, "Context window budget in tokens");
    run->add_option("--margin-b", margin_b, "Unwind margin in tokens (default budget/2)");
    run->add_option("--r-max", r_max, "Context restarts allowed per instruction");
    run->add_option("--seed", seed, "Seed of the first run");
    run->add_option("--seeds", seeds, "Number of independent runs");
    run->add_option("--jobs", jobs, "Runs executed in parallel");
    run->add_option("--out", out_dir, "Directory receiving run directories");
    run->add_option("--run-id", run_id, "Run directory name (seed suffix added when --seeds > 1)");
    run->add_flag("--debug-wire", opts.debug_wire, "Log provider requests and responses, credentials redacted");

    // replay
    auto* replay = app.add_subcommand("replay", "Re-execute a recorded run and check it reproduces exactly");
    std::string replay_trace;
    replay->add_option("trace", replay_trace, "trace.jsonl of a previous run")->required();

    // eval
    auto* eval = app.add_subcommand("eval", "Compute metrics for a workspace");
    cli::EvalOptions eval_opts;
    std::string eval_workspace, eval_report, judge_script, eval_config;
    eval->add_option("--workspace", eval_workspace, "Workspace directory")->required();
    eval->add_option("--task", eval_opts.task, "Task prompt file or fixture id")->required();
    eval->add_option("--judge", eval_opts.judge, "none, mock or wire")->check(CLI::IsMember({"none", "mock", "wire"}));
    eval->add_option("--judge-script", judge_script, "Script for the mock judge");
    eval->add_option("--model", eval_opts.model_id, "Judge model id");
    eval->add_option("--report", eval_report, "Output path (default: next to the workspace)");
    eval->add_option("--config", eval_config, "JSON file; its \"eval\" object configures checker and tests");
    eval->add_flag("--debug-wire", eval_opts.debug_wire, "Log judge requests and responses");

    // aggregate
    auto* agg = app.add_subcommand("aggregate", "Mean and 95% interval over report.json files");
    std::vector<std::string> agg_inputs;
    std::string agg_out = "aggregate.csv";
    agg->add_option("inputs", agg_inputs, "report.json files or directories holding them")->required();
    agg->add_option("--out", agg_out, "CSV output path");

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError& e)
    {
        const int code = app.exit(e);
        return code == 0 ? 0 : cli::kExitConfig;
    }
    spdlog::set_level(spdlog::level::from_str(log_level));
    spdlog::set_pattern("[%l] %v");

    try
    {
        if (*run)
        {
            nlohmann::json merged = config_path.empty() ? nlohmann::json::object() : read_config_file(config_path);
            auto take = [&](const char* flag, const char* key, const auto& value) {
                if (run->count(flag) > 0)
                    merged[key] = value;
            };
            take("--task", "task", opts.task);
            take("--program", "program", program_path);
            take("--backend", "backend", opts.backend);
            take("--trace", "trace", trace_path);
            take("--model", "model_id", model);
            take("--budget-c", "budget_c", budget_c);
            take("--margin-b", "margin_b", margin_b);
            take("--r-max", "r_max", r_max);
            take("--seed", "seed", seed);
            take("--seeds", "seeds", seeds);
            take("--jobs", "jobs", jobs);
            take("--out", "out", out_dir);
            take("--run-id", "run_id", run_id);
            if (opts.debug_wire)
                merged["debug_wire"] = true;

            try
            {
                merged.get_to(opts.config);
                opts.task = merged.value("task", std::string{});
                opts.backend = merged.value("backend", std::string{"mock"});
                if (merged.contains("program"))
                    opts.program = merged.at("program").get<std::string>();
                if (merged.contains("trace"))
                    opts.trace = merged.at("trace").get<std::string>();
                opts.seeds = merged.value("seeds", std::size_t{1});
                opts.jobs = merged.value("jobs", std::size_t{1});
                opts.out = merged.value("out", std::string{"runs"});
                if (merged.contains("run_id"))
                    opts.run_id = merged.at("run_id").get<std::string>();
                opts.debug_wire = merged.value("debug_wire", false);
            }
            catch (const nlohmann::json::exception& e)
            {
                throw ConfigError(std::string("bad configuration: ") + e.what());
            }
            return cli::cmd_run(opts, std::cout);
        }
        if (*replay)
            return cli::cmd_replay(replay_trace, std::cout);
        if (*eval)
        {
            eval_opts.workspace = eval_workspace;
            if (!eval_report.empty())
                eval_opts.report = eval_report;
            if (!judge_script.empty())
                eval_opts.judge_script = judge_script;
            if (!eval_config.empty())
            {
                const auto j = read_config_file(eval_config);
                if (j.contains("eval"))
                    j.at("eval").get_to(eval_opts.eval);
            }
            return cli::cmd_eval(eval_opts, std::cout);
        }
        if (*agg)
        {
            std::vector<fs::path> inputs(agg_inputs.begin(), agg_inputs.end());
            return cli::cmd_aggregate(inputs, agg_out, std::cout);
        }
    }
    catch (const ConfigError& e)
    {
        std::cerr << "error: " << e.what() << '\n';
        return cli::kExitConfig;
    }
    return cli::kExitConfig;
}
