#include <benchmark/benchmark.h>

#include <fstream>
#include <sstream>

#include <spdlog/spdlog.h>

#include "l2mac/control_unit.hpp"

using namespace l2mac;

namespace {

/// Evaluator that accepts everything, so only control-unit work is timed.
class CleanEvaluator final : public Evaluator
{
public:
    EvaluatorReport evaluate(const FileStore&) override { return {}; }
};

std::vector<ScriptedEntry> load(const std::string& name)
{
    std::ifstream in(std::string(L2MAC_GOLDEN_DIR) + "/" + name);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ScriptedBackend::parse_script(ss.str());
}

void run_once(const std::vector<ScriptedEntry>& script, const RunConfig& config)
{
    ScriptedBackend backend(script);
    FileStore store(backend.tokenizer());
    ProcessRunner runner({"python3"});
    RunTrace trace;
    CleanEvaluator evaluator;
    ControlUnit cu(config, backend, store, evaluator, runner, trace);
    benchmark::DoNotOptimize(cu.run("", std::nullopt));
}

void BM_MinimalRun(benchmark::State& state)
{
    spdlog::set_level(spdlog::level::off);
    const auto script = load("minimal_step.script.jsonl");
    for (auto _ : state)
        run_once(script, RunConfig{});
}

void BM_PerpetualOverflowRun(benchmark::State& state)
{
    spdlog::set_level(spdlog::level::off);
    const auto script = load("perpetual_overflow.script.jsonl");
    RunConfig config;
    config.budget_c = 2000;
    config.margin_b = 1000;
    for (auto _ : state)
        run_once(script, config);
}

} // namespace

BENCHMARK(BM_MinimalRun)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_PerpetualOverflowRun)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
