#include <benchmark/benchmark.h>

#include <random>

#include "l2mac/file_store.hpp"
#include "l2mac/messages.hpp"

using namespace l2mac;

namespace {

const QuarterCharTokenizer tk;

FileStore populated(std::size_t files)
{
    FileStore store(tk);
    std::mt19937 rng(7);
    for (std::size_t i = 0; i < files; ++i)
    {
        std::string path;
        for (std::size_t depth = rng() % 4; depth > 0; --depth)
            path += "d" + std::to_string(rng() % 5) + "/";
        path += "f" + std::to_string(i) + ".py";
        store.put(path, "x = " + std::to_string(i) + "\n");
    }
    return store;
}

void BM_ListFiles(benchmark::State& state)
{
    const auto store = populated(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state)
        benchmark::DoNotOptimize(store.list_files());
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_ContentHash(benchmark::State& state)
{
    const auto store = populated(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state)
        benchmark::DoNotOptimize(store.content_hash());
}

void BM_ViewAll(benchmark::State& state)
{
    const auto store = populated(static_cast<std::size_t>(state.range(0)));
    const auto files = store.list_files();
    for (auto _ : state)
        benchmark::DoNotOptimize(store.view_files(files));
}

} // namespace

BENCHMARK(BM_ListFiles)->Range(16, 4096);
BENCHMARK(BM_ContentHash)->Range(16, 4096);
BENCHMARK(BM_ViewAll)->Range(16, 1024);
BENCHMARK_MAIN();
