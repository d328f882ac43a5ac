#include <benchmark/benchmark.h>

#include "l2mac/messages.hpp"

using namespace l2mac;

namespace {

const QuarterCharTokenizer tk;

ContextWindow filled_window(std::size_t messages)
{
    ContextWindow window(messages * 100 + 1000, messages * 50 + 100);
    window.push_back(make_message(MessageKind::System, std::string(400, 's'), tk));
    for (std::size_t i = 0; i < messages; ++i)
        window.push_back(make_message(i % 2 ? MessageKind::LlmResponse : MessageKind::FunctionResponse,
                                      std::string(200 + (i * 37) % 300, 'x'), tk));
    return window;
}

void BM_TokenLength(benchmark::State& state)
{
    const auto window = filled_window(static_cast<std::size_t>(state.range(0)));
    MessageBuffer buffer;
    buffer.push(make_message(MessageKind::Control, std::string(800, 'c'), tk));
    for (auto _ : state)
        benchmark::DoNotOptimize(token_length(window, buffer));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_MakeMessage(benchmark::State& state)
{
    const std::string text(static_cast<std::size_t>(state.range(0)), 'q');
    for (auto _ : state)
        benchmark::DoNotOptimize(make_message(MessageKind::FunctionResponse, text, tk));
    state.SetBytesProcessed(state.iterations() * state.range(0));
}

void BM_UnwindToMargin(benchmark::State& state)
{
    const auto window = filled_window(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state)
        benchmark::DoNotOptimize(unwind_to_margin(window));
}

} // namespace

BENCHMARK(BM_TokenLength)->Range(8, 512);
BENCHMARK(BM_MakeMessage)->Range(64, 1 << 16);
BENCHMARK(BM_UnwindToMargin)->Range(8, 512);
BENCHMARK_MAIN();
