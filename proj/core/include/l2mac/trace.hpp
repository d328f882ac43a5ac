#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "l2mac/evaluator.hpp"
#include "l2mac/messages.hpp"

namespace l2mac {

/// One control-unit transition. `turn` counts LLM calls made so far.
struct TraceEvent
{
    std::size_t turn = 0;
    std::string phase;
    std::string event_type;
    std::optional<Message> message;
    std::optional<ToolCallPayload> tool_call;
    std::optional<EvaluatorReport> evaluator_report;
    double temperature = 0.0;
    std::size_t retries = 0;
    std::size_t token_total = 0;
    std::optional<nlohmann::json> detail;
    /// sha256(previous digest + this event without its digest).
    std::string digest;
};

/// Serialized line body (without digest) used for hashing.
std::string canonical_body(const TraceEvent& event);

/// Full JSONL line, digest included, no trailing newline.
std::string to_line(const TraceEvent& event);

/// Throws TraceFormatError on malformed input.
TraceEvent parse_event_line(std::string_view line);

/// Append-only event log. Optionally streams every event to a JSONL file as
/// it is recorded, so a crashed run still leaves its trace behind.
class RunTrace
{
public:
    RunTrace() = default;
    explicit RunTrace(const std::filesystem::path& sink);

    /// Chains the digest and stores the event.
    const TraceEvent& record(TraceEvent event);

    /// Called with each event after it is stored. Exceptions propagate to the
    /// caller of record().
    void set_observer(std::function<void(const TraceEvent&)> observer) { observer_ = std::move(observer); }

    const std::vector<TraceEvent>& events() const noexcept { return events_; }
    std::vector<std::string> lines() const;

    void write(const std::filesystem::path& path) const;

    /// Lines that fail to parse end the load; `complete` reports whether the
    /// whole file was read.
    struct Loaded
    {
        std::vector<TraceEvent> events;
        bool complete = true;
        std::string problem;
    };
    static Loaded load(const std::filesystem::path& path);
    static Loaded parse(std::string_view jsonl);

    /// Index of the first event whose digest does not match its content.
    static std::optional<std::size_t> first_broken_link(const std::vector<TraceEvent>& events);

private:
    std::vector<TraceEvent> events_;
    std::string last_digest_;
    std::optional<std::ofstream> sink_;
    std::function<void(const TraceEvent&)> observer_;
};

struct Divergence
{
    std::size_t index = 0; // event position
    std::size_t turn = 0;
    std::string expected; // line from the reference trace, or "<end of trace>"
    std::string actual;
};

/// First event at which `actual` differs byte-for-byte from `expected`.
std::optional<Divergence> compare_traces(const std::vector<TraceEvent>& expected, const std::vector<TraceEvent>& actual);

} // namespace l2mac
