#include "l2mac/trace.hpp"

#include <sstream>

#include "l2mac/digest.hpp"
#include "l2mac/errors.hpp"

namespace l2mac {

namespace {

constexpr std::string_view kEndOfTrace = "<end of trace>";

nlohmann::ordered_json body_json(const TraceEvent& e)
{
    nlohmann::ordered_json j;
    j["turn"] = e.turn;
    j["phase"] = e.phase;
    j["event_type"] = e.event_type;
    if (e.message)
    {
        nlohmann::json m = *e.message;
        j["message"] = nlohmann::ordered_json::parse(m.dump());
    }
    if (e.tool_call)
        j["tool_call"] = {{"name", e.tool_call->name}, {"arguments", e.tool_call->arguments}};
    if (e.evaluator_report)
    {
        nlohmann::json r = *e.evaluator_report;
        j["evaluator_report"] = nlohmann::ordered_json::parse(r.dump());
    }
    j["temperature"] = e.temperature;
    j["retries"] = e.retries;
    j["token_total"] = e.token_total;
    if (e.detail)
        j["detail"] = nlohmann::ordered_json::parse(e.detail->dump());
    return j;
}

std::string dump(const nlohmann::ordered_json& j)
{
    return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

std::string link(const std::string& previous, const TraceEvent& e)
{
    return sha256_hex(previous + canonical_body(e));
}

} // namespace

std::string canonical_body(const TraceEvent& event)
{
    return dump(body_json(event));
}

std::string to_line(const TraceEvent& event)
{
    auto j = body_json(event);
    j["digest"] = event.digest;
    return dump(j);
}

TraceEvent parse_event_line(std::string_view line)
{
    try
    {
        const auto j = nlohmann::json::parse(line);
        TraceEvent e;
        e.turn = j.at("turn").get<std::size_t>();
        e.phase = j.at("phase").get<std::string>();
        e.event_type = j.at("event_type").get<std::string>();
        if (j.contains("message"))
            e.message = j.at("message").get<Message>();
        if (j.contains("tool_call"))
            e.tool_call = j.at("tool_call").get<ToolCallPayload>();
        if (j.contains("evaluator_report"))
            e.evaluator_report = j.at("evaluator_report").get<EvaluatorReport>();
        e.temperature = j.at("temperature").get<double>();
        e.retries = j.at("retries").get<std::size_t>();
        e.token_total = j.at("token_total").get<std::size_t>();
        if (j.contains("detail"))
            e.detail = j.at("detail");
        e.digest = j.value("digest", std::string{});
        return e;
    }
    catch (const nlohmann::json::exception& ex)
    {
        throw TraceFormatError(std::string("bad trace event: ") + ex.what());
    }
}

RunTrace::RunTrace(const std::filesystem::path& sink)
{
    sink_.emplace(sink, std::ios::binary | std::ios::trunc);
    if (!*sink_)
        throw ConfigError("cannot write trace: " + sink.string());
}

const TraceEvent& RunTrace::record(TraceEvent event)
{
    event.digest = link(last_digest_, event);
    last_digest_ = event.digest;
    events_.push_back(std::move(event));
    if (sink_)
    {
        *sink_ << to_line(events_.back()) << '\n';
        sink_->flush();
    }
    if (observer_)
        observer_(events_.back());
    return events_.back();
}

std::vector<std::string> RunTrace::lines() const
{
    std::vector<std::string> out;
    out.reserve(events_.size());
    for (const auto& e : events_)
        out.push_back(to_line(e));
    return out;
}

void RunTrace::write(const std::filesystem::path& path) const
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw ConfigError("cannot write trace: " + path.string());
    for (const auto& line : lines())
        out << line << '\n';
}

RunTrace::Loaded RunTrace::parse(std::string_view jsonl)
{
    Loaded loaded;
    std::istringstream in{std::string(jsonl)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line))
    {
        ++line_no;
        if (line.empty())
            continue;
        try
        {
            loaded.events.push_back(parse_event_line(line));
        }
        catch (const TraceFormatError& e)
        {
            loaded.complete = false;
            loaded.problem = "line " + std::to_string(line_no) + ": " + e.what();
            break;
        }
    }
    return loaded;
}

RunTrace::Loaded RunTrace::load(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ConfigError("cannot open trace: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

std::optional<std::size_t> RunTrace::first_broken_link(const std::vector<TraceEvent>& events)
{
    std::string previous;
    for (std::size_t i = 0; i < events.size(); ++i)
    {
        const auto expected = link(previous, events[i]);
        if (expected != events[i].digest)
            return i;
        previous = expected;
    }
    return std::nullopt;
}

std::optional<Divergence> compare_traces(const std::vector<TraceEvent>& expected, const std::vector<TraceEvent>& actual)
{
    const auto n = std::max(expected.size(), actual.size());
    for (std::size_t i = 0; i < n; ++i)
    {
        const auto want = i < expected.size() ? to_line(expected[i]) : std::string(kEndOfTrace);
        const auto got = i < actual.size() ? to_line(actual[i]) : std::string(kEndOfTrace);
        if (want != got)
        {
            const auto turn = i < actual.size() ? actual[i].turn : expected[i].turn;
            return Divergence{i, turn, want, got};
        }
    }
    return std::nullopt;
}

} // namespace l2mac
