#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "l2mac/errors.hpp"
#include "l2mac/llm_backend.hpp"
#include "test_support.hpp"

using namespace l2mac;
using namespace l2mac::testing;

namespace {

const QuarterCharTokenizer tk;

CompletionRequest request_of(std::vector<Message> messages, std::vector<ToolSchema> tools = {})
{
    return CompletionRequest{std::move(messages), std::move(tools), 0.11, "gpt-4-0613", 0};
}

/// Local chat-completions stand-in answering from a queue of (status, body).
class FakeProvider
{
public:
    explicit FakeProvider(std::vector<std::pair<int, std::string>> replies) : replies_(std::move(replies))
    {
        server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            const auto i = hits.fetch_add(1);
            last_body = req.body;
            last_auth = req.get_header_value("Authorization");
            const auto& [status, body] = replies_[std::min<std::size_t>(i, replies_.size() - 1)];
            res.status = status;
            res.set_content(body, "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~FakeProvider()
    {
        server_.stop();
        thread_.join();
    }

    ChatClientConfig client_config() const
    {
        ChatClientConfig c;
        c.base_url = "http://127.0.0.1:" + std::to_string(port_);
        c.api_key = "sk-test-secret";
        c.max_attempts = 3;
        c.initial_backoff = std::chrono::milliseconds(5);
        c.timeout = std::chrono::seconds(10);
        return c;
    }

    std::atomic<std::size_t> hits{0};
    std::string last_body;
    std::string last_auth;

private:
    std::vector<std::pair<int, std::string>> replies_;
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

const std::string kOkToolCall = R"({"choices":[{"message":{"role":"assistant","content":null,"tool_calls":[)"
                                R"({"id":"x","type":"function","function":{"name":"view_files","arguments":"{\"files\": [\"a.py\"]}"}}]}}]})";

class EnvGuard
{
public:
    explicit EnvGuard(const char* name) : name_(name)
    {
        if (const char* v = std::getenv(name))
            saved_ = v;
    }
    ~EnvGuard()
    {
        if (saved_)
            ::setenv(name_, saved_->c_str(), 1);
        else
            ::unsetenv(name_);
    }

private:
    const char* name_;
    std::optional<std::string> saved_;
};

} // namespace

TEST_SUITE("llm_backend")
{
    TEST_CASE("scripted backend replays in order and then runs dry")
    {
        ScriptedBackend backend({{"first", std::nullopt, std::nullopt}, {"", ToolCallPayload{"view_files", "{}"}, std::nullopt}});
        const auto req = request_of({make_message(MessageKind::User, "hi", tk)});
        const auto a = backend.complete(req);
        CHECK(a.kind == MessageKind::LlmResponse);
        CHECK(a.content == "first");
        CHECK(a.token_count == 2);
        const auto b = backend.complete(req);
        CHECK(b.tool_call->name == "view_files");
        CHECK(backend.remaining() == 0);
        CHECK_THROWS_AS(backend.complete(req), ScriptExhausted);
        CHECK(backend.requests().size() == 3);
    }

    TEST_CASE("scripted expectations pin dialog positions")
    {
        ScriptedBackend backend({{"ok", std::nullopt, std::string("needle")}});
        const auto reply = make_message(MessageKind::LlmResponse, "needle in an old answer", tk);
        // Only messages added since the last response count.
        CHECK_THROWS_AS(backend.complete(request_of({make_message(MessageKind::User, "needle", tk), reply,
                                                     make_message(MessageKind::Control, "haystack", tk)})),
                        ScriptMismatch);

        ScriptedBackend again({{"ok", std::nullopt, std::string("needle")}});
        CHECK(again.complete(request_of({reply, make_message(MessageKind::FunctionResponse, "a needle", tk),
                                         make_message(MessageKind::Control, "cycle", tk)}))
                  .content == "ok");
    }

    TEST_CASE("script parsing accepts scripts and traces")
    {
        const auto entries = ScriptedBackend::parse_script(
            R"({"content": "a"})"
            "\n\n"
            R"({"content": "", "tool_call": {"name": "write_files", "arguments": {"files_and_contents": []}}, "expect": "x"})"
            "\n");
        REQUIRE(entries.size() == 2);
        CHECK(entries[1].tool_call->arguments == R"({"files_and_contents":[]})");
        CHECK(entries[1].expect == "x");
        CHECK_THROWS(ScriptedBackend::parse_script("{not json"));
        CHECK_THROWS_AS(ScriptedBackend::from_file("/nonexistent/script.jsonl"), ConfigError);

        // A recorded trace replays only its responses.
        RunTrace trace;
        TraceEvent start;
        start.event_type = "run_start";
        trace.record(start);
        TraceEvent response;
        response.event_type = "llm_response";
        response.message = make_message(MessageKind::LlmResponse, "from trace", tk);
        trace.record(response);
        std::string text;
        for (const auto& line : trace.lines())
            text += line + "\n";
        const auto replayed = ScriptedBackend::parse_script(text);
        REQUIRE(replayed.size() == 1);
        CHECK(replayed[0].content == "from trace");
    }

    TEST_CASE("wire request body")
    {
        std::vector<Message> messages{
            make_message(MessageKind::System, "sys", tk),
            make_message(MessageKind::User, "task", tk),
            make_message(MessageKind::LlmResponse, "", tk, ToolCallPayload{"view_files", "{\"files\": []}"}),
            make_message(MessageKind::FunctionResponse, "result", tk),
            make_message(MessageKind::FunctionResponse, "feedback", tk),
            make_message(MessageKind::Control, "cycle", tk),
        };
        const auto* view = find_schema(code_tool_schemas(), tools::kViewFiles);
        const auto body = ChatCompletionClient::build_request_body(request_of(messages, {*view}));
        CHECK(body.at("model") == "gpt-4-0613");
        CHECK(body.at("temperature").get<double>() == 0.11);
        CHECK(body.at("seed") == 0);
        const auto& m = body.at("messages");
        REQUIRE(m.size() == 6);
        CHECK(m[0] == nlohmann::ordered_json{{"role", "system"}, {"content", "sys"}});
        CHECK(m[2].at("content").is_null());
        CHECK(m[2].at("tool_calls")[0].at("id") == "call_2");
        CHECK(m[2].at("tool_calls")[0].at("function").at("arguments") == "{\"files\": []}");
        CHECK(m[3].at("role") == "tool");
        CHECK(m[3].at("tool_call_id") == "call_2");
        CHECK(m[4].at("role") == "user");
        CHECK(m[5].at("role") == "user");
        CHECK(body.at("tools")[0].at("type") == "function");
        CHECK(body.at("tools")[0].at("function") == to_wire_json(*view));
        CHECK(body.dump().find("\"temperature\":0.11") != std::string::npos);

        const auto no_tools = ChatCompletionClient::build_request_body(request_of({messages[0]}));
        CHECK_FALSE(no_tools.contains("tools"));
    }

    TEST_CASE("wire response parsing")
    {
        auto m = ChatCompletionClient::parse_response_body(nlohmann::json::parse(kOkToolCall), tk);
        CHECK(m.content.empty());
        CHECK(m.tool_call == ToolCallPayload{"view_files", "{\"files\": [\"a.py\"]}"});

        m = ChatCompletionClient::parse_response_body(
            nlohmann::json::parse(R"({"choices":[{"message":{"content":"hi","function_call":{"name":"f","arguments":"{}"}}}]})"),
            tk);
        CHECK(m.content == "hi");
        CHECK(m.tool_call->name == "f");

        CHECK_THROWS_AS(ChatCompletionClient::parse_response_body(nlohmann::json::parse(R"({"choices":[]})"), tk),
                        TransportError);
    }

    TEST_CASE("a missing key names the variable")
    {
        EnvGuard guard(kApiKeyEnv);
        ::unsetenv(kApiKeyEnv);
        try
        {
            ChatCompletionClient::config_from_env();
            FAIL("expected a configuration error");
        }
        catch (const ConfigError& e)
        {
            CHECK(std::string(e.what()).find("OPENAI_API_KEY") != std::string::npos);
        }
        CHECK_THROWS_AS(ChatCompletionClient(ChatClientConfig{}), ConfigError);
    }

    TEST_CASE("base URL from the environment")
    {
        EnvGuard key(kApiKeyEnv);
        EnvGuard base(kBaseUrlEnv);
        ::setenv(kApiKeyEnv, "k", 1);
        ::setenv(kBaseUrlEnv, "http://localhost:9999/v1/", 1);
        CHECK(ChatCompletionClient::config_from_env().base_url == "http://localhost:9999/v1");
        ::setenv(kBaseUrlEnv, "http://localhost:9999/v1", 1);
        CHECK(ChatCompletionClient::config_from_env().base_url == "http://localhost:9999");
    }

    TEST_CASE("round trip through a local provider")
    {
        FakeProvider provider({{200, kOkToolCall}});
        ChatCompletionClient client(provider.client_config());
        const auto m = client.complete(request_of({make_message(MessageKind::User, "hi", tk)}));
        CHECK(m.tool_call->name == "view_files");
        CHECK(provider.last_auth == "Bearer sk-test-secret");
        CHECK(nlohmann::json::parse(provider.last_body).at("messages")[0].at("content") == "hi");
    }

    TEST_CASE("rate limits and server errors are retried")
    {
        FakeProvider provider({{429, "{}"}, {503, "{}"}, {200, kOkToolCall}});
        ChatCompletionClient client(provider.client_config());
        CHECK(client.complete(request_of({make_message(MessageKind::User, "hi", tk)})).tool_call);
        CHECK(provider.hits == 3);
    }

    TEST_CASE("persistent rate limiting gives up")
    {
        FakeProvider provider({{429, R"({"error":"slow down"})"}});
        ChatCompletionClient client(provider.client_config());
        CHECK_THROWS_AS(client.complete(request_of({make_message(MessageKind::User, "hi", tk)})), RateLimited);
        CHECK(provider.hits == 3);
    }

    TEST_CASE("context-length rejection is fatal")
    {
        FakeProvider provider({{400, R"({"error":{"code":"context_length_exceeded","message":"maximum context length is 8192"}})"}});
        ChatCompletionClient client(provider.client_config());
        CHECK_THROWS_AS(client.complete(request_of({make_message(MessageKind::User, "hi", tk)})),
                        ContextRejectedByProvider);
        CHECK(provider.hits == 1);
    }

    TEST_CASE("other client errors are not retried and never leak the key")
    {
        FakeProvider provider({{401, R"({"error":"bad key sk-test-secret"})"}});
        ChatCompletionClient client(provider.client_config());
        try
        {
            client.complete(request_of({make_message(MessageKind::User, "hi", tk)}));
            FAIL("expected a transport error");
        }
        catch (const TransportError& e)
        {
            CHECK(std::string(e.what()).find("sk-test-secret") == std::string::npos);
            CHECK(std::string(e.what()).find("401") != std::string::npos);
        }
        CHECK(provider.hits == 1);
    }

    TEST_CASE("unreachable provider")
    {
        ChatClientConfig config;
        config.base_url = "http://127.0.0.1:1";
        config.api_key = "k";
        config.max_attempts = 2;
        config.initial_backoff = std::chrono::milliseconds(1);
        ChatCompletionClient client(config);
        CHECK_THROWS_AS(client.complete(request_of({make_message(MessageKind::User, "hi", tk)})), TransportError);
    }
}
