#include <doctest.h>

#include <random>

#include "l2mac/errors.hpp"
#include "l2mac/messages.hpp"

using namespace l2mac;

namespace {

const QuarterCharTokenizer tk;

/// Message with an exact token count: 4 bytes per token.
Message sized(MessageKind kind, std::size_t tokens, char fill = 'x')
{
    return make_message(kind, std::string(tokens * 4, fill), tk);
}

ContextWindow window_of(std::size_t c, std::size_t b, std::initializer_list<Message> messages)
{
    ContextWindow w(c, b);
    for (const auto& m : messages)
        w.push_back(m);
    return w;
}

} // namespace

TEST_SUITE("messages")
{
    TEST_CASE("quarter-char tokenizer")
    {
        CHECK(tk.count("") == 0);
        CHECK(tk.count("abcdefgh") == 2);
        CHECK(tk.count("a") == 1);
        CHECK(tk.count("abcde") == 2);
        // Bytes, not code points: "é" is two bytes.
        CHECK(tk.count("\xc3\xa9") == 1);
    }

    TEST_CASE("token_length sums window and buffer")
    {
        ContextWindow empty(100, 50);
        CHECK(token_length(empty, MessageBuffer{}) == 0);

        auto w = window_of(100, 50, {sized(MessageKind::System, 10), sized(MessageKind::User, 22)});
        MessageBuffer buffer;
        buffer.push(sized(MessageKind::LlmResponse, 5));
        CHECK(token_length(w, buffer) == 37);
    }

    TEST_CASE("token counts match an independent per-message recount")
    {
        // Oracle: ceil(len/4) computed with integer arithmetic on the raw
        // byte lengths, independent of the tokenizer implementation.
        const std::vector<std::string> texts{"", "a", "abcd", "abcde", "def test_x():\n\tassert 1\n",
                                             std::string(8191, 'q'), "\xe2\x9c\x93 done"};
        std::size_t expected = 0;
        MessageBuffer buffer;
        for (const auto& t : texts)
        {
            expected += t.size() / 4 + (t.size() % 4 != 0 ? 1 : 0);
            buffer.push(make_message(MessageKind::User, t, tk));
        }
        CHECK(buffer.token_total() == expected);
        CHECK(expected == 0 + 1 + 1 + 2 + 6 + 2048 + 2);
    }

    TEST_CASE("tool call text is counted")
    {
        auto m = make_message(MessageKind::LlmResponse, "", tk, ToolCallPayload{"view_files", "{\"files\": []}"});
        CHECK(m.counted_text() == "view_files{\"files\": []}");
        CHECK(m.token_count == tk.count(m.counted_text()));
    }

    TEST_CASE("tool calls only on LLM responses")
    {
        CHECK_THROWS_AS(make_message(MessageKind::User, "x", tk, ToolCallPayload{"a", "{}"}), std::invalid_argument);
        CHECK_NOTHROW(make_message(MessageKind::LlmResponse, "x", tk, ToolCallPayload{"a", "{}"}));
    }

    TEST_CASE("would_exceed boundary is inclusive")
    {
        auto at_budget = window_of(8192, 4096, {sized(MessageKind::System, 8192)});
        CHECK_FALSE(would_exceed(at_budget, MessageBuffer{}));

        auto window = window_of(8192, 4096, {sized(MessageKind::System, 8192)});
        MessageBuffer one;
        one.push(sized(MessageKind::User, 1));
        CHECK(would_exceed(window, one));
    }

    TEST_CASE("would_exceed on an empty window")
    {
        ContextWindow w(2, 1);
        CHECK_FALSE(would_exceed(w, MessageBuffer{}));
    }

    TEST_CASE("window validates its margin")
    {
        CHECK_THROWS_AS(ContextWindow(100, 0), std::invalid_argument);
        CHECK_THROWS_AS(ContextWindow(100, 100), std::invalid_argument);
        CHECK_THROWS_AS(ContextWindow(0, 0), std::invalid_argument);
        CHECK_NOTHROW(ContextWindow(100, 99));
    }

    TEST_CASE("unwind_to_margin")
    {
        SUBCASE("already within margin is unchanged")
        {
            auto w = window_of(1000, 500, {sized(MessageKind::System, 100), sized(MessageKind::User, 100)});
            auto out = unwind_to_margin(w);
            CHECK(out.messages() == w.messages());
        }
        SUBCASE("drops the oldest non-system messages")
        {
            const auto sys = sized(MessageKind::System, 50, 's');
            const auto a = sized(MessageKind::User, 100, 'a');
            const auto b = sized(MessageKind::LlmResponse, 100, 'b');
            const auto c = sized(MessageKind::FunctionResponse, 100, 'c');
            auto out = unwind_to_margin(window_of(1000, 260, {sys, a, b, c}));
            REQUIRE(out.size() == 3);
            CHECK(out.messages()[0] == sys);
            CHECK(out.messages()[1] == b);
            CHECK(out.messages()[2] == c);
            CHECK(out.token_total() == 250);
        }
        SUBCASE("a pinned system message over the margin cannot be unwound")
        {
            CHECK_THROWS_AS(unwind_to_margin(window_of(1000, 200, {sized(MessageKind::System, 300)})), UnwindImpossible);
        }
    }

    TEST_CASE("unwinding keeps a suffix in order (randomized)")
    {
        std::mt19937 rng(7);
        for (int round = 0; round < 500; ++round)
        {
            const std::size_t c = 2000;
            const std::size_t b = 1 + rng() % (c - 1);
            ContextWindow w(c, b);
            const auto sys_tokens = rng() % 100;
            w.push_back(sized(MessageKind::System, sys_tokens, 's'));
            const auto n = rng() % 20;
            for (std::size_t i = 0; i < n; ++i)
                w.push_back(sized(MessageKind::User, rng() % 200, static_cast<char>('a' + i % 26)));
            if (sys_tokens > b)
            {
                CHECK_THROWS_AS(unwind_to_margin(w), UnwindImpossible);
                continue;
            }
            const auto out = unwind_to_margin(w);
            CHECK(out.token_total() <= b);
            REQUIRE(out.size() >= 1);
            CHECK(out.messages()[0] == w.messages()[0]);
            // Survivors are exactly the tail of the original.
            const auto removed = w.size() - out.size();
            for (std::size_t i = 1; i < out.size(); ++i)
                CHECK(out.messages()[i] == w.messages()[i + removed]);
            // Minimality: keeping one more message would break the margin.
            if (removed > 0)
                CHECK(out.token_total() + w.messages()[removed].token_count > b);
        }
    }

    TEST_CASE("would_exceed is monotone under appends")
    {
        std::mt19937 rng(11);
        for (int round = 0; round < 200; ++round)
        {
            ContextWindow w(500, 250);
            w.push_back(sized(MessageKind::System, rng() % 300));
            MessageBuffer buffer;
            bool exceeded = would_exceed(w, buffer);
            for (int i = 0; i < 10; ++i)
            {
                buffer.push(sized(MessageKind::User, rng() % 80));
                const bool now = would_exceed(w, buffer);
                CHECK((!exceeded || now));
                exceeded = now;
            }
        }
    }

    TEST_CASE("message JSON round-trips for every kind")
    {
        for (auto kind : {MessageKind::System, MessageKind::User, MessageKind::LlmResponse, MessageKind::FunctionResponse,
                          MessageKind::Control})
        {
            std::optional<ToolCallPayload> call;
            if (kind == MessageKind::LlmResponse)
                call = ToolCallPayload{"write_files", "{\"files_and_contents\": [] }"};
            auto m = make_message(kind, "line one\nline \"two\" \xe2\x9c\x93", tk, call);
            nlohmann::json j = m;
            auto back = nlohmann::json::parse(j.dump()).get<Message>();
            CHECK(back == m);
            CHECK(message_kind_from_string(to_string(kind)) == kind);
        }
    }
}
