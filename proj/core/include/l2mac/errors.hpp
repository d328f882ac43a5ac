#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace l2mac {

/// Base of every error raised by the library. Tool-level problems the LLM can
/// correct never surface as exceptions; they are rendered into function
/// responses instead.
class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

class UnwindImpossible : public Error
{
public:
    using Error::Error;
};

class MalformedToolCall : public Error
{
public:
    using Error::Error;
};

class EmptyProgram : public Error
{
public:
    using Error::Error;
};

class ProgramExhausted : public Error
{
public:
    using Error::Error;
};

class PathViolation : public Error
{
public:
    using Error::Error;
};

class FileTooLarge : public Error
{
public:
    using Error::Error;
};

class InvalidContent : public Error
{
public:
    using Error::Error;
};

class UnknownTool : public Error
{
public:
    using Error::Error;
};

class MalformedArguments : public Error
{
public:
    using Error::Error;
};

class EvaluatorUnavailable : public Error
{
public:
    using Error::Error;
};

class RetriesExhausted : public Error
{
public:
    using Error::Error;
};

class BootstrapFailed : public Error
{
public:
    using Error::Error;
};

class ConfigError : public Error
{
public:
    using Error::Error;
};

class TransportError : public Error
{
public:
    using Error::Error;
};

class RateLimited : public Error
{
public:
    using Error::Error;
};

class ContextRejectedByProvider : public Error
{
public:
    using Error::Error;
};

/// A scripted backend was asked for more responses than it holds, or a
/// response's request predicate did not match.
class ScriptExhausted : public Error
{
public:
    using Error::Error;
};

class ScriptMismatch : public Error
{
public:
    using Error::Error;
};

class JudgeParseFailure : public Error
{
public:
    using Error::Error;
};

class TraceFormatError : public Error
{
public:
    using Error::Error;
};

} // namespace l2mac
