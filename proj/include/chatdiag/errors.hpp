#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace chatdiag {

// Root of every error the library throws. Callers that only need a message
// can catch this; the CLI and the HTTP service switch on the concrete type.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed input text (JSON syntax, timestamps, numbers).
class ParseError : public Error {
public:
    explicit ParseError(const std::string& what, std::size_t line = 0)
        : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

// Well-formed input that violates a domain invariant.
class ValidationError : public Error {
public:
    ValidationError(std::string subject, std::string field, const std::string& what,
                    std::size_t line = 0)
        : Error(format(subject, field, what, line)),
          subject_(std::move(subject)),
          field_(std::move(field)),
          line_(line) {}

    const std::string& subject() const noexcept { return subject_; }
    const std::string& field() const noexcept { return field_; }
    std::size_t line() const noexcept { return line_; }

private:
    static std::string format(const std::string& subject, const std::string& field,
                              const std::string& what, std::size_t line) {
        std::string out;
        if (line) out += "line " + std::to_string(line) + ": ";
        if (!subject.empty()) out += subject + ": ";
        if (!field.empty()) out += field + ": ";
        return out + what;
    }

    std::string subject_;
    std::string field_;
    std::size_t line_;
};

// Inconsistent knobs or missing resources, detected before any work starts.
class ConfigError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    IoError(std::string path, const std::string& what)
        : Error(path + ": " + what), path_(std::move(path)) {}
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

// Prompt exceeds the token budget; carries how far over it is.
class BudgetError : public Error {
public:
    BudgetError(long estimated, long budget)
        : Error("prompt estimate " + std::to_string(estimated) + " tokens exceeds budget " +
                std::to_string(budget) + " by " + std::to_string(estimated - budget)),
          estimated_(estimated),
          budget_(budget) {}
    long overflow() const noexcept { return estimated_ - budget_; }
    long estimated() const noexcept { return estimated_; }
    long budget() const noexcept { return budget_; }

private:
    long estimated_;
    long budget_;
};

class ScorerError : public Error {
public:
    using Error::Error;
};

class DescriptorError : public Error {
public:
    using Error::Error;
};

enum class GatewayErrorKind { Unscripted, Auth, RateLimited, Timeout, Transport, BadResponse };

inline const char* to_string(GatewayErrorKind kind) {
    switch (kind) {
    case GatewayErrorKind::Unscripted: return "unscripted";
    case GatewayErrorKind::Auth: return "auth";
    case GatewayErrorKind::RateLimited: return "rate_limited";
    case GatewayErrorKind::Timeout: return "timeout";
    case GatewayErrorKind::Transport: return "transport";
    case GatewayErrorKind::BadResponse: return "bad_response";
    }
    return "unknown";
}

class GatewayError : public Error {
public:
    GatewayError(GatewayErrorKind kind, const std::string& what, std::string prompt_digest = {})
        : Error(std::string(to_string(kind)) + ": " + what),
          kind_(kind),
          prompt_digest_(std::move(prompt_digest)) {}
    GatewayErrorKind kind() const noexcept { return kind_; }
    const std::string& prompt_digest() const noexcept { return prompt_digest_; }

private:
    GatewayErrorKind kind_;
    std::string prompt_digest_;
};

// The model replied, but no verdict could be read out of it.
class UnparseableOutput : public Error {
public:
    explicit UnparseableOutput(std::string raw)
        : Error("unparseable model output"), raw_(std::move(raw)) {}
    const std::string& raw() const noexcept { return raw_; }

private:
    std::string raw_;
};

// Operation not allowed in the session's current state.
class StateError : public Error {
public:
    using Error::Error;
};

}  // namespace chatdiag
