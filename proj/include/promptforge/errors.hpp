#pragma once

#include <stdexcept>
#include <string>

namespace promptforge {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// llm
class BackendError : public Error {
public:
    BackendError(const std::string& what, int http_status = 0, std::string body_excerpt = {})
        : Error(what), http_status_(http_status), body_excerpt_(std::move(body_excerpt)) {}
    int http_status() const noexcept { return http_status_; }
    const std::string& body_excerpt() const noexcept { return body_excerpt_; }

private:
    int http_status_;
    std::string body_excerpt_;
};

class MalformedResponse : public Error {
public:
    using Error::Error;
};

// task
class InvalidStrategy : public Error {
public:
    using Error::Error;
};

class JudgeParseFailure : public Error {
public:
    using Error::Error;
};

// optimizers
class BudgetExhausted : public Error {
public:
    using Error::Error;
};

class NoCandidates : public Error {
public:
    using Error::Error;
};

class PopulationTooSmall : public Error {
public:
    using Error::Error;
};

class InsufficientExemplars : public Error {
public:
    using Error::Error;
};

class DuplicateName : public Error {
public:
    using Error::Error;
};

// support
class KTooLarge : public Error {
public:
    using Error::Error;
};

class AllGenerationsFailed : public Error {
public:
    using Error::Error;
};

// experiment
class MissingColumn : public Error {
public:
    using Error::Error;
};

class EmptyFile : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

} // namespace promptforge
