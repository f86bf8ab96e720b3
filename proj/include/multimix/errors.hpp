#pragma once

#include <stdexcept>
#include <string>

namespace multimix {

// Base of every error the library raises. exit_code() is the CLI status the
// error maps to: 2 usage/configuration, 3 input or artifact, 4 divergence.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
    virtual int exit_code() const { return 3; }
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error("configuration error: " + what) {}
    int exit_code() const override { return 2; }
};

class UsageError : public Error {
public:
    explicit UsageError(const std::string& what) : Error("usage error: " + what) {}
    int exit_code() const override { return 2; }
};

class InputError : public Error {
public:
    explicit InputError(const std::string& what) : Error("input error: " + what) {}
};

class UnsupportedOperation : public Error {
public:
    explicit UnsupportedOperation(const std::string& what)
        : Error("unsupported operation: " + what) {}
};

class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error("parse error at line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

class LoadError : public Error {
public:
    explicit LoadError(const std::string& what) : Error("load error: " + what) {}
};

class VersionError : public Error {
public:
    explicit VersionError(const std::string& what) : Error("version error: " + what) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error("I/O error: " + what) {}
};

class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, std::string breakdown_json)
        : Error("training divergence: " + what), breakdown_(std::move(breakdown_json)) {}
    int exit_code() const override { return 4; }
    const std::string& breakdown() const { return breakdown_; }

private:
    std::string breakdown_;
};

}  // namespace multimix
