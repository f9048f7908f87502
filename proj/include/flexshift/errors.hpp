#pragma once

#include <stdexcept>
#include <string>

namespace flexshift {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid network description, calibration, or plan.
class ConfigError : public Error {
public:
    using Error::Error;
};

// NaN/Inf produced, or training diverged.
class NumericError : public Error {
public:
    using Error::Error;
};

// API misuse: stale caches, mismatched shapes handed to an optimizer.
class UsageError : public Error {
public:
    using Error::Error;
};

// Bad caller-supplied data such as out-of-range labels.
class InputError : public Error {
public:
    using Error::Error;
};

// Packed stream cannot be written or parsed.
class EncodingError : public Error {
public:
    using Error::Error;
};

// Dataset file is malformed. Carries the byte offset where parsing stopped.
class IngestionError : public Error {
public:
    IngestionError(const std::string& what, std::size_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

class VersionError : public Error {
public:
    VersionError(int found, int expected)
        : Error("unsupported file version " + std::to_string(found) + " (this build reads version " +
                std::to_string(expected) + ")"),
          found_(found), expected_(expected) {}
    int found() const noexcept { return found_; }
    int expected() const noexcept { return expected_; }

private:
    int found_;
    int expected_;
};

}  // namespace flexshift
