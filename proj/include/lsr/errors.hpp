#pragma once

#include <stdexcept>
#include <string>

namespace lsr {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// A caller broke a documented precondition (shape mismatch, bad config, ...).
class ContractError : public Error {
public:
    explicit ContractError(const std::string& msg) : Error(msg) {}
};

/// A serialized stream is malformed (bad magic, truncation, CRC mismatch, ...).
class FormatError : public Error {
public:
    explicit FormatError(const std::string& msg) : Error(msg) {}
};

/// A kernel produced a non-finite value. Fail fast instead of propagating.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ContractError(msg);
}

} // namespace lsr
