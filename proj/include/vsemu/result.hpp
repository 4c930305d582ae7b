#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>

namespace vsemu {

// Error taxonomy. Codes 0x0000..0x0009 are the wire status values; the
// remaining codes are local to one endpoint and never serialize.
enum class ErrorCode : std::uint16_t {
    ok = 0x0000,
    malformed = 0x0001,
    auth_failed = 0x0002,
    bad_hmac = 0x0003,
    counter_mismatch = 0x0004,
    bad_index = 0x0005,
    empty_selection = 0x0006,
    unsupported = 0x0007,
    key_not_found = 0x0008,
    deferred_unavailable = 0x0009,
    // local-only codes
    transport = 0x0100,
    broken_chain = 0x0101,
    shadow_divergence = 0x0102,
    io = 0x0103,
    internal = 0x0104,
};

inline bool is_wire_status(ErrorCode c) {
    return static_cast<std::uint16_t>(c) <= 0x0009;
}

inline const char* error_name(ErrorCode c) {
    switch (c) {
        case ErrorCode::ok: return "OK";
        case ErrorCode::malformed: return "MALFORMED";
        case ErrorCode::auth_failed: return "AUTH_FAILED";
        case ErrorCode::bad_hmac: return "BAD_HMAC";
        case ErrorCode::counter_mismatch: return "COUNTER_MISMATCH";
        case ErrorCode::bad_index: return "BAD_INDEX";
        case ErrorCode::empty_selection: return "EMPTY_SELECTION";
        case ErrorCode::unsupported: return "UNSUPPORTED";
        case ErrorCode::key_not_found: return "KEY_NOT_FOUND";
        case ErrorCode::deferred_unavailable: return "DEFERRED_UNAVAILABLE";
        case ErrorCode::transport: return "TRANSPORT";
        case ErrorCode::broken_chain: return "BROKEN_CHAIN";
        case ErrorCode::shadow_divergence: return "SHADOW_DIVERGENCE";
        case ErrorCode::io: return "IO";
        case ErrorCode::internal: return "INTERNAL";
    }
    return "UNKNOWN";
}

struct Error {
    ErrorCode code = ErrorCode::internal;
    std::string detail;

    std::string to_string() const {
        std::string s = error_name(code);
        if (!detail.empty()) {
            s += ": ";
            s += detail;
        }
        return s;
    }
};

/// Minimal expected-style result. A Result either holds a T or an Error;
/// value() on an error is a programming bug and aborts via the optional.
template <typename T>
class Result {
  public:
    Result(T value) : value_(std::move(value)) {}
    Result(Error err) : error_(std::move(err)) {}
    Result(ErrorCode code, std::string detail = {}) : error_(Error{code, std::move(detail)}) {}

    bool ok() const { return value_.has_value(); }
    explicit operator bool() const { return ok(); }

    ErrorCode code() const { return ok() ? ErrorCode::ok : error_.code; }
    const Error& error() const { return error_; }

    T& value() { return *value_; }
    const T& value() const { return *value_; }
    T take() { return std::move(*value_); }

    T* operator->() { return &*value_; }
    const T* operator->() const { return &*value_; }
    T& operator*() { return *value_; }
    const T& operator*() const { return *value_; }

  private:
    std::optional<T> value_;
    Error error_;
};

class Status {
  public:
    Status() = default;
    Status(Error err) : error_(std::move(err)) {}
    Status(ErrorCode code, std::string detail = {}) {
        if (code != ErrorCode::ok) error_ = Error{code, std::move(detail)};
    }

    static Status ok_status() { return Status(); }

    bool ok() const { return !error_.has_value(); }
    explicit operator bool() const { return ok(); }
    ErrorCode code() const { return ok() ? ErrorCode::ok : error_->code; }
    const Error& error() const { return *error_; }

  private:
    std::optional<Error> error_;
};

}  // namespace vsemu
