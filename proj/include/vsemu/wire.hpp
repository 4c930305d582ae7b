#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vsemu/bytes.hpp"
#include "vsemu/result.hpp"

// Length-prefixed framing and command/response codec shared by client, shim,
// and broker. Byte-for-byte layout is documented in protocol.md.
namespace vsemu::wire {

inline constexpr std::array<std::uint8_t, 4> kFrameMagic = {'W', 'A', 'W', 'L'};
inline constexpr std::uint8_t kProtocolVersion = 1;
inline constexpr std::uint8_t kMsgTypeRequest = 1;
inline constexpr std::uint8_t kMsgTypeResponse = 2;
inline constexpr std::size_t kMaxBodyLen = 1u << 20;  // 1 MiB
inline constexpr std::size_t kFrameHeaderLen = 10;

enum class Command : std::uint16_t {
    get_caps = 0x0001,
    create_vse = 0x0002,
    pcr_extend = 0x0003,
    pcr_read = 0x0004,
    quote = 0x0005,
    create_key = 0x0006,
    gen_hmac_key = 0x0010,
    export_hmac_key = 0x0011,
    import_hmac_key = 0x0012,
};

inline bool known_command(std::uint16_t code) {
    return (code >= 0x0001 && code <= 0x0006) || (code >= 0x0010 && code <= 0x0012);
}

inline bool is_admin_command(Command c) {
    auto v = static_cast<std::uint16_t>(c);
    return v >= 0x0010 && v <= 0x0012;
}

struct Frame {
    std::uint8_t version = kProtocolVersion;
    std::uint8_t msg_type = kMsgTypeRequest;
    Bytes body;

    bool operator==(const Frame&) const = default;
};

inline Bytes encode_frame(const Frame& f) {
    Bytes out;
    out.reserve(kFrameHeaderLen + f.body.size());
    put_bytes(out, kFrameMagic);
    put_u8(out, f.version);
    put_u8(out, f.msg_type);
    put_u32(out, static_cast<std::uint32_t>(f.body.size()));
    put_bytes(out, f.body);
    return out;
}

enum class FrameDecodeStatus { complete, need_more, malformed };

struct FrameDecodeResult {
    FrameDecodeStatus status = FrameDecodeStatus::need_more;
    Frame frame;
    std::size_t consumed = 0;
};

/// Incremental decode from a byte stream prefix. need_more means the caller
/// should supply more input; the decoder never reads past body_len.
inline FrameDecodeResult decode_frame(std::span<const std::uint8_t> data) {
    FrameDecodeResult result;
    if (data.size() < kFrameHeaderLen) return result;  // need_more
    for (std::size_t i = 0; i < 4; ++i)
        if (data[i] != kFrameMagic[i]) {
            result.status = FrameDecodeStatus::malformed;
            return result;
        }
    std::uint8_t version = data[4];
    std::uint8_t msg_type = data[5];
    std::uint32_t body_len = 0;
    for (int i = 6; i < 10; ++i) body_len = (body_len << 8) | data[i];
    if (version != kProtocolVersion ||
        (msg_type != kMsgTypeRequest && msg_type != kMsgTypeResponse) ||
        body_len > kMaxBodyLen) {
        result.status = FrameDecodeStatus::malformed;
        return result;
    }
    if (data.size() < kFrameHeaderLen + body_len) return result;  // need_more
    result.status = FrameDecodeStatus::complete;
    result.frame.version = version;
    result.frame.msg_type = msg_type;
    result.frame.body.assign(data.begin() + kFrameHeaderLen,
                             data.begin() + kFrameHeaderLen + body_len);
    result.consumed = kFrameHeaderLen + body_len;
    return result;
}

// Request body: command_code(2) | cred_len(4)+cred | field_count(2) |
// per field: len(4)+bytes.
struct Request {
    Command command = Command::get_caps;
    Bytes credential;
    std::vector<Bytes> fields;

    bool operator==(const Request&) const = default;
};

// Response body: status(2) | field_count(2) | fields. Non-OK responses carry
// zero fields.
struct Response {
    ErrorCode status = ErrorCode::ok;
    std::vector<Bytes> fields;

    bool operator==(const Response&) const = default;

    static Response failure(ErrorCode code) { return Response{code, {}}; }
};

inline Bytes encode_request(const Request& req) {
    Bytes out;
    put_u16(out, static_cast<std::uint16_t>(req.command));
    put_u32(out, static_cast<std::uint32_t>(req.credential.size()));
    put_bytes(out, req.credential);
    put_u16(out, static_cast<std::uint16_t>(req.fields.size()));
    for (const auto& f : req.fields) {
        put_u32(out, static_cast<std::uint32_t>(f.size()));
        put_bytes(out, f);
    }
    return out;
}

inline Result<Request> decode_request(std::span<const std::uint8_t> body) {
    ByteReader r(body);
    Request req;
    std::uint16_t code = 0, count = 0;
    std::uint32_t len = 0;
    if (!r.read_u16(code)) return Error{ErrorCode::malformed, "truncated command code"};
    if (!known_command(code)) return Error{ErrorCode::malformed, "unknown command code"};
    req.command = static_cast<Command>(code);
    if (!r.read_u32(len) || !r.read_bytes(len, req.credential))
        return Error{ErrorCode::malformed, "truncated credential"};
    if (!r.read_u16(count)) return Error{ErrorCode::malformed, "truncated field count"};
    for (std::uint16_t i = 0; i < count; ++i) {
        Bytes f;
        if (!r.read_u32(len) || !r.read_bytes(len, f))
            return Error{ErrorCode::malformed, "truncated field"};
        req.fields.push_back(std::move(f));
    }
    if (!r.done()) return Error{ErrorCode::malformed, "trailing bytes in request"};
    return req;
}

inline Bytes encode_response(const Response& resp) {
    Bytes out;
    put_u16(out, static_cast<std::uint16_t>(resp.status));
    const auto& fields = resp.status == ErrorCode::ok ? resp.fields : std::vector<Bytes>{};
    put_u16(out, static_cast<std::uint16_t>(fields.size()));
    for (const auto& f : fields) {
        put_u32(out, static_cast<std::uint32_t>(f.size()));
        put_bytes(out, f);
    }
    return out;
}

inline Result<Response> decode_response(std::span<const std::uint8_t> body) {
    ByteReader r(body);
    Response resp;
    std::uint16_t status = 0, count = 0;
    std::uint32_t len = 0;
    if (!r.read_u16(status)) return Error{ErrorCode::malformed, "truncated status"};
    if (status > 0x0009) return Error{ErrorCode::malformed, "unknown status code"};
    resp.status = static_cast<ErrorCode>(status);
    if (!r.read_u16(count)) return Error{ErrorCode::malformed, "truncated field count"};
    if (resp.status != ErrorCode::ok && count != 0)
        return Error{ErrorCode::malformed, "error response with payload"};
    for (std::uint16_t i = 0; i < count; ++i) {
        Bytes f;
        if (!r.read_u32(len) || !r.read_bytes(len, f))
            return Error{ErrorCode::malformed, "truncated field"};
        resp.fields.push_back(std::move(f));
    }
    if (!r.done()) return Error{ErrorCode::malformed, "trailing bytes in response"};
    return resp;
}

// 24-bit PCR selection bitmap packed into a 3-byte field.
inline Bytes selection_to_field(std::uint32_t selection) {
    return Bytes{static_cast<std::uint8_t>(selection >> 16),
                 static_cast<std::uint8_t>(selection >> 8),
                 static_cast<std::uint8_t>(selection)};
}

inline Result<std::uint32_t> selection_from_field(const Bytes& field) {
    if (field.size() != 3) return Error{ErrorCode::malformed, "selection must be 3 bytes"};
    return static_cast<std::uint32_t>(field[0]) << 16 | static_cast<std::uint32_t>(field[1]) << 8 |
           field[2];
}

inline Bytes encode_request_frame(const Request& req) {
    return encode_frame(Frame{kProtocolVersion, kMsgTypeRequest, encode_request(req)});
}

inline Bytes encode_response_frame(const Response& resp) {
    return encode_frame(Frame{kProtocolVersion, kMsgTypeResponse, encode_response(resp)});
}

/// Capability record served by GET_CAPS and synthesized locally by deferred
/// clients; both sides compile against the same constants.
struct Caps {
    std::uint8_t version = kProtocolVersion;
    std::uint8_t pcr_count = 24;
    std::string bank = "sha256";
    bool freshness_mode = false;
    std::vector<std::uint16_t> commands;

    bool operator==(const Caps&) const = default;

    static std::vector<std::uint16_t> data_path_commands() {
        return {0x0001, 0x0002, 0x0003, 0x0004, 0x0005, 0x0006};
    }

    std::vector<Bytes> to_fields() const {
        std::vector<Bytes> fields;
        fields.push_back({version});
        fields.push_back({pcr_count});
        fields.push_back(to_bytes(bank));
        fields.push_back({static_cast<std::uint8_t>(freshness_mode ? 1 : 0)});
        Bytes codes;
        for (auto c : commands) put_u16(codes, c);
        fields.push_back(std::move(codes));
        return fields;
    }

    static Result<Caps> from_fields(const std::vector<Bytes>& fields) {
        if (fields.size() != 5 || fields[0].size() != 1 || fields[1].size() != 1 ||
            fields[3].size() != 1 || fields[4].size() % 2 != 0)
            return Error{ErrorCode::malformed, "bad caps fields"};
        Caps caps;
        caps.version = fields[0][0];
        caps.pcr_count = fields[1][0];
        caps.bank = std::string(fields[2].begin(), fields[2].end());
        caps.freshness_mode = fields[3][0] != 0;
        for (std::size_t i = 0; i < fields[4].size(); i += 2)
            caps.commands.push_back(
                static_cast<std::uint16_t>(fields[4][i] << 8 | fields[4][i + 1]));
        return caps;
    }
};

}  // namespace vsemu::wire
