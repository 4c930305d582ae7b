#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>

#include "vsemu/bytes.hpp"
#include "vsemu/crypto.hpp"
#include "vsemu/result.hpp"

// Per-VEE attestation state (VSE): plaintext layout, the HMAC-sealed envelope
// that travels with every request, and the PCR bank operations both the
// coprocessor and the client-side shadow bank share.
namespace vsemu {

inline constexpr std::uint8_t kStateVersion = 1;
inline constexpr std::size_t kPcrCount = 24;
inline constexpr std::size_t kStateEncodedSize = 820;   // 4 + 32 + 8 + 8 + 24*32
inline constexpr std::size_t kSealedEncodedSize = 856;  // 4 + 820 + 32

inline constexpr std::uint8_t kFlagFreshnessCounter = 0x01;  // bit0
inline constexpr std::uint8_t kFlagRandomInit = 0x02;        // bit1

inline constexpr std::uint32_t kFullSelection = 0x00ffffff;

using PcrBank = std::array<crypto::Digest, kPcrCount>;

/// pcrs[index] := H(old || measurement); all other registers untouched.
inline Status extend_bank(PcrBank& pcrs, std::uint32_t index, const crypto::Digest& measurement) {
    if (index >= kPcrCount) return Status(ErrorCode::bad_index, "pcr index out of range");
    Bytes buf;
    buf.reserve(2 * crypto::kDigestSize);
    put_bytes(buf, pcrs[index].bytes);
    put_bytes(buf, measurement.bytes);
    pcrs[index] = crypto::hash(buf);
    return {};
}

/// Hash of the selected registers concatenated in ascending index order.
/// selection is a 24-bit map, bit i = PCR i.
inline Result<crypto::Digest> selection_digest(const PcrBank& pcrs, std::uint32_t selection) {
    if (selection == 0) return Error{ErrorCode::empty_selection, "selection has no bits set"};
    if (selection >> kPcrCount) return Error{ErrorCode::bad_index, "selection beyond pcr 23"};
    Bytes buf;
    for (std::uint32_t i = 0; i < kPcrCount; ++i)
        if (selection & (1u << i)) put_bytes(buf, pcrs[i].bytes);
    return crypto::hash(buf);
}

struct VseState {
    std::uint8_t version = kStateVersion;
    std::uint8_t tech_class = 0;
    std::uint8_t flags = 0;
    std::array<std::uint8_t, 32> seed{};
    std::uint64_t vse_id = 0;
    std::uint64_t counter = 0;
    PcrBank pcrs{};

    bool operator==(const VseState&) const = default;
    bool freshness_enabled() const { return flags & kFlagFreshnessCounter; }
    bool random_init_applied() const { return flags & kFlagRandomInit; }
};

// Layout: version(1) | tech_class(1) | flags(1) | pcr_count(1) |
//         seed(32) | vse_id(8 BE) | counter(8 BE) | pcrs(24 x 32)
inline Bytes encode_state(const VseState& s) {
    Bytes out;
    out.reserve(kStateEncodedSize);
    put_u8(out, s.version);
    put_u8(out, s.tech_class);
    put_u8(out, s.flags);
    put_u8(out, static_cast<std::uint8_t>(kPcrCount));
    put_bytes(out, s.seed);
    put_u64(out, s.vse_id);
    put_u64(out, s.counter);
    for (const auto& pcr : s.pcrs) put_bytes(out, pcr.bytes);
    return out;
}

inline Result<VseState> decode_state(std::span<const std::uint8_t> data) {
    if (data.size() != kStateEncodedSize)
        return Error{ErrorCode::malformed, "state must be exactly 820 bytes"};
    ByteReader r(data);
    VseState s;
    std::uint8_t pcr_count = 0;
    r.read_u8(s.version);
    r.read_u8(s.tech_class);
    r.read_u8(s.flags);
    r.read_u8(pcr_count);
    r.read_into(s.seed);
    r.read_u64(s.vse_id);
    r.read_u64(s.counter);
    for (auto& pcr : s.pcrs) r.read_into(pcr.bytes);
    if (s.version != kStateVersion) return Error{ErrorCode::malformed, "unsupported state version"};
    if (pcr_count != kPcrCount) return Error{ErrorCode::malformed, "unsupported pcr count"};
    if (!s.freshness_enabled() && s.counter != 0)
        return Error{ErrorCode::malformed, "counter set without freshness flag"};
    bool zero_seed = true;
    for (auto b : s.seed)
        if (b) zero_seed = false;
    if (zero_seed) return Error{ErrorCode::malformed, "all-zero seed"};
    return s;
}

/// HMAC envelope around the serialized state. The key_id is bound into the
/// MAC input, so a tag cannot be replayed across key generations.
/// Serialized: key_id(4 BE) | plaintext(820) | tag(32) = 856 bytes.
struct SealedVseState {
    std::uint32_t key_id = 0;
    Bytes plaintext;  // 820-byte encoded VseState
    std::array<std::uint8_t, crypto::kHmacTagSize> tag{};

    bool operator==(const SealedVseState&) const = default;

    Bytes encode() const {
        Bytes out;
        out.reserve(kSealedEncodedSize);
        put_u32(out, key_id);
        put_bytes(out, plaintext);
        put_bytes(out, tag);
        return out;
    }

    static Result<SealedVseState> decode(std::span<const std::uint8_t> data) {
        if (data.size() != kSealedEncodedSize)
            return Error{ErrorCode::malformed, "sealed state must be exactly 856 bytes"};
        ByteReader r(data);
        SealedVseState s;
        r.read_u32(s.key_id);
        r.read_bytes(kStateEncodedSize, s.plaintext);
        r.read_into(s.tag);
        return s;
    }
};

inline std::array<std::uint8_t, crypto::kHmacTagSize> seal_tag(const crypto::HmacKey& key,
                                                               std::span<const std::uint8_t>
                                                                   plaintext) {
    Bytes mac_input;
    mac_input.reserve(4 + plaintext.size());
    put_u32(mac_input, key.key_id);
    put_bytes(mac_input, plaintext);
    return crypto::hmac_tag(key, mac_input);
}

inline SealedVseState seal_state(const crypto::HmacKey& key, const VseState& state) {
    SealedVseState sealed;
    sealed.key_id = key.key_id;
    sealed.plaintext = encode_state(state);
    sealed.tag = seal_tag(key, sealed.plaintext);
    return sealed;
}

/// Verify the envelope against the keys available to a coprocessor and decode
/// the plaintext. Unknown key_id and tag mismatch are indistinguishable to the
/// caller: both are BAD_HMAC.
inline Result<VseState> unseal_state(const std::map<std::uint32_t, crypto::HmacKey>& keys,
                                     const SealedVseState& sealed) {
    auto it = keys.find(sealed.key_id);
    if (it == keys.end()) return Error{ErrorCode::bad_hmac, "unknown hmac key id"};
    auto expect = seal_tag(it->second, sealed.plaintext);
    if (!ct_equal(expect, sealed.tag)) return Error{ErrorCode::bad_hmac, "seal tag mismatch"};
    auto state = decode_state(sealed.plaintext);
    if (!state.ok()) return Error{ErrorCode::bad_hmac, "sealed plaintext malformed"};
    return state;
}

}  // namespace vsemu
