#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "vsemu/bytes.hpp"
#include "vsemu/crypto.hpp"
#include "vsemu/result.hpp"

// Compact binary certificates, three-kind chain:
//   manufacturer root -> coprocessor identity -> EK | AK leaf.
// EK certificates certify a VSE seed (no subject key); AK certificates
// certify a quote-signing public key, either per-VSE (seed present) or
// class-wide for a technology signing key (seed absent).
namespace vsemu::pki {

enum class SubjectKind : std::uint8_t {
    root = 0,
    coprocessor = 1,
    ek = 2,
    ak = 3,
};

inline const char* kind_name(SubjectKind k) {
    switch (k) {
        case SubjectKind::root: return "root";
        case SubjectKind::coprocessor: return "coprocessor";
        case SubjectKind::ek: return "ek";
        case SubjectKind::ak: return "ak";
    }
    return "?";
}

inline constexpr std::uint8_t kCertVersion = 1;

struct Certificate {
    std::uint8_t version = kCertVersion;
    SubjectKind subject_kind = SubjectKind::root;
    Bytes subject_public_key;                            // empty for ek
    std::optional<std::array<std::uint8_t, 32>> seed;    // ek, per-VSE ak
    std::optional<std::uint8_t> tech_class;              // ek, ak
    std::optional<std::array<std::uint8_t, 32>> random_init_value;  // ek only
    std::uint32_t coprocessor_id = 0;
    std::uint32_t issuer_key_id = 0;
    Bytes signature;

    bool operator==(const Certificate&) const = default;

    // Serialized prefix covered by the signature.
    Bytes to_be_signed() const {
        Bytes out;
        put_u8(out, version);
        put_u8(out, static_cast<std::uint8_t>(subject_kind));
        put_u32(out, static_cast<std::uint32_t>(subject_public_key.size()));
        put_bytes(out, subject_public_key);
        put_u8(out, seed ? 1 : 0);
        if (seed) put_bytes(out, *seed);
        put_u8(out, tech_class ? 1 : 0);
        if (tech_class) put_u8(out, *tech_class);
        put_u8(out, random_init_value ? 1 : 0);
        if (random_init_value) put_bytes(out, *random_init_value);
        put_u32(out, coprocessor_id);
        put_u32(out, issuer_key_id);
        return out;
    }

    Bytes encode() const {
        Bytes out = to_be_signed();
        put_u32(out, static_cast<std::uint32_t>(signature.size()));
        put_bytes(out, signature);
        return out;
    }

    static Result<Certificate> decode(std::span<const std::uint8_t> data) {
        ByteReader r(data);
        Certificate c;
        std::uint8_t kind = 0, have = 0;
        std::uint32_t len = 0;
        if (!r.read_u8(c.version) || c.version != kCertVersion)
            return Error{ErrorCode::malformed, "bad certificate version"};
        if (!r.read_u8(kind) || kind > 3)
            return Error{ErrorCode::malformed, "bad subject kind"};
        c.subject_kind = static_cast<SubjectKind>(kind);
        if (!r.read_u32(len) || !r.read_bytes(len, c.subject_public_key))
            return Error{ErrorCode::malformed, "truncated subject key"};
        // presence bytes must be canonical so decode(encode(x)) is injective
        if (!r.read_u8(have) || have > 1)
            return Error{ErrorCode::malformed, "bad presence byte"};
        if (have) {
            std::array<std::uint8_t, 32> s{};
            if (!r.read_into(s)) return Error{ErrorCode::malformed, "truncated seed"};
            c.seed = s;
        }
        if (!r.read_u8(have) || have > 1)
            return Error{ErrorCode::malformed, "bad presence byte"};
        if (have) {
            std::uint8_t t = 0;
            if (!r.read_u8(t)) return Error{ErrorCode::malformed, "truncated tech class"};
            c.tech_class = t;
        }
        if (!r.read_u8(have) || have > 1)
            return Error{ErrorCode::malformed, "bad presence byte"};
        if (have) {
            std::array<std::uint8_t, 32> v{};
            if (!r.read_into(v)) return Error{ErrorCode::malformed, "truncated random init"};
            c.random_init_value = v;
        }
        if (!r.read_u32(c.coprocessor_id) || !r.read_u32(c.issuer_key_id))
            return Error{ErrorCode::malformed, "truncated certificate"};
        if (!r.read_u32(len) || !r.read_bytes(len, c.signature) || !r.done())
            return Error{ErrorCode::malformed, "truncated signature"};
        return c;
    }
};

struct SubjectFields {
    SubjectKind kind = SubjectKind::coprocessor;
    Bytes subject_public_key;
    std::optional<std::array<std::uint8_t, 32>> seed;
    std::optional<std::uint8_t> tech_class;
    std::optional<std::array<std::uint8_t, 32>> random_init_value;
    std::uint32_t coprocessor_id = 0;
};

inline bool issuer_may_issue(SubjectKind issuer, SubjectKind subject) {
    if (issuer == SubjectKind::root)
        return subject == SubjectKind::root || subject == SubjectKind::coprocessor;
    if (issuer == SubjectKind::coprocessor)
        return subject == SubjectKind::ek || subject == SubjectKind::ak;
    return false;
}

inline Result<Certificate> issue(const crypto::SigningKeyPair& issuer_keypair,
                                 SubjectKind issuer_kind, const SubjectFields& subject) {
    if (!issuer_may_issue(issuer_kind, subject.kind))
        return Error{ErrorCode::unsupported,
                     std::string(kind_name(issuer_kind)) + " may not issue " +
                         kind_name(subject.kind)};
    Certificate c;
    c.subject_kind = subject.kind;
    c.subject_public_key = subject.subject_public_key;
    c.seed = subject.seed;
    c.tech_class = subject.tech_class;
    c.random_init_value = subject.random_init_value;
    c.coprocessor_id = subject.coprocessor_id;
    c.issuer_key_id = issuer_keypair.key_id;
    auto sig = crypto::sign(issuer_keypair, c.to_be_signed());
    c.signature.assign(sig.begin(), sig.end());
    return c;
}

/// Trusted anchor: the manufacturer root public key and its key id (taken
/// from the self-signed root certificate distributed out of band).
struct TrustAnchor {
    Bytes public_key;
    std::uint32_t key_id = 0;
};

inline Result<Certificate> make_self_signed_root(const crypto::SigningKeyPair& root_key) {
    SubjectFields f;
    f.kind = SubjectKind::root;
    f.subject_public_key.assign(root_key.public_key.begin(), root_key.public_key.end());
    return issue(root_key, SubjectKind::root, f);
}

inline TrustAnchor anchor_from_root_cert(const Certificate& root_cert) {
    return TrustAnchor{root_cert.subject_public_key, root_cert.issuer_key_id};
}

struct ChainFacts {
    std::optional<std::array<std::uint8_t, 32>> seed;
    std::optional<std::uint8_t> tech_class;
    std::optional<std::array<std::uint8_t, 32>> random_init_value;
    std::uint32_t coprocessor_id = 0;
    Bytes signer_public_key;  // leaf subject key (empty for ek leaves)
    SubjectKind leaf_kind = SubjectKind::ek;
};

/// Walk root -> intermediates -> leaf. On failure the error detail carries
/// the index of the failing element in [root, intermediates..., leaf]:
/// issuer-id mismatches point at the issuer's index, signature and kind
/// failures at the certificate's own index.
inline Result<ChainFacts> verify_chain(const Certificate& leaf,
                                       const std::vector<Certificate>& intermediates,
                                       const TrustAnchor& root) {
    if (intermediates.size() + 2 > 3)
        return Error{ErrorCode::broken_chain, "chain depth exceeds 3 at 0"};

    Bytes issuer_pub = root.public_key;
    std::uint32_t issuer_id = root.key_id;
    std::size_t pos = 1;

    auto check_link = [&](const Certificate& cert, bool is_leaf) -> Status {
        if (cert.issuer_key_id != issuer_id)
            return Status(ErrorCode::broken_chain,
                          "issuer mismatch at " + std::to_string(pos - 1));
        bool kind_ok = is_leaf
                           ? (cert.subject_kind == SubjectKind::ek ||
                              cert.subject_kind == SubjectKind::ak)
                           : (cert.subject_kind == SubjectKind::coprocessor);
        if (!kind_ok)
            return Status(ErrorCode::broken_chain, "bad kind at " + std::to_string(pos));
        if (!crypto::verify(issuer_pub, cert.to_be_signed(), cert.signature))
            return Status(ErrorCode::broken_chain,
                          "bad signature at " + std::to_string(pos));
        return {};
    };

    for (const auto& cert : intermediates) {
        if (auto st = check_link(cert, false); !st.ok()) return st.error();
        issuer_pub = cert.subject_public_key;
        issuer_id = cert.coprocessor_id;  // identity key id convention
        ++pos;
    }
    if (auto st = check_link(leaf, true); !st.ok()) return st.error();

    ChainFacts facts;
    facts.seed = leaf.seed;
    facts.tech_class = leaf.tech_class;
    facts.random_init_value = leaf.random_init_value;
    facts.coprocessor_id = leaf.coprocessor_id;
    facts.signer_public_key = leaf.subject_public_key;
    facts.leaf_kind = leaf.subject_kind;
    return facts;
}

/// Failing element index parsed back out of a broken-chain error.
inline int broken_chain_index(const Error& err) {
    auto pos = err.detail.find_last_of(' ');
    if (pos == std::string::npos) return -1;
    return std::atoi(err.detail.c_str() + pos + 1);
}

}  // namespace vsemu::pki
