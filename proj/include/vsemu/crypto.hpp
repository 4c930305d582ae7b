#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>

#include <sodium.h>

#include "vsemu/bytes.hpp"
#include "vsemu/result.hpp"

// Deterministic facade over the fixed algorithm suite: SHA-256, HMAC-SHA-256,
// Ed25519, and an AEAD key wrap (ChaCha20-Poly1305-IETF, 12-byte nonce).
// Everything downstream is testable against these algorithms alone.
namespace vsemu::crypto {

inline void init() {
    static std::once_flag once;
    std::call_once(once, [] {
        if (sodium_init() < 0) throw std::runtime_error("crypto backend init failed");
    });
}

inline constexpr std::size_t kDigestSize = 32;
inline constexpr std::size_t kHmacTagSize = 32;
inline constexpr std::size_t kHmacKeySize = 32;
inline constexpr std::size_t kWrapKeySize = 32;
inline constexpr std::size_t kWrapNonceSize = 12;
inline constexpr std::size_t kSignPublicSize = crypto_sign_PUBLICKEYBYTES;   // 32
inline constexpr std::size_t kSignPrivateSize = crypto_sign_SECRETKEYBYTES;  // 64
inline constexpr std::size_t kSignatureSize = crypto_sign_BYTES;             // 64

/// 32-byte SHA-256 output.
struct Digest {
    std::array<std::uint8_t, kDigestSize> bytes{};

    auto operator<=>(const Digest&) const = default;
    std::span<const std::uint8_t> view() const { return bytes; }
    std::string hex() const { return to_hex(bytes); }

    static std::optional<Digest> from_hex(std::string_view h) {
        auto raw = vsemu::from_hex(h);
        if (!raw || raw->size() != kDigestSize) return std::nullopt;
        Digest d;
        std::copy(raw->begin(), raw->end(), d.bytes.begin());
        return d;
    }
};

/// HMAC key as held inside a coprocessor. key_id is nonzero; the secret has
/// no serialization path except the AEAD-wrapped export blob.
struct HmacKey {
    std::uint32_t key_id = 0;
    std::array<std::uint8_t, kHmacKeySize> secret{};

    ~HmacKey() { zeroize(secret); }
    HmacKey() = default;
    HmacKey(const HmacKey&) = default;
    HmacKey& operator=(const HmacKey&) = default;
};

struct SigningKeyPair {
    std::uint32_t key_id = 0;
    std::array<std::uint8_t, kSignPublicSize> public_key{};
    std::array<std::uint8_t, kSignPrivateSize> private_key{};

    ~SigningKeyPair() { zeroize(private_key); }
    SigningKeyPair() = default;
    SigningKeyPair(const SigningKeyPair&) = default;
    SigningKeyPair& operator=(const SigningKeyPair&) = default;
};

/// AEAD envelope produced by wrap_key. Decrypts only under the recipient
/// master key; any bit flip fails authentication.
struct WrappedKey {
    std::uint32_t recipient_key_id = 0;
    std::array<std::uint8_t, kWrapNonceSize> nonce{};
    Bytes ciphertext;  // ciphertext || 16-byte tag

    Bytes encode() const {
        Bytes out;
        put_u32(out, recipient_key_id);
        put_bytes(out, nonce);
        put_u32(out, static_cast<std::uint32_t>(ciphertext.size()));
        put_bytes(out, ciphertext);
        return out;
    }

    static Result<WrappedKey> decode(std::span<const std::uint8_t> data) {
        ByteReader r(data);
        WrappedKey w;
        std::uint32_t len = 0;
        if (!r.read_u32(w.recipient_key_id) || !r.read_into(w.nonce) || !r.read_u32(len) ||
            !r.read_bytes(len, w.ciphertext) || !r.done())
            return Error{ErrorCode::malformed, "bad wrapped-key encoding"};
        return w;
    }
};

/// Randomness source; injectable so tests can pin every seed and nonce.
class RandomSource {
  public:
    virtual ~RandomSource() = default;
    virtual void fill(std::span<std::uint8_t> out) = 0;

    Bytes bytes(std::size_t n) {
        Bytes out(n);
        fill(out);
        return out;
    }

    std::uint32_t next_u32() {
        std::array<std::uint8_t, 4> b{};
        fill(b);
        return static_cast<std::uint32_t>(b[0]) << 24 | static_cast<std::uint32_t>(b[1]) << 16 |
               static_cast<std::uint32_t>(b[2]) << 8 | b[3];
    }

    std::uint64_t next_u64() {
        std::array<std::uint8_t, 8> b{};
        fill(b);
        std::uint64_t v = 0;
        for (auto x : b) v = (v << 8) | x;
        return v;
    }

    std::uint32_t nonzero_u32() {
        std::uint32_t v = 0;
        while (v == 0) v = next_u32();
        return v;
    }
};

class SystemRandom final : public RandomSource {
  public:
    SystemRandom() { init(); }
    void fill(std::span<std::uint8_t> out) override {
        if (!out.empty()) randombytes_buf(out.data(), out.size());
    }
};

/// ChaCha20 keystream over an incrementing counter: reproducible across runs
/// for the same seed. Test use only.
class DeterministicRandom final : public RandomSource {
  public:
    explicit DeterministicRandom(std::uint64_t seed) {
        init();
        key_.fill(0);
        for (int i = 0; i < 8; ++i) key_[i] = static_cast<std::uint8_t>(seed >> (56 - 8 * i));
    }

    void fill(std::span<std::uint8_t> out) override {
        if (out.empty()) return;
        std::lock_guard lock(mu_);
        std::array<std::uint8_t, 8> nonce{};
        for (int i = 0; i < 8; ++i) nonce[i] = static_cast<std::uint8_t>(counter_ >> (56 - 8 * i));
        ++counter_;
        std::fill(out.begin(), out.end(), 0);
        crypto_stream_chacha20_xor(out.data(), out.data(), out.size(), nonce.data(), key_.data());
    }

  private:
    std::mutex mu_;
    std::array<std::uint8_t, 32> key_{};
    std::uint64_t counter_ = 0;
};

// empty spans carry a null data(); the backend declares its inputs nonnull
inline const std::uint8_t* nonnull_data(std::span<const std::uint8_t> data) {
    static const std::uint8_t dummy = 0;
    return data.empty() ? &dummy : data.data();
}

inline Digest hash(std::span<const std::uint8_t> data) {
    init();
    Digest d;
    crypto_hash_sha256(d.bytes.data(), nonnull_data(data), data.size());
    return d;
}

inline Digest hash(const Bytes& data) { return hash(std::span<const std::uint8_t>(data)); }

inline std::array<std::uint8_t, kHmacTagSize> hmac_tag(const HmacKey& key,
                                                       std::span<const std::uint8_t> data) {
    init();
    std::array<std::uint8_t, kHmacTagSize> tag{};
    crypto_auth_hmacsha256_state st;
    crypto_auth_hmacsha256_init(&st, key.secret.data(), key.secret.size());
    crypto_auth_hmacsha256_update(&st, nonnull_data(data), data.size());
    crypto_auth_hmacsha256_final(&st, tag.data());
    return tag;
}

inline bool hmac_verify(const HmacKey& key, std::span<const std::uint8_t> data,
                        std::span<const std::uint8_t> tag) {
    auto expect = hmac_tag(key, data);
    return ct_equal(expect, tag);  // constant-time compare
}

inline SigningKeyPair gen_signing_key(RandomSource& rng) {
    init();
    SigningKeyPair kp;
    std::array<std::uint8_t, crypto_sign_SEEDBYTES> seed{};
    rng.fill(seed);
    crypto_sign_seed_keypair(kp.public_key.data(), kp.private_key.data(), seed.data());
    zeroize(seed);
    kp.key_id = rng.nonzero_u32();
    return kp;
}

/// Keypair from a known 32-byte seed; fixture and key-file loading path.
inline SigningKeyPair signing_key_from_seed(std::span<const std::uint8_t> seed,
                                            std::uint32_t key_id) {
    init();
    if (seed.size() != crypto_sign_SEEDBYTES) throw std::invalid_argument("bad signing seed size");
    SigningKeyPair kp;
    crypto_sign_seed_keypair(kp.public_key.data(), kp.private_key.data(), seed.data());
    kp.key_id = key_id;
    return kp;
}

/// Keypair from a stored 64-byte private key (public half is its upper 32
/// bytes in this scheme).
inline Result<SigningKeyPair> signing_key_from_private(std::span<const std::uint8_t> private_key,
                                                       std::uint32_t key_id) {
    init();
    if (private_key.size() != kSignPrivateSize)
        return Error{ErrorCode::malformed, "private key must be 64 bytes"};
    SigningKeyPair kp;
    std::copy(private_key.begin(), private_key.end(), kp.private_key.begin());
    std::copy(private_key.begin() + 32, private_key.end(), kp.public_key.begin());
    kp.key_id = key_id;
    return kp;
}

inline std::array<std::uint8_t, kSignatureSize> sign(const SigningKeyPair& key,
                                                     std::span<const std::uint8_t> message) {
    init();
    std::array<std::uint8_t, kSignatureSize> sig{};
    crypto_sign_detached(sig.data(), nullptr, nonnull_data(message), message.size(),
                         key.private_key.data());
    return sig;
}

inline bool verify(std::span<const std::uint8_t> public_key, std::span<const std::uint8_t> message,
                   std::span<const std::uint8_t> signature) {
    init();
    if (public_key.size() != kSignPublicSize || signature.size() != kSignatureSize) return false;
    return crypto_sign_verify_detached(signature.data(), nonnull_data(message), message.size(),
                                       public_key.data()) == 0;
}

inline WrappedKey wrap_key(std::span<const std::uint8_t> master, std::uint32_t recipient_key_id,
                           std::span<const std::uint8_t> payload, RandomSource& rng) {
    init();
    if (master.size() != kWrapKeySize) throw std::invalid_argument("bad master key size");
    if (payload.empty()) throw std::invalid_argument("empty wrap payload");
    WrappedKey w;
    w.recipient_key_id = recipient_key_id;
    rng.fill(w.nonce);
    w.ciphertext.resize(payload.size() + crypto_aead_chacha20poly1305_ietf_ABYTES);
    unsigned long long clen = 0;
    crypto_aead_chacha20poly1305_ietf_encrypt(w.ciphertext.data(), &clen, payload.data(),
                                              payload.size(), nullptr, 0, nullptr, w.nonce.data(),
                                              master.data());
    w.ciphertext.resize(clen);
    return w;
}

inline Result<Bytes> unwrap_key(std::span<const std::uint8_t> master, const WrappedKey& wrapped) {
    init();
    if (master.size() != kWrapKeySize) return Error{ErrorCode::malformed, "bad master key size"};
    if (wrapped.ciphertext.size() < crypto_aead_chacha20poly1305_ietf_ABYTES)
        return Error{ErrorCode::malformed, "wrapped blob too short"};
    std::size_t plain_len = wrapped.ciphertext.size() - crypto_aead_chacha20poly1305_ietf_ABYTES;
    Bytes plain(std::max<std::size_t>(plain_len, 1));
    unsigned long long plen = 0;
    int rc = crypto_aead_chacha20poly1305_ietf_decrypt(
        plain.data(), &plen, nullptr, wrapped.ciphertext.data(), wrapped.ciphertext.size(),
        nullptr, 0, wrapped.nonce.data(), master.data());
    if (rc != 0) return Error{ErrorCode::auth_failed, "key unwrap authentication failed"};
    plain.resize(plen);
    return plain;
}

inline HmacKey gen_hmac_key(RandomSource& rng) {
    HmacKey k;
    k.key_id = rng.nonzero_u32();
    rng.fill(k.secret);
    return k;
}

}  // namespace vsemu::crypto
