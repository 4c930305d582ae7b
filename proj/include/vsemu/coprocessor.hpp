#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <utility>
#include <vector>

#include "vsemu/bytes.hpp"
#include "vsemu/crypto.hpp"
#include "vsemu/pki.hpp"
#include "vsemu/result.hpp"
#include "vsemu/vse_state.hpp"

// Stateless cryptographic-coprocessor emulator. Creates VSEs, verifies and
// updates sealed states, signs quotes, and manages the shared HMAC key pool.
// The only per-VSE memory it may hold is the freshness counter table.
namespace vsemu::coproc {

inline constexpr std::array<std::uint8_t, 4> kQuoteMagic = {'W', 'Q', 'U', 'O'};
inline constexpr std::uint8_t kQuoteVersion = 1;

/// Signed attestation structure binding selected-PCR digest, nonce, seed,
/// and counter. The signature covers every field before it.
struct Quote {
    std::uint8_t version = kQuoteVersion;
    std::uint8_t tech_class = 0;
    std::array<std::uint8_t, 32> seed{};
    std::uint32_t selection = 0;  // 24-bit map
    std::uint64_t counter = 0;
    std::array<std::uint8_t, 32> nonce{};
    crypto::Digest digest;
    std::uint32_t signer_key_id = 0;
    Bytes signature;

    bool operator==(const Quote&) const = default;

    Bytes to_be_signed() const {
        Bytes out;
        put_bytes(out, kQuoteMagic);
        put_u8(out, version);
        put_u8(out, tech_class);
        put_bytes(out, seed);
        out.push_back(static_cast<std::uint8_t>(selection >> 16));
        out.push_back(static_cast<std::uint8_t>(selection >> 8));
        out.push_back(static_cast<std::uint8_t>(selection));
        put_u64(out, counter);
        put_bytes(out, nonce);
        put_bytes(out, digest.bytes);
        put_u32(out, signer_key_id);
        return out;
    }

    Bytes encode() const {
        Bytes out = to_be_signed();
        put_u32(out, static_cast<std::uint32_t>(signature.size()));
        put_bytes(out, signature);
        return out;
    }

    static Result<Quote> decode(std::span<const std::uint8_t> data) {
        ByteReader r(data);
        Quote q;
        std::array<std::uint8_t, 4> magic{};
        if (!r.read_into(magic) || magic != kQuoteMagic)
            return Error{ErrorCode::malformed, "bad quote magic"};
        std::uint8_t sel[3] = {0, 0, 0};
        std::uint32_t sig_len = 0;
        if (!r.read_u8(q.version) || q.version != kQuoteVersion)
            return Error{ErrorCode::malformed, "bad quote version"};
        if (!r.read_u8(q.tech_class) || !r.read_into(q.seed) || !r.read_u8(sel[0]) ||
            !r.read_u8(sel[1]) || !r.read_u8(sel[2]) || !r.read_u64(q.counter) ||
            !r.read_into(q.nonce) || !r.read_into(q.digest.bytes) || !r.read_u32(q.signer_key_id))
            return Error{ErrorCode::malformed, "truncated quote"};
        q.selection = static_cast<std::uint32_t>(sel[0]) << 16 |
                      static_cast<std::uint32_t>(sel[1]) << 8 | sel[2];
        if (!r.read_u32(sig_len) || !r.read_bytes(sig_len, q.signature) || !r.done())
            return Error{ErrorCode::malformed, "truncated quote signature"};
        return q;
    }
};

/// Attestation key: private half wrapped under the coprocessor master key,
/// public half certified against the VSE seed.
struct WrappedAttestationKey {
    crypto::WrappedKey wrapped_private;
    pki::Certificate ak_certificate;

    Bytes encode() const {
        Bytes out;
        Bytes w = wrapped_private.encode();
        Bytes c = ak_certificate.encode();
        put_u32(out, static_cast<std::uint32_t>(w.size()));
        put_bytes(out, w);
        put_u32(out, static_cast<std::uint32_t>(c.size()));
        put_bytes(out, c);
        return out;
    }

    static Result<WrappedAttestationKey> decode(std::span<const std::uint8_t> data) {
        ByteReader r(data);
        std::uint32_t len = 0;
        Bytes w, c;
        if (!r.read_u32(len) || !r.read_bytes(len, w) || !r.read_u32(len) ||
            !r.read_bytes(len, c) || !r.done())
            return Error{ErrorCode::malformed, "bad attestation key encoding"};
        auto wrapped = crypto::WrappedKey::decode(w);
        if (!wrapped.ok()) return wrapped.error();
        auto cert = pki::Certificate::decode(c);
        if (!cert.ok()) return cert.error();
        return WrappedAttestationKey{wrapped.take(), cert.take()};
    }
};

struct CreationReceipt {
    SealedVseState sealed_state;
    pki::Certificate ek_certificate;
    std::optional<std::array<std::uint8_t, 32>> random_init_value;
};

struct CoprocessorConfig {
    std::uint32_t coprocessor_id = 0;
    crypto::SigningKeyPair identity_key;  // key_id equals coprocessor_id
    std::uint32_t master_key_id = 0;
    std::array<std::uint8_t, 32> master_wrap_key{};
    crypto::HmacKey active_hmac_key;
    std::map<std::uint8_t, crypto::SigningKeyPair> tech_signing_keys;
    std::map<crypto::Digest, std::uint8_t> credential_registry;  // H(credential) -> tech class
    bool freshness_mode = false;
    bool random_init_mode = false;
};

/// Per-VSE expected counters; present only under freshness mode. Compare and
/// increment are a single atomic step per vse_id. An unknown vse_id is
/// re-baselined from the presented state (coprocessor restart discipline;
/// the rollback window this opens is documented in the README).
class CounterTable {
  public:
    bool check(std::uint64_t vse_id, std::uint64_t counter) {
        std::lock_guard lock(mu_);
        auto [it, inserted] = table_.try_emplace(vse_id, counter);
        return it->second == counter;
    }

    bool check_and_increment(std::uint64_t vse_id, std::uint64_t counter) {
        std::lock_guard lock(mu_);
        auto [it, inserted] = table_.try_emplace(vse_id, counter);
        if (it->second != counter) return false;
        ++it->second;
        return true;
    }

    void register_new(std::uint64_t vse_id) {
        std::lock_guard lock(mu_);
        table_[vse_id] = 0;
    }

    std::size_t size() const {
        std::lock_guard lock(mu_);
        return table_.size();
    }

    std::map<std::uint64_t, std::uint64_t> snapshot() const {
        std::lock_guard lock(mu_);
        return table_;
    }

    void restore(std::map<std::uint64_t, std::uint64_t> entries) {
        std::lock_guard lock(mu_);
        table_ = std::move(entries);
    }

  private:
    mutable std::mutex mu_;
    std::map<std::uint64_t, std::uint64_t> table_;
};

class Coprocessor {
  public:
    explicit Coprocessor(CoprocessorConfig config,
                         std::shared_ptr<crypto::RandomSource> rng = nullptr)
        : config_(std::move(config)),
          rng_(rng ? std::move(rng) : std::make_shared<crypto::SystemRandom>()) {
        hmac_keys_[config_.active_hmac_key.key_id] = config_.active_hmac_key;
    }

    const CoprocessorConfig& config() const { return config_; }
    bool freshness_mode() const { return config_.freshness_mode; }

    /// Per-VSE objects retained in coprocessor memory. Constant zero with
    /// freshness off; exactly one counter entry per VSE with freshness on.
    std::size_t retained_object_count() const { return counters_.size(); }

    Result<CreationReceipt> create_vse(std::span<const std::uint8_t> credential) {
        auto reg = config_.credential_registry.find(crypto::hash(credential));
        if (reg == config_.credential_registry.end())
            return Error{ErrorCode::auth_failed, "unknown credential"};

        VseState state;
        state.tech_class = reg->second;
        state.flags = 0;
        if (config_.freshness_mode) state.flags |= kFlagFreshnessCounter;
        if (config_.random_init_mode) state.flags |= kFlagRandomInit;
        do {
            rng_->fill(state.seed);
        } while (std::all_of(state.seed.begin(), state.seed.end(), [](auto b) { return !b; }));
        state.vse_id = rng_->next_u64();
        state.counter = 0;

        CreationReceipt receipt;
        if (config_.random_init_mode) {
            crypto::Digest init;
            rng_->fill(init.bytes);
            extend_bank(state.pcrs, 0, init);
            receipt.random_init_value = init.bytes;
        }
        if (config_.freshness_mode) counters_.register_new(state.vse_id);

        receipt.sealed_state = seal_current(state);

        pki::SubjectFields ek;
        ek.kind = pki::SubjectKind::ek;
        ek.seed = state.seed;
        ek.tech_class = state.tech_class;
        ek.random_init_value = receipt.random_init_value;
        ek.coprocessor_id = config_.coprocessor_id;
        auto cert = pki::issue(config_.identity_key, pki::SubjectKind::coprocessor, ek);
        if (!cert.ok()) return cert.error();
        receipt.ek_certificate = cert.take();
        return receipt;
    }

    Result<SealedVseState> pcr_extend(const SealedVseState& sealed, std::uint32_t index,
                                      const crypto::Digest& measurement) {
        auto state = unseal_state(keys_view(), sealed);
        if (!state.ok()) return state.error();
        if (index >= kPcrCount) return Error{ErrorCode::bad_index, "pcr index out of range"};
        if (state->freshness_enabled()) {
            if (!counters_.check_and_increment(state->vse_id, state->counter))
                return Error{ErrorCode::counter_mismatch, "stale sealed state"};
            ++state->counter;
        }
        extend_bank(state->pcrs, index, measurement);
        return seal_current(*state);
    }

    Result<std::vector<std::pair<std::uint32_t, crypto::Digest>>> pcr_read(
        const SealedVseState& sealed, std::uint32_t selection) {
        auto state = unseal_state(keys_view(), sealed);
        if (!state.ok()) return state.error();
        if (auto st = validate_selection(selection); !st.ok()) return st.error();
        if (auto st = check_counter(*state); !st.ok()) return st.error();
        std::vector<std::pair<std::uint32_t, crypto::Digest>> values;
        for (std::uint32_t i = 0; i < kPcrCount; ++i)
            if (selection & (1u << i)) values.emplace_back(i, state->pcrs[i]);
        return values;
    }

    Result<Quote> quote(const SealedVseState& sealed, std::uint32_t selection,
                        std::span<const std::uint8_t> nonce,
                        const WrappedAttestationKey* ak = nullptr) {
        auto state = unseal_state(keys_view(), sealed);
        if (!state.ok()) return state.error();
        if (auto st = validate_selection(selection); !st.ok()) return st.error();
        if (auto st = check_counter(*state); !st.ok()) return st.error();
        if (nonce.size() != 32) return Error{ErrorCode::malformed, "nonce must be 32 bytes"};

        crypto::SigningKeyPair signer;
        if (ak) {
            auto unwrapped = unwrap_attestation_key(*ak);
            if (!unwrapped.ok()) return unwrapped.error();
            signer = unwrapped.take();
        } else {
            auto it = config_.tech_signing_keys.find(state->tech_class);
            if (it == config_.tech_signing_keys.end())
                return Error{ErrorCode::key_not_found, "no signing key for tech class"};
            signer = it->second;
        }

        Quote q;
        q.tech_class = state->tech_class;
        q.seed = state->seed;
        q.selection = selection;
        q.counter = state->counter;
        std::copy(nonce.begin(), nonce.end(), q.nonce.begin());
        q.digest = selection_digest(state->pcrs, selection).take();
        q.signer_key_id = signer.key_id;
        auto sig = crypto::sign(signer, q.to_be_signed());
        q.signature.assign(sig.begin(), sig.end());
        return q;
    }

    Result<WrappedAttestationKey> create_key(const SealedVseState& sealed) {
        auto state = unseal_state(keys_view(), sealed);
        if (!state.ok()) return state.error();
        if (auto st = check_counter(*state); !st.ok()) return st.error();

        auto kp = crypto::gen_signing_key(*rng_);
        Bytes payload;
        put_u32(payload, kp.key_id);
        put_bytes(payload, kp.private_key);
        WrappedAttestationKey ak;
        ak.wrapped_private = crypto::wrap_key(config_.master_wrap_key, config_.master_key_id,
                                              payload, *rng_);
        zeroize(payload);

        pki::SubjectFields f;
        f.kind = pki::SubjectKind::ak;
        f.subject_public_key.assign(kp.public_key.begin(), kp.public_key.end());
        f.seed = state->seed;
        f.tech_class = state->tech_class;
        f.coprocessor_id = config_.coprocessor_id;
        auto cert = pki::issue(config_.identity_key, pki::SubjectKind::coprocessor, f);
        if (!cert.ok()) return cert.error();
        ak.ak_certificate = cert.take();
        return ak;
    }

    // --- admin interface: HMAC key pool management ---

    std::uint32_t gen_hmac_key() {
        auto key = crypto::gen_hmac_key(*rng_);
        std::lock_guard lock(keys_mu_);
        hmac_keys_[key.key_id] = key;
        active_key_id_ = key.key_id;
        return key.key_id;
    }

    /// Wrap {key_id || secret} under the pool master key. The plaintext
    /// secret never leaves this call; the blob decrypts only on a
    /// coprocessor provisioned with the same master key.
    Result<crypto::WrappedKey> export_hmac_key(std::uint32_t key_id) {
        crypto::HmacKey key;
        {
            std::lock_guard lock(keys_mu_);
            auto it = hmac_keys_.find(key_id);
            if (it == hmac_keys_.end())
                return Error{ErrorCode::key_not_found, "unknown hmac key id"};
            key = it->second;
        }
        Bytes payload;
        put_u32(payload, key.key_id);
        put_bytes(payload, key.secret);
        auto wrapped =
            crypto::wrap_key(config_.master_wrap_key, config_.master_key_id, payload, *rng_);
        zeroize(payload);
        return wrapped;
    }

    Result<std::uint32_t> import_hmac_key(const crypto::WrappedKey& wrapped) {
        auto payload = crypto::unwrap_key(config_.master_wrap_key, wrapped);
        if (!payload.ok()) return payload.error();
        if (payload->size() != 4 + crypto::kHmacKeySize)
            return Error{ErrorCode::malformed, "bad hmac key payload"};
        ByteReader r(*payload);
        crypto::HmacKey key;
        r.read_u32(key.key_id);
        r.read_into(key.secret);
        zeroize(*payload);
        if (key.key_id == 0) return Error{ErrorCode::malformed, "zero hmac key id"};
        std::lock_guard lock(keys_mu_);
        hmac_keys_.insert_or_assign(key.key_id, key);  // repeat import is a no-op
        return key.key_id;
    }

    std::uint32_t active_hmac_key_id() const {
        std::lock_guard lock(keys_mu_);
        return active_key_id_ ? active_key_id_ : config_.active_hmac_key.key_id;
    }

    // Counter-table snapshot hooks for the optional shutdown persistence.
    std::map<std::uint64_t, std::uint64_t> counter_snapshot() const { return counters_.snapshot(); }
    void counter_restore(std::map<std::uint64_t, std::uint64_t> entries) {
        counters_.restore(std::move(entries));
    }

  private:
    SealedVseState seal_current(const VseState& state) {
        std::lock_guard lock(keys_mu_);
        std::uint32_t id = active_key_id_ ? active_key_id_ : config_.active_hmac_key.key_id;
        return seal_state(hmac_keys_.at(id), state);
    }

    std::map<std::uint32_t, crypto::HmacKey> keys_view() const {
        std::lock_guard lock(keys_mu_);
        return hmac_keys_;
    }

    Status validate_selection(std::uint32_t selection) const {
        if (selection == 0) return Status(ErrorCode::empty_selection, "selection has no bits set");
        if (selection >> kPcrCount) return Status(ErrorCode::bad_index, "selection beyond pcr 23");
        return {};
    }

    Status check_counter(const VseState& state) {
        if (!state.freshness_enabled()) return {};
        if (!counters_.check(state.vse_id, state.counter))
            return Status(ErrorCode::counter_mismatch, "stale sealed state");
        return {};
    }

    Result<crypto::SigningKeyPair> unwrap_attestation_key(const WrappedAttestationKey& ak) {
        auto payload = crypto::unwrap_key(config_.master_wrap_key, ak.wrapped_private);
        if (!payload.ok())
            return Error{ErrorCode::key_not_found, "attestation key unwrap failed"};
        if (payload->size() != 4 + crypto::kSignPrivateSize)
            return Error{ErrorCode::key_not_found, "bad attestation key payload"};
        ByteReader r(*payload);
        crypto::SigningKeyPair kp;
        r.read_u32(kp.key_id);
        r.read_into(kp.private_key);
        zeroize(*payload);
        // ed25519 secret key carries the public half in its upper 32 bytes
        std::copy(kp.private_key.begin() + 32, kp.private_key.end(), kp.public_key.begin());
        return kp;
    }

    CoprocessorConfig config_;
    std::shared_ptr<crypto::RandomSource> rng_;
    mutable std::mutex keys_mu_;
    std::map<std::uint32_t, crypto::HmacKey> hmac_keys_;
    std::uint32_t active_key_id_ = 0;
    CounterTable counters_;
};

}  // namespace vsemu::coproc
