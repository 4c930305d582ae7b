#include <doctest.h>

#include <set>
#include <thread>

#include "oracle.hpp"
#include "vsemu/coprocessor.hpp"

using namespace vsemu;

namespace {

struct Fixture {
    std::shared_ptr<crypto::DeterministicRandom> rng;
    std::shared_ptr<coproc::Coprocessor> cp;
    crypto::SigningKeyPair root_key;
    pki::TrustAnchor anchor;
    pki::Certificate coproc_cert;
    Bytes credential;

    coproc::CreationReceipt create() { return cp->create_vse(credential).take(); }
};

Fixture make_fixture(bool freshness, bool random_init, std::uint64_t seed,
                     std::optional<std::array<std::uint8_t, 32>> master = std::nullopt) {
    Fixture f;
    f.rng = std::make_shared<crypto::DeterministicRandom>(seed);
    f.root_key = crypto::gen_signing_key(*f.rng);
    f.anchor = pki::anchor_from_root_cert(pki::make_self_signed_root(f.root_key).take());

    coproc::CoprocessorConfig cfg;
    cfg.coprocessor_id = f.rng->nonzero_u32();
    cfg.identity_key = crypto::gen_signing_key(*f.rng);
    cfg.identity_key.key_id = cfg.coprocessor_id;
    cfg.master_key_id = f.rng->nonzero_u32();
    if (master)
        cfg.master_wrap_key = *master;
    else
        f.rng->fill(cfg.master_wrap_key);
    cfg.active_hmac_key = crypto::gen_hmac_key(*f.rng);
    cfg.tech_signing_keys[1] = crypto::gen_signing_key(*f.rng);
    f.credential = f.rng->bytes(32);
    cfg.credential_registry[crypto::hash(f.credential)] = 1;
    cfg.freshness_mode = freshness;
    cfg.random_init_mode = random_init;

    pki::SubjectFields subject;
    subject.kind = pki::SubjectKind::coprocessor;
    subject.subject_public_key.assign(cfg.identity_key.public_key.begin(),
                                      cfg.identity_key.public_key.end());
    subject.coprocessor_id = cfg.coprocessor_id;
    f.coproc_cert = pki::issue(f.root_key, pki::SubjectKind::root, subject).take();

    f.cp = std::make_shared<coproc::Coprocessor>(std::move(cfg), f.rng);
    return f;
}

}  // namespace

TEST_CASE("create_vse issues a zeroed bank with both modes off") {
    auto f = make_fixture(false, false, 41);
    auto receipt = f.cp->create_vse(f.credential);
    REQUIRE(receipt.ok());

    auto state = decode_state(receipt->sealed_state.plaintext).take();
    CHECK(state.counter == 0);
    CHECK(!state.freshness_enabled());
    CHECK(!state.random_init_applied());
    for (const auto& pcr : state.pcrs) CHECK(pcr == crypto::Digest{});
    CHECK(!receipt->random_init_value.has_value());

    // the EK certificate binds seed and tech class and chains to the root
    auto facts = pki::verify_chain(receipt->ek_certificate, {f.coproc_cert}, f.anchor);
    REQUIRE(facts.ok());
    CHECK(facts->seed == state.seed);
    CHECK(facts->tech_class == state.tech_class);
    CHECK(state.tech_class == 1);
}

TEST_CASE("create_vse refuses unknown credentials") {
    auto f = make_fixture(false, false, 42);
    CHECK(f.cp->create_vse(f.rng->bytes(32)).code() == ErrorCode::auth_failed);
    CHECK(f.cp->create_vse(Bytes{}).code() == ErrorCode::auth_failed);
}

TEST_CASE("random-init mode extends PCR0 with the disclosed value before sealing") {
    auto f = make_fixture(false, true, 43);
    auto receipt = f.create();
    REQUIRE(receipt.random_init_value.has_value());

    auto state = decode_state(receipt.sealed_state.plaintext).take();
    oracle::Register zeros{};
    CHECK(state.pcrs[0].bytes == oracle::extend(zeros, *receipt.random_init_value));
    CHECK(state.random_init_applied());
    CHECK(receipt.ek_certificate.random_init_value == receipt.random_init_value);
}

TEST_CASE("pcr_extend matches the oracle chain and advances the counter") {
    auto f = make_fixture(true, false, 44);
    auto receipt = f.create();

    crypto::Digest m;
    f.rng->fill(m.bytes);
    auto next = f.cp->pcr_extend(receipt.sealed_state, 0, m);
    REQUIRE(next.ok());

    auto state = decode_state(next->plaintext).take();
    oracle::Register zeros{};
    CHECK(state.pcrs[0].bytes == oracle::extend(zeros, m.bytes));
    CHECK(state.counter == 1);

    SUBCASE("stale blob is refused in freshness mode") {
        auto replay = f.cp->pcr_extend(receipt.sealed_state, 0, m);
        CHECK(replay.code() == ErrorCode::counter_mismatch);
    }
    SUBCASE("current blob keeps extending") {
        auto again = f.cp->pcr_extend(*next, 1, m);
        REQUIRE(again.ok());
        CHECK(decode_state(again->plaintext).take().counter == 2);
    }
    SUBCASE("tampered blob fails the envelope check") {
        auto bad = *next;
        bad.plaintext[100] ^= 0x01;
        CHECK(f.cp->pcr_extend(bad, 0, m).code() == ErrorCode::bad_hmac);
    }
    SUBCASE("out-of-range index") {
        CHECK(f.cp->pcr_extend(*next, 24, m).code() == ErrorCode::bad_index);
    }
}

TEST_CASE("racing extends with the same blob: exactly one wins") {
    auto f = make_fixture(true, false, 45);
    auto receipt = f.create();
    crypto::Digest m;
    f.rng->fill(m.bytes);

    for (int round = 0; round < 20; ++round) {
        ErrorCode a = ErrorCode::internal, b = ErrorCode::internal;
        Result<SealedVseState> ra{Error{}}, rb{Error{}};
        std::thread t1([&] { ra = f.cp->pcr_extend(receipt.sealed_state, 0, m); a = ra.code(); });
        std::thread t2([&] { rb = f.cp->pcr_extend(receipt.sealed_state, 0, m); b = rb.code(); });
        t1.join();
        t2.join();
        bool one_ok = (a == ErrorCode::ok) != (b == ErrorCode::ok);
        CHECK(one_ok);
        CHECK((a == ErrorCode::counter_mismatch || b == ErrorCode::counter_mismatch));
        receipt.sealed_state = (a == ErrorCode::ok ? ra : rb).take();
    }
}

TEST_CASE("pcr_read returns selected registers without consuming the counter") {
    auto f = make_fixture(true, false, 46);
    auto receipt = f.create();

    auto fresh = f.cp->pcr_read(receipt.sealed_state, 0x000001);
    REQUIRE(fresh.ok());
    REQUIRE(fresh->size() == 1);
    CHECK((*fresh)[0].first == 0);
    CHECK((*fresh)[0].second == crypto::Digest{});

    crypto::Digest m;
    f.rng->fill(m.bytes);
    auto next = f.cp->pcr_extend(receipt.sealed_state, 0, m).take();

    auto read1 = f.cp->pcr_read(next, 0x000001);
    REQUIRE(read1.ok());
    oracle::Register zeros{};
    CHECK((*read1)[0].second.bytes == oracle::extend(zeros, m.bytes));

    // reads are idempotent: the same blob reads again and still extends
    REQUIRE(f.cp->pcr_read(next, 0x000001).ok());
    CHECK(f.cp->pcr_extend(next, 0, m).ok());

    CHECK(f.cp->pcr_read(next, 0).code() == ErrorCode::empty_selection);
}

TEST_CASE("quote binds digest, nonce, seed, and counter under the tech key") {
    auto f = make_fixture(false, false, 47);
    auto receipt = f.create();
    auto state = decode_state(receipt.sealed_state.plaintext).take();

    std::array<std::uint8_t, 32> nonce{};
    f.rng->fill(nonce);
    auto quote = f.cp->quote(receipt.sealed_state, 0x000001, nonce);
    REQUIRE(quote.ok());

    oracle::Register zeros{};
    CHECK(quote->digest.bytes == oracle::sha256(zeros));
    CHECK(quote->seed == state.seed);
    CHECK(quote->counter == 0);
    CHECK(quote->nonce == nonce);

    const auto& tech_pub = f.cp->config().tech_signing_keys.at(1).public_key;
    CHECK(crypto::verify(tech_pub, quote->to_be_signed(), quote->signature));

    SUBCASE("different nonce, different signature, same digest") {
        std::array<std::uint8_t, 32> nonce2{};
        f.rng->fill(nonce2);
        auto quote2 = f.cp->quote(receipt.sealed_state, 0x000001, nonce2);
        REQUIRE(quote2.ok());
        CHECK(quote2->digest == quote->digest);
        CHECK(quote2->signature != quote->signature);
    }
    SUBCASE("quote codec round-trips") {
        auto back = coproc::Quote::decode(quote->encode());
        REQUIRE(back.ok());
        CHECK(*back == *quote);
    }
    SUBCASE("empty selection refused") {
        CHECK(f.cp->quote(receipt.sealed_state, 0, nonce).code() == ErrorCode::empty_selection);
    }
}

TEST_CASE("create_key yields a certified attestation key usable for quoting") {
    auto f = make_fixture(false, false, 48);
    auto receipt = f.create();

    auto ak = f.cp->create_key(receipt.sealed_state);
    REQUIRE(ak.ok());

    // the AK certificate chains to the manufacturer root and carries the seed
    auto facts = pki::verify_chain(ak->ak_certificate, {f.coproc_cert}, f.anchor);
    REQUIRE(facts.ok());
    auto state = decode_state(receipt.sealed_state.plaintext).take();
    CHECK(facts->seed == state.seed);

    std::array<std::uint8_t, 32> nonce{};
    f.rng->fill(nonce);
    auto quote = f.cp->quote(receipt.sealed_state, 0x000001, nonce, &*ak);
    REQUIRE(quote.ok());
    CHECK(crypto::verify(ak->ak_certificate.subject_public_key, quote->to_be_signed(),
                         quote->signature));

    SUBCASE("attestation keys are unique") {
        auto ak2 = f.cp->create_key(receipt.sealed_state);
        REQUIRE(ak2.ok());
        CHECK(ak->ak_certificate.subject_public_key != ak2->ak_certificate.subject_public_key);
    }
    SUBCASE("tampered sealed input") {
        auto bad = receipt.sealed_state;
        bad.tag[0] ^= 0x01;
        CHECK(f.cp->create_key(bad).code() == ErrorCode::bad_hmac);
    }
    SUBCASE("AK wrapped under a foreign master key is unusable") {
        auto other = make_fixture(false, false, 480);
        auto other_receipt = other.cp->create_vse(other.credential).take();
        auto foreign_ak = other.cp->create_key(other_receipt.sealed_state).take();
        CHECK(f.cp->quote(receipt.sealed_state, 1, nonce, &foreign_ak).code() ==
              ErrorCode::key_not_found);
    }
}

TEST_CASE("hmac key pool: generate, export wrapped, import on a peer") {
    std::array<std::uint8_t, 32> shared_master{};
    crypto::DeterministicRandom master_rng(490);
    master_rng.fill(shared_master);

    auto a = make_fixture(false, false, 49, shared_master);
    auto b = make_fixture(false, false, 50, shared_master);
    auto receipt = a.create();

    // before distribution, B rejects A's sealed state (unknown key id)
    crypto::Digest m;
    a.rng->fill(m.bytes);
    CHECK(b.cp->pcr_extend(receipt.sealed_state, 0, m).code() == ErrorCode::bad_hmac);

    auto wrapped = a.cp->export_hmac_key(a.cp->active_hmac_key_id());
    REQUIRE(wrapped.ok());
    auto imported = b.cp->import_hmac_key(*wrapped);
    REQUIRE(imported.ok());
    CHECK(*imported == a.cp->active_hmac_key_id());

    auto extended = b.cp->pcr_extend(receipt.sealed_state, 0, m);
    REQUIRE(extended.ok());
    oracle::Register zeros{};
    CHECK(decode_state(extended->plaintext).take().pcrs[0].bytes ==
          oracle::extend(zeros, m.bytes));

    SUBCASE("repeat import is idempotent") {
        CHECK(b.cp->import_hmac_key(*wrapped).ok());
        CHECK(b.cp->pcr_extend(receipt.sealed_state, 1, m).ok());
    }
    SUBCASE("bit-flipped export blob fails authentication") {
        auto bad = *wrapped;
        bad.ciphertext[3] ^= 0x10;
        CHECK(b.cp->import_hmac_key(bad).code() == ErrorCode::auth_failed);
    }
    SUBCASE("a coprocessor with a different master cannot import") {
        auto c = make_fixture(false, false, 51);
        CHECK(c.cp->import_hmac_key(*wrapped).code() == ErrorCode::auth_failed);
    }
    SUBCASE("export blobs differ across runs and hide the secret") {
        auto wrapped2 = a.cp->export_hmac_key(a.cp->active_hmac_key_id()).take();
        CHECK(wrapped2.ciphertext != wrapped->ciphertext);
        CHECK(wrapped2.nonce != wrapped->nonce);
    }
}

TEST_CASE("statelessness: no retained objects without freshness mode") {
    auto f = make_fixture(false, false, 52);
    CHECK(f.cp->retained_object_count() == 0);
    for (int i = 0; i < 500; ++i) {
        auto receipt = f.create();
        crypto::Digest m;
        f.rng->fill(m.bytes);
        auto next = f.cp->pcr_extend(receipt.sealed_state, 0, m);
        REQUIRE(next.ok());
    }
    CHECK(f.cp->retained_object_count() == 0);
}

TEST_CASE("freshness mode retains exactly one counter entry per VSE") {
    auto f = make_fixture(true, false, 53);
    std::set<std::uint64_t> vse_ids;
    for (int i = 0; i < 100; ++i) {
        auto receipt = f.create();
        vse_ids.insert(decode_state(receipt.sealed_state.plaintext).take().vse_id);
    }
    CHECK(vse_ids.size() == 100);
    CHECK(f.cp->retained_object_count() == 100);
}

TEST_CASE("quote verification survives only unmodified bytes: 1k mutation trials") {
    auto f = make_fixture(false, false, 55);
    auto receipt = f.create();
    std::array<std::uint8_t, 32> nonce{};
    f.rng->fill(nonce);
    auto quote = f.cp->quote(receipt.sealed_state, 0x000007, nonce).take();
    const auto& pub = f.cp->config().tech_signing_keys.at(1).public_key;
    REQUIRE(crypto::verify(pub, quote.to_be_signed(), quote.signature));

    crypto::DeterministicRandom fuzz(550);
    for (int trial = 0; trial < 1000; ++trial) {
        auto enc = quote.encode();
        enc[fuzz.next_u64() % enc.size()] ^=
            static_cast<std::uint8_t>(1u << (fuzz.next_u32() % 8));
        auto mutated = coproc::Quote::decode(enc);
        if (!mutated.ok()) continue;  // refused before any signature check
        CHECK(!crypto::verify(pub, mutated->to_be_signed(), mutated->signature));
    }
}

TEST_CASE("counter snapshot save/restore keeps replay detection") {
    auto f = make_fixture(true, false, 54);
    auto receipt = f.create();
    crypto::Digest m;
    f.rng->fill(m.bytes);
    auto next = f.cp->pcr_extend(receipt.sealed_state, 0, m).take();

    auto snapshot = f.cp->counter_snapshot();
    auto g = make_fixture(true, false, 54);  // same config by seed
    g.cp->counter_restore(snapshot);
    CHECK(g.cp->pcr_extend(receipt.sealed_state, 0, m).code() == ErrorCode::counter_mismatch);
    CHECK(g.cp->pcr_extend(next, 0, m).ok());
}
