#include <doctest.h>

#include "vsemu/pki.hpp"

using namespace vsemu;

namespace {

struct Chain {
    crypto::SigningKeyPair root_key;
    crypto::SigningKeyPair identity_key;
    pki::TrustAnchor anchor;
    pki::Certificate coproc_cert;
    pki::Certificate leaf;
};

Chain make_chain(crypto::RandomSource& rng, pki::SubjectKind leaf_kind = pki::SubjectKind::ek) {
    Chain c;
    c.root_key = crypto::gen_signing_key(rng);
    c.anchor = pki::anchor_from_root_cert(pki::make_self_signed_root(c.root_key).take());

    c.identity_key = crypto::gen_signing_key(rng);
    std::uint32_t coproc_id = rng.nonzero_u32();
    c.identity_key.key_id = coproc_id;

    pki::SubjectFields coproc;
    coproc.kind = pki::SubjectKind::coprocessor;
    coproc.subject_public_key.assign(c.identity_key.public_key.begin(),
                                     c.identity_key.public_key.end());
    coproc.coprocessor_id = coproc_id;
    c.coproc_cert = pki::issue(c.root_key, pki::SubjectKind::root, coproc).take();

    pki::SubjectFields leaf;
    leaf.kind = leaf_kind;
    leaf.coprocessor_id = coproc_id;
    std::array<std::uint8_t, 32> seed{};
    rng.fill(seed);
    leaf.seed = seed;
    leaf.tech_class = 3;
    if (leaf_kind == pki::SubjectKind::ak) {
        auto ak = crypto::gen_signing_key(rng);
        leaf.subject_public_key.assign(ak.public_key.begin(), ak.public_key.end());
    }
    c.leaf = pki::issue(c.identity_key, pki::SubjectKind::coprocessor, leaf).take();
    return c;
}

}  // namespace

TEST_CASE("issue authorizations follow root->coprocessor->leaf") {
    crypto::DeterministicRandom rng(21);
    auto root = crypto::gen_signing_key(rng);
    auto identity = crypto::gen_signing_key(rng);

    pki::SubjectFields coproc;
    coproc.kind = pki::SubjectKind::coprocessor;
    coproc.subject_public_key.assign(identity.public_key.begin(), identity.public_key.end());
    auto cert = pki::issue(root, pki::SubjectKind::root, coproc);
    REQUIRE(cert.ok());
    CHECK(crypto::verify(root.public_key, cert->to_be_signed(), cert->signature));

    pki::SubjectFields ek;
    ek.kind = pki::SubjectKind::ek;
    std::array<std::uint8_t, 32> seed{};
    rng.fill(seed);
    ek.seed = seed;
    auto ek_cert = pki::issue(identity, pki::SubjectKind::coprocessor, ek);
    REQUIRE(ek_cert.ok());
    CHECK(ek_cert->seed == seed);

    // an ek may not issue anything
    CHECK(!pki::issue(identity, pki::SubjectKind::ek, ek).ok());
    // root may not sign leaves directly
    CHECK(!pki::issue(root, pki::SubjectKind::root, ek).ok());
}

TEST_CASE("certificate codec round-trips with and without optional fields") {
    crypto::DeterministicRandom rng(22);
    auto chain = make_chain(rng, pki::SubjectKind::ak);

    for (const auto& cert : {chain.coproc_cert, chain.leaf}) {
        auto decoded = pki::Certificate::decode(cert.encode());
        REQUIRE(decoded.ok());
        CHECK(*decoded == cert);
    }

    auto truncated = chain.leaf.encode();
    truncated.resize(truncated.size() / 2);
    CHECK(!pki::Certificate::decode(truncated).ok());
}

TEST_CASE("verify_chain accepts a valid 3-link chain and reports facts") {
    crypto::DeterministicRandom rng(23);
    auto chain = make_chain(rng);

    auto facts = pki::verify_chain(chain.leaf, {chain.coproc_cert}, chain.anchor);
    REQUIRE(facts.ok());
    CHECK(facts->seed == chain.leaf.seed);
    CHECK(facts->tech_class == chain.leaf.tech_class);
    CHECK(facts->coprocessor_id == chain.leaf.coprocessor_id);
    CHECK(facts->leaf_kind == pki::SubjectKind::ek);
}

TEST_CASE("broken chain reports the failing link index") {
    crypto::DeterministicRandom rng(24);
    auto chain = make_chain(rng);

    SUBCASE("flipped signature in the intermediate -> index 1") {
        auto bad = chain.coproc_cert;
        bad.signature[10] ^= 0x01;
        auto r = pki::verify_chain(chain.leaf, {bad}, chain.anchor);
        REQUIRE(!r.ok());
        CHECK(r.code() == ErrorCode::broken_chain);
        CHECK(pki::broken_chain_index(r.error()) == 1);
    }
    SUBCASE("wrong root -> index 0") {
        auto other_root = crypto::gen_signing_key(rng);
        auto wrong = pki::anchor_from_root_cert(pki::make_self_signed_root(other_root).take());
        auto r = pki::verify_chain(chain.leaf, {chain.coproc_cert}, wrong);
        REQUIRE(!r.ok());
        CHECK(pki::broken_chain_index(r.error()) == 0);
    }
    SUBCASE("flipped leaf signature -> index 2") {
        auto bad = chain.leaf;
        bad.signature[0] ^= 0x01;
        auto r = pki::verify_chain(bad, {chain.coproc_cert}, chain.anchor);
        REQUIRE(!r.ok());
        CHECK(pki::broken_chain_index(r.error()) == 2);
    }
}

TEST_CASE("any single-field mutation breaks the chain") {
    crypto::DeterministicRandom rng(25);
    auto chain = make_chain(rng, pki::SubjectKind::ak);

    auto verify = [&](const pki::Certificate& leaf, const pki::Certificate& inter) {
        return pki::verify_chain(leaf, {inter}, chain.anchor).ok();
    };
    REQUIRE(verify(chain.leaf, chain.coproc_cert));

    for (int trial = 0; trial < 1000; ++trial) {
        bool mutate_leaf = rng.next_u32() % 2 == 0;
        auto encoded = (mutate_leaf ? chain.leaf : chain.coproc_cert).encode();
        std::size_t pos = rng.next_u64() % encoded.size();
        std::uint8_t bit = static_cast<std::uint8_t>(1u << (rng.next_u32() % 8));
        encoded[pos] ^= bit;
        auto reparsed = pki::Certificate::decode(encoded);
        if (!reparsed.ok()) continue;  // structural damage is a clean rejection
        bool ok = mutate_leaf ? verify(*reparsed, chain.coproc_cert)
                              : verify(chain.leaf, *reparsed);
        CHECK(!ok);
    }
}
