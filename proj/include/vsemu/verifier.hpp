#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "vsemu/client_agent.hpp"
#include "vsemu/coprocessor.hpp"
#include "vsemu/pki.hpp"
#include "vsemu/vse_state.hpp"

// Tenant-side verification: certificate chain, quote signature, nonce
// freshness, event-log replay, and the golden-digest policy. Failures are
// verdict entries, never thrown errors: every check is evaluated so an
// attack scenario can name the exact check it trips.
namespace vsemu::verifier {

struct AttestationPolicy {
    pki::TrustAnchor trusted_root;
    std::optional<std::array<std::uint8_t, 32>> expected_seed;
    std::set<std::uint8_t> accepted_tech_classes;
    std::optional<crypto::Digest> golden_digest;
    std::uint32_t selection = 1;  // 24-bit map the quote must cover
};

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct Verdict {
    bool accepted = false;
    std::vector<CheckResult> checks;

    const CheckResult* find(const std::string& name) const {
        for (const auto& c : checks)
            if (c.name == name) return &c;
        return nullptr;
    }

    nlohmann::json to_json() const {
        nlohmann::json checks_json = nlohmann::json::array();
        for (const auto& c : checks)
            checks_json.push_back({{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
        return {{"accepted", accepted}, {"checks", checks_json}};
    }
};

/// Certificates accompanying a quote: coprocessor identity (root-signed),
/// the VSE's EK certificate, and the certificate of the key that signed the
/// quote (class-wide technology key or per-VSE attestation key).
struct CertificateBundle {
    pki::Certificate coprocessor_cert;
    pki::Certificate ek_cert;
    pki::Certificate signer_cert;
};

/// Extend a zeroed bank by every log entry in order, then digest the
/// selection. The log's first entry is the random-init record when the VSE
/// was random-initialized.
inline Result<crypto::Digest> replay_log(const agent::EventLog& log, std::uint32_t selection) {
    PcrBank bank{};
    for (const auto& entry : log) {
        auto st = extend_bank(bank, entry.pcr_index, entry.measurement);
        if (!st.ok()) return st.error();
    }
    return selection_digest(bank, selection);
}

/// The digest an honest boot of exactly these layers produces.
inline Result<crypto::Digest> compute_golden(
    const std::vector<agent::BootLayer>& layers,
    const std::optional<std::array<std::uint8_t, 32>>& random_init, std::uint32_t selection) {
    PcrBank bank{};
    if (random_init) extend_bank(bank, 0, crypto::Digest{*random_init});
    for (const auto& layer : layers) {
        auto st = extend_bank(bank, layer.pcr_index, crypto::hash(layer.payload));
        if (!st.ok()) return st.error();
    }
    return selection_digest(bank, selection);
}

inline Verdict verify_quote(const coproc::Quote& quote,
                            std::span<const std::uint8_t> expected_nonce,
                            const CertificateBundle& chain, const AttestationPolicy& policy,
                            const agent::EventLog* log = nullptr) {
    Verdict verdict;
    auto add = [&](std::string name, bool pass, std::string detail = {}) {
        verdict.checks.push_back({std::move(name), pass, std::move(detail)});
    };

    // chain_coprocessor / chain_ek / chain_signer
    std::vector<pki::Certificate> inter = {chain.coprocessor_cert};
    bool coproc_ok =
        chain.coprocessor_cert.subject_kind == pki::SubjectKind::coprocessor &&
        crypto::verify(policy.trusted_root.public_key, chain.coprocessor_cert.to_be_signed(),
                       chain.coprocessor_cert.signature) &&
        chain.coprocessor_cert.issuer_key_id == policy.trusted_root.key_id;
    add("chain_coprocessor", coproc_ok, coproc_ok ? "" : "identity cert does not chain to root");

    auto ek_facts = pki::verify_chain(chain.ek_cert, inter, policy.trusted_root);
    bool ek_ok = ek_facts.ok() && chain.ek_cert.subject_kind == pki::SubjectKind::ek &&
                 chain.ek_cert.seed.has_value();
    add("chain_ek", ek_ok, ek_ok ? "" : (ek_facts.ok() ? "not an ek certificate"
                                                       : ek_facts.error().to_string()));

    auto signer_facts = pki::verify_chain(chain.signer_cert, inter, policy.trusted_root);
    bool signer_ok = signer_facts.ok() &&
                     chain.signer_cert.subject_kind == pki::SubjectKind::ak &&
                     !chain.signer_cert.subject_public_key.empty();
    add("chain_signer", signer_ok,
        signer_ok ? "" : (signer_facts.ok() ? "not a signing certificate"
                                            : signer_facts.error().to_string()));

    // signature over the quote body under the certified signer key
    bool sig_ok = signer_ok && crypto::verify(chain.signer_cert.subject_public_key,
                                              quote.to_be_signed(), quote.signature);
    add("signature", sig_ok, sig_ok ? "" : "quote signature invalid");

    bool nonce_ok = expected_nonce.size() == quote.nonce.size() &&
                    ct_equal(expected_nonce, quote.nonce);
    add("nonce", nonce_ok, nonce_ok ? "" : "nonce mismatch");

    bool tech_ok = policy.accepted_tech_classes.contains(quote.tech_class) &&
                   chain.ek_cert.tech_class && *chain.ek_cert.tech_class == quote.tech_class &&
                   (!chain.signer_cert.tech_class ||
                    *chain.signer_cert.tech_class == quote.tech_class);
    add("tech_class", tech_ok,
        tech_ok ? "" : "tech class " + std::to_string(quote.tech_class) + " not accepted");

    bool seed_ok = chain.ek_cert.seed && *chain.ek_cert.seed == quote.seed;
    if (seed_ok && chain.signer_cert.seed) seed_ok = *chain.signer_cert.seed == quote.seed;
    if (seed_ok && policy.expected_seed) seed_ok = *policy.expected_seed == quote.seed;
    add("seed", seed_ok, seed_ok ? "" : "seed does not match the expected identity");

    bool selection_ok = quote.selection == policy.selection;
    add("selection", selection_ok, selection_ok ? "" : "quote covers a different pcr selection");

    // random-init binding: a random-initialized VSE must open its log with
    // the exact init value certified in the EK certificate
    if (log && chain.ek_cert.random_init_value) {
        bool init_ok = !log->empty() && (*log)[0].pcr_index == 0 &&
                       (*log)[0].measurement.bytes == *chain.ek_cert.random_init_value;
        add("random_init_binding", init_ok,
            init_ok ? "" : "log does not start with the certified random-init entry");
    }

    bool digest_ok = false;
    std::string digest_detail;
    if (policy.golden_digest) {
        digest_ok = quote.digest == *policy.golden_digest;
        if (!digest_ok) digest_detail = "digest does not match golden reference";
    } else if (log) {
        auto replayed = replay_log(*log, policy.selection);
        digest_ok = replayed.ok() && *replayed == quote.digest;
        if (!digest_ok)
            digest_detail = replayed.ok() ? "digest does not match replayed event log"
                                          : replayed.error().to_string();
    } else {
        digest_detail = "no golden digest and no event log configured";
    }
    add("digest", digest_ok, digest_detail);

    verdict.accepted = true;
    for (const auto& c : verdict.checks) verdict.accepted = verdict.accepted && c.pass;
    return verdict;
}

}  // namespace vsemu::verifier
