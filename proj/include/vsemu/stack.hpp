#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "vsemu/broker.hpp"
#include "vsemu/client_agent.hpp"
#include "vsemu/coprocessor.hpp"
#include "vsemu/pki.hpp"
#include "vsemu/shim.hpp"
#include "vsemu/transport.hpp"
#include "vsemu/verifier.hpp"

// One-call assembly of a complete in-process deployment: root CA,
// coprocessor, broker, shim, credentials, and the certificates a verifier
// needs. Attack scenarios, benches, and tests all start from here.
namespace vsemu::stack {

struct StackOptions {
    bool freshness_mode = false;
    bool random_init_mode = false;
    std::vector<std::uint8_t> tech_classes = {1};
    std::uint64_t rng_seed = 0;  // 0 = system randomness
    std::string shim_endpoint = "127.0.0.1:0";
};

struct LocalStack {
    std::shared_ptr<crypto::RandomSource> rng;
    crypto::SigningKeyPair root_key;
    pki::Certificate root_cert;
    pki::TrustAnchor anchor;
    std::shared_ptr<coproc::Coprocessor> coprocessor;
    pki::Certificate coprocessor_cert;
    std::map<std::uint8_t, pki::Certificate> tech_certs;  // class-wide signer certs
    std::map<std::uint8_t, Bytes> credentials;            // tech class -> CRTM credential
    Bytes admin_credential;
    std::shared_ptr<broker::BrokerService> broker_service;
    std::shared_ptr<shim::ShimService> shim_service;
    std::shared_ptr<transport::Channel> broker_channel;
    std::shared_ptr<transport::Channel> admin_channel;
    std::shared_ptr<transport::Channel> shim_channel;

    verifier::AttestationPolicy base_policy() const {
        verifier::AttestationPolicy policy;
        policy.trusted_root = anchor;
        for (const auto& [tech, cred] : credentials) policy.accepted_tech_classes.insert(tech);
        return policy;
    }

    verifier::CertificateBundle bundle_for(const pki::Certificate& ek_cert,
                                           std::uint8_t tech_class) const {
        return {coprocessor_cert, ek_cert, tech_certs.at(tech_class)};
    }
};

inline LocalStack make_stack(const StackOptions& options = {}) {
    LocalStack s;
    s.rng = options.rng_seed
                ? std::shared_ptr<crypto::RandomSource>(
                      std::make_shared<crypto::DeterministicRandom>(options.rng_seed))
                : std::make_shared<crypto::SystemRandom>();

    s.root_key = crypto::gen_signing_key(*s.rng);
    s.root_cert = pki::make_self_signed_root(s.root_key).take();
    s.anchor = pki::anchor_from_root_cert(s.root_cert);

    coproc::CoprocessorConfig cfg;
    cfg.coprocessor_id = s.rng->nonzero_u32();
    cfg.identity_key = crypto::gen_signing_key(*s.rng);
    cfg.identity_key.key_id = cfg.coprocessor_id;
    cfg.master_key_id = s.rng->nonzero_u32();
    s.rng->fill(cfg.master_wrap_key);
    cfg.active_hmac_key = crypto::gen_hmac_key(*s.rng);
    cfg.freshness_mode = options.freshness_mode;
    cfg.random_init_mode = options.random_init_mode;

    for (auto tech : options.tech_classes) {
        cfg.tech_signing_keys[tech] = crypto::gen_signing_key(*s.rng);
        Bytes cred = s.rng->bytes(32);
        cfg.credential_registry[crypto::hash(cred)] = tech;
        s.credentials[tech] = std::move(cred);
    }

    pki::SubjectFields coproc_subject;
    coproc_subject.kind = pki::SubjectKind::coprocessor;
    coproc_subject.subject_public_key.assign(cfg.identity_key.public_key.begin(),
                                             cfg.identity_key.public_key.end());
    coproc_subject.coprocessor_id = cfg.coprocessor_id;
    s.coprocessor_cert = pki::issue(s.root_key, pki::SubjectKind::root, coproc_subject).take();

    for (auto& [tech, key] : cfg.tech_signing_keys) {
        pki::SubjectFields f;
        f.kind = pki::SubjectKind::ak;
        f.subject_public_key.assign(key.public_key.begin(), key.public_key.end());
        f.tech_class = tech;
        f.coprocessor_id = cfg.coprocessor_id;
        s.tech_certs[tech] = pki::issue(cfg.identity_key, pki::SubjectKind::coprocessor, f).take();
    }

    s.admin_credential = s.rng->bytes(32);
    broker::BrokerConfig broker_cfg;
    broker_cfg.shim_endpoint = options.shim_endpoint;
    broker_cfg.admin_credential_hash = crypto::hash(s.admin_credential);

    s.coprocessor = std::make_shared<coproc::Coprocessor>(std::move(cfg), s.rng);
    s.broker_service = std::make_shared<broker::BrokerService>(s.coprocessor, broker_cfg);
    s.shim_service = std::make_shared<shim::ShimService>(s.coprocessor);

    s.broker_channel = std::make_shared<transport::InProcChannel>(s.broker_service->handler());
    s.admin_channel =
        std::make_shared<transport::InProcChannel>(s.broker_service->admin_handler());
    s.shim_channel = std::make_shared<transport::InProcChannel>(s.shim_service->handler());
    return s;
}

}  // namespace vsemu::stack
