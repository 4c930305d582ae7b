#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "vsemu/coprocessor.hpp"
#include "vsemu/crypto.hpp"
#include "vsemu/pki.hpp"
#include "vsemu/result.hpp"

// On-disk formats: raw binary for certificates, sealed states, and quotes;
// JSON for key material and coprocessor configs. A config file stands in for
// the provisioning that would happen inside a real coprocessor's secure
// boundary, which is why it carries key material (see README).
namespace vsemu::fileio {

inline Result<Bytes> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return Error{ErrorCode::io, "cannot open " + path};
    Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return data;
}

inline Status write_file(const std::string& path, std::span<const std::uint8_t> data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) return Status(ErrorCode::io, "cannot write " + path);
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size()));
    return out ? Status() : Status(ErrorCode::io, "short write to " + path);
}

inline Status save_signing_key(const std::string& path, const crypto::SigningKeyPair& key) {
    nlohmann::json j = {{"key_id", key.key_id},
                        {"private_key_hex", to_hex(key.private_key)},
                        {"public_key_hex", to_hex(key.public_key)}};
    std::ofstream out(path, std::ios::trunc);
    if (!out) return Status(ErrorCode::io, "cannot write " + path);
    out << j.dump(2) << '\n';
    return {};
}

inline Result<crypto::SigningKeyPair> load_signing_key(const std::string& path) {
    std::ifstream in(path);
    if (!in) return Error{ErrorCode::io, "cannot open " + path};
    nlohmann::json j;
    try {
        in >> j;
        auto priv = from_hex(j.at("private_key_hex").get<std::string>());
        if (!priv) return Error{ErrorCode::malformed, "bad private key hex in " + path};
        return crypto::signing_key_from_private(*priv, j.at("key_id").get<std::uint32_t>());
    } catch (const nlohmann::json::exception& e) {
        return Error{ErrorCode::malformed, path + ": " + e.what()};
    }
}

inline Status save_coproc_config(const std::string& path, const coproc::CoprocessorConfig& cfg) {
    nlohmann::json tech = nlohmann::json::object();
    for (const auto& [cls, key] : cfg.tech_signing_keys)
        tech[std::to_string(cls)] = {{"key_id", key.key_id},
                                     {"private_key_hex", to_hex(key.private_key)}};
    nlohmann::json j = {{"coprocessor_id", cfg.coprocessor_id},
                        {"identity_private_key_hex", to_hex(cfg.identity_key.private_key)},
                        {"master_key_id", cfg.master_key_id},
                        {"master_wrap_key_hex", to_hex(cfg.master_wrap_key)},
                        {"hmac_key_id", cfg.active_hmac_key.key_id},
                        {"hmac_secret_hex", to_hex(cfg.active_hmac_key.secret)},
                        {"tech_signing_keys", tech},
                        {"freshness_mode", cfg.freshness_mode},
                        {"random_init_mode", cfg.random_init_mode}};
    std::ofstream out(path, std::ios::trunc);
    if (!out) return Status(ErrorCode::io, "cannot write " + path);
    out << j.dump(2) << '\n';
    return {};
}

/// Credential registry is deliberately not part of the config; the broker
/// merges it from the registry file at startup.
inline Result<coproc::CoprocessorConfig> load_coproc_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) return Error{ErrorCode::io, "cannot open " + path};
    nlohmann::json j;
    try {
        in >> j;
        coproc::CoprocessorConfig cfg;
        cfg.coprocessor_id = j.at("coprocessor_id").get<std::uint32_t>();
        auto identity = from_hex(j.at("identity_private_key_hex").get<std::string>());
        if (!identity) return Error{ErrorCode::malformed, "bad identity key in " + path};
        auto identity_key = crypto::signing_key_from_private(*identity, cfg.coprocessor_id);
        if (!identity_key.ok()) return identity_key.error();
        cfg.identity_key = identity_key.take();
        cfg.master_key_id = j.at("master_key_id").get<std::uint32_t>();
        auto master = from_hex(j.at("master_wrap_key_hex").get<std::string>());
        if (!master || master->size() != cfg.master_wrap_key.size())
            return Error{ErrorCode::malformed, "bad master key in " + path};
        std::copy(master->begin(), master->end(), cfg.master_wrap_key.begin());
        cfg.active_hmac_key.key_id = j.at("hmac_key_id").get<std::uint32_t>();
        auto secret = from_hex(j.at("hmac_secret_hex").get<std::string>());
        if (!secret || secret->size() != cfg.active_hmac_key.secret.size())
            return Error{ErrorCode::malformed, "bad hmac secret in " + path};
        std::copy(secret->begin(), secret->end(), cfg.active_hmac_key.secret.begin());
        for (const auto& [cls, key_json] : j.at("tech_signing_keys").items()) {
            auto priv = from_hex(key_json.at("private_key_hex").get<std::string>());
            if (!priv) return Error{ErrorCode::malformed, "bad tech key in " + path};
            auto key = crypto::signing_key_from_private(
                *priv, key_json.at("key_id").get<std::uint32_t>());
            if (!key.ok()) return key.error();
            cfg.tech_signing_keys[static_cast<std::uint8_t>(std::stoul(cls))] = key.take();
        }
        cfg.freshness_mode = j.at("freshness_mode").get<bool>();
        cfg.random_init_mode = j.at("random_init_mode").get<bool>();
        return cfg;
    } catch (const nlohmann::json::exception& e) {
        return Error{ErrorCode::malformed, path + ": " + e.what()};
    } catch (const std::exception& e) {
        return Error{ErrorCode::malformed, path + ": " + e.what()};
    }
}

inline Result<pki::Certificate> load_certificate(const std::string& path) {
    auto data = read_file(path);
    if (!data.ok()) return data.error();
    return pki::Certificate::decode(*data);
}

inline Status save_counter_snapshot(const std::string& path,
                                    const std::map<std::uint64_t, std::uint64_t>& entries) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) return Status(ErrorCode::io, "cannot write " + path);
    for (const auto& [vse_id, counter] : entries) out << vse_id << ' ' << counter << '\n';
    return {};
}

inline Result<std::map<std::uint64_t, std::uint64_t>> load_counter_snapshot(
    const std::string& path) {
    std::ifstream in(path);
    if (!in) return Error{ErrorCode::io, "cannot open " + path};
    std::map<std::uint64_t, std::uint64_t> entries;
    std::uint64_t vse_id = 0, counter = 0;
    while (in >> vse_id >> counter) entries[vse_id] = counter;
    return entries;
}

}  // namespace vsemu::fileio
