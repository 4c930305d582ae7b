#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <utility>

#include "vsemu/coprocessor.hpp"
#include "vsemu/transport.hpp"
#include "vsemu/wire.hpp"

// Credential-gated VSE creation service plus the separate admin interface
// that distributes the pool HMAC key between coprocessors.
namespace vsemu::broker {

using CredentialRegistry = std::map<crypto::Digest, std::uint8_t>;

/// Registry file: one line per credential,
/// `hex(credential_hash) <space> tech_class <space> label`.
inline Result<CredentialRegistry> registry_load(const std::string& path) {
    std::ifstream in(path);
    if (!in) return Error{ErrorCode::io, "cannot open registry " + path};
    CredentialRegistry registry;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream fields(line);
        std::string hash_hex, label;
        unsigned tech = 0;
        if (!(fields >> hash_hex >> tech >> label) || tech > 0xff)
            return Error{ErrorCode::malformed,
                         "registry line " + std::to_string(lineno) + " malformed"};
        auto digest = crypto::Digest::from_hex(hash_hex);
        if (!digest)
            return Error{ErrorCode::malformed,
                         "registry line " + std::to_string(lineno) + " bad hash"};
        auto [it, inserted] = registry.emplace(*digest, static_cast<std::uint8_t>(tech));
        if (!inserted)
            return Error{ErrorCode::malformed,
                         "registry line " + std::to_string(lineno) + " duplicate credential"};
    }
    return registry;
}

inline Status registry_append(const std::string& path, const crypto::Digest& credential_hash,
                              std::uint8_t tech_class, const std::string& label) {
    std::ofstream out(path, std::ios::app);
    if (!out) return Status(ErrorCode::io, "cannot open registry " + path);
    out << credential_hash.hex() << ' ' << unsigned(tech_class) << ' ' << label << '\n';
    return {};
}

struct BrokerConfig {
    std::string shim_endpoint;         // advertised to clients in every receipt
    crypto::Digest admin_credential_hash{};  // gate for the admin listener
};

class BrokerService {
  public:
    BrokerService(std::shared_ptr<coproc::Coprocessor> coprocessor, BrokerConfig config)
        : coprocessor_(std::move(coprocessor)), config_(std::move(config)) {}

    /// Data-path listener: CREATE_VSE only.
    wire::Response handle(const wire::Request& req) const {
        if (req.command != wire::Command::create_vse)
            return wire::Response::failure(wire::is_admin_command(req.command)
                                               ? ErrorCode::auth_failed
                                               : ErrorCode::unsupported);
        if (req.credential.empty()) return wire::Response::failure(ErrorCode::auth_failed);
        auto receipt = coprocessor_->create_vse(req.credential);
        if (!receipt.ok()) return wire::Response::failure(receipt.error().code);
        wire::Response resp;
        resp.fields.push_back(receipt->sealed_state.encode());
        resp.fields.push_back(receipt->ek_certificate.encode());
        Bytes init;
        if (receipt->random_init_value)
            init.assign(receipt->random_init_value->begin(), receipt->random_init_value->end());
        resp.fields.push_back(std::move(init));
        resp.fields.push_back(to_bytes(config_.shim_endpoint));
        return resp;
    }

    /// Admin listener: HMAC key pool management, gated on the admin
    /// credential. Runs on its own port; data commands are refused here.
    wire::Response handle_admin(const wire::Request& req) const {
        if (!wire::is_admin_command(req.command))
            return wire::Response::failure(ErrorCode::unsupported);
        auto presented = crypto::hash(req.credential);
        if (req.credential.empty() || !(presented == config_.admin_credential_hash))
            return wire::Response::failure(ErrorCode::auth_failed);
        switch (req.command) {
            case wire::Command::gen_hmac_key: {
                auto id = coprocessor_->gen_hmac_key();
                Bytes f;
                put_u32(f, id);
                return wire::Response{ErrorCode::ok, {std::move(f)}};
            }
            case wire::Command::export_hmac_key: {
                if (req.fields.size() != 1 || req.fields[0].size() != 4)
                    return wire::Response::failure(ErrorCode::malformed);
                ByteReader r(req.fields[0]);
                std::uint32_t key_id = 0;
                r.read_u32(key_id);
                auto wrapped = coprocessor_->export_hmac_key(key_id);
                if (!wrapped.ok()) return wire::Response::failure(wrapped.error().code);
                return wire::Response{ErrorCode::ok, {wrapped->encode()}};
            }
            case wire::Command::import_hmac_key: {
                if (req.fields.size() != 1)
                    return wire::Response::failure(ErrorCode::malformed);
                auto wrapped = crypto::WrappedKey::decode(req.fields[0]);
                if (!wrapped.ok()) return wire::Response::failure(wrapped.error().code);
                auto id = coprocessor_->import_hmac_key(*wrapped);
                if (!id.ok()) return wire::Response::failure(id.error().code);
                Bytes f;
                put_u32(f, *id);
                return wire::Response{ErrorCode::ok, {std::move(f)}};
            }
            default: return wire::Response::failure(ErrorCode::unsupported);
        }
    }

    transport::Handler handler() const {
        return [self = *this](const wire::Request& req) { return self.handle(req); };
    }

    transport::Handler admin_handler() const {
        return [self = *this](const wire::Request& req) { return self.handle_admin(req); };
    }

  private:
    std::shared_ptr<coproc::Coprocessor> coprocessor_;
    BrokerConfig config_;
};

/// Move the origin's active HMAC key into the target coprocessor via the
/// wrapped-export path. The plaintext secret stays inside the two
/// coprocessors; distribution fails unless they share the master key.
inline Status admin_distribute_hmac_key(coproc::Coprocessor& origin,
                                        coproc::Coprocessor& target) {
    auto wrapped = origin.export_hmac_key(origin.active_hmac_key_id());
    if (!wrapped.ok()) return wrapped.error();
    auto imported = target.import_hmac_key(*wrapped);
    if (!imported.ok()) return imported.error();
    return {};
}

}  // namespace vsemu::broker
