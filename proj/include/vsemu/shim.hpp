#pragma once

#include <cstdint>
#include <memory>
#include <utility>

#include "vsemu/coprocessor.hpp"
#include "vsemu/transport.hpp"
#include "vsemu/wire.hpp"

// Stateless translator between the wire protocol's TPM-subset commands and
// coprocessor primitives. Every mutating response carries the new sealed
// state; nothing about a VSE survives between requests.
namespace vsemu::shim {

class ShimService {
  public:
    explicit ShimService(std::shared_ptr<coproc::Coprocessor> coprocessor)
        : coprocessor_(std::move(coprocessor)) {}

    wire::Caps caps() const {
        wire::Caps caps;
        caps.freshness_mode = coprocessor_->freshness_mode();
        caps.commands = wire::Caps::data_path_commands();
        return caps;
    }

    wire::Response handle(const wire::Request& req) const {
        switch (req.command) {
            case wire::Command::get_caps:
                return wire::Response{ErrorCode::ok, caps().to_fields()};
            case wire::Command::pcr_extend: return handle_extend(req);
            case wire::Command::pcr_read: return handle_read(req);
            case wire::Command::quote: return handle_quote(req);
            case wire::Command::create_key: return handle_create_key(req);
            case wire::Command::create_vse:
                return wire::Response::failure(ErrorCode::unsupported);
            default:
                // admin commands live on the broker's admin listener only
                return wire::Response::failure(ErrorCode::auth_failed);
        }
    }

    transport::Handler handler() const {
        return [self = *this](const wire::Request& req) { return self.handle(req); };
    }

  private:
    static Result<SealedVseState> sealed_from_field(const Bytes& field) {
        return SealedVseState::decode(field);
    }

    wire::Response handle_extend(const wire::Request& req) const {
        if (req.fields.size() != 3 || req.fields[1].size() != 1 ||
            req.fields[2].size() != crypto::kDigestSize)
            return wire::Response::failure(ErrorCode::malformed);
        auto sealed = sealed_from_field(req.fields[0]);
        if (!sealed.ok()) return wire::Response::failure(sealed.error().code);
        crypto::Digest m;
        std::copy(req.fields[2].begin(), req.fields[2].end(), m.bytes.begin());
        auto out = coprocessor_->pcr_extend(*sealed, req.fields[1][0], m);
        if (!out.ok()) return wire::Response::failure(out.error().code);
        return wire::Response{ErrorCode::ok, {out->encode()}};
    }

    wire::Response handle_read(const wire::Request& req) const {
        if (req.fields.size() != 2) return wire::Response::failure(ErrorCode::malformed);
        auto sealed = sealed_from_field(req.fields[0]);
        if (!sealed.ok()) return wire::Response::failure(sealed.error().code);
        auto selection = wire::selection_from_field(req.fields[1]);
        if (!selection.ok()) return wire::Response::failure(selection.error().code);
        auto values = coprocessor_->pcr_read(*sealed, *selection);
        if (!values.ok()) return wire::Response::failure(values.error().code);
        wire::Response resp;
        for (const auto& [index, digest] : *values) {
            Bytes f;
            put_u8(f, static_cast<std::uint8_t>(index));
            put_bytes(f, digest.bytes);
            resp.fields.push_back(std::move(f));
        }
        return resp;
    }

    wire::Response handle_quote(const wire::Request& req) const {
        if (req.fields.size() != 4 || req.fields[2].size() != 32)
            return wire::Response::failure(ErrorCode::malformed);
        auto sealed = sealed_from_field(req.fields[0]);
        if (!sealed.ok()) return wire::Response::failure(sealed.error().code);
        auto selection = wire::selection_from_field(req.fields[1]);
        if (!selection.ok()) return wire::Response::failure(selection.error().code);
        std::optional<coproc::WrappedAttestationKey> ak;
        if (!req.fields[3].empty()) {
            auto decoded = coproc::WrappedAttestationKey::decode(req.fields[3]);
            if (!decoded.ok()) return wire::Response::failure(decoded.error().code);
            ak = decoded.take();
        }
        auto quote =
            coprocessor_->quote(*sealed, *selection, req.fields[2], ak ? &*ak : nullptr);
        if (!quote.ok()) return wire::Response::failure(quote.error().code);
        return wire::Response{ErrorCode::ok, {quote->encode()}};
    }

    wire::Response handle_create_key(const wire::Request& req) const {
        if (req.fields.size() != 1) return wire::Response::failure(ErrorCode::malformed);
        auto sealed = sealed_from_field(req.fields[0]);
        if (!sealed.ok()) return wire::Response::failure(sealed.error().code);
        auto ak = coprocessor_->create_key(*sealed);
        if (!ak.ok()) return wire::Response::failure(ak.error().code);
        return wire::Response{ErrorCode::ok, {ak->encode()}};
    }

    std::shared_ptr<coproc::Coprocessor> coprocessor_;
};

}  // namespace vsemu::shim
