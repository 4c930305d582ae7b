#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "vsemu/coprocessor.hpp"
#include "vsemu/transport.hpp"
#include "vsemu/vse_state.hpp"
#include "vsemu/wire.hpp"

// VEE-side measuring agent: CRTM bootstrap, boot-layer measurement chain,
// sealed-state custody (zeroize-before-drop), and the deferred/synchronous
// driver. In deferred mode commands are buffered against a shadow bank and
// answered locally; flush replays them in arrival order and must land on a
// bank identical to the shadow.
namespace vsemu::agent {

struct BootLayer {
    std::string name;
    Bytes payload;
    std::uint32_t pcr_index = 0;
};

struct EventLogEntry {
    std::uint32_t pcr_index = 0;
    crypto::Digest measurement;
    std::string description;

    bool operator==(const EventLogEntry&) const = default;
};

using EventLog = std::vector<EventLogEntry>;

inline constexpr const char* kRandomInitDescription = "vse-random-init";

/// Line format: `pcr_index hex(digest) description`.
inline Status save_event_log(const std::string& path, const EventLog& log) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) return Status(ErrorCode::io, "cannot write event log " + path);
    for (const auto& e : log)
        out << e.pcr_index << ' ' << e.measurement.hex() << ' ' << e.description << '\n';
    return {};
}

inline Result<EventLog> load_event_log(const std::string& path) {
    std::ifstream in(path);
    if (!in) return Error{ErrorCode::io, "cannot open event log " + path};
    EventLog log;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream fields(line);
        EventLogEntry e;
        std::string digest_hex;
        if (!(fields >> e.pcr_index >> digest_hex))
            return Error{ErrorCode::malformed, "event log line " + std::to_string(lineno)};
        auto d = crypto::Digest::from_hex(digest_hex);
        if (!d) return Error{ErrorCode::malformed, "event log line " + std::to_string(lineno)};
        e.measurement = *d;
        std::getline(fields, e.description);
        if (!e.description.empty() && e.description.front() == ' ')
            e.description.erase(e.description.begin());
        log.push_back(std::move(e));
    }
    return log;
}

/// Custody wrapper enforcing the state-destruction discipline: installing a
/// successor wipes the superseded blob in place before releasing it. The
/// retirement hook fires after the wipe so tests can observe the (now
/// zeroed) buffer.
class SealedCustody {
  public:
    using RetirementHook = std::function<void(std::span<const std::uint8_t>)>;

    SealedCustody() = default;
    // exactly one owner of the blob: custody moves, never copies
    SealedCustody(const SealedCustody&) = delete;
    SealedCustody& operator=(const SealedCustody&) = delete;
    SealedCustody(SealedCustody&&) = default;
    SealedCustody& operator=(SealedCustody&& other) noexcept {
        if (this != &other) {
            retire();
            current_ = std::move(other.current_);
            hook_ = std::move(other.hook_);
            retired_count_ = other.retired_count_;
            other.current_.clear();
        }
        return *this;
    }

    void install(Bytes blob) {
        retire();
        current_ = std::move(blob);
    }

    void retire() {
        if (current_.empty()) return;
        zeroize(current_);
        if (hook_) hook_(current_);
        ++retired_count_;
        current_.clear();
    }

    const Bytes& current() const { return current_; }
    bool empty() const { return current_.empty(); }
    std::size_t retired_count() const { return retired_count_; }
    void set_retirement_hook(RetirementHook hook) { hook_ = std::move(hook); }

    ~SealedCustody() { retire(); }

  private:
    Bytes current_;
    RetirementHook hook_;
    std::size_t retired_count_ = 0;
};

enum class DriverMode { deferred, synchronous };

struct PendingExtend {
    std::uint32_t pcr_index = 0;
    crypto::Digest measurement;
    std::string description;
};

struct BootOptions {
    DriverMode mode = DriverMode::synchronous;
    // explicit channel wins; otherwise the factory is called with the shim
    // endpoint the broker advertises in the creation response
    std::shared_ptr<transport::Channel> shim;
    std::function<std::shared_ptr<transport::Channel>(const std::string& endpoint)> shim_factory;
    int create_attempts = 3;
};

class Driver {
  public:
    DriverMode mode() const { return mode_; }
    const PcrBank& shadow() const { return shadow_; }
    const EventLog& event_log() const { return log_; }
    const coproc::CreationReceipt& receipt() const { return receipt_; }
    const Bytes& sealed_blob() const { return custody_.current(); }
    SealedCustody& custody() { return custody_; }
    std::size_t buffered() const { return buffer_.size(); }

    /// Deferred mode buffers and answers locally; synchronous mode round
    /// trips to the shim and replaces (wiping) the held sealed state.
    Status extend(std::uint32_t pcr_index, const crypto::Digest& measurement,
                  const std::string& description = {}) {
        if (pcr_index >= kPcrCount)
            return Status(ErrorCode::bad_index, "pcr index out of range");
        if (mode_ == DriverMode::deferred) {
            buffer_.push_back({pcr_index, measurement, description});
            extend_bank(shadow_, pcr_index, measurement);
            log_.push_back({pcr_index, measurement, description});
            return {};
        }
        auto st = send_extend(pcr_index, measurement);
        if (!st.ok()) return st;
        extend_bank(shadow_, pcr_index, measurement);
        log_.push_back({pcr_index, measurement, description});
        return {};
    }

    Result<std::vector<std::pair<std::uint32_t, crypto::Digest>>> read(
        std::uint32_t selection) const {
        if (selection == 0) return Error{ErrorCode::empty_selection, "selection has no bits set"};
        if (selection >> kPcrCount) return Error{ErrorCode::bad_index, "selection beyond pcr 23"};
        if (mode_ == DriverMode::deferred) {
            std::vector<std::pair<std::uint32_t, crypto::Digest>> values;
            for (std::uint32_t i = 0; i < kPcrCount; ++i)
                if (selection & (1u << i)) values.emplace_back(i, shadow_[i]);
            return values;
        }
        wire::Request req;
        req.command = wire::Command::pcr_read;
        req.fields = {custody_.current(), wire::selection_to_field(selection)};
        auto resp = roundtrip_ok(req);
        if (!resp.ok()) return resp.error();
        std::vector<std::pair<std::uint32_t, crypto::Digest>> values;
        for (const auto& f : resp->fields) {
            if (f.size() != 1 + crypto::kDigestSize)
                return Error{ErrorCode::malformed, "bad pcr_read field"};
            crypto::Digest d;
            std::copy(f.begin() + 1, f.end(), d.bytes.begin());
            values.emplace_back(f[0], d);
        }
        return values;
    }

    /// Replay the buffer in arrival order, then hard-assert the
    /// authoritative bank equals the shadow. failed_position (when given)
    /// reports the index of the buffered command that a failure aborted on.
    Status flush(std::size_t* failed_position = nullptr) {
        if (mode_ != DriverMode::deferred)
            return Status(ErrorCode::unsupported, "driver already synchronous");
        for (std::size_t i = 0; i < buffer_.size(); ++i) {
            auto st = send_extend(buffer_[i].pcr_index, buffer_[i].measurement);
            if (!st.ok()) {
                if (failed_position) *failed_position = i;
                return st;
            }
        }
        buffer_.clear();
        mode_ = DriverMode::synchronous;
        auto sealed = SealedVseState::decode(custody_.current());
        if (!sealed.ok()) return Status(ErrorCode::internal, "own sealed state undecodable");
        auto state = decode_state(sealed->plaintext);
        if (!state.ok()) return Status(ErrorCode::internal, "own sealed state undecodable");
        if (!(state->pcrs == shadow_))
            return Status(ErrorCode::shadow_divergence,
                          "authoritative bank diverged from shadow after flush");
        return {};
    }

    Result<coproc::Quote> get_quote(std::uint32_t selection,
                                    std::span<const std::uint8_t> nonce,
                                    const coproc::WrappedAttestationKey* ak = nullptr) const {
        if (mode_ == DriverMode::deferred)
            return Error{ErrorCode::deferred_unavailable, "no quotes before flush"};
        if (selection == 0) return Error{ErrorCode::empty_selection, "selection has no bits set"};
        wire::Request req;
        req.command = wire::Command::quote;
        req.fields = {custody_.current(), wire::selection_to_field(selection),
                      Bytes(nonce.begin(), nonce.end()), ak ? ak->encode() : Bytes{}};
        auto resp = roundtrip_ok(req);
        if (!resp.ok()) return resp.error();
        if (resp->fields.size() != 1) return Error{ErrorCode::malformed, "bad quote response"};
        return coproc::Quote::decode(resp->fields[0]);
    }

    Result<coproc::WrappedAttestationKey> create_key() const {
        if (mode_ == DriverMode::deferred)
            return Error{ErrorCode::deferred_unavailable, "no key creation before flush"};
        wire::Request req;
        req.command = wire::Command::create_key;
        req.fields = {custody_.current()};
        auto resp = roundtrip_ok(req);
        if (!resp.ok()) return resp.error();
        if (resp->fields.size() != 1) return Error{ErrorCode::malformed, "bad key response"};
        return coproc::WrappedAttestationKey::decode(resp->fields[0]);
    }

    /// Deferred mode synthesizes the record from the same compiled-in
    /// constants the shim serves, plus the freshness flag sealed into the
    /// created state.
    Result<wire::Caps> caps() const {
        if (mode_ == DriverMode::deferred) {
            wire::Caps caps;
            caps.freshness_mode = created_with_freshness_;
            caps.commands = wire::Caps::data_path_commands();
            return caps;
        }
        wire::Request req;
        req.command = wire::Command::get_caps;
        auto resp = roundtrip_ok(req);
        if (!resp.ok()) return resp.error();
        return wire::Caps::from_fields(resp->fields);
    }

    void attach_shim(std::shared_ptr<transport::Channel> shim) { shim_ = std::move(shim); }
    const std::string& advertised_shim_endpoint() const { return shim_endpoint_; }

    friend Result<Driver> crtm_boot(transport::Channel& broker_channel, SecretBytes credential,
                                    const std::vector<BootLayer>& layers,
                                    const BootOptions& options);

  private:
    Status send_extend(std::uint32_t pcr_index, const crypto::Digest& measurement) {
        wire::Request req;
        req.command = wire::Command::pcr_extend;
        req.fields = {custody_.current(), Bytes{static_cast<std::uint8_t>(pcr_index)},
                      Bytes(measurement.bytes.begin(), measurement.bytes.end())};
        auto resp = roundtrip_ok(req);
        if (!resp.ok()) return resp.error();
        if (resp->fields.size() != 1 || resp->fields[0].size() != kSealedEncodedSize)
            return Status(ErrorCode::malformed, "bad extend response");
        custody_.install(resp->fields[0]);  // wipes the superseded blob
        return {};
    }

    Result<wire::Response> roundtrip_ok(const wire::Request& req) const {
        if (!shim_) return Error{ErrorCode::transport, "no shim channel attached"};
        auto resp = shim_->roundtrip(req);
        if (!resp.ok()) return resp.error();
        if (resp->status != ErrorCode::ok) return Error{resp->status, "remote error"};
        return resp;
    }

    DriverMode mode_ = DriverMode::synchronous;
    std::vector<PendingExtend> buffer_;
    PcrBank shadow_{};
    SealedCustody custody_;
    EventLog log_;
    std::shared_ptr<transport::Channel> shim_;
    std::string shim_endpoint_;
    coproc::CreationReceipt receipt_;
    bool created_with_freshness_ = false;
};

/// CRTM bootstrap: create the VSE through the broker (3 attempts on
/// transport failure), seed the shadow bank from the receipt, measure each
/// boot layer in order, and erase the credential before returning.
inline Result<Driver> crtm_boot(transport::Channel& broker_channel, SecretBytes credential,
                                const std::vector<BootLayer>& layers,
                                const BootOptions& options) {
    wire::Request req;
    req.command = wire::Command::create_vse;
    req.credential = credential.copy();
    credential.wipe();

    Result<wire::Response> resp{Error{ErrorCode::transport, "unattempted"}};
    for (int attempt = 0; attempt < options.create_attempts; ++attempt) {
        resp = broker_channel.roundtrip(req);
        if (resp.ok() || resp.code() != ErrorCode::transport) break;
    }
    zeroize(req.credential);
    if (!resp.ok()) return resp.error();
    if (resp->status != ErrorCode::ok) return Error{resp->status, "vse creation refused"};
    if (resp->fields.size() != 4) return Error{ErrorCode::malformed, "bad creation response"};

    Driver driver;
    auto sealed = SealedVseState::decode(resp->fields[0]);
    if (!sealed.ok()) return sealed.error();
    auto ek = pki::Certificate::decode(resp->fields[1]);
    if (!ek.ok()) return ek.error();
    driver.receipt_.ek_certificate = ek.take();

    auto created = decode_state(sealed->plaintext);
    if (!created.ok()) return Error{ErrorCode::malformed, "undecodable created state"};
    driver.created_with_freshness_ = created->freshness_enabled();

    if (!resp->fields[2].empty()) {
        if (resp->fields[2].size() != 32)
            return Error{ErrorCode::malformed, "bad random init value"};
        std::array<std::uint8_t, 32> init{};
        std::copy(resp->fields[2].begin(), resp->fields[2].end(), init.begin());
        driver.receipt_.random_init_value = init;
        crypto::Digest init_digest{init};
        extend_bank(driver.shadow_, 0, init_digest);
        driver.log_.push_back({0, init_digest, kRandomInitDescription});
    }

    // custody holds the only copy of the sealed blob; the retained receipt
    // carries certificates and the disclosed init value, never state
    driver.custody_.install(resp->fields[0]);
    driver.mode_ = options.mode;
    driver.shim_endpoint_ = std::string(resp->fields[3].begin(), resp->fields[3].end());
    driver.shim_ = options.shim;
    if (!driver.shim_ && options.shim_factory)
        driver.shim_ = options.shim_factory(driver.shim_endpoint_);

    for (const auto& layer : layers) {
        auto st = driver.extend(layer.pcr_index, crypto::hash(layer.payload), layer.name);
        if (!st.ok()) return st.error();
    }
    return driver;
}

}  // namespace vsemu::agent
