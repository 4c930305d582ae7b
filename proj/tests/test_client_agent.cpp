#include <doctest.h>

#include <filesystem>

#include "oracle.hpp"
#include "vsemu/client_agent.hpp"
#include "vsemu/stack.hpp"
#include "vsemu/verifier.hpp"

using namespace vsemu;

namespace {

/// Channel that always fails with a transport error and counts attempts.
class DeadChannel final : public transport::Channel {
  public:
    Result<wire::Response> roundtrip(const wire::Request&) override {
        ++attempts;
        return Error{ErrorCode::transport, "unreachable"};
    }
    int attempts = 0;
};

std::vector<agent::BootLayer> three_layers() {
    return {{"firmware", to_bytes("firmware image"), 0},
            {"kernel", to_bytes("kernel image"), 1},
            {"rootfs", to_bytes("root filesystem"), 2}};
}

oracle::Bank oracle_for_layers(const std::vector<agent::BootLayer>& layers,
                               const std::optional<std::array<std::uint8_t, 32>>& init) {
    std::vector<std::pair<std::uint32_t, oracle::Register>> schedule;
    if (init) schedule.emplace_back(0, *init);
    for (const auto& l : layers) schedule.emplace_back(l.pcr_index, oracle::measure(l.payload));
    return oracle::replay(schedule);
}

void check_bank_equals(const PcrBank& bank, const oracle::Bank& expect) {
    for (std::size_t i = 0; i < kPcrCount; ++i) CHECK(bank[i].bytes == expect[i]);
}

}  // namespace

TEST_CASE("synchronous boot measures layers in order and matches the oracle") {
    auto s = stack::make_stack({.rng_seed = 71});
    agent::BootOptions opts{agent::DriverMode::synchronous, s.shim_channel};
    auto layers = three_layers();
    auto driver =
        agent::crtm_boot(*s.broker_channel, SecretBytes(s.credentials.at(1)), layers, opts);
    REQUIRE(driver.ok());

    auto expect = oracle_for_layers(layers, std::nullopt);
    check_bank_equals(driver->shadow(), expect);
    CHECK(driver->event_log().size() == 3);

    // authoritative sealed bank agrees with the shadow
    auto state = decode_state(SealedVseState::decode(driver->sealed_blob()).take().plaintext);
    REQUIRE(state.ok());
    check_bank_equals(state->pcrs, expect);
}

TEST_CASE("random-init boot seeds the shadow and adds the first log entry") {
    auto s = stack::make_stack({.random_init_mode = true, .rng_seed = 72});
    agent::BootOptions opts{agent::DriverMode::synchronous, s.shim_channel};
    auto layers = three_layers();
    auto driver =
        agent::crtm_boot(*s.broker_channel, SecretBytes(s.credentials.at(1)), layers, opts);
    REQUIRE(driver.ok());

    REQUIRE(driver->receipt().random_init_value.has_value());
    CHECK(driver->event_log().size() == 4);
    CHECK(driver->event_log()[0].description == agent::kRandomInitDescription);
    check_bank_equals(driver->shadow(),
                      oracle_for_layers(layers, driver->receipt().random_init_value));
}

TEST_CASE("empty layer list boots with an empty (or init-only) log") {
    auto s = stack::make_stack({.rng_seed = 73});
    agent::BootOptions opts{agent::DriverMode::synchronous, s.shim_channel};
    auto driver = agent::crtm_boot(*s.broker_channel, SecretBytes(s.credentials.at(1)), {}, opts);
    REQUIRE(driver.ok());
    CHECK(driver->event_log().empty());
    CHECK(driver->shadow() == PcrBank{});
}

TEST_CASE("unreachable broker fails after exactly 3 attempts") {
    DeadChannel dead;
    agent::BootOptions opts{agent::DriverMode::synchronous, nullptr};
    auto driver = agent::crtm_boot(dead, SecretBytes(Bytes(32, 1)), {}, opts);
    CHECK(driver.code() == ErrorCode::transport);
    CHECK(dead.attempts == 3);
}

TEST_CASE("deferred extends stay local: zero shim round trips until flush") {
    auto s = stack::make_stack({.rng_seed = 74});
    auto spy = std::make_shared<transport::SpyChannel>(s.shim_channel);
    agent::BootOptions opts{agent::DriverMode::deferred, spy};
    auto layers = three_layers();
    auto driver =
        agent::crtm_boot(*s.broker_channel, SecretBytes(s.credentials.at(1)), layers, opts);
    REQUIRE(driver.ok());

    CHECK(spy->round_trips() == 0);
    CHECK(driver->buffered() == 3);

    crypto::Digest m;
    m.bytes[0] = 0xaa;
    REQUIRE(driver->extend(5, m).ok());
    CHECK(spy->round_trips() == 0);

    // reads served from the shadow, still no traffic
    auto values = driver->read(1u << 5);
    REQUIRE(values.ok());
    CHECK(spy->round_trips() == 0);

    REQUIRE(driver->flush().ok());
    CHECK(spy->round_trips() == 4);  // one per buffered extend
    CHECK(driver->mode() == agent::DriverMode::synchronous);
}

TEST_CASE("synchronous extend advances the sealed counter in freshness mode") {
    auto s = stack::make_stack({.freshness_mode = true, .rng_seed = 75});
    agent::BootOptions opts{agent::DriverMode::synchronous, s.shim_channel};
    auto driver = agent::crtm_boot(*s.broker_channel, SecretBytes(s.credentials.at(1)), {}, opts);
    REQUIRE(driver.ok());

    crypto::Digest m;
    m.bytes[1] = 1;
    REQUIRE(driver->extend(7, m).ok());
    auto state = decode_state(SealedVseState::decode(driver->sealed_blob()).take().plaintext);
    REQUIRE(state.ok());
    CHECK(state->counter == 1);
    REQUIRE(driver->extend(7, m).ok());
    state = decode_state(SealedVseState::decode(driver->sealed_blob()).take().plaintext);
    CHECK(state->counter == 2);
}

TEST_CASE("bad index is rejected locally and nothing is buffered") {
    auto s = stack::make_stack({.rng_seed = 76});
    auto spy = std::make_shared<transport::SpyChannel>(s.shim_channel);
    agent::BootOptions opts{agent::DriverMode::deferred, spy};
    auto driver = agent::crtm_boot(*s.broker_channel, SecretBytes(s.credentials.at(1)), {}, opts);
    REQUIRE(driver.ok());

    crypto::Digest m;
    CHECK(driver->extend(24, m).code() == ErrorCode::bad_index);
    CHECK(driver->buffered() == 0);
    CHECK(spy->round_trips() == 0);
}

TEST_CASE("reads: deferred shadow values equal post-flush authoritative values") {
    auto s = stack::make_stack({.rng_seed = 77});
    agent::BootOptions opts{agent::DriverMode::deferred, s.shim_channel};
    auto driver = agent::crtm_boot(*s.broker_channel, SecretBytes(s.credentials.at(1)),
                                   three_layers(), opts);
    REQUIRE(driver.ok());

    const std::uint32_t selection = 0b111;
    auto before = driver->read(selection).take();
    REQUIRE(driver->flush().ok());
    auto after = driver->read(selection).take();
    CHECK(before == after);

    CHECK(driver->read(0).code() == ErrorCode::empty_selection);
}

TEST_CASE("flush replays the buffer in order; reflushing is an error") {
    auto s = stack::make_stack({.rng_seed = 78});
    agent::BootOptions opts{agent::DriverMode::deferred, s.shim_channel};
    auto driver = agent::crtm_boot(*s.broker_channel, SecretBytes(s.credentials.at(1)), {}, opts);
    REQUIRE(driver.ok());

    crypto::DeterministicRandom rng(780);
    oracle::Bank bank{};
    for (int i = 0; i < 100; ++i) {
        std::uint32_t index = rng.next_u32() % 24;
        crypto::Digest m;
        rng.fill(m.bytes);
        REQUIRE(driver->extend(index, m).ok());
        bank[index] = oracle::extend(bank[index], m.bytes);
    }
    REQUIRE(driver->flush().ok());
    check_bank_equals(driver->shadow(), bank);

    auto state = decode_state(SealedVseState::decode(driver->sealed_blob()).take().plaintext);
    check_bank_equals(state->pcrs, bank);

    CHECK(!driver->flush().ok());
}

TEST_CASE("freshness: a foreign extend interposed mid-flush aborts with position") {
    auto s = stack::make_stack({.freshness_mode = true, .rng_seed = 79});
    agent::BootOptions opts{agent::DriverMode::deferred, s.shim_channel};
    auto driver = agent::crtm_boot(*s.broker_channel, SecretBytes(s.credentials.at(1)), {}, opts);
    REQUIRE(driver.ok());

    crypto::Digest m;
    for (int i = 0; i < 5; ++i) {
        m.bytes[0] = static_cast<std::uint8_t>(i);
        REQUIRE(driver->extend(2, m).ok());
    }

    // adversary interposes: extends with the agent's current blob directly,
    // advancing the coprocessor counter behind the agent's back
    auto stolen = SealedVseState::decode(driver->sealed_blob()).take();
    crypto::Digest foreign;
    foreign.bytes[31] = 0xff;
    REQUIRE(s.coprocessor->pcr_extend(stolen, 9, foreign).ok());

    std::size_t failed_at = 999;
    auto st = driver->flush(&failed_at);
    CHECK(st.code() == ErrorCode::counter_mismatch);
    CHECK(failed_at == 0);
}

TEST_CASE("a shim that diverges from the schedule trips the flush assertion") {
    auto s = stack::make_stack({.rng_seed = 790});
    // byzantine shim: applies every extend to PCR 9 regardless of the request
    auto hostile = std::make_shared<transport::InProcChannel>(
        [&s](const wire::Request& req) -> wire::Response {
            if (req.command != wire::Command::pcr_extend) return s.shim_service->handle(req);
            auto redirected = req;
            redirected.fields[1] = Bytes{9};
            return s.shim_service->handle(redirected);
        });

    agent::BootOptions opts{agent::DriverMode::deferred, hostile};
    auto driver = agent::crtm_boot(*s.broker_channel, SecretBytes(s.credentials.at(1)), {}, opts);
    REQUIRE(driver.ok());
    crypto::Digest m;
    m.bytes[2] = 0x42;
    REQUIRE(driver->extend(3, m).ok());
    CHECK(driver->flush().code() == ErrorCode::shadow_divergence);
}

TEST_CASE("quotes are refused in deferred mode and verify after flush") {
    auto s = stack::make_stack({.rng_seed = 80});
    agent::BootOptions opts{agent::DriverMode::deferred, s.shim_channel};
    auto layers = three_layers();
    auto driver =
        agent::crtm_boot(*s.broker_channel, SecretBytes(s.credentials.at(1)), layers, opts);
    REQUIRE(driver.ok());

    std::array<std::uint8_t, 32> nonce{};
    s.rng->fill(nonce);
    CHECK(driver->get_quote(0b111, nonce).code() == ErrorCode::deferred_unavailable);

    REQUIRE(driver->flush().ok());
    auto quote = driver->get_quote(0b111, nonce);
    REQUIRE(quote.ok());

    auto policy = s.base_policy();
    policy.selection = 0b111;
    auto log = driver->event_log();
    auto verdict = verifier::verify_quote(*quote, nonce,
                                          s.bundle_for(driver->receipt().ek_certificate, 1),
                                          policy, &log);
    CHECK(verdict.accepted);

    CHECK(driver->get_quote(0, nonce).code() == ErrorCode::empty_selection);
}

TEST_CASE("deferred-then-flush equals fully synchronous, byte for byte") {
    for (std::uint64_t seed : {81u, 82u, 83u}) {
        auto s = stack::make_stack({.rng_seed = 1000 + seed});
        crypto::DeterministicRandom schedule_rng(seed);

        std::vector<agent::BootLayer> layers;
        auto n_layers = 1 + schedule_rng.next_u32() % 8;
        for (std::uint32_t i = 0; i < n_layers; ++i)
            layers.push_back({"layer" + std::to_string(i), schedule_rng.bytes(20),
                              schedule_rng.next_u32() % 24});

        agent::BootOptions deferred{agent::DriverMode::deferred, s.shim_channel};
        auto d1 = agent::crtm_boot(*s.broker_channel, SecretBytes(s.credentials.at(1)), layers,
                                   deferred);
        REQUIRE(d1.ok());
        REQUIRE(d1->flush().ok());

        agent::BootOptions sync{agent::DriverMode::synchronous, s.shim_channel};
        auto d2 =
            agent::crtm_boot(*s.broker_channel, SecretBytes(s.credentials.at(1)), layers, sync);
        REQUIRE(d2.ok());

        CHECK(d1->shadow() == d2->shadow());
        auto s1 = decode_state(SealedVseState::decode(d1->sealed_blob()).take().plaintext);
        auto s2 = decode_state(SealedVseState::decode(d2->sealed_blob()).take().plaintext);
        CHECK(s1->pcrs == s2->pcrs);
    }
}

TEST_CASE("custody wipes every superseded sealed blob") {
    auto s = stack::make_stack({.rng_seed = 84});
    agent::BootOptions opts{agent::DriverMode::synchronous, s.shim_channel};
    auto driver = agent::crtm_boot(*s.broker_channel, SecretBytes(s.credentials.at(1)), {}, opts);
    REQUIRE(driver.ok());

    std::size_t retired_all_zero = 0;
    driver->custody().set_retirement_hook([&](std::span<const std::uint8_t> retired) {
        bool all_zero = std::all_of(retired.begin(), retired.end(), [](auto b) { return !b; });
        CHECK(retired.size() == kSealedEncodedSize);
        if (all_zero) ++retired_all_zero;
    });

    crypto::Digest m;
    for (int i = 0; i < 10; ++i) {
        m.bytes[0] = static_cast<std::uint8_t>(i);
        REQUIRE(driver->extend(1, m).ok());
    }
    CHECK(retired_all_zero == 10);
    CHECK(driver->custody().retired_count() >= 10);
}

TEST_CASE("event log replays to the authoritative bank and survives disk") {
    auto s = stack::make_stack({.random_init_mode = true, .rng_seed = 85});
    agent::BootOptions opts{agent::DriverMode::synchronous, s.shim_channel};
    auto layers = three_layers();
    auto driver =
        agent::crtm_boot(*s.broker_channel, SecretBytes(s.credentials.at(1)), layers, opts);
    REQUIRE(driver.ok());

    auto replayed = verifier::replay_log(driver->event_log(), 0b111);
    REQUIRE(replayed.ok());
    auto state = decode_state(SealedVseState::decode(driver->sealed_blob()).take().plaintext);
    CHECK(*replayed == selection_digest(state->pcrs, 0b111).take());

    auto path = (std::filesystem::temp_directory_path() /
                 ("vsemu_log_" + std::to_string(::getpid()) + ".txt"))
                    .string();
    auto log = driver->event_log();
    log.push_back({11, crypto::hash(to_bytes("x")), "description with spaces"});
    REQUIRE(agent::save_event_log(path, log).ok());
    auto loaded = agent::load_event_log(path);
    REQUIRE(loaded.ok());
    CHECK(*loaded == log);
    std::filesystem::remove(path);
}

TEST_CASE("deferred caps equal the shim's caps") {
    auto s = stack::make_stack({.freshness_mode = true, .rng_seed = 86});
    agent::BootOptions opts{agent::DriverMode::deferred, s.shim_channel};
    auto driver = agent::crtm_boot(*s.broker_channel, SecretBytes(s.credentials.at(1)), {}, opts);
    REQUIRE(driver.ok());

    auto deferred_caps = driver->caps();
    REQUIRE(deferred_caps.ok());
    REQUIRE(driver->flush().ok());
    auto live_caps = driver->caps();
    REQUIRE(live_caps.ok());
    CHECK(*deferred_caps == *live_caps);
}

TEST_CASE("credential is wiped after boot") {
    auto s = stack::make_stack({.rng_seed = 87});
    SecretBytes cred(s.credentials.at(1));
    agent::BootOptions opts{agent::DriverMode::synchronous, s.shim_channel};
    auto driver = agent::crtm_boot(*s.broker_channel, std::move(cred), {}, opts);
    REQUIRE(driver.ok());
    CHECK(cred.empty());  // moved-from and wiped
}
