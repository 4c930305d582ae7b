#include <doctest.h>

#include "vsemu/attack.hpp"

using namespace vsemu;

TEST_CASE("replay with counters is detected as COUNTER_MISMATCH") {
    auto report = attack::scenario_replay(true);
    CHECK(report.scenario == "replay");
    CHECK(report.variant == "freshness_on");
    CHECK(report.detected);
    CHECK(report.error_code == "COUNTER_MISMATCH");
    CHECK(report.honest_control_ok);
}

TEST_CASE("replay without counters goes through when discipline is violated") {
    auto report = attack::scenario_replay(false);
    CHECK(report.variant == "freshness_off");
    CHECK(!report.detected);  // attack demonstrated
    CHECK(report.honest_control_ok);
}

TEST_CASE("reset without a credential is refused outright") {
    auto report = attack::scenario_reset("no_credential");
    CHECK(report.detected);
    CHECK(report.error_code == "AUTH_FAILED");
    CHECK(report.honest_control_ok);
}

TEST_CASE("golden replay against a random-initialized VSE is rejected") {
    auto report = attack::scenario_reset("golden_replay");
    CHECK(report.detected);
    CHECK(report.honest_control_ok);
}

TEST_CASE("relay succeeds and surfaces only through the original identity") {
    auto report = attack::scenario_relay();
    CHECK(!report.detected);  // limitation demonstrated
    CHECK(report.honest_control_ok);  // accepted + original seed observed
}

TEST_CASE("tampered envelopes always fail as BAD_HMAC") {
    auto report = attack::scenario_tamper();
    CHECK(report.detected);
    CHECK(report.error_code == "BAD_HMAC");
    CHECK(report.honest_control_ok);
}

TEST_CASE("scenarios are deterministic under a fixed seed") {
    auto a = attack::scenario_replay(true, 1234);
    auto b = attack::scenario_replay(true, 1234);
    CHECK(a.to_json() == b.to_json());
}

TEST_CASE("reports serialize with the stable field set") {
    auto j = attack::scenario_tamper().to_json();
    for (const char* key : {"scenario", "variant", "detected", "error_code", "notes"})
        CHECK(j.contains(key));
}
