#include <doctest.h>

#include "vsemu/bench.hpp"
#include "vsemu/stack.hpp"

using namespace vsemu;

TEST_CASE("percentiles over a known distribution") {
    std::vector<std::uint64_t> v;
    for (std::uint64_t i = 1; i <= 100; ++i) v.push_back(i);
    CHECK(bench::percentile_us(v, 0.50) == 50);
    CHECK(bench::percentile_us(v, 0.99) == 99);
    std::vector<std::uint64_t> empty;
    CHECK(bench::percentile_us(empty, 0.5) == 0);
}

TEST_CASE("linear fit recovers an exact line and rates noise") {
    std::vector<double> xs = {100, 500, 1000, 5000, 10000};
    std::vector<double> ys;
    for (auto x : xs) ys.push_back(3.5 * x + 42);
    auto fit = bench::fit_linear(xs, ys);
    CHECK(fit.slope == doctest::Approx(3.5));
    CHECK(fit.intercept == doctest::Approx(42));
    CHECK(fit.r2 == doctest::Approx(1.0));

    std::vector<double> flat = {1, 9, 2, 8, 3};
    CHECK(bench::fit_linear(xs, flat).r2 < 0.5);
}

TEST_CASE("sweep monotonicity self-check tolerates jitter, flags regressions") {
    auto mk = [](std::vector<std::uint64_t> lag_means) {
        std::vector<bench::SweepPoint> points;
        double rate = 100;
        for (auto p : lag_means) {
            bench::SweepPoint pt;
            pt.offered_rate = rate;
            pt.stats.sched_mean_us = p;
            points.push_back(pt);
            rate *= 2;
        }
        return points;
    };
    CHECK(bench::sweep_is_monotone(mk({1500, 1600, 2400, 6000, 42000})));
    CHECK(bench::sweep_is_monotone(mk({1500, 1400, 1700, 2300, 31000})));  // dips are jitter
    CHECK(bench::sweep_is_monotone(mk({300, 700, 240, 900, 14000})));  // below the noise floor
    CHECK(!bench::sweep_is_monotone(mk({16000, 1500, 20000})));
    CHECK(!bench::sweep_is_monotone(mk({1200, 52000, 9000})));
}

TEST_CASE("open loop drives roughly rate*duration ops with zero errors") {
    auto factory = [](std::size_t) -> Result<bench::WorkerOp> {
        return bench::WorkerOp([]() -> Status { return {}; });
    };
    auto stats = bench::run_open_loop("noop", factory, 2, 200, 1.0);
    CHECK(stats.errors == 0);
    CHECK(stats.ops > 150);
    CHECK(stats.ops < 260);
    CHECK(stats.achieved_rate > 100);
}

TEST_CASE("extend and quote workers run against an in-process stack") {
    auto s = stack::make_stack({.rng_seed = 111});
    bench::OpsEnv env;
    env.broker = [&] { return s.broker_channel; };
    env.shim = [&] { return s.shim_channel; };
    env.credential = s.credentials.at(1);

    auto extend_stats =
        bench::run_open_loop("extend", bench::extend_worker_factory(env), 2, 400, 0.5);
    CHECK(extend_stats.errors == 0);
    CHECK(extend_stats.ops > 50);

    auto quote_stats =
        bench::run_open_loop("quote", bench::quote_worker_factory(env), 2, 400, 0.5);
    CHECK(quote_stats.errors == 0);
    CHECK(quote_stats.ops > 50);
}

TEST_CASE("spawn bench counts creations and reports rss") {
    auto s = stack::make_stack({.freshness_mode = true, .rng_seed = 112});
    auto stats = bench::bench_spawn(*s.broker_channel, s.credentials.at(1), 50);
    CHECK(stats.errors == 0);
    CHECK(stats.count == 50);
    CHECK(stats.total_elapsed_s > 0);
    CHECK(stats.rss_kb > 0);
    CHECK(s.coprocessor->retained_object_count() == 50);

    auto empty = bench::bench_spawn(*s.broker_channel, s.credentials.at(1), 0);
    CHECK(empty.count == 0);
    CHECK(empty.p50_us == 0);
}

TEST_CASE("stats serialize to the documented JSON schema") {
    bench::BenchStats stats;
    stats.op = "extend";
    auto j = stats.to_json();
    for (const char* key :
         {"op", "target_rate", "achieved_rate", "p50_us", "p95_us", "p99_us", "errors"})
        CHECK(j.contains(key));
}
