#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "vsemu/client_agent.hpp"
#include "vsemu/transport.hpp"

// Open-loop load harness. Workers send at scheduled instants regardless of
// completion times, and a request's latency runs from its scheduled send to
// its completion, so queueing delay near saturation is visible in the
// percentiles.
namespace vsemu::bench {

using Clock = std::chrono::steady_clock;

inline std::uint64_t percentile_us(std::vector<std::uint64_t>& sorted_us, double p) {
    if (sorted_us.empty()) return 0;
    auto rank = static_cast<std::size_t>(p * static_cast<double>(sorted_us.size() - 1));
    return sorted_us[rank];
}

// Two latency views per run: p50/p95/p99 are service times (request sent ->
// response in), the per-op latency. sched_* include the lag behind the
// open-loop schedule, so queueing at saturation is visible there.
struct BenchStats {
    std::string op;
    double target_rate = 0;
    double achieved_rate = 0;
    std::uint64_t p50_us = 0;
    std::uint64_t p95_us = 0;
    std::uint64_t p99_us = 0;
    std::uint64_t sched_mean_us = 0;
    std::uint64_t sched_p99_us = 0;
    std::uint64_t errors = 0;
    std::uint64_t ops = 0;
    double duration_s = 0;

    nlohmann::json to_json() const {
        return {{"op", op},           {"target_rate", target_rate},
                {"achieved_rate", achieved_rate}, {"p50_us", p50_us},
                {"p95_us", p95_us},   {"p99_us", p99_us},
                {"sched_mean_us", sched_mean_us}, {"sched_p99_us", sched_p99_us},
                {"errors", errors},   {"ops", ops},
                {"duration_s", duration_s}};
    }
};

/// One benched operation; returns non-ok to count an error.
using WorkerOp = std::function<Status()>;
/// Builds the per-worker op (own connection, own VSE state).
using WorkerFactory = std::function<Result<WorkerOp>(std::size_t worker_index)>;

inline BenchStats run_open_loop(const std::string& op_name, const WorkerFactory& factory,
                                std::size_t connections, double rate_per_s, double duration_s) {
    BenchStats stats;
    stats.op = op_name;
    stats.target_rate = rate_per_s;
    if (connections == 0 || rate_per_s <= 0 || duration_s <= 0) return stats;

    struct WorkerResult {
        std::vector<std::uint64_t> service_us;
        std::vector<std::uint64_t> sched_us;
        std::uint64_t errors = 0;
    };
    std::vector<WorkerResult> results(connections);
    std::vector<WorkerOp> ops(connections);
    for (std::size_t w = 0; w < connections; ++w) {
        auto op = factory(w);
        if (!op.ok()) {
            stats.errors += 1;
            return stats;
        }
        ops[w] = op.take();
    }

    const auto interval =
        std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(
            static_cast<double>(connections) / rate_per_s));
    // hybrid pacing: coarse sleep, then spin the last stretch to the
    // scheduled instant so send jitter stays out of the measurements
    const auto spin_window = std::chrono::microseconds(100);
    const auto t0 = Clock::now();
    const auto deadline = t0 + std::chrono::duration_cast<Clock::duration>(
                                   std::chrono::duration<double>(duration_s));

    std::vector<std::thread> workers;
    workers.reserve(connections);
    for (std::size_t w = 0; w < connections; ++w) {
        workers.emplace_back([&, w] {
            auto scheduled = t0 + interval * static_cast<long>(w) / static_cast<long>(connections);
            auto& result = results[w];
            while (scheduled < deadline) {
                if (Clock::now() + spin_window < scheduled)
                    std::this_thread::sleep_until(scheduled - spin_window);
                while (Clock::now() < scheduled) {
                }
                auto sent = Clock::now();
                auto st = ops[w]();
                auto done = Clock::now();
                if (st.ok()) {
                    result.service_us.push_back(static_cast<std::uint64_t>(
                        std::chrono::duration_cast<std::chrono::microseconds>(done - sent)
                            .count()));
                    result.sched_us.push_back(static_cast<std::uint64_t>(
                        std::chrono::duration_cast<std::chrono::microseconds>(done - scheduled)
                            .count()));
                } else {
                    ++result.errors;
                }
                scheduled += interval;
            }
        });
    }
    for (auto& t : workers) t.join();
    const double elapsed =
        std::chrono::duration<double>(Clock::now() - t0).count();

    std::vector<std::uint64_t> service, sched;
    for (auto& r : results) {
        service.insert(service.end(), r.service_us.begin(), r.service_us.end());
        sched.insert(sched.end(), r.sched_us.begin(), r.sched_us.end());
        stats.errors += r.errors;
    }
    std::sort(service.begin(), service.end());
    std::sort(sched.begin(), sched.end());
    stats.ops = service.size();
    stats.duration_s = elapsed;
    stats.achieved_rate = elapsed > 0 ? static_cast<double>(service.size()) / elapsed : 0;
    stats.p50_us = percentile_us(service, 0.50);
    stats.p95_us = percentile_us(service, 0.95);
    stats.p99_us = percentile_us(service, 0.99);
    if (!sched.empty())
        stats.sched_mean_us = std::accumulate(sched.begin(), sched.end(), std::uint64_t{0}) /
                              sched.size();
    stats.sched_p99_us = percentile_us(sched, 0.99);
    return stats;
}

inline constexpr std::uint64_t kSaturationP99Us = 10'000;  // sweep stops past 10 ms

struct SweepPoint {
    double offered_rate = 0;
    BenchStats stats;
};

/// Double the offered rate until schedule-lag p99 crosses the saturation
/// bound (or the generator can no longer hold the offered rate).
inline std::vector<SweepPoint> sweep(const std::string& op_name, const WorkerFactory& factory,
                                     std::size_t connections, double start_rate,
                                     double step_duration_s, std::size_t max_steps = 12) {
    std::vector<SweepPoint> points;
    double rate = start_rate;
    for (std::size_t i = 0; i < max_steps; ++i) {
        auto stats = run_open_loop(op_name, factory, connections, rate, step_duration_s);
        points.push_back({rate, stats});
        if (stats.sched_p99_us > kSaturationP99Us) break;
        if (stats.achieved_rate < rate * 0.8) break;
        rate *= 2;
    }
    return points;
}

// Kernel wakeup granularity keeps sub-saturation schedule lag around the
// half-millisecond mark; below this floor the steps are measurement-equal.
inline constexpr std::uint64_t kSweepNoiseFloorUs = 1'000;

// Nondecreasing lag-inclusive mean above the noise floor: each step may
// undercut its predecessor by at most 15% plus 25 us.
inline bool sweep_is_monotone(const std::vector<SweepPoint>& points) {
    auto effective = [](const SweepPoint& p) {
        return static_cast<double>(std::max(p.stats.sched_mean_us, kSweepNoiseFloorUs));
    };
    for (std::size_t i = 1; i < points.size(); ++i) {
        if (effective(points[i]) < effective(points[i - 1]) * 0.85 - 25.0) return false;
    }
    return true;
}

struct LinearFit {
    double slope = 0;
    double intercept = 0;
    double r2 = 0;
};

inline LinearFit fit_linear(const std::vector<double>& xs, const std::vector<double>& ys) {
    LinearFit fit;
    const std::size_t n = std::min(xs.size(), ys.size());
    if (n < 2) return fit;
    double mean_x = std::accumulate(xs.begin(), xs.begin() + n, 0.0) / n;
    double mean_y = std::accumulate(ys.begin(), ys.begin() + n, 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxy += (xs[i] - mean_x) * (ys[i] - mean_y);
        sxx += (xs[i] - mean_x) * (xs[i] - mean_x);
        syy += (ys[i] - mean_y) * (ys[i] - mean_y);
    }
    if (sxx == 0 || syy == 0) return fit;
    fit.slope = sxy / sxx;
    fit.intercept = mean_y - fit.slope * mean_x;
    double ss_res = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double e = ys[i] - (fit.slope * xs[i] + fit.intercept);
        ss_res += e * e;
    }
    fit.r2 = 1.0 - ss_res / syy;
    return fit;
}

inline std::uint64_t read_rss_kb() {
    std::ifstream status("/proc/self/status");
    std::string line;
    while (std::getline(status, line)) {
        if (line.rfind("VmRSS:", 0) == 0) {
            std::uint64_t kb = 0;
            std::sscanf(line.c_str(), "VmRSS: %lu", &kb);
            return kb;
        }
    }
    return 0;
}

/// Connections and credentials for booting bench workers.
struct OpsEnv {
    std::function<std::shared_ptr<transport::Channel>()> broker;
    std::function<std::shared_ptr<transport::Channel>()> shim;
    Bytes credential;
};

namespace detail {

inline Result<agent::Driver> boot_worker(const OpsEnv& env) {
    agent::BootOptions opts;
    opts.mode = agent::DriverMode::synchronous;
    opts.shim = env.shim();
    auto broker = env.broker();
    return agent::crtm_boot(*broker, SecretBytes(env.credential), {}, opts);
}

}  // namespace detail

/// Each worker boots its own VSE and repeatedly extends PCR 10.
inline WorkerFactory extend_worker_factory(OpsEnv env) {
    return [env](std::size_t worker_index) -> Result<WorkerOp> {
        auto driver = detail::boot_worker(env);
        if (!driver.ok()) return driver.error();
        auto shared = std::make_shared<agent::Driver>(driver.take());
        auto counter = std::make_shared<std::uint64_t>(worker_index << 32);
        return WorkerOp([shared, counter]() -> Status {
            crypto::Digest m;
            std::uint64_t v = (*counter)++;
            for (int i = 0; i < 8; ++i) m.bytes[i] = static_cast<std::uint8_t>(v >> (8 * i));
            return shared->extend(10, m);
        });
    };
}

/// Each worker boots its own VSE and repeatedly quotes PCR 10.
inline WorkerFactory quote_worker_factory(OpsEnv env) {
    return [env](std::size_t worker_index) -> Result<WorkerOp> {
        auto driver = detail::boot_worker(env);
        if (!driver.ok()) return driver.error();
        auto shared = std::make_shared<agent::Driver>(driver.take());
        auto counter = std::make_shared<std::uint64_t>(worker_index << 32);
        return WorkerOp([shared, counter]() -> Status {
            std::array<std::uint8_t, 32> nonce{};
            std::uint64_t v = (*counter)++;
            for (int i = 0; i < 8; ++i) nonce[i] = static_cast<std::uint8_t>(v >> (8 * i));
            auto q = shared->get_quote(1u << 10, nonce);
            return q.ok() ? Status() : Status(q.error());
        });
    };
}

struct SpawnStats {
    std::size_t count = 0;
    double total_elapsed_s = 0;
    std::uint64_t p50_us = 0;
    std::uint64_t p95_us = 0;
    std::uint64_t p99_us = 0;
    std::uint64_t errors = 0;
    std::uint64_t rss_kb = 0;
    std::int64_t counter_entries = -1;  // -1 when the coprocessor is remote

    nlohmann::json to_json() const {
        return {{"op", "spawn"},     {"count", count},   {"total_elapsed_s", total_elapsed_s},
                {"p50_us", p50_us},  {"p95_us", p95_us}, {"p99_us", p99_us},
                {"errors", errors},  {"rss_kb", rss_kb}, {"counter_entries", counter_entries}};
    }
};

/// Create `count` VSEs back to back through the broker.
inline SpawnStats bench_spawn(transport::Channel& broker, const Bytes& credential,
                              std::size_t count) {
    SpawnStats stats;
    stats.count = count;
    std::vector<std::uint64_t> latencies;
    latencies.reserve(count);
    wire::Request req;
    req.command = wire::Command::create_vse;
    req.credential = credential;
    const auto t0 = Clock::now();
    for (std::size_t i = 0; i < count; ++i) {
        auto begin = Clock::now();
        auto resp = broker.roundtrip(req);
        auto end = Clock::now();
        if (resp.ok() && resp->status == ErrorCode::ok) {
            latencies.push_back(static_cast<std::uint64_t>(
                std::chrono::duration_cast<std::chrono::microseconds>(end - begin).count()));
        } else {
            ++stats.errors;
        }
    }
    stats.total_elapsed_s = std::chrono::duration<double>(Clock::now() - t0).count();
    std::sort(latencies.begin(), latencies.end());
    stats.p50_us = percentile_us(latencies, 0.50);
    stats.p95_us = percentile_us(latencies, 0.95);
    stats.p99_us = percentile_us(latencies, 0.99);
    stats.rss_kb = read_rss_kb();
    return stats;
}

}  // namespace vsemu::bench
