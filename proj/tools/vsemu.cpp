// Operator entry points: PKI and key setup, broker/shim services, client
// runs, verification, attack scenarios, and the benchmark harness. Every
// command is scriptable: deterministic exit codes, JSON on stdout where
// documented, no prompts.

#include <atomic>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "vsemu/attack.hpp"
#include "vsemu/bench.hpp"
#include "vsemu/broker.hpp"
#include "vsemu/client_agent.hpp"
#include "vsemu/fileio.hpp"
#include "vsemu/stack.hpp"
#include "vsemu/verifier.hpp"

using namespace vsemu;
namespace fs = std::filesystem;

namespace {

std::atomic<bool> g_stop{false};

void handle_signal(int) { g_stop = true; }

int fail(const std::string& message) {
    std::cerr << "error: " << message << "\n";
    return 1;
}

int fail(const Error& err) { return fail(err.to_string()); }

Result<std::uint32_t> parse_selection(const std::string& pcrs) {
    std::uint32_t selection = 0;
    std::stringstream ss(pcrs);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        char* end = nullptr;
        long v = std::strtol(item.c_str(), &end, 10);
        if (end == item.c_str() || *end != '\0' || v < 0 || v >= 24)
            return Error{ErrorCode::malformed, "bad pcr index '" + item + "'"};
        selection |= 1u << v;
    }
    if (selection == 0) return Error{ErrorCode::malformed, "no pcrs selected"};
    return selection;
}

Result<std::array<std::uint8_t, 32>> parse_hex32(const std::string& hex) {
    auto raw = from_hex(hex);
    if (!raw || raw->size() != 32)
        return Error{ErrorCode::malformed, "expected 64 hex chars"};
    std::array<std::uint8_t, 32> out{};
    std::copy(raw->begin(), raw->end(), out.begin());
    return out;
}

Result<std::vector<agent::BootLayer>> load_layer_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) return Error{ErrorCode::io, "cannot open " + path};
    nlohmann::json j;
    try {
        in >> j;
        std::vector<agent::BootLayer> layers;
        for (const auto& item : j) {
            agent::BootLayer layer;
            layer.name = item.at("name").get<std::string>();
            layer.pcr_index = item.at("pcr").get<std::uint32_t>();
            if (item.contains("payload_file")) {
                auto data = fileio::read_file(item["payload_file"].get<std::string>());
                if (!data.ok()) return data.error();
                layer.payload = data.take();
            } else if (item.contains("payload_hex")) {
                auto data = from_hex(item["payload_hex"].get<std::string>());
                if (!data) return Error{ErrorCode::malformed, "bad payload_hex"};
                layer.payload = *data;
            } else {
                layer.payload = to_bytes(item.at("payload").get<std::string>());
            }
            layers.push_back(std::move(layer));
        }
        return layers;
    } catch (const nlohmann::json::exception& e) {
        return Error{ErrorCode::malformed, path + ": " + e.what()};
    }
}

Result<std::shared_ptr<transport::TcpChannel>> connect(const std::string& endpoint) {
    auto ep = transport::Endpoint::parse(endpoint);
    if (!ep.ok()) return ep.error();
    return std::make_shared<transport::TcpChannel>(ep.take());
}

Status write_port_file(const std::string& path, std::uint16_t port) {
    if (path.empty()) return {};
    std::ofstream out(path, std::ios::trunc);
    if (!out) return Status(ErrorCode::io, "cannot write " + path);
    out << port << '\n';
    return {};
}

void wait_for_stop() {
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(50));
}

// --- setup commands ---

int cmd_ca_init(const std::string& out_dir) {
    fs::create_directories(out_dir);
    crypto::SystemRandom rng;
    auto root = crypto::gen_signing_key(rng);
    auto cert = pki::make_self_signed_root(root);
    if (!cert.ok()) return fail(cert.error());
    if (auto st = fileio::save_signing_key(out_dir + "/root_key.json", root); !st.ok())
        return fail(st.error());
    if (auto st = fileio::write_file(out_dir + "/root_cert.bin", cert->encode()); !st.ok())
        return fail(st.error());
    std::cout << out_dir << "/root_key.json\n" << out_dir << "/root_cert.bin\n";
    return 0;
}

int cmd_coproc_keygen(const std::string& root_key_path, std::uint32_t id,
                      const std::vector<std::uint32_t>& techs, bool freshness, bool random_init,
                      const std::string& master_hex, const std::string& out_dir) {
    fs::create_directories(out_dir);
    auto root = fileio::load_signing_key(root_key_path);
    if (!root.ok()) return fail(root.error());

    crypto::SystemRandom rng;
    coproc::CoprocessorConfig cfg;
    cfg.coprocessor_id = id;
    cfg.identity_key = crypto::gen_signing_key(rng);
    cfg.identity_key.key_id = id;
    cfg.master_key_id = rng.nonzero_u32();
    if (master_hex.empty()) {
        rng.fill(cfg.master_wrap_key);
    } else {
        auto master = parse_hex32(master_hex);
        if (!master.ok()) return fail(master.error());
        cfg.master_wrap_key = *master;
    }
    cfg.active_hmac_key = crypto::gen_hmac_key(rng);
    cfg.freshness_mode = freshness;
    cfg.random_init_mode = random_init;

    pki::SubjectFields subject;
    subject.kind = pki::SubjectKind::coprocessor;
    subject.subject_public_key.assign(cfg.identity_key.public_key.begin(),
                                      cfg.identity_key.public_key.end());
    subject.coprocessor_id = id;
    auto coproc_cert = pki::issue(*root, pki::SubjectKind::root, subject);
    if (!coproc_cert.ok()) return fail(coproc_cert.error());

    for (auto tech : techs) {
        if (tech > 0xff) return fail("tech class must fit 8 bits");
        auto key = crypto::gen_signing_key(rng);
        pki::SubjectFields f;
        f.kind = pki::SubjectKind::ak;
        f.subject_public_key.assign(key.public_key.begin(), key.public_key.end());
        f.tech_class = static_cast<std::uint8_t>(tech);
        f.coprocessor_id = id;
        auto cert = pki::issue(cfg.identity_key, pki::SubjectKind::coprocessor, f);
        if (!cert.ok()) return fail(cert.error());
        auto path = out_dir + "/tech_cert_" + std::to_string(tech) + ".bin";
        if (auto st = fileio::write_file(path, cert->encode()); !st.ok()) return fail(st.error());
        cfg.tech_signing_keys[static_cast<std::uint8_t>(tech)] = key;
    }

    if (auto st = fileio::save_coproc_config(out_dir + "/coproc_config.json", cfg); !st.ok())
        return fail(st.error());
    if (auto st = fileio::write_file(out_dir + "/coproc_cert.bin", coproc_cert->encode());
        !st.ok())
        return fail(st.error());
    std::cout << out_dir << "/coproc_config.json\n" << out_dir << "/coproc_cert.bin\n";
    return 0;
}

int cmd_cred_add(const std::string& out_path, const std::string& registry,
                 std::uint32_t tech, const std::string& label) {
    crypto::SystemRandom rng;
    auto credential = rng.bytes(32);
    if (auto st = fileio::write_file(out_path, credential); !st.ok()) return fail(st.error());
    if (!registry.empty()) {
        if (tech > 0xff) return fail("tech class must fit 8 bits");
        if (auto st = broker::registry_append(registry, crypto::hash(credential),
                                              static_cast<std::uint8_t>(tech), label);
            !st.ok())
            return fail(st.error());
    }
    std::cout << out_path << "\n";
    return 0;
}

// --- services ---

Result<std::shared_ptr<coproc::Coprocessor>> build_coprocessor(
    const std::string& config_path, const std::string& registry_path,
    const std::string& counters_path) {
    auto cfg = fileio::load_coproc_config(config_path);
    if (!cfg.ok()) return cfg.error();
    if (!registry_path.empty()) {
        auto registry = broker::registry_load(registry_path);
        if (!registry.ok()) return registry.error();
        cfg->credential_registry = registry.take();
    }
    auto cp = std::make_shared<coproc::Coprocessor>(cfg.take());
    if (!counters_path.empty() && fs::exists(counters_path)) {
        auto counters = fileio::load_counter_snapshot(counters_path);
        if (!counters.ok()) return counters.error();
        cp->counter_restore(counters.take());
    }
    return cp;
}

int cmd_run_broker(const std::string& listen, const std::string& admin_listen,
                   const std::string& registry_path, const std::string& config_path,
                   const std::string& shim_endpoint, const std::string& admin_cred_path,
                   const std::string& port_file, const std::string& admin_port_file,
                   const std::string& counters_path) {
    auto registry_probe = broker::registry_load(registry_path);
    if (!registry_probe.ok()) return fail(registry_probe.error());
    if (registry_probe->empty()) return fail("registry is empty; refusing to start");

    auto cp = build_coprocessor(config_path, registry_path, counters_path);
    if (!cp.ok()) return fail(cp.error());

    broker::BrokerConfig bcfg;
    bcfg.shim_endpoint = shim_endpoint;
    if (!admin_cred_path.empty()) {
        auto cred = fileio::read_file(admin_cred_path);
        if (!cred.ok()) return fail(cred.error());
        bcfg.admin_credential_hash = crypto::hash(*cred);
    }
    auto service = std::make_shared<broker::BrokerService>(*cp, bcfg);

    auto ep = transport::Endpoint::parse(listen);
    if (!ep.ok()) return fail(ep.error());
    transport::TcpServer server;
    if (auto st = server.start(*ep, service->handler()); !st.ok()) return fail(st.error());
    if (auto st = write_port_file(port_file, server.bound_port()); !st.ok())
        return fail(st.error());

    transport::TcpServer admin_server;
    if (!admin_listen.empty()) {
        auto aep = transport::Endpoint::parse(admin_listen);
        if (!aep.ok()) return fail(aep.error());
        if (auto st = admin_server.start(*aep, service->admin_handler()); !st.ok())
            return fail(st.error());
        if (auto st = write_port_file(admin_port_file, admin_server.bound_port()); !st.ok())
            return fail(st.error());
    }

    std::cout << "broker listening on " << server.bound_endpoint().to_string();
    if (!admin_listen.empty())
        std::cout << ", admin on " << admin_server.bound_endpoint().to_string();
    std::cout << std::endl;

    wait_for_stop();
    server.stop();
    admin_server.stop();
    if (!counters_path.empty())
        fileio::save_counter_snapshot(counters_path, (*cp)->counter_snapshot());
    return 0;
}

int cmd_run_shim(const std::string& listen, const std::string& config_path,
                 const std::string& port_file, const std::string& counters_path) {
    auto cp = build_coprocessor(config_path, "", counters_path);
    if (!cp.ok()) return fail(cp.error());
    auto service = std::make_shared<shim::ShimService>(*cp);

    auto ep = transport::Endpoint::parse(listen);
    if (!ep.ok()) return fail(ep.error());
    transport::TcpServer server;
    if (auto st = server.start(*ep, service->handler()); !st.ok()) return fail(st.error());
    if (auto st = write_port_file(port_file, server.bound_port()); !st.ok())
        return fail(st.error());
    std::cout << "shim listening on " << server.bound_endpoint().to_string() << std::endl;

    wait_for_stop();
    server.stop();
    if (!counters_path.empty())
        fileio::save_counter_snapshot(counters_path, (*cp)->counter_snapshot());
    return 0;
}

// --- client commands ---

int cmd_client_boot(const std::string& broker_ep, const std::string& cred_path,
                    const std::string& layers_path, const std::string& mode,
                    const std::string& shim_ep, const std::string& out_dir) {
    auto broker = connect(broker_ep);
    if (!broker.ok()) return fail(broker.error());
    auto cred = fileio::read_file(cred_path);
    if (!cred.ok()) return fail(cred.error());

    std::vector<agent::BootLayer> layers;
    if (!layers_path.empty()) {
        auto loaded = load_layer_manifest(layers_path);
        if (!loaded.ok()) return fail(loaded.error());
        layers = loaded.take();
    }

    agent::BootOptions opts;
    opts.mode = mode == "deferred" ? agent::DriverMode::deferred : agent::DriverMode::synchronous;
    if (!shim_ep.empty()) {
        auto shim_ch = connect(shim_ep);
        if (!shim_ch.ok()) return fail(shim_ch.error());
        opts.shim = shim_ch.take();
    } else {
        // fall back to the shim endpoint advertised in the creation receipt
        opts.shim_factory =
            [](const std::string& endpoint) -> std::shared_ptr<transport::Channel> {
            auto ch = connect(endpoint);
            return ch.ok() ? ch.take() : nullptr;
        };
    }

    auto driver = agent::crtm_boot(**broker, SecretBytes(cred.take()), layers, opts);
    if (!driver.ok()) return fail(driver.error());
    std::cerr << "using shim " << driver->advertised_shim_endpoint() << "\n";

    if (opts.mode == agent::DriverMode::deferred) {
        std::size_t failed_at = 0;
        if (auto st = driver->flush(&failed_at); !st.ok())
            return fail("flush aborted at position " + std::to_string(failed_at) + ": " +
                        st.error().to_string());
    }

    fs::create_directories(out_dir);
    if (auto st = fileio::write_file(out_dir + "/state.bin", driver->sealed_blob()); !st.ok())
        return fail(st.error());
    if (auto st = agent::save_event_log(out_dir + "/eventlog.txt", driver->event_log()); !st.ok())
        return fail(st.error());
    if (auto st = fileio::write_file(out_dir + "/ek_cert.bin",
                                     driver->receipt().ek_certificate.encode());
        !st.ok())
        return fail(st.error());
    if (driver->receipt().random_init_value) {
        std::ofstream out(out_dir + "/random_init.hex", std::ios::trunc);
        out << to_hex(*driver->receipt().random_init_value) << '\n';
    }
    std::cout << out_dir << "/state.bin\n" << out_dir << "/eventlog.txt\n"
              << out_dir << "/ek_cert.bin\n";
    return 0;
}

/// Rebuild a synchronous driver around a persisted sealed state.
Result<agent::Driver> attach_driver(const std::string& state_path, const std::string& shim_ep) {
    auto blob = fileio::read_file(state_path);
    if (!blob.ok()) return blob.error();
    auto sealed = SealedVseState::decode(*blob);
    if (!sealed.ok()) return sealed.error();
    auto shim_ch = connect(shim_ep);
    if (!shim_ch.ok()) return shim_ch.error();

    agent::Driver driver;
    driver.custody().install(blob.take());
    driver.attach_shim(shim_ch.take());
    return driver;
}

int cmd_client_extend(const std::string& shim_ep, const std::string& state_path,
                      std::uint32_t index, const std::string& measurement_hex,
                      const std::string& payload_path, const std::string& log_path,
                      const std::string& description) {
    auto driver = attach_driver(state_path, shim_ep);
    if (!driver.ok()) return fail(driver.error());

    crypto::Digest measurement;
    if (!measurement_hex.empty()) {
        auto m = parse_hex32(measurement_hex);
        if (!m.ok()) return fail(m.error());
        measurement.bytes = *m;
    } else if (!payload_path.empty()) {
        auto payload = fileio::read_file(payload_path);
        if (!payload.ok()) return fail(payload.error());
        measurement = crypto::hash(*payload);
    } else {
        return fail("one of --measurement or --payload is required");
    }

    if (auto st = driver->extend(index, measurement, description); !st.ok())
        return fail(st.error());
    if (auto st = fileio::write_file(state_path, driver->sealed_blob()); !st.ok())
        return fail(st.error());
    if (!log_path.empty()) {
        std::ofstream out(log_path, std::ios::app);
        if (!out) return fail("cannot append to " + log_path);
        out << index << ' ' << measurement.hex() << ' ' << description << '\n';
    }
    return 0;
}

int cmd_client_read(const std::string& shim_ep, const std::string& state_path,
                    const std::string& pcrs, bool json_out) {
    auto driver = attach_driver(state_path, shim_ep);
    if (!driver.ok()) return fail(driver.error());
    auto selection = parse_selection(pcrs);
    if (!selection.ok()) return fail(selection.error());
    auto values = driver->read(*selection);
    if (!values.ok()) return fail(values.error());

    if (json_out) {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& [index, digest] : *values)
            j.push_back({{"pcr", index}, {"value", digest.hex()}});
        std::cout << j.dump() << std::endl;
    } else {
        for (const auto& [index, digest] : *values)
            std::cout << "pcr" << index << " " << digest.hex() << "\n";
    }
    return 0;
}

int cmd_client_quote(const std::string& shim_ep, const std::string& state_path,
                     const std::string& pcrs, const std::string& nonce_hex,
                     const std::string& ak_path, const std::string& out_path) {
    auto driver = attach_driver(state_path, shim_ep);
    if (!driver.ok()) return fail(driver.error());
    auto selection = parse_selection(pcrs);
    if (!selection.ok()) return fail(selection.error());
    auto nonce = parse_hex32(nonce_hex);
    if (!nonce.ok()) return fail(nonce.error());

    std::optional<coproc::WrappedAttestationKey> ak;
    if (!ak_path.empty()) {
        auto blob = fileio::read_file(ak_path);
        if (!blob.ok()) return fail(blob.error());
        auto decoded = coproc::WrappedAttestationKey::decode(*blob);
        if (!decoded.ok()) return fail(decoded.error());
        ak = decoded.take();
    }

    auto quote = driver->get_quote(*selection, *nonce, ak ? &*ak : nullptr);
    if (!quote.ok()) return fail(quote.error());
    if (auto st = fileio::write_file(out_path, quote->encode()); !st.ok())
        return fail(st.error());
    std::cout << out_path << "\n";
    return 0;
}

int cmd_client_create_key(const std::string& shim_ep, const std::string& state_path,
                          const std::string& out_path) {
    auto driver = attach_driver(state_path, shim_ep);
    if (!driver.ok()) return fail(driver.error());
    auto ak = driver->create_key();
    if (!ak.ok()) return fail(ak.error());
    if (auto st = fileio::write_file(out_path, ak->encode()); !st.ok()) return fail(st.error());
    if (auto st = fileio::write_file(out_path + ".cert", ak->ak_certificate.encode()); !st.ok())
        return fail(st.error());
    std::cout << out_path << "\n";
    return 0;
}

// --- verification ---

int cmd_verify(const std::string& quote_path, const std::string& root_cert_path,
               const std::string& coproc_cert_path, const std::string& ek_cert_path,
               const std::string& signer_cert_path, const std::string& nonce_hex,
               const std::string& pcrs, const std::string& golden_hex,
               const std::string& log_path, const std::string& expect_seed_hex,
               const std::vector<std::uint32_t>& accept_tech) {
    auto quote_blob = fileio::read_file(quote_path);
    if (!quote_blob.ok()) return fail(quote_blob.error());
    auto quote = coproc::Quote::decode(*quote_blob);
    if (!quote.ok()) return fail(quote.error());

    auto root_cert = fileio::load_certificate(root_cert_path);
    if (!root_cert.ok()) return fail(root_cert.error());
    verifier::CertificateBundle bundle;
    auto coproc_cert = fileio::load_certificate(coproc_cert_path);
    if (!coproc_cert.ok()) return fail(coproc_cert.error());
    bundle.coprocessor_cert = coproc_cert.take();
    auto ek_cert = fileio::load_certificate(ek_cert_path);
    if (!ek_cert.ok()) return fail(ek_cert.error());
    bundle.ek_cert = ek_cert.take();
    auto signer_cert = fileio::load_certificate(signer_cert_path);
    if (!signer_cert.ok()) return fail(signer_cert.error());
    bundle.signer_cert = signer_cert.take();

    auto nonce = parse_hex32(nonce_hex);
    if (!nonce.ok()) return fail(nonce.error());
    auto selection = parse_selection(pcrs);
    if (!selection.ok()) return fail(selection.error());

    verifier::AttestationPolicy policy;
    policy.trusted_root = pki::anchor_from_root_cert(*root_cert);
    policy.selection = *selection;
    for (auto t : accept_tech) policy.accepted_tech_classes.insert(static_cast<std::uint8_t>(t));
    if (policy.accepted_tech_classes.empty() && bundle.ek_cert.tech_class)
        policy.accepted_tech_classes.insert(*bundle.ek_cert.tech_class);
    if (!golden_hex.empty()) {
        auto golden = parse_hex32(golden_hex);
        if (!golden.ok()) return fail(golden.error());
        policy.golden_digest = crypto::Digest{*golden};
    }
    if (!expect_seed_hex.empty()) {
        auto seed = parse_hex32(expect_seed_hex);
        if (!seed.ok()) return fail(seed.error());
        policy.expected_seed = *seed;
    }

    std::optional<agent::EventLog> log;
    if (!log_path.empty()) {
        auto loaded = agent::load_event_log(log_path);
        if (!loaded.ok()) return fail(loaded.error());
        log = loaded.take();
    }
    if (!policy.golden_digest && !log)
        return fail("one of --golden or --log is required");

    auto verdict =
        verifier::verify_quote(*quote, *nonce, bundle, policy, log ? &*log : nullptr);
    std::cout << verdict.to_json().dump() << std::endl;
    return verdict.accepted ? 0 : 1;
}

// --- attack scenarios ---

int cmd_attack(const std::string& scenario, const std::string& variant, bool freshness,
               std::uint64_t seed, bool json_out) {
    attack::ScenarioReport report;
    if (scenario == "replay") {
        report = seed ? attack::scenario_replay(freshness, seed)
                      : attack::scenario_replay(freshness);
    } else if (scenario == "reset") {
        auto v = variant.empty() ? std::string("no_credential") : variant;
        report = seed ? attack::scenario_reset(v, seed) : attack::scenario_reset(v);
    } else if (scenario == "relay") {
        report = seed ? attack::scenario_relay(seed) : attack::scenario_relay();
    } else if (scenario == "tamper") {
        report = seed ? attack::scenario_tamper(seed) : attack::scenario_tamper();
    } else {
        return fail("unknown scenario '" + scenario + "' (replay|reset|relay|tamper)");
    }

    if (json_out) {
        std::cout << report.to_json().dump() << std::endl;
    } else {
        std::cout << report.scenario << "/" << report.variant
                  << " detected=" << (report.detected ? "true" : "false");
        if (!report.error_code.empty()) std::cout << " error=" << report.error_code;
        std::cout << "\n  " << report.notes << "\n";
    }
    return 0;
}

// --- bench harness ---

int cmd_bench(const std::string& op, const std::string& broker_ep, const std::string& shim_ep,
              const std::string& cred_path, std::size_t connections, double rate,
              double duration, bool do_sweep, bool json_out) {
    auto cred = fileio::read_file(cred_path);
    if (!cred.ok()) return fail(cred.error());

    bench::OpsEnv env;
    env.credential = cred.take();
    env.broker = [broker_ep]() -> std::shared_ptr<transport::Channel> {
        auto ch = connect(broker_ep);
        return ch.ok() ? ch.take() : nullptr;
    };
    env.shim = [shim_ep]() -> std::shared_ptr<transport::Channel> {
        auto ch = connect(shim_ep);
        return ch.ok() ? ch.take() : nullptr;
    };

    auto factory =
        op == "extend" ? bench::extend_worker_factory(env) : bench::quote_worker_factory(env);

    if (do_sweep) {
        auto points = bench::sweep(op, factory, connections, rate, duration);
        nlohmann::json table = nlohmann::json::array();
        for (const auto& p : points) {
            auto j = p.stats.to_json();
            j["offered_rate"] = p.offered_rate;
            table.push_back(j);
            if (!json_out)
                std::printf("rate %8.0f/s  achieved %8.0f/s  p50 %6lu us  p99 %6lu us  "
                            "lag-mean %6lu us  lag-p99 %6lu us\n",
                            p.offered_rate, p.stats.achieved_rate,
                            static_cast<unsigned long>(p.stats.p50_us),
                            static_cast<unsigned long>(p.stats.p99_us),
                            static_cast<unsigned long>(p.stats.sched_mean_us),
                            static_cast<unsigned long>(p.stats.sched_p99_us));
        }
        bool monotone = bench::sweep_is_monotone(points);
        if (json_out)
            std::cout << nlohmann::json{{"sweep", table}, {"monotone", monotone}}.dump()
                      << std::endl;
        else
            std::cout << "monotone=" << (monotone ? "true" : "false") << "\n";
        return 0;
    }

    auto stats = bench::run_open_loop(op, factory, connections, rate, duration);
    if (json_out)
        std::cout << stats.to_json().dump() << std::endl;
    else
        std::printf("%s: achieved %.0f/s (target %.0f/s), p50 %lu us, p95 %lu us, p99 %lu us, "
                    "%lu errors over %lu ops\n",
                    stats.op.c_str(), stats.achieved_rate, stats.target_rate,
                    static_cast<unsigned long>(stats.p50_us),
                    static_cast<unsigned long>(stats.p95_us),
                    static_cast<unsigned long>(stats.p99_us),
                    static_cast<unsigned long>(stats.errors),
                    static_cast<unsigned long>(stats.ops));
    return 0;
}

int cmd_bench_spawn(const std::string& broker_ep, const std::string& cred_path,
                    std::size_t count, bool in_proc, bool json_out) {
    bench::SpawnStats stats;
    if (in_proc) {
        auto s = stack::make_stack();
        stats = bench::bench_spawn(*s.broker_channel, s.credentials.at(1), count);
        stats.counter_entries = static_cast<std::int64_t>(s.coprocessor->retained_object_count());
    } else {
        if (broker_ep.empty() || cred_path.empty())
            return fail("--broker and --cred are required without --in-proc");
        auto cred = fileio::read_file(cred_path);
        if (!cred.ok()) return fail(cred.error());
        auto broker = connect(broker_ep);
        if (!broker.ok()) return fail(broker.error());
        stats = bench::bench_spawn(**broker, *cred, count);
    }
    if (json_out)
        std::cout << stats.to_json().dump() << std::endl;
    else
        std::printf("spawned %zu VSEs in %.2fs, p50 %lu us, p99 %lu us, %lu errors, rss %lu kB\n",
                    stats.count, stats.total_elapsed_s, static_cast<unsigned long>(stats.p50_us),
                    static_cast<unsigned long>(stats.p99_us),
                    static_cast<unsigned long>(stats.errors),
                    static_cast<unsigned long>(stats.rss_kb));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    crypto::init();

    CLI::App app{"stateless attestation coprocessor emulator"};
    app.require_subcommand(1);

    // ca-init
    std::string out_dir = ".";
    auto* ca_init = app.add_subcommand("ca-init", "generate the manufacturer root CA");
    ca_init->add_option("--out-dir", out_dir, "output directory")->capture_default_str();

    // coproc-keygen
    std::string root_key_path, master_hex, keygen_out = ".";
    std::uint32_t coproc_id = 1;
    std::vector<std::uint32_t> techs = {1};
    bool freshness = false, random_init = false;
    auto* keygen = app.add_subcommand("coproc-keygen", "provision a coprocessor config");
    keygen->add_option("--root-key", root_key_path, "root key json")->required();
    keygen->add_option("--id", coproc_id, "coprocessor id")->capture_default_str();
    keygen->add_option("--tech", techs, "tech classes to provision")->capture_default_str();
    keygen->add_flag("--freshness", freshness, "enable monotonic counters");
    keygen->add_flag("--random-init", random_init, "random-initialize PCR0 at creation");
    keygen->add_option("--master", master_hex, "pool master wrap key (64 hex chars)");
    keygen->add_option("--out-dir", keygen_out, "output directory")->capture_default_str();

    // cred-add
    std::string cred_out, registry_path, cred_label = "crtm";
    std::uint32_t cred_tech = 1;
    auto* cred_add = app.add_subcommand("cred-add", "mint a CRTM credential");
    cred_add->add_option("--out", cred_out, "credential output file")->required();
    cred_add->add_option("--registry", registry_path, "registry file to append to");
    cred_add->add_option("--tech", cred_tech, "tech class")->capture_default_str();
    cred_add->add_option("--label", cred_label, "registry label")->capture_default_str();

    // run-broker
    std::string listen = "127.0.0.1:7601", admin_listen, broker_registry, broker_config;
    std::string shim_endpoint = "127.0.0.1:7602", admin_cred, port_file, admin_port_file;
    std::string counters_path;
    auto* run_broker = app.add_subcommand("run-broker", "serve VSE creation");
    run_broker->add_option("--listen", listen, "data listener")->capture_default_str();
    run_broker->add_option("--admin-listen", admin_listen, "admin listener (host:port)");
    run_broker->add_option("--registry", broker_registry, "credential registry")->required();
    run_broker->add_option("--coproc-config", broker_config, "coprocessor config")->required();
    run_broker->add_option("--shim-endpoint", shim_endpoint, "advertised shim endpoint")
        ->capture_default_str();
    run_broker->add_option("--admin-cred", admin_cred, "admin credential file");
    run_broker->add_option("--port-file", port_file, "write bound data port here");
    run_broker->add_option("--admin-port-file", admin_port_file, "write bound admin port here");
    run_broker->add_option("--counters", counters_path, "counter snapshot file");

    // run-shim
    std::string shim_listen = "127.0.0.1:7602", shim_config, shim_port_file, shim_counters;
    auto* run_shim = app.add_subcommand("run-shim", "serve the TPM-subset data path");
    run_shim->add_option("--listen", shim_listen, "listener")->capture_default_str();
    run_shim->add_option("--coproc-config", shim_config, "coprocessor config")->required();
    run_shim->add_option("--port-file", shim_port_file, "write bound port here");
    run_shim->add_option("--counters", shim_counters, "counter snapshot file");

    // client-boot
    std::string boot_broker, boot_cred, boot_layers, boot_mode = "sync", boot_shim,
                boot_out = "vee";
    auto* client_boot = app.add_subcommand("client-boot", "CRTM bootstrap + measured boot");
    client_boot->add_option("--broker", boot_broker, "broker endpoint")->required();
    client_boot->add_option("--cred", boot_cred, "credential file")->required();
    client_boot->add_option("--layers", boot_layers, "boot layer manifest (json)");
    client_boot->add_option("--mode", boot_mode, "deferred|sync")->capture_default_str();
    client_boot->add_option("--shim", boot_shim,
                            "shim endpoint (default: the one the broker advertises)");
    client_boot->add_option("--out-dir", boot_out, "VEE state directory")->capture_default_str();

    // client-extend
    std::string ext_shim, ext_state, ext_measurement, ext_payload, ext_log, ext_desc;
    std::uint32_t ext_index = 10;
    auto* client_extend = app.add_subcommand("client-extend", "extend one measurement");
    client_extend->add_option("--shim", ext_shim, "shim endpoint")->required();
    client_extend->add_option("--state", ext_state, "sealed state file")->required();
    client_extend->add_option("--index", ext_index, "pcr index")->capture_default_str();
    client_extend->add_option("--measurement", ext_measurement, "measurement (64 hex chars)");
    client_extend->add_option("--payload", ext_payload, "file to hash as the measurement");
    client_extend->add_option("--log", ext_log, "event log to append to");
    client_extend->add_option("--description", ext_desc, "event log description");

    // client-read
    std::string read_shim, read_state, read_pcrs = "0";
    bool read_json = false;
    auto* client_read = app.add_subcommand("client-read", "read selected PCRs");
    client_read->add_option("--shim", read_shim, "shim endpoint")->required();
    client_read->add_option("--state", read_state, "sealed state file")->required();
    client_read->add_option("--pcrs", read_pcrs, "comma-separated indices")
        ->capture_default_str();
    client_read->add_flag("--json", read_json, "JSON output");

    // client-quote
    std::string q_shim, q_state, q_pcrs = "0", q_nonce, q_ak, q_out = "quote.bin";
    auto* client_quote = app.add_subcommand("client-quote", "request a signed quote");
    client_quote->add_option("--shim", q_shim, "shim endpoint")->required();
    client_quote->add_option("--state", q_state, "sealed state file")->required();
    client_quote->add_option("--pcrs", q_pcrs, "comma-separated indices")->capture_default_str();
    client_quote->add_option("--nonce", q_nonce, "nonce (64 hex chars)")->required();
    client_quote->add_option("--ak", q_ak, "wrapped attestation key file");
    client_quote->add_option("--out", q_out, "quote output file")->capture_default_str();

    // client-create-key
    std::string ck_shim, ck_state, ck_out = "ak.bin";
    auto* create_key = app.add_subcommand("client-create-key", "create an attestation key");
    create_key->add_option("--shim", ck_shim, "shim endpoint")->required();
    create_key->add_option("--state", ck_state, "sealed state file")->required();
    create_key->add_option("--out", ck_out, "attestation key output file")
        ->capture_default_str();

    // verify
    std::string v_quote, v_root, v_coproc, v_ek, v_signer, v_nonce, v_pcrs = "0";
    std::string v_golden, v_log, v_seed;
    std::vector<std::uint32_t> v_tech;
    auto* verify = app.add_subcommand("verify", "verify a quote; exit 0 iff accepted");
    verify->add_option("--quote", v_quote, "quote file")->required();
    verify->add_option("--root-cert", v_root, "trusted root certificate")->required();
    verify->add_option("--coproc-cert", v_coproc, "coprocessor certificate")->required();
    verify->add_option("--ek-cert", v_ek, "EK certificate")->required();
    verify->add_option("--signer-cert", v_signer, "signer certificate (tech or AK)")->required();
    verify->add_option("--nonce", v_nonce, "expected nonce (64 hex chars)")->required();
    verify->add_option("--pcrs", v_pcrs, "comma-separated indices")->capture_default_str();
    verify->add_option("--golden", v_golden, "golden digest (64 hex chars)");
    verify->add_option("--log", v_log, "event log to replay");
    verify->add_option("--expect-seed", v_seed, "expected VSE seed (64 hex chars)");
    verify->add_option("--accept-tech", v_tech, "accepted tech classes");

    // attack
    std::string atk_scenario, atk_variant;
    bool atk_freshness = false, atk_json = false;
    std::uint64_t atk_seed = 0;
    auto* attack_cmd = app.add_subcommand("attack", "run an adversary scenario");
    attack_cmd->add_option("scenario", atk_scenario, "replay|reset|relay|tamper")->required();
    attack_cmd->add_option("--variant", atk_variant, "scenario variant");
    attack_cmd->add_flag("--freshness", atk_freshness, "enable monotonic counters");
    attack_cmd->add_option("--seed", atk_seed, "deterministic seed");
    attack_cmd->add_flag("--json", atk_json, "JSON output");

    // bench-extend / bench-quote
    std::string b_broker, b_shim, b_cred;
    std::size_t b_conns = 4;
    double b_rate = 1000, b_duration = 5;
    bool b_sweep = false, b_json = false;
    auto* bench_extend = app.add_subcommand("bench-extend", "open-loop extend load generator");
    auto* bench_quote = app.add_subcommand("bench-quote", "open-loop quote load generator");
    for (auto* cmd : {bench_extend, bench_quote}) {
        cmd->add_option("--broker", b_broker, "broker endpoint")->required();
        cmd->add_option("--shim", b_shim, "shim endpoint")->required();
        cmd->add_option("--cred", b_cred, "credential file")->required();
        cmd->add_option("--connections", b_conns, "worker connections")->capture_default_str();
        cmd->add_option("--rate", b_rate, "target ops/s")->capture_default_str();
        cmd->add_option("--duration", b_duration, "seconds per run/step")->capture_default_str();
        cmd->add_flag("--sweep", b_sweep, "double rate until p99 exceeds 10 ms");
        cmd->add_flag("--json", b_json, "JSON output");
    }

    // bench-spawn
    std::string sp_broker, sp_cred;
    std::size_t sp_count = 1000;
    bool sp_in_proc = false, sp_json = false;
    auto* bench_spawn_cmd = app.add_subcommand("bench-spawn", "VSE creation latency/scaling");
    bench_spawn_cmd->add_option("--broker", sp_broker, "broker endpoint");
    bench_spawn_cmd->add_option("--cred", sp_cred, "credential file");
    bench_spawn_cmd->add_option("--count", sp_count, "number of VSEs")->capture_default_str();
    bench_spawn_cmd->add_flag("--in-proc", sp_in_proc, "run against an in-process stack");
    bench_spawn_cmd->add_flag("--json", sp_json, "JSON output");

    CLI11_PARSE(app, argc, argv);

    if (ca_init->parsed()) return cmd_ca_init(out_dir);
    if (keygen->parsed())
        return cmd_coproc_keygen(root_key_path, coproc_id, techs, freshness, random_init,
                                 master_hex, keygen_out);
    if (cred_add->parsed()) return cmd_cred_add(cred_out, registry_path, cred_tech, cred_label);
    if (run_broker->parsed())
        return cmd_run_broker(listen, admin_listen, broker_registry, broker_config, shim_endpoint,
                              admin_cred, port_file, admin_port_file, counters_path);
    if (run_shim->parsed())
        return cmd_run_shim(shim_listen, shim_config, shim_port_file, shim_counters);
    if (client_boot->parsed())
        return cmd_client_boot(boot_broker, boot_cred, boot_layers, boot_mode, boot_shim,
                               boot_out);
    if (client_extend->parsed())
        return cmd_client_extend(ext_shim, ext_state, ext_index, ext_measurement, ext_payload,
                                 ext_log, ext_desc);
    if (client_read->parsed()) return cmd_client_read(read_shim, read_state, read_pcrs, read_json);
    if (client_quote->parsed())
        return cmd_client_quote(q_shim, q_state, q_pcrs, q_nonce, q_ak, q_out);
    if (create_key->parsed()) return cmd_client_create_key(ck_shim, ck_state, ck_out);
    if (verify->parsed())
        return cmd_verify(v_quote, v_root, v_coproc, v_ek, v_signer, v_nonce, v_pcrs, v_golden,
                          v_log, v_seed, v_tech);
    if (attack_cmd->parsed())
        return cmd_attack(atk_scenario, atk_variant, atk_freshness, atk_seed, atk_json);
    if (bench_extend->parsed())
        return cmd_bench("extend", b_broker, b_shim, b_cred, b_conns, b_rate, b_duration, b_sweep,
                         b_json);
    if (bench_quote->parsed())
        return cmd_bench("quote", b_broker, b_shim, b_cred, b_conns, b_rate, b_duration, b_sweep,
                         b_json);
    if (bench_spawn_cmd->parsed())
        return cmd_bench_spawn(sp_broker, sp_cred, sp_count, sp_in_proc, sp_json);
    return fail("no subcommand");
}
