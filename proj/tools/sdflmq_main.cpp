#include <atomic>
#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "sdflmq/coordinator/coordinator.hpp"
#include "sdflmq/errors.hpp"
#include "sdflmq/harness/experiment.hpp"
#include "sdflmq/paramserver/param_server.hpp"
#include "sdflmq/transport/inmemory_broker.hpp"

namespace {

std::atomic<bool> g_stop{false};

void handle_signal(int) {
    g_stop.store(true);
}

struct BrokerFlags {
    bool embedded = false;
    std::string broker_host;
    int broker_port = 1883;
};

void add_broker_flags(CLI::App* cmd, BrokerFlags& flags) {
    cmd->add_flag("--embedded", flags.embedded,
                  "run against an in-process broker (hermetic mode)");
    cmd->add_option("--broker", flags.broker_host, "external MQTT broker host");
    cmd->add_option("--port", flags.broker_port, "external MQTT broker port");
}

// The reference transport is the in-memory broker; connecting to an external
// broker needs an adapter implementing sdflmq::transport::Broker, which this
// build does not bundle.
int reject_external(const BrokerFlags& flags, std::ostream& err) {
    if (flags.embedded) {
        return 0;
    }
    if (flags.broker_host.empty()) {
        err << "error: either --embedded or --broker <host> is required\n";
        return 64;
    }
    err << "error: no MQTT broker adapter is linked into this build; use --embedded\n";
    return 69;
}

int run_coord(const BrokerFlags& flags, const std::string& clustering, double fraction,
              const std::string& optimizer, std::int64_t straggler_ms, bool with_paramserver) {
    if (int rc = reject_external(flags, std::cerr); rc != 0) {
        return rc;
    }
    sdflmq::transport::InMemoryBroker broker({.broker_id = "embedded"});

    sdflmq::coord::CoordinatorOptions options;
    options.clustering = clustering == "single"
                             ? sdflmq::coord::ClusteringPolicy::single()
                             : sdflmq::coord::ClusteringPolicy::hierarchical(3, fraction);
    options.optimizer = optimizer;
    options.straggler_timeout = std::chrono::milliseconds(straggler_ms);
    sdflmq::coord::Coordinator coordinator(broker, options);

    std::optional<sdflmq::pserver::ParamServer> param_server;
    if (with_paramserver) {
        param_server.emplace(broker);
    }

    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    std::cout << "coordinator up (embedded broker); Ctrl-C to stop\n";
    while (!g_stop.load()) {
        coordinator.tick();
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
    coordinator.shutdown_sessions();
    std::cout << "sessions terminated, shutting down\n";
    return 0;
}

int run_paramserver(const BrokerFlags& flags, const std::string& persist) {
    if (int rc = reject_external(flags, std::cerr); rc != 0) {
        return rc;
    }
    sdflmq::transport::InMemoryBroker broker({.broker_id = "embedded"});
    sdflmq::pserver::ParamServerOptions options;
    options.persist_path = persist;
    sdflmq::pserver::ParamServer param_server(broker, options);

    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    std::cout << "parameter server up (embedded broker); Ctrl-C to stop\n";
    while (!g_stop.load()) {
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
    return 0;
}

int run_client(const BrokerFlags& flags) {
    // A lone embedded client has no peers to talk to, so the client subcommand
    // always needs an external broker.
    if (flags.broker_host.empty()) {
        std::cerr << "error: client requires --broker <host>\n";
        return 64;
    }
    std::cerr << "error: no MQTT broker adapter is linked into this build; the client "
                 "subcommand needs one (see README, transport adapter contract)\n";
    return 69;
}

int run_experiment_cmd(const std::string& config_path, const std::string& out_dir, bool verbose) {
    sdflmq::harness::ScenarioConfig config =
        config_path.empty() ? sdflmq::harness::ScenarioConfig{}
                            : sdflmq::harness::ScenarioConfig::load_file(config_path);
    auto log = [&](const std::string& line) {
        if (verbose) {
            std::cerr << line << '\n';
        }
    };
    auto result = sdflmq::harness::run_experiment(config, log);

    std::filesystem::create_directories(out_dir);
    const auto csv_path = std::filesystem::path(out_dir) / "rounds.csv";
    std::ofstream csv(csv_path);
    sdflmq::harness::write_rounds_csv(csv, result);
    sdflmq::harness::write_rounds_csv(std::cout, result);
    std::cout << "wrote " << csv_path.string() << '\n';
    return 0;
}

int run_compare(const std::string& config_path, std::vector<std::size_t> clients,
                const std::string& out_dir, bool verbose) {
    sdflmq::harness::ScenarioConfig base =
        config_path.empty() ? sdflmq::harness::ScenarioConfig{}
                            : sdflmq::harness::ScenarioConfig::load_file(config_path);
    if (clients.empty()) {
        clients = {5, 10, 20, 40};
    }
    auto log = [&](const std::string& line) {
        if (verbose) {
            std::cerr << line << '\n';
        }
    };
    auto rows = sdflmq::harness::compare_topologies(base, clients, log);

    std::filesystem::create_directories(out_dir);
    const auto csv_path = std::filesystem::path(out_dir) / "summary.csv";
    std::ofstream csv(csv_path);
    sdflmq::harness::write_summary_csv(csv, rows);
    sdflmq::harness::write_summary_csv(std::cout, rows);
    std::cout << "wrote " << csv_path.string() << '\n';

    std::cout << "gap trend (single - hierarchical total delay):\n";
    for (const auto& row : rows) {
        std::cout << "  n=" << row.n_clients << "  gap=" << row.gap_ms << " ms\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"SDFLMQ: semi-decentralized federated learning over pub/sub topics"};
    app.require_subcommand(1);

    BrokerFlags coord_flags;
    std::string clustering = "hierarchical";
    double fraction = 0.3;
    std::string optimizer = "static";
    std::int64_t straggler_ms = 120000;
    bool no_paramserver = false;
    auto* coord = app.add_subcommand("coord", "run the coordinator");
    add_broker_flags(coord, coord_flags);
    coord->add_option("--clustering-policy", clustering, "single | hierarchical")
        ->check(CLI::IsMember({"single", "hierarchical"}));
    coord->add_option("--cluster-fraction", fraction, "aggregator fraction (hierarchical)");
    coord->add_option("--optimizer-policy", optimizer, "static | memory-greedy | round-robin");
    coord->add_option("--straggler-timeout", straggler_ms, "per-round straggler timeout in ms");
    coord->add_flag("--no-paramserver", no_paramserver,
                    "do not host the parameter server in-process");

    BrokerFlags ps_flags;
    std::string persist;
    auto* paramserver = app.add_subcommand("paramserver", "run the parameter server");
    add_broker_flags(paramserver, ps_flags);
    paramserver->add_option("--persist", persist, "append-only global model store");

    BrokerFlags client_flags;
    std::string client_id;
    std::string session;
    auto* client = app.add_subcommand("client", "run a standalone client");
    add_broker_flags(client, client_flags);
    client->add_option("--id", client_id, "client id");
    client->add_option("--session", session, "session id");

    std::string experiment_config;
    std::string out_dir = ".";
    bool verbose = false;
    auto* experiment = app.add_subcommand("experiment", "run an embedded scenario");
    experiment->add_option("--config", experiment_config, "ScenarioConfig JSON file");
    experiment->add_option("--out", out_dir, "output directory for rounds.csv");
    experiment->add_flag("-v,--verbose", verbose, "log progress to stderr");

    std::string compare_config;
    std::string compare_out = ".";
    std::vector<std::size_t> compare_clients;
    bool compare_verbose = false;
    auto* compare = app.add_subcommand("compare", "compare single vs hierarchical topologies");
    compare->add_option("--config", compare_config, "base ScenarioConfig JSON file");
    compare->add_option("--clients", compare_clients, "client counts to sweep");
    compare->add_option("--out", compare_out, "output directory for summary.csv");
    compare->add_flag("-v,--verbose", compare_verbose, "log progress to stderr");

    CLI11_PARSE(app, argc, argv);

    try {
        if (coord->parsed()) {
            return run_coord(coord_flags, clustering, fraction, optimizer, straggler_ms,
                             !no_paramserver);
        }
        if (paramserver->parsed()) {
            return run_paramserver(ps_flags, persist);
        }
        if (client->parsed()) {
            return run_client(client_flags);
        }
        if (experiment->parsed()) {
            return run_experiment_cmd(experiment_config, out_dir, verbose);
        }
        if (compare->parsed()) {
            return run_compare(compare_config, compare_clients, compare_out, compare_verbose);
        }
    } catch (const sdflmq::ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return 64;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
