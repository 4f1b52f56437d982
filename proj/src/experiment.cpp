#include "sdflmq/harness/experiment.hpp"

#include <atomic>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <thread>

#include "sdflmq/client/client.hpp"
#include "sdflmq/coordinator/coordinator.hpp"
#include "sdflmq/errors.hpp"
#include "sdflmq/model/trainer.hpp"
#include "sdflmq/paramserver/param_server.hpp"

namespace sdflmq::harness {

namespace {

std::string client_name(std::size_t index) {
    std::string suffix = std::to_string(index);
    if (suffix.size() < 2) {
        suffix.insert(suffix.begin(), '0');
    }
    return "c" + suffix;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    std::uint64_t h = seed ^ (a * 0x9e3779b97f4a7c15ull) ^ (b * 0xbf58476d1ce4e5b9ull);
    h ^= h >> 30;
    h *= 0xbf58476d1ce4e5b9ull;
    h ^= h >> 27;
    h *= 0x94d049bb133111ebull;
    h ^= h >> 31;
    return h;
}

double to_ms(Duration d) {
    return std::chrono::duration<double, std::milli>(d).count();
}

// Wall-clock observations collected while a round runs.
struct Collector {
    std::mutex mutex;
    std::map<std::uint32_t, TimePoint> round_start;
    std::map<std::uint32_t, TimePoint> slowest_global;
    std::map<std::uint32_t, Duration> slowest_train;
    std::map<std::uint32_t, std::map<std::uint32_t, Duration>> agg_by_layer; // round -> layer -> max

    void on_round_started(std::uint32_t round, TimePoint when) {
        std::lock_guard lock(mutex);
        round_start.emplace(round, when);
    }
    void on_train(std::uint32_t round, Duration d) {
        std::lock_guard lock(mutex);
        auto [it, inserted] = slowest_train.try_emplace(round, d);
        if (!inserted && d > it->second) {
            it->second = d;
        }
    }
    void on_global(std::uint32_t round, TimePoint when) {
        std::lock_guard lock(mutex);
        auto [it, inserted] = slowest_global.try_emplace(round, when);
        if (!inserted && when > it->second) {
            it->second = when;
        }
    }
    void on_aggregation(const client::AggregationMetrics& metrics) {
        std::lock_guard lock(mutex);
        auto& per_layer = agg_by_layer[metrics.round];
        auto [it, inserted] = per_layer.try_emplace(metrics.layer, metrics.compute_time);
        if (!inserted && metrics.compute_time > it->second) {
            it->second = metrics.compute_time;
        }
    }
};

} // namespace

ExperimentResult run_experiment(const ScenarioConfig& input,
                                std::function<void(const std::string&)> log) {
    auto say = [&](const std::string& line) {
        if (log) {
            log(line);
        }
    };

    ScenarioConfig config = input;
    config.validate();
    if (config.clustering.kind == coord::ClusteringPolicy::Kind::kHierarchical &&
        config.n_clients < 3) {
        say("hierarchical clustering degrades to single for n_clients < 3");
        config.clustering = coord::ClusteringPolicy::single();
    }

    auto [train_pool, test_set] = load_datasets(config.dataset, config.seed);
    const std::size_t shard_size = static_cast<std::size_t>(
        static_cast<double>(train_pool.size()) * config.dataset.per_client_fraction);
    if (shard_size == 0) {
        throw ConfigError("per-client shard is empty; grow the dataset or the fraction");
    }

    model::ModelSpec spec;
    spec.family = config.model_family == "logistic" ? model::ModelFamily::kLogisticRegression
                                                    : model::ModelFamily::kPerceptron;
    spec.n_features = train_pool.n_features;
    spec.n_classes = train_pool.n_classes;
    spec.hidden = config.hidden;
    const model::ModelParameters initial = model::init_params(spec, config.seed);

    const Clock& clock = SteadyClock::instance();
    transport::BrokerOptions broker_options;
    broker_options.broker_id = "embedded";
    broker_options.latency = config.latency;
    transport::InMemoryBroker broker(broker_options);

    Collector collector;
    coord::CoordinatorOptions coordinator_options;
    coordinator_options.clustering = config.clustering;
    coordinator_options.optimizer = config.optimizer;
    coordinator_options.straggler_timeout = config.straggler_timeout;
    coordinator_options.log = [&](const std::string& line) { say("[coordinator] " + line); };
    coordinator_options.on_event = [&](const coord::SessionEvent& event) {
        if (event.kind == coord::SessionEventKind::kRoundStarted) {
            collector.on_round_started(event.round, clock.now());
        }
    };
    coord::Coordinator coordinator(broker, coordinator_options, clock);
    pserver::ParamServerOptions pserver_options;
    pserver_options.log = [&](const std::string& line) { say("[paramserver] " + line); };
    pserver::ParamServer param_server(broker, pserver_options, clock);

    const std::string sid = config.session_id;
    std::vector<std::unique_ptr<client::Client>> clients;
    clients.reserve(config.n_clients);
    client::ClientOptions client_options;
    client_options.straggler_timeout = config.straggler_timeout;
    client_options.aggregation_margin =
        std::min(std::chrono::milliseconds(10000), config.straggler_timeout / 2);
    client_options.log = [&](const std::string& line) { say("[client] " + line); };
    for (std::size_t k = 0; k < config.n_clients; ++k) {
        clients.push_back(
            std::make_unique<client::Client>(broker, client_name(k), client_options, clock));
        clients.back()->set_aggregation_observer(
            [&](const client::AggregationMetrics& metrics) { collector.on_aggregation(metrics); });
    }

    std::atomic<bool> done{false};
    std::thread ticker([&] {
        while (!done.load(std::memory_order_acquire)) {
            coordinator.tick();
            for (auto& c : clients) {
                c->tick();
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(2));
        }
    });

    // The owner creates the session first so joins cannot race creation.
    client::CreateSessionConfig create;
    create.session_id = sid;
    create.model_name = config.model_family;
    create.session_time = std::chrono::hours(1);
    create.waiting_time = std::chrono::minutes(2);
    create.capacity_min = static_cast<std::uint32_t>(config.n_clients);
    create.capacity_max = static_cast<std::uint32_t>(config.n_clients);
    create.fl_rounds = config.fl_rounds;
    create.preferred_role = coord::PreferredRole::kTrainerAggregator;
    clients[0]->create_fl_session(create);

    std::vector<std::string> failures;
    std::mutex failures_mutex;
    std::vector<std::thread> workers;
    workers.reserve(config.n_clients);
    for (std::size_t k = 0; k < config.n_clients; ++k) {
        workers.emplace_back([&, k] {
            client::Client& me = *clients[k];
            try {
                if (k != 0) {
                    client::JoinSessionConfig join;
                    join.session_id = sid;
                    join.model_name = config.model_family;
                    join.fl_rounds = config.fl_rounds;
                    join.preferred_role = coord::PreferredRole::kTrainerAggregator;
                    me.join_fl_session(join);
                }
                const model::Dataset shard =
                    train_pool.slice(k * shard_size, (k + 1) * shard_size);
                model::ModelParameters params = initial;
                me.set_model(sid, params, shard.size());

                for (std::uint32_t r = 1; r <= config.fl_rounds; ++r) {
                    const std::uint32_t round =
                        me.wait_round_start(sid, std::chrono::minutes(5));
                    if (me.current_role(sid) != coord::Role::kAggregator) {
                        const TimePoint t0 = clock.now();
                        auto trained =
                            model::train_local(params, shard, config.epochs,
                                               config.learning_rate,
                                               mix_seed(config.seed, k, round),
                                               config.batch_size);
                        collector.on_train(round, clock.now() - t0);
                        me.set_local_metrics(sid, trained.final_loss,
                                             model::evaluate(trained.params, shard));
                        me.set_model(sid, trained.params, shard.size());
                        me.send_local(sid);
                    }
                    params = me.wait_global_update(sid, std::chrono::minutes(5));
                    collector.on_global(round, clock.now());
                }
            } catch (const std::exception& e) {
                std::lock_guard lock(failures_mutex);
                failures.push_back(client_name(k) + ": " + e.what());
            }
        });
    }
    for (auto& worker : workers) {
        worker.join();
    }
    done.store(true, std::memory_order_release);
    ticker.join();

    if (!failures.empty()) {
        std::string detail;
        for (const auto& f : failures) {
            detail += (detail.empty() ? "" : "; ") + f;
        }
        throw Error("experiment clients failed: " + detail);
    }

    ExperimentResult result;
    result.session_id = sid;
    result.topology = config.clustering.name();
    result.n_clients = config.n_clients;
    {
        std::lock_guard lock(collector.mutex);
        for (std::uint32_t r = 1; r <= config.fl_rounds; ++r) {
            RoundRecord record;
            record.session_id = sid;
            record.round = r;
            auto start = collector.round_start.find(r);
            auto finish = collector.slowest_global.find(r);
            if (start != collector.round_start.end() &&
                finish != collector.slowest_global.end()) {
                record.delay_ms = to_ms(finish->second - start->second);
            }
            auto train = collector.slowest_train.find(r);
            if (train != collector.slowest_train.end()) {
                record.train_ms = to_ms(train->second);
            }
            auto layers = collector.agg_by_layer.find(r);
            if (layers != collector.agg_by_layer.end()) {
                Duration total{0};
                for (const auto& [layer, duration] : layers->second) {
                    total += duration;
                }
                record.agg_ms = to_ms(total);
            }
            record.transport_ms =
                std::max(0.0, record.delay_ms - record.train_ms - record.agg_ms);
            auto global = param_server.get_global(sid, r);
            if (global.has_value()) {
                record.accuracy = model::evaluate(*global, test_set);
            }
            result.total_delay_ms += record.delay_ms;
            result.rounds.push_back(std::move(record));
        }
    }
    if (!result.rounds.empty()) {
        result.final_accuracy = result.rounds.back().accuracy;
    }
    if (auto record = param_server.global_record(sid, config.fl_rounds); record.has_value()) {
        result.root_weight = record->weight;
    }
    return result;
}

void write_rounds_csv(std::ostream& out, const ExperimentResult& result) {
    out << "round,delay_ms,train_ms,agg_ms,transport_ms,accuracy\n";
    out << std::fixed << std::setprecision(4);
    for (const auto& r : result.rounds) {
        out << r.round << ',' << r.delay_ms << ',' << r.train_ms << ',' << r.agg_ms << ','
            << r.transport_ms << ',' << std::setprecision(6) << r.accuracy
            << std::setprecision(4) << '\n';
    }
    out << "total," << result.total_delay_ms << ",,,," << std::setprecision(6)
        << result.final_accuracy << '\n';
}

std::vector<ComparisonRow> compare_topologies(const ScenarioConfig& base,
                                              const std::vector<std::size_t>& client_counts,
                                              std::function<void(const std::string&)> log) {
    std::vector<ComparisonRow> rows;
    for (std::size_t n : client_counts) {
        ComparisonRow row;
        row.n_clients = n;

        ScenarioConfig single = base;
        single.n_clients = n;
        single.clustering = coord::ClusteringPolicy::single();
        single.session_id = base.session_id + "_single_" + std::to_string(n);
        auto single_result = run_experiment(single, log);
        row.single_total_ms = single_result.total_delay_ms;
        row.single_accuracy = single_result.final_accuracy;

        ScenarioConfig hier = base;
        hier.n_clients = n;
        hier.clustering = coord::ClusteringPolicy::hierarchical();
        hier.session_id = base.session_id + "_hier_" + std::to_string(n);
        auto hier_result = run_experiment(hier, log);
        row.hierarchical_total_ms = hier_result.total_delay_ms;
        row.hierarchical_accuracy = hier_result.final_accuracy;

        row.gap_ms = row.single_total_ms - row.hierarchical_total_ms;
        if (log) {
            log("n=" + std::to_string(n) + " single=" + std::to_string(row.single_total_ms) +
                "ms hierarchical=" + std::to_string(row.hierarchical_total_ms) +
                "ms gap=" + std::to_string(row.gap_ms) + "ms");
        }
        rows.push_back(row);
    }
    return rows;
}

void write_summary_csv(std::ostream& out, const std::vector<ComparisonRow>& rows) {
    out << "n_clients,single_total_ms,hierarchical_total_ms,gap_ms,single_accuracy,"
           "hierarchical_accuracy\n";
    out << std::fixed << std::setprecision(4);
    for (const auto& row : rows) {
        out << row.n_clients << ',' << row.single_total_ms << ',' << row.hierarchical_total_ms
            << ',' << row.gap_ms << ',' << std::setprecision(6) << row.single_accuracy << ','
            << row.hierarchical_accuracy << std::setprecision(4) << '\n';
    }
}

} // namespace sdflmq::harness
